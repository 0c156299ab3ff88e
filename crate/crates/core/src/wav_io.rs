//! 16-bit mono PCM WAV I/O.
//!
//! Only `audio-format = 1`, `channels = 1`, `bits-per-sample = 16` is accepted.
//! Anything else is rejected with [`WavError::Unsupported`]; structural damage
//! (bad magic, truncated chunks, missing `fmt `/`data`) is [`WavError::Format`].

use std::fs;
use std::path::Path;

use thiserror::Error;

const PCM_SCALE: f64 = 32768.0;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed wav: {0}")]
    Format(String),
    #[error("unsupported wav encoding: {0}")]
    Unsupported(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
}

/// A mono audio signal with floating amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Root-mean-square of a sample slice; zero for an empty slice.
pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, WavError> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes)
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), WavError> {
    let bytes = encode_wav(clip)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode an in-memory RIFF/WAVE image.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::Format("missing RIFF/WAVE header".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                WavError::Format(format!(
                    "chunk '{}' overruns file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(WavError::Format("fmt chunk shorter than 16 bytes".into()));
                }
                fmt = Some((
                    u16_at(body, 0),
                    u16_at(body, 2),
                    u32_at(body, 4),
                    u16_at(body, 14),
                ));
            }
            b"data" => {
                data = Some(body);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| WavError::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::Format("missing data chunk".into()))?;

    if format != 1 {
        return Err(WavError::Unsupported(format!("audio format {format} (want PCM=1)")));
    }
    if channels != 1 {
        return Err(WavError::Unsupported(format!("{channels} channels (want mono)")));
    }
    if bits != 16 {
        return Err(WavError::Unsupported(format!("{bits} bits per sample (want 16)")));
    }
    if sample_rate == 0 {
        return Err(WavError::Format("sample rate is zero".into()));
    }
    if data.len() % 2 != 0 {
        return Err(WavError::Format("data chunk has a dangling byte".into()));
    }
    if data.is_empty() {
        return Err(WavError::Format("data chunk holds no samples".into()));
    }

    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / PCM_SCALE)
        .collect();
    Ok(AudioClip::new(samples, sample_rate))
}

/// Round to nearest and clamp to the 16-bit range. No dither.
pub fn quantize(sample: f64) -> i16 {
    (sample * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Encode a clip as a canonical 44-byte-header PCM WAV image.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>, WavError> {
    if clip.sample_rate == 0 {
        return Err(WavError::InvalidClip("sample rate is zero".into()));
    }
    if let Some(bad) = clip.samples.iter().find(|s| !s.is_finite()) {
        return Err(WavError::InvalidClip(format!("non-finite sample {bad}")));
    }
    let data_len = clip
        .samples
        .len()
        .checked_mul(2)
        .and_then(|n| u32::try_from(n).ok())
        .filter(|n| *n <= u32::MAX - 36)
        .ok_or_else(|| WavError::InvalidClip("clip too long for a RIFF file".into()))?;

    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());

    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    Ok(out)
}
