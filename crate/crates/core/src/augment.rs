//! Audio augmentation and OAR batch planning.
//!
//! Five methods are supported: additive noise at a target SNR, room impulse
//! response convolution, noise followed by RIR, speed modification and pitch
//! modification. [`AugmentationPipeline::compose_batch`] decides how many
//! augmented copies accompany each original for a given multiplier `β`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::derive_seed;
use crate::wav_io::{read_wav, rms, AudioClip, WavError};

pub const SNR_RANGE_DB: (f64, f64) = (0.0, 20.0);
pub const FACTOR_RANGE: (f64, f64) = (0.9, 1.1);

/// Synthesis hop of the overlap-add time stretch used by [`pitch_modify`].
pub const STRETCH_HOP: usize = 400;
/// Hann window length of the overlap-add time stretch.
pub const STRETCH_WINDOW: usize = 1024;
/// Maximum alignment shift searched when placing each stretch frame.
const STRETCH_SEARCH: isize = 160;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("pipeline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Wav(#[from] WavError),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Noise,
    Rir,
    NoiseThenRir,
    SpeedMod,
    PitchMod,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Noise,
        Method::Rir,
        Method::NoiseThenRir,
        Method::SpeedMod,
        Method::PitchMod,
    ];

    pub fn uses_noise(self) -> bool {
        matches!(self, Method::Noise | Method::NoiseThenRir)
    }

    pub fn uses_rir(self) -> bool {
        matches!(self, Method::Rir | Method::NoiseThenRir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClipId(pub u64);

/// A fully parameterized augmentation for one copy of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rir_id: Option<usize>,
}

impl AugmentationSpec {
    /// Build a spec from a uniform draw `u ∈ [0, 1]`, mapped linearly onto the
    /// method's parameter range. `rir_id` is required for RIR methods.
    pub fn from_uniform(method: Method, u: f64, rir_id: Option<usize>) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) {
            return Err(AugmentError::Domain(format!("uniform draw {u} outside [0, 1]")));
        }
        if method.uses_rir() && rir_id.is_none() {
            return Err(AugmentError::Config(format!("{method:?} needs an rir_id")));
        }
        let lerp = |(lo, hi): (f64, f64)| lo + (hi - lo) * u;
        let mut spec = AugmentationSpec {
            method,
            snr_db: None,
            speed_factor: None,
            pitch_factor: None,
            rir_id: if method.uses_rir() { rir_id } else { None },
        };
        match method {
            Method::Noise | Method::NoiseThenRir => spec.snr_db = Some(lerp(SNR_RANGE_DB)),
            Method::Rir => {}
            Method::SpeedMod => spec.speed_factor = Some(lerp(FACTOR_RANGE)),
            Method::PitchMod => spec.pitch_factor = Some(lerp(FACTOR_RANGE)),
        }
        Ok(spec)
    }
}

/// Originals and their augmented companions for one training batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub originals: Vec<ClipId>,
    pub augmented: Vec<(ClipId, AugmentationSpec)>,
}

/// How the augmentation method is chosen within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodPolicy {
    /// Every augmented copy draws its own method.
    #[default]
    PerUtterance,
    /// One method is drawn per batch; parameters are still drawn per copy.
    PerBatch,
}

/// Expand each original into `floor(β)` copies plus one more with
/// probability `frac(β)`. Returned ids keep the order of `originals`.
pub fn plan_copies<R: Rng + ?Sized>(originals: &[ClipId], beta: f64, rng: &mut R) -> Result<Vec<ClipId>> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(AugmentError::Domain(format!("beta must be finite and >= 0, got {beta}")));
    }
    let whole = beta.floor() as usize;
    let frac = beta - beta.floor();
    let mut out = Vec::with_capacity(((beta.ceil() as usize) * originals.len()).min(1 << 24));
    for &id in originals {
        let extra = frac > 0.0 && rng.random::<f64>() < frac;
        for _ in 0..whole + usize::from(extra) {
            out.push(id);
        }
    }
    Ok(out)
}

/// Seed for the independent stream owned by `clip` in parallel batch construction.
pub fn clip_seed(base_seed: u64, clip: ClipId) -> u64 {
    derive_seed(base_seed, clip.0)
}

/// Noise mixture with its components kept apart for SNR bookkeeping.
#[derive(Debug, Clone)]
pub struct NoiseMix {
    pub mixture: AudioClip,
    /// The signal contribution (after any peak normalization).
    pub signal_part: Vec<f64>,
    /// The scaled noise contribution `g·noise′` (after any peak normalization).
    pub noise_part: Vec<f64>,
    pub gain: f64,
    /// Factor applied to everything to keep peaks within `[-1, 1]`; 1.0 if none.
    pub normalization: f64,
}

fn check_rates(a: &AudioClip, b: &AudioClip) -> Result<()> {
    if a.sample_rate != b.sample_rate {
        return Err(AugmentError::SampleRateMismatch(a.sample_rate, b.sample_rate));
    }
    Ok(())
}

/// Fit `noise` to `len` samples: tile if short, crop at a random offset if long.
pub fn fit_noise<R: Rng + ?Sized>(noise: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    if noise.len() > len {
        let offset = rng.random_range(0..=noise.len() - len);
        noise[offset..offset + len].to_vec()
    } else {
        noise.iter().copied().cycle().take(len).collect()
    }
}

/// Mix `noise` into `signal` at `snr_db`, returning the separated components.
pub fn mix_noise<R: Rng + ?Sized>(
    signal: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    rng: &mut R,
) -> Result<NoiseMix> {
    check_rates(signal, noise)?;
    if !snr_db.is_finite() {
        return Err(AugmentError::Domain(format!("snr_db must be finite, got {snr_db}")));
    }
    let signal_rms = signal.rms();
    if signal.is_empty() || signal_rms == 0.0 {
        return Err(AugmentError::Degenerate("signal is silent".into()));
    }
    if noise.is_empty() || noise.rms() == 0.0 {
        return Err(AugmentError::Degenerate("noise is silent".into()));
    }
    let fitted = fit_noise(&noise.samples, signal.len(), rng);
    let fitted_rms = rms(&fitted);
    if fitted_rms == 0.0 {
        return Err(AugmentError::Degenerate("noise segment is silent".into()));
    }
    let gain = signal_rms / (fitted_rms * 10f64.powf(snr_db / 20.0));

    let mut signal_part = signal.samples.clone();
    let mut noise_part: Vec<f64> = fitted.iter().map(|n| gain * n).collect();
    let mut mixture: Vec<f64> = signal_part.iter().zip(&noise_part).map(|(s, n)| s + n).collect();

    let peak = mixture.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let normalization = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if normalization != 1.0 {
        for v in signal_part.iter_mut().chain(noise_part.iter_mut()).chain(mixture.iter_mut()) {
            *v *= normalization;
        }
    }
    Ok(NoiseMix {
        mixture: AudioClip::new(mixture, signal.sample_rate),
        signal_part,
        noise_part,
        gain,
        normalization,
    })
}

pub fn add_noise<R: Rng + ?Sized>(
    signal: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    rng: &mut R,
) -> Result<AudioClip> {
    Ok(mix_noise(signal, noise, snr_db, rng)?.mixture)
}

/// Full linear convolution, length `a.len() + b.len() - 1`, computed with an FFT.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let lift = |x: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (slot, &v) in buf.iter_mut().zip(x) {
            slot.re = v;
        }
        buf
    };
    let mut fa = lift(a);
    let mut fb = lift(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.iter().take(out_len).map(|c| c.re * scale).collect()
}

/// Convolve with `rir`, keep the first `len(signal)` samples and restore the
/// input RMS.
pub fn apply_rir(signal: &AudioClip, rir: &AudioClip) -> Result<AudioClip> {
    check_rates(signal, rir)?;
    if rir.is_empty() {
        return Err(AugmentError::Degenerate("empty impulse response".into()));
    }
    if signal.is_empty() {
        return Ok(signal.clone());
    }
    let mut wet = convolve(&signal.samples, &rir.samples);
    wet.truncate(signal.len());
    let target = signal.rms();
    let current = rms(&wet);
    if current > 0.0 {
        let k = target / current;
        wet.iter_mut().for_each(|v| *v *= k);
    }
    Ok(AudioClip::new(wet, signal.sample_rate))
}

pub fn noise_then_rir<R: Rng + ?Sized>(
    signal: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    rir: &AudioClip,
    rng: &mut R,
) -> Result<AudioClip> {
    let noisy = add_noise(signal, noise, snr_db, rng)?;
    apply_rir(&noisy, rir)
}

fn check_factor(factor: f64) -> Result<()> {
    let (lo, hi) = FACTOR_RANGE;
    if !(lo..=hi).contains(&factor) {
        return Err(AugmentError::Domain(format!("factor {factor} outside [{lo}, {hi}]")));
    }
    Ok(())
}

/// Linear-interpolation resampling: output sample `i` reads the source at
/// position `i·step`. Reads past the end hold the last sample.
fn resample_linear(samples: &[f64], step: f64, out_len: usize) -> Vec<f64> {
    let last = samples.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = pos.floor() as usize;
            let frac = pos - idx as f64;
            if idx >= last {
                samples[last]
            } else if frac == 0.0 {
                samples[idx]
            } else {
                samples[idx] * (1.0 - frac) + samples[idx + 1] * frac
            }
        })
        .collect()
}

/// Change playback speed by `factor` (> 1 is faster and shorter). Pitch
/// moves with speed.
pub fn speed_modify(signal: &AudioClip, factor: f64) -> Result<AudioClip> {
    check_factor(factor)?;
    if signal.is_empty() {
        return Ok(signal.clone());
    }
    let out_len = (signal.len() as f64 / factor).round() as usize;
    Ok(AudioClip::new(
        resample_linear(&signal.samples, factor, out_len.max(1)),
        signal.sample_rate,
    ))
}

/// Hann window that never touches zero, so every output sample covered by a
/// frame has a strictly positive normalization weight.
fn stretch_window() -> Vec<f64> {
    let n = STRETCH_WINDOW as f64;
    (0..STRETCH_WINDOW)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n).cos())
        .collect()
}

fn sample_at(x: &[f64], i: isize) -> f64 {
    if i < 0 {
        0.0
    } else {
        x.get(i as usize).copied().unwrap_or(0.0)
    }
}

/// Waveform-similarity overlap-add time stretch to exactly `out_len` samples.
///
/// Frames are read around the nominal analysis position and shifted by up to
/// `STRETCH_SEARCH` samples to best match the natural continuation of the
/// previous frame, which keeps periodic signals phase-coherent.
pub fn time_stretch(samples: &[f64], out_len: usize) -> Vec<f64> {
    if samples.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let window = stretch_window();
    let ratio = samples.len() as f64 / out_len as f64;
    let mut acc = vec![0.0; out_len + STRETCH_WINDOW];
    let mut weight = vec![0.0; out_len + STRETCH_WINDOW];
    let mut prev_start: Option<isize> = None;

    let mut m = 0usize;
    while m * STRETCH_HOP < out_len {
        let nominal = (m as f64 * STRETCH_HOP as f64 * ratio).round() as isize;
        let start = match prev_start {
            None => nominal,
            Some(prev) => {
                let natural = prev + STRETCH_HOP as isize;
                best_alignment(samples, natural, nominal)
            }
        };
        let out_at = m * STRETCH_HOP;
        for (n, w) in window.iter().enumerate() {
            acc[out_at + n] += w * sample_at(samples, start + n as isize);
            weight[out_at + n] += w;
        }
        prev_start = Some(start);
        m += 1;
    }

    acc.truncate(out_len);
    acc.iter_mut().zip(&weight).for_each(|(a, w)| *a /= w);
    acc
}

fn best_alignment(samples: &[f64], natural: isize, nominal: isize) -> isize {
    let template: Vec<f64> = (0..STRETCH_WINDOW as isize)
        .map(|n| sample_at(samples, natural + n))
        .collect();
    let score = |start: isize| {
        let mut dot = 0.0;
        let mut energy = 0.0;
        for (n, t) in template.iter().enumerate() {
            let v = sample_at(samples, start + n as isize);
            dot += t * v;
            energy += v * v;
        }
        if energy > 0.0 {
            dot / energy.sqrt()
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut best = nominal;
    let mut best_score = score(nominal);
    for d in 1..=STRETCH_SEARCH {
        for cand in [nominal - d, nominal + d] {
            let s = score(cand);
            if s > best_score + 1e-12 * best_score.abs().max(1e-300) {
                best = cand;
                best_score = s;
            }
        }
    }
    best
}

/// Scale pitch by `factor` while keeping duration: resample (which moves both
/// pitch and duration) then time-stretch back to the input length.
pub fn pitch_modify(signal: &AudioClip, factor: f64) -> Result<AudioClip> {
    check_factor(factor)?;
    if signal.is_empty() {
        return Ok(signal.clone());
    }
    let shifted_len = ((signal.len() as f64 / factor).round() as usize).max(1);
    let shifted = resample_linear(&signal.samples, factor, shifted_len);
    Ok(AudioClip::new(
        time_stretch(&shifted, signal.len()),
        signal.sample_rate,
    ))
}

/// Exponentially decaying Gaussian-noise impulse response with a unit direct path.
pub fn synthetic_rir<R: Rng + ?Sized>(
    len: usize,
    rt60_secs: f64,
    sample_rate: u32,
    rng: &mut R,
) -> AudioClip {
    // 60 dB of decay over rt60: amplitude envelope exp(-ln(1000)·t/rt60).
    let decay = 1000f64.ln() / (rt60_secs * sample_rate as f64);
    let mut samples = Vec::with_capacity(len);
    for n in 0..len {
        if n == 0 {
            samples.push(1.0);
        } else {
            let z: f64 = StandardNormal.sample(rng);
            samples.push(0.3 * z * (-decay * n as f64).exp());
        }
    }
    AudioClip::new(samples, sample_rate)
}

/// Load every `.wav` in `dir`, in lexicographic file-name order; the position
/// in the returned vector is the `rir_id`.
pub fn load_rir_bank(dir: impl AsRef<Path>) -> Result<Vec<AudioClip>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())
        .map_err(WavError::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok(read_wav(p)?)).collect()
}

/// Augmentation banks plus the sampling policy.
#[derive(Debug, Clone)]
pub struct AugmentationPipeline {
    noise_bank: Vec<AudioClip>,
    rir_bank: Vec<AudioClip>,
    methods: Vec<Method>,
    policy: MethodPolicy,
}

impl AugmentationPipeline {
    /// Build a pipeline over all five methods with per-utterance sampling.
    pub fn new(noise_bank: Vec<AudioClip>, rir_bank: Vec<AudioClip>) -> Result<Self> {
        Self::with_methods(noise_bank, rir_bank, Method::ALL.to_vec(), MethodPolicy::PerUtterance)
    }

    /// Bank requirements are checked here, not when a method is first drawn.
    pub fn with_methods(
        noise_bank: Vec<AudioClip>,
        rir_bank: Vec<AudioClip>,
        methods: Vec<Method>,
        policy: MethodPolicy,
    ) -> Result<Self> {
        if methods.is_empty() {
            return Err(AugmentError::Config("no augmentation methods enabled".into()));
        }
        if methods.iter().any(|m| m.uses_rir()) && rir_bank.is_empty() {
            return Err(AugmentError::Config("RIR method enabled but the RIR bank is empty".into()));
        }
        if methods.iter().any(|m| m.uses_noise()) && noise_bank.is_empty() {
            return Err(AugmentError::Config("noise method enabled but the noise bank is empty".into()));
        }
        if rir_bank.iter().any(|r| r.is_empty()) {
            return Err(AugmentError::Config("RIR bank contains an empty response".into()));
        }
        Ok(Self {
            noise_bank,
            rir_bank,
            methods,
            policy,
        })
    }

    pub fn methods(&self) -> &[Method] {
        &self.methods
    }

    pub fn rir_bank_len(&self) -> usize {
        self.rir_bank.len()
    }

    fn draw_method<R: Rng + ?Sized>(&self, rng: &mut R) -> Method {
        self.methods[rng.random_range(0..self.methods.len())]
    }

    fn spec_for<R: Rng + ?Sized>(&self, method: Method, rng: &mut R) -> AugmentationSpec {
        let u: f64 = rng.random();
        let rir_id = method
            .uses_rir()
            .then(|| rng.random_range(0..self.rir_bank.len()));
        AugmentationSpec::from_uniform(method, u, rir_id)
            .expect("draws are in range and the RIR bank was checked at construction")
    }

    /// Draw a method uniformly, then its parameter uniformly over its range.
    pub fn sample_spec<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentationSpec {
        let method = self.draw_method(rng);
        self.spec_for(method, rng)
    }

    pub fn compose_batch<R: Rng + ?Sized>(
        &self,
        originals: &[ClipId],
        beta: f64,
        rng: &mut R,
    ) -> Result<BatchPlan> {
        let copies = plan_copies(originals, beta, rng)?;
        let batch_method = match self.policy {
            MethodPolicy::PerBatch if !copies.is_empty() => Some(self.draw_method(rng)),
            _ => None,
        };
        let augmented = copies
            .into_iter()
            .map(|id| {
                let method = batch_method.unwrap_or_else(|| self.draw_method(rng));
                (id, self.spec_for(method, rng))
            })
            .collect();
        Ok(BatchPlan {
            originals: originals.to_vec(),
            augmented,
        })
    }

    /// Render one augmented copy of `clip`. `rng` picks the noise clip and crop offset.
    pub fn render<R: Rng + ?Sized>(
        &self,
        clip: &AudioClip,
        spec: &AugmentationSpec,
        rng: &mut R,
    ) -> Result<AudioClip> {
        let missing = |what: &str| AugmentError::Config(format!("{:?} spec lacks {what}", spec.method));
        let rir = || -> Result<&AudioClip> {
            let id = spec.rir_id.ok_or_else(|| missing("rir_id"))?;
            self.rir_bank
                .get(id)
                .ok_or_else(|| AugmentError::Config(format!("rir_id {id} not in bank")))
        };
        let mut noise = || -> Result<&AudioClip> {
            if self.noise_bank.is_empty() {
                return Err(AugmentError::Config("noise bank is empty".into()));
            }
            Ok(&self.noise_bank[rng.random_range(0..self.noise_bank.len())])
        };
        match spec.method {
            Method::Noise => {
                let snr = spec.snr_db.ok_or_else(|| missing("snr_db"))?;
                let n = noise()?.clone();
                add_noise(clip, &n, snr, rng)
            }
            Method::Rir => apply_rir(clip, rir()?),
            Method::NoiseThenRir => {
                let snr = spec.snr_db.ok_or_else(|| missing("snr_db"))?;
                let n = noise()?.clone();
                noise_then_rir(clip, &n, snr, rir()?, rng)
            }
            Method::SpeedMod => speed_modify(clip, spec.speed_factor.ok_or_else(|| missing("speed_factor"))?),
            Method::PitchMod => pitch_modify(clip, spec.pitch_factor.ok_or_else(|| missing("pitch_factor"))?),
        }
    }
}
