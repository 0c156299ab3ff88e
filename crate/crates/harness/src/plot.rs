//! SVG step chart of an OAR schedule.

use std::fmt::Write as _;
use std::path::Path;

use oar_core::env::{parse_schedule_csv, ScheduleRow};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotOptions {
    /// Trainer iterations per decision; the x axis is `step · K`.
    pub iterations_per_step: usize,
    pub beta_max: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            iterations_per_step: 50,
            beta_max: 4.0,
            width: 640.0,
            height: 320.0,
        }
    }
}

const MARGIN: f64 = 48.0;

/// Render `rows` as a step function: `β_t` holds over `((t−1)·K, t·K]`.
/// Each data point gets exactly one `<circle>`.
pub fn render_svg(rows: &[ScheduleRow], opts: &PlotOptions) -> Result<String> {
    if rows.is_empty() {
        return Err(HarnessError::Plot("schedule is empty".into()));
    }
    if opts.iterations_per_step == 0 || !(opts.beta_max.is_finite() && opts.beta_max > 0.0) {
        return Err(HarnessError::Plot("iterations_per_step and beta_max must be positive".into()));
    }
    let k = opts.iterations_per_step as f64;
    let x_max = rows.last().unwrap().step as f64 * k;
    let (w, h) = (opts.width, opts.height);
    let x = |iter: f64| MARGIN + iter / x_max * (w - 2.0 * MARGIN);
    let y = |beta: f64| h - MARGIN - beta / opts.beta_max * (h - 2.0 * MARGIN);

    let mut path = String::new();
    let mut prev_end = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let start = prev_end;
        let end = r.step as f64 * k;
        if i == 0 {
            write!(path, "M {:.2} {:.2}", x(start), y(r.beta)).unwrap();
        } else {
            write!(path, " V {:.2}", y(r.beta)).unwrap();
        }
        write!(path, " H {:.2}", x(end)).unwrap();
        prev_end = end;
    }

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(svg, r#"  <rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"  <line class="axis" x1="{m}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}" stroke="black"/>"#,
        m = MARGIN,
        b = y(0.0),
        r = x(x_max)
    )
    .unwrap();
    writeln!(
        svg,
        r#"  <line class="axis" x1="{m}" y1="{t:.2}" x2="{m}" y2="{b:.2}" stroke="black"/>"#,
        m = MARGIN,
        t = y(opts.beta_max),
        b = y(0.0)
    )
    .unwrap();
    writeln!(
        svg,
        r#"  <text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">iteration</text>"#,
        w / 2.0,
        h - 12.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"  <text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">OAR</text>"#,
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    for (label, beta) in [("0", 0.0), (&*format!("{}", opts.beta_max), opts.beta_max)] {
        writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{label}</text>"#,
            MARGIN - 4.0,
            y(beta) + 3.0
        )
        .unwrap();
    }
    writeln!(svg, r#"  <path class="schedule" d="{path}" fill="none" stroke="steelblue" stroke-width="2"/>"#).unwrap();
    for r in rows {
        writeln!(
            svg,
            r#"  <circle class="point" data-step="{}" data-beta="{:.6}" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            r.step,
            r.beta,
            x(r.step as f64 * k),
            y(r.beta)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Read a schedule CSV and write its SVG. Nothing is written on error.
pub fn plot_schedule(csv: &Path, svg: &Path, opts: &PlotOptions) -> Result<()> {
    let text = std::fs::read_to_string(csv).map_err(HarnessError::io(csv))?;
    let rows = parse_schedule_csv(&text)?;
    let out = render_svg(&rows, opts)?;
    std::fs::write(svg, out).map_err(HarnessError::io(svg))
}
