//! Per-iteration metrics: CSV persistence, smoothing and SVG learning curves.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter};
use std::path::Path;

/// Bumped whenever [`METRICS_COLUMNS`] changes.
pub const METRICS_CSV_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 9] = [
    "iteration",
    "mean_reward",
    "std_reward",
    "mean_episode_len",
    "policy_loss",
    "value_loss",
    "entropy",
    "kl",
    "wall_time_s",
];

/// One row of the metrics CSV. Reward statistics are over episodes that
/// finished during the iteration (NaN when none did).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_episode_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub wall_time_s: f64,
}

/// Population mean and standard deviation; `(NaN, NaN)` for no data.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn write_metrics_header(path: &Path) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_COLUMNS)?;
    w.flush()?;
    Ok(())
}

pub fn append_metrics(path: &Path, row: &IterationMetrics) -> csv::Result<()> {
    let file = OpenOptions::new().append(true).open(path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> csv::Result<Vec<IterationMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_COLUMNS {
        return Err(csv::Error::from(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected metrics header {header:?}"),
        )));
    }
    r.deserialize().collect()
}

/// Rewrites `path` with its header and the first `keep` rows.
pub fn truncate_metrics(path: &Path, keep: usize) -> csv::Result<()> {
    let rows = read_metrics(path)?;
    write_metrics_header(path)?;
    for row in rows.iter().take(keep) {
        append_metrics(path, row)?;
    }
    Ok(())
}

/// Trailing moving average: entry `k` is the mean of `xs[k+1-window ..= k]`
/// (clamped at 0), skipping NaN entries.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0);
    (0..xs.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(window);
            let vals: Vec<f64> = xs[lo..=k].iter().copied().filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect()
}

/// First iteration index at which the `window`-iteration moving average of
/// mean reward reaches `fraction` of its final value. Reported as "sampling
/// saturation" in run reports.
pub fn sampling_saturation(
    rows: &[IterationMetrics],
    window: usize,
    fraction: f64,
) -> Option<usize> {
    let rewards: Vec<f64> = rows.iter().map(|r| r.mean_reward).collect();
    let ma = moving_average(&rewards, window);
    let last = *ma.iter().rev().find(|v| !v.is_nan())?;
    let target = fraction * last;
    ma.iter()
        .position(|v| !v.is_nan() && *v >= target)
        .map(|i| rows[i].iteration)
}

pub const PLOT_WINDOW: usize = 5;

/// Self-contained SVG of the smoothed mean reward with a ±1 std band.
pub fn learning_curve_svg(rows: &[IterationMetrics], title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let means: Vec<f64> = rows.iter().map(|r| r.mean_reward).collect();
    let stds: Vec<f64> = rows.iter().map(|r| r.std_reward).collect();
    let m = moving_average(&means, PLOT_WINDOW);
    let s = moving_average(&stds, PLOT_WINDOW);
    let xs: Vec<f64> = rows.iter().map(|r| r.iteration as f64).collect();
    let pts: Vec<(f64, f64, f64)> = xs
        .iter()
        .zip(m.iter().zip(&s))
        .filter(|(_, (mv, sv))| mv.is_finite() && sv.is_finite())
        .map(|(x, (mv, sv))| (*x, *mv, *sv))
        .collect();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    if !pts.is_empty() {
        let x_min = pts.first().unwrap().0;
        let x_max = pts.last().unwrap().0.max(x_min + 1.0);
        let y_lo = pts.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
        let y_hi = pts
            .iter()
            .map(|p| p.1 + p.2)
            .fold(f64::NEG_INFINITY, f64::max);
        let (y_lo, y_hi) = if y_hi > y_lo {
            (y_lo, y_hi)
        } else {
            (y_lo - 1.0, y_lo + 1.0)
        };
        let sx = |x: f64| pad + (x - x_min) / (x_max - x_min) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - y_lo) / (y_hi - y_lo) * (h - 2.0 * pad);

        let mut band: Vec<String> = pts
            .iter()
            .map(|(x, mv, sv)| format!("{:.2},{:.2}", sx(*x), sy(mv + sv)))
            .collect();
        band.extend(
            pts.iter()
                .rev()
                .map(|(x, mv, sv)| format!("{:.2},{:.2}", sx(*x), sy(mv - sv))),
        );
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##,
            band.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|(x, mv, _)| format!("{:.2},{:.2}", sx(*x), sy(*mv)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            line.join(" ")
        );
        for (val, y) in [(y_lo, h - pad), (y_hi, pad)] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="11">{val:.4}</text>"#,
                pad - 4.0
            );
        }
        for (val, x) in [(x_min, pad), (x_max, w - pad)] {
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{val}</text>"#,
                h - pad + 16.0
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">iteration (mean reward, moving average window {PLOT_WINDOW}, shaded ±1 std)</text>"#,
        w / 2.0,
        h - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn write_plot(path: &Path, rows: &[IterationMetrics], title: &str) -> io::Result<()> {
    use std::io::Write;
    let mut f = File::create(path)?;
    f.write_all(learning_curve_svg(rows, title).as_bytes())
}
