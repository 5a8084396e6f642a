//! Deterministic SVG line charts of run and sweep outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::runner::{EVALS_HEADER, METRICS_HEADER};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0, y1)
}

/// Renders series as polylines with axes, extreme tick labels and a legend.
pub fn line_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#);
    let _ = writeln!(svg, r#"<text x="{left}" y="{}" text-anchor="middle">{}</text>"#, bottom + 16.0, fmt(x0));
    let _ = writeln!(svg, r#"<text x="{right}" y="{}" text-anchor="middle">{}</text>"#, bottom + 16.0, fmt(x1));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, bottom + 32.0, escape(x_label));
    let _ = writeln!(svg, r#"<text x="{}" y="{bottom}" text-anchor="end">{}</text>"#, left - 4.0, fmt(y0));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 4.0, top + 4.0, fmt(y1));
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, pts.join(" "));
        let ly = top + 14.0 * k as f64;
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#, right, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.iter().map(String::from).collect();
    let rows = rdr.records().map(|r| Ok(r?.iter().map(String::from).collect())).collect::<Result<_>>()?;
    Ok((header, rows))
}

/// Plottable metric names: every non-index column of both run tables.
pub fn available_metrics() -> Vec<&'static str> {
    METRICS_HEADER[1..].iter().chain(EVALS_HEADER[1..].iter()).copied().collect()
}

fn source_table(metric: &str) -> Option<(&'static str, &'static [&'static str])> {
    if METRICS_HEADER[1..].contains(&metric) {
        Some(("metrics.csv", &METRICS_HEADER))
    } else if EVALS_HEADER[1..].contains(&metric) {
        Some(("evals.csv", &EVALS_HEADER))
    } else {
        None
    }
}

fn run_label(dir: &Path) -> String {
    let parts: Vec<String> = dir.components().rev().take(2).map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    parts.into_iter().rev().collect::<Vec<_>>().join("/")
}

fn file_stem(metric: &str) -> String {
    metric.replace('@', "_at_")
}

/// Writes `<out>/<metric>.svg` for each metric with one series per run
/// (`@` becomes `_at_` in file names). Blank cells are skipped.
pub fn plot_runs(runs: &[PathBuf], metrics: &[String], out: &Path) -> Result<Vec<PathBuf>> {
    if runs.is_empty() || metrics.is_empty() {
        return Err(CliError::Usage("plot needs at least one run directory and one metric".into()));
    }
    let mut sources = Vec::new();
    for m in metrics {
        let src = source_table(m).ok_or_else(|| {
            CliError::Usage(format!("unknown metric `{m}`; available: {}", available_metrics().join(", ")))
        })?;
        sources.push(src);
    }
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let mut written = Vec::new();
    for (metric, (file, expected)) in metrics.iter().zip(sources) {
        let mut series = Vec::new();
        for run in runs {
            let path = run.join(file);
            let (header, rows) = read_table(&path)?;
            if header != expected {
                return Err(CliError::Usage(format!("{}: columns differ from the run schema", path.display())));
            }
            let col = header.iter().position(|h| h == metric).expect("metric belongs to schema");
            let points = rows.iter().filter_map(|r| Some((r[0].parse().ok()?, r[col].parse().ok()?))).collect();
            series.push(Series { label: run_label(run), points });
        }
        let path = out.join(format!("{}.svg", file_stem(metric)));
        fs::write(&path, line_chart(metric, "iteration", &series)).map_err(CliError::io(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Mean entropy per axis value from a sweep's `entropy_trajectories.csv`,
/// written to `<out>/entropy_by_<axis>.svg`.
pub fn plot_sweep_entropy(sweep: &Path, out: &Path) -> Result<PathBuf> {
    let (header, rows) = read_table(&sweep.join("entropy_trajectories.csv"))?;
    let mut sums: BTreeMap<String, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in &rows {
        let (Ok(k), Ok(v)) = (r[2].parse::<u64>(), r[3].parse::<f64>()) else { continue };
        let e = sums.entry(r[0].clone()).or_default().entry(k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let series: Vec<Series> = sums
        .into_iter()
        .map(|(label, pts)| Series { label, points: pts.into_iter().map(|(k, (s, n))| (k as f64, s / n as f64)).collect() })
        .collect();
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let path = out.join(format!("entropy_by_{}.svg", header[0]));
    fs::write(&path, line_chart(&format!("Mean entropy by {}", header[0]), "iteration", &series)).map_err(CliError::io(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_escaped() {
        let s = vec![Series { label: "a<b".into(), points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)] }];
        let a = line_chart("t & u", "x", &s);
        assert_eq!(a, line_chart("t & u", "x", &s));
        assert!(a.contains("t &amp; u") && a.contains("a&lt;b"));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_series_still_render() {
        assert!(line_chart("t", "x", &[]).contains("</svg>"));
    }

    #[test]
    fn unknown_metric_lists_available() {
        let dir = tempfile::tempdir().unwrap();
        let err = plot_runs(&[dir.path().to_path_buf()], &["nonexistent".into()], dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("entropy") && msg.contains("pass@16"), "{msg}");
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("metrics.csv"), "iteration,entropy\n1,2\n").unwrap();
        assert!(plot_runs(&[dir.path().to_path_buf()], &["entropy".into()], dir.path()).is_err());
    }
}
