//! CSV logs and SVG learning curves.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::experiment::RunRecord;

pub const CSV_HEADER: &str =
    "rep,episode,real_steps,accounted_steps,return,policy_loss,entropy,value_loss,wall_s";

/// Trailing window for smoothing returns in plots.
pub const SMOOTHING_WINDOW: usize = 10;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to write")]
    Empty,
    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the header and one row per record.
pub fn write_csv<W: Write>(records: &[RunRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<(), ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_csv(records, BufWriter::new(file)).map_err(|e| csv_err(path.display().to_string(), e))
}

fn csv_err(path: String, e: csv::Error) -> ReportError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    let msg = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} columns, found {len}")
        }
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    ReportError::Format { path, line, msg }
}

pub fn parse_csv(text: &str, path: &str) -> Result<Vec<RunRecord>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_err(path.to_string(), e))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(ReportError::Format {
            path: path.to_string(),
            line: 1,
            msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    rdr.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| csv_err(path.to_string(), e))
}

pub fn read_csv(path: &Path) -> Result<Vec<RunRecord>, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&text, &path.display().to_string())
}

/// Trailing mean over up to `window` values ending at each index.
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// One aggregated learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    /// `(accounted steps, mean, min, max)` per episode index.
    pub points: Vec<(f64, f64, f64, f64)>,
}

/// Smooths each repetition's returns, then aggregates across repetitions
/// by episode index.
pub fn curve_from_records(records: &[RunRecord], label: String) -> Curve {
    let mut reps: Vec<usize> = records.iter().map(|r| r.rep).collect();
    reps.sort_unstable();
    reps.dedup();
    let per_rep: Vec<(Vec<f64>, Vec<f64>)> = reps
        .iter()
        .map(|&rep| {
            let mut rows: Vec<&RunRecord> = records.iter().filter(|r| r.rep == rep).collect();
            rows.sort_by_key(|r| r.episode);
            let xs = rows.iter().map(|r| r.accounted_steps as f64).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.episode_return).collect();
            (xs, trailing_mean(&ys, SMOOTHING_WINDOW))
        })
        .collect();
    let len = per_rep.iter().map(|(x, _)| x.len()).max().unwrap_or(0);
    let points = (0..len)
        .map(|i| {
            let (mut x, mut y, mut lo, mut hi, mut k) = (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for (xs, ys) in per_rep.iter().filter(|(xs, _)| i < xs.len()) {
                x += xs[i];
                y += ys[i];
                lo = lo.min(ys[i]);
                hi = hi.max(ys[i]);
                k += 1.0;
            }
            (x / k, y / k, lo, hi)
        })
        .collect();
    Curve { label, points }
}

/// `N_trace` implied by a log, from accounted over real steps.
pub fn n_trace_of(records: &[RunRecord]) -> Option<u64> {
    records
        .iter()
        .find(|r| r.real_steps > 0)
        .map(|r| r.accounted_steps / r.real_steps)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Renders curves as a standalone SVG document.
pub fn render_svg(curves: &[Curve]) -> String {
    let (w, h) = (800.0, 500.0);
    let (ml, mr, mt, mb) = (80.0, 200.0, 30.0, 60.0);
    let all = curves.iter().flat_map(|c| &c.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, _, lo, hi) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(lo);
        y1 = y1.max(hi);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">
<rect width="{w}" height="{h}" fill="white"/>
<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 20.0
        );
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            ml - 5.0,
            ml - 8.0,
            y + 4.0,
            (t * 1e6).round() / 1e6
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">accounted environment steps</text>
<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">return (trailing mean of {SMOOTHING_WINDOW} episodes)</text>"#,
        ml + pw / 2.0,
        h - 15.0,
        mt + ph / 2.0,
        mt + ph / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        match c.points.as_slice() {
            [] => {}
            [(x, y, _, _)] => {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                    sx(*x),
                    sy(*y)
                );
            }
            pts => {
                let upper = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.3)));
                let lower = pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.2)));
                let band: Vec<String> = upper.chain(lower).collect();
                let mean: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>
<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    band.join(" "),
                    mean.join(" ")
                );
            }
        }
        let ly = mt + 10.0 + 20.0 * i as f64;
        let lx = ml + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ly - 2.0,
            lx + 20.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads each CSV as one curve and writes the SVG to `out`.
pub fn emit_plot(csvs: &[PathBuf], out: &Path) -> Result<(), ReportError> {
    if csvs.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut curves = Vec::with_capacity(csvs.len());
    for path in csvs {
        let records = read_csv(path)?;
        let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let label = match n_trace_of(&records) {
            Some(n) => format!("N_trace = {n} ({stem})"),
            None => stem,
        };
        curves.push(curve_from_records(&records, label));
    }
    fs::write(out, render_svg(&curves)).map_err(io_err(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rep: usize, episode: usize, ret: f64) -> RunRecord {
        RunRecord {
            rep,
            episode,
            real_steps: 300 * (episode as u64 + 1),
            accounted_steps: 3000 * (episode as u64 + 1),
            episode_return: ret,
            policy_loss: -1.25e-7,
            entropy: 0.1 + episode as f64,
            value_loss: 1.0 / 3.0,
            wall_s: 0.0,
        }
    }

    #[test]
    fn csv_line_count_and_golden_header() {
        let mut buf = Vec::new();
        write_csv(&[rec(0, 0, -1.5), rec(0, 1, -1.2)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(
            text.lines().next().unwrap(),
            "rep,episode,real_steps,accounted_steps,return,policy_loss,entropy,value_loss,wall_s"
        );
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0,0,300,3000,-1.5,-1.25e-7,0.1,0.3333333333333333,0.0"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let recs: Vec<RunRecord> = (0..5)
            .map(|i| RunRecord {
                episode_return: -(i as f64).sqrt() / 7.0,
                policy_loss: 1e-300 * i as f64,
                ..rec(1, i, 0.0)
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let back = parse_csv(std::str::from_utf8(&buf).unwrap(), "mem").unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn bad_csvs_are_format_errors() {
        assert!(matches!(parse_csv("a,b\n", "x"), Err(ReportError::Format { line: 1, .. })));
        let text = format!("{CSV_HEADER}\n0,0,1,1,0.5\n");
        assert!(matches!(parse_csv(&text, "x"), Err(ReportError::Format { line: 2, .. })));
        let text = format!("{CSV_HEADER}\n0,0,1,1,nope,0,0,0,0\n");
        assert!(parse_csv(&text, "x").is_err());
        assert!(matches!(emit_csv(&[], Path::new("/nonexistent")), Err(ReportError::Empty)));
    }

    #[test]
    fn trailing_mean_examples() {
        assert_eq!(trailing_mean(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
        let ones = vec![1.0; 25];
        assert!(trailing_mean(&ones, 10).iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn curve_band_brackets_the_mean() {
        let recs: Vec<RunRecord> = (0..3)
            .flat_map(|rep| (0..12).map(move |e| rec(rep, e, -(rep as f64) - e as f64 * 0.01)))
            .collect();
        let c = curve_from_records(&recs, "x".into());
        assert_eq!(c.points.len(), 12);
        for &(_, m, lo, hi) in &c.points {
            assert!(lo <= m && m <= hi);
        }
        assert_eq!(n_trace_of(&recs), Some(10));
    }

    #[test]
    fn single_point_series_is_a_marker() {
        let svg = render_svg(&[curve_from_records(&[rec(0, 0, -1.0)], "one".into())]);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = render_svg(&[curve_from_records(&[rec(0, 0, -1.0), rec(0, 1, -0.5)], "a<b & c".into())]);
        assert!(svg.contains("a&lt;b &amp; c"));
    }
}
