use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Evaluated pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// IMU encoder, quantization, motion decoder.
    Tokenized,
    /// Continuous regression with the same encoder and decoder shapes.
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tokenized => "tokenized",
            Self::Baseline => "baseline",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tokenized" => Ok(Self::Tokenized),
            "baseline" => Ok(Self::Baseline),
            _ => Err(Error::Format(format!("unknown method {s:?}"))),
        }
    }
}

/// One method at one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: Method,
    /// Number of corrupted sensors; 0 is the clean input.
    pub level: usize,
    /// Centimetres.
    pub mpjpe: f64,
    /// 10² m/s³.
    pub jitter: f64,
    /// Sensor combinations averaged.
    pub cases: usize,
    /// Frames per case.
    pub frames: usize,
}

impl MetricRow {
    /// Rejects negative or non-finite metrics.
    pub fn new(method: Method, level: usize, mpjpe: f64, jitter: f64, cases: usize, frames: usize) -> Result<Self> {
        for (name, v) in [("mpjpe", mpjpe), ("jitter", jitter)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::OutOfRange(format!("{name} = {v}")));
            }
        }
        Ok(Self { method, level, mpjpe, jitter, cases, frames })
    }
}

/// Benchmark results: per method and noise level, plus the evaluated clips.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub sequence_ids: Vec<String>,
}

impl MetricReport {
    pub fn get(&self, method: Method, level: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.level == level)
    }
}

const MESH_UNAVAILABLE: &str = "n/a";
const RECORD_HEADER: &str = "method\tlevel\tmpjpe_cm\tmesh_error\tjitter_1e2_m_s3\tcases\tframes";

/// Aligned text table, one row per method and level. Mesh error needs a
/// body model and is reported as unavailable.
pub fn render_table(report: &MetricReport) -> String {
    let header = ["Method", "Noised", "MPJPE (cm)", "Mesh Err", "Jitter (1e2 m/s^3)", "Cases"];
    let rows: Vec<[String; 6]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.method.name().to_string(),
                r.level.to_string(),
                format!("{:.3}", r.mpjpe),
                MESH_UNAVAILABLE.to_string(),
                format!("{:.4}", r.jitter),
                r.cases.to_string(),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[&str]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    out += &line(&width.map(|w| "-".repeat(w)).iter().map(String::as_str).collect::<Vec<_>>());
    for r in &rows {
        out += &line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Machine-readable `.mjr` records: a tab-separated header and one line per
/// row with floats printed round-trip exact, followed by `# sequence` lines.
pub fn render_records(report: &MetricReport) -> String {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:?}\t{MESH_UNAVAILABLE}\t{:?}\t{}\t{}",
            r.method.name(),
            r.level,
            r.mpjpe,
            r.jitter,
            r.cases,
            r.frames
        );
    }
    for id in &report.sequence_ids {
        let _ = writeln!(out, "# sequence {id}");
    }
    out
}

/// Table text and record file contents.
pub fn render_report(report: &MetricReport) -> (String, String) {
    (render_table(report), render_records(report))
}

fn field<T: FromStr>(s: Option<&str>, what: &str, line: usize) -> Result<T> {
    s.and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format(format!("line {line}: bad {what}")))
}

/// Parses [`render_records`] output.
pub fn parse_records(text: &str) -> Result<MetricReport> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RECORD_HEADER => {}
        _ => return Err(Error::Format("missing record header".into())),
    }
    let mut report = MetricReport::default();
    for (i, line) in lines {
        let n = i + 1;
        if let Some(id) = line.strip_prefix("# sequence ") {
            report.sequence_ids.push(id.to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let method: Method = f.next().unwrap_or("").parse()?;
        let level = field(f.next(), "level", n)?;
        let mpjpe = field(f.next(), "mpjpe", n)?;
        if f.next() != Some(MESH_UNAVAILABLE) {
            return Err(Error::Format(format!("line {n}: bad mesh error column")));
        }
        let jitter = field(f.next(), "jitter", n)?;
        let cases = field(f.next(), "cases", n)?;
        let frames = field(f.next(), "frames", n)?;
        if f.next().is_some() {
            return Err(Error::Format(format!("line {n}: too many fields")));
        }
        report.rows.push(MetricRow::new(method, level, mpjpe, jitter, cases, frames)?);
    }
    Ok(report)
}
