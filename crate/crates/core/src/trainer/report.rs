use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Scalars logged for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub scalars: Vec<(&'static str, f64)>,
    pub wall_ms: f64,
}

impl StepRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }

    /// `step=3 lr=0.0002 total=… wall_ms=…`, floats round-trip exact.
    pub fn to_line(&self) -> String {
        let mut s = format!("step={} lr={:?}", self.step, self.lr);
        for (n, v) in &self.scalars {
            let _ = write!(s, " {n}={v:?}");
        }
        let _ = write!(s, " wall_ms={:.3}", self.wall_ms);
        s
    }
}

/// Per-step log of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub stage: String,
    pub records: Vec<StepRecord>,
    /// Digest of the frozen motion model after stage two.
    pub frozen_digest: Option<[u8; 32]>,
}

impl TrainReport {
    pub fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), records: Vec::new(), frozen_digest: None }
    }

    /// Appends a record; step indices must strictly increase.
    pub fn push(&mut self, r: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.step <= last.step {
                return Err(Error::InvalidArgument(format!("step {} after {}", r.step, last.step)));
            }
        }
        self.records.push(r);
        Ok(())
    }

    /// Values of one scalar over all steps.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.get(name)).collect()
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.records.last().and_then(|r| r.get(name))
    }

    /// Mean of a scalar over the final `n` steps.
    pub fn tail_mean(&self, name: &str, n: usize) -> Option<f64> {
        let s = self.series(name);
        let tail = &s[s.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Line-delimited records prefixed by the stage name.
    pub fn to_lines(&self) -> String {
        self.records.iter().map(|r| format!("{} {}\n", self.stage, r.to_line())).collect()
    }
}
