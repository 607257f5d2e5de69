//! Per-round regret of one run.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub algo: String,
    pub run_id: usize,
    pub seed: u64,
    pub instant: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretTrace {
    pub fn new(algo: impl Into<String>, run_id: usize, seed: u64) -> Self {
        RegretTrace {
            algo: algo.into(),
            run_id,
            seed,
            instant: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    pub fn with_capacity(
        algo: impl Into<String>,
        run_id: usize,
        seed: u64,
        horizon: usize,
    ) -> Self {
        let mut t = Self::new(algo, run_id, seed);
        t.instant.reserve(horizon);
        t.cumulative.reserve(horizon);
        t
    }

    /// Appends round regret, clamped at zero.
    pub fn push(&mut self, instant: f64) {
        let r = instant.max(0.0);
        let prev = self.cumulative.last().copied().unwrap_or(0.0);
        self.instant.push(r);
        self.cumulative.push(prev + r);
    }

    pub fn len(&self) -> usize {
        self.instant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instant.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Cumulative regret after round `t` (1-based), or `None` past the end.
    pub fn cumulative_at(&self, t: usize) -> Option<f64> {
        if t == 0 {
            Some(0.0)
        } else {
            self.cumulative.get(t - 1).copied()
        }
    }

    /// Mean instantaneous regret over rounds `from..to` (0-based, exclusive end).
    pub fn mean_instant(&self, from: usize, to: usize) -> f64 {
        let s = &self.instant[from..to];
        s.iter().sum::<f64>() / s.len() as f64
    }
}
