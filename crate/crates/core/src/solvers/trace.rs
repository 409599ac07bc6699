use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub tau: f64,
    pub loss: f64,
    pub bound: f64,
    pub epsilon: Option<f64>,
    pub wallclock_ms: f64,
}

/// Recorded iterations of one run, in strictly increasing order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTrace {
    records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; panics if the iteration index does not increase.
    pub fn push(&mut self, record: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.iter > last.iter, "trace iterations must increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `iter,tau,loss,bound,epsilon,wallclock_ms`; a missing
    /// epsilon is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,tau,loss,bound,epsilon,wallclock_ms\n");
        for r in &self.records {
            let eps = r.epsilon.map(|e| format!("{e:e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{},{:.3}",
                r.iter, r.tau, r.loss, r.bound, eps, r.wallclock_ms
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: usize) -> TraceRecord {
        TraceRecord { iter, tau: 1.0, loss: 0.5, bound: 2.0, epsilon: None, wallclock_ms: 0.0 }
    }

    #[test]
    fn csv_layout() {
        let mut t = RunTrace::new();
        t.push(rec(0));
        t.push(TraceRecord { epsilon: Some(0.25), ..rec(10) });
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,tau,loss,bound,epsilon,wallclock_ms");
        assert_eq!(lines[1], "0,1e0,5e-1,2e0,,0.000");
        assert_eq!(lines[2], "10,1e0,5e-1,2e0,2.5e-1,0.000");
    }

    #[test]
    #[should_panic]
    fn rejects_non_increasing() {
        let mut t = RunTrace::new();
        t.push(rec(5));
        t.push(rec(5));
    }
}
