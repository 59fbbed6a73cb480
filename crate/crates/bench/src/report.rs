use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Nearest-rank percentile: the `ceil(q * n)`-th smallest sample.
///
/// `sorted` must be ascending and non-empty; `q` is clamped to `(0, 1]`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    // the epsilon keeps products like 0.95 * 100 from rounding up a rank
    let rank = (q * n as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Fraction of tasks answered correctly.
    pub accuracy: f64,
    /// Seconds.
    pub p50: f64,
    pub p95: f64,
    pub mean: f64,
}

impl LatencyReport {
    /// Summarizes per-task durations (seconds) and the number answered correctly.
    pub fn from_samples(durations: &[f64], correct: usize) -> Option<Self> {
        if durations.is_empty() {
            return None;
        }
        let mut sorted = durations.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        Some(Self {
            accuracy: correct as f64 / n,
            p50: nearest_rank(&sorted, 0.50),
            p95: nearest_rank(&sorted, 0.95),
            mean: sorted.iter().sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub tasks: usize,
    pub accuracy: f64,
    pub latency: LatencyReport,
    pub mean_context_size: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    variant: &'a str,
    accuracy: f64,
    p50: f64,
    p95: f64,
    mean: f64,
    mean_context_size: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Columns: variant, accuracy, p50, p95, mean, mean_context_size.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                variant: &r.variant,
                accuracy: r.accuracy,
                p50: r.latency.p50,
                p95: r.latency.p95,
                mean: r.latency.mean,
                mean_context_size: r.mean_context_size,
            })?;
        }
        w.flush().map_err(|e| BenchError::Io(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Plain-text table; accuracy and mean latency carry the relative change
    /// against the `full` row when there is one.
    pub fn format(&self) -> String {
        let reference = self.row("full");
        let rel = |value: f64, base: Option<f64>| match base {
            Some(b) if b != 0.0 => format!(" ({:+.1}%)", (value - b) / b * 100.0),
            _ => String::new(),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>18} {:>10} {:>10} {:>18} {:>9}",
            "variant", "n", "accuracy", "p50 (s)", "p95 (s)", "mean (s)", "|C|"
        );
        for r in &self.rows {
            let acc = format!("{:.3}{}", r.accuracy, rel(r.accuracy, reference.map(|f| f.accuracy)));
            let mean = format!("{:.4}{}", r.latency.mean, rel(r.latency.mean, reference.map(|f| f.latency.mean)));
            let _ = writeln!(
                out,
                "{:<20} {:>5} {:>18} {:>10.4} {:>10.4} {:>18} {:>9.1}",
                r.variant, r.tasks, acc, r.latency.p50, r.latency.p95, mean, r.mean_context_size
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn small_samples() {
        assert_eq!(nearest_rank(&[3.0], 0.5), 3.0);
        assert_eq!(nearest_rank(&[1.0, 2.0], 0.5), 1.0);
        assert_eq!(nearest_rank(&[1.0, 2.0], 0.95), 2.0);
        assert!(LatencyReport::from_samples(&[], 0).is_none());
    }

    #[test]
    fn csv_schema() {
        let table = AblationTable {
            rows: vec![AblationRow {
                variant: "full".into(),
                tasks: 2,
                accuracy: 1.0,
                latency: LatencyReport::from_samples(&[0.5, 0.25], 2).unwrap(),
                mean_context_size: 3.5,
            }],
        };
        assert_eq!(table.to_csv(), "variant,accuracy,p50,p95,mean,mean_context_size\nfull,1.0,0.25,0.5,0.375,3.5\n");
        assert!(table.format().contains("full"));
    }

    proptest! {
        #[test]
        fn percentile_is_a_sample_with_enough_mass_below(mut xs in prop::collection::vec(0.0f64..1e3, 1..200), q in 0.01f64..=1.0) {
            xs.sort_by(f64::total_cmp);
            let p = nearest_rank(&xs, q);
            prop_assert!(xs.contains(&p));
            let at_most = xs.iter().filter(|x| **x <= p).count() as f64;
            let below = xs.iter().filter(|x| **x < p).count() as f64;
            let n = xs.len() as f64;
            prop_assert!(at_most >= q * n - 1e-9);
            prop_assert!(below < q * n + 1e-9);
        }
    }
}
