use std::fmt::Write as _;

use crate::losses::LossTerm;

/// One logged iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    /// Unweighted term values, in [`LossTerm::ALL`] order.
    pub terms: [f64; 8],
    pub total: f64,
    /// MLP learning rate used for this step.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// CSV with a header row. Reals use the shortest round-trip form, so equal
    /// logs produce equal text; `with_time = false` drops the wall-clock column.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut out = String::from("iteration");
        for t in LossTerm::ALL {
            out.push(',');
            out.push_str(t.name());
        }
        out.push_str(",total,lr");
        if with_time {
            out.push_str(",seconds");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.iteration);
            for v in r.terms {
                let _ = write!(out, ",{v}");
            }
            let _ = write!(out, ",{},{}", r.total, r.lr);
            if with_time {
                let _ = write!(out, ",{:.3}", r.seconds);
            }
            out.push('\n');
        }
        out
    }

    /// Mean of `term` over the first and last `window` records.
    pub fn leading_trailing_means(&self, term: LossTerm, window: usize) -> Option<(f64, f64)> {
        let n = self.records.len();
        if n == 0 || window == 0 {
            return None;
        }
        let w = window.min(n);
        let mean = |rs: &[LogRecord]| rs.iter().map(|r| r.terms[term.index()]).sum::<f64>() / rs.len() as f64;
        Some((mean(&self.records[..w]), mean(&self.records[n - w..])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let log = TrainLog {
            records: vec![LogRecord {
                iteration: 3,
                terms: [0.5; 8],
                total: 4.0,
                lr: 1e-4,
                seconds: 1.25,
            }],
        };
        let csv = log.to_csv(true);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,cycle_3d,cycle_2d,entropy,surface,cluster,conformal,stretch,texture,total,lr,seconds"
        );
        assert_eq!(lines.next().unwrap(), "3,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,4,0.0001,1.250");
        assert!(!log.to_csv(false).contains("seconds"));
        assert_eq!(log.leading_trailing_means(LossTerm::Surface, 10), Some((0.5, 0.5)));
    }
}
