use serde::{Deserialize, Serialize};

/// Binary confusion counts with derived rates; any rate whose denominator
/// is zero is reported as 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let n = tp + fp + tn + fn_;
        Self {
            tp,
            fp,
            tn,
            fn_,
            n,
            accuracy: ratio(tp + tn, n),
            precision,
            recall,
            f1,
        }
    }

    /// Counts from parallel prediction and label slices.
    pub fn from_predictions(pred: &[u8], labels: &[u8]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in pred.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let m = MetricsReport::from_counts(8, 2, 8, 2);
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            assert!((v - 0.8).abs() < 1e-12);
        }
        let m = MetricsReport::from_counts(3, 1, 4, 2);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
        assert!((m.f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-12);
        let m = MetricsReport::from_predictions(&[1, 0, 1, 0], &[1, 0, 1, 0]);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_denominators_are_zero() {
        let m = MetricsReport::from_counts(0, 0, 5, 0);
        assert_eq!((m.precision, m.recall, m.f1, m.accuracy), (0.0, 0.0, 0.0, 1.0));
        let m = MetricsReport::from_counts(0, 0, 0, 0);
        assert_eq!(m.accuracy, 0.0);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"fn\":0"));
    }
}
