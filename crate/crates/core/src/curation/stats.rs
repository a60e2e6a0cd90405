use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub values: Vec<f64>,
    /// Standard deviation fell below 1e-12; values are all zero.
    pub degenerate: bool,
}

/// `(v − mean)/std` with the population standard deviation.
pub fn zscore(values: &[f64]) -> ZScore {
    let n = values.len() as f64;
    if values.is_empty() {
        return ZScore {
            values: Vec::new(),
            degenerate: true,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return ZScore {
            values: vec![0.0; values.len()],
            degenerate: true,
        };
    }
    ZScore {
        values: values.iter().map(|v| (v - mean) / std).collect(),
        degenerate: false,
    }
}

/// Linear interpolation at fractional index `(N−1)·p` of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty list");
    let idx = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    sorted[lo] + (idx - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn median(values: &[f64]) -> f64 {
    percentile(&sorted(values), 0.5)
}

/// 75th minus 25th percentile.
pub fn iqr(values: &[f64]) -> f64 {
    let s = sorted(values);
    percentile(&s, 0.75) - percentile(&s, 0.25)
}

/// Welford running mean and population standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        RunningStats::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zscore_fixture() {
        let z = zscore(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = std::f64::consts::SQRT_2;
        let want = [-r, -r / 2.0, 0.0, r / 2.0, r];
        for (a, b) in z.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!z.degenerate);
        let c = zscore(&[5.0, 5.0, 5.0]);
        assert_eq!(c.values, vec![0.0; 3]);
        assert!(c.degenerate);
    }

    #[test]
    fn iqr_fixtures() {
        let z = zscore(&[1.0, 2.0, 3.0, 4.0, 5.0]).values;
        assert!((iqr(&z) - 1.4142).abs() < 1e-4);
        assert_eq!(iqr(&[0.0; 4]), 0.0);
        assert_eq!(iqr(&[0.0, 1.0, 2.0, 3.0]), 1.5);
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(percentile(&s, 0.25), 0.75);
        assert_eq!(percentile(&s, 0.75), 2.25);
        assert_eq!(iqr(&[7.0]), 0.0);
    }

    #[test]
    fn running_stats_match_batch() {
        let xs = [0.3, -1.0, 2.5, 4.0, 0.0];
        let mut s = RunningStats::new();
        xs.iter().for_each(|&x| s.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!((s.mean() - mean).abs() < 1e-12 && (s.std() - std).abs() < 1e-12);
        assert_eq!(s.count(), 5);
    }

    proptest! {
        #[test]
        fn zscore_moments(v in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let z = zscore(&v);
            if !z.degenerate {
                let n = v.len() as f64;
                let m = z.values.iter().sum::<f64>() / n;
                let sd = (z.values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
        }
    }
}
