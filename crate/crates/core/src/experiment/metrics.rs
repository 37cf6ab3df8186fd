use serde::Serialize;

use crate::error::{DtseError, Result};

fn check_shapes(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<()> {
    if truth.len() != est.len() {
        return Err(DtseError::Shape(format!(
            "{} truth steps vs {} estimate steps",
            truth.len(),
            est.len()
        )));
    }
    if let Some((k, (t, e))) = truth
        .iter()
        .zip(est)
        .enumerate()
        .find(|(_, (t, e))| t.len() != e.len())
    {
        return Err(DtseError::Shape(format!(
            "step {k}: truth has {} cells, estimate {}",
            t.len(),
            e.len()
        )));
    }
    if truth.is_empty() {
        return Err(DtseError::Shape("no steps to evaluate".into()));
    }
    Ok(())
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `sqrt(mean_k ||z_k - zhat_k||^2)` over per-step vectors.
pub fn rmse(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<f64> {
    check_shapes(truth, est)?;
    let sum: f64 = truth
        .iter()
        .zip(est)
        .map(|(t, e)| t.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// `100 mean_k 2 ||z_k - zhat_k|| / (||z_k|| + ||zhat_k||)` in percent, with
/// `0 / 0` counted as zero.
pub fn smape(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<f64> {
    check_shapes(truth, est)?;
    let sum: f64 = truth
        .iter()
        .zip(est)
        .map(|(t, e)| {
            let num = 2.0 * norm(t.iter().zip(e).map(|(a, b)| a - b));
            let den = norm(t.iter().copied()) + norm(e.iter().copied());
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .sum();
    Ok(100.0 * sum / truth.len() as f64)
}

/// Box-plot statistics. Quartiles interpolate linearly between order
/// statistics; whiskers reach the furthest samples within 1.5 IQR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

impl Quantiles {
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() || samples.iter().any(|v| v.is_nan()) {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |f: f64| {
            let pos = f * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        };
        let (q1, median, q3) = (q(0.25), q(0.5), q(0.75));
        let iqr = q3 - q1;
        let whisker_low = *s.iter().find(|&&v| v >= q1 - 1.5 * iqr).unwrap_or(&s[0]);
        let whisker_high = *s
            .iter()
            .rev()
            .find(|&&v| v <= q3 + 1.5 * iqr)
            .unwrap_or(&s[s.len() - 1]);
        Some(Self {
            median,
            q1,
            q3,
            whisker_low,
            whisker_high,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_estimate() {
        let z = vec![vec![1.0, 2.0], vec![3.0, 0.0]];
        assert_eq!(rmse(&z, &z).unwrap(), 0.0);
        assert_eq!(smape(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let n = 25;
        let c = 3.5;
        let truth: Vec<Vec<f64>> = (0..7).map(|k| vec![k as f64; n]).collect();
        let est: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        assert_relative_eq!(rmse(&truth, &est).unwrap(), c * (n as f64).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn smape_limits() {
        let truth = vec![vec![1.0, 2.0]];
        assert_relative_eq!(smape(&truth, &[vec![0.0, 0.0]]).unwrap(), 200.0);
        assert_eq!(smape(&[vec![0.0, 0.0]], &[vec![0.0, 0.0]]).unwrap(), 0.0);
    }

    #[test]
    fn small_instance_matches_hand_sum() {
        // Values checked by direct summation.
        let truth = vec![vec![3.0, 4.0], vec![0.0, 1.0]];
        let est = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        // ||e|| = 5, 1; ||z|| = 5, 1; ||zhat|| = 0, sqrt(2)
        assert_relative_eq!(rmse(&truth, &est).unwrap(), (13.0f64).sqrt());
        let expect = 100.0 / 2.0 * (2.0 * 5.0 / 5.0 + 2.0 / (1.0 + 2f64.sqrt()));
        assert_relative_eq!(smape(&truth, &est).unwrap(), expect, max_relative = 1e-14);
    }

    #[test]
    fn shape_mismatch() {
        assert!(rmse(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
        assert!(smape(&[vec![1.0]], &[]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn quantiles() {
        let q = Quantiles::of(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(q.median, 3.0);
        assert_eq!(q.q1, 2.0);
        assert_eq!(q.q3, 4.0);
        assert_eq!(q.whisker_low, 1.0);
        assert_eq!(q.whisker_high, 4.0);
        let one = Quantiles::of(&[7.0]).unwrap();
        assert_eq!((one.median, one.iqr()), (7.0, 0.0));
        assert!(Quantiles::of(&[]).is_none());
    }
}
