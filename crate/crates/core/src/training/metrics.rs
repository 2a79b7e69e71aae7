use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numeric::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetric {
    pub feature: usize,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

/// MAE, MSE and RMSE over all selected entries, plus a per-feature breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub per_feature: Vec<FeatureMetric>,
    pub horizon: usize,
    /// Number of entries averaged.
    pub n: usize,
}

/// Metrics of `pred` against `target` (`[.., H, C]`), over features selected by `mask`.
pub fn compute_metrics(
    pred: &Tensor,
    target: &Tensor,
    mask: Option<&[bool]>,
) -> Result<MetricReport, TrainError> {
    if pred.shape() != target.shape() {
        return Err(TrainError::Shape {
            pred: pred.shape().to_vec(),
            target: target.shape().to_vec(),
        });
    }
    let shape = pred.shape();
    let c = *shape.last().ok_or(TrainError::Empty)?;
    let horizon = if shape.len() >= 2 {
        shape[shape.len() - 2]
    } else {
        shape[0]
    };
    let selected = |j: usize| mask.is_none_or(|m| m.get(j).copied().unwrap_or(false));

    let mut abs = vec![0.0; c];
    let mut sq = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        let j = i % c;
        let e = p - t;
        abs[j] += e.abs();
        sq[j] += e * e;
        counts[j] += 1;
    }
    let n: usize = (0..c).filter(|&j| selected(j)).map(|j| counts[j]).sum();
    if n == 0 {
        return Err(TrainError::Empty);
    }
    let mae = (0..c).filter(|&j| selected(j)).map(|j| abs[j]).sum::<f64>() / n as f64;
    let mse = (0..c).filter(|&j| selected(j)).map(|j| sq[j]).sum::<f64>() / n as f64;
    let per_feature = (0..c)
        .filter(|&j| selected(j))
        .map(|j| {
            let mse = sq[j] / counts[j] as f64;
            FeatureMetric {
                feature: j,
                mae: abs[j] / counts[j] as f64,
                mse,
                rmse: mse.sqrt(),
            }
        })
        .collect();
    Ok(MetricReport {
        mae,
        mse,
        rmse: mse.sqrt(),
        per_feature,
        horizon,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_arithmetic() {
        let y = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let p = Tensor::full(&[3, 1], 2.0);
        let r = compute_metrics(&p, &y, None).unwrap();
        assert!((r.mae - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.mse - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.rmse, (2.0f64 / 3.0).sqrt());
        let z = compute_metrics(&y, &y, None).unwrap();
        assert_eq!((z.mae, z.mse, z.rmse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn masking_and_errors() {
        let p = Tensor::new(vec![1, 2, 2], vec![1.0, 5.0, 1.0, 5.0]).unwrap();
        let t = Tensor::zeros(&[1, 2, 2]);
        let r = compute_metrics(&p, &t, Some(&[true, false])).unwrap();
        assert_eq!((r.mae, r.n, r.horizon), (1.0, 2, 2));
        assert_eq!(r.per_feature.len(), 1);
        assert!(compute_metrics(&p, &t, Some(&[false, false])).is_err());
        assert!(compute_metrics(&p, &Tensor::zeros(&[2, 2]), None).is_err());
    }

    proptest! {
        #[test]
        fn metric_identities(v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..60)) {
            let p = Tensor::new(vec![v.len(), 1], v.iter().map(|x| x.0).collect()).unwrap();
            let t = Tensor::new(vec![v.len(), 1], v.iter().map(|x| x.1).collect()).unwrap();
            let r = compute_metrics(&p, &t, None).unwrap();
            prop_assert_eq!(r.rmse, r.mse.sqrt());
            prop_assert!((r.rmse * r.rmse - r.mse).abs() <= 1e-12 * r.mse.max(1.0));
            prop_assert!(r.mae <= r.rmse + 1e-12);
            prop_assert!(r.mae >= 0.0 && r.mse >= 0.0);
        }
    }
}
