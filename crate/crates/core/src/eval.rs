//! MAE / Pearson evaluation of metric estimates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorModel, MetricMode, TrainingItem};
use crate::manifest::{MetricKind, MetricLabels};

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: targets.len() });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("mae of empty series".into()));
    }
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / predictions.len() as f64)
}

/// Sample Pearson correlation. Errors when either series is constant.
pub fn pcc(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: targets.len() });
    }
    let n = predictions.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("pcc needs at least 2 points, got {n}")));
    }
    let mp = predictions.iter().sum::<f64>() / n as f64;
    let mt = targets.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        let (dx, dy) = (p - mp, t - mt);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerical(format!(
            "pcc undefined: {} series has zero variance",
            if sxx == 0.0 { "prediction" } else { "target" }
        )));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// MAE and PCC of one series. `pcc` is `None` when a series is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub mae: f64,
    pub pcc: Option<f64>,
    pub n: usize,
}

impl HeadScore {
    pub fn compute(predictions: &[f64], targets: &[f64]) -> Result<Self> {
        let mae = mae(predictions, targets)?;
        let pcc = match pcc(predictions, targets) {
            Ok(v) => Some(v),
            Err(Error::Numerical(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { mae, pcc, n: predictions.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub s1: HeadScore,
    pub s2: HeadScore,
    /// s1 and s2 pooled into one series of length 2n.
    pub single: HeadScore,
    pub avg: HeadScore,
    /// Mean |pred_avg - (pred_s1 + pred_s2)/2|.
    pub avg_consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub mode: MetricMode,
    pub n: usize,
    pub metrics: Vec<MetricReport>,
}

impl EvalReport {
    pub fn metric(&self, kind: MetricKind) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.metric == kind)
    }

    /// Aligned table with the pooled single-source and average-head
    /// columns side by side.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or("  n/a".to_string(), |x| format!("{x:.3}"));
        let mut s = String::new();
        let _ = writeln!(s, "model {}  data {}  mode {}  n {}", self.model_id, self.dataset_id, self.mode.as_str(), self.n);
        let _ = writeln!(s, "{:<7} {:>7} {:>8} {:>7} {:>8}", "metric", "PCC", "MAE", "A.PCC", "A.MAE");
        for m in &self.metrics {
            let _ = writeln!(
                s,
                "{:<7} {:>7} {:>8.3} {:>7} {:>8.3}",
                m.metric.as_str(),
                f(m.single.pcc),
                m.single.mae,
                f(m.avg.pcc),
                m.avg.mae
            );
        }
        s
    }
}

/// Scores predictions against labels for every metric of `mode`.
pub fn score(predictions: &[MetricLabels], labels: &[MetricLabels], mode: MetricMode, model_id: &str, dataset_id: &str) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut metrics = Vec::new();
    for &kind in mode.kinds() {
        let get = |set: &[MetricLabels], what: &str| {
            set.iter()
                .map(|l| l.get(kind).ok_or_else(|| Error::Validation(format!("{what} lack {} values", kind.as_str()))))
                .collect::<Result<Vec<_>>>()
        };
        let p = get(predictions, "predictions")?;
        let t = get(labels, "labels")?;
        let col = |v: &[crate::manifest::MetricTriple], k: usize| v.iter().map(|x| x.as_array()[k]).collect::<Vec<f64>>();
        let (p1, p2, pa) = (col(&p, 0), col(&p, 1), col(&p, 2));
        let (t1, t2, ta) = (col(&t, 0), col(&t, 1), col(&t, 2));
        let pooled_p: Vec<f64> = p1.iter().chain(&p2).copied().collect();
        let pooled_t: Vec<f64> = t1.iter().chain(&t2).copied().collect();
        let consistency = p.iter().map(|x| (x.avg - (x.s1 + x.s2) / 2.0).abs()).sum::<f64>() / p.len() as f64;
        metrics.push(MetricReport {
            metric: kind,
            s1: HeadScore::compute(&p1, &t1)?,
            s2: HeadScore::compute(&p2, &t2)?,
            single: HeadScore::compute(&pooled_p, &pooled_t)?,
            avg: HeadScore::compute(&pa, &ta)?,
            avg_consistency: consistency,
        });
    }
    Ok(EvalReport { model_id: model_id.into(), dataset_id: dataset_id.into(), mode, n: labels.len(), metrics })
}

/// Predicts every item and scores the result.
pub fn evaluate(model: &EstimatorModel, items: &[TrainingItem], model_id: &str, dataset_id: &str) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let inputs: Vec<_> = items.iter().map(|i| i.input.clone()).collect();
    let predictions = crate::estimator::outputs_for(model, &inputs)?
        .iter()
        .map(|o| model.outputs_to_labels(o))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<MetricLabels> = items.iter().map(|i| i.labels).collect();
    score(&predictions, &labels, model.mode(), model_id, dataset_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::MetricTriple;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pcc_examples() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pcc(&y, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(&neg, &x).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Numerical(_))));
        assert!(pcc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pcc_matches_covariance_formula() {
        let mut r = rng::seeded(4);
        let a: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + r.random_range(-1.0..1.0)).collect();
        let n = 50.0;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((pcc(&a, &b).unwrap() - cov / (sa * sb)).abs() < 1e-12);
        // positive affine maps leave it unchanged, scaling maps MAE
        let a2: Vec<f64> = a.iter().map(|v| 3.0 * v - 7.0).collect();
        assert!((pcc(&a2, &b).unwrap() - pcc(&a, &b).unwrap()).abs() < 1e-12);
        let sc = |v: &[f64]| v.iter().map(|x| -2.5 * x).collect::<Vec<_>>();
        assert!((mae(&sc(&a), &sc(&b)).unwrap() - 2.5 * mae(&a, &b).unwrap()).abs() < 1e-12);
    }

    fn labels(n: usize) -> Vec<MetricLabels> {
        (0..n)
            .map(|i| {
                let x = i as f64;
                MetricLabels {
                    wer: Some(MetricTriple::from_sources(0.1 * x, 0.05 * x * x)),
                    sisnr: Some(MetricTriple::from_sources(20.0 - x, x.sin())),
                }
            })
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let l = labels(8);
        let r = score(&l, &l, MetricMode::Joint, "oracle", "toy").unwrap();
        assert_eq!(r.metrics.len(), 2);
        for m in &r.metrics {
            for h in [&m.s1, &m.s2, &m.single, &m.avg] {
                assert_eq!(h.mae, 0.0);
                assert!((h.pcc.unwrap() - 1.0).abs() < 1e-12);
            }
            assert_eq!(m.single.n, 16);
        }
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_table().contains("A.PCC"));
    }

    #[test]
    fn constant_predictions_flag_pcc() {
        let l = labels(5);
        let c = MetricLabels { wer: None, sisnr: Some(MetricTriple::from_sources(3.0, 3.0)) };
        let r = score(&vec![c; 5], &l, MetricMode::Sisnr, "const", "toy").unwrap();
        let m = r.metric(MetricKind::Sisnr).unwrap();
        assert!(m.avg.pcc.is_none());
        let want = l.iter().map(|x| (x.sisnr.unwrap().avg - 3.0).abs()).sum::<f64>() / 5.0;
        assert!((m.avg.mae - want).abs() < 1e-12);
        // a sisnr model cannot be scored on wer
        assert!(score(&vec![c; 5], &l, MetricMode::Wer, "const", "toy").is_err());
        assert!(score(&[], &[], MetricMode::Wer, "x", "y").is_err());
    }
}
