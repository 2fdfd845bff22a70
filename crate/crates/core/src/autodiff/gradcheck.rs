//! Central-difference gradient checking.

use super::params::{Gradients, ParameterSet};
use crate::error::{Error, Result};

/// Denominator floor for relative errors.
pub const GRADCHECK_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compare analytic gradients against central differences for every
/// trainable coordinate.
///
/// `loss` evaluates the scalar objective and, when given a buffer,
/// accumulates its analytic gradient into it. The result is the maximum
/// over coordinates of `|a − n| / max(|a|, |n|, floor)`.
pub fn finite_diff_check<F>(params: &ParameterSet, eps: f64, loss: F) -> Result<GradCheck>
where
    F: FnMut(&ParameterSet, Option<&mut Gradients>) -> f64,
{
    finite_diff_check_with_floor(params, eps, GRADCHECK_FLOOR, loss)
}

/// [`finite_diff_check`] with a custom denominator floor. Whole networks
/// have coordinates whose true gradient is below the round-off noise of
/// the loss; a larger floor keeps those from dominating.
pub fn finite_diff_check_with_floor<F>(params: &ParameterSet, eps: f64, floor: f64, mut loss: F) -> Result<GradCheck>
where
    F: FnMut(&ParameterSet, Option<&mut Gradients>) -> f64,
{
    let mut analytic = Gradients::for_params(params);
    let base = loss(params, Some(&mut analytic));
    if !base.is_finite() {
        return Err(Error::Numeric {
            location: "loss at probe point".into(),
        });
    }
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    let ids: Vec<_> = params.sorted_ids().collect();
    for id in ids {
        if !params.is_trainable(id) {
            continue;
        }
        let n = params.get(id).len();
        for k in 0..n {
            let orig = params.value(id)[k];
            probe.get_mut(id).data_mut()[k] = orig + eps;
            let plus = loss(&probe, None);
            probe.get_mut(id).data_mut()[k] = orig - eps;
            let minus = loss(&probe, None);
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[k]);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Numeric {
                    location: format!("{}[{k}]", params.name(id)),
                });
            }
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::graph::Graph;
    use crate::autodiff::tensor::Tensor;

    #[test]
    fn affine_is_exact_to_roundoff() {
        let mut p = ParameterSet::new();
        let w = p
            .add("w", Tensor::new(vec![2, 2], vec![0.3, -0.7, 1.1, 0.2]).unwrap(), true)
            .unwrap();
        let b = p.add("b", Tensor::new(vec![2], vec![0.1, 0.4]).unwrap(), true).unwrap();
        let check = finite_diff_check(&p, 1e-3, |ps, grads| {
            let mut g = Graph::new(ps);
            let x = g.constant(vec![0.9, -1.3]);
            let y = g.affine(w, Some(b), x).unwrap();
            let y0 = g.slice(y, 0, 1);
            let y1 = g.slice(y, 1, 1);
            let y1 = g.scale(y1, 3.0);
            let s = g.sum_scalars(&[y0, y1]);
            if let Some(grads) = grads {
                g.backward(s, grads);
            }
            g.scalar(s)
        })
        .unwrap();
        assert!(check.max_rel_error <= 1e-9, "{check:?}");
        assert_eq!(check.coordinates, 6);
    }

    #[test]
    fn reports_maximum_not_mean() {
        let mut p = ParameterSet::new();
        p.add("w", Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap(), true)
            .unwrap();
        // Analytic gradient deliberately wrong in one coordinate only.
        let check = finite_diff_check(&p, 1e-4, |ps, grads| {
            let w = ps.by_name("w").unwrap().data();
            if let Some(grads) = grads {
                let id = ps.id("w").unwrap();
                grads.slot_mut(id, 3).copy_from_slice(&[1.0, 1.0, 2.0]);
            }
            w.iter().sum()
        })
        .unwrap();
        assert!((check.max_rel_error - 0.5).abs() < 1e-6);
        assert_eq!(check.worst_index, 2);
    }

    #[test]
    fn non_finite_reported_with_coordinate() {
        let mut p = ParameterSet::new();
        p.add("w", Tensor::new(vec![2], vec![0.0, 1.0]).unwrap(), true).unwrap();
        let err = finite_diff_check(&p, 1e-3, |ps, _| {
            let w = ps.by_name("w").unwrap().data();
            if w[0] != 0.0 {
                f64::NAN
            } else {
                w[1]
            }
        })
        .unwrap_err();
        match err {
            Error::Numeric { location } => assert_eq!(location, "w[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
