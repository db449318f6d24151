use super::{NnError, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat offset of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compare `analytic` gradients against central differences of `loss_fn`.
///
/// Each scalar is perturbed to `x ± eps` in `f32` storage and the realised
/// step `x₊ − x₋` is used as the divisor, so the rounding of the perturbed
/// parameter does not bias the estimate. Relative error uses the
/// denominator `max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check<F>(
    loss_fn: F,
    params: &ParamStore,
    analytic: &ParamStore,
    eps: f64,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&ParamStore) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    params.check_same_layout(analytic)?;
    if !loss_fn(params).is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    for i in 0..params.len() {
        let name = params.names()[i].clone();
        for j in 0..params.tensor(i).len() {
            let x = params.tensor(i).as_slice()[j];
            let plus = (x as f64 + eps) as f32;
            let minus = (x as f64 - eps) as f32;
            probe.tensor_mut(i).as_mut_slice()[j] = plus;
            let f_plus = loss_fn(&probe);
            probe.tensor_mut(i).as_mut_slice()[j] = minus;
            let f_minus = loss_fn(&probe);
            probe.tensor_mut(i).as_mut_slice()[j] = x;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(NnError::NonFiniteLoss);
            }
            let numeric = (f_plus - f_minus) / (plus as f64 - minus as f64);
            let a = analytic.tensor(i).as_slice()[j] as f64;
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((name.clone(), j));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseMatrix;

    fn store(v: Vec<f32>) -> ParamStore {
        let mut p = ParamStore::new();
        let n = v.len();
        p.insert("theta", DenseMatrix::from_vec(1, n, v).unwrap()).unwrap();
        p
    }

    fn half_sq_norm(p: &ParamStore) -> f64 {
        p.tensor(0).as_slice().iter().map(|&x| 0.5 * (x as f64).powi(2)).sum()
    }

    #[test]
    fn quadratic_gradient_matches() {
        let theta = store(vec![1.0, 2.0]);
        let grad = store(vec![1.0, 2.0]);
        let r = finite_difference_check(half_sq_norm, &theta, &grad, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let theta = store(vec![0.3, -0.4, 5.0]);
        let grad = store(vec![0.0; 3]);
        let r = finite_difference_check(|_| 4.2, &theta, &grad, 1e-3).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let theta = store(vec![1.0, 2.0]);
        let grad = store(vec![1.0, 3.0]);
        let r = finite_difference_check(half_sq_norm, &theta, &grad, 1e-3).unwrap();
        assert!(r.max_rel_error > 0.3);
        assert_eq!(r.worst, Some(("theta".into(), 1)));
    }

    #[test]
    fn non_finite_loss_reported() {
        let theta = store(vec![1.0]);
        let grad = store(vec![0.0]);
        assert!(matches!(
            finite_difference_check(|_| f64::NAN, &theta, &grad, 1e-3),
            Err(NnError::NonFiniteLoss)
        ));
    }
}
