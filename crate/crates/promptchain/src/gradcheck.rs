//! Finite-difference verification of analytic gradients.
//!
//! The checker perturbs one parameter coordinate at a time and compares the
//! central difference `(loss(p + h) - loss(p - h)) / 2h` against the gradient
//! produced by the reverse pass. Per coordinate the relative error is
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

/// One coordinate whose relative error exceeded the tolerance.
#[derive(Debug, Clone)]
pub struct FlaggedCoordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Worst relative error observed for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub flagged: Vec<FlaggedCoordinate>,
    pub max_rel_error: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Checks every trainable coordinate of `params`.
///
/// `loss_fn(params, compute_grads)` must evaluate the loss; when
/// `compute_grads` is true it must also leave analytic gradients accumulated
/// on the trainable parameters. The step must lie in [1e-6, 1e-4], the range
/// where central differences are trustworthy in double precision.
pub fn grad_check<F>(
    params: &mut ParamSet,
    mut loss_fn: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamSet, bool) -> Result<f64>,
{
    if !(1e-6..=1e-4).contains(&step) {
        return Err(Error::contract(
            "grad_check",
            format!("step must lie in [1e-6, 1e-4], got {step}"),
        ));
    }

    params.zero_grads();
    loss_fn(params, true)?;
    let trainable = params.trainable_ids();
    let mut analytic: Vec<Vec<f64>> = Vec::with_capacity(trainable.len());
    for &id in &trainable {
        let grad = params.get(id).grad().ok_or_else(|| {
            Error::contract("grad_check", "loss_fn did not populate gradients")
        })?;
        analytic.push(grad.to_vec());
    }
    params.zero_grads();

    let mut per_param = Vec::with_capacity(trainable.len());
    let mut flagged = Vec::new();
    let mut overall_max = 0.0_f64;

    for (slot, &id) in trainable.iter().enumerate() {
        let name = params.name(id).to_string();
        let len = params.get(id).numel();
        let mut max_err = 0.0_f64;
        let mut worst = 0;
        for k in 0..len {
            let original = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = original + step;
            let plus = loss_fn(params, false)?;
            params.get_mut(id).data_mut()[k] = original - step;
            let minus = loss_fn(params, false)?;
            params.get_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_error(analytic[slot][k], numeric);
            if err > max_err {
                max_err = err;
                worst = k;
            }
            if err > tolerance {
                flagged.push(FlaggedCoordinate {
                    param: name.clone(),
                    index: k,
                    analytic: analytic[slot][k],
                    numeric,
                    rel_error: err,
                });
            }
        }
        overall_max = overall_max.max(max_err);
        per_param.push(ParamCheck {
            name,
            max_rel_error: max_err,
            worst_index: worst,
        });
    }

    Ok(GradCheckReport {
        per_param,
        flagged,
        max_rel_error: overall_max,
        step,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::{ParamSet, Tensor};

    fn quadratic_loss(params: &mut ParamSet, compute_grads: bool) -> Result<f64> {
        let id = params.trainable_ids()[0];
        let mut g = Graph::new();
        let x = g.param(params, id)?;
        let c = g.constant(&[3], &[0.5, -1.5, 2.0])?;
        let neg_c = g.scale(c, -1.0)?;
        let d = g.add(x, neg_c)?;
        let sq = g.mul(d, d)?;
        let loss = g.sum(sq)?;
        if compute_grads {
            g.backward(loss)?;
            g.accumulate_grads(params)?;
        }
        Ok(g.scalar_value(loss))
    }

    #[test]
    fn quadratic_toy_loss_checks_tightly() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::vector(vec![0.3, 0.9, -0.4]).unwrap());
        let report = grad_check(&mut params, quadratic_loss, 1e-5, 1e-8).unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::vector(vec![0.3, 0.9, -0.4]).unwrap());
        let corrupt = |params: &mut ParamSet, compute_grads: bool| -> Result<f64> {
            let value = quadratic_loss(params, compute_grads)?;
            if compute_grads {
                let id = params.trainable_ids()[0];
                params.get_mut(id).accumulate_grad(&[0.0, 0.1, 0.0])?;
            }
            Ok(value)
        };
        let report = grad_check(&mut params, corrupt, 1e-5, 1e-8).unwrap();
        assert!(!report.passed());
        assert_eq!(report.flagged[0].index, 1);
    }

    #[test]
    fn out_of_range_step_is_rejected() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::vector(vec![0.0]).unwrap());
        assert!(grad_check(&mut params, quadratic_loss, 1e-2, 1e-8).is_err());
    }
}
