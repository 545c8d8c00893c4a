use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst entry found by [`grad_check_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients with central differences and returns the largest
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over every entry
/// of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check_report(f, params, step).map(|r| r.max_rel_error)
}

pub fn grad_check_report<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }

    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let value = loss.item().ok_or_else(|| Error::NonScalarLoss(loss.shape()))?;
        if !value.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        let grads = tape.backward(loss)?;
        vars.iter()
            .map(|v| grads.get(*v).cloned().expect("every param has a gradient"))
            .collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        let v = f(&tape, &vars)?
            .item()
            .ok_or_else(|| Error::InvalidArgument("loss is not scalar".into()))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check perturbed loss".into()))
        }
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for p in 0..params.len() {
        for i in 0..params[p].numel() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[p].data()[i];
            if !a.is_finite() {
                return Err(Error::NonFinite("analytic gradient".into()));
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: err,
                    param: p,
                    index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(
            |tape, _| Ok(tape.constant(Tensor::scalar(2.5))),
            &[Tensor::vector(vec![1.0, 2.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn composite_network_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = [
            random(&[4, 3], &mut rng),
            random(&[3, 5], &mut rng),
            random(&[5], &mut rng),
        ];
        let err = grad_check(
            |_, v| {
                let h = v[0].matmul(v[1])?.add_row(v[2])?;
                let a = h.tanh().mul(h.sigmoid())?;
                let b = h.scale(0.5).relu();
                let c = Var::mean_of(&[a, b])?;
                Ok(c.sum_squares())
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn cosine_magnitude_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = [
            random(&[3, 2, 2], &mut rng),
            random(&[3, 2], &mut rng),
            random(&[3, 2], &mut rng),
        ];
        let err = grad_check(
            |_, v| {
                let masked = v[1].complex_mask(v[0])?;
                let mag = masked.magnitude()?;
                let cos = mag.cosine(v[2])?;
                let d = mag.dot(v[2])?;
                cos.add(d)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        assert!(grad_check(|t, _| Ok(t.constant(Tensor::scalar(0.0))), &[], 0.0).is_err());
        let r = grad_check(
            |t, _| Ok(t.constant(Tensor::scalar(f64::NAN))),
            &[Tensor::scalar(1.0)],
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
