//! Finite-difference verification of analytic gradients.
//!
//! Checks run in f64 only: the f32 build of an op shares this code path, so
//! verifying the f64 instantiation verifies the formulas.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

fn bump(x: &Tensor<f64>, i: usize, delta: f64) -> Tensor<f64> {
    let mut data = x.data().to_vec();
    data[i] += delta;
    Tensor::from_vec(x.shape(), data)
}

fn eval_scalar(
    f: &impl Fn(&Graph<f64>, Var) -> Result<Var>,
    x: &Tensor<f64>,
) -> Result<f64> {
    let g = Graph::inference();
    let xv = g.leaf(x.clone(), false);
    let out = f(&g, xv)?;
    let value = g.value(out);
    if value.numel() != 1 {
        return Err(CoreError::Verification(format!(
            "checked function must return a scalar, got shape {:?}",
            value.shape()
        )));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(CoreError::Verification("non-finite function output".into()));
    }
    Ok(v)
}

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued function of one tensor input.
pub fn finite_diff_check(
    f: impl Fn(&Graph<f64>, Var) -> Result<Var>,
    x: &Tensor<f64>,
    h: f64,
) -> Result<f64> {
    let g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let out = f(&g, xv)?;
    if g.value(out).numel() != 1 {
        return Err(CoreError::Verification(format!(
            "checked function must return a scalar, got shape {:?}",
            g.shape_of(out)
        )));
    }
    if !g.value(out).item().is_finite() {
        return Err(CoreError::Verification("non-finite function output".into()));
    }
    g.backward(out)?;
    let analytic = g
        .grad(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let fp = eval_scalar(&f, &bump(x, i, h))?;
        let fm = eval_scalar(&f, &bump(x, i, -h))?;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// Same check, but over every parameter of a model: the closure builds the
/// scalar loss from parameters bound inside it.
pub fn finite_diff_check_params(
    f: impl Fn(&Graph<f64>) -> Result<Var>,
    store: &ParamStore<f64>,
    h: f64,
) -> Result<f64> {
    let g = Graph::new();
    let out = f(&g)?;
    if g.value(out).numel() != 1 {
        return Err(CoreError::Verification("loss must be scalar".into()));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = store
        .params()
        .iter()
        .map(|p| g.param_grad(p).unwrap_or_else(|| Tensor::zeros(&p.shape())))
        .collect();

    let eval = |f: &dyn Fn(&Graph<f64>) -> Result<Var>| -> Result<f64> {
        let g = Graph::inference();
        let out = f(&g)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(CoreError::Verification("non-finite loss".into()));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for (param, grad) in store.params().iter().zip(&analytic) {
        let original = param.value();
        for i in 0..original.numel() {
            param.set(bump(&original, i, h));
            let fp = eval(&f)?;
            param.set(bump(&original, i, -h));
            let fm = eval(&f)?;
            param.set(original.clone());
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_exact() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        let err = finite_diff_check(
            |g, v| {
                let sq = g.mul(v, v)?;
                let s = g.mean_all(sq)?;
                g.mul_scalar(s, 2.0) // sum = mean * n
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::from_vec(&[3], vec![0.5, -0.25, 1.5]);
        let err = finite_diff_check(
            |g, v| {
                let zero = g.mul_scalar(v, 0.0)?;
                let s = g.mean_all(zero)?;
                g.add_scalar(s, 7.0)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn non_finite_output_is_a_verification_error() {
        let x = Tensor::scalar(800.0);
        let err = finite_diff_check(
            |g, v| {
                // exp(800) overflows f64 inside the graph, surfacing as an error.
                let doubled = g.mul(v, v)?;
                let s = g.mean_all(doubled)?;
                let huge = g.mul_scalar(s, f64::MAX)?;
                g.mul_scalar(huge, f64::MAX)
            },
            &x,
            DEFAULT_STEP,
        );
        assert!(err.is_err());
    }
}
