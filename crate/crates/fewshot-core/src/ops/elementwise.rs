//! Elementwise arithmetic and activations.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

fn check_same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::Shape {
            op,
            msg: format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        });
    }
    Ok(())
}

impl<S: Scalar> Graph<S> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("add", &av, &bv)?;
        let out = Tensor::from_vec(
            av.shape(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect(),
        );
        self.push_op("add", out, &[a, b], || {
            Box::new(|g, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| g.clone()),
                ]
            })
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("sub", &av, &bv)?;
        let out = Tensor::from_vec(
            av.shape(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect(),
        );
        self.push_op("sub", out, &[a, b], || {
            Box::new(|g, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| g.map(|x| -x)),
                ]
            })
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("mul", &av, &bv)?;
        let out = Tensor::from_vec(
            av.shape(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect(),
        );
        self.push_op("mul", out, &[a, b], || {
            let (av, bv) = (av.clone(), bv.clone());
            Box::new(move |g, needs| {
                let dx = |other: &Tensor<S>| {
                    Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(other.data()).map(|(&gi, &o)| gi * o).collect(),
                    )
                };
                vec![needs[0].then(|| dx(&bv)), needs[1].then(|| dx(&av))]
            })
        })
    }

    pub fn neg(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.map(|v| -v);
        self.push_op("neg", out, &[x], || {
            Box::new(|g, needs| vec![needs[0].then(|| g.map(|v| -v))])
        })
    }

    pub fn add_scalar(&self, x: Var, c: S) -> Result<Var> {
        let out = self.value(x).map(|v| v + c);
        self.push_op("add_scalar", out, &[x], || {
            Box::new(|g, needs| vec![needs[0].then(|| g.clone())])
        })
    }

    pub fn mul_scalar(&self, x: Var, c: S) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push_op("mul_scalar", out, &[x], || {
            Box::new(move |g, needs| vec![needs[0].then(|| g.map(|v| v * c))])
        })
    }

    /// max(0, x). The subgradient at exactly 0 is defined as 0.
    pub fn relu(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.map(|v| v.maximum(S::ZERO));
        self.push_op("relu", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(xv.data())
                            .map(|(&gi, &xi)| if xi > S::ZERO { gi } else { S::ZERO })
                            .collect(),
                    )
                })]
            })
        })
    }

    /// Logistic sigmoid, computed in the numerically stable branch form.
    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.map(|v| {
            if v >= S::ZERO {
                S::ONE / (S::ONE + (-v).exp())
            } else {
                let e = v.exp();
                e / (S::ONE + e)
            }
        });
        let y = out.clone();
        self.push_op("sigmoid", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gi, &yi)| gi * yi * (S::ONE - yi))
                            .collect(),
                    )
                })]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![-3.0, 0.0, 3.0]), false);
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0), false);
        let y = g.sigmoid(x).unwrap();
        assert!((g.value(y).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0), true);
        let y = g.sigmoid(x).unwrap();
        g.backward(y).unwrap();
        assert!((g.grad(x).unwrap().item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn nan_is_rejected() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::scalar(f64::MAX), false);
        // exp overflow inside sigmoid is handled by the stable form, so force
        // a NaN through 0 * inf instead.
        let inf = g.leaf(Tensor::scalar(f64::INFINITY), false);
        let zero = g.leaf(Tensor::scalar(0.0), false);
        assert!(matches!(g.mul(inf, zero), Err(CoreError::NonFinite { .. })));
        let _ = x;
    }

    #[test]
    fn mul_backward() {
        let g: Graph<f64> = Graph::new();
        let a = g.leaf(Tensor::from_vec(&[2], vec![2.0, 3.0]), true);
        let b = g.leaf(Tensor::from_vec(&[2], vec![5.0, 7.0]), true);
        let y = g.mul(a, b).unwrap();
        let s = g.mean_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[2.5, 3.5]);
        assert_eq!(g.grad(b).unwrap().data(), &[1.0, 1.5]);
    }
}
