//! Layer building blocks: conv, batch norm, and linear, each owning its
//! parameters through the shared store.

use std::rc::Rc;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::ops::{BnState, Mode};
use crate::params::{ParamStore, Parameter};
use crate::rng::Pcg32;
use crate::tensor::{Scalar, Tensor};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Fan-in scaled normal init: std = 1/sqrt(fan_in).
fn init_normal<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Pcg32) -> Tensor<S> {
    let std = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| S::from_f64(rng.normal() * std))
}

#[derive(Debug)]
pub struct Conv2d<S> {
    pub weight: Rc<Parameter<S>>,
    pub bias: Rc<Parameter<S>>,
    pub stride: usize,
    pub padding: usize,
}

impl<S: Scalar> Conv2d<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Pcg32,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Conv2d {
            weight: store.add_param(
                &format!("{name}.weight"),
                init_normal(&[cout, cin, kernel, kernel], fan_in, rng),
            ),
            bias: store.add_param(&format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &Graph<S>, x: Var) -> Result<Var> {
        let w = g.bind(&self.weight);
        let b = g.bind(&self.bias);
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug)]
pub struct BatchNorm2d<S> {
    pub gamma: Rc<Parameter<S>>,
    pub beta: Rc<Parameter<S>>,
    pub state: BnState<S>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: store.add_param(&format!("{name}.gamma"), Tensor::full(&[channels], S::ONE)),
            beta: store.add_param(&format!("{name}.beta"), Tensor::zeros(&[channels])),
            state: BnState {
                mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
                var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], S::ONE)),
                count: store.add_buffer(&format!("{name}.batches"), Tensor::zeros(&[1])),
                momentum: BN_MOMENTUM,
                eps: BN_EPS,
            },
        }
    }

    pub fn forward(&self, g: &Graph<S>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.bind(&self.gamma);
        let beta = g.bind(&self.beta);
        g.batch_norm2d(x, gamma, beta, &self.state, mode)
    }
}

#[derive(Debug)]
pub struct Linear<S> {
    pub weight: Rc<Parameter<S>>,
    pub bias: Rc<Parameter<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, din: usize, dout: usize, rng: &mut Pcg32) -> Self {
        Linear {
            weight: store.add_param(&format!("{name}.weight"), init_normal(&[dout, din], din, rng)),
            bias: store.add_param(&format!("{name}.bias"), Tensor::zeros(&[dout])),
        }
    }

    pub fn forward(&self, g: &Graph<S>, x: Var) -> Result<Var> {
        let w = g.bind(&self.weight);
        let b = g.bind(&self.bias);
        g.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_scale_tracks_fan_in() {
        let mut rng = Pcg32::new(1, 1);
        let t: Tensor<f64> = init_normal(&[64, 16], 16, &mut rng);
        let var: f64 =
            t.data().iter().map(|&v| v * v).sum::<f64>() / t.numel() as f64;
        let expected = 1.0 / 16.0;
        assert!((var - expected).abs() < expected * 0.2, "var {var}");
    }

    #[test]
    fn conv_layer_registers_weight_and_bias() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let mut rng = Pcg32::new(2, 1);
        let conv = Conv2d::new(&mut store, "stem", 3, 8, 3, 1, 1, &mut rng);
        assert_eq!(conv.weight.shape(), vec![8, 3, 3, 3]);
        assert_eq!(store.params().len(), 2);
    }
}
