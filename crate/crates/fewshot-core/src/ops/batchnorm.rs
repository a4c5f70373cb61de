//! Batch normalization over the channel axis of [B,C,H,W] tensors.

use std::rc::Rc;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::ops::Mode;
use crate::params::Buffer;
use crate::tensor::{Scalar, Tensor};

/// Running statistics for one batch-norm instance. The buffers live in the
/// model's parameter store so checkpoints persist them.
#[derive(Debug, Clone)]
pub struct BnState<S> {
    pub mean: Rc<Buffer<S>>,
    pub var: Rc<Buffer<S>>,
    /// Number of batches folded into the running stats, stored as a
    /// single-element tensor so it rides along in checkpoints.
    pub count: Rc<Buffer<S>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<S: Scalar> BnState<S> {
    pub fn batches_tracked(&self) -> u64 {
        self.count.value().item().to_f64() as u64
    }
}

impl<S: Scalar> Graph<S> {
    /// Normalize per channel. Train mode uses batch statistics and folds them
    /// into the running stats; eval mode uses the frozen running stats.
    pub fn batch_norm2d(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BnState<S>,
        mode: Mode,
    ) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (batch, ch, h, w) = xv.dims4("batch_norm2d")?;
        if gv.shape() != [ch] || bv.shape() != [ch] {
            return Err(CoreError::Shape {
                op: "batch_norm2d",
                msg: format!("gamma {:?} / beta {:?} for {ch} channels", gv.shape(), bv.shape()),
            });
        }
        let plane = h * w;
        let m = batch * plane;
        let eps = S::from_f64(state.eps);

        let (mean, var) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(CoreError::Shape {
                        op: "batch_norm2d",
                        msg: format!("train mode needs B*H*W >= 2 per channel, got {m}"),
                    });
                }
                let mut mean = vec![S::ZERO; ch];
                let mut var = vec![S::ZERO; ch];
                let inv_m = S::from_f64(1.0 / m as f64);
                for c in 0..ch {
                    let mut sum = S::ZERO;
                    for b in 0..batch {
                        for &v in &xv.data()[(b * ch + c) * plane..][..plane] {
                            sum += v;
                        }
                    }
                    let mu = sum * inv_m;
                    let mut sq = S::ZERO;
                    for b in 0..batch {
                        for &v in &xv.data()[(b * ch + c) * plane..][..plane] {
                            let d = v - mu;
                            sq += d * d;
                        }
                    }
                    mean[c] = mu;
                    var[c] = sq * inv_m;
                }
                // Fold into running stats (unbiased variance, torch convention).
                let mom = state.momentum;
                let unbias = m as f64 / (m as f64 - 1.0);
                let rm = state.mean.value();
                let rv = state.var.value();
                let new_rm: Vec<S> = rm
                    .data()
                    .iter()
                    .zip(&mean)
                    .map(|(&r, &b)| S::from_f64(r.to_f64() * (1.0 - mom) + b.to_f64() * mom))
                    .collect();
                let new_rv: Vec<S> = rv
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(&r, &b)| S::from_f64(r.to_f64() * (1.0 - mom) + b.to_f64() * unbias * mom))
                    .collect();
                state.mean.set(Tensor::from_vec(&[ch], new_rm));
                state.var.set(Tensor::from_vec(&[ch], new_rv));
                state
                    .count
                    .set(Tensor::scalar(S::from_f64(state.count.value().item().to_f64() + 1.0)));
                (mean, var)
            }
            Mode::Eval => {
                if state.batches_tracked() == 0 {
                    return Err(CoreError::State(
                        "batch_norm2d: eval mode before any training batch".into(),
                    ));
                }
                (state.mean.value().data().to_vec(), state.var.value().data().to_vec())
            }
        };

        let invstd: Vec<S> = var.iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();
        let mut xhat = vec![S::ZERO; xv.numel()];
        let mut out = vec![S::ZERO; xv.numel()];
        for b in 0..batch {
            for c in 0..ch {
                let base = (b * ch + c) * plane;
                let (mu, istd, ga, be) = (mean[c], invstd[c], gv.data()[c], bv.data()[c]);
                for i in 0..plane {
                    let xh = (xv.data()[base + i] - mu) * istd;
                    xhat[base + i] = xh;
                    out[base + i] = ga * xh + be;
                }
            }
        }
        let xhat = Tensor::from_vec(xv.shape(), xhat);
        let out = Tensor::from_vec(xv.shape(), out);

        self.push_op("batch_norm2d", out, &[x, gamma, beta], || {
            #[allow(clippy::needless_range_loop)]
            Box::new(move |g, needs| {
                let inv_m = S::from_f64(1.0 / m as f64);
                // Per-channel reductions shared by all three gradients.
                let mut sum_g = vec![S::ZERO; ch];
                let mut sum_gx = vec![S::ZERO; ch];
                for b in 0..batch {
                    for c in 0..ch {
                        let base = (b * ch + c) * plane;
                        let mut sg = S::ZERO;
                        let mut sgx = S::ZERO;
                        for i in 0..plane {
                            let gi = g.data()[base + i];
                            sg += gi;
                            sgx += gi * xhat.data()[base + i];
                        }
                        sum_g[c] += sg;
                        sum_gx[c] += sgx;
                    }
                }
                let dx = needs[0].then(|| {
                    let mut dx = vec![S::ZERO; g.numel()];
                    match mode {
                        Mode::Train => {
                            for b in 0..batch {
                                for c in 0..ch {
                                    let base = (b * ch + c) * plane;
                                    let k = gv.data()[c] * invstd[c];
                                    let mg = sum_g[c] * inv_m;
                                    let mgx = sum_gx[c] * inv_m;
                                    for i in 0..plane {
                                        dx[base + i] = k
                                            * (g.data()[base + i] - mg - xhat.data()[base + i] * mgx);
                                    }
                                }
                            }
                        }
                        Mode::Eval => {
                            for b in 0..batch {
                                for c in 0..ch {
                                    let base = (b * ch + c) * plane;
                                    let k = gv.data()[c] * invstd[c];
                                    for i in 0..plane {
                                        dx[base + i] = k * g.data()[base + i];
                                    }
                                }
                            }
                        }
                    }
                    Tensor::from_vec(g.shape(), dx)
                });
                let dgamma = needs[1].then(|| Tensor::from_vec(&[ch], sum_gx.clone()));
                let dbeta = needs[2].then(|| Tensor::from_vec(&[ch], sum_g.clone()));
                vec![dx, dgamma, dbeta]
            })
        })
    }
}
