//! Loss functions. All reduce to the batch mean and return a scalar node.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

const BCE_EPS: f64 = 1e-7;
const NLL_EPS: f64 = 1e-12;

impl<S: Scalar> Graph<S> {
    /// Mean of -log softmax(logits)[target] over the batch, computed in
    /// log-sum-exp form.
    pub fn cross_entropy_from_logits(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = lv.dims2("cross_entropy")?;
        if targets.len() != rows {
            return Err(CoreError::Shape {
                op: "cross_entropy",
                msg: format!("{} targets for {rows} rows", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(CoreError::Shape {
                op: "cross_entropy",
                msg: format!("target index {bad} out of range for {cols} classes"),
            });
        }
        let mut loss = S::ZERO;
        let mut probs = vec![S::ZERO; rows * cols];
        for r in 0..rows {
            let row = &lv.data()[r * cols..(r + 1) * cols];
            let mut mx = row[0];
            for &v in row {
                mx = mx.maximum(v);
            }
            let mut denom = S::ZERO;
            for (p, &v) in probs[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                let e = (v - mx).exp();
                *p = e;
                denom += e;
            }
            for p in &mut probs[r * cols..(r + 1) * cols] {
                *p /= denom;
            }
            let lse = mx + denom.ln();
            loss += lse - row[targets[r]];
        }
        let inv_rows = S::from_f64(1.0 / rows as f64);
        let out = Tensor::scalar(loss * inv_rows);
        let targets = targets.to_vec();
        self.push_op("cross_entropy", out, &[logits], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let scale = g.item() * inv_rows;
                    let mut dl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        dl[r * cols + t] -= S::ONE;
                    }
                    for v in &mut dl {
                        *v *= scale;
                    }
                    Tensor::from_vec(&[rows, cols], dl)
                })]
            })
        })
    }

    /// Mean of -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-7, 1-1e-7].
    /// Targets are a constant tensor of zeros and ones.
    pub fn binary_cross_entropy(&self, p: Var, targets: &Tensor<S>) -> Result<Var> {
        let pv = self.value(p);
        if pv.shape() != targets.shape() {
            return Err(CoreError::Shape {
                op: "binary_cross_entropy",
                msg: format!("predictions {:?} vs targets {:?}", pv.shape(), targets.shape()),
            });
        }
        let eps = S::from_f64(BCE_EPS);
        let hi = S::ONE - eps;
        let n = pv.numel();
        let inv_n = S::from_f64(1.0 / n as f64);
        let mut loss = S::ZERO;
        for (&pi, &yi) in pv.data().iter().zip(targets.data()) {
            let pc = pi.maximum(eps).minimum(hi);
            loss += -(yi * pc.ln() + (S::ONE - yi) * (S::ONE - pc).ln());
        }
        let out = Tensor::scalar(loss * inv_n);
        let targets = targets.clone();
        self.push_op("binary_cross_entropy", out, &[p], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let scale = g.item() * inv_n;
                    let dp: Vec<S> = pv
                        .data()
                        .iter()
                        .zip(targets.data())
                        .map(|(&pi, &yi)| {
                            // Clamped values sit on a flat region of the loss.
                            if pi < eps || pi > hi {
                                S::ZERO
                            } else {
                                scale * (pi - yi) / (pi * (S::ONE - pi))
                            }
                        })
                        .collect();
                    Tensor::from_vec(pv.shape(), dp)
                })]
            })
        })
    }

    /// Mean of -ln(probs[target]) for rows that are already probabilities
    /// (used by the attention-weighted matching scores).
    pub fn nll_from_probs(&self, probs: Var, targets: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        let (rows, cols) = pv.dims2("nll_from_probs")?;
        if targets.len() != rows {
            return Err(CoreError::Shape {
                op: "nll_from_probs",
                msg: format!("{} targets for {rows} rows", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(CoreError::Shape {
                op: "nll_from_probs",
                msg: format!("target index {bad} out of range for {cols} classes"),
            });
        }
        let eps = S::from_f64(NLL_EPS);
        let inv_rows = S::from_f64(1.0 / rows as f64);
        let mut loss = S::ZERO;
        for (r, &t) in targets.iter().enumerate() {
            loss += -(pv.data()[r * cols + t].maximum(eps)).ln();
        }
        let out = Tensor::scalar(loss * inv_rows);
        let targets = targets.to_vec();
        self.push_op("nll_from_probs", out, &[probs], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let scale = g.item() * inv_rows;
                    let mut dp = vec![S::ZERO; rows * cols];
                    for (r, &t) in targets.iter().enumerate() {
                        let p = pv.data()[r * cols + t];
                        if p >= eps {
                            dp[r * cols + t] = -scale / p;
                        }
                    }
                    Tensor::from_vec(&[rows, cols], dp)
                })]
            })
        })
    }

    /// Hinge triplet loss: mean of max(d_pos - d_neg + margin, 0).
    pub fn triplet_loss(&self, d_pos: Var, d_neg: Var, margin: f64) -> Result<Var> {
        if margin < 0.0 {
            return Err(CoreError::Config(format!("triplet margin must be >= 0, got {margin}")));
        }
        let diff = self.sub(d_pos, d_neg)?;
        let shifted = self.add_scalar(diff, S::from_f64(margin))?;
        let hinged = self.relu(shifted)?;
        self.mean_all(hinged)
    }
}
