//! Row-wise normalization, softmax, distances, and reductions.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

const L2_EPS: f64 = 1e-12;

impl<S: Scalar> Graph<S> {
    /// Row-wise softmax of a [B,N] tensor, computed with max subtraction.
    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("softmax_rows")?;
        if cols == 0 {
            return Err(CoreError::Shape { op: "softmax_rows", msg: "empty rows".into() });
        }
        let mut out = vec![S::ZERO; rows * cols];
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let mut mx = row[0];
            for &v in row {
                mx = mx.maximum(v);
            }
            let mut denom = S::ZERO;
            for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                let e = (v - mx).exp();
                *o = e;
                denom += e;
            }
            for o in &mut out[r * cols..(r + 1) * cols] {
                *o /= denom;
            }
        }
        let out = Tensor::from_vec(&[rows, cols], out);
        let y = out.clone();
        self.push_op("softmax_rows", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut dx = vec![S::ZERO; rows * cols];
                    for r in 0..rows {
                        let yr = &y.data()[r * cols..(r + 1) * cols];
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let mut dot = S::ZERO;
                        for (&yv, &gv) in yr.iter().zip(gr) {
                            dot += yv * gv;
                        }
                        for ((d, &yv), &gv) in dx[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    Tensor::from_vec(&[rows, cols], dx)
                })]
            })
        })
    }

    /// Row-wise L2 normalization. The denominator carries +1e-12 so zero
    /// rows map to zero instead of NaN.
    pub fn l2_normalize_rows(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2("l2_normalize_rows")?;
        let eps = S::from_f64(L2_EPS);
        let mut out = vec![S::ZERO; rows * cols];
        let mut norms = vec![S::ZERO; rows];
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let mut sq = S::ZERO;
            for &v in row {
                sq += v * v;
            }
            let n = sq.sqrt();
            norms[r] = n;
            let inv = S::ONE / (n + eps);
            for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = v * inv;
            }
        }
        let out = Tensor::from_vec(&[rows, cols], out);
        self.push_op("l2_normalize_rows", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut dx = vec![S::ZERO; rows * cols];
                    for r in 0..rows {
                        let row = &xv.data()[r * cols..(r + 1) * cols];
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let n = norms[r];
                        let d = n + eps;
                        let mut xg = S::ZERO;
                        for (&xi, &gi) in row.iter().zip(gr) {
                            xg += xi * gi;
                        }
                        // d/dx [x / (|x|+eps)] = I/(|x|+eps) - x x^T / ((|x|+eps)^2 |x|);
                        // the rank-one term vanishes as |x| -> 0.
                        let scale = if n > S::ZERO { xg / (d * d * n) } else { S::ZERO };
                        for ((dxi, &xi), &gi) in
                            dx[r * cols..(r + 1) * cols].iter_mut().zip(row).zip(gr)
                        {
                            *dxi = gi / d - xi * scale;
                        }
                    }
                    Tensor::from_vec(&[rows, cols], dx)
                })]
            })
        })
    }

    /// Squared Euclidean distances between all row pairs:
    /// a: [Q,D], b: [N,D] -> [Q,N].
    pub fn pairwise_sq_dist(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (q, d) = av.dims2("pairwise_sq_dist")?;
        let (n, db) = bv.dims2("pairwise_sq_dist")?;
        if d != db {
            return Err(CoreError::Shape {
                op: "pairwise_sq_dist",
                msg: format!("feature dims differ: {d} vs {db}"),
            });
        }
        let mut out = vec![S::ZERO; q * n];
        for i in 0..q {
            let ar = &av.data()[i * d..(i + 1) * d];
            for j in 0..n {
                let br = &bv.data()[j * d..(j + 1) * d];
                let mut acc = S::ZERO;
                for (&x, &y) in ar.iter().zip(br) {
                    let diff = x - y;
                    acc += diff * diff;
                }
                out[i * n + j] = acc;
            }
        }
        let out = Tensor::from_vec(&[q, n], out);
        self.push_op("pairwise_sq_dist", out, &[a, b], || {
            let two = S::from_f64(2.0);
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    let mut da = vec![S::ZERO; q * d];
                    for i in 0..q {
                        let ar = &av.data()[i * d..(i + 1) * d];
                        for j in 0..n {
                            let br = &bv.data()[j * d..(j + 1) * d];
                            let gv = g.data()[i * n + j] * two;
                            for ((dst, &x), &y) in
                                da[i * d..(i + 1) * d].iter_mut().zip(ar).zip(br)
                            {
                                *dst += gv * (x - y);
                            }
                        }
                    }
                    Tensor::from_vec(&[q, d], da)
                });
                let dbt = needs[1].then(|| {
                    let mut dbm = vec![S::ZERO; n * d];
                    for i in 0..q {
                        let ar = &av.data()[i * d..(i + 1) * d];
                        for j in 0..n {
                            let br = &bv.data()[j * d..(j + 1) * d];
                            let gv = g.data()[i * n + j] * two;
                            for ((dst, &y), &x) in
                                dbm[j * d..(j + 1) * d].iter_mut().zip(br).zip(ar)
                            {
                                *dst += gv * (y - x);
                            }
                        }
                    }
                    Tensor::from_vec(&[n, d], dbm)
                });
                vec![da, dbt]
            })
        })
    }

    /// Squared Euclidean distance between paired rows: [B,D] x [B,D] -> [B].
    #[allow(clippy::needless_range_loop)]
    pub fn rowwise_sq_dist(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (rows, d) = av.dims2("rowwise_sq_dist")?;
        if bv.shape() != [rows, d] {
            return Err(CoreError::Shape {
                op: "rowwise_sq_dist",
                msg: format!("shapes {:?} and {:?} differ", av.shape(), bv.shape()),
            });
        }
        let mut out = vec![S::ZERO; rows];
        for r in 0..rows {
            let mut acc = S::ZERO;
            for (&x, &y) in av.data()[r * d..(r + 1) * d]
                .iter()
                .zip(&bv.data()[r * d..(r + 1) * d])
            {
                let diff = x - y;
                acc += diff * diff;
            }
            out[r] = acc;
        }
        let out = Tensor::from_vec(&[rows], out);
        self.push_op("rowwise_sq_dist", out, &[a, b], || {
            let two = S::from_f64(2.0);
            Box::new(move |g, needs| {
                let grad_for = |flip: bool| {
                    let mut dx = vec![S::ZERO; rows * d];
                    for r in 0..rows {
                        let gv = g.data()[r] * two;
                        for ((dst, &x), &y) in dx[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(&av.data()[r * d..(r + 1) * d])
                            .zip(&bv.data()[r * d..(r + 1) * d])
                        {
                            let diff = if flip { y - x } else { x - y };
                            *dst = gv * diff;
                        }
                    }
                    Tensor::from_vec(&[rows, d], dx)
                };
                vec![
                    needs[0].then(|| grad_for(false)),
                    needs[1].then(|| grad_for(true)),
                ]
            })
        })
    }

    /// Mean over all elements, as a scalar tensor of shape [1].
    pub fn mean_all(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.numel();
        if n == 0 {
            return Err(CoreError::Shape { op: "mean_all", msg: "empty tensor".into() });
        }
        let inv = S::from_f64(1.0 / n as f64);
        let mut acc = S::ZERO;
        for &v in xv.data() {
            acc += v;
        }
        let out = Tensor::scalar(acc * inv);
        let shape = xv.shape().to_vec();
        self.push_op("mean_all", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| Tensor::full(&shape, g.item() * inv))]
            })
        })
    }
}
