//! Matrix products and the affine layer.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// C[m,n] += A[m,k] * B[k,n]
fn mm_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (l, &al) in a_row.iter().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += al * bv;
            }
        }
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T
fn mm_nt_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = S::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n]
fn mm_tn_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (l, &al) in a_row.iter().enumerate() {
            let c_row = &mut c[l * n..(l + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += al * bv;
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// out = a @ b for a: [M,K], b: [K,N].
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (kb, n) = bv.dims2("matmul")?;
        if k != kb {
            return Err(CoreError::Shape {
                op: "matmul",
                msg: format!("inner dims differ: [{m},{k}] x [{kb},{n}]"),
            });
        }
        let mut out = vec![S::ZERO; m * n];
        mm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let out = Tensor::from_vec(&[m, n], out);
        self.push_op("matmul", out, &[a, b], || {
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    // dA = g @ B^T
                    let mut da = vec![S::ZERO; m * k];
                    mm_nt_acc(g.data(), bv.data(), &mut da, m, n, k);
                    Tensor::from_vec(&[m, k], da)
                });
                let db = needs[1].then(|| {
                    // dB = A^T @ g
                    let mut db = vec![S::ZERO; k * n];
                    mm_tn_acc(av.data(), g.data(), &mut db, m, k, n);
                    Tensor::from_vec(&[k, n], db)
                });
                vec![da, db]
            })
        })
    }

    /// out = a @ b^T for a: [M,K], b: [N,K]. Used for similarity matrices.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul_nt")?;
        let (n, kb) = bv.dims2("matmul_nt")?;
        if k != kb {
            return Err(CoreError::Shape {
                op: "matmul_nt",
                msg: format!("inner dims differ: [{m},{k}] x [{n},{kb}]^T"),
            });
        }
        let mut out = vec![S::ZERO; m * n];
        mm_nt_acc(av.data(), bv.data(), &mut out, m, k, n);
        let out = Tensor::from_vec(&[m, n], out);
        self.push_op("matmul_nt", out, &[a, b], || {
            Box::new(move |g, needs| {
                let da = needs[0].then(|| {
                    // dA = g @ B
                    let mut da = vec![S::ZERO; m * k];
                    mm_acc(g.data(), bv.data(), &mut da, m, n, k);
                    Tensor::from_vec(&[m, k], da)
                });
                let db = needs[1].then(|| {
                    // dB = g^T @ A
                    let mut db = vec![S::ZERO; n * k];
                    mm_tn_acc(g.data(), av.data(), &mut db, m, n, k);
                    Tensor::from_vec(&[n, k], db)
                });
                vec![da, db]
            })
        })
    }

    /// Affine layer y = x @ w^T + bias for x: [B,Din], w: [Dout,Din].
    pub fn linear(&self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        let (batch, din) = xv.dims2("linear")?;
        let (dout, din_w) = wv.dims2("linear")?;
        if din != din_w || bv.shape() != [dout] {
            return Err(CoreError::Shape {
                op: "linear",
                msg: format!(
                    "x {:?} w {:?} bias {:?} are inconsistent",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                ),
            });
        }
        let mut out = Vec::with_capacity(batch * dout);
        for _ in 0..batch {
            out.extend_from_slice(bv.data());
        }
        mm_nt_acc(xv.data(), wv.data(), &mut out, batch, din, dout);
        let out = Tensor::from_vec(&[batch, dout], out);
        self.push_op("linear", out, &[x, weight, bias], || {
            Box::new(move |g, needs| {
                let dx = needs[0].then(|| {
                    let mut dx = vec![S::ZERO; batch * din];
                    mm_acc(g.data(), wv.data(), &mut dx, batch, dout, din);
                    Tensor::from_vec(&[batch, din], dx)
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![S::ZERO; dout * din];
                    mm_tn_acc(g.data(), xv.data(), &mut dw, batch, dout, din);
                    Tensor::from_vec(&[dout, din], dw)
                });
                let db = needs[2].then(|| {
                    let mut db = vec![S::ZERO; dout];
                    for r in 0..batch {
                        for (d, &gv) in db.iter_mut().zip(&g.data()[r * dout..(r + 1) * dout]) {
                            *d += gv;
                        }
                    }
                    Tensor::from_vec(&[dout], db)
                });
                vec![dx, dw, db]
            })
        })
    }
}
