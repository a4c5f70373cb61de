//! 2-d convolution, max pooling, and global average pooling.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Output extent along one spatial axis.
fn conv_out(in_size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (in_size + 2 * pad - k) / stride + 1
}

/// Range of output indices `o` with `0 <= o*stride + k - pad < in_size`.
fn valid_range(k: usize, pad: usize, stride: usize, in_size: usize, out_size: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    if in_size + pad <= k {
        return (0, 0);
    }
    let hi = ((in_size - 1 + pad - k) / stride + 1).min(out_size);
    (lo, hi.max(lo))
}

struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

fn conv_forward<S: Scalar>(x: &[S], wt: &[S], bias: &[S], d: &ConvDims) -> Vec<S> {
    let mut out = vec![S::ZERO; d.batch * d.cout * d.ho * d.wo];
    let plane_in = d.h * d.w;
    let plane_out = d.ho * d.wo;
    for b in 0..d.batch {
        for co in 0..d.cout {
            let out_plane = &mut out[(b * d.cout + co) * plane_out..][..plane_out];
            let bv = bias[co];
            for v in out_plane.iter_mut() {
                *v = bv;
            }
            for ci in 0..d.cin {
                let in_plane = &x[(b * d.cin + ci) * plane_in..][..plane_in];
                let w_base = ((co * d.cin + ci) * d.kh) * d.kw;
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, d.pad, d.stride, d.h, d.ho);
                    for kx in 0..d.kw {
                        let wv = wt[w_base + ky * d.kw + kx];
                        let (ox_lo, ox_hi) = valid_range(kx, d.pad, d.stride, d.w, d.wo);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * d.stride + ky - d.pad;
                            let in_row = &in_plane[iy * d.w..][..d.w];
                            let out_row = &mut out_plane[oy * d.wo..][..d.wo];
                            for ox in ox_lo..ox_hi {
                                out_row[ox] += wv * in_row[ox * d.stride + kx - d.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_grad_weight<S: Scalar>(x: &[S], g: &[S], d: &ConvDims) -> Vec<S> {
    let mut dw = vec![S::ZERO; d.cout * d.cin * d.kh * d.kw];
    let plane_in = d.h * d.w;
    let plane_out = d.ho * d.wo;
    for b in 0..d.batch {
        for co in 0..d.cout {
            let g_plane = &g[(b * d.cout + co) * plane_out..][..plane_out];
            for ci in 0..d.cin {
                let in_plane = &x[(b * d.cin + ci) * plane_in..][..plane_in];
                let w_base = (co * d.cin + ci) * d.kh * d.kw;
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, d.pad, d.stride, d.h, d.ho);
                    for kx in 0..d.kw {
                        let (ox_lo, ox_hi) = valid_range(kx, d.pad, d.stride, d.w, d.wo);
                        let mut acc = S::ZERO;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * d.stride + ky - d.pad;
                            let in_row = &in_plane[iy * d.w..][..d.w];
                            let g_row = &g_plane[oy * d.wo..][..d.wo];
                            for ox in ox_lo..ox_hi {
                                acc += g_row[ox] * in_row[ox * d.stride + kx - d.pad];
                            }
                        }
                        dw[w_base + ky * d.kw + kx] += acc;
                    }
                }
            }
        }
    }
    dw
}

fn conv_grad_input<S: Scalar>(wt: &[S], g: &[S], d: &ConvDims) -> Vec<S> {
    let mut dx = vec![S::ZERO; d.batch * d.cin * d.h * d.w];
    let plane_in = d.h * d.w;
    let plane_out = d.ho * d.wo;
    for b in 0..d.batch {
        for co in 0..d.cout {
            let g_plane = &g[(b * d.cout + co) * plane_out..][..plane_out];
            for ci in 0..d.cin {
                let dx_plane = &mut dx[(b * d.cin + ci) * plane_in..][..plane_in];
                let w_base = (co * d.cin + ci) * d.kh * d.kw;
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, d.pad, d.stride, d.h, d.ho);
                    for kx in 0..d.kw {
                        let wv = wt[w_base + ky * d.kw + kx];
                        let (ox_lo, ox_hi) = valid_range(kx, d.pad, d.stride, d.w, d.wo);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * d.stride + ky - d.pad;
                            let dx_row = &mut dx_plane[iy * d.w..][..d.w];
                            let g_row = &g_plane[oy * d.wo..][..d.wo];
                            for ox in ox_lo..ox_hi {
                                dx_row[ox * d.stride + kx - d.pad] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

impl<S: Scalar> Graph<S> {
    /// 2-d cross-correlation with bias.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        let (batch, cin, h, w) = xv.dims4("conv2d")?;
        let (cout, cin_w, kh, kw) = wv.dims4("conv2d")?;
        if stride < 1 {
            return Err(CoreError::Config("conv2d: stride must be >= 1".into()));
        }
        if cin != cin_w {
            return Err(CoreError::Shape {
                op: "conv2d",
                msg: format!("input channels {cin} != weight channels {cin_w}"),
            });
        }
        if bv.shape() != [cout] {
            return Err(CoreError::Shape {
                op: "conv2d",
                msg: format!("bias shape {:?}, expected [{cout}]", bv.shape()),
            });
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(CoreError::Shape {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * pad, w + 2 * pad),
            });
        }
        let (ho, wo) = (conv_out(h, kh, stride, pad), conv_out(w, kw, stride, pad));
        let dims = ConvDims { batch, cin, h, w, cout, kh, kw, ho, wo, stride, pad };
        let out = Tensor::from_vec(&[batch, cout, ho, wo], conv_forward(xv.data(), wv.data(), bv.data(), &dims));
        self.push_op("conv2d", out, &[x, weight, bias], || {
            Box::new(move |g, needs| {
                let dx = needs[0].then(|| {
                    Tensor::from_vec(&[batch, cin, h, w], conv_grad_input(wv.data(), g.data(), &dims))
                });
                let dw = needs[1].then(|| {
                    Tensor::from_vec(&[cout, cin, kh, kw], conv_grad_weight(xv.data(), g.data(), &dims))
                });
                let db = needs[2].then(|| {
                    let plane = ho * wo;
                    let mut db = vec![S::ZERO; cout];
                    for b in 0..batch {
                        for (co, dbv) in db.iter_mut().enumerate() {
                            for &gv in &g.data()[(b * cout + co) * plane..][..plane] {
                                *dbv += gv;
                            }
                        }
                    }
                    Tensor::from_vec(&[cout], db)
                });
                vec![dx, dw, db]
            })
        })
    }

    /// Max pooling. Gradient routes to the argmax cell only; on ties the
    /// first cell in (ky, kx) scan order wins.
    pub fn max_pool2d(&self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let (batch, ch, h, w) = xv.dims4("max_pool2d")?;
        if h < k || w < k {
            return Err(CoreError::Shape {
                op: "max_pool2d",
                msg: format!("input {h}x{w} smaller than window {k}x{k}"),
            });
        }
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let plane_in = h * w;
        let plane_out = ho * wo;
        let mut out = vec![S::ZERO; batch * ch * plane_out];
        let mut argmax = vec![0usize; batch * ch * plane_out];
        for bc in 0..batch * ch {
            let in_plane = &xv.data()[bc * plane_in..][..plane_in];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best_idx = oy * stride * w + ox * stride;
                    let mut best = in_plane[best_idx];
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = (oy * stride + ky) * w + ox * stride + kx;
                            if in_plane[idx] > best {
                                best = in_plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[bc * plane_out + oy * wo + ox] = best;
                    argmax[bc * plane_out + oy * wo + ox] = best_idx;
                }
            }
        }
        let out = Tensor::from_vec(&[batch, ch, ho, wo], out);
        self.push_op("max_pool2d", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut dx = vec![S::ZERO; batch * ch * plane_in];
                    for bc in 0..batch * ch {
                        for o in 0..plane_out {
                            dx[bc * plane_in + argmax[bc * plane_out + o]] +=
                                g.data()[bc * plane_out + o];
                        }
                    }
                    Tensor::from_vec(&[batch, ch, h, w], dx)
                })]
            })
        })
    }

    /// Mean over the spatial extent: [B,C,H,W] -> [B,C].
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (batch, ch, h, w) = xv.dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = S::from_f64(1.0 / plane as f64);
        let mut out = vec![S::ZERO; batch * ch];
        for (bc, o) in out.iter_mut().enumerate() {
            let mut acc = S::ZERO;
            for &v in &xv.data()[bc * plane..][..plane] {
                acc += v;
            }
            *o = acc * inv;
        }
        let out = Tensor::from_vec(&[batch, ch], out);
        self.push_op("global_avg_pool", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut dx = vec![S::ZERO; batch * ch * plane];
                    for bc in 0..batch * ch {
                        let gv = g.data()[bc] * inv;
                        for v in &mut dx[bc * plane..][..plane] {
                            *v = gv;
                        }
                    }
                    Tensor::from_vec(&[batch, ch, h, w], dx)
                })]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_input_through() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]), false);
        let w = g.leaf(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]), false);
        let b = g.leaf(Tensor::zeros(&[1]), false);
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn ones_kernel_on_constant_field() {
        let g: Graph<f64> = Graph::new();
        let c = 0.7;
        let x = g.leaf(Tensor::full(&[1, 1, 5, 5], c), false);
        let w = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false);
        let b = g.leaf(Tensor::zeros(&[1]), false);
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 9.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1, 1, 2, 2]), false);
        let w = g.leaf(Tensor::zeros(&[1, 1, 3, 3]), false);
        let b = g.leaf(Tensor::zeros(&[1]), false);
        assert!(matches!(g.conv2d(x, w, b, 1, 0), Err(CoreError::Shape { .. })));
    }

    #[test]
    fn maxpool_basic_and_tie_rule() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]), true);
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);

        // All-equal window: gradient goes to the first cell only.
        let g2: Graph<f64> = Graph::new();
        let x2 = g2.leaf(Tensor::full(&[1, 1, 2, 2], 5.0), true);
        let y2 = g2.max_pool2d(x2, 2, 2).unwrap();
        let m = g2.mean_all(y2).unwrap();
        g2.backward(m).unwrap();
        assert_eq!(g2.grad(x2).unwrap().data(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn maxpool_constant_input_stays_constant() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 2, 4, 4], 3.25), false);
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn gap_mean_and_backward_spread() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]), true);
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
        let s = g.mean_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.25, 0.25, 0.25, 0.25]);
    }
}
