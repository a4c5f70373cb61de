//! Shape manipulation: reshape, dim-0 slicing/tiling, channel concat.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

impl<S: Scalar> Graph<S> {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let old_shape = xv.shape().to_vec();
        let out = xv.reshaped(shape)?;
        self.push_op("reshape", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| g.reshaped(&old_shape).expect("reshape backward"))]
            })
        })
    }

    /// Rows `start..end` along dim 0 (any rank).
    pub fn slice_rows(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let rows = *xv.shape().first().unwrap_or(&0);
        if start > end || end > rows {
            return Err(CoreError::Shape {
                op: "slice_rows",
                msg: format!("range {start}..{end} out of 0..{rows}"),
            });
        }
        let row_size = xv.numel() / rows.max(1);
        let mut shape = xv.shape().to_vec();
        shape[0] = end - start;
        let out = Tensor::from_vec(&shape, xv.data()[start * row_size..end * row_size].to_vec());
        let full_shape = xv.shape().to_vec();
        self.push_op("slice_rows", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut dx = vec![S::ZERO; full_shape.iter().product()];
                    dx[start * row_size..end * row_size].copy_from_slice(g.data());
                    Tensor::from_vec(&full_shape, dx)
                })]
            })
        })
    }

    /// Each dim-0 row repeated `times` consecutively:
    /// output row `r * times + t` equals input row `r`.
    pub fn repeat_interleave_rows(&self, x: Var, times: usize) -> Result<Var> {
        let xv = self.value(x);
        let rows = *xv.shape().first().unwrap_or(&0);
        let row_size = xv.numel() / rows.max(1);
        let mut shape = xv.shape().to_vec();
        shape[0] = rows * times;
        let mut data = Vec::with_capacity(xv.numel() * times);
        for r in 0..rows {
            let row = &xv.data()[r * row_size..(r + 1) * row_size];
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let out = Tensor::from_vec(&shape, data);
        let in_shape = xv.shape().to_vec();
        self.push_op("repeat_interleave_rows", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut dx = vec![S::ZERO; in_shape.iter().product()];
                    for r in 0..rows {
                        for t in 0..times {
                            let src = &g.data()[(r * times + t) * row_size..][..row_size];
                            for (d, &s) in dx[r * row_size..][..row_size].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    Tensor::from_vec(&in_shape, dx)
                })]
            })
        })
    }

    /// The whole tensor tiled `times` along dim 0:
    /// output row `t * rows + r` equals input row `r`.
    pub fn tile_rows(&self, x: Var, times: usize) -> Result<Var> {
        let xv = self.value(x);
        let rows = *xv.shape().first().unwrap_or(&0);
        let mut shape = xv.shape().to_vec();
        shape[0] = rows * times;
        let mut data = Vec::with_capacity(xv.numel() * times);
        for _ in 0..times {
            data.extend_from_slice(xv.data());
        }
        let out = Tensor::from_vec(&shape, data);
        let in_shape = xv.shape().to_vec();
        let in_numel = xv.numel();
        self.push_op("tile_rows", out, &[x], || {
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut dx = vec![S::ZERO; in_numel];
                    for t in 0..times {
                        for (d, &s) in dx.iter_mut().zip(&g.data()[t * in_numel..][..in_numel]) {
                            *d += s;
                        }
                    }
                    Tensor::from_vec(&in_shape, dx)
                })]
            })
        })
    }

    /// Concatenate two feature maps along the channel axis:
    /// [B,Ca,H,W] ++ [B,Cb,H,W] -> [B,Ca+Cb,H,W].
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ba, ca, h, w) = av.dims4("concat_channels")?;
        let (bb, cb, hb, wb) = bv.dims4("concat_channels")?;
        if ba != bb || h != hb || w != wb {
            return Err(CoreError::Shape {
                op: "concat_channels",
                msg: format!("incompatible shapes {:?} and {:?}", av.shape(), bv.shape()),
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity((ca + cb) * ba * plane);
        for i in 0..ba {
            data.extend_from_slice(&av.data()[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&bv.data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let out = Tensor::from_vec(&[ba, ca + cb, h, w], data);
        self.push_op("concat_channels", out, &[a, b], || {
            Box::new(move |g, needs| {
                let split = |first: bool| {
                    let c = if first { ca } else { cb };
                    let mut dx = Vec::with_capacity(ba * c * plane);
                    for i in 0..ba {
                        let base = i * (ca + cb) * plane + if first { 0 } else { ca * plane };
                        dx.extend_from_slice(&g.data()[base..base + c * plane]);
                    }
                    Tensor::from_vec(&[ba, c, h, w], dx)
                };
                vec![needs[0].then(|| split(true)), needs[1].then(|| split(false))]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_and_backward() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[3, 2], vec![1., 2., 3., 4., 5., 6.]), true);
        let s = g.slice_rows(x, 1, 3).unwrap();
        assert_eq!(g.value(s).data(), &[3., 4., 5., 6.]);
        let m = g.mean_all(s).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0., 0., 0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn repeat_and_tile_layouts() {
        let g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 1], vec![1., 2.]), false);
        let r = g.repeat_interleave_rows(x, 2).unwrap();
        assert_eq!(g.value(r).data(), &[1., 1., 2., 2.]);
        let t = g.tile_rows(x, 2).unwrap();
        assert_eq!(g.value(t).data(), &[1., 2., 1., 2.]);
    }

    #[test]
    fn concat_channels_doubles_channel_count() {
        let g: Graph<f64> = Graph::new();
        let a = g.leaf(Tensor::full(&[1, 2, 2, 2], 1.0), false);
        let b = g.leaf(Tensor::full(&[1, 3, 2, 2], 2.0), false);
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape_of(c), vec![1, 5, 2, 2]);
        let v = g.value(c);
        assert_eq!(&v.data()[..8], &[1.0; 8]);
        assert_eq!(&v.data()[8..], &[2.0; 12]);
    }
}
