//! Convolutions lowered to GEMM through explicit im2col / col2im.
//!
//! Images are `[B, C, H, W]`. Conv weights are `[C_out, C_in, k, k]`;
//! transposed-conv weights are `[C_in, C_out, k, k]`. Batch items are
//! processed in parallel; each writes a disjoint output slice and weight
//! gradients are reduced in batch order, so results do not depend on thread
//! scheduling.

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatLayout, Scalar};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Square kernel geometry shared by both convolution directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(TensorError::Config(format!("kernel and stride must be positive (k={kernel}, s={stride})")));
        }
        Ok(Self { kernel, stride, pad })
    }

    /// Output extent of a forward convolution, if positive.
    pub fn conv_out(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution: `(n - 1)·s - 2·p + k`.
    pub fn transposed_out(&self, size: usize) -> Option<usize> {
        ((size - 1) * self.stride + self.kernel).checked_sub(2 * self.pad).filter(|&v| v > 0)
    }
}

/// Unfolds one `[C, H, W]` image into `[C·k·k, Ho·Wo]` columns.
pub fn im2col<E: Scalar>(img: &[E], c: usize, h: usize, w: usize, geo: ConvGeometry, ho: usize, wo: usize) -> Vec<E> {
    let k = geo.kernel;
    let l = ho * wo;
    let mut cols = vec![E::zero(); c * k * k * l];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..ho {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &img[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds `[C·k·k, Ho·Wo]` columns into `[C, H, W]`.
pub fn col2im<E: Scalar>(cols: &[E], c: usize, h: usize, w: usize, geo: ConvGeometry, ho: usize, wo: usize) -> Vec<E> {
    let k = geo.kernel;
    let l = ho * wo;
    let mut img = vec![E::zero(); c * h * w];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..ho {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            img[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    img
}

fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        &[b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(TensorError::Invalid { op, msg: format!("expected [B, C, H, W], got {shape:?}") }),
    }
}

fn sum_partials<E: Scalar>(parts: Vec<Vec<E>>, len: usize) -> Vec<E> {
    let mut acc = vec![E::zero(); len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

fn bias_grad<E: Scalar>(g: &[E], b: usize, c: usize, l: usize) -> Vec<E> {
    let mut d = vec![E::zero(); c];
    for bi in 0..b {
        for (ci, dc) in d.iter_mut().enumerate() {
            *dc += g[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter().copied().sum::<E>();
        }
    }
    d
}

fn add_bias<E: Scalar>(out: &mut [E], bias: &[E], l: usize) {
    for (ci, chunk) in out.chunks_mut(l).enumerate() {
        let bv = bias[ci % bias.len()];
        for v in chunk {
            *v += bv;
        }
    }
}

impl<E: Scalar> Tape<E> {
    /// 2-D convolution `[B, Cin, H, W] * [Cout, Cin, k, k] (+ bias[Cout])`.
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, geo: ConvGeometry) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let (_, cin, h, w) = image_dims("conv2d", &xs)?;
        let mismatch = || TensorError::ShapeMismatch { op: "conv2d", lhs: xs.clone(), rhs: ws.clone() };
        if ws.len() != 4 || ws[1] != cin || ws[2] != geo.kernel || ws[3] != geo.kernel {
            return Err(mismatch());
        }
        let cout = ws[0];
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: ws.clone(), rhs: self.shape(b) });
            }
        }
        let (ho, wo) = match (geo.conv_out(h), geo.conv_out(w)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(TensorError::Invalid { op: "conv2d", msg: format!("kernel {geo:?} larger than padded input {h}x{w}") }),
        };
        let ckk = cin * geo.kernel * geo.kernel;
        let l = ho * wo;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record(
            &inputs,
            move |v| {
                let (x, wt) = (v[0], v[1]);
                let b = x.shape()[0];
                let mut out = vec![E::zero(); b * cout * l];
                out.par_chunks_mut(cout * l).enumerate().for_each(|(bi, o)| {
                    let cols = im2col(&x.data()[bi * cin * h * w..(bi + 1) * cin * h * w], cin, h, w, geo, ho, wo);
                    gemm(E::one(), wt.data(), MatLayout::rows(cout, ckk), &cols, MatLayout::rows(ckk, l), E::zero(), o);
                });
                if let Some(bias) = v.get(2) {
                    add_bias(&mut out, bias.data(), l);
                }
                Ok(Tensor::from_parts(vec![b, cout, ho, wo], out))
            },
            move |c| {
                let (x, wt) = (c.inputs[0], c.inputs[1]);
                let b = x.shape()[0];
                let g = c.grad.data();
                let per_item: Vec<(Option<Vec<E>>, Option<Vec<E>>)> = (0..b)
                    .into_par_iter()
                    .map(|bi| {
                        let gb = &g[bi * cout * l..(bi + 1) * cout * l];
                        let dw = c.needs[1].then(|| {
                            let cols = im2col(&x.data()[bi * cin * h * w..(bi + 1) * cin * h * w], cin, h, w, geo, ho, wo);
                            let mut d = vec![E::zero(); cout * ckk];
                            gemm(E::one(), gb, MatLayout::rows(cout, l), &cols, MatLayout::transposed(ckk, l), E::zero(), &mut d);
                            d
                        });
                        let dx = c.needs[0].then(|| {
                            let mut dcols = vec![E::zero(); ckk * l];
                            gemm(E::one(), wt.data(), MatLayout::transposed(cout, ckk), gb, MatLayout::rows(cout, l), E::zero(), &mut dcols);
                            col2im(&dcols, cin, h, w, geo, ho, wo)
                        });
                        (dx, dw)
                    })
                    .collect();
                let (dxs, dws): (Vec<_>, Vec<_>) = per_item.into_iter().unzip();
                let dx = c.needs[0].then(|| Tensor::from_parts(x.shape().to_vec(), dxs.into_iter().flatten().flatten().collect()));
                let dw = c.needs[1].then(|| Tensor::from_parts(wt.shape().to_vec(), sum_partials(dws.into_iter().flatten().collect(), cout * ckk)));
                let mut grads = vec![dx, dw];
                if c.inputs.len() == 3 {
                    grads.push(c.needs[2].then(|| Tensor::from_parts(vec![cout], bias_grad(g, b, cout, l))));
                }
                Ok(grads)
            },
        )
    }

    /// Transposed convolution `[B, Cin, H, W] -> [B, Cout, (H-1)s-2p+k, (W-1)s-2p+k]`
    /// with weight `[Cin, Cout, k, k]`.
    pub fn conv_transpose2d(&self, x: Var, weight: Var, bias: Option<Var>, geo: ConvGeometry) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let (_, cin, h, w) = image_dims("conv_transpose2d", &xs)?;
        if ws.len() != 4 || ws[0] != cin || ws[2] != geo.kernel || ws[3] != geo.kernel {
            return Err(TensorError::ShapeMismatch { op: "conv_transpose2d", lhs: xs, rhs: ws });
        }
        let cout = ws[1];
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::ShapeMismatch { op: "conv_transpose2d", lhs: ws.clone(), rhs: self.shape(b) });
            }
        }
        let (ho, wo) = match (geo.transposed_out(h), geo.transposed_out(w)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(TensorError::Invalid { op: "conv_transpose2d", msg: format!("non-positive output size for {h}x{w} with {geo:?}") }),
        };
        let ckk = cout * geo.kernel * geo.kernel;
        let l_in = h * w;
        let l_out = ho * wo;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record(
            &inputs,
            move |v| {
                let (x, wt) = (v[0], v[1]);
                let b = x.shape()[0];
                let mut out = vec![E::zero(); b * cout * l_out];
                out.par_chunks_mut(cout * l_out).enumerate().for_each(|(bi, o)| {
                    let mut cols = vec![E::zero(); ckk * l_in];
                    gemm(
                        E::one(),
                        wt.data(),
                        MatLayout::transposed(cin, ckk),
                        &x.data()[bi * cin * l_in..(bi + 1) * cin * l_in],
                        MatLayout::rows(cin, l_in),
                        E::zero(),
                        &mut cols,
                    );
                    o.copy_from_slice(&col2im(&cols, cout, ho, wo, geo, h, w));
                });
                if let Some(bias) = v.get(2) {
                    add_bias(&mut out, bias.data(), l_out);
                }
                Ok(Tensor::from_parts(vec![b, cout, ho, wo], out))
            },
            move |c| {
                let (x, wt) = (c.inputs[0], c.inputs[1]);
                let b = x.shape()[0];
                let g = c.grad.data();
                let per_item: Vec<(Option<Vec<E>>, Option<Vec<E>>)> = (0..b)
                    .into_par_iter()
                    .map(|bi| {
                        let dcols = im2col(&g[bi * cout * l_out..(bi + 1) * cout * l_out], cout, ho, wo, geo, h, w);
                        let xb = &x.data()[bi * cin * l_in..(bi + 1) * cin * l_in];
                        let dx = c.needs[0].then(|| {
                            let mut d = vec![E::zero(); cin * l_in];
                            gemm(E::one(), wt.data(), MatLayout::rows(cin, ckk), &dcols, MatLayout::rows(ckk, l_in), E::zero(), &mut d);
                            d
                        });
                        let dw = c.needs[1].then(|| {
                            let mut d = vec![E::zero(); cin * ckk];
                            gemm(E::one(), xb, MatLayout::rows(cin, l_in), &dcols, MatLayout::transposed(ckk, l_in), E::zero(), &mut d);
                            d
                        });
                        (dx, dw)
                    })
                    .collect();
                let (dxs, dws): (Vec<_>, Vec<_>) = per_item.into_iter().unzip();
                let dx = c.needs[0].then(|| Tensor::from_parts(x.shape().to_vec(), dxs.into_iter().flatten().flatten().collect()));
                let dw = c.needs[1].then(|| Tensor::from_parts(wt.shape().to_vec(), sum_partials(dws.into_iter().flatten().collect(), cin * ckk)));
                let mut grads = vec![dx, dw];
                if c.inputs.len() == 3 {
                    grads.push(c.needs[2].then(|| Tensor::from_parts(vec![cout], bias_grad(g, b, cout, l_out))));
                }
                Ok(grads)
            },
        )
    }

    /// Adaptive average pooling of `[B, C, H, W]` to `[B, C, oh, ow]`; bin `i`
    /// spans `floor(i·H/oh) .. ceil((i+1)·H/oh)`.
    pub fn adaptive_avg_pool2d(&self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xs = self.shape(x);
        let (_, _, h, w) = image_dims("adaptive_avg_pool2d", &xs)?;
        if oh == 0 || ow == 0 {
            return Err(TensorError::Config(format!("pool output must be positive, got {oh}x{ow}")));
        }
        let bins = move |o: usize, n: usize, i: usize| (i * n / o, ((i + 1) * n).div_ceil(o));
        self.record(
            &[x],
            move |v| {
                let x = v[0];
                let planes = x.shape()[0] * x.shape()[1];
                let mut out = Vec::with_capacity(planes * oh * ow);
                for p in 0..planes {
                    let plane = &x.data()[p * h * w..(p + 1) * h * w];
                    for i in 0..oh {
                        let (y0, y1) = bins(oh, h, i);
                        for j in 0..ow {
                            let (x0, x1) = bins(ow, w, j);
                            let mut s = E::zero();
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    s += plane[y * w + xx];
                                }
                            }
                            out.push(s / E::of(((y1 - y0) * (x1 - x0)) as f64));
                        }
                    }
                }
                let mut shape = x.shape().to_vec();
                shape[2] = oh;
                shape[3] = ow;
                Ok(Tensor::from_parts(shape, out))
            },
            move |c| {
                let x = c.inputs[0];
                let planes = x.shape()[0] * x.shape()[1];
                let g = c.grad.data();
                let mut d = vec![E::zero(); x.numel()];
                for p in 0..planes {
                    for i in 0..oh {
                        let (y0, y1) = bins(oh, h, i);
                        for j in 0..ow {
                            let (x0, x1) = bins(ow, w, j);
                            let share = g[(p * oh + i) * ow + j] / E::of(((y1 - y0) * (x1 - x0)) as f64);
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    d[p * h * w + y * w + xx] += share;
                                }
                            }
                        }
                    }
                }
                Ok(vec![Some(Tensor::from_parts(x.shape().to_vec(), d))])
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct-summation reference for a single-image convolution.
    fn naive_conv(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], cout: usize, geo: ConvGeometry) -> Vec<f64> {
        let k = geo.kernel;
        let (ho, wo) = (geo.conv_out(h).unwrap(), geo.conv_out(w).unwrap());
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                                let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += x[(ci * h + iy as usize) * w + ix as usize] * wt[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let geo = ConvGeometry::new(3, 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 6).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.7).collect();
        let tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::from_f64([1, 2, 5, 6], &x).unwrap());
        let wv = tape.constant(Tensor::from_f64([3, 2, 3, 3], &wt).unwrap());
        let y = tape.conv2d(xv, wv, None, geo).unwrap();
        assert_eq!(tape.shape(y), vec![1, 3, 3, 3]);
        let want = naive_conv(&x, 2, 5, 6, &wt, 3, geo);
        for (a, b) in tape.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_transpose(y)> with the same weights.
        let geo = ConvGeometry::new(4, 2, 1).unwrap();
        let (cin, cout, h) = (2, 3, 8);
        let x: Vec<f64> = (0..cin * h * h).map(|i| ((i * 29) % 17) as f64 * 0.1 - 0.8).collect();
        let wt: Vec<f64> = (0..cout * cin * 16).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let ho = geo.conv_out(h).unwrap();
        let y: Vec<f64> = (0..cout * ho * ho).map(|i| ((i * 3) % 13) as f64 * 0.2 - 1.0).collect();
        let conv = naive_conv(&x, cin, h, h, &wt, cout, geo);
        let lhs: f64 = conv.iter().zip(&y).map(|(a, b)| a * b).sum();

        // Conv weight [cout, cin, k, k] read as transposed-conv weight [Cin'=cout, Cout'=cin, k, k].
        let tape = Tape::<f64>::new();
        let yv = tape.constant(Tensor::from_f64([1, cout, ho, ho], &y).unwrap());
        let wv = tape.constant(Tensor::from_f64([cout, cin, 4, 4], &wt).unwrap());
        let t = tape.conv_transpose2d(yv, wv, None, geo).unwrap();
        assert_eq!(tape.shape(t), vec![1, cin, h, h]);
        let rhs: f64 = tape.value(t).data().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn adaptive_pool_global_mean() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 2, 2, 2], &[1., 2., 3., 4., 10., 10., 10., 10.]).unwrap());
        let p = tape.adaptive_avg_pool2d(x, 1, 1).unwrap();
        assert_eq!(tape.value(p).data(), &[2.5, 10.0]);
    }

    proptest! {
        #[test]
        fn transposed_output_size_formula(h in 1usize..20, k in 1usize..6, s in 1usize..4, p in 0usize..3) {
            let geo = ConvGeometry::new(k, s, p).unwrap();
            let expect = (h as isize - 1) * s as isize - 2 * p as isize + k as isize;
            match geo.transposed_out(h) {
                Some(o) => {
                    prop_assert_eq!(o as isize, expect);
                    let tape = Tape::<f32>::new();
                    let x = tape.constant(Tensor::ones([1, 1, h, h]).unwrap());
                    let w = tape.constant(Tensor::ones([1, 2, k, k]).unwrap());
                    let y = tape.conv_transpose2d(x, w, None, geo).unwrap();
                    prop_assert_eq!(tape.shape(y), vec![1, 2, o, o]);
                }
                None => prop_assert!(expect <= 0),
            }
        }
    }
}
