use rand::Rng;

use crate::error::{Result, TensorError};
use crate::ops::shape::split_at_axis;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<E: Scalar> {
    pub mean: Vec<E>,
    /// Unbiased variance (biased when only one element per channel).
    pub var: Vec<E>,
}

fn softmax_forward<E: Scalar>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    if !x.all_finite() {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![E::zero(); x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let max = (0..n).fold(E::neg_infinity(), |m, a| m.max(xd[at(a)]));
            let mut total = E::zero();
            for a in 0..n {
                let e = (xd[at(a)] - max).exp();
                out[at(a)] = e;
                total += e;
            }
            for a in 0..n {
                out[at(a)] /= total;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Per-row statistics over the trailing dimension of a row-major buffer.
fn row_moments<E: Scalar>(row: &[E]) -> (E, E) {
    let n = E::of(row.len() as f64);
    let mean = row.iter().copied().sum::<E>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() / n;
    (mean, var)
}

fn check_eps<E: Scalar>(eps: E) -> Result<()> {
    if eps > E::zero() && eps.is_finite() {
        Ok(())
    } else {
        Err(TensorError::Config(format!("normalization eps must be positive, got {eps}")))
    }
}

/// Visits channel `c` of an `[B, C, S]`-laid-out buffer as `(offset, len)` runs.
fn channel_runs(b: usize, c_count: usize, s: usize, c: usize) -> impl Iterator<Item = usize> {
    (0..b).map(move |bi| (bi * c_count + c) * s)
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::Invalid { op: "batch_norm", msg: format!("expected [B, C, ...], got {shape:?}") });
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<E: Scalar> Tape<E> {
    /// Numerically stable softmax along `axis`. Non-finite input is an error.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { op: "softmax", axis, rank });
        }
        self.record(
            &[x],
            move |v| softmax_forward(v[0], axis),
            move |c| {
                let y = c.output.data();
                let g = c.grad.data();
                let (outer, n, inner) = split_at_axis(c.output.shape(), axis);
                let mut d = vec![E::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * n + a) * inner + i;
                        let dot: E = (0..n).map(|a| g[at(a)] * y[at(a)]).sum();
                        for a in 0..n {
                            d[at(a)] = y[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
                Ok(vec![Some(Tensor::from_parts(c.output.shape().to_vec(), d))])
            },
        )
    }

    /// Layer normalization over the last dimension followed by `gamma * x̂ + beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: E) -> Result<Var> {
        check_eps(eps)?;
        let xs = self.shape(x);
        let d = *xs.last().ok_or(TensorError::Invalid { op: "layer_norm", msg: "rank-0 input".into() })?;
        for p in [gamma, beta] {
            let ps = self.shape(p);
            if ps != [d] {
                return Err(TensorError::ShapeMismatch { op: "layer_norm", lhs: xs.clone(), rhs: ps });
            }
        }
        self.record(
            &[x, gamma, beta],
            move |v| {
                let (x, g, b) = (v[0], v[1].data(), v[2].data());
                let mut out = Vec::with_capacity(x.numel());
                for row in x.data().chunks(d) {
                    let (mean, var) = row_moments(row);
                    let rstd = E::one() / (var + eps).sqrt();
                    out.extend(row.iter().enumerate().map(|(j, &v)| (v - mean) * rstd * g[j] + b[j]));
                }
                Ok(Tensor::from_parts(x.shape().to_vec(), out))
            },
            move |c| {
                let (x, gamma) = (c.inputs[0], c.inputs[1].data());
                let g = c.grad.data();
                let mut dx = vec![E::zero(); x.numel()];
                let mut dgamma = vec![E::zero(); d];
                let mut dbeta = vec![E::zero(); d];
                let n = E::of(d as f64);
                for (r, row) in x.data().chunks(d).enumerate() {
                    let (mean, var) = row_moments(row);
                    let rstd = E::one() / (var + eps).sqrt();
                    let gr = &g[r * d..(r + 1) * d];
                    let mut sum_dxhat = E::zero();
                    let mut sum_dxhat_xhat = E::zero();
                    for j in 0..d {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = gr[j] * gamma[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgamma[j] += gr[j] * xhat;
                        dbeta[j] += gr[j];
                    }
                    for j in 0..d {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = gr[j] * gamma[j];
                        dx[r * d + j] = rstd * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
                Ok(vec![
                    Some(Tensor::from_parts(x.shape().to_vec(), dx)),
                    Some(Tensor::from_parts(vec![d], dgamma)),
                    Some(Tensor::from_parts(vec![d], dbeta)),
                ])
            },
        )
    }

    /// Training-mode batch norm over axis 1 of `[B, C, ...]`, normalizing with
    /// batch statistics. Returns the observed statistics for running updates.
    pub fn batch_norm_train(&self, x: Var, gamma: Var, beta: Var, eps: E) -> Result<(Var, BatchStats<E>)> {
        check_eps(eps)?;
        let xs = self.shape(x);
        let (b, ch, s) = channel_layout(&xs)?;
        for p in [gamma, beta] {
            let ps = self.shape(p);
            if ps != [ch] {
                return Err(TensorError::ShapeMismatch { op: "batch_norm", lhs: xs.clone(), rhs: ps });
            }
        }
        let count = b * s;
        let moments = {
            let xv = self.value(x);
            let xd = xv.data();
            (0..ch)
                .map(|c| {
                    let n = E::of(count as f64);
                    let mean = channel_runs(b, ch, s, c).flat_map(|o| &xd[o..o + s]).copied().sum::<E>() / n;
                    let ss = channel_runs(b, ch, s, c).flat_map(|o| &xd[o..o + s]).map(|&v| (v - mean) * (v - mean)).sum::<E>();
                    (mean, ss / n, ss)
                })
                .collect::<Vec<_>>()
        };
        let stats = BatchStats {
            mean: moments.iter().map(|m| m.0).collect(),
            var: moments.iter().map(|m| if count > 1 { m.2 / E::of((count - 1) as f64) } else { m.1 }).collect(),
        };
        let fwd_moments: Vec<(E, E)> = moments.iter().map(|m| (m.0, m.1)).collect();
        let bwd_moments = fwd_moments.clone();
        let y = self.record(
            &[x, gamma, beta],
            move |v| {
                let (x, g, bt) = (v[0], v[1].data(), v[2].data());
                let mut out = x.data().to_vec();
                for (c, &(mean, var)) in fwd_moments.iter().enumerate() {
                    let rstd = E::one() / (var + eps).sqrt();
                    for o in channel_runs(b, ch, s, c) {
                        for v in &mut out[o..o + s] {
                            *v = (*v - mean) * rstd * g[c] + bt[c];
                        }
                    }
                }
                Ok(Tensor::from_parts(x.shape().to_vec(), out))
            },
            move |cx| {
                let (x, gamma) = (cx.inputs[0].data(), cx.inputs[1].data());
                let g = cx.grad.data();
                let mut dx = vec![E::zero(); x.len()];
                let mut dgamma = vec![E::zero(); ch];
                let mut dbeta = vec![E::zero(); ch];
                let n = E::of(count as f64);
                for (c, &(mean, var)) in bwd_moments.iter().enumerate() {
                    let rstd = E::one() / (var + eps).sqrt();
                    let (mut sum_g, mut sum_g_xhat) = (E::zero(), E::zero());
                    for o in channel_runs(b, ch, s, c) {
                        for i in o..o + s {
                            sum_g += g[i];
                            sum_g_xhat += g[i] * (x[i] - mean) * rstd;
                        }
                    }
                    dgamma[c] = sum_g_xhat;
                    dbeta[c] = sum_g;
                    for o in channel_runs(b, ch, s, c) {
                        for i in o..o + s {
                            let xhat = (x[i] - mean) * rstd;
                            dx[i] = gamma[c] * rstd * (g[i] - sum_g / n - xhat * sum_g_xhat / n);
                        }
                    }
                }
                Ok(vec![
                    Some(Tensor::from_parts(cx.inputs[0].shape().to_vec(), dx)),
                    Some(Tensor::from_parts(vec![ch], dgamma)),
                    Some(Tensor::from_parts(vec![ch], dbeta)),
                ])
            },
        )?;
        Ok((y, stats))
    }

    /// Evaluation-mode batch norm using fixed running statistics.
    pub fn batch_norm_eval(&self, x: Var, gamma: Var, beta: Var, running_mean: &[E], running_var: &[E], eps: E) -> Result<Var> {
        check_eps(eps)?;
        let xs = self.shape(x);
        let (b, ch, s) = channel_layout(&xs)?;
        if running_mean.len() != ch || running_var.len() != ch {
            return Err(TensorError::ShapeMismatch { op: "batch_norm", lhs: xs, rhs: vec![running_mean.len(), running_var.len()] });
        }
        for p in [gamma, beta] {
            let ps = self.shape(p);
            if ps != [ch] {
                return Err(TensorError::ShapeMismatch { op: "batch_norm", lhs: xs.clone(), rhs: ps });
            }
        }
        let stats: Vec<(E, E)> = running_mean.iter().zip(running_var).map(|(&m, &v)| (m, E::one() / (v + eps).sqrt())).collect();
        let bwd = stats.clone();
        self.record(
            &[x, gamma, beta],
            move |v| {
                let (x, g, bt) = (v[0], v[1].data(), v[2].data());
                let mut out = x.data().to_vec();
                for (c, &(mean, rstd)) in stats.iter().enumerate() {
                    for o in channel_runs(b, ch, s, c) {
                        for v in &mut out[o..o + s] {
                            *v = (*v - mean) * rstd * g[c] + bt[c];
                        }
                    }
                }
                Ok(Tensor::from_parts(x.shape().to_vec(), out))
            },
            move |cx| {
                let (x, gamma) = (cx.inputs[0].data(), cx.inputs[1].data());
                let g = cx.grad.data();
                let mut dx = vec![E::zero(); x.len()];
                let mut dgamma = vec![E::zero(); ch];
                let mut dbeta = vec![E::zero(); ch];
                for (c, &(mean, rstd)) in bwd.iter().enumerate() {
                    for o in channel_runs(b, ch, s, c) {
                        for i in o..o + s {
                            dx[i] = g[i] * gamma[c] * rstd;
                            dgamma[c] += g[i] * (x[i] - mean) * rstd;
                            dbeta[c] += g[i];
                        }
                    }
                }
                Ok(vec![
                    Some(Tensor::from_parts(cx.inputs[0].shape().to_vec(), dx)),
                    Some(Tensor::from_parts(vec![ch], dgamma)),
                    Some(Tensor::from_parts(vec![ch], dbeta)),
                ])
            },
        )
    }

    /// Inverted dropout. With `train == false` (or `p == 0`) this returns `x`
    /// itself, recording nothing.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Config(format!("dropout probability must lie in [0, 1), got {p}")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).numel();
        let scale = E::of(1.0 / (1.0 - p));
        let mask: Vec<E> = (0..n).map(|_| if rng.random::<f64>() >= p { scale } else { E::zero() }).collect();
        let bwd_mask = mask.clone();
        self.record(
            &[x],
            move |v| {
                let data = v[0].data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                Ok(Tensor::from_parts(v[0].shape().to_vec(), data))
            },
            move |c| {
                let data = c.grad.data().iter().zip(&bwd_mask).map(|(&g, &m)| g * m).collect();
                Ok(vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), data))])
            },
        )
    }

    /// Mean cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(TensorError::ShapeMismatch { op: "cross_entropy", lhs: shape, rhs: vec![targets.len()] });
        }
        let classes = shape[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(TensorError::Invalid { op: "cross_entropy", msg: format!("target {bad} outside {classes} classes") });
        }
        let t_fwd = targets.to_vec();
        let t_bwd = targets.to_vec();
        self.record(
            &[logits],
            move |v| {
                let p = softmax_forward(v[0], 1)?;
                let n = t_fwd.len();
                let total: E = t_fwd.iter().enumerate().map(|(i, &t)| -(p.data()[i * classes + t].max(E::min_positive_value())).ln()).sum();
                Ok(Tensor::scalar(total / E::of(n as f64)))
            },
            move |c| {
                let mut p = softmax_forward(c.inputs[0], 1)?;
                let n = t_bwd.len();
                let scale = c.grad.data()[0] / E::of(n as f64);
                {
                    let pd = p.data_mut();
                    for (i, &t) in t_bwd.iter().enumerate() {
                        pd[i * classes + t] -= E::one();
                    }
                    for v in pd.iter_mut() {
                        *v *= scale;
                    }
                }
                Ok(vec![Some(p)])
            },
        )
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&self, pred: Var, target: Var) -> Result<Var> {
        let (ps, ts) = (self.shape(pred), self.shape(target));
        if ps != ts {
            return Err(TensorError::ShapeMismatch { op: "mse", lhs: ps, rhs: ts });
        }
        let diff = self.sub(pred, target)?;
        let sq = self.square(diff)?;
        self.mean(sq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn softmax_of(vals: &[f64]) -> Vec<f64> {
        let t = Tensor::<f64>::from_f64([vals.len()], vals).unwrap();
        softmax_forward(&t, 0).unwrap().into_data()
    }

    #[test]
    fn softmax_examples() {
        for v in softmax_of(&[0., 0., 0.]) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_of(&[1000., 0.]);
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12);
        let nan = Tensor::<f64>::from_f64([2], &[f64::NAN, 0.]).unwrap();
        assert!(matches!(softmax_forward(&nan, 0), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::ones([3]).unwrap());
        let b = tape.constant(Tensor::zeros([3]).unwrap());
        let c = tape.constant(Tensor::full([1, 3], 5.0).unwrap());
        let y = tape.layer_norm(c, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));
        let x = tape.constant(Tensor::from_f64([1, 3], &[1., 2., 3.]).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        let want = [-1.2247, 0.0, 1.2247];
        for (v, w) in tape.value(y).data().iter().zip(want) {
            assert!((v - w).abs() < 1e-3);
        }
        assert!(matches!(tape.layer_norm(x, g, b, 0.0), Err(TensorError::Config(_))));
        assert!(matches!(tape.layer_norm(x, g, b, -1.0), Err(TensorError::Config(_))));
    }

    #[test]
    fn batch_norm_eval_identity() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64([2, 3, 2], &[0.5, -1., 2., 3., 4., 5., -6., 7., 8., 9., 10., 11.]).unwrap());
        let g = tape.constant(Tensor::ones([3]).unwrap());
        let b = tape.constant(Tensor::zeros([3]).unwrap());
        let y = tape.batch_norm_eval(x, g, b, &[0.0; 3], &[1.0; 3], 1e-12).unwrap();
        assert!(tape.value(y).max_abs_diff(&tape.value(x)).unwrap() < 1e-5);
    }

    #[test]
    fn batch_norm_train_normalizes_channels() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 2, 2], &[1., 2., 10., 20., 3., 4., 30., 40.]).unwrap());
        let g = tape.constant(Tensor::ones([2]).unwrap());
        let b = tape.constant(Tensor::zeros([2]).unwrap());
        let (y, stats) = tape.batch_norm_train(x, g, b, 1e-9).unwrap();
        assert_eq!(stats.mean, vec![2.5, 25.0]);
        assert!((stats.var[0] - 5.0 / 3.0).abs() < 1e-12);
        let yd = tape.value(y);
        let c0: Vec<f64> = vec![yd.data()[0], yd.data()[1], yd.data()[4], yd.data()[5]];
        assert!(c0.iter().sum::<f64>().abs() < 1e-9);
        assert!((c0.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([10]).unwrap());
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(1);
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        let d = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros([2, 7]).unwrap());
        let ce = tape.cross_entropy(l, &[0, 6]).unwrap();
        assert!((tape.value(ce).item().unwrap() - 7f64.ln()).abs() < 1e-12);
        assert!(tape.cross_entropy(l, &[0, 7]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-80.0f32..80.0, 1..40), rows in 1usize..4) {
            let cols = vals.len();
            let data: Vec<f32> = (0..rows).flat_map(|r| vals.iter().map(move |v| v * (r as f32 + 1.0))).collect();
            let t = Tensor::<f32>::new([rows, cols], data).unwrap();
            let s = softmax_forward(&t, 1).unwrap();
            for row in s.data().chunks(cols) {
                prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
