use crate::error::{Result, TensorError};
use crate::ops::elementwise::{broadcast_shape, sum_to_shape};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{numel, Tensor};

pub(crate) fn permute_forward<E: Scalar>(x: &Tensor<E>, perm: &[usize]) -> Result<Tensor<E>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(TensorError::Invalid { op: "permute", msg: format!("{perm:?} is not a permutation of rank {rank}") });
    }
    let in_strides = x.strides();
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let data = x.data();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..x.numel() {
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `(outer, axis_len, inner)` decomposition around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn slice_forward<E: Scalar>(x: &Tensor<E>, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
    if axis >= x.rank() {
        return Err(TensorError::InvalidAxis { op: "slice", axis, rank: x.rank() });
    }
    if len == 0 || start + len > x.shape()[axis] {
        return Err(TensorError::Invalid {
            op: "slice",
            msg: format!("range {start}..{} outside axis {axis} of {:?}", start + len, x.shape()),
        });
    }
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * n * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out))
}

impl<E: Scalar> Tape<E> {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let shape = shape.to_vec();
        self.record(
            &[x],
            move |v| v[0].reshape(shape),
            |c| Ok(vec![Some(c.grad.reshape(c.inputs[0].shape().to_vec())?)]),
        )
    }

    /// Collapses to rank 2: `[d0 * ... * d(r-2), d(r-1)]`.
    pub fn flatten_rows(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let last = *shape.last().ok_or(TensorError::Invalid { op: "flatten_rows", msg: "rank-0 input".into() })?;
        self.reshape(x, &[numel(&shape) / last, last])
    }

    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let perm = perm.to_vec();
        let inv = inverse_perm(&perm);
        self.record(&[x], move |v| permute_forward(v[0], &perm), move |c| Ok(vec![Some(permute_forward(c.grad, &inv)?)]))
    }

    /// Swaps two axes.
    pub fn transpose(&self, x: Var, a0: usize, a1: usize) -> Result<Var> {
        let rank = self.shape(x).len();
        if a0 >= rank || a1 >= rank {
            return Err(TensorError::InvalidAxis { op: "transpose", axis: a0.max(a1), rank });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a0, a1);
        self.permute(x, &perm)
    }

    /// Contiguous sub-range `start..start+len` along `axis`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.record(
            &[x],
            move |v| slice_forward(v[0], axis, start, len),
            move |c| {
                let x = c.inputs[0];
                let (outer, n, inner) = split_at_axis(x.shape(), axis);
                let mut d = vec![E::zero(); x.numel()];
                let g = c.grad.data();
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                Ok(vec![Some(Tensor::from_parts(x.shape().to_vec(), d))])
            },
        )
    }

    /// Splits `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { op: "split", axis, rank: shape.len() });
        }
        if sizes.iter().sum::<usize>() != shape[axis] {
            return Err(TensorError::Invalid { op: "split", msg: format!("sizes {sizes:?} do not cover axis {axis} of {shape:?}") });
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(TensorError::Invalid { op: "concat", msg: "no inputs".into() });
        }
        let shapes: Vec<Vec<usize>> = xs.iter().map(|&v| self.shape(v)).collect();
        let rank = shapes[0].len();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { op: "concat", axis, rank });
        }
        for s in &shapes[1..] {
            let compatible = s.len() == rank && (0..rank).all(|i| i == axis || s[i] == shapes[0][i]);
            if !compatible {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: shapes[0].clone(), rhs: s.clone() });
            }
        }
        let lens: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_at_axis(&shapes[0], axis);
        let lens_bw = lens.clone();
        self.record(
            xs,
            move |v| {
                let mut out = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for (t, &l) in v.iter().zip(&lens) {
                        let base = o * l * inner;
                        out.extend_from_slice(&t.data()[base..base + l * inner]);
                    }
                }
                let mut shape = v[0].shape().to_vec();
                shape[axis] = total;
                Ok(Tensor::from_parts(shape, out))
            },
            move |c| {
                let g = c.grad.data();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(lens_bw.len());
                for (i, &l) in lens_bw.iter().enumerate() {
                    if c.needs[i] {
                        let mut d = Vec::with_capacity(outer * l * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            d.extend_from_slice(&g[base..base + l * inner]);
                        }
                        grads.push(Some(Tensor::from_parts(c.inputs[i].shape().to_vec(), d)));
                    } else {
                        grads.push(None);
                    }
                    offset += l;
                }
                Ok(grads)
            },
        )
    }

    /// Broadcasts to a larger shape; backward sums over the stretched axes.
    pub fn broadcast_to(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let target = shape.to_vec();
        let xs = self.shape(x);
        if broadcast_shape("broadcast_to", &xs, &target)? != target {
            return Err(TensorError::ShapeMismatch { op: "broadcast_to", lhs: xs, rhs: target });
        }
        self.record(
            &[x],
            move |v| {
                let zeros = Tensor::<E>::zeros(target.clone())?;
                crate::ops::elementwise::broadcast_apply("broadcast_to", v[0], &zeros, |a, _| a)
            },
            |c| Ok(vec![Some(sum_to_shape(c.grad, c.inputs[0].shape()))]),
        )
    }

    /// Appends `extra` zero entries at the end of `axis`.
    pub fn pad_end(&self, x: Var, axis: usize, extra: usize) -> Result<Var> {
        if extra == 0 {
            return Ok(x);
        }
        let mut shape = self.shape(x);
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { op: "pad_end", axis, rank: shape.len() });
        }
        shape[axis] = extra;
        let zeros = self.constant(Tensor::zeros(shape)?);
        self.concat(&[x, zeros], axis)
    }
}
