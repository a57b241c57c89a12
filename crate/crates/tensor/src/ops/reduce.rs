use crate::error::{Result, TensorError};
use crate::ops::shape::split_at_axis;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

impl<E: Scalar> Tape<E> {
    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self, x: Var) -> Result<Var> {
        self.record(
            &[x],
            |v| Ok(Tensor::scalar(v[0].sum_all())),
            |c| {
                let g = c.grad.data()[0];
                Ok(vec![Some(Tensor::from_parts(c.inputs[0].shape().to_vec(), vec![g; c.inputs[0].numel()]))])
            },
        )
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.mul_scalar(s, E::one() / E::of(n as f64))
    }

    pub fn sum_axis(&self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { op: "sum_axis", axis, rank });
        }
        self.record(
            &[x],
            move |v| {
                let x = v[0];
                let (outer, n, inner) = split_at_axis(x.shape(), axis);
                let mut out = vec![E::zero(); outer * inner];
                for o in 0..outer {
                    for a in 0..n {
                        let src = &x.data()[(o * n + a) * inner..(o * n + a + 1) * inner];
                        for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Ok(Tensor::from_parts(reduced_shape(x.shape(), axis, keepdim), out))
            },
            move |c| {
                let x = c.inputs[0];
                let (outer, n, inner) = split_at_axis(x.shape(), axis);
                let g = c.grad.data();
                let mut d = Vec::with_capacity(x.numel());
                for o in 0..outer {
                    for _ in 0..n {
                        d.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                Ok(vec![Some(Tensor::from_parts(x.shape().to_vec(), d))])
            },
        )
    }

    pub fn mean_axis(&self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { op: "mean_axis", axis, rank: shape.len() });
        }
        let s = self.sum_axis(x, axis, keepdim)?;
        self.mul_scalar(s, E::one() / E::of(shape[axis] as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones_gradient() {
        for shape in [vec![3], vec![2, 5], vec![2, 3, 4]] {
            let tape = Tape::<f32>::new();
            let x = Tensor::<f32>::full(shape.clone(), 0.25).unwrap().with_requires_grad(true);
            let v = tape.leaf(&x);
            let l = tape.sum(v).unwrap();
            let g = tape.backward(l).unwrap();
            let gx = g.get(&x).unwrap();
            assert_eq!(gx.shape(), &shape[..]);
            assert!(gx.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::<f32>::new();
        let x = Tensor::<f32>::from_f64([2], &[1., 2.]).unwrap().with_requires_grad(true);
        let v = tape.leaf(&x);
        let sq = tape.mul(v, v).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2., 4.]);
        assert!(tape.is_empty());
    }

    #[test]
    fn axis_reductions() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let s0 = tape.sum_axis(x, 0, false).unwrap();
        assert_eq!(tape.value(s0).data(), &[5., 7., 9.]);
        let m1 = tape.mean_axis(x, 1, true).unwrap();
        assert_eq!(tape.shape(m1), vec![2, 1]);
        assert_eq!(tape.value(m1).data(), &[2., 5.]);
        assert!(tape.sum_axis(x, 2, false).is_err());
    }
}
