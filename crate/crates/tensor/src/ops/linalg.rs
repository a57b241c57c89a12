use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatLayout, Scalar};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `[..., m, k] x [k, n] -> [..., m, n]`; leading dimensions of the left
/// operand are folded into `m`.
pub(crate) fn matmul_forward<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let mismatch = || TensorError::ShapeMismatch { op: "matmul", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() };
    if a.rank() < 2 || b.rank() != 2 {
        return Err(mismatch());
    }
    let k = a.shape()[a.rank() - 1];
    if k != b.shape()[0] {
        return Err(mismatch());
    }
    let m = a.numel() / k;
    let n = b.shape()[1];
    let mut out = vec![E::zero(); m * n];
    gemm(E::one(), a.data(), MatLayout::rows(m, k), b.data(), MatLayout::rows(k, n), E::zero(), &mut out);
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor::from_parts(shape, out))
}

fn batch_dims<E: Scalar>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>, transpose_b: bool) -> Result<(usize, usize, usize, usize)> {
    let mismatch = || TensorError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() };
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
        return Err(mismatch());
    }
    let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (kb, n) = if transpose_b { (b.shape()[2], b.shape()[1]) } else { (b.shape()[1], b.shape()[2]) };
    if k != kb {
        return Err(mismatch());
    }
    Ok((batch, m, k, n))
}

/// Batched product; `transpose_b` multiplies by each `b` slice transposed.
fn bmm_forward<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, transpose_b: bool) -> Result<Tensor<E>> {
    let op = if transpose_b { "bmm_nt" } else { "bmm" };
    let (batch, m, k, n) = batch_dims(op, a, b, transpose_b)?;
    let mut out = vec![E::zero(); batch * m * n];
    let lb = if transpose_b { MatLayout::transposed(n, k) } else { MatLayout::rows(k, n) };
    for i in 0..batch {
        gemm(
            E::one(),
            &a.data()[i * m * k..(i + 1) * m * k],
            MatLayout::rows(m, k),
            &b.data()[i * k * n..(i + 1) * k * n],
            lb,
            E::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Ok(Tensor::from_parts(vec![batch, m, n], out))
}

impl<E: Scalar> Tape<E> {
    /// Matrix product `a · b`. Records `dA = dC·Bᵀ` and `dB = Aᵀ·dC`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            &[a, b],
            |v| matmul_forward(v[0], v[1]),
            |c| {
                let (a, b) = (c.inputs[0], c.inputs[1]);
                let (k, n) = (b.shape()[0], b.shape()[1]);
                let m = a.numel() / k;
                let ga = c.needs[0].then(|| {
                    let mut d = vec![E::zero(); m * k];
                    gemm(E::one(), c.grad.data(), MatLayout::rows(m, n), b.data(), MatLayout::transposed(k, n), E::zero(), &mut d);
                    Tensor::from_parts(a.shape().to_vec(), d)
                });
                let gb = c.needs[1].then(|| {
                    let mut d = vec![E::zero(); k * n];
                    gemm(E::one(), a.data(), MatLayout::transposed(m, k), c.grad.data(), MatLayout::rows(m, n), E::zero(), &mut d);
                    Tensor::from_parts(vec![k, n], d)
                });
                Ok(vec![ga, gb])
            },
        )
    }

    /// Batched product `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            &[a, b],
            |v| bmm_forward(v[0], v[1], false),
            |c| {
                let (a, b) = (c.inputs[0], c.inputs[1]);
                let (batch, m, k, n) = batch_dims("bmm", a, b, false)?;
                let g = c.grad.data();
                let ga = c.needs[0].then(|| {
                    let mut d = vec![E::zero(); batch * m * k];
                    for i in 0..batch {
                        gemm(
                            E::one(),
                            &g[i * m * n..(i + 1) * m * n],
                            MatLayout::rows(m, n),
                            &b.data()[i * k * n..(i + 1) * k * n],
                            MatLayout::transposed(k, n),
                            E::zero(),
                            &mut d[i * m * k..(i + 1) * m * k],
                        );
                    }
                    Tensor::from_parts(a.shape().to_vec(), d)
                });
                let gb = c.needs[1].then(|| {
                    let mut d = vec![E::zero(); batch * k * n];
                    for i in 0..batch {
                        gemm(
                            E::one(),
                            &a.data()[i * m * k..(i + 1) * m * k],
                            MatLayout::transposed(m, k),
                            &g[i * m * n..(i + 1) * m * n],
                            MatLayout::rows(m, n),
                            E::zero(),
                            &mut d[i * k * n..(i + 1) * k * n],
                        );
                    }
                    Tensor::from_parts(b.shape().to_vec(), d)
                });
                Ok(vec![ga, gb])
            },
        )
    }

    /// Batched product with the right operand transposed:
    /// `[B,m,k] x [B,n,k]ᵀ -> [B,m,n]`.
    pub fn bmm_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            &[a, b],
            |v| bmm_forward(v[0], v[1], true),
            |c| {
                let (a, b) = (c.inputs[0], c.inputs[1]);
                let (batch, m, k, n) = batch_dims("bmm_nt", a, b, true)?;
                let g = c.grad.data();
                let ga = c.needs[0].then(|| {
                    let mut d = vec![E::zero(); batch * m * k];
                    for i in 0..batch {
                        gemm(
                            E::one(),
                            &g[i * m * n..(i + 1) * m * n],
                            MatLayout::rows(m, n),
                            &b.data()[i * n * k..(i + 1) * n * k],
                            MatLayout::rows(n, k),
                            E::zero(),
                            &mut d[i * m * k..(i + 1) * m * k],
                        );
                    }
                    Tensor::from_parts(a.shape().to_vec(), d)
                });
                let gb = c.needs[1].then(|| {
                    let mut d = vec![E::zero(); batch * n * k];
                    for i in 0..batch {
                        gemm(
                            E::one(),
                            &g[i * m * n..(i + 1) * m * n],
                            MatLayout::transposed(m, n),
                            &a.data()[i * m * k..(i + 1) * m * k],
                            MatLayout::rows(m, k),
                            E::zero(),
                            &mut d[i * n * k..(i + 1) * n * k],
                        );
                    }
                    Tensor::from_parts(b.shape().to_vec(), d)
                });
                Ok(vec![ga, gb])
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix() {
        let i = Tensor::<f32>::eye(2).unwrap();
        let m = Tensor::<f32>::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(i.matmul(&m).unwrap().data(), m.data());
    }

    #[test]
    fn row_times_column_of_ones() {
        let a = Tensor::<f32>::ones([1, 3]).unwrap();
        let b = Tensor::<f32>::ones([3, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[3.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Tensor::<f32>::ones([2, 3]).unwrap();
        let b = Tensor::<f32>::ones([2, 3]).unwrap();
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert_eq!(err, TensorError::ShapeMismatch { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] });
    }

    #[test]
    fn matmul_gradient_analytic() {
        // loss = sum(A·B) => dA = 1·Bᵀ, each row of dA is the row-sums of B.
        let tape = Tape::<f64>::new();
        let a = Tensor::<f64>::eye(2).unwrap().with_requires_grad(true);
        let b = Tensor::<f64>::from_f64([2, 2], &[2., 0., 0., 3.]).unwrap();
        let (va, vb) = (tape.leaf(&a), tape.leaf(&b));
        let c = tape.matmul(va, vb).unwrap();
        let l = tape.sum(c).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[2., 3., 2., 3.]);
        assert!(g.get(&b).is_none());
    }

    #[test]
    fn bmm_nt_matches_explicit_transpose() {
        let a = Tensor::<f64>::from_f64([2, 2, 3], &(0..12).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        let b = Tensor::<f64>::from_f64([2, 4, 3], &(0..24).map(|v| (v as f64) * 0.5 - 3.0).collect::<Vec<_>>()).unwrap();
        let nt = bmm_forward(&a, &b, true).unwrap();
        let bt = b.permute(&[0, 2, 1]).unwrap();
        let nn = bmm_forward(&a, &bt, false).unwrap();
        assert_eq!(nt, nn);
    }
}
