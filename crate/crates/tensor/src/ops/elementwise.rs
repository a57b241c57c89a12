use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{numel, strides_of, Tensor};

/// Numpy-style broadcast of two shapes (trailing alignment, size-1 stretch).
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(TensorError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| if i < offset || shape[i - offset] == 1 { 0 } else { own[i - offset] })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..numel(out) {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Element-wise `f(a, b)` under broadcasting.
pub fn broadcast_apply<E: Scalar>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Result<Tensor<E>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![E::zero(); numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Ok(Tensor::from_parts(out, data))
}

/// Sums `g` down to `target` (the inverse of broadcasting `target` up to `g`).
pub fn sum_to_shape<E: Scalar>(g: &Tensor<E>, target: &[usize]) -> Tensor<E> {
    if g.shape() == target {
        return Tensor::from_parts(target.to_vec(), g.data().to_vec());
    }
    let out = g.shape();
    let st = broadcast_strides(target, out);
    let zeros = vec![0; out.len()];
    let mut data = vec![E::zero(); numel(target)];
    let gd = g.data();
    for_each_broadcast(out, &st, &zeros, |o, it, _| data[it] += gd[o]);
    Tensor::from_parts(target.to_vec(), data)
}

fn zip_map<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

impl<E: Scalar> Tape<E> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            &[a, b],
            |v| broadcast_apply("add", v[0], v[1], |x, y| x + y),
            |c| {
                Ok(vec![
                    c.needs[0].then(|| sum_to_shape(c.grad, c.inputs[0].shape())),
                    c.needs[1].then(|| sum_to_shape(c.grad, c.inputs[1].shape())),
                ])
            },
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            &[a, b],
            |v| broadcast_apply("sub", v[0], v[1], |x, y| x - y),
            |c| {
                Ok(vec![
                    c.needs[0].then(|| sum_to_shape(c.grad, c.inputs[0].shape())),
                    c.needs[1].then(|| sum_to_shape(&c.grad.map(|g| -g), c.inputs[1].shape())),
                ])
            },
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            &[a, b],
            |v| broadcast_apply("mul", v[0], v[1], |x, y| x * y),
            |c| {
                let (a, b) = (c.inputs[0], c.inputs[1]);
                let ga = if c.needs[0] { Some(sum_to_shape(&broadcast_apply("mul", c.grad, b, |g, y| g * y)?, a.shape())) } else { None };
                let gb = if c.needs[1] { Some(sum_to_shape(&broadcast_apply("mul", c.grad, a, |g, x| g * x)?, b.shape())) } else { None };
                Ok(vec![ga, gb])
            },
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.record(
            &[a, b],
            |v| broadcast_apply("div", v[0], v[1], |x, y| x / y),
            |c| {
                let (a, b) = (c.inputs[0], c.inputs[1]);
                let ga = if c.needs[0] { Some(sum_to_shape(&broadcast_apply("div", c.grad, b, |g, y| g / y)?, a.shape())) } else { None };
                let gb = if c.needs[1] {
                    // d(a/b)/db = -a/b^2 = -out/b
                    let t = zip_map(c.grad, c.output, |g, o| -g * o);
                    Some(sum_to_shape(&broadcast_apply("div", &t, b, |t, y| t / y)?, b.shape()))
                } else {
                    None
                };
                Ok(vec![ga, gb])
            },
        )
    }

    pub fn mul_scalar(&self, x: Var, s: E) -> Result<Var> {
        self.record(&[x], move |v| Ok(v[0].map(|a| a * s)), move |c| Ok(vec![Some(c.grad.map(|g| g * s))]))
    }

    pub fn add_scalar(&self, x: Var, s: E) -> Result<Var> {
        self.record(&[x], move |v| Ok(v[0].map(|a| a + s)), |c| Ok(vec![Some(c.grad.clone())]))
    }

    pub fn neg(&self, x: Var) -> Result<Var> {
        self.mul_scalar(x, -E::one())
    }

    /// Element-wise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn unary(
        &self,
        x: Var,
        f: impl Fn(E) -> E,
        df: impl Fn(E, E) -> E + 'static,
    ) -> Result<Var> {
        self.record(
            &[x],
            |v| Ok(v[0].map(&f)),
            move |c| {
                let x = c.inputs[0].data();
                let y = c.output.data();
                let data = c.grad.data().iter().enumerate().map(|(i, &g)| g * df(x[i], y[i])).collect();
                Ok(vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), data))])
            },
        )
    }

    pub fn square(&self, x: Var) -> Result<Var> {
        self.unary(x, |a| a * a, |a, _| a + a)
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary(x, |a| a.exp(), |_, y| y)
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(x, |a| if a > E::zero() { a } else { E::zero() }, |a, _| if a > E::zero() { E::one() } else { E::zero() })
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, |_, y| y * (E::one() - y))
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary(x, |a| a.tanh(), |_, y| E::one() - y * y)
    }

    /// Exponential linear unit with `alpha = 1`.
    pub fn elu(&self, x: Var) -> Result<Var> {
        self.unary(x, elu, |a, y| if a > E::zero() { E::one() } else { y + E::one() })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self, x: Var) -> Result<Var> {
        self.unary(x, gelu, gelu_grad)
    }
}

pub fn sigmoid<E: Scalar>(a: E) -> E {
    if a >= E::zero() {
        E::one() / (E::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (E::one() + e)
    }
}

pub fn elu<E: Scalar>(a: E) -> E {
    if a > E::zero() {
        a
    } else {
        a.exp() - E::one()
    }
}

pub fn gelu<E: Scalar>(a: E) -> E {
    E::of(0.5) * a * (E::one() + (a * E::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<E: Scalar>(a: E, _y: E) -> E {
    let cdf = E::of(0.5) * (E::one() + (a * E::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-E::of(0.5) * a * a).exp() * E::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + a * pdf
}
