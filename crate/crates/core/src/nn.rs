//! Parameterized layer records built from tape operations.

use gsvit_tensor::{BatchStats, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Seeded generator used for initialization, dropout, sampling and augmentation.
pub type SeededRng = rand_xoshiro::Xoshiro256PlusPlus;

pub const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Whether a tensor is trained or is running state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Param,
    Buffer,
}

/// Named access to every tensor a layer owns, in a fixed order.
pub trait Module<E: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub total: usize,
    pub tunable: usize,
}

impl ParamCount {
    pub fn frozen(&self) -> usize {
        self.total - self.tunable
    }
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;
    fn add(self, rhs: Self) -> Self {
        ParamCount { total: self.total + rhs.total, tunable: self.tunable + rhs.tunable }
    }
}

/// Counts parameters (buffers excluded); tunable ones require grad.
pub fn count_module_params<E: Scalar>(m: &dyn Module<E>) -> ParamCount {
    let mut c = ParamCount::default();
    m.visit("", &mut |_, t, role| {
        if role == Role::Param {
            c.total += t.numel();
            if t.requires_grad() {
                c.tunable += t.numel();
            }
        }
    });
    c
}

/// Marks every parameter of `m` trainable or frozen.
pub fn set_trainable<E: Scalar>(m: &mut dyn Module<E>, trainable: bool) {
    m.visit_mut("", &mut |_, t, role| {
        if role == Role::Param {
            t.set_requires_grad(trainable);
        }
    });
}

/// CRC-32 over names, shapes and element bits of every tensor, buffers included.
pub fn checksum<E: Scalar>(m: &dyn Module<E>) -> u32 {
    let mut h = crc32fast::Hasher::new();
    m.visit("", &mut |name, t, _| {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(&v.as_f64().to_bits().to_le_bytes());
        }
    });
    h.finalize()
}

pub fn zero_grads<E: Scalar>(m: &mut dyn Module<E>) {
    m.visit_mut("", &mut |_, t, _| t.zero_grad());
}

/// Samples `N(0, std²)` truncated to ±2σ by rejection.
pub fn trunc_normal<E: Scalar>(shape: &[usize], std: f64, rng: &mut SeededRng) -> Tensor<E> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break E::of(z * std);
            }
        })
        .collect();
    param(Tensor::new(shape.to_vec(), data).expect("positive shape"))
}

pub(crate) fn param<E: Scalar>(t: Tensor<E>) -> Tensor<E> {
    t.with_requires_grad(true)
}

pub(crate) fn zeros_param<E: Scalar>(shape: &[usize]) -> Tensor<E> {
    param(Tensor::zeros(shape.to_vec()).expect("positive shape"))
}

fn ones_param<E: Scalar>(shape: &[usize]) -> Tensor<E> {
    param(Tensor::ones(shape.to_vec()).expect("positive shape"))
}

/// `y = x·W + b` on the last axis. `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<E: Scalar> {
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
}

impl<E: Scalar> Linear<E> {
    pub fn new(input: usize, output: usize, bias: bool, rng: &mut SeededRng) -> Self {
        Self {
            weight: trunc_normal(&[input, output], INIT_STD, rng),
            bias: bias.then(|| zeros_param(&[output])),
        }
    }

    pub fn from_parts(weight: Tensor<E>, bias: Option<Tensor<E>>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::Config(format!("linear weight must be rank 2, got {:?}", weight.shape())));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.shape()[1]] {
                return Err(Error::Config(format!("linear bias {:?} does not match weight {:?}", b.shape(), weight.shape())));
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &Tape<E>, x: Var) -> Result<Var> {
        let w = tape.leaf(&self.weight);
        let y = tape.matmul(x, w)?;
        match &self.bias {
            Some(b) => {
                let b = tape.leaf(b);
                Ok(tape.add(y, b)?)
            }
            None => Ok(y),
        }
    }
}

impl<E: Scalar> Module<E> for Linear<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        f(&join(prefix, "weight"), &self.weight, Role::Param);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, Role::Param);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        f(&join(prefix, "weight"), &mut self.weight, Role::Param);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b, Role::Param);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<E: Scalar> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub eps: f64,
}

impl<E: Scalar> LayerNorm<E> {
    pub fn new(dim: usize) -> Self {
        Self { gamma: ones_param(&[dim]), beta: zeros_param(&[dim]), eps: NORM_EPS }
    }

    pub fn forward(&self, tape: &Tape<E>, x: Var) -> Result<Var> {
        let (g, b) = (tape.leaf(&self.gamma), tape.leaf(&self.beta));
        Ok(tape.layer_norm(x, g, b, E::of(self.eps))?)
    }
}

impl<E: Scalar> Module<E> for LayerNorm<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        f(&join(prefix, "gamma"), &self.gamma, Role::Param);
        f(&join(prefix, "beta"), &self.beta, Role::Param);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        f(&join(prefix, "gamma"), &mut self.gamma, Role::Param);
        f(&join(prefix, "beta"), &mut self.beta, Role::Param);
    }
}

/// Batch normalization over axis 1 with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm<E: Scalar> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub eps: f64,
    pub momentum: f64,
}

impl<E: Scalar> BatchNorm<E> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: ones_param(&[channels]),
            beta: zeros_param(&[channels]),
            running_mean: Tensor::zeros([channels]).expect("positive"),
            running_var: Tensor::ones([channels]).expect("positive"),
            eps: NORM_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    /// Training mode normalizes with batch statistics and returns them for
    /// [`BatchNorm::update_running`]; evaluation mode uses the running ones.
    pub fn forward(&self, tape: &Tape<E>, x: Var, train: bool) -> Result<(Var, Option<BatchStats<E>>)> {
        let (g, b) = (tape.leaf(&self.gamma), tape.leaf(&self.beta));
        if train {
            let (y, stats) = tape.batch_norm_train(x, g, b, E::of(self.eps))?;
            Ok((y, Some(stats)))
        } else {
            let y = tape.batch_norm_eval(x, g, b, self.running_mean.data(), self.running_var.data(), E::of(self.eps))?;
            Ok((y, None))
        }
    }

    pub fn update_running(&mut self, stats: &BatchStats<E>) {
        let m = E::of(self.momentum);
        for (r, &s) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (E::one() - m) * *r + m * s;
        }
        for (r, &s) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (E::one() - m) * *r + m * s;
        }
    }
}

impl<E: Scalar> Module<E> for BatchNorm<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        f(&join(prefix, "gamma"), &self.gamma, Role::Param);
        f(&join(prefix, "beta"), &self.beta, Role::Param);
        f(&join(prefix, "running_mean"), &self.running_mean, Role::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, Role::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        f(&join(prefix, "gamma"), &mut self.gamma, Role::Param);
        f(&join(prefix, "beta"), &mut self.beta, Role::Param);
        f(&join(prefix, "running_mean"), &mut self.running_mean, Role::Buffer);
        f(&join(prefix, "running_var"), &mut self.running_var, Role::Buffer);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    Elu,
}

impl Activation {
    pub fn apply<E: Scalar>(self, tape: &Tape<E>, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Gelu => tape.gelu(x)?,
            Activation::Relu => tape.relu(x)?,
            Activation::Elu => tape.elu(x)?,
        })
    }
}

/// Position-wise `Linear -> activation -> Linear`.
#[derive(Debug, Clone)]
pub struct Mlp<E: Scalar> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
    pub activation: Activation,
}

impl<E: Scalar> Mlp<E> {
    pub fn new(dim: usize, hidden: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        Self { fc1: Linear::new(dim, hidden, true, rng), fc2: Linear::new(hidden, dim, true, rng), activation }
    }

    pub fn forward(&self, tape: &Tape<E>, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        let width = shape.last().copied().unwrap_or(0);
        if width != self.fc1.input_dim() {
            return Err(Error::Config(format!("mlp expects width {}, got input {:?}", self.fc1.input_dim(), shape)));
        }
        let h = self.fc1.forward(tape, x)?;
        let h = self.activation.apply(tape, h)?;
        self.fc2.forward(tape, h)
    }
}

impl<E: Scalar> Module<E> for Mlp<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// `softmax(Q·Kᵀ / sqrt(d_head))·V` for `[N, d]` or batched `[B, N, d]` inputs.
pub fn attention<E: Scalar>(tape: &Tape<E>, q: Var, k: Var, v: Var) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q), tape.shape(k), tape.shape(v));
    let rank = qs.len();
    let consistent = (rank == 2 || rank == 3)
        && ks.len() == rank
        && vs.len() == rank
        && qs[..rank - 1] == ks[..rank - 1]
        && ks[..rank - 1] == vs[..rank - 1]
        && qs[rank - 1] == ks[rank - 1];
    if !consistent {
        return Err(Error::Config(format!("attention dimension mismatch: Q {qs:?}, K {ks:?}, V {vs:?}")));
    }
    let batched = |x: Var, s: &[usize]| -> Result<Var> {
        if rank == 2 {
            Ok(tape.reshape(x, &[1, s[0], s[1]])?)
        } else {
            Ok(x)
        }
    };
    let (q3, k3, v3) = (batched(q, &qs)?, batched(k, &ks)?, batched(v, &vs)?);
    let d_head = qs[rank - 1];
    let scores = tape.bmm_nt(q3, k3)?;
    let scores = tape.mul_scalar(scores, E::of(1.0 / (d_head as f64).sqrt()))?;
    let weights = tape.softmax(scores, 2)?;
    let out = tape.bmm(weights, v3)?;
    if rank == 2 {
        Ok(tape.reshape(out, &[qs[0], vs[1]])?)
    } else {
        Ok(out)
    }
}

/// Query/key/value projections of one attention head. Only the value
/// projection carries a bias.
#[derive(Debug, Clone)]
pub struct AttentionHeadWeights<E: Scalar> {
    pub wq: Tensor<E>,
    pub wk: Tensor<E>,
    pub wv: Tensor<E>,
    pub bv: Tensor<E>,
}

impl<E: Scalar> AttentionHeadWeights<E> {
    pub fn new(d_split: usize, d_head: usize, rng: &mut SeededRng) -> Self {
        Self {
            wq: trunc_normal(&[d_split, d_head], INIT_STD, rng),
            wk: trunc_normal(&[d_split, d_head], INIT_STD, rng),
            wv: trunc_normal(&[d_split, d_head], INIT_STD, rng),
            bv: zeros_param(&[d_head]),
        }
    }

    pub fn d_split(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn d_head(&self) -> usize {
        self.wq.shape()[1]
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.d_head() as f64).sqrt()
    }

    /// Projects `x` and attends.
    pub fn forward(&self, tape: &Tape<E>, x: Var) -> Result<Var> {
        let (wq, wk, wv, bv) = (tape.leaf(&self.wq), tape.leaf(&self.wk), tape.leaf(&self.wv), tape.leaf(&self.bv));
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let v = tape.add(v, bv)?;
        attention(tape, q, k, v)
    }
}

impl<E: Scalar> Module<E> for AttentionHeadWeights<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        f(&join(prefix, "wq"), &self.wq, Role::Param);
        f(&join(prefix, "wk"), &self.wk, Role::Param);
        f(&join(prefix, "wv"), &self.wv, Role::Param);
        f(&join(prefix, "bv"), &self.bv, Role::Param);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        f(&join(prefix, "wq"), &mut self.wq, Role::Param);
        f(&join(prefix, "wk"), &mut self.wk, Role::Param);
        f(&join(prefix, "wv"), &mut self.wv, Role::Param);
        f(&join(prefix, "bv"), &mut self.bv, Role::Param);
    }
}

/// Squeeze-and-excitation channel gate:
/// `x ⊙ sigmoid(expand(relu(reduce(avg_pool(x)))))`.
#[derive(Debug, Clone)]
pub struct SeBlock<E: Scalar> {
    pub reduce: Linear<E>,
    pub expand: Linear<E>,
    pub ratio: usize,
}

impl<E: Scalar> SeBlock<E> {
    pub fn new(channels: usize, ratio: usize, rng: &mut SeededRng) -> Result<Self> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(Error::Config(format!("SE channels {channels} not divisible by reduction ratio {ratio}")));
        }
        Ok(Self {
            reduce: Linear::new(channels, channels / ratio, true, rng),
            expand: Linear::new(channels / ratio, channels, true, rng),
            ratio,
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce.input_dim()
    }

    /// Per-channel gate `[B, C]` in (0, 1).
    pub fn gate(&self, tape: &Tape<E>, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != self.channels() {
            return Err(Error::Config(format!("SE block over {} channels got input {s:?}", self.channels())));
        }
        let pooled = tape.adaptive_avg_pool2d(x, 1, 1)?;
        let pooled = tape.reshape(pooled, &[s[0], s[1]])?;
        let h = self.reduce.forward(tape, pooled)?;
        let h = tape.relu(h)?;
        let h = self.expand.forward(tape, h)?;
        Ok(tape.sigmoid(h)?)
    }

    pub fn forward(&self, tape: &Tape<E>, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        let gate = self.gate(tape, x)?;
        let gate = tape.reshape(gate, &[s[0], s[1], 1, 1])?;
        Ok(tape.mul(x, gate)?)
    }
}

impl<E: Scalar> Module<E> for SeBlock<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
    }
}

/// Deterministic generator for a seed.
pub fn seeded(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Uniform sample helper used by tests and synthetic data.
pub fn uniform_tensor<E: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor<E> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| E::of(rng.random_range(lo..hi))).collect()).expect("positive shape")
}
