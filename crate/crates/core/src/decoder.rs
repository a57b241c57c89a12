//! Asymmetric reconstruction decoder: a fully connected expansion to a seed
//! feature map followed by a ladder of transposed convolutions with
//! squeeze-and-excitation residuals at two scales.

use gsvit_tensor::{BatchStats, ConvGeometry, Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{join, seeded, trunc_normal, zeros_param, BatchNorm, Linear, Module, Role, SeBlock, SeededRng, INIT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeconvStage {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvStage {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride, pad }
    }

    /// Parses `in:out:kernel:stride:pad`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad deconv stage '{s}' (expected in:out:kernel:stride:pad)")))?;
        match parts[..] {
            [i, o, k, st, p] => Ok(Self::new(i, o, k, st, p)),
            _ => Err(Error::Config(format!("bad deconv stage '{s}' (expected in:out:kernel:stride:pad)"))),
        }
    }

    pub fn geometry(&self) -> Result<ConvGeometry> {
        Ok(ConvGeometry::new(self.kernel, self.stride, self.pad)?)
    }
}

impl std::fmt::Display for DeconvStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}:{}:{}", self.in_channels, self.out_channels, self.kernel, self.stride, self.pad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub latent_dim: usize,
    pub seed_channels: usize,
    pub seed_size: usize,
    pub stages: Vec<DeconvStage>,
    /// Spatial sizes after which an SE residual is applied.
    pub se_scales: Vec<usize>,
    pub se_ratio: usize,
    pub out_channels: usize,
    pub resolution: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        let chans = [256, 128, 64, 32, 16, 3];
        Self {
            latent_dim: 192,
            seed_channels: 256,
            seed_size: 7,
            stages: chans.windows(2).map(|w| DeconvStage::new(w[0], w[1], 4, 2, 1)).collect(),
            se_scales: vec![56, 112],
            se_ratio: 4,
            out_channels: 3,
            resolution: 224,
        }
    }
}

impl DecoderConfig {
    /// 64×64 variant paired with [`crate::encoder::ModelConfig::small`].
    pub fn small() -> Self {
        let chans = [64, 32, 16, 8, 3];
        Self {
            latent_dim: 64,
            seed_channels: 64,
            seed_size: 4,
            stages: chans.windows(2).map(|w| DeconvStage::new(w[0], w[1], 4, 2, 1)).collect(),
            se_scales: vec![16, 32],
            se_ratio: 4,
            out_channels: 3,
            resolution: 64,
        }
    }

    /// Spatial size after each stage, by symbolic propagation.
    pub fn sizes(&self) -> Result<Vec<usize>> {
        let mut size = self.seed_size;
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, st) in self.stages.iter().enumerate() {
            size = st
                .geometry()?
                .transposed_out(size)
                .ok_or_else(|| Error::Config(format!("deconv stage {i} ({st}) yields an empty output")))?;
            out.push(size);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.seed_channels == 0 || self.seed_size == 0 {
            return Err(Error::Config("decoder latent_dim, seed_channels and seed_size must be positive".into()));
        }
        let Some(last) = self.stages.last() else {
            return Err(Error::Config("decoder needs at least one deconv stage".into()));
        };
        let mut channels = self.seed_channels;
        for (i, st) in self.stages.iter().enumerate() {
            if st.in_channels != channels || st.out_channels == 0 {
                return Err(Error::Config(format!(
                    "deconv stage {i} ({st}) expects {} input channels but receives {channels}",
                    st.in_channels
                )));
            }
            channels = st.out_channels;
        }
        if last.out_channels != self.out_channels {
            return Err(Error::Config(format!(
                "final deconv emits {} channels, configured output has {}",
                last.out_channels, self.out_channels
            )));
        }
        let sizes = self.sizes()?;
        if *sizes.last().expect("non-empty") != self.resolution {
            return Err(Error::Config(format!(
                "deconv ladder produces {}x{0}, configured resolution is {}",
                sizes.last().expect("non-empty"),
                self.resolution
            )));
        }
        if self.se_scales.len() != 2 || self.se_scales[0] == self.se_scales[1] {
            return Err(Error::Config(format!("decoder needs exactly two distinct SE scales, got {:?}", self.se_scales)));
        }
        for &scale in &self.se_scales {
            let stage = sizes[..sizes.len() - 1].iter().position(|&s| s == scale).ok_or_else(|| {
                Error::Config(format!("SE scale {scale} is not the output size of any intermediate stage {sizes:?}"))
            })?;
            let c = self.stages[stage].out_channels;
            if self.se_ratio == 0 || c % self.se_ratio != 0 {
                return Err(Error::Config(format!(
                    "SE at scale {scale}: {c} channels not divisible by ratio {}",
                    self.se_ratio
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecoderStage<E: Scalar> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub geometry: ConvGeometry,
    /// Absent on the final stage.
    pub norm: Option<BatchNorm<E>>,
    pub se: Option<SeBlock<E>>,
}

#[derive(Debug, Clone)]
pub struct Decoder<E: Scalar = f32> {
    pub config: DecoderConfig,
    pub fc: Linear<E>,
    pub fc_norm: BatchNorm<E>,
    pub stages: Vec<DecoderStage<E>>,
}

impl<E: Scalar> Decoder<E> {
    pub fn new(config: &DecoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let seed = config.seed_channels * config.seed_size * config.seed_size;
        let fc = Linear::new(config.latent_dim, seed, true, rng);
        let sizes = config.sizes()?;
        let n = config.stages.len();
        let mut stages = Vec::with_capacity(n);
        for (i, st) in config.stages.iter().enumerate() {
            let weight = trunc_normal(&[st.in_channels, st.out_channels, st.kernel, st.kernel], INIT_STD, rng);
            let last = i + 1 == n;
            let se = if !last && config.se_scales.contains(&sizes[i]) {
                Some(SeBlock::new(st.out_channels, config.se_ratio, rng)?)
            } else {
                None
            };
            stages.push(DecoderStage {
                weight,
                bias: zeros_param(&[st.out_channels]),
                geometry: st.geometry()?,
                norm: (!last).then(|| BatchNorm::new(st.out_channels)),
                se,
            });
        }
        Ok(Self { config: config.clone(), fc, fc_norm: BatchNorm::new(seed), stages })
    }

    pub fn from_seed(config: &DecoderConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut seeded(seed))
    }

    /// Frames `[B, 3, H, W]` in (0, 1) from latents `[B, d_latent]`. In
    /// training mode the batch statistics of every norm are returned in
    /// visiting order for [`Decoder::update_running`].
    pub fn forward(&self, tape: &Tape<E>, latent: Var, train: bool) -> Result<(Var, Vec<BatchStats<E>>)> {
        let s = tape.shape(latent);
        let c = &self.config;
        if s.len() != 2 || s[1] != c.latent_dim {
            return Err(Error::Config(format!("decoder expects [B, {}] latents, got {s:?}", c.latent_dim)));
        }
        let mut stats = Vec::new();
        let h = self.fc.forward(tape, latent)?;
        let (h, st) = self.fc_norm.forward(tape, h, train)?;
        stats.extend(st);
        let h = tape.gelu(h)?;
        let mut x = tape.reshape(h, &[s[0], c.seed_channels, c.seed_size, c.seed_size])?;
        for stage in &self.stages {
            let (w, b) = (tape.leaf(&stage.weight), tape.leaf(&stage.bias));
            x = tape.conv_transpose2d(x, w, Some(b), stage.geometry)?;
            match &stage.norm {
                Some(norm) => {
                    let (y, st) = norm.forward(tape, x, train)?;
                    stats.extend(st);
                    x = tape.relu(y)?;
                    if let Some(se) = &stage.se {
                        let gated = se.forward(tape, x)?;
                        x = tape.add(x, gated)?;
                    }
                }
                None => x = tape.sigmoid(x)?,
            }
        }
        Ok((x, stats))
    }

    pub fn update_running(&mut self, stats: &[BatchStats<E>]) {
        let mut it = stats.iter();
        let norms = std::iter::once(&mut self.fc_norm).chain(self.stages.iter_mut().filter_map(|s| s.norm.as_mut()));
        for norm in norms {
            if let Some(s) = it.next() {
                norm.update_running(s);
            }
        }
    }

    /// Evaluation-mode reconstruction of one latent `[d_latent]`.
    pub fn decode(&self, latent: &Tensor<E>) -> Result<Tensor<E>> {
        let tape = Tape::no_grad();
        let z = tape.constant(latent.reshape([1, self.config.latent_dim])?);
        let (y, _) = self.forward(&tape, z, false)?;
        let c = &self.config;
        Ok(tape.tensor(y).reshape([c.out_channels, c.resolution, c.resolution])?)
    }
}

impl<E: Scalar> Module<E> for Decoder<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        self.fc.visit(&join(prefix, "fc"), f);
        self.fc_norm.visit(&join(prefix, "fc_norm"), f);
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stages.{i}"));
            f(&join(&p, "weight"), &s.weight, Role::Param);
            f(&join(&p, "bias"), &s.bias, Role::Param);
            if let Some(n) = &s.norm {
                n.visit(&join(&p, "norm"), f);
            }
            if let Some(se) = &s.se {
                se.visit(&join(&p, "se"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        self.fc.visit_mut(&join(prefix, "fc"), f);
        self.fc_norm.visit_mut(&join(prefix, "fc_norm"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stages.{i}"));
            f(&join(&p, "weight"), &mut s.weight, Role::Param);
            f(&join(&p, "bias"), &mut s.bias, Role::Param);
            if let Some(n) = &mut s.norm {
                n.visit_mut(&join(&p, "norm"), f);
            }
            if let Some(se) = &mut s.se {
                se.visit_mut(&join(&p, "se"), f);
            }
        }
    }
}

/// Mean squared error between equally shaped frames.
pub fn reconstruction_loss<E: Scalar>(tape: &Tape<E>, pred: Var, target: Var) -> Result<Var> {
    Ok(tape.mse(pred, target)?)
}
