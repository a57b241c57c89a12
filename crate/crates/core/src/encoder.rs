//! Vision transformer encoder: patch embedding, class token, positional
//! embedding, and stages of sandwich blocks built on cascaded group attention.

use gsvit_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{
    count_module_params, join, seeded, set_trainable, trunc_normal, Activation, AttentionHeadWeights, LayerNorm,
    Linear, Mlp, Module, ParamCount, Role, SeededRng, INIT_STD,
};

/// How the latent vector is read out of the final token state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Final class-token row.
    Class,
    /// Mean over patch tokens.
    Mean,
}

impl Readout {
    pub fn as_str(self) -> &'static str {
        match self {
            Readout::Class => "class",
            Readout::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "class" => Ok(Readout::Class),
            "mean" => Ok(Readout::Mean),
            other => Err(Error::Config(format!("unknown readout '{other}' (expected class or mean)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub resolution: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    pub heads: Vec<usize>,
    /// MLP sub-layers on each side of the attention layer in a sandwich block.
    pub mlps_per_side: usize,
    pub mlp_ratio: usize,
    /// Per-stage multiplier on the MLP hidden width.
    pub realloc: Vec<f64>,
    pub latent_dim: usize,
    pub readout: Readout,
    /// Encoder parameters are excluded from training.
    pub frozen: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 224,
            in_channels: 3,
            patch_size: 16,
            widths: vec![64, 128, 192],
            blocks: vec![1, 2, 3],
            heads: vec![2, 4, 4],
            mlps_per_side: 2,
            mlp_ratio: 2,
            realloc: vec![1.0, 1.0, 1.0],
            latent_dim: 192,
            readout: Readout::Class,
            frozen: false,
        }
    }
}

impl ModelConfig {
    /// 64×64 variant for desk-scale training.
    pub fn small() -> Self {
        Self {
            resolution: 64,
            in_channels: 3,
            patch_size: 8,
            widths: vec![32, 48, 64],
            blocks: vec![1, 1, 1],
            heads: vec![2, 2, 2],
            mlps_per_side: 1,
            mlp_ratio: 2,
            realloc: vec![1.0, 1.0, 1.0],
            latent_dim: 64,
            readout: Readout::Class,
            frozen: false,
        }
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if n == 0 {
            return Err(Error::Config("encoder needs at least one stage".into()));
        }
        if self.blocks.len() != n || self.heads.len() != n || self.realloc.len() != n {
            return Err(Error::Config(format!(
                "encoder stage lists differ in length: widths {}, blocks {}, heads {}, realloc {}",
                n,
                self.blocks.len(),
                self.heads.len(),
                self.realloc.len()
            )));
        }
        if self.patch_size == 0 || self.in_channels == 0 || self.latent_dim == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("patch_size, in_channels, latent_dim and mlp_ratio must be positive".into()));
        }
        if self.resolution == 0 || self.resolution % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "resolution {} is not divisible by patch size {}",
                self.resolution, self.patch_size
            )));
        }
        for s in 0..n {
            if self.widths[s] == 0 {
                return Err(Error::Config(format!("stage {s} width must be positive")));
            }
            if self.blocks[s] > 0 {
                let h = self.heads[s];
                if h == 0 || self.widths[s] % h != 0 {
                    return Err(Error::Config(format!(
                        "stage {s}: width {} is not divisible by {} heads",
                        self.widths[s], h
                    )));
                }
                if !(self.realloc[s].is_finite() && self.realloc[s] > 0.0) || self.mlp_hidden(s) == 0 {
                    return Err(Error::Config(format!("stage {s}: invalid reallocation multiplier {}", self.realloc[s])));
                }
            }
        }
        Ok(())
    }

    pub fn mlp_hidden(&self, stage: usize) -> usize {
        (self.widths[stage] as f64 * self.mlp_ratio as f64 * self.realloc[stage]).round() as usize
    }

    /// Patch grid side at each stage.
    pub fn grids(&self) -> Vec<usize> {
        let mut g = self.resolution / self.patch_size;
        let mut out = Vec::with_capacity(self.widths.len());
        for s in 0..self.widths.len() {
            if s > 0 {
                g = g.div_ceil(2);
            }
            out.push(g);
        }
        out
    }

    pub fn tokens(&self) -> usize {
        let g = self.resolution / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn last_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

/// Splits `[B, c, H, W]` images into raster-ordered patches `[B, N, p·p·c]`.
/// Each patch is flattened row-major over `(row, col, channel)`.
pub fn patchify<E: Scalar>(tape: &Tape<E>, images: Var, p: usize) -> Result<Var> {
    let s = tape.shape(images);
    if s.len() != 4 {
        return Err(Error::Config(format!("images must be [B, c, H, W], got {s:?}")));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!("image {h}x{w} (H x W) is not divisible by patch size {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    let x = tape.reshape(images, &[b, c, gh, p, gw, p])?;
    let x = tape.permute(x, &[0, 2, 4, 3, 5, 1])?;
    Ok(tape.reshape(x, &[b, gh * gw, p * p * c])?)
}

/// Pre-norm residual MLP sub-layer.
#[derive(Debug, Clone)]
pub struct FfnUnit<E: Scalar> {
    pub norm: LayerNorm<E>,
    pub mlp: Mlp<E>,
}

impl<E: Scalar> FfnUnit<E> {
    fn new(width: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        Self { norm: LayerNorm::new(width), mlp: Mlp::new(width, hidden, Activation::Gelu, rng) }
    }

    pub fn forward(&self, tape: &Tape<E>, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, x)?;
        let h = self.mlp.forward(tape, h)?;
        Ok(tape.add(x, h)?)
    }
}

impl<E: Scalar> Module<E> for FfnUnit<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        self.norm.visit(&join(prefix, "norm"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

/// Cascaded group attention. Head `j` attends over the `j`-th channel split;
/// from the second head on, the previous head's output is added to the split
/// before attending. Head outputs are concatenated and projected.
#[derive(Debug, Clone)]
pub struct Cga<E: Scalar> {
    pub heads: Vec<AttentionHeadWeights<E>>,
    pub proj: Linear<E>,
}

impl<E: Scalar> Cga<E> {
    pub fn new(width: usize, heads: usize, rng: &mut SeededRng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!("attention width {width} is not divisible by {heads} heads")));
        }
        let split = width / heads;
        Ok(Self {
            heads: (0..heads).map(|_| AttentionHeadWeights::new(split, split, rng)).collect(),
            proj: Linear::new(width, width, true, rng),
        })
    }

    pub fn width(&self) -> usize {
        self.proj.input_dim()
    }

    /// `x` is `[N, d]` or `[B, N, d]`.
    pub fn forward(&self, tape: &Tape<E>, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        let axis = s.len().checked_sub(1).ok_or_else(|| Error::Config("attention input must have rank ≥ 1".into()))?;
        if s[axis] != self.width() {
            return Err(Error::Config(format!("attention expects width {}, got input {s:?}", self.width())));
        }
        let split = self.width() / self.heads.len();
        let splits = tape.split(x, axis, &vec![split; self.heads.len()])?;
        let mut outs: Vec<Var> = Vec::with_capacity(self.heads.len());
        for (j, (head, xs)) in self.heads.iter().zip(splits).enumerate() {
            let input = if j == 0 { xs } else { tape.add(xs, outs[j - 1])? };
            outs.push(head.forward(tape, input)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, axis)? };
        self.proj.forward(tape, cat)
    }
}

impl<E: Scalar> Module<E> for Cga<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        for (j, h) in self.heads.iter().enumerate() {
            h.visit(&join(prefix, &format!("heads.{j}")), f);
        }
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        for (j, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&join(prefix, &format!("heads.{j}")), f);
        }
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

/// MLPs, one attention layer, MLPs; every sub-layer is pre-norm residual.
#[derive(Debug, Clone)]
pub struct SandwichBlock<E: Scalar> {
    pub pre: Vec<FfnUnit<E>>,
    pub attn_norm: LayerNorm<E>,
    pub attn: Cga<E>,
    pub post: Vec<FfnUnit<E>>,
}

impl<E: Scalar> SandwichBlock<E> {
    pub fn new(width: usize, heads: usize, hidden: usize, mlps_per_side: usize, rng: &mut SeededRng) -> Result<Self> {
        let pre = (0..mlps_per_side).map(|_| FfnUnit::new(width, hidden, rng)).collect();
        let attn = Cga::new(width, heads, rng)?;
        let post = (0..mlps_per_side).map(|_| FfnUnit::new(width, hidden, rng)).collect();
        Ok(Self { pre, attn_norm: LayerNorm::new(width), attn, post })
    }

    pub fn forward(&self, tape: &Tape<E>, mut x: Var) -> Result<Var> {
        for unit in &self.pre {
            x = unit.forward(tape, x)?;
        }
        let h = self.attn_norm.forward(tape, x)?;
        let h = self.attn.forward(tape, h)?;
        x = tape.add(x, h)?;
        for unit in &self.post {
            x = unit.forward(tape, x)?;
        }
        Ok(x)
    }
}

impl<E: Scalar> Module<E> for SandwichBlock<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        for (i, u) in self.pre.iter().enumerate() {
            u.visit(&join(prefix, &format!("pre.{i}")), f);
        }
        self.attn_norm.visit(&join(prefix, "attn_norm"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        for (i, u) in self.post.iter().enumerate() {
            u.visit(&join(prefix, &format!("post.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        for (i, u) in self.pre.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("pre.{i}")), f);
        }
        self.attn_norm.visit_mut(&join(prefix, "attn_norm"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        for (i, u) in self.post.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("post.{i}")), f);
        }
    }
}

/// Halves the patch grid: each 2×2 neighbourhood is concatenated, normalized
/// and projected to the next width. Odd grids are zero-padded. The class
/// token has its own projection.
#[derive(Debug, Clone)]
pub struct PatchMerge<E: Scalar> {
    pub norm: LayerNorm<E>,
    pub reduce: Linear<E>,
    pub cls: Linear<E>,
}

impl<E: Scalar> PatchMerge<E> {
    fn new(width: usize, next: usize, rng: &mut SeededRng) -> Self {
        Self {
            norm: LayerNorm::new(4 * width),
            reduce: Linear::new(4 * width, next, true, rng),
            cls: Linear::new(width, next, true, rng),
        }
    }

    /// `[B, 1 + g·g, w]` to `[B, 1 + ⌈g/2⌉², w']`.
    pub fn forward(&self, tape: &Tape<E>, x: Var, grid: usize) -> Result<Var> {
        let s = tape.shape(x);
        let (b, w) = (s[0], s[2]);
        let cls = tape.slice(x, 1, 0, 1)?;
        let cls = self.cls.forward(tape, cls)?;
        let grid_tokens = tape.slice(x, 1, 1, grid * grid)?;
        let mut g = tape.reshape(grid_tokens, &[b, grid, grid, w])?;
        let half = grid.div_ceil(2);
        if grid % 2 == 1 {
            g = tape.pad_end(g, 1, 1)?;
            g = tape.pad_end(g, 2, 1)?;
        }
        let g = tape.reshape(g, &[b, half, 2, half, 2, w])?;
        let g = tape.permute(g, &[0, 1, 3, 2, 4, 5])?;
        let g = tape.reshape(g, &[b, half * half, 4 * w])?;
        let g = self.norm.forward(tape, g)?;
        let g = self.reduce.forward(tape, g)?;
        Ok(tape.concat(&[cls, g], 1)?)
    }
}

impl<E: Scalar> Module<E> for PatchMerge<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        self.norm.visit(&join(prefix, "norm"), f);
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.cls.visit(&join(prefix, "cls"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.cls.visit_mut(&join(prefix, "cls"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Stage<E: Scalar> {
    pub merge: Option<PatchMerge<E>>,
    pub blocks: Vec<SandwichBlock<E>>,
}

#[derive(Debug, Clone)]
pub struct Encoder<E: Scalar = f32> {
    pub config: ModelConfig,
    pub patch_embed: Linear<E>,
    pub cls_token: Tensor<E>,
    pub pos_embed: Tensor<E>,
    pub stages: Vec<Stage<E>>,
    pub latent_proj: Option<Linear<E>>,
}

impl<E: Scalar> Encoder<E> {
    pub fn new(config: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let w0 = config.widths[0];
        let patch_embed = Linear::new(config.patch_dim(), w0, true, rng);
        let cls_token = trunc_normal(&[w0], INIT_STD, rng);
        let pos_embed = trunc_normal(&[config.tokens() + 1, w0], INIT_STD, rng);
        let mut stages = Vec::with_capacity(config.stages());
        for s in 0..config.stages() {
            let merge = (s > 0).then(|| PatchMerge::new(config.widths[s - 1], config.widths[s], rng));
            let blocks = (0..config.blocks[s])
                .map(|_| {
                    SandwichBlock::new(config.widths[s], config.heads[s], config.mlp_hidden(s), config.mlps_per_side, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { merge, blocks });
        }
        let latent_proj =
            (config.latent_dim != config.last_width()).then(|| Linear::new(config.last_width(), config.latent_dim, true, rng));
        let mut enc = Self { config: config.clone(), patch_embed, cls_token, pos_embed, stages, latent_proj };
        if config.frozen {
            set_trainable(&mut enc, false);
        }
        Ok(enc)
    }

    pub fn from_seed(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut seeded(seed))
    }

    fn check_images(&self, tape: &Tape<E>, images: Var) -> Result<usize> {
        let s = tape.shape(images);
        let c = &self.config;
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.resolution || s[3] != c.resolution {
            return Err(Error::Config(format!(
                "encoder expects [B, {}, {}, {}] images, got {s:?}",
                c.in_channels, c.resolution, c.resolution
            )));
        }
        Ok(s[0])
    }

    /// Initial token state `[B, N + 1, w₀]`: class token, projected patches, plus positions.
    pub fn embed(&self, tape: &Tape<E>, images: Var) -> Result<Var> {
        let b = self.check_images(tape, images)?;
        let w0 = self.config.widths[0];
        let patches = patchify(tape, images, self.config.patch_size)?;
        let v = self.patch_embed.forward(tape, patches)?;
        let cls = tape.leaf(&self.cls_token);
        let cls = tape.reshape(cls, &[1, 1, w0])?;
        let cls = tape.broadcast_to(cls, &[b, 1, w0])?;
        let z = tape.concat(&[cls, v], 1)?;
        let pos = tape.leaf(&self.pos_embed);
        Ok(tape.add(z, pos)?)
    }

    /// Final token state `[B, 1 + N_last, w_last]`.
    pub fn tokens(&self, tape: &Tape<E>, images: Var) -> Result<Var> {
        let mut x = self.embed(tape, images)?;
        let grids = self.config.grids();
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(m) = &stage.merge {
                x = m.forward(tape, x, grids[s - 1])?;
            }
            for block in &stage.blocks {
                x = block.forward(tape, x)?;
            }
        }
        Ok(x)
    }

    /// Latent vectors `[B, d_latent]`.
    pub fn forward(&self, tape: &Tape<E>, images: Var) -> Result<Var> {
        let x = self.tokens(tape, images)?;
        let s = tape.shape(x);
        let (b, n, w) = (s[0], s[1], s[2]);
        let pooled = match self.config.readout {
            Readout::Class => {
                let row = tape.slice(x, 1, 0, 1)?;
                tape.reshape(row, &[b, w])?
            }
            Readout::Mean => {
                let rows = tape.slice(x, 1, 1, n - 1)?;
                tape.mean_axis(rows, 1, false)?
            }
        };
        match &self.latent_proj {
            Some(p) => p.forward(tape, pooled),
            None => Ok(pooled),
        }
    }

    /// Inference on a batch `[B, c, H, W]` without recording gradients.
    pub fn encode_batch(&self, images: &Tensor<E>) -> Result<Tensor<E>> {
        let tape = Tape::no_grad();
        let x = tape.constant(images.clone());
        let z = self.forward(&tape, x)?;
        Ok(tape.tensor(z))
    }

    /// Latent `[d_latent]` of one `[c, H, W]` image.
    pub fn encode(&self, image: &Tensor<E>) -> Result<Tensor<E>> {
        let mut shape = vec![1];
        shape.extend_from_slice(image.shape());
        let z = self.encode_batch(&image.reshape(shape)?)?;
        Ok(z.reshape([self.config.latent_dim])?)
    }
}

impl<E: Scalar> Module<E> for Encoder<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>, Role)) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), f);
        f(&join(prefix, "cls_token"), &self.cls_token, Role::Param);
        f(&join(prefix, "pos_embed"), &self.pos_embed, Role::Param);
        for (s, stage) in self.stages.iter().enumerate() {
            let sp = join(prefix, &format!("stages.{s}"));
            if let Some(m) = &stage.merge {
                m.visit(&join(&sp, "merge"), f);
            }
            for (i, b) in stage.blocks.iter().enumerate() {
                b.visit(&join(&sp, &format!("blocks.{i}")), f);
            }
        }
        if let Some(p) = &self.latent_proj {
            p.visit(&join(prefix, "latent_proj"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>, Role)) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), f);
        f(&join(prefix, "cls_token"), &mut self.cls_token, Role::Param);
        f(&join(prefix, "pos_embed"), &mut self.pos_embed, Role::Param);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            let sp = join(prefix, &format!("stages.{s}"));
            if let Some(m) = &mut stage.merge {
                m.visit_mut(&join(&sp, "merge"), f);
            }
            for (i, b) in stage.blocks.iter_mut().enumerate() {
                b.visit_mut(&join(&sp, &format!("blocks.{i}")), f);
            }
        }
        if let Some(p) = &mut self.latent_proj {
            p.visit_mut(&join(prefix, "latent_proj"), f);
        }
    }
}

/// Parameter count of the encoder a config describes.
pub fn count_params(config: &ModelConfig) -> Result<ParamCount> {
    let enc = Encoder::<f32>::from_seed(config, 0)?;
    Ok(count_module_params(&enc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_tensor;

    fn tiny() -> ModelConfig {
        ModelConfig {
            resolution: 16,
            in_channels: 3,
            patch_size: 4,
            widths: vec![8, 12],
            blocks: vec![1, 1],
            heads: vec![2, 3],
            mlps_per_side: 1,
            mlp_ratio: 2,
            realloc: vec![1.0, 1.5],
            latent_dim: 10,
            readout: Readout::Class,
            frozen: false,
        }
    }

    #[test]
    fn default_token_arithmetic() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tokens(), 196);
        assert_eq!(c.patch_dim(), 768);
        assert_eq!(c.grids(), vec![14, 7, 4]);
    }

    #[test]
    fn patchify_rejects_indivisible() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.constant(Tensor::zeros([1, 3, 10, 12]).unwrap());
        let err = patchify(&tape, x, 4).unwrap_err().to_string();
        assert!(err.contains("10x12") && err.contains('4'), "{err}");
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.heads[1] = 5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny();
        c.resolution = 18;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.blocks.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let c = tiny();
        let enc = Encoder::<f32>::from_seed(&c, 7).unwrap();
        let img = uniform_tensor::<f32>(&[3, 16, 16], 0.0, 1.0, &mut seeded(1));
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img.clone()).unwrap();
        assert_eq!(a.shape(), [10]);
        assert_eq!(a.data(), b.data());
        let wrong = Tensor::<f32>::zeros([3, 8, 8]).unwrap();
        assert!(enc.encode(&wrong).is_err());
    }

    #[test]
    fn odd_grid_merges_with_padding() {
        let mut c = tiny();
        c.resolution = 12;
        c.widths = vec![8, 12, 16];
        c.blocks = vec![0, 1, 0];
        c.heads = vec![1, 3, 1];
        c.realloc = vec![1.0; 3];
        assert_eq!(c.grids(), vec![3, 2, 1]);
        let enc = Encoder::<f64>::from_seed(&c, 3).unwrap();
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::zeros([2, 3, 12, 12]).unwrap());
        let t = enc.tokens(&tape, x).unwrap();
        assert_eq!(tape.shape(t), vec![2, 2, 16]);
    }

    #[test]
    fn frozen_config_has_no_tunable_params() {
        let mut c = tiny();
        c.frozen = true;
        let n = count_params(&c).unwrap();
        assert_eq!(n.tunable, 0);
        assert!(n.total > 0);
    }
}
