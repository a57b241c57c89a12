//! Pre-training, fine-tuning, phase-head training and phase evaluation.

use std::time::Instant;

use gsvit_tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::Config;
use crate::decoder::Decoder;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::io::corpus::FrameCorpus;
use crate::io::report::Report;
use crate::nn::{checksum, seeded, set_trainable, SeededRng};
use crate::train::augment::AugmentParams;
use crate::train::head::PhaseHead;
use crate::train::metrics::{aggregate, video_metrics, PhaseMetrics};
use crate::train::optim::{lr_at, Adam};
use crate::train::pairs::{build_frame_pairs, FramePair};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub kind: String,
    pub seed: u64,
    pub losses: Vec<f64>,
    pub step_ms: Vec<f64>,
    /// Learning rate used at each step.
    pub lrs: Vec<f64>,
    pub metrics: Vec<(String, String)>,
    pub config: String,
}

impl TrainReport {
    fn new(kind: &str, seed: u64, cfg: &Config) -> Self {
        Self { kind: kind.into(), seed, config: cfg.to_text(), ..Self::default() }
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    /// Mean of the last ten step losses.
    pub fn final_loss(&self) -> Option<f64> {
        let n = self.losses.len().min(10);
        (n > 0).then(|| self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64)
    }

    pub fn to_report(&self) -> Report {
        let mut r = Report::default();
        r.put("kind", &self.kind);
        r.put("seed", self.seed);
        r.put("steps", self.losses.len());
        if let (Some(a), Some(b)) = (self.initial_loss(), self.final_loss()) {
            r.put("initial_loss", format!("{a:?}"));
            r.put("final_loss", format!("{b:?}"));
        }
        for (k, v) in &self.metrics {
            r.put(k, v);
        }
        r.put_config(&self.config);
        r.put_series("loss", self.losses.clone());
        r.put_series("lr", self.lrs.clone());
        r.put_series("step_ms", self.step_ms.clone());
        r
    }
}

/// Stacks equally shaped `[c, H, W]` frames into `[B, c, H, W]`.
pub fn stack(frames: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = frames.first().ok_or_else(|| Error::Config("cannot stack an empty batch".into()))?;
    let mut shape = vec![frames.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.numel() * frames.len());
    for f in frames {
        data.extend_from_slice(f.data());
    }
    Ok(Tensor::new(shape, data)?)
}

fn check_frames(corpus: &FrameCorpus, cfg: &Config) -> Result<()> {
    let want = [cfg.encoder.in_channels, cfg.encoder.resolution, cfg.encoder.resolution];
    for v in &corpus.videos {
        if let Some(f) = v.frames.first() {
            if f.shape() != want {
                return Err(Error::Data(format!(
                    "{}: frames are {:?}, model expects {want:?}",
                    v.frame_path(0).display(),
                    f.shape()
                )));
            }
        }
    }
    Ok(())
}

pub fn corpus_pairs(corpus: &FrameCorpus) -> Result<Vec<FramePair>> {
    let mut out = Vec::new();
    for (i, v) in corpus.videos.iter().enumerate() {
        out.extend(build_frame_pairs(i, v.frames.len(), v.fps)?);
    }
    Ok(out)
}

fn pair_batch(corpus: &FrameCorpus, pairs: &[FramePair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let inputs: Vec<_> = pairs.iter().map(|p| &corpus.videos[p.video].frames[p.input]).collect();
    let targets: Vec<_> = pairs.iter().map(|p| &corpus.videos[p.video].frames[p.target]).collect();
    Ok((stack(&inputs)?, stack(&targets)?))
}

/// Encoder and reconstruction decoder trained together.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: Encoder<f32>,
    pub decoder: Decoder<f32>,
}

impl Autoencoder {
    pub fn init(cfg: &Config, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { encoder: Encoder::new(&cfg.encoder, rng)?, decoder: Decoder::new(&cfg.decoder, rng)? })
    }

    pub fn checkpoint(&self, cfg: &Config) -> Checkpoint {
        let mut c = Checkpoint::new(cfg.to_text());
        c.add_module("encoder", &self.encoder);
        c.add_module("decoder", &self.decoder);
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &Config) -> Result<Self> {
        let mut m = Self::init(cfg, &mut seeded(0))?;
        ckpt.load_module("encoder", &mut m.encoder)?;
        ckpt.load_module("decoder", &mut m.decoder)?;
        Ok(m)
    }

    /// One optimizer step on the reconstruction loss; returns the loss.
    pub fn step(&mut self, adam: &mut Adam, input: Tensor<f32>, target: Tensor<f32>, lr: f64, step: usize) -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(input);
        let z = self.encoder.forward(&tape, x)?;
        let (y, stats) = self.decoder.forward(&tape, z, true)?;
        let t = tape.constant(target);
        let loss = tape.mse(y, t)?;
        let value = f64::from(tape.value(loss).item()?);
        if !value.is_finite() {
            return Err(Error::Numeric { step, lr, msg: format!("reconstruction loss is {value}") });
        }
        let grads = tape.backward(loss)?;
        adam.step(&mut [&mut self.encoder, &mut self.decoder], &grads, lr);
        self.decoder.update_running(&stats);
        Ok(value)
    }

    /// Mean evaluation-mode reconstruction loss over `pairs`.
    pub fn eval_loss(&self, corpus: &FrameCorpus, pairs: &[FramePair], batch: usize) -> Result<f64> {
        let mut total = 0.0;
        for chunk in pairs.chunks(batch.max(1)) {
            let (input, target) = pair_batch(corpus, chunk)?;
            let tape = Tape::no_grad();
            let x = tape.constant(input);
            let z = self.encoder.forward(&tape, x)?;
            let (y, _) = self.decoder.forward(&tape, z, false)?;
            let t = tape.constant(target);
            let l = tape.mse(y, t)?;
            total += f64::from(tape.value(l).item()?) * chunk.len() as f64;
        }
        Ok(total / pairs.len() as f64)
    }
}

/// Next-frame pre-training with batches sampled uniformly from all pairs.
pub fn pretrain(corpus: &FrameCorpus, cfg: &Config, steps: usize, seed: u64) -> Result<(Checkpoint, TrainReport)> {
    let mut rng = seeded(seed);
    let mut model = Autoencoder::init(cfg, &mut rng)?;
    check_frames(corpus, cfg)?;
    let pairs = corpus_pairs(corpus)?;
    if pairs.is_empty() {
        return Err(Error::Data(format!("{}: corpus yields no frame pairs", corpus.root.display())));
    }
    let mut adam = Adam::new(cfg.train.adam);
    let mut report = TrainReport::new("pretrain", seed, cfg);
    let lr = cfg.pretrain.lr;
    for step in 0..steps {
        let batch: Vec<FramePair> = (0..cfg.pretrain.batch).map(|_| pairs[rng.random_range(0..pairs.len())]).collect();
        let (input, target) = pair_batch(corpus, &batch)?;
        let t0 = Instant::now();
        let loss = model.step(&mut adam, input, target, lr, step)?;
        report.step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        report.losses.push(loss);
        report.lrs.push(lr);
    }
    report.metrics.push(("pairs".into(), pairs.len().to_string()));
    Ok((model.checkpoint(cfg), report))
}

/// One pass over the pairs of videos tagged `procedure`, in seeded order.
pub fn finetune(
    ckpt: &Checkpoint,
    corpus: &FrameCorpus,
    procedure: &str,
    cfg: &Config,
    seed: u64,
) -> Result<(Checkpoint, TrainReport)> {
    let filtered = corpus.filter_procedure(procedure);
    let mut pairs = corpus_pairs(&filtered)?;
    if pairs.is_empty() {
        return Err(Error::Data(format!("no frame pairs for procedure '{procedure}'")));
    }
    check_frames(&filtered, cfg)?;
    let mut model = Autoencoder::from_checkpoint(ckpt, cfg)?;
    let mut rng = seeded(seed);
    pairs.shuffle(&mut rng);
    let mut adam = Adam::new(cfg.train.adam);
    let mut report = TrainReport::new("finetune", seed, cfg);
    let lr = cfg.finetune.lr;
    for (step, chunk) in pairs.chunks(cfg.finetune.batch).enumerate() {
        let (input, target) = pair_batch(&filtered, chunk)?;
        let t0 = Instant::now();
        let loss = model.step(&mut adam, input, target, lr, step)?;
        report.step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        report.losses.push(loss);
        report.lrs.push(lr);
    }
    report.metrics.push(("procedure".into(), procedure.into()));
    report.metrics.push(("pairs".into(), pairs.len().to_string()));
    Ok((model.checkpoint(cfg), report))
}

/// Frozen encoder plus trained head.
#[derive(Debug, Clone)]
pub struct PhaseModel {
    pub encoder: Encoder<f32>,
    pub head: PhaseHead,
}

impl PhaseModel {
    pub fn checkpoint(&self, cfg: &Config) -> Checkpoint {
        let mut c = Checkpoint::new(cfg.to_text());
        c.add_module("encoder", &self.encoder);
        c.add_module("head", &self.head);
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &Config) -> Result<Self> {
        let mut encoder = Encoder::from_seed(&cfg.encoder, 0)?;
        ckpt.load_module("encoder", &mut encoder)?;
        set_trainable(&mut encoder, false);
        let mut head = PhaseHead::new(cfg.encoder.latent_dim, &cfg.head, &mut seeded(0))?;
        ckpt.load_module("head", &mut head)?;
        Ok(Self { encoder, head })
    }

    /// Phase prediction for each of the given single frames.
    pub fn predict(&self, frames: &[&Tensor<f32>]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(64) {
            let z = self.encoder.encode_batch(&stack(chunk)?)?;
            out.extend(self.head.predict(&z, &mut seeded(0))?);
        }
        Ok(out)
    }
}

/// Trains a phase head over a frozen encoder loaded from `encoder_ckpt`.
pub fn train_phase(
    encoder_ckpt: &Checkpoint,
    corpus: &FrameCorpus,
    cfg: &Config,
    epochs: usize,
    seed: u64,
) -> Result<(PhaseModel, TrainReport)> {
    cfg.validate()?;
    check_frames(corpus, cfg)?;
    let mut encoder = Encoder::from_seed(&cfg.encoder, 0)?;
    encoder_ckpt.load_module("encoder", &mut encoder)?;
    set_trainable(&mut encoder, false);
    let before = checksum(&encoder);

    let mut samples: Vec<(usize, usize, usize)> = Vec::new();
    for (vi, v) in corpus.videos.iter().enumerate() {
        samples.extend(v.labeled().map(|(f, p)| (vi, f, p)));
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: corpus has no labeled frames", corpus.root.display())));
    }
    if let Some(&(vi, f, p)) = samples.iter().find(|s| s.2 >= cfg.head.classes) {
        return Err(Error::Data(format!(
            "{}: phase id {p} outside [0, {})",
            corpus.videos[vi].frame_path(f).display(),
            cfg.head.classes
        )));
    }

    let mut rng = seeded(seed);
    let mut head = PhaseHead::new(cfg.encoder.latent_dim, &cfg.head, &mut rng)?;
    let mut adam = Adam::new(cfg.train.adam);
    let mut report = TrainReport::new("train-phase", seed, cfg);
    let mut step = 0usize;
    for epoch in 0..epochs {
        let lr = lr_at(cfg.train.lr, cfg.train.gamma, epoch);
        samples.shuffle(&mut rng);
        for chunk in samples.chunks(cfg.train.batch) {
            let frames: Vec<Tensor<f32>> = chunk
                .iter()
                .map(|&(v, f, _)| {
                    let frame = &corpus.videos[v].frames[f];
                    if cfg.augment.enabled {
                        AugmentParams::sample(&cfg.augment, &mut rng).apply(frame)
                    } else {
                        frame.clone()
                    }
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|s| s.2).collect();
            let t0 = Instant::now();
            let latents = encoder.encode_batch(&stack(&frames.iter().collect::<Vec<_>>())?)?;
            let tape = Tape::new();
            let z = tape.constant(latents);
            let logits = head.forward(&tape, z, true, &mut rng)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = f64::from(tape.value(loss).item()?);
            if !value.is_finite() {
                return Err(Error::Numeric { step, lr, msg: format!("classification loss is {value}") });
            }
            let grads = tape.backward(loss)?;
            adam.step(&mut [&mut head], &grads, lr);
            report.step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            report.losses.push(value);
            report.lrs.push(lr);
            step += 1;
        }
    }
    let after = checksum(&encoder);
    if after != before {
        return Err(Error::Numeric { step, lr: 0.0, msg: "frozen encoder weights changed during training".into() });
    }
    report.metrics.push(("epochs".into(), epochs.to_string()));
    report.metrics.push(("labeled_frames".into(), samples.len().to_string()));
    report.metrics.push(("encoder_checksum".into(), format!("{before:08x}")));
    Ok((PhaseModel { encoder, head }, report))
}

/// Per-video metrics of single-frame predictions over every labeled frame.
pub fn evaluate_phase(model: &PhaseModel, corpus: &FrameCorpus, classes: usize) -> Result<PhaseMetrics> {
    let mut per_video = Vec::new();
    let mut skipped = Vec::new();
    for v in &corpus.videos {
        let labeled: Vec<(usize, usize)> = v.labeled().collect();
        if labeled.is_empty() {
            skipped.push(v.name.clone());
            continue;
        }
        let frames: Vec<&Tensor<f32>> = labeled.iter().map(|&(f, _)| &v.frames[f]).collect();
        let truth: Vec<usize> = labeled.iter().map(|&(_, p)| p).collect();
        let pred = model.predict(&frames)?;
        if let Some(m) = video_metrics(&truth, &pred, classes) {
            per_video.push((v.name.clone(), m));
        }
    }
    if per_video.is_empty() {
        return Err(Error::Data(format!("{}: no video has phase labels", corpus.root.display())));
    }
    Ok(aggregate(per_video, skipped))
}

pub fn metrics_report(m: &PhaseMetrics, cfg: &Config) -> Report {
    let mut r = Report::default();
    r.put("kind", "eval-phase");
    r.put("videos", m.per_video.len());
    r.put("skipped_videos", m.skipped.len());
    for (name, s) in [("accuracy", m.accuracy), ("precision", m.precision), ("recall", m.recall)] {
        r.put(&format!("{name}_mean"), format!("{:?}", s.mean));
        r.put(&format!("{name}_std"), format!("{:?}", s.std));
    }
    for (v, vm) in &m.per_video {
        r.put(&format!("video.{v}"), format!("accuracy={} precision={} recall={}", vm.accuracy, vm.precision, vm.recall));
    }
    for v in &m.skipped {
        r.put("skipped", v);
    }
    r.put_config(&cfg.to_text());
    r
}
