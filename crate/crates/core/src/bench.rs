//! Inference latency and throughput of the encoder forward pass.

use std::sync::{Barrier, Mutex};
use std::time::Instant;

use gsvit_tensor::Tensor;

use crate::config::Config;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::io::report::Report;
use crate::nn::{seeded, uniform_tensor};
use crate::train::metrics::mean_std;

/// Published reference figures, printed but never compared against.
pub const REFERENCE_LATENCY_MS: (f64, f64) = (12.1, 0.1);
pub const REFERENCE_IMAGES_PER_SEC: f64 = 10621.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    pub threads: usize,
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("bench batch must be at least 1".into()));
        }
        if self.warmup < 1 {
            return Err(Error::Config("bench warmup must be at least 1".into()));
        }
        if self.iters < 10 {
            return Err(Error::Config(format!("bench needs at least 10 iterations, got {}", self.iters)));
        }
        if self.threads == 0 || self.threads > self.batch {
            return Err(Error::Config(format!("bench threads must lie in 1..={} (the batch), got {}", self.batch, self.threads)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub options: BenchOptions,
    pub latencies_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub images_per_sec: f64,
    pub per_image_ms: f64,
    /// CRC-32 of each image's latent from the last iteration.
    pub digests: Vec<u32>,
}

impl BenchRun {
    pub fn from_latencies(options: BenchOptions, latencies_ms: Vec<f64>, digests: Vec<u32>) -> Self {
        let s = mean_std(&latencies_ms);
        let total_s = latencies_ms.iter().sum::<f64>() / 1e3;
        let images = (options.batch * latencies_ms.len()) as f64;
        Self {
            options,
            mean_ms: s.mean,
            std_ms: s.std,
            images_per_sec: images / total_s,
            per_image_ms: s.mean / options.batch as f64,
            latencies_ms,
            digests,
        }
    }

    fn put(&self, r: &mut Report, prefix: &str) {
        let o = &self.options;
        r.put(&format!("{prefix}batch"), o.batch);
        r.put(&format!("{prefix}warmup"), o.warmup);
        r.put(&format!("{prefix}iters"), o.iters);
        r.put(&format!("{prefix}threads"), o.threads);
        r.put(&format!("{prefix}mean_ms"), format!("{:?}", self.mean_ms));
        r.put(&format!("{prefix}std_ms"), format!("{:?}", self.std_ms));
        r.put(&format!("{prefix}images_per_sec"), format!("{:?}", self.images_per_sec));
        r.put(&format!("{prefix}per_image_ms"), format!("{:?}", self.per_image_ms));
        r.put_series(&format!("{prefix}latency_ms"), self.latencies_ms.clone());
        r.put_series(&format!("{prefix}digest"), self.digests.iter().map(|&d| f64::from(d)).collect());
    }
}

fn digest(latent: &[f32]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for v in latent {
        h.update(&v.to_le_bytes());
    }
    h.finalize()
}

/// Deterministic input batch `[batch, c, H, W]` in [0, 1].
pub fn synthetic_batch(cfg: &Config, batch: usize, seed: u64) -> Tensor<f32> {
    let e = &cfg.encoder;
    uniform_tensor(&[batch, e.in_channels, e.resolution, e.resolution], 0.0, 1.0, &mut seeded(seed))
}

/// Runs `warmup + iters` timed forward passes. With several threads each
/// worker encodes a contiguous slice of the batch; one iteration spans from
/// the common start until the slowest worker finishes.
pub fn run(encoder: &Encoder<f32>, images: &Tensor<f32>, options: BenchOptions) -> Result<BenchRun> {
    options.validate()?;
    if images.shape().first() != Some(&options.batch) {
        return Err(Error::Config(format!("bench input {:?} does not hold batch {}", images.shape(), options.batch)));
    }
    let n = options.threads;
    let per = images.numel() / options.batch;
    let bounds: Vec<(usize, usize)> = (0..n)
        .map(|t| (t * options.batch / n, (t + 1) * options.batch / n))
        .collect();
    let slices: Vec<Tensor<f32>> = bounds
        .iter()
        .map(|&(a, b)| {
            let mut shape = images.shape().to_vec();
            shape[0] = b - a;
            Tensor::new(shape, images.data()[a * per..b * per].to_vec()).expect("slice shape")
        })
        .collect();
    let total = options.warmup + options.iters;
    let start = Barrier::new(n + 1);
    let end = Barrier::new(n + 1);
    let outputs: Mutex<Vec<Option<Result<Tensor<f32>>>>> = Mutex::new((0..n).map(|_| None).collect());
    let mut latencies = Vec::with_capacity(options.iters);
    std::thread::scope(|scope| {
        for (t, slice) in slices.iter().enumerate() {
            let (start, end, outputs) = (&start, &end, &outputs);
            scope.spawn(move || {
                for _ in 0..total {
                    start.wait();
                    let out = encoder.encode_batch(slice);
                    outputs.lock().expect("worker output lock")[t] = Some(out);
                    end.wait();
                }
            });
        }
        for i in 0..total {
            start.wait();
            let t0 = Instant::now();
            end.wait();
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            if i >= options.warmup {
                latencies.push(ms);
            }
        }
    });
    let mut digests = Vec::with_capacity(options.batch);
    for out in outputs.into_inner().expect("worker output lock") {
        let z = out.expect("every worker ran")?;
        let d = z.shape()[1];
        digests.extend(z.data().chunks(d).map(digest));
    }
    Ok(BenchRun::from_latencies(options, latencies, digests))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub primary: BenchRun,
    /// Same settings at twice the batch.
    pub paired: Option<BenchRun>,
    /// Batch-1 run for comparing against the per-image time of `primary`.
    pub single: Option<BenchRun>,
    pub config: String,
}

impl BenchReport {
    pub fn to_report(&self) -> Report {
        let mut r = Report::default();
        r.put("kind", "bench");
        self.primary.put(&mut r, "");
        if let Some(p) = &self.paired {
            p.put(&mut r, "paired.");
            r.put("paired.throughput_ratio", format!("{:?}", p.images_per_sec / self.primary.images_per_sec));
        }
        if let Some(s) = &self.single {
            r.put("single.mean_ms", format!("{:?}", s.mean_ms));
            r.put("single.std_ms", format!("{:?}", s.std_ms));
            r.put("single.gap_ms", format!("{:?}", (s.mean_ms - self.primary.per_image_ms).abs()));
            r.put_series("single.latency_ms", s.latencies_ms.clone());
        }
        r.put("reference.latency_ms", format!("{}±{} (published GPU figure, not compared)", REFERENCE_LATENCY_MS.0, REFERENCE_LATENCY_MS.1));
        r.put("reference.images_per_sec", format!("{REFERENCE_IMAGES_PER_SEC} (published figure, not compared)"));
        r.put_config(&self.config);
        r
    }
}

/// Primary run plus optional paired (double batch) and batch-1 runs.
pub fn bench_inference(encoder: &Encoder<f32>, cfg: &Config, options: BenchOptions, paired: bool, seed: u64) -> Result<BenchReport> {
    options.validate()?;
    let primary = run(encoder, &synthetic_batch(cfg, options.batch, seed), options)?;
    let paired = if paired {
        let o = BenchOptions { batch: options.batch * 2, ..options };
        Some(run(encoder, &synthetic_batch(cfg, o.batch, seed), o)?)
    } else {
        None
    };
    let single = if options.batch > 1 {
        let o = BenchOptions { batch: 1, threads: 1, ..options };
        Some(run(encoder, &synthetic_batch(cfg, 1, seed), o)?)
    } else {
        None
    };
    Ok(BenchReport { primary, paired, single, config: cfg.to_text() })
}
