//! Oracles shared by the block tests and the acceptance harness. Every case
//! panics on failure.
#![allow(dead_code)]

use std::cell::RefCell;

use gsvit::decoder::{DecoderConfig, DeconvStage, Decoder};
use gsvit::encoder::{Cga, Encoder, ModelConfig, Readout, SandwichBlock};
use gsvit::nn::{attention, seeded, Activation, AttentionHeadWeights, Mlp, Module, Role, SeBlock, SeededRng};
use gsvit_tensor::gradcheck::{central_differences, probe_indices, relative_error};
use gsvit_tensor::{Tape, Tensor, Var};
use rand::Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const PARAM_PROBES: usize = 16;
const INPUT_PROBES: usize = 64;
/// Gradient norm below which the error is measured in absolute terms.
const VANISHING: f64 = 1e-6;

pub type Forward<'a, M> = dyn Fn(&M, &Tape<f64>, &[Var]) -> gsvit::Result<Var> + 'a;

pub fn random(r: &mut SeededRng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// Replaces every parameter with uniform values; norm scales stay near one.
pub fn randomize(m: &mut dyn Module<f64>, r: &mut SeededRng, scale: f64) {
    m.visit_mut("", &mut |name, t, role| {
        if role != Role::Param {
            return;
        }
        let near_one = name.ends_with("gamma");
        for v in t.data_mut() {
            let u = r.random_range(-scale..scale);
            *v = if near_one { 1.0 + u } else { u };
        }
    });
}

/// `sum(y ⊙ w)` with weights fixed by the output shape.
pub fn weighted(t: &Tape<f64>, y: Var) -> gsvit::Result<Var> {
    let shape = t.shape(y);
    let w = t.constant(random(&mut seeded(shape.iter().product::<usize>() as u64 ^ 0x51), &shape, 1.0));
    let p = t.mul(y, w)?;
    Ok(t.sum(p)?)
}

/// Relative error, or the absolute error scaled by [`VANISHING`] when both
/// gradients are that small (a bias ahead of a batch norm has none).
pub fn floored_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm(analytic).max(norm(numeric)) < VANISHING {
        let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
        norm(&diff) / VANISHING
    } else {
        relative_error(analytic, numeric)
    }
}

/// Relative error per input and per parameter tensor of `m`.
pub fn module_errors<M: Module<f64>>(m: &mut M, inputs: &[Tensor<f64>], f: &Forward<M>) -> Vec<(String, f64)> {
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_requires_grad(true)).collect();
    let tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(m, &tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let grad_of = |t: &Tensor<f64>| grads.get(t).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()).unwrap());
    let input_grads: Vec<Tensor<f64>> = leaves.iter().map(grad_of).collect();
    let mut param_grads: Vec<(String, Tensor<f64>)> = Vec::new();
    m.visit("", &mut |name, t, role| {
        if role == Role::Param {
            param_grads.push((name.to_string(), grad_of(t)));
        }
    });

    let state = RefCell::new((m, leaves));
    let eval = || {
        let s = state.borrow();
        let tape = Tape::no_grad();
        let vars: Vec<Var> = s.1.iter().map(|t| tape.leaf(t)).collect();
        let l = f(s.0, &tape, &vars).expect("forward pass");
        let v = tape.value(l).item();
        v
    };
    let mut out = Vec::new();
    for (k, g) in input_grads.iter().enumerate() {
        let idx = probe_indices(g.numel(), INPUT_PROBES);
        let numeric = central_differences(
            &idx,
            EPS,
            |i| state.borrow().1[k].data()[i],
            |i, v| state.borrow_mut().1[k].data_mut()[i] = v,
            eval,
        )
        .unwrap();
        let a: Vec<f64> = idx.iter().map(|&i| g.data()[i]).collect();
        out.push((format!("input{k}"), floored_error(&a, &numeric)));
    }
    for (k, (name, g)) in param_grads.iter().enumerate() {
        let idx = probe_indices(g.numel(), PARAM_PROBES);
        let access = |i: usize, write: Option<f64>| -> f64 {
            let mut s = state.borrow_mut();
            let mut seen = 0;
            let mut value = 0.0;
            s.0.visit_mut("", &mut |_, t, role| {
                if role != Role::Param {
                    return;
                }
                if seen == k {
                    match write {
                        Some(v) => t.data_mut()[i] = v,
                        None => value = t.data()[i],
                    }
                }
                seen += 1;
            });
            value
        };
        let numeric = central_differences(&idx, EPS, |i| access(i, None), |i, v| {
            access(i, Some(v));
        }, eval)
        .unwrap();
        let a: Vec<f64> = idx.iter().map(|&i| g.data()[i]).collect();
        out.push((name.clone(), floored_error(&a, &numeric)));
    }
    out
}

pub fn assert_module<M: Module<f64>>(what: &str, m: &mut M, inputs: &[Tensor<f64>], f: &Forward<M>) {
    let errs = module_errors(m, inputs, f);
    let worst = errs.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    assert!(worst.1 < TOL, "{what}: relative error {:.3e} on {}", worst.1, worst.0);
}

struct NoParams;

impl Module<f64> for NoParams {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<f64>, Role)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<f64>, Role)) {}
}

// Block gradient cases: three shapes each.

pub fn mlp_gradients() {
    let mut r = seeded(100);
    for (i, (shape, hidden)) in [(vec![3, 4], 5), (vec![2, 3, 6], 4), (vec![2, 2, 2, 3], 7)].into_iter().enumerate() {
        let d = *shape.last().unwrap();
        let act = [Activation::Gelu, Activation::Relu, Activation::Elu][i];
        let mut mlp = Mlp::<f64>::new(d, hidden, act, &mut r);
        randomize(&mut mlp, &mut r, 0.8);
        let x = random(&mut r, &shape, 1.0);
        assert_module(&format!("mlp {shape:?}"), &mut mlp, &[x], &|m, t, v| {
            let y = m.forward(t, v[0])?;
            weighted(t, y)
        });
    }
}

pub fn attention_gradients() {
    let mut r = seeded(101);
    for (q, k, dv) in [(vec![3, 4], vec![3, 4], 2), (vec![2, 5, 3], vec![2, 5, 3], 3), (vec![2, 4, 2], vec![2, 4, 2], 4)] {
        let mut v_shape = k.clone();
        *v_shape.last_mut().unwrap() = dv;
        let inputs = [random(&mut r, &q, 1.0), random(&mut r, &k, 1.0), random(&mut r, &v_shape, 1.0)];
        assert_module(&format!("attention q={q:?} k={k:?}"), &mut NoParams, &inputs, &|_, t, x| {
            let y = attention(t, x[0], x[1], x[2])?;
            weighted(t, y)
        });
    }
    for (n, d) in [(2, 3), (4, 2), (3, 5)] {
        let mut head = AttentionHeadWeights::<f64>::new(d, d, &mut r);
        randomize(&mut head, &mut r, 0.8);
        let x = random(&mut r, &[2, n, d], 1.0);
        assert_module(&format!("attention head N={n} d={d}"), &mut head, &[x], &|m, t, v| {
            let y = m.forward(t, v[0])?;
            weighted(t, y)
        });
    }
}

pub fn cga_gradients() {
    let mut r = seeded(102);
    for (shape, heads) in [(vec![3, 4], 1), (vec![2, 4, 6], 2), (vec![2, 5, 8], 4)] {
        let d = *shape.last().unwrap();
        let mut cga = Cga::<f64>::new(d, heads, &mut r).unwrap();
        randomize(&mut cga, &mut r, 0.7);
        let x = random(&mut r, &shape, 1.0);
        assert_module(&format!("cga {shape:?} h={heads}"), &mut cga, &[x], &|m, t, v| {
            let y = m.forward(t, v[0])?;
            weighted(t, y)
        });
    }
}

pub fn sandwich_gradients() {
    let mut r = seeded(103);
    for (shape, heads, side) in [(vec![2, 3, 4], 2, 0), (vec![1, 4, 6], 3, 1), (vec![2, 3, 4], 1, 2)] {
        let d = *shape.last().unwrap();
        let mut block = SandwichBlock::<f64>::new(d, heads, 2 * d, side, &mut r).unwrap();
        randomize(&mut block, &mut r, 0.6);
        let x = random(&mut r, &shape, 1.0);
        assert_module(&format!("sandwich {shape:?} mlps/side={side}"), &mut block, &[x], &|m, t, v| {
            let y = m.forward(t, v[0])?;
            weighted(t, y)
        });
    }
}

pub fn se_gradients() {
    let mut r = seeded(104);
    for shape in [[2, 4, 3, 3], [1, 8, 2, 5], [3, 4, 4, 4]] {
        let mut se = SeBlock::<f64>::new(shape[1], 4, &mut r).unwrap();
        randomize(&mut se, &mut r, 0.8);
        let x = random(&mut r, &shape, 1.0);
        assert_module(&format!("se {shape:?}"), &mut se, &[x], &|m, t, v| {
            let y = m.forward(t, v[0])?;
            weighted(t, y)
        });
    }
}

pub fn tiny_decoders() -> Vec<DecoderConfig> {
    vec![
        DecoderConfig {
            latent_dim: 3,
            seed_channels: 8,
            seed_size: 1,
            stages: vec![DeconvStage::new(8, 8, 4, 2, 1), DeconvStage::new(8, 4, 4, 2, 1), DeconvStage::new(4, 3, 4, 2, 1)],
            se_scales: vec![2, 4],
            se_ratio: 4,
            out_channels: 3,
            resolution: 8,
        },
        DecoderConfig {
            latent_dim: 4,
            seed_channels: 4,
            seed_size: 2,
            stages: vec![DeconvStage::new(4, 4, 3, 1, 1), DeconvStage::new(4, 4, 4, 2, 1), DeconvStage::new(4, 3, 3, 1, 0)],
            se_scales: vec![2, 4],
            se_ratio: 2,
            out_channels: 3,
            resolution: 6,
        },
        DecoderConfig {
            latent_dim: 2,
            seed_channels: 4,
            seed_size: 2,
            stages: vec![DeconvStage::new(4, 8, 2, 2, 0), DeconvStage::new(8, 4, 4, 2, 1), DeconvStage::new(4, 3, 2, 2, 0)],
            se_scales: vec![4, 8],
            se_ratio: 4,
            out_channels: 3,
            resolution: 16,
        },
    ]
}

/// MSE reconstruction loss of the decoder in training mode (batch statistics).
pub fn decoder_gradients() {
    let mut r = seeded(105);
    for (i, cfg) in tiny_decoders().into_iter().enumerate() {
        let mut dec = Decoder::<f64>::new(&cfg, &mut r).unwrap();
        randomize(&mut dec, &mut r, 0.5);
        let batch = 2 + i;
        let z = random(&mut r, &[batch, cfg.latent_dim], 1.0);
        let target = random(&mut r, &[batch, 3, cfg.resolution, cfg.resolution], 0.5).map(|v| v + 0.5);
        assert_module(&format!("decoder {:?}", cfg.stages), &mut dec, &[z], &|m, t, v| {
            let (y, _) = m.forward(t, v[0], true)?;
            let tv = t.constant(target.clone());
            Ok(t.mse(y, tv)?)
        });
    }
}

pub fn tiny_encoder(readout: Readout) -> ModelConfig {
    ModelConfig {
        resolution: 12,
        in_channels: 3,
        patch_size: 4,
        widths: vec![4, 6],
        blocks: vec![1, 1],
        heads: vec![2, 3],
        mlps_per_side: 1,
        mlp_ratio: 2,
        realloc: vec![1.0, 0.5],
        latent_dim: 5,
        readout,
        frozen: false,
    }
}

/// Whole encoder including patch merging over an odd grid.
pub fn encoder_gradients() {
    let mut r = seeded(106);
    for (readout, batch) in [(Readout::Class, 1), (Readout::Mean, 2), (Readout::Class, 2)] {
        let cfg = tiny_encoder(readout);
        let mut enc = Encoder::<f64>::new(&cfg, &mut r).unwrap();
        randomize(&mut enc, &mut r, 0.5);
        let x = random(&mut r, &[batch, 3, 12, 12], 1.0);
        assert_module(&format!("encoder {readout:?} batch={batch}"), &mut enc, &[x], &|m, t, v| {
            let y = m.forward(t, v[0])?;
            weighted(t, y)
        });
    }
}

pub const BLOCK_CASES: &[(&str, fn())] = &[
    ("mlp", mlp_gradients),
    ("attention", attention_gradients),
    ("cga", cga_gradients),
    ("sandwich", sandwich_gradients),
    ("se", se_gradients),
    ("decoder", decoder_gradients),
    ("encoder", encoder_gradients),
];

// Direct oracles.

pub fn mat(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let c = t.shape()[t.rank() - 1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

/// Softmax attention by explicit loops over query and key rows.
pub fn attention_oracle(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scale = 1.0 / (q[0].len() as f64).sqrt();
    let mut out = vec![vec![0.0; v[0].len()]; q.len()];
    for i in 0..q.len() {
        let scores: Vec<f64> = (0..k.len()).map(|j| (0..q[i].len()).map(|c| q[i][c] * k[j][c]).sum::<f64>() * scale).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..k.len() {
            for c in 0..v[0].len() {
                out[i][c] += e[j] / z * v[j][c];
            }
        }
    }
    out
}

/// Cascaded group attention written out term by term: head j sees split j
/// plus the previous head's output, heads are concatenated, then projected.
pub fn cga_oracle(cga: &Cga<f64>, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = cga.heads.len();
    let ds = x[0].len() / h;
    let mut prev: Option<Vec<Vec<f64>>> = None;
    let mut concat = vec![Vec::new(); x.len()];
    for (j, head) in cga.heads.iter().enumerate() {
        let mut xj: Vec<Vec<f64>> = x.iter().map(|row| row[j * ds..(j + 1) * ds].to_vec()).collect();
        if let Some(p) = &prev {
            for (r, pr) in xj.iter_mut().zip(p) {
                for (a, b) in r.iter_mut().zip(pr) {
                    *a += b;
                }
            }
        }
        let q = matmul(&xj, &mat(&head.wq));
        let k = matmul(&xj, &mat(&head.wk));
        let mut v = matmul(&xj, &mat(&head.wv));
        for row in &mut v {
            for (a, b) in row.iter_mut().zip(head.bv.data()) {
                *a += b;
            }
        }
        let e = attention_oracle(&q, &k, &v);
        for (c, row) in concat.iter_mut().zip(&e) {
            c.extend_from_slice(row);
        }
        prev = Some(e);
    }
    let mut out = matmul(&concat, &mat(&cga.proj.weight));
    if let Some(b) = &cga.proj.bias {
        for row in &mut out {
            for (a, bb) in row.iter_mut().zip(b.data()) {
                *a += bb;
            }
        }
    }
    out
}

pub fn max_diff(a: &[Vec<f64>], b: &Tensor<f64>) -> f64 {
    a.iter().flatten().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Parameter count summed layer by layer from the config alone.
pub fn count_oracle(c: &ModelConfig) -> usize {
    let linear = |i: usize, o: usize| i * o + o;
    let norm = |d: usize| 2 * d;
    let grid = c.resolution / c.patch_size;
    let mut total = linear(c.patch_size * c.patch_size * c.in_channels, c.widths[0]) + c.widths[0] + (grid * grid + 1) * c.widths[0];
    for s in 0..c.widths.len() {
        let w = c.widths[s];
        if s > 0 {
            let p = c.widths[s - 1];
            total += norm(4 * p) + linear(4 * p, w) + linear(p, w);
        }
        if c.blocks[s] == 0 {
            continue;
        }
        let hidden = (w as f64 * c.mlp_ratio as f64 * c.realloc[s]).round() as usize;
        let ffn = norm(w) + linear(w, hidden) + linear(hidden, w);
        let ds = w / c.heads[s];
        let attn = norm(w) + c.heads[s] * (3 * ds * ds + ds) + linear(w, w);
        total += c.blocks[s] * (2 * c.mlps_per_side * ffn + attn);
    }
    if c.latent_dim != *c.widths.last().unwrap() {
        total += linear(*c.widths.last().unwrap(), c.latent_dim);
    }
    total
}

/// Configs the parameter counter is checked against.
pub fn count_matrix() -> Vec<ModelConfig> {
    let mut v = vec![ModelConfig::default(), ModelConfig::small(), tiny_encoder(Readout::Class)];
    let mut c = ModelConfig::default();
    c.realloc = vec![1.5, 1.0, 0.5];
    c.mlps_per_side = 1;
    v.push(c);
    let mut c = ModelConfig::small();
    c.latent_dim = 48;
    c.blocks = vec![2, 0, 1];
    v.push(c);
    let mut c = ModelConfig::small();
    c.widths = vec![32];
    c.blocks = vec![0];
    c.heads = vec![1];
    c.realloc = vec![1.0];
    c.latent_dim = 32;
    v.push(c);
    v
}
