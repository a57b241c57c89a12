//! Phase-classification head: hidden layers of Linear, ELU, LayerNorm and
//! dropout, then a linear output layer.

use gsvit_tensor::{Tape, Tensor, Var};

use crate::config::HeadConfig;
use crate::error::{Error, Result};
use crate::nn::{join, Activation, LayerNorm, Linear, Module, Role, SeededRng};

#[derive(Debug, Clone)]
pub struct HiddenLayer {
    pub linear: Linear<f32>,
    pub norm: LayerNorm<f32>,
}

#[derive(Debug, Clone)]
pub struct PhaseHead {
    pub hidden: Vec<HiddenLayer>,
    pub out: Linear<f32>,
    pub dropout: f64,
}

impl PhaseHead {
    pub fn new(input: usize, cfg: &HeadConfig, rng: &mut SeededRng) -> Result<Self> {
        if input == 0 || cfg.classes == 0 || cfg.hidden.contains(&0) {
            return Err(Error::Config("head widths must be positive".into()));
        }
        let mut width = input;
        let mut hidden = Vec::with_capacity(cfg.hidden.len());
        for &h in &cfg.hidden {
            hidden.push(HiddenLayer { linear: Linear::new(width, h, true, rng), norm: LayerNorm::new(h) });
            width = h;
        }
        Ok(Self { hidden, out: Linear::new(width, cfg.classes, true, rng), dropout: cfg.dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map_or(self.out.input_dim(), |l| l.linear.input_dim())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.hidden.iter().map(|l| l.linear.output_dim()));
        w.push(self.out.output_dim());
        w
    }

    /// Logits `[B, classes]` for latents `[B, d]`. Dropout is active only when `train`.
    pub fn forward(&self, tape: &Tape<f32>, x: Var, train: bool, rng: &mut SeededRng) -> Result<Var> {
        let mut h = x;
        for layer in &self.hidden {
            h = layer.linear.forward(tape, h)?;
            h = Activation::Elu.apply(tape, h)?;
            h = layer.norm.forward(tape, h)?;
            h = tape.dropout(h, self.dropout, train, rng)?;
        }
        self.out.forward(tape, h)
    }

    /// Eval-mode class predictions for latents `[B, d]`.
    pub fn predict(&self, latents: &Tensor<f32>, rng: &mut SeededRng) -> Result<Vec<usize>> {
        let tape = Tape::no_grad();
        let x = tape.constant(latents.clone());
        let logits = tape.tensor(self.forward(&tape, x, false, rng)?);
        let k = self.out.output_dim();
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
            })
            .collect())
    }
}

impl Module<f32> for PhaseHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<f32>, Role)) {
        for (i, l) in self.hidden.iter().enumerate() {
            l.linear.visit(&join(prefix, &format!("hidden.{i}.linear")), f);
            l.norm.visit(&join(prefix, &format!("hidden.{i}.norm")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<f32>, Role)) {
        for (i, l) in self.hidden.iter_mut().enumerate() {
            l.linear.visit_mut(&join(prefix, &format!("hidden.{i}.linear")), f);
            l.norm.visit_mut(&join(prefix, &format!("hidden.{i}.norm")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
