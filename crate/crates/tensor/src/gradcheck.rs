//! Central finite-difference gradient oracle for 64-bit graphs.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Coordinates probed for a tensor of `n` elements: all of them, or `max`
/// evenly spaced ones.
pub fn probe_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|t| t * n / max).collect()
    }
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2·eps` for each probed coordinate `i`.
///
/// `set` writes a value into coordinate `i`; `eval` recomputes the scalar
/// objective from scratch. The original value is restored afterwards.
pub fn central_differences(
    indices: &[usize],
    eps: f64,
    mut get: impl FnMut(usize) -> f64,
    mut set: impl FnMut(usize, f64),
    mut eval: impl FnMut() -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = get(i);
        set(i, orig + eps);
        let plus = eval()?;
        set(i, orig - eps);
        let minus = eval()?;
        set(i, orig);
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Relative error per input tensor.
    pub errors: Vec<f64>,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares tape gradients of `f(inputs)` against central differences.
///
/// `f` must build a scalar from the given variables and be deterministic.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, max_coords: usize, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_requires_grad(true)).collect();
    let tape = Tape::new();
    let vars: Vec<Var> = work.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = work
        .iter()
        .map(|t| grads.take(t).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()).expect("valid shape")))
        .collect();

    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t)).collect();
        let l = f(&tape, &vars)?;
        let v = tape.value(l).item()?;
        Ok(v)
    };

    let mut errors = Vec::with_capacity(work.len());
    let mut coordinates = 0;
    for k in 0..work.len() {
        let idx = probe_indices(work[k].numel(), max_coords);
        coordinates += idx.len();
        let cell = std::cell::RefCell::new(&mut work);
        let numeric = central_differences(
            &idx,
            eps,
            |i| cell.borrow()[k].data()[i],
            |i, v| cell.borrow_mut()[k].data_mut()[i] = v,
            || eval(&cell.borrow()),
        )?;
        let a: Vec<f64> = idx.iter().map(|&i| analytic[k].data()[i]).collect();
        errors.push(relative_error(&a, &numeric));
    }
    Ok(GradCheckReport { errors, coordinates })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // exp with a deliberately wrong derivative must fail the check.
        let x = Tensor::<f64>::from_f64([3], &[0.1, -0.4, 0.9]).unwrap();
        let good = check_gradients(&[x.clone()], 1e-3, 16, |t, v| {
            let y = t.exp(v[0])?;
            t.sum(y)
        })
        .unwrap();
        assert!(good.max_error() < 1e-6);
        let bad = check_gradients(&[x], 1e-3, 16, |t, v| {
            let y = t.unary(v[0], |a| a.exp(), |_, y| 2.0 * y)?;
            t.sum(y)
        })
        .unwrap();
        assert!(bad.max_error() > 0.1);
    }
}
