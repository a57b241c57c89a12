//! Randomized finite-difference checks for every differentiable op
//! (64-bit, eps = 1e-3, relative error < 1e-4, three random shapes each).
//! Each case panics on failure.

use gsvit_tensor::gradcheck::check_gradients;
use gsvit_tensor::{ConvGeometry, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;
const SHAPES: usize = 3;

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn away_from_zero(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    random(r, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

fn random_shape(r: &mut impl Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| r.random_range(1..5)).collect()
}

/// `sum(y ⊙ w)` with a fixed random `w`, so every output element carries a
/// distinct weight.
fn weighted(t: &Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = t.shape(y);
    let w = t.constant(random(&mut rng(seed ^ 0x9e37), &shape));
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn assert_passes(name: &str, inputs: &[Tensor<f64>], f: impl Fn(&Tape<f64>, &[Var]) -> Result<Var>) {
    let report = check_gradients(inputs, EPS, 64, f).unwrap();
    let shapes: Vec<_> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    assert!(report.max_error() < TOL, "{name} {shapes:?}: relative errors {:?}", report.errors);
}

fn unary_case(name: &str, seed: u64, kink: bool, op: impl Fn(&Tape<f64>, Var) -> Result<Var>) {
    let mut r = rng(seed);
    for s in 0..SHAPES {
        let rank = 1 + s;
        let shape = random_shape(&mut r, rank);
        let x = if kink { away_from_zero(&mut r, &shape) } else { random(&mut r, &shape) };
        assert_passes(name, &[x], |t, v| {
            let y = op(t, v[0])?;
            weighted(t, y, seed)
        });
    }
}

pub fn unary_ops() {
    unary_case("square", 1, false, |t, x| t.square(x));
    unary_case("exp", 2, false, |t, x| t.exp(x));
    unary_case("relu", 3, true, |t, x| t.relu(x));
    unary_case("sigmoid", 4, false, |t, x| t.sigmoid(x));
    unary_case("tanh", 5, false, |t, x| t.tanh(x));
    unary_case("elu", 6, true, |t, x| t.elu(x));
    unary_case("gelu", 7, false, |t, x| t.gelu(x));
    unary_case("mul_scalar", 8, false, |t, x| t.mul_scalar(x, -1.7));
    unary_case("add_scalar", 9, false, |t, x| t.add_scalar(x, 0.3));
    unary_case("neg", 10, false, |t, x| t.neg(x));
}

pub fn binary_ops_with_broadcasting() {
    let mut r = rng(11);
    for s in 0..SHAPES {
        let a_shape = random_shape(&mut r, 2 + s);
        // b: trailing suffix of a with some axes collapsed to 1
        let mut b_shape: Vec<usize> = a_shape[1..].to_vec();
        if let Some(first) = b_shape.first_mut() {
            *first = 1;
        }
        let a = random(&mut r, &a_shape);
        let b = random(&mut r, &b_shape).map(|v| v + 2.5);
        for (name, which) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3)] {
            assert_passes(name, &[a.clone(), b.clone()], |t, v| {
                let y = match which {
                    0 => t.add(v[0], v[1])?,
                    1 => t.sub(v[0], v[1])?,
                    2 => t.mul(v[0], v[1])?,
                    _ => t.div(v[0], v[1])?,
                };
                weighted(t, y, 11)
            });
        }
    }
}

pub fn matmul_family() {
    let mut r = rng(12);
    for _ in 0..SHAPES {
        let (b, m, k, n) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6), r.random_range(1..6));
        let a2 = random(&mut r, &[m, k]);
        let b2 = random(&mut r, &[k, n]);
        assert_passes("matmul", &[a2, b2], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted(t, y, 12)
        });
        let a3 = random(&mut r, &[b, m, k]);
        let w = random(&mut r, &[k, n]);
        assert_passes("matmul (batched lhs)", &[a3.clone(), w], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted(t, y, 13)
        });
        let b3 = random(&mut r, &[b, k, n]);
        assert_passes("bmm", &[a3.clone(), b3], |t, v| {
            let y = t.bmm(v[0], v[1])?;
            weighted(t, y, 14)
        });
        let bt = random(&mut r, &[b, n, k]);
        assert_passes("bmm_nt", &[a3, bt], |t, v| {
            let y = t.bmm_nt(v[0], v[1])?;
            weighted(t, y, 15)
        });
    }
}

pub fn matmul_identity_example_gradient() {
    // A = I (requires grad), B = diag(2, 3), loss = sum(A·B)
    let a = Tensor::<f64>::eye(2).unwrap();
    let b = Tensor::<f64>::from_f64([2, 2], &[2., 0., 0., 3.]).unwrap();
    let report = check_gradients(&[a.clone()], EPS, 64, |t, v| {
        let bv = t.constant(b.clone());
        let y = t.matmul(v[0], bv)?;
        t.sum(y)
    })
    .unwrap();
    assert!(report.max_error() < TOL);
    let tape = Tape::<f64>::new();
    let a = a.with_requires_grad(true);
    let (va, vb) = (tape.leaf(&a), tape.constant(b));
    let y = tape.matmul(va, vb).unwrap();
    let l = tape.sum(y).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(&a).unwrap().data(), &[2., 3., 2., 3.]);
}

pub fn shape_ops() {
    let mut r = rng(16);
    for s in 0..SHAPES {
        let shape = random_shape(&mut r, 3 + s % 2);
        let x = random(&mut r, &shape);
        let rank = shape.len();
        let n: usize = shape.iter().product();
        assert_passes("reshape", &[x.clone()], |t, v| {
            let y = t.reshape(v[0], &[n])?;
            weighted(t, y, 16)
        });
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.reverse();
        assert_passes("permute", &[x.clone()], |t, v| {
            let y = t.permute(v[0], &perm)?;
            weighted(t, y, 17)
        });
        assert_passes("transpose", &[x.clone()], |t, v| {
            let y = t.transpose(v[0], 0, rank - 1)?;
            weighted(t, y, 18)
        });
        let axis = s % rank;
        let len = shape[axis];
        assert_passes("slice", &[x.clone()], |t, v| {
            let y = t.slice(v[0], axis, len / 2, len - len / 2)?;
            weighted(t, y, 19)
        });
        assert_passes("split+concat", &[x.clone()], |t, v| {
            let parts = if len > 1 { t.split(v[0], axis, &[1, len - 1])? } else { vec![v[0]] };
            let rev: Vec<Var> = parts.into_iter().rev().collect();
            let y = t.concat(&rev, axis)?;
            weighted(t, y, 20)
        });
        let other = random(&mut r, &shape);
        assert_passes("concat", &[x.clone(), other], |t, v| {
            let y = t.concat(&[v[0], v[1]], axis)?;
            weighted(t, y, 21)
        });
        let mut small = shape.clone();
        small[0] = 1;
        let xs = random(&mut r, &small);
        assert_passes("broadcast_to", &[xs], |t, v| {
            let y = t.broadcast_to(v[0], &shape)?;
            weighted(t, y, 22)
        });
        assert_passes("pad_end", &[x.clone()], |t, v| {
            let y = t.pad_end(v[0], axis, 2)?;
            weighted(t, y, 23)
        });
    }
}

pub fn reductions() {
    let mut r = rng(24);
    for s in 0..SHAPES {
        let shape = random_shape(&mut r, 2 + s);
        let x = random(&mut r, &shape);
        assert_passes("sum", &[x.clone()], |t, v| {
            let y = t.square(v[0])?;
            t.sum(y)
        });
        assert_passes("mean", &[x.clone()], |t, v| {
            let y = t.exp(v[0])?;
            t.mean(y)
        });
        let axis = s % shape.len();
        assert_passes("sum_axis", &[x.clone()], |t, v| {
            let y = t.sum_axis(v[0], axis, false)?;
            weighted(t, y, 25)
        });
        assert_passes("mean_axis", &[x.clone()], |t, v| {
            let y = t.mean_axis(v[0], axis, true)?;
            weighted(t, y, 26)
        });
    }
}

pub fn softmax_any_axis() {
    let mut r = rng(27);
    for s in 0..SHAPES {
        let shape = random_shape(&mut r, 2 + s);
        let x = random(&mut r, &shape).map(|v| v * 3.0);
        for axis in 0..shape.len() {
            assert_passes("softmax", &[x.clone()], |t, v| {
                let y = t.softmax(v[0], axis)?;
                weighted(t, y, 28)
            });
        }
    }
}

pub fn normalization_ops() {
    let mut r = rng(29);
    for s in 0..SHAPES {
        let d = 3 + s * 3;
        let x = random(&mut r, &[1 + s, 3, d]);
        let g = random(&mut r, &[d]).map(|v| v + 1.0);
        let b = random(&mut r, &[d]);
        assert_passes("layer_norm", &[x, g, b], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weighted(t, y, 30)
        });

        let c = 1 + s;
        let xb = random(&mut r, &[2 + s, c, 3, 2]);
        let gb = random(&mut r, &[c]).map(|v| v + 1.0);
        let bb = random(&mut r, &[c]);
        assert_passes("batch_norm_train", &[xb.clone(), gb.clone(), bb.clone()], |t, v| {
            let (y, _) = t.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            weighted(t, y, 31)
        });
        let rm: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
        let rv: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
        assert_passes("batch_norm_eval", &[xb, gb, bb], |t, v| {
            let y = t.batch_norm_eval(v[0], v[1], v[2], &rm, &rv, 1e-5)?;
            weighted(t, y, 32)
        });
        let x2 = random(&mut r, &[3 + s, 2 * c + 1]);
        assert_passes("batch_norm_train (2-D)", &[x2], |t, v| {
            let d = t.shape(v[0])[1];
            let g = t.constant(Tensor::ones([d]).unwrap());
            let b = t.constant(Tensor::zeros([d]).unwrap());
            let (y, _) = t.batch_norm_train(v[0], g, b, 1e-5)?;
            weighted(t, y, 33)
        });
    }
}

pub fn dropout_with_fixed_mask() {
    let mut r = rng(34);
    for s in 0..SHAPES {
        let shape = random_shape(&mut r, 1 + s);
        let x = random(&mut r, &shape);
        assert_passes("dropout", &[x], |t, v| {
            let mut mask_rng = rng(35 + s as u64);
            let y = t.dropout(v[0], 0.3, true, &mut mask_rng)?;
            weighted(t, y, 36)
        });
    }
}

pub fn losses() {
    let mut r = rng(37);
    for s in 0..SHAPES {
        let (b, c) = (2 + s, 3 + 2 * s);
        let logits = random(&mut r, &[b, c]).map(|v| v * 2.0);
        let targets: Vec<usize> = (0..b).map(|i| (i * 5 + s) % c).collect();
        assert_passes("cross_entropy", &[logits], |t, v| t.cross_entropy(v[0], &targets));
        let shape = random_shape(&mut r, 1 + s);
        let p = random(&mut r, &shape);
        let q = random(&mut r, &shape);
        assert_passes("mse", &[p, q], |t, v| t.mse(v[0], v[1]));
    }
}

pub fn convolutions() {
    let mut r = rng(38);
    let cases = [(1, 2, 3, 5, 6, 3, 1, 1), (2, 1, 2, 6, 6, 4, 2, 1), (2, 3, 2, 7, 5, 3, 2, 0)];
    for (i, &(b, cin, cout, h, w, k, s, p)) in cases.iter().enumerate() {
        let geo = ConvGeometry::new(k, s, p).unwrap();
        let x = random(&mut r, &[b, cin, h, w]);
        let wt = random(&mut r, &[cout, cin, k, k]);
        let bias = random(&mut r, &[cout]);
        assert_passes("conv2d", &[x.clone(), wt, bias], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), geo)?;
            weighted(t, y, 39 + i as u64)
        });
        let wt_t = random(&mut r, &[cin, cout, k, k]);
        let bias_t = random(&mut r, &[cout]);
        assert_passes("conv_transpose2d", &[x.clone(), wt_t, bias_t], |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), geo)?;
            weighted(t, y, 42 + i as u64)
        });
        assert_passes("adaptive_avg_pool2d", &[x], |t, v| {
            let y = t.adaptive_avg_pool2d(v[0], 1 + i, 2)?;
            weighted(t, y, 45 + i as u64)
        });
    }
}

pub fn gelu_linear_composite() {
    let mut r = rng(48);
    for s in 0..SHAPES {
        let (n, din, dout) = (1 + s, 2 + s, 3 + s);
        let x = random(&mut r, &[n, din]);
        let w = random(&mut r, &[din, dout]);
        let b = random(&mut r, &[dout]);
        assert_passes("gelu(linear)", &[x, w, b], |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add(h, v[2])?;
            let y = t.gelu(h)?;
            weighted(t, y, 49)
        });
    }
}

/// Every case with its name.
pub const CASES: &[(&str, fn())] = &[
    ("unary_ops", unary_ops),
    ("binary_ops_with_broadcasting", binary_ops_with_broadcasting),
    ("matmul_family", matmul_family),
    ("matmul_identity_example_gradient", matmul_identity_example_gradient),
    ("shape_ops", shape_ops),
    ("reductions", reductions),
    ("softmax_any_axis", softmax_any_axis),
    ("normalization_ops", normalization_ops),
    ("dropout_with_fixed_mask", dropout_with_fixed_mask),
    ("losses", losses),
    ("convolutions", convolutions),
    ("gelu_linear_composite", gelu_linear_composite),
];
