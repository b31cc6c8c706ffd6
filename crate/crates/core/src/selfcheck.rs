//! Randomized finite-difference checks over every differentiable op family.
//!
//! Each case builds a small scalar-valued graph around one op (or a composed
//! network plus loss), draws a random 64-bit point and compares the analytic
//! gradient with central differences. Points within 0.1 of a relu/leaky-relu kink
//! are resampled, and log inputs are kept well above the clamp.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{finite_diff_check, DEFAULT_STEP};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::gan::{discriminator_loss, generator_loss};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_CASES: usize = 100;
const KINK_MARGIN: f64 = 0.1;
const MAX_RESAMPLES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Elementwise,
    Matmul,
    Conv2d,
    ConvTranspose2d,
    Reduction,
    Composed,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Elementwise,
        Family::Matmul,
        Family::Conv2d,
        Family::ConvTranspose2d,
        Family::Reduction,
        Family::Composed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Elementwise => "elementwise",
            Family::Matmul => "matmul",
            Family::Conv2d => "conv2d",
            Family::ConvTranspose2d => "transposed_conv2d",
            Family::Reduction => "reduction",
            Family::Composed => "composed",
        }
    }
}

type Build = Box<dyn Fn(&mut Graph<f64>, Var) -> Result<(Var, Vec<Var>)>>;

/// One generated case: a function of the point plus the nodes that must stay clear of kinks.
struct Case {
    label: String,
    point: Tensor<f64>,
    build: Build,
}

/// Worst error seen in one family.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyReport {
    pub family: Family,
    pub cases: usize,
    pub worst_error: f64,
    pub worst_case: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfCheckReport {
    pub tolerance: f64,
    pub families: Vec<FamilyReport>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.families.iter().all(|f| f.worst_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&FamilyReport> {
        self.families
            .iter()
            .filter(|f| f.cases > 0)
            .max_by(|a, b| a.worst_error.total_cmp(&b.worst_error))
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.families {
            let verdict = if r.worst_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<18} {:>4} cases  max rel err {:.3e}  {verdict}  worst: {}",
                r.family.name(),
                r.cases,
                r.worst_error,
                if r.cases == 0 { "-" } else { &r.worst_case }
            )?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi)).expect("positive dims")
}

/// Values in [−1, 1] at least `KINK_MARGIN` away from zero.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(KINK_MARGIN + 0.01..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .expect("positive dims")
}

fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
}

/// Reduces any node to a scalar through a fixed random weighting so every output
/// coordinate carries a distinct sensitivity.
fn weighted_sum(g: &mut Graph<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn elementwise_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = vec![rng.gen_range(1..4), rng.gen_range(1..5)];
    let weights = uniform(rng, &shape, -1.0, 1.0);
    let other = uniform(rng, &shape, -1.0, 1.0);
    let c = rng.gen_range(-2.0..2.0);
    let slope = rng.gen_range(0.01..0.5);
    let op = rng.gen_range(0..11);
    let (name, point): (&str, Tensor<f64>) = match op {
        0 => ("add", uniform(rng, &shape, -1.0, 1.0)),
        1 => ("sub", uniform(rng, &shape, -1.0, 1.0)),
        2 => ("mul", uniform(rng, &shape, -1.0, 1.0)),
        3 => ("neg", uniform(rng, &shape, -1.0, 1.0)),
        4 => ("log", uniform(rng, &shape, 0.2, 2.0)),
        5 => ("tanh", uniform(rng, &shape, -3.0, 3.0)),
        6 => ("sigmoid", uniform(rng, &shape, -4.0, 4.0)),
        7 => ("relu", off_kink(rng, &shape)),
        8 => ("leaky_relu", off_kink(rng, &shape)),
        9 => ("add_scalar", uniform(rng, &shape, -1.0, 1.0)),
        _ => ("scale", uniform(rng, &shape, -1.0, 1.0)),
    };
    let scalar_rhs = rng.gen_bool(0.25);
    let rhs = if scalar_rhs { Tensor::scalar(c) } else { other };
    let swap = rng.gen_bool(0.5);
    let build: Build = Box::new(move |g, x| {
        let y = match op {
            0..=2 => {
                let r = g.constant(rhs.clone());
                let (a, b) = if swap { (r, x) } else { (x, r) };
                match op {
                    0 => g.add(a, b)?,
                    1 => g.sub(a, b)?,
                    _ => g.mul(a, b)?,
                }
            }
            3 => g.neg(x),
            4 => g.log(x),
            5 => g.tanh(x),
            6 => g.sigmoid(x),
            7 => g.relu(x),
            8 => g.leaky_relu(x, slope),
            9 => g.add_scalar(x, c),
            _ => g.scale(x, c),
        };
        Ok((weighted_sum(g, y, &weights)?, vec![x]))
    });
    let kinked = matches!(op, 7 | 8);
    let build: Build = if kinked {
        build
    } else {
        Box::new(move |g, x| Ok((build(g, x)?.0, Vec::new())))
    };
    Case {
        label: format!("{name} {}", shape_str(&shape)),
        point,
        build,
    }
}

fn matmul_case(rng: &mut ChaCha8Rng) -> Case {
    let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
    let weights = uniform(rng, &[m, n], -1.0, 1.0);
    let wrt_left = rng.gen_bool(0.5);
    let (point, other) = if wrt_left {
        (uniform(rng, &[m, k], -1.0, 1.0), uniform(rng, &[k, n], -1.0, 1.0))
    } else {
        (uniform(rng, &[k, n], -1.0, 1.0), uniform(rng, &[m, k], -1.0, 1.0))
    };
    let side = if wrt_left { "lhs" } else { "rhs" };
    Case {
        label: format!("matmul [{m}, {k}]x[{k}, {n}] wrt {side}"),
        point,
        build: Box::new(move |g, x| {
            let o = g.constant(other.clone());
            let y = if wrt_left { g.matmul(x, o)? } else { g.matmul(o, x)? };
            Ok((weighted_sum(g, y, &weights)?, Vec::new()))
        }),
    }
}

struct ConvDims {
    n: usize,
    c: usize,
    f: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

fn conv_dims(rng: &mut ChaCha8Rng) -> ConvDims {
    let k = rng.gen_range(1..4);
    let pad = rng.gen_range(0..2.min(k));
    ConvDims {
        n: rng.gen_range(1..3),
        c: rng.gen_range(1..3),
        f: rng.gen_range(1..3),
        h: rng.gen_range(k..6),
        w: rng.gen_range(k..6),
        k,
        stride: rng.gen_range(1..3),
        pad,
    }
}

fn conv_case(rng: &mut ChaCha8Rng) -> Case {
    let d = conv_dims(rng);
    let out_h = (d.h + 2 * d.pad - d.k) / d.stride + 1;
    let out_w = (d.w + 2 * d.pad - d.k) / d.stride + 1;
    let weights = uniform(rng, &[d.n, d.f, out_h, out_w], -1.0, 1.0);
    let input_shape = [d.n, d.c, d.h, d.w];
    let kernel_shape = [d.f, d.c, d.k, d.k];
    let wrt_input = rng.gen_bool(0.5);
    let (point, other) = if wrt_input {
        (uniform(rng, &input_shape, -1.0, 1.0), uniform(rng, &kernel_shape, -1.0, 1.0))
    } else {
        (uniform(rng, &kernel_shape, -1.0, 1.0), uniform(rng, &input_shape, -1.0, 1.0))
    };
    let (stride, pad) = (d.stride, d.pad);
    Case {
        label: format!(
            "conv2d input {} kernel {} stride {stride} pad {pad} wrt {}",
            shape_str(&input_shape),
            shape_str(&kernel_shape),
            if wrt_input { "input" } else { "kernel" }
        ),
        point,
        build: Box::new(move |g, x| {
            let o = g.constant(other.clone());
            let y = if wrt_input {
                g.conv2d(x, o, stride, pad)?
            } else {
                g.conv2d(o, x, stride, pad)?
            };
            Ok((weighted_sum(g, y, &weights)?, Vec::new()))
        }),
    }
}

fn conv_transpose_case(rng: &mut ChaCha8Rng) -> Case {
    let mut d = conv_dims(rng);
    // Keep the output positive: (h − 1)·stride − 2·pad + k ≥ 1.
    d.h = rng.gen_range(1..4);
    d.w = rng.gen_range(1..4);
    let out = |i: usize, pad: usize| ((i - 1) * d.stride + d.k) as isize - 2 * pad as isize;
    if out(d.h, d.pad) < 1 || out(d.w, d.pad) < 1 {
        d.pad = 0;
    }
    let (out_h, out_w) = (out(d.h, d.pad) as usize, out(d.w, d.pad) as usize);
    let weights = uniform(rng, &[d.n, d.f, out_h, out_w], -1.0, 1.0);
    let input_shape = [d.n, d.c, d.h, d.w];
    let kernel_shape = [d.c, d.f, d.k, d.k];
    let wrt_input = rng.gen_bool(0.5);
    let (point, other) = if wrt_input {
        (uniform(rng, &input_shape, -1.0, 1.0), uniform(rng, &kernel_shape, -1.0, 1.0))
    } else {
        (uniform(rng, &kernel_shape, -1.0, 1.0), uniform(rng, &input_shape, -1.0, 1.0))
    };
    let (stride, pad) = (d.stride, d.pad);
    Case {
        label: format!(
            "transposed_conv2d input {} kernel {} stride {stride} pad {pad} wrt {}",
            shape_str(&input_shape),
            shape_str(&kernel_shape),
            if wrt_input { "input" } else { "kernel" }
        ),
        point,
        build: Box::new(move |g, x| {
            let o = g.constant(other.clone());
            let y = if wrt_input {
                g.conv_transpose2d(x, o, stride, pad)?
            } else {
                g.conv_transpose2d(o, x, stride, pad)?
            };
            Ok((weighted_sum(g, y, &weights)?, Vec::new()))
        }),
    }
}

fn reduction_case(rng: &mut ChaCha8Rng) -> Case {
    let rank = rng.gen_range(1..4);
    let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..5)).collect();
    let use_mean = rng.gen_bool(0.5);
    let point = uniform(rng, &shape, -1.0, 1.0);
    let weights = uniform(rng, &shape, -1.0, 1.0);
    Case {
        label: format!("{} {}", if use_mean { "mean" } else { "sum" }, shape_str(&shape)),
        point,
        build: Box::new(move |g, x| {
            // Square first so the gradient depends on the point.
            let sq = g.mul(x, x)?;
            let w = g.constant(weights.clone());
            let y = g.mul(sq, w)?;
            let r = if use_mean { g.mean(y)? } else { g.sum(y)? };
            Ok((r, Vec::new()))
        }),
    }
}

/// Small discriminator-like or generator-like graphs ending in one of the GAN losses.
fn composed_case(rng: &mut ChaCha8Rng) -> Case {
    let variant = rng.gen_range(0..3);
    let batch = rng.gen_range(1..4);
    match variant {
        // conv → bias → leaky relu → flatten → dense → sigmoid → discriminator loss; wrt conv kernel.
        0 => {
            let (c, f, s) = (rng.gen_range(1..3), rng.gen_range(1..3), 4);
            let real = uniform(rng, &[batch, c, s, s], -1.0, 1.0);
            let fake = uniform(rng, &[batch, c, s, s], -1.0, 1.0);
            let bias = uniform(rng, &[f], -0.5, 0.5);
            let dense = uniform(rng, &[f * 4, 1], -0.5, 0.5);
            let point = uniform(rng, &[f, c, 4, 4], -0.5, 0.5);
            Case {
                label: format!("conv-leaky-dense-sigmoid-dloss batch {batch} channels {c}->{f} wrt kernel"),
                point,
                build: Box::new(move |g, k| {
                    let b = g.constant(bias.clone());
                    let w = g.constant(dense.clone());
                    let mut pre = Vec::new();
                    let mut score = |g: &mut Graph<f64>, x: &Tensor<f64>| -> Result<Var> {
                        let xv = g.constant(x.clone());
                        let y = g.conv2d(xv, k, 2, 1)?;
                        let y = g.bias_add(y, b)?;
                        pre.push(y);
                        let a = g.leaky_relu(y, 0.2);
                        let flat = g.reshape(a, [batch, f * 4])?;
                        let logits = g.matmul(flat, w)?;
                        Ok(g.sigmoid(logits))
                    };
                    let dr = score(g, &real)?;
                    let df = score(g, &fake)?;
                    Ok((discriminator_loss(g, dr, df)?, pre))
                }),
            }
        }
        // dense → reshape → tanh → transposed conv → tanh, scored by a fixed linear
        // sigmoid head under the generator loss; wrt the latent input.
        1 => {
            let latent = rng.gen_range(1..5);
            let (c, f) = (rng.gen_range(1..3), rng.gen_range(1..3));
            let dense = uniform(rng, &[latent, c * 4], -0.7, 0.7);
            let kernel = uniform(rng, &[c, f, 4, 4], -0.5, 0.5);
            let head = uniform(rng, &[f * 16, 1], -0.3, 0.3);
            let point = uniform(rng, &[batch, latent], -1.0, 1.0);
            Case {
                label: format!("dense-tanh-tconv-tanh-gloss batch {batch} latent {latent} channels {c}->{f} wrt noise"),
                point,
                build: Box::new(move |g, z| {
                    let w = g.constant(dense.clone());
                    let h = g.matmul(z, w)?;
                    let h = g.reshape(h, [batch, c, 2, 2])?;
                    let h = g.tanh(h);
                    let k = g.constant(kernel.clone());
                    let img = g.conv_transpose2d(h, k, 2, 1)?;
                    let img = g.tanh(img);
                    let flat = g.reshape(img, [batch, f * 16])?;
                    let hw = g.constant(head.clone());
                    let logits = g.matmul(flat, hw)?;
                    let s = g.sigmoid(logits);
                    Ok((generator_loss(g, s)?, Vec::new()))
                }),
            }
        }
        // Two-layer perceptron with relu, bias_add and a sum of both losses; wrt the first weight.
        _ => {
            let (inp, hidden) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let x = uniform(rng, &[batch, inp], -1.0, 1.0);
            let bias = uniform(rng, &[hidden], -0.5, 0.5);
            let out_w = uniform(rng, &[hidden, 1], -1.0, 1.0);
            let point = uniform(rng, &[inp, hidden], -1.0, 1.0);
            Case {
                label: format!("mlp-relu-both-losses batch {batch} {inp}->{hidden}->1 wrt weight"),
                point,
                build: Box::new(move |g, w1| {
                    let xv = g.constant(x.clone());
                    let h = g.matmul(xv, w1)?;
                    let b = g.constant(bias.clone());
                    let h = g.bias_add(h, b)?;
                    let a = g.relu(h);
                    let w2 = g.constant(out_w.clone());
                    let logits = g.matmul(a, w2)?;
                    let s = g.sigmoid(logits);
                    let neg = g.neg(logits);
                    let s_neg = g.sigmoid(neg);
                    let dl = discriminator_loss(g, s, s_neg)?;
                    let gl = generator_loss(g, s)?;
                    Ok((g.add(dl, gl)?, vec![h]))
                }),
            }
        }
    }
}

fn make_case(family: Family, rng: &mut ChaCha8Rng) -> Case {
    match family {
        Family::Elementwise => elementwise_case(rng),
        Family::Matmul => matmul_case(rng),
        Family::Conv2d => conv_case(rng),
        Family::ConvTranspose2d => conv_transpose_case(rng),
        Family::Reduction => reduction_case(rng),
        Family::Composed => composed_case(rng),
    }
}

/// True when every watched node is at least `KINK_MARGIN` from zero.
fn clear_of_kinks(case: &Case) -> Result<bool> {
    let mut g = Graph::new();
    let x = g.constant(case.point.clone());
    let (_, watched) = (case.build)(&mut g, x)?;
    Ok(watched
        .iter()
        .all(|&v| g.value(v).data().iter().all(|x| x.abs() >= KINK_MARGIN)))
}

fn check_family(family: Family, cases: usize, seed: u64) -> Result<FamilyReport> {
    let mut report = FamilyReport {
        family,
        cases,
        worst_error: 0.0,
        worst_case: String::new(),
    };
    for i in 0..cases {
        let mut rng = stream_rng(seed, Stream::Gradcheck, (family as u64) << 32 | i as u64);
        let mut case = make_case(family, &mut rng);
        let mut tries = 0;
        while !clear_of_kinks(&case)? {
            tries += 1;
            if tries >= MAX_RESAMPLES {
                return Err(Error::InvalidArgument(format!("no kink-free point for {}", case.label)));
            }
            case = make_case(family, &mut rng);
        }
        let build = &case.build;
        let err = finite_diff_check(|g, x| Ok(build(g, x)?.0), &case.point, DEFAULT_STEP)?;
        if i == 0 || err > report.worst_error {
            report.worst_error = err;
            report.worst_case = case.label.clone();
        }
    }
    Ok(report)
}

/// Runs `cases` randomized checks per family.
pub fn run(cases: usize, seed: u64) -> Result<SelfCheckReport> {
    let families = Family::ALL
        .iter()
        .map(|&f| check_family(f, cases, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SelfCheckReport {
        tolerance: TOLERANCE,
        families,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = run(20, 3).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.families.len(), 6);
        assert!(r.families.iter().all(|f| f.cases == 20 && !f.worst_case.is_empty()));
    }

    #[test]
    fn zero_cases_is_vacuous() {
        let r = run(0, 0).unwrap();
        assert!(r.passed());
        assert!(r.worst().is_none());
    }

    #[test]
    fn cases_are_reproducible() {
        assert_eq!(run(5, 9).unwrap(), run(5, 9).unwrap());
    }
}
