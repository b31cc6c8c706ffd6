use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{finite_diff_check, DEFAULT_STEP};
use super::*;

fn t32(shape: &[usize], data: Vec<f32>) -> Tensor<f32> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn random64(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn conv2d_of_ones_sums_the_window() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::ones([1, 1, 3, 3]).unwrap());
    let k = g.constant(Tensor::ones([1, 1, 3, 3]).unwrap());
    let y = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[9.0]);
}

#[test]
fn conv2d_identity_kernel_returns_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = Tensor::<f32>::from_fn([2, 1, 5, 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let mut g = Graph::new();
    let x = g.leaf(&input);
    let k = g.constant(Tensor::ones([1, 1, 1, 1]).unwrap());
    let y = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), input.shape());
    assert_eq!(g.value(y).data(), input.data());
}

#[test]
fn conv2d_128_k4_s2_p1_halves_spatial_dims() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([1, 1, 128, 128]).unwrap());
    let k = g.constant(Tensor::zeros([2, 1, 4, 4]).unwrap());
    let y = g.conv2d(x, k, 2, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 2, 64, 64]);
}

#[test]
fn conv2d_shape_errors_name_both_shapes() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([1, 2, 4, 4]).unwrap());
    let k = g.constant(Tensor::zeros([1, 3, 3, 3]).unwrap());
    let err = g.conv2d(x, k, 1, 0).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");

    let big = g.constant(Tensor::zeros([1, 2, 5, 5]).unwrap());
    assert!(g.conv2d(x, big, 1, 0).is_err());
    let k0 = g.constant(Tensor::zeros([1, 2, 3, 3]).unwrap());
    assert!(g.conv2d(x, k0, 0, 0).is_err());
}

#[test]
fn conv_transpose_of_zeros_is_zero() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([2, 3, 4, 4]).unwrap());
    let k = g.constant(Tensor::ones([3, 2, 4, 4]).unwrap());
    let y = g.conv_transpose2d(x, k, 2, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 2, 8, 8]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_transpose_8_to_16() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::ones([1, 1, 8, 8]).unwrap());
    let k = g.constant(Tensor::ones([1, 1, 4, 4]).unwrap());
    let y = g.conv_transpose2d(x, k, 2, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 16, 16]);
    // The forward conv with the same params maps 16x16 back onto 8x8.
    let back = g.conv2d(y, k, 2, 1).unwrap();
    assert_eq!(g.value(back).shape(), &[1, 1, 8, 8]);
}

#[test]
fn conv_transpose_single_pixel_is_central_kernel_block() {
    let kernel: Vec<f64> = (0..16).map(|i| i as f64 * 0.5 - 3.0).collect();
    let v = 1.75;

    // Oracle: matrix of the forward conv 2x2 -> 1x1 (k=4, s=2, p=1), built by
    // pushing each unit basis image through a brute-force padded window sum.
    let conv_1x1 = |img: &[f64; 4]| {
        let mut acc = 0.0;
        for ky in 0..4 {
            for kx in 0..4 {
                let (iy, ix) = (ky as isize - 1, kx as isize - 1);
                if (0..2).contains(&iy) && (0..2).contains(&ix) {
                    acc += kernel[ky * 4 + kx] * img[(iy * 2 + ix) as usize];
                }
            }
        }
        acc
    };
    let mut expected = [0.0; 4];
    for (j, e) in expected.iter_mut().enumerate() {
        let mut basis = [0.0; 4];
        basis[j] = 1.0;
        *e = conv_1x1(&basis) * v;
    }
    // The adjoint picks out the central 2x2 block of the kernel.
    assert_eq!(
        expected,
        [kernel[5] * v, kernel[6] * v, kernel[9] * v, kernel[10] * v]
    );

    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new([1, 1, 1, 1], vec![v]).unwrap());
    let k = g.constant(Tensor::new([1, 1, 4, 4], kernel.clone()).unwrap());
    let y = g.conv_transpose2d(x, k, 2, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    for (a, b) in g.value(y).data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_transpose_rejects_nonpositive_output() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([1, 1, 1, 1]).unwrap());
    let k = g.constant(Tensor::zeros([1, 1, 1, 1]).unwrap());
    assert!(g.conv_transpose2d(x, k, 1, 1).is_err());
}

#[test]
fn elementwise_values() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).data(), &[0.5]);

    let x = g.constant(Tensor::new([4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 0.0, 3.0]);
    let l = g.leaky_relu(x, 0.2);
    assert_eq!(g.value(l).data(), &[-0.4, -0.1, 0.0, 3.0]);

    let zero = g.constant(Tensor::scalar(0.0));
    let lg = g.log(zero);
    assert!((g.value(lg).data()[0] - LOG_CLAMP.ln()).abs() < 1e-12);
}

#[test]
fn binary_ops_reject_mismatched_shapes_but_allow_scalars() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::ones([2, 3]).unwrap());
    let b = g.constant(Tensor::ones([3, 2]).unwrap());
    assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
    let s = g.constant(Tensor::scalar(2.0));
    let p = g.mul(a, s).unwrap();
    assert_eq!(g.value(p).data(), &[2.0; 6]);
    let q = g.sub(s, a).unwrap();
    assert_eq!(g.value(q).data(), &[1.0; 6]);
}

#[test]
fn derivative_of_log_sigmoid_at_zero() {
    let mut g = Graph::<f64>::new();
    let w = g.input(Tensor::scalar(0.0), true);
    let s = g.sigmoid(w);
    let l = g.log(s);
    g.backward(l).unwrap();
    // Oracle: d/dw log σ(w) = 1 − σ(w).
    let oracle = 1.0 - 1.0 / (1.0 + (-0.0f64).exp());
    assert!((g.grad(w).unwrap()[0] - oracle).abs() < 1e-12);
    assert!((oracle - 0.5).abs() < 1e-15);
}

#[test]
fn reductions() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap(), true);
    let m = g.mean(x).unwrap();
    assert_eq!(g.value(m).data(), &[2.0]);
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0 / 3.0; 3]);

    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
    let s = g.sum(x).unwrap();
    assert_eq!(g.value(s).data(), &[10.0]);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
}

#[test]
fn matmul_values() {
    let mut g = Graph::<f32>::new();
    let eye = g.constant(t32(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let x = g.constant(t32(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let y = g.matmul(eye, x).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let a = g.constant(t32(&[1, 2], vec![1.0, 2.0]));
    let b = g.constant(t32(&[2, 1], vec![3.0, 4.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0]);

    assert!(matches!(g.matmul(a, a), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn matmul_gradients_pass_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random64(&mut rng, &[3, 4]);
    let b = random64(&mut rng, &[4, 2]);
    let proj = random64(&mut rng, &[3, 2]);
    let wrt_a = finite_diff_check(
        |g, x| {
            let bv = g.constant(b.clone());
            let c = g.matmul(x, bv)?;
            let r = g.constant(proj.clone());
            let p = g.mul(c, r)?;
            g.sum(p)
        },
        &a,
        DEFAULT_STEP,
    )
    .unwrap();
    let wrt_b = finite_diff_check(
        |g, x| {
            let av = g.constant(a.clone());
            let c = g.matmul(av, x)?;
            let r = g.constant(proj.clone());
            let p = g.mul(c, r)?;
            g.sum(p)
        },
        &b,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(wrt_a < 1e-6 && wrt_b < 1e-6, "{wrt_a} {wrt_b}");
}

#[test]
fn backward_sum_of_squares() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn disconnected_leaf_gets_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
    let unused = g.input(Tensor::new([2], vec![5.0, 6.0]).unwrap(), true);
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(unused).map_or(true, |d| d.iter().all(|&v| v == 0.0)));
}

#[test]
fn constants_never_receive_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
    let c = g.constant(Tensor::new([2], vec![3.0, 4.0]).unwrap());
    let p = g.mul(x, c).unwrap();
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, 4.0]);
    assert!(g.grad(c).is_none());
}

#[test]
fn repeated_backward_accumulates_until_zero_grad() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
    g.zero_grad();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new([2], vec![1.0, 2.0]).unwrap(), true);
    let y = g.neg(x);
    assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
}

#[test]
fn composite_conv_leaky_mean_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // Resample until every pre-activation sits at least 0.1 away from the kink.
    let (input, kernel) = loop {
        let input = random64(&mut rng, &[2, 2, 5, 5]);
        let kernel = random64(&mut rng, &[3, 2, 3, 3]);
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let k = g.constant(kernel.clone());
        let y = g.conv2d(x, k, 2, 1).unwrap();
        if g.value(y).data().iter().all(|v| v.abs() > 0.1) {
            break (input, kernel);
        }
    };
    let f_kernel = |g: &mut Graph<f64>, k: Var| {
        let x = g.constant(input.clone());
        let y = g.conv2d(x, k, 2, 1)?;
        let a = g.leaky_relu(y, 0.2);
        g.mean(a)
    };
    let f_input = |g: &mut Graph<f64>, x: Var| {
        let k = g.constant(kernel.clone());
        let y = g.conv2d(x, k, 2, 1)?;
        let a = g.leaky_relu(y, 0.2);
        g.mean(a)
    };
    let e1 = finite_diff_check(f_kernel, &kernel, DEFAULT_STEP).unwrap();
    let e2 = finite_diff_check(f_input, &input, DEFAULT_STEP).unwrap();
    assert!(e1 < 1e-4 && e2 < 1e-4, "{e1} {e2}");
}

#[test]
fn conv_transpose_gradients_pass_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let input = random64(&mut rng, &[2, 3, 3, 3]);
    let kernel = random64(&mut rng, &[3, 2, 4, 4]);
    let proj = random64(&mut rng, &[2, 2, 6, 6]);
    let f_k = |g: &mut Graph<f64>, k: Var| {
        let x = g.constant(input.clone());
        let y = g.conv_transpose2d(x, k, 2, 1)?;
        let r = g.constant(proj.clone());
        let p = g.mul(y, r)?;
        g.sum(p)
    };
    let f_x = |g: &mut Graph<f64>, x: Var| {
        let k = g.constant(kernel.clone());
        let y = g.conv_transpose2d(x, k, 2, 1)?;
        let r = g.constant(proj.clone());
        let p = g.mul(y, r)?;
        g.sum(p)
    };
    assert!(finite_diff_check(f_k, &kernel, DEFAULT_STEP).unwrap() < 1e-6);
    assert!(finite_diff_check(f_x, &input, DEFAULT_STEP).unwrap() < 1e-6);
}

#[test]
fn bias_add_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = random64(&mut rng, &[2, 3, 2, 2]);
    let bias = random64(&mut rng, &[3]);
    let proj = random64(&mut rng, &[2, 3, 2, 2]);
    let err = finite_diff_check(
        |g, b| {
            let xv = g.constant(x.clone());
            let y = g.bias_add(xv, b)?;
            let r = g.constant(proj.clone());
            let p = g.mul(y, r)?;
            g.sum(p)
        },
        &bias,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn gradient_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let w = random64(&mut rng, &[3, 3]).with_requires_grad(true);
    let build = |g: &mut Graph<f64>, wv: Var, which: u8| -> Var {
        let t = g.tanh(wv);
        let a = g.sum(t).unwrap();
        let sq = g.mul(wv, wv).unwrap();
        let b = g.mean(sq).unwrap();
        match which {
            0 => a,
            1 => b,
            _ => g.add(a, b).unwrap(),
        }
    };
    let grad_of = |which: u8| {
        let mut g = Graph::new();
        let wv = g.leaf(&w);
        let l = build(&mut g, wv, which);
        g.backward(l).unwrap();
        g.grad(wv).unwrap().to_vec()
    };
    let (ga, gb, gsum) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..9 {
        assert!((ga[i] + gb[i] - gsum[i]).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn sigmoid_is_open_unit_interval_and_tanh_is_bounded(
        xs in proptest::collection::vec(-15.0f32..15.0, 1..64)
    ) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new([xs.len()], xs).unwrap());
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        prop_assert!(g.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(g.value(t).data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn transposed_conv_restores_spatial_dims(
        h in 1usize..12, w in 1usize..12, k in 1usize..5, stride in 1usize..4, pad in 0usize..3,
    ) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        prop_assume!((h + 2 * pad - k) % stride == 0 && (w + 2 * pad - k) % stride == 0);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 1, h, w]).unwrap());
        let kern = g.constant(Tensor::zeros([1, 1, k, k]).unwrap());
        let y = g.conv2d(x, kern, stride, pad).unwrap();
        let back = g.conv_transpose2d(y, kern, stride, pad).unwrap();
        prop_assert_eq!(&g.value(back).shape()[2..], &[h, w]);
    }

    #[test]
    fn transposed_conv_is_the_adjoint_of_conv(
        seed in any::<u64>(), h in 2usize..8, c in 1usize..4, f in 1usize..4,
        k in 1usize..4, stride in 1usize..3, pad in 0usize..2,
    ) {
        prop_assume!(h + 2 * pad >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = ConvGeometry::new(c, h, h, k, stride, pad).unwrap();
        let y = random64(&mut rng, &[2, c, h, h]);
        let x = random64(&mut rng, &[2, f, geom.out_height, geom.out_width]);
        let kernel = random64(&mut rng, &[f, c, k, k]);
        let mut g = Graph::<f64>::new();
        let (yv, xv, kv) = (g.constant(y.clone()), g.constant(x.clone()), g.constant(kernel));
        let conv_y = g.conv2d(yv, kv, stride, pad).unwrap();
        // Same kernel viewed as [C_in of tconv = f, C_out = c, k, k].
        let tconv_x = g.conv_transpose2d(xv, kv, stride, pad).unwrap();
        let tshape = g.value(tconv_x).shape().to_vec();
        prop_assume!(tshape[2] == h);
        let lhs = dot(g.value(tconv_x).data(), y.data());
        let rhs = dot(x.data(), g.value(conv_y).data());
        prop_assert!((lhs - rhs).abs() < 1e-6, "{} vs {}", lhs, rhs);
    }
}
