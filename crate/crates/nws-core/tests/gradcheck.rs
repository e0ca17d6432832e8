//! Finite-difference gradient checks for the differentiable ops, plus
//! randomized equivalence of the conv path against the naive loop oracle.

use nws_core::ops::{self, BatchNormState};
use nws_core::reference;
use nws_core::tensor::{Float, Tensor, GRAD_CHECK_RTOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, len: usize, std: Float) -> Vec<Float> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0f64, std as f64).unwrap();
    (0..len).map(|_| normal.sample(rng) as Float).collect()
}

#[test]
fn conv2d_matches_naive_loop_randomized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..40 {
        let n = rng.gen_range(1..3usize);
        let c = rng.gen_range(1..4usize);
        let o = rng.gen_range(1..4usize);
        let k = [1, 3, 5][rng.gen_range(0..3usize)];
        let stride = rng.gen_range(1..3usize);
        let padding = rng.gen_range(0..2usize);
        let h = rng.gen_range(k + stride..k + 6);
        let w = rng.gen_range(k + stride..k + 6);
        let input_vals = randn(&mut rng, n * c * h * w, 1.0);
        let kernel_vals = randn(&mut rng, o * c * k * k, 1.0);
        let input = Tensor::new(vec![n, c, h, w], input_vals.clone(), false).unwrap();
        let kernels = Tensor::new(vec![o, c, k, k], kernel_vals.clone(), false).unwrap();
        let out = ops::conv2d(&input, &kernels, stride, padding).unwrap();
        let (expect, oh, ow) =
            reference::naive_conv2d(&input_vals, n, c, h, w, &kernel_vals, o, k, stride, padding);
        assert_eq!(out.shape(), vec![n, o, oh, ow], "case {}", case);
        let err = reference::max_relative_error(&out.data(), &expect);
        assert!(err < 1e-4, "case {}: conv mismatch {}", case, err);
    }
}

#[test]
fn conv2d_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, c, o, k, h, w) = (2, 2, 3, 3, 5, 4);
    let mut input_vals = randn(&mut rng, n * c * h * w, 1.0);
    let mut kernel_vals = randn(&mut rng, o * c * k * k, 0.5);

    let input = Tensor::new(vec![n, c, h, w], input_vals.clone(), true).unwrap();
    let kernels = Tensor::new(vec![o, c, k, k], kernel_vals.clone(), true).unwrap();
    let out = ops::conv2d(&input, &kernels, 1, 1).unwrap();
    let loss = ops::sum(&ops::mul(&out, &out));
    loss.backward().unwrap();

    let f_input = |vals: &[Float]| {
        let input = Tensor::new(vec![n, c, h, w], vals.to_vec(), false).unwrap();
        let kernels = Tensor::new(vec![o, c, k, k], kernel_vals.clone(), false).unwrap();
        let out = ops::conv2d(&input, &kernels, 1, 1).unwrap();
        ops::sum(&ops::mul(&out, &out)).item()
    };
    let fd = reference::finite_difference(&mut input_vals, 1e-2, f_input);
    let err = reference::max_relative_error(&input.grad().unwrap(), &fd);
    assert!(err < GRAD_CHECK_RTOL * 10.0, "input grad err {}", err);

    let input_fixed = input_vals.clone();
    let f_kernels = |vals: &[Float]| {
        let input = Tensor::new(vec![n, c, h, w], input_fixed.clone(), false).unwrap();
        let kernels = Tensor::new(vec![o, c, k, k], vals.to_vec(), false).unwrap();
        let out = ops::conv2d(&input, &kernels, 1, 1).unwrap();
        ops::sum(&ops::mul(&out, &out)).item()
    };
    let fd = reference::finite_difference(&mut kernel_vals, 1e-2, f_kernels);
    let err = reference::max_relative_error(&kernels.grad().unwrap(), &fd);
    assert!(err < GRAD_CHECK_RTOL * 10.0, "kernel grad err {}", err);
}

#[test]
fn batchnorm_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, c, h, w) = (3, 2, 3, 3);
    let mut input_vals = randn(&mut rng, n * c * h * w, 1.0);

    let run = |vals: &[Float], requires_grad: bool| {
        let input = Tensor::new(vec![n, c, h, w], vals.to_vec(), requires_grad).unwrap();
        let mut state = BatchNormState::new(c, 0.1, 1e-5);
        let out = ops::batchnorm(&input, &mut state, true).unwrap();
        // weighted sum keeps per-element grads distinct
        let weights: Vec<Float> = (0..out.numel()).map(|i| ((i % 7) as Float) - 3.0).collect();
        let wt = Tensor::new(out.shape(), weights, false).unwrap();
        (input, ops::sum(&ops::mul(&out, &wt)))
    };
    let (input, loss) = run(&input_vals, true);
    loss.backward().unwrap();
    let fd = reference::finite_difference(&mut input_vals, 1e-3, |vals| {
        run(vals, false).1.item()
    });
    let err = reference::max_relative_error(&input.grad().unwrap(), &fd);
    assert!(err < GRAD_CHECK_RTOL * 10.0, "bn input grad err {}", err);
}

#[test]
fn cross_entropy_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, v) = (4, 5);
    let mut logits_vals = randn(&mut rng, n * v, 2.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();

    let logits = Tensor::new(vec![n, v], logits_vals.clone(), true).unwrap();
    let loss = ops::softmax_cross_entropy(&logits, &labels).unwrap();
    loss.backward().unwrap();
    let fd = reference::finite_difference(&mut logits_vals, 1e-3, |vals| {
        let logits = Tensor::new(vec![n, v], vals.to_vec(), false).unwrap();
        ops::softmax_cross_entropy(&logits, &labels).unwrap().item()
    });
    let err = reference::max_relative_error(&logits.grad().unwrap(), &fd);
    assert!(err < GRAD_CHECK_RTOL * 10.0, "ce grad err {}", err);
}

/// Composite check through conv -> bn -> relu -> gap -> head -> CE, the
/// exact stack the networks use.
#[test]
fn dense_stack_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (n, c, mid, v, h, w) = (2, 2, 3, 2, 4, 4);
    let input_vals = randn(&mut rng, n * c * h * w, 1.0);
    let mut conv_vals = randn(&mut rng, mid * c * 9, 0.5);
    let head_vals = randn(&mut rng, v * mid, 0.5);
    let labels = vec![0usize, 1];

    let run = |cv: &[Float], requires_grad: bool| {
        let input = Tensor::new(vec![n, c, h, w], input_vals.clone(), false).unwrap();
        let conv = Tensor::new(vec![mid, c, 3, 3], cv.to_vec(), requires_grad).unwrap();
        let head = Tensor::new(vec![v, mid, 1, 1], head_vals.clone(), false).unwrap();
        let mut state = BatchNormState::new(mid, 0.1, 1e-5);
        let x = ops::conv2d(&input, &conv, 1, 1).unwrap();
        let x = ops::batchnorm(&x, &mut state, true).unwrap();
        let x = ops::relu(&x);
        let x = ops::avgpool2d(&x, h, 1).unwrap();
        let x = ops::conv2d(&x, &head, 1, 0).unwrap();
        let logits = ops::reshape(&x, vec![n, v]).unwrap();
        (conv, ops::softmax_cross_entropy(&logits, &labels).unwrap())
    };
    let (conv, loss) = run(&conv_vals, true);
    loss.backward().unwrap();
    let fd = reference::finite_difference(&mut conv_vals, 1e-3, |cv| {
        run(cv, false).1.item()
    });
    let err = reference::max_relative_error(&conv.grad().unwrap(), &fd);
    // relu kinks add a little finite-difference noise on top of f32 rounding
    assert!(err < 5e-3, "stack grad err {}", err);
}
