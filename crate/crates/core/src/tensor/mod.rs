//! Deterministic dense `f64` tensors with a reverse-mode autodiff graph and
//! an AdamW optimizer. Execution is single-threaded; a finished [`Tensor`]
//! is plain data and can be sent across threads.

mod array;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;

pub use array::Tensor;
pub use graph::{Graph, Var};
pub use optim::{AdamWConfig, AdamWState, StepSchedule};
pub use params::{Bindings, LayerNorm, Linear, ParamId, ParamStore, LAYER_NORM_EPS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("invalid mask: every key is masked")]
    InvalidMask,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("training diverged: {0}")]
    Divergence(String),
}

#[cfg(test)]
mod tests {
    use super::gradcheck::check_gradients;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let m = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.5]]).unwrap();
        let i = g.input(Tensor::identity(3));
        let mv = g.input(m.clone());
        let out = g.matmul(i, mv).unwrap();
        assert_eq!(g.value(out), &m);

        let a = g.input(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let b = g.input(Tensor::from_rows(&[[0.0], [1.0]]).unwrap());
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.value(out).data(), &[2.0, 4.0]);
        assert_eq!(g.value(out).shape(), &[2, 1]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dimension() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(TensorError::Shape(_))));
    }

    /// `sum(x * w)` for a column `w`, a smooth scalar head for gradient checks.
    fn project(g: &mut Graph, x: Var, w: &Tensor) -> Result<Var, TensorError> {
        let w = g.input(w.clone());
        let b = g.input(Tensor::zeros(&[1]));
        let y = g.linear(x, w, b)?;
        g.sum(y)
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![random(&[5, 7], &mut rng), random(&[7, 3], &mut rng)];
        let head = random(&[3, 1], &mut rng);
        let report = check_gradients(&inputs, 1e-5, |g, vars| {
            let p = g.matmul(vars[0], vars[1])?;
            project(g, p, &head)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs = vec![random(&[4, 6], &mut rng), random(&[6, 5], &mut rng), random(&[5], &mut rng)];
        let head = random(&[5, 1], &mut rng);
        let report = check_gradients(&inputs, 1e-5, |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            let y = g.gelu(y)?;
            project(g, y, &head)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn masked_softmax_cases() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 1, 4], vec![0.3; 4]).unwrap());
        let y = g.masked_softmax(x, &[false; 4]).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }

        let x = g.input(Tensor::new(vec![1, 2, 3], vec![5.0, -1.0, 2.0, 0.0, 9.0, -3.0]).unwrap());
        let y = g.masked_softmax(x, &[true, false, true]).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);

        let x = g.input(Tensor::new(vec![1, 1, 3], vec![0.0, 2f64.ln(), 4f64.ln()]).unwrap());
        let y = g.masked_softmax(x, &[false, false, true]).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn masked_softmax_rejects_fully_masked_rows() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 2]));
        assert_eq!(g.masked_softmax(x, &[true, true]), Err(TensorError::InvalidMask));
    }

    #[test]
    fn masked_softmax_large_logits_stay_finite() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 1, 3], vec![1000.0, 999.0, 5000.0]).unwrap());
        let y = g.masked_softmax(x, &[false, false, true]).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn masked_softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![random(&[2, 3, 5], &mut rng)];
        let head = random(&[5, 1], &mut rng);
        let mask = [false, true, false, false, true];
        let report = check_gradients(&inputs, 1e-5, |g, vars| {
            let p = g.masked_softmax(vars[0], &mask)?;
            project(g, p, &head)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = vec![random(&[3, 7], &mut rng), random(&[7], &mut rng), random(&[7], &mut rng)];
        let head = random(&[7, 1], &mut rng);
        let report = check_gradients(&inputs, 1e-5, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let y = g.gelu(y)?;
            project(g, y, &head)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn layer_norm_statistics_and_special_rows() {
        let mut g = Graph::new();
        let gain = g.input(Tensor::filled(&[4], 1.0));
        let bias = g.input(Tensor::zeros(&[4]));
        let x = g.input(Tensor::filled(&[1, 4], 3.7));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let gain2 = g.input(Tensor::filled(&[2], 1.0));
        let bias2 = g.input(Tensor::zeros(&[2]));
        let x = g.input(Tensor::from_rows(&[[1.0, -1.0]]).unwrap());
        let y = g.layer_norm(x, gain2, bias2, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Spread wide enough that eps = 1e-5 costs < 1e-6 of the variance.
        let mut row = random(&[1, 64], &mut rng);
        row.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        let gain = g.input(Tensor::filled(&[64], 1.0));
        let bias = g.input(Tensor::zeros(&[64]));
        let x = g.input(row);
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        let v = g.value(y).data();
        let mean = v.iter().sum::<f64>() / 64.0;
        let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12);
        // eps shrinks the variance by var / (var + eps)
        let raw: Vec<f64> = g.value(x).data().to_vec();
        let rm = raw.iter().sum::<f64>() / 64.0;
        let rv = raw.iter().map(|a| (a - rm) * (a - rm)).sum::<f64>() / 64.0;
        assert!((var - rv / (rv + 1e-5)).abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6, "var {var}");
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap());
        let w = g.input(Tensor::identity(2));
        let b = g.input(Tensor::zeros(&[2]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let x = g.input(Tensor::from_rows(&[[1.0, 1.0]]).unwrap());
        let w = g.input(Tensor::from_rows(&[[1.0], [2.0]]).unwrap());
        let b = g.input(Tensor::vector(vec![3.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);
    }

    #[test]
    fn mse_hand_cases() {
        let mut g = Graph::new();
        let a = g.input(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let y = g.mse(a, a).unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);

        let a = g.input(Tensor::from_rows(&[[3.0, 4.0]]).unwrap());
        let z = g.input(Tensor::zeros(&[1, 2]));
        let y = g.mse(a, z).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);

        let a = g.input(Tensor::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap());
        let z = g.input(Tensor::zeros(&[2, 2]));
        let y = g.mse(a, z).unwrap();
        assert_eq!(g.value(y).data(), &[1.5]);
    }

    #[test]
    fn backward_of_sum_is_ones_and_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_of_norm_loss_is_unit_direction() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_rows(&[[3.0, 4.0]]).unwrap());
        let z = g.input(Tensor::zeros(&[1, 2]));
        let loss = g.mse(x, z).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap().data();
        assert!((grad[0] - 0.6).abs() < 1e-15);
        assert!((grad[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn backward_at_zero_residual_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_rows(&[[1.0, 1.0]]).unwrap());
        let y = g.input(Tensor::from_rows(&[[1.0, 1.0]]).unwrap());
        let loss = g.mse(x, y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn forward_rejects_non_finite_results() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![f64::MAX]));
        assert!(matches!(g.scale(x, 10.0), Err(TensorError::NonFinite("scale"))));
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        // linear -> gelu -> layer_norm -> attention-style ops -> mse
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = vec![
            random(&[6, 8], &mut rng),  // x
            random(&[8, 8], &mut rng),  // w
            random(&[8], &mut rng),     // b
            random(&[8], &mut rng),     // gain
            random(&[8], &mut rng),     // bias
            random(&[6, 8], &mut rng),  // target
        ];
        let noise = random(&[6, 8], &mut rng);
        let mask = [false, true, false, false, true, false];
        let report = check_gradients(&inputs, 1e-5, |g, v| {
            let h = g.linear(v[0], v[1], v[2])?;
            let h = g.gelu(h)?;
            let h = g.layer_norm(h, v[3], v[4], 1e-5)?;
            let h = g.jitter(h, noise.clone(), 0.3)?;
            let s = g.head_scores(h, h, 2, 0.5)?;
            let p = g.masked_softmax(s, &mask)?;
            let o = g.head_mix(p, h)?;
            let o = g.scale(o, 1.5)?;
            let o = g.add(o, h)?;
            g.mse(o, v[5])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn group_max_pool_routes_gradient_to_argmax() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_rows(&[[1.0, 5.0], [3.0, 2.0], [0.0, 0.0], [-1.0, 4.0]]).unwrap());
        let y = g.group_max_pool(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0, 0.0, 4.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn jitter_zero_norm_rows_are_untouched() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap());
        let y = g.jitter(x, Tensor::filled(&[2, 2], 1.0), 10.0).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 11.0, 10.0]);
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_outputs() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut g = Graph::new();
            let x = g.param(random(&[4, 8], &mut rng));
            let s = g.head_scores(x, x, 2, 0.3).unwrap();
            let p = g.masked_softmax(s, &[false; 4]).unwrap();
            let o = g.head_mix(p, x).unwrap();
            let z = g.input(Tensor::zeros(&[4, 8]));
            let l = g.mse(o, z).unwrap();
            g.backward(l).unwrap();
            (g.value(l).clone(), g.grad(x).unwrap().clone())
        };
        assert_eq!(run(), run());
    }
}
