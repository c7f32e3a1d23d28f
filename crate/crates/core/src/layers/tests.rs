use proptest::prelude::*;

use super::kernels::{self, HeadLayout};
use super::toy::{paired_training, ToyConfig, ToyModel};
use super::*;
use crate::runtime::CollectiveKind;

fn grid(q: usize, d: usize) -> GridSpec {
    GridSpec::new(q, d).unwrap()
}

fn rel(x: &Matrix, reference: &Matrix) -> f64 {
    x.rel_diff(reference).unwrap()
}

fn input(dims: ModelDims, seed: u64) -> Matrix {
    random_matrix(seed, 900, dims.rows(), dims.h)
}

/// `max |analytic − numeric| / max |numeric|`, numeric by central differences.
fn fd_error(analytic: &Matrix, point: &Matrix, f: impl Fn(&Matrix) -> f64) -> f64 {
    const STEP: f64 = 1e-5;
    let mut numeric = Matrix::zeros(point.rows(), point.cols());
    for r in 0..point.rows() {
        for c in 0..point.cols() {
            let mut plus = point.clone();
            plus.set(r, c, point.get(r, c) + STEP);
            let mut minus = point.clone();
            minus.set(r, c, point.get(r, c) - STEP);
            numeric.set(r, c, (f(&plus) - f(&minus)) / (2.0 * STEP));
        }
    }
    analytic.max_abs_diff(&numeric).unwrap() / numeric.max_abs().max(1e-8)
}

fn weighted_sum(y: &Matrix, r: &Matrix) -> f64 {
    y.hadamard(r).unwrap().sum()
}

/// Checks input and parameter gradients of `grads` against central
/// differences of the serial forward under `L = Σ R⊙Y`.
#[allow(clippy::too_many_arguments)]
fn check_layer_grads(layer: Layer, dims: ModelDims, x: &Matrix, p: &LayerParams, r: &Matrix, input_grad: &Matrix, grads: &LayerParams, tol: f64) {
    let loss = |x: &Matrix, p: &LayerParams| weighted_sum(&serial::forward(layer, dims, x, p).unwrap(), r);
    let e = fd_error(input_grad, x, |xp| loss(xp, p));
    assert!(e <= tol, "{layer} input gradient error {e:e}");
    for (t, (name, _)) in PARAM_NAMES.iter().enumerate() {
        if !layer.uses_param(t) {
            assert_eq!(grads.tensors()[t].max_abs(), 0.0, "{layer} touched {name}");
            continue;
        }
        let e = fd_error(grads.tensors()[t], p.tensors()[t], |v| {
            let mut pp = p.clone();
            *pp.tensors_mut()[t] = v.clone();
            loss(x, &pp)
        });
        assert!(e <= tol, "{layer} {name} gradient error {e:e}");
    }
}

#[test]
fn feedforward_examples() {
    let dims = ModelDims::new(4, 2, 8, 2);
    let p = LayerParams::random(8, 1, 0);
    let zero = Matrix::zeros(8, 8);
    let (y, _) = forward_global(Layer::FeedForward, dims, &grid(2, 1), &zero, &p).unwrap();
    let act = Matrix::from_fn(1, 32, |_, c| gelu(p.ff1_bias.get(0, c)));
    let row = act.matmul(&p.ff2_weight).unwrap().add(&p.ff2_bias).unwrap();
    for r in 0..8 {
        for c in 0..8 {
            assert!((y.get(r, c) - row.get(0, c)).abs() <= 1e-14);
        }
    }
    let mut nobias = p.clone();
    nobias.ff1_bias = Matrix::zeros(1, 32);
    nobias.ff2_bias = Matrix::zeros(1, 8);
    let (y, _) = forward_global(Layer::FeedForward, dims, &grid(2, 1), &zero, &nobias).unwrap();
    assert_eq!(y.max_abs(), 0.0);

    let x = input(dims, 2);
    let (y, _) = forward_global(Layer::FeedForward, dims, &grid(2, 1), &x, &p).unwrap();
    assert!(rel(&y, &serial::feedforward(&x, &p).unwrap()) <= 1e-8);
    let (y1, stats) = forward_global(Layer::FeedForward, dims, &grid(1, 1), &x, &p).unwrap();
    assert_eq!(y1, serial::feedforward(&x, &p).unwrap());
    assert_eq!(stats.total_messages(), 0);
}

#[test]
fn gelu_matches_known_values() {
    assert_eq!(gelu(0.0), 0.0);
    // tanh approximation at 1 and −1
    assert!((gelu(1.0) - 0.841_191_990_607_477_2).abs() < 1e-12);
    assert!((gelu(-1.0) + 0.158_808_009_392_522_8).abs() < 1e-12);
}

/// Per-token attention written with scalar loops over the packed layout.
fn naive_attention(dims: ModelDims, x: &Matrix, p: &LayerParams) -> Matrix {
    let qkv = x.matmul(&p.qkv_weight).unwrap().add(&Matrix::from_fn(x.rows(), 3 * dims.h, |_, c| p.qkv_bias.get(0, c))).unwrap();
    let dh = dims.h / dims.n;
    let mut heads = Matrix::zeros(x.rows(), dims.h);
    for m in 0..dims.b {
        for g in 0..dims.n {
            let base = g * 3 * dh;
            for t in 0..dims.s {
                let row = m * dims.s + t;
                let scores: Vec<f64> = (0..dims.s)
                    .map(|u| {
                        let other = m * dims.s + u;
                        (0..dh).map(|e| qkv.get(row, base + e) * qkv.get(other, base + dh + e)).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = w.iter().sum();
                for e in 0..dh {
                    let v: f64 = (0..dims.s).map(|u| w[u] / total * qkv.get(m * dims.s + u, base + 2 * dh + e)).sum();
                    heads.set(row, g * dh + e, v);
                }
            }
        }
    }
    let y = heads.matmul(&p.proj_weight).unwrap();
    Matrix::from_fn(y.rows(), y.cols(), |r, c| y.get(r, c) + p.proj_bias.get(0, c))
}

#[test]
fn attention_examples() {
    let p = LayerParams::random(8, 3, 0);

    // one token: softmax weight 1, output is the V path
    let dims = ModelDims::new(4, 1, 8, 2);
    let x = input(dims, 3);
    let (y, _) = forward_global(Layer::Attention, dims, &grid(2, 1), &x, &p).unwrap();
    let qkv = serial::linear(&x, &p.qkv_weight, &p.qkv_bias).unwrap();
    let v = Matrix::hstack(&[qkv.block(0, 8, 4, 4), qkv.block(0, 20, 4, 4)]).unwrap();
    let expected = serial::linear(&v, &p.proj_weight, &p.proj_bias).unwrap();
    assert!(rel(&y, &expected) <= 1e-12);

    // K = 0: every score is equal, the output averages V over positions
    let dims = ModelDims::new(4, 4, 8, 2);
    let mut pk = p.clone();
    for g in 0..2 {
        for c in 0..4 {
            let col = g * 12 + 4 + c;
            for r in 0..8 {
                pk.qkv_weight.set(r, col, 0.0);
            }
            pk.qkv_bias.set(0, col, 0.0);
        }
    }
    let x = input(dims, 4);
    let (y, _) = forward_global(Layer::Attention, dims, &grid(2, 2), &x, &pk).unwrap();
    let qkv = serial::linear(&x, &pk.qkv_weight, &pk.qkv_bias).unwrap();
    let mut heads = Matrix::zeros(16, 8);
    for m in 0..4 {
        for g in 0..2 {
            for e in 0..4 {
                let mean = (0..4).map(|u| qkv.get(m * 4 + u, g * 12 + 8 + e)).sum::<f64>() / 4.0;
                for t in 0..4 {
                    heads.set(m * 4 + t, g * 4 + e, mean);
                }
            }
        }
    }
    let expected = serial::linear(&heads, &pk.proj_weight, &pk.proj_bias).unwrap();
    assert!(rel(&y, &expected) <= 1e-12);

    // random case on [2,2,2]; b = 4 so each layer holds whole sequences
    let x = input(dims, 5);
    let (y, _) = forward_global(Layer::Attention, dims, &grid(2, 2), &x, &p).unwrap();
    let naive = naive_attention(dims, &x, &p);
    assert!(rel(&y, &naive) <= 1e-8);
    assert!(rel(&serial::attention(dims, &x, &p).unwrap(), &naive) <= 1e-12);
}

#[test]
fn attention_rejects_bad_heads_and_huge_scores() {
    let p = LayerParams::random(8, 3, 0);
    let dims = ModelDims::new(4, 2, 8, 1);
    let err = forward_global(Layer::Attention, dims, &grid(2, 1), &input(dims, 1), &p).unwrap_err();
    assert!(matches!(err, Error::Divisibility { value: 1, divisor: 2, .. }), "{err}");
    let huge = Matrix::zeros(4096, 3);
    assert!(HeadLayout::new(&huge, 4096, 1).is_err());
}

/// Two-pass layernorm with scalar loops.
fn naive_layernorm(x: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Matrix {
    let h = x.cols() as f64;
    Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        let mean = x.row(r).iter().sum::<f64>() / h;
        let var = x.row(r).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
        (x.get(r, c) - mean) / (var + eps).sqrt() * gain.get(0, c) + bias.get(0, c)
    })
}

#[test]
fn layernorm_examples() {
    let dims = ModelDims::new(2, 2, 8, 2);
    let g = grid(2, 1);
    let mut p = LayerParams::zeros(8);

    let constant = Matrix::from_fn(4, 8, |_, _| 3.0);
    let (y, _) = forward_global(Layer::LayerNorm, dims, &g, &constant, &p).unwrap();
    assert_eq!(y.max_abs(), 0.0);

    p.eps = 1e-12;
    let signs = Matrix::from_fn(4, 8, |r, c| if (r + c) % 2 == 0 { 1.0 } else { -1.0 });
    let (y, _) = forward_global(Layer::LayerNorm, dims, &g, &signs, &p).unwrap();
    assert!(y.max_abs_diff(&signs).unwrap() <= 1e-11);

    let p = LayerParams::random(8, 6, 0);
    let x = input(dims, 6);
    let (y, stats) = forward_global(Layer::LayerNorm, dims, &g, &x, &p).unwrap();
    assert!(y.max_abs_diff(&naive_layernorm(&x, &p.ln1_gain, &p.ln1_bias, p.eps)).unwrap() <= 1e-9);
    // one packed [rows, 2] all-reduce per row group
    assert_eq!(stats.kind(CollectiveKind::AllReduce).calls, 2);
}

#[test]
fn layernorm_backward_examples() {
    let dims = ModelDims::new(2, 2, 8, 2);
    let p = LayerParams::random(8, 7, 0);
    let x = input(dims, 7);
    let grads = backward_global(Layer::LayerNorm, dims, &grid(2, 1), &x, &p, &Matrix::zeros(4, 8)).unwrap();
    assert_eq!(grads.input.max_abs(), 0.0);

    let single = ModelDims::new(3, 1, 1, 1);
    let p1 = LayerParams::random(1, 7, 0);
    let x1 = input(single, 8);
    let dy = random_matrix(8, 1, 3, 1);
    let grads = backward_global(Layer::LayerNorm, single, &grid(1, 1), &x1, &p1, &dy).unwrap();
    assert_eq!(grads.input.max_abs(), 0.0);

    let r = random_matrix(9, 1, 4, 8);
    let grads = backward_global(Layer::LayerNorm, dims, &grid(2, 1), &x, &p, &r).unwrap();
    check_layer_grads(Layer::LayerNorm, dims, &x, &p, &r, &grads.input, &grads.params, 1e-6);
}

#[test]
fn bias_add_examples() {
    let dims = ModelDims::new(2, 2, 8, 2);
    let x = input(dims, 10);
    let zero = LayerParams::zeros(8);
    let (y, _) = forward_global(Layer::BiasAdd, dims, &grid(2, 1), &x, &zero).unwrap();
    assert_eq!(y, x);

    let p = LayerParams::random(8, 10, 0);
    let (y, stats) = forward_global(Layer::BiasAdd, dims, &grid(1, 1), &x, &p).unwrap();
    assert_eq!(stats.total_messages(), 0);
    let expected = Matrix::from_fn(4, 8, |r, c| x.get(r, c) + p.proj_bias.get(0, c));
    assert_eq!(y, expected);

    let (y, stats) = forward_global(Layer::BiasAdd, dims, &grid(2, 1), &x, &p).unwrap();
    assert_eq!(y, expected);
    // two column groups, one receiver each
    assert_eq!(stats.total_messages(), 2);

    let dy = random_matrix(10, 3, 4, 8);
    let grads = backward_global(Layer::BiasAdd, dims, &grid(2, 2), &random_matrix(10, 4, 4, 8), &p, &dy);
    assert!(grads.is_err(), "b = 2 does not split over dq = 4");
    let dims4 = ModelDims::new(4, 1, 8, 2);
    let grads = backward_global(Layer::BiasAdd, dims4, &grid(2, 2), &x, &p, &dy).unwrap();
    assert_eq!(grads.input, dy);
    assert!(rel(&grads.params.proj_bias, &dy.col_sums()) <= 1e-14);
}

#[test]
fn block_examples() {
    let dims = ModelDims::new(4, 8, 16, 4);
    let x = input(dims, 11);
    let (y, _) = forward_global(Layer::Block, dims, &grid(2, 2), &x, &LayerParams::zeros(16)).unwrap();
    assert_eq!(y, x);

    let p = LayerParams::random(16, 11, 0);
    let (y2, _) = forward_global(Layer::Block, dims, &grid(2, 2), &x, &p).unwrap();
    assert!(rel(&y2, &serial::block(dims, &x, &p).unwrap()) <= 1e-7);
    let (y1, _) = forward_global(Layer::Block, dims, &grid(2, 1), &x, &p).unwrap();
    assert!(y1.max_abs_diff(&y2).unwrap() <= 1e-10);
}

#[test]
fn every_layer_matches_serial_over_grids_and_seeds() {
    let dims = ModelDims::new(12, 2, 12, 6);
    for g in [grid(1, 1), grid(2, 1), grid(2, 2), grid(3, 1)] {
        for seed in 0..20 {
            let p = LayerParams::random(dims.h, seed, 0);
            let x = input(dims, seed);
            let dy = random_matrix(seed, 901, dims.rows(), dims.h);
            for layer in Layer::ALL {
                let (y, _) = forward_global(layer, dims, &g, &x, &p).unwrap();
                let reference = serial::forward(layer, dims, &x, &p).unwrap();
                assert!(rel(&y, &reference) <= 1e-8, "{layer} on {g} seed {seed}");
                let grads = backward_global(layer, dims, &g, &x, &p, &dy).unwrap();
                let (dx, pg) = serial::backward(layer, dims, &x, &p, &dy).unwrap();
                assert!(rel(&grads.input, &dx) <= 1e-8, "{layer} dX on {g} seed {seed}");
                for ((name, _), (a, b)) in PARAM_NAMES.iter().zip(grads.params.tensors().into_iter().zip(pg.tensors())) {
                    assert!(a.max_abs_diff(b).unwrap() <= 1e-8 * b.max_abs().max(1.0), "{layer} {name} on {g} seed {seed}");
                }
            }
        }
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    let dims = ModelDims::new(4, 2, 4, 2);
    let g = grid(2, 1);
    for layer in Layer::ALL {
        let p = LayerParams::random(dims.h, 12, 0);
        let x = input(dims, 12);
        let r = random_matrix(12, 77, dims.rows(), dims.h);
        let grads = backward_global(layer, dims, &g, &x, &p, &r).unwrap();
        check_layer_grads(layer, dims, &x, &p, &r, &grads.input, &grads.params, 1e-6);
    }
}

#[test]
fn weight_gradients_are_replica_consistent() {
    // gather() refuses diverging replicas, so success means depth copies agree
    let dims = ModelDims::new(4, 2, 8, 2);
    let p = LayerParams::random(8, 13, 0);
    let grads = backward_global(Layer::Block, dims, &grid(2, 2), &input(dims, 13), &p, &random_matrix(13, 1, 8, 8)).unwrap();
    assert!(grads.params.ff1_weight.max_abs() > 0.0);
}

#[test]
fn params_shard_and_gather_round_trip() {
    let g = grid(2, 2);
    let p = LayerParams::random(8, 14, 0);
    let shards: BTreeMap<_, _> = g.coords().map(|c| (c, p.shard(&g, c).unwrap())).collect();
    assert_eq!(LayerParams::gather(&g, &shards).unwrap(), p);
    assert_eq!(shards[&RankCoord::new(1, 0, 0)].ff1_bias.shape(), (0, 0));
    assert_eq!(shards[&RankCoord::new(1, 0, 1)].ff1_weight.shape(), (4, 16));

    let mut bad = shards.clone();
    bad.get_mut(&RankCoord::new(1, 1, 1)).unwrap().ln2_gain.set(0, 0, 9.0);
    assert!(matches!(LayerParams::gather(&g, &bad), Err(Error::ReplicaDivergence { .. })));
}

#[test]
fn toy_model_gradients_match_finite_differences() {
    let model = ToyModel::new(ModelDims::new(4, 2, 4, 2), 2, 15);
    let (loss, grads, _) = model.grads_distributed(&grid(2, 2)).unwrap();
    let (serial_loss, _) = model.grads_serial(&model.params).unwrap();
    assert!((loss - serial_loss).abs() <= 1e-12);
    for (l, g) in grads.iter().enumerate() {
        for (t, (name, _)) in PARAM_NAMES.iter().enumerate() {
            let e = fd_error(g.tensors()[t], model.params[l].tensors()[t], |v| {
                let mut ps = model.params.clone();
                *ps[l].tensors_mut()[t] = v.clone();
                model.loss_serial(&ps).unwrap()
            });
            assert!(e <= 1e-5, "block {l} {name}: {e:e}");
        }
    }
}

#[test]
fn paired_training_agrees() {
    let cfg = ToyConfig::default();
    let report = paired_training(&cfg, false).unwrap();
    assert_eq!(report.steps.len(), 50);
    assert!(report.max_divergence <= 1e-8, "{}", report.max_divergence);
    assert!(report.steps[49].serial_loss < report.steps[0].serial_loss);

    let unit = ToyConfig { q: 1, d: 1, steps: 5, ..cfg.clone() };
    let report = paired_training(&unit, false).unwrap();
    assert!(report.bitwise_identical);

    let none = ToyConfig { steps: 0, ..cfg };
    let report = paired_training(&none, false).unwrap();
    assert!(report.steps.is_empty());
    assert_eq!(report.to_csv(), "step,serial_loss,distributed_loss,divergence\n");
}

#[test]
fn dims_validation() {
    assert!(ModelDims::new(3, 2, 8, 2).check(&grid(2, 1)).is_err());
    assert!(matches!(ModelDims::new(3, 2, 8, 3).check(&grid(3, 1)), Err(Error::Divisibility { value: 8, divisor: 3, .. })));
    assert!(ModelDims::new(4, 2, 8, 3).check(&grid(1, 1)).is_err());
    assert!(ModelDims::new(4, 2, 8, 2).check(&grid(2, 2)).is_ok());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let m = Matrix::from_vec(3, 4, values).unwrap();
        let p = kernels::softmax_rows(&m);
        for r in 0..3 {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.row(r).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance(values in proptest::collection::vec(-10.0f64..10.0, 16)) {
        let x = Matrix::from_vec(2, 8, values).unwrap();
        let norm = kernels::normalize(&x, &kernels::row_moments(&x), 8, 0.0);
        for r in 0..2 {
            let row = norm.xhat.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| v * v).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6 || var == 0.0);
        }
    }

    #[test]
    fn gelu_grad_matches_difference_quotient(x in -6.0f64..6.0) {
        let h = 1e-6;
        let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
        prop_assert!((gelu_grad(x) - numeric).abs() < 1e-8);
    }
}
