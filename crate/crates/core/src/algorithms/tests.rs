use super::tesseract::{nn_local, replicate_over_depth};
use super::*;
use crate::grid::{GridSpec, GroupKind};
use crate::rng::random_matrix;
use crate::runtime::{inputs_from, run_spmd, CollectiveKind};
use crate::tensor::{matmul_serial, Matrix, ShardScheme, ShardedMatrix};

const TOL: f64 = 1e-10;

fn grid(q: usize, d: usize) -> GridSpec {
    GridSpec::with_depth_override(q, d, true).unwrap()
}

fn rel(x: &Matrix, reference: &Matrix) -> f64 {
    x.rel_diff(reference).unwrap()
}

#[test]
fn cannon_matches_serial() {
    let (c, stats) = cannon_matmul(&random_matrix(1, 0, 3, 5), &random_matrix(1, 1, 5, 2), 1).unwrap();
    assert_eq!(c, matmul_serial(&random_matrix(1, 0, 3, 5), &random_matrix(1, 1, 5, 2)).unwrap());
    assert_eq!(stats.total_messages(), 0);
    for q in 2..=4 {
        let a = random_matrix(2, 0, 2 * q, 3 * q);
        let b = random_matrix(2, 1, 3 * q, q);
        let (c, stats) = cannon_matmul(&a, &b, q).unwrap();
        assert!(rel(&c, &matmul_serial(&a, &b).unwrap()) <= TOL);
        // skew: one call per row and column group; then q − 1 rounds of two
        assert_eq!(stats.kind(CollectiveKind::Shift).calls as usize, 2 * q * q);
        // skew moves every rank outside row/column 0; each round moves all p ranks twice
        let skew = 2 * q * (q - 1);
        assert_eq!(stats.total_messages() as usize, skew + 2 * (q - 1) * q * q);
    }
}

#[test]
fn summa_matches_serial_and_counts() {
    let a = random_matrix(3, 0, 4, 4);
    let b = random_matrix(3, 1, 4, 4);
    let (c, stats) = summa_matmul(&a, &b, 1).unwrap();
    assert_eq!(c, matmul_serial(&a, &b).unwrap());
    assert_eq!(stats.total_messages(), 0);
    for q in 2..=4 {
        let a = random_matrix(4, 0, 2 * q, 2 * q);
        let b = random_matrix(4, 1, 2 * q, 3 * q);
        let (c, stats) = summa_matmul(&a, &b, q).unwrap();
        assert!(rel(&c, &matmul_serial(&a, &b).unwrap()) <= TOL);
        // q steps × 2 broadcasts per row/column group × q groups × (q − 1) receivers
        assert_eq!(stats.total_messages() as usize, 2 * q * q * q - 2 * q * q);
    }
    assert!(summa_matmul(&random_matrix(0, 0, 3, 4), &random_matrix(0, 1, 4, 4), 2).is_err());
}

#[test]
fn tesseract_unit_grid_is_serial() {
    let a = random_matrix(5, 0, 3, 4);
    let b = random_matrix(5, 1, 4, 2);
    let (c, stats) = tesseract_matmul(&a, &b, &grid(1, 1), MatmulVariant::NN, TesseractOptions::default()).unwrap();
    assert_eq!(c, matmul_serial(&a, &b).unwrap());
    assert_eq!(stats.total_messages(), 0);
}

#[test]
fn tesseract_variants_match_serial() {
    for (q, d) in [(2, 1), (2, 2), (3, 1), (3, 3), (4, 2), (2, 4)] {
        let g = grid(q, d);
        let (a, b, c) = (2 * q * d, 2 * q, 3 * q);
        let left = random_matrix(6, 0, a, b);
        let right = random_matrix(6, 1, b, c);
        let opts = TesseractOptions::default();
        let (out, _) = tesseract_matmul(&left, &right, &g, MatmulVariant::NN, opts).unwrap();
        assert!(rel(&out, &matmul_serial(&left, &right).unwrap()) <= TOL, "NN {g}");

        let left_nt = random_matrix(6, 2, a, c);
        let (out, _) = tesseract_matmul(&left_nt, &right, &g, MatmulVariant::NT, opts).unwrap();
        assert!(rel(&out, &MatmulVariant::NT.serial(&left_nt, &right).unwrap()) <= TOL, "NT {g}");

        let right_tn = random_matrix(6, 3, a, c);
        let (out, stats) = tesseract_matmul(&left, &right_tn, &g, MatmulVariant::TN, opts).unwrap();
        assert!(rel(&out, &MatmulVariant::TN.serial(&left, &right_tn).unwrap()) <= TOL, "TN {g}");
        let depth_calls = stats.kind(CollectiveKind::AllReduce).calls as usize;
        assert_eq!(depth_calls, if d > 1 { q * q } else { 0 });
    }
}

#[test]
fn tesseract_depth_one_is_summa() {
    for q in 1..=4 {
        let a = random_matrix(7, 0, 2 * q, 3 * q);
        let b = random_matrix(7, 1, 3 * q, q);
        let (ct, st) = tesseract_matmul(&a, &b, &grid(q, 1), MatmulVariant::NN, TesseractOptions::default()).unwrap();
        let (cs, ss) = summa_matmul(&a, &b, q).unwrap();
        assert_eq!(ct, cs);
        assert_eq!(st, ss);
    }
}

#[test]
fn tesseract_rejects_bad_shapes() {
    let g = grid(2, 2);
    let opts = TesseractOptions::default();
    let err = tesseract_matmul(&Matrix::zeros(6, 4), &Matrix::zeros(4, 4), &g, MatmulVariant::NN, opts).unwrap_err();
    assert!(matches!(err, crate::Error::Divisibility { value: 6, divisor: 4, .. }));
    let err = tesseract_matmul(&Matrix::zeros(8, 4), &Matrix::zeros(2, 4), &g, MatmulVariant::NN, opts).unwrap_err();
    assert!(matches!(err, crate::Error::ShapeMismatch { .. }));
    let sa = ShardedMatrix::partition(&Matrix::zeros(8, 4), ShardScheme::TesseractA, &g).unwrap();
    assert!(tesseract_matmul_sharded(&sa, &sa, MatmulVariant::NN, opts).is_err());
}

#[test]
fn grid_invariance_of_results() {
    let a = random_matrix(8, 0, 24, 12);
    let b = random_matrix(8, 1, 12, 12);
    let serial = matmul_serial(&a, &b).unwrap();
    let mut outputs = Vec::new();
    for (q, d) in [(1, 1), (2, 1), (2, 2), (3, 1), (3, 2), (2, 3)] {
        let (c, _) = tesseract_matmul(&a, &b, &grid(q, d), MatmulVariant::NN, TesseractOptions::default()).unwrap();
        outputs.push(c);
    }
    for c in &outputs {
        assert!(c.max_abs_diff(&serial).unwrap() <= 1e-12 * serial.max_abs());
        assert!(c.max_abs_diff(&outputs[0]).unwrap() <= 1e-12 * serial.max_abs());
    }
}

#[test]
fn initial_replication_meter() {
    let g = grid(2, 2);
    let a = random_matrix(9, 0, 8, 4);
    let b = random_matrix(9, 1, 4, 6);
    let (c0, s0) = tesseract_matmul(&a, &b, &g, MatmulVariant::NN, TesseractOptions::default()).unwrap();
    let metered = TesseractOptions { meter_initial_replication: true };
    let (c1, s1) = tesseract_matmul(&a, &b, &g, MatmulVariant::NN, metered).unwrap();
    assert_eq!(c0, c1);
    // four depth groups, one receiver each, a 2×3 block per message
    assert_eq!(s1.total_messages() - s0.total_messages(), 4);
    assert_eq!(s1.total_sent_elements() - s0.total_sent_elements(), 4 * 6);

    // the replication broadcast really moves layer-0 blocks
    let sb = ShardedMatrix::partition(&b, ShardScheme::TesseractB, &g).unwrap();
    let run = run_spmd(&g, inputs_from(&g, |c| {
        if c.k == 0 { sb.block(c).unwrap().clone() } else { Matrix::zeros(2, 3) }
    }), |ctx, blk| replicate_over_depth(ctx, &blk))
    .unwrap();
    for (c, blk) in &run.outputs {
        assert_eq!(blk, sb.block(*c).unwrap());
    }
}

#[test]
fn backward_examples() {
    let g = grid(2, 2);
    let a = random_matrix(10, 0, 8, 4);
    let b = random_matrix(10, 1, 4, 4);
    let sa = ShardedMatrix::partition(&a, ShardScheme::TesseractA, &g).unwrap();
    let sb = ShardedMatrix::partition(&b, ShardScheme::TesseractB, &g).unwrap();

    let zero = ShardedMatrix::partition(&Matrix::zeros(8, 4), ShardScheme::TesseractA, &g).unwrap();
    let (ga, gb, _) = tesseract_backward(&zero, &sa, &sb).unwrap();
    assert_eq!(ga.combine().unwrap(), Matrix::zeros(8, 4));
    assert_eq!(gb.combine().unwrap(), Matrix::zeros(4, 4));

    let gc = random_matrix(10, 2, 8, 4);
    let sgc = ShardedMatrix::partition(&gc, ShardScheme::TesseractA, &g).unwrap();
    let (ga, gb, stats) = tesseract_backward(&sgc, &sa, &sb).unwrap();
    let ga_ref = gc.matmul(&b.transpose()).unwrap();
    let gb_ref = a.transpose().matmul(&gc).unwrap();
    assert!(rel(&ga.combine().unwrap(), &ga_ref) <= TOL);
    // combine() also verifies the depth replicas agree exactly
    assert!(rel(&gb.combine().unwrap(), &gb_ref) <= TOL);
    assert_eq!(stats.kind(CollectiveKind::AllReduce).calls, 4);

    let g1 = grid(2, 1);
    let a = random_matrix(11, 0, 4, 4);
    let sa = ShardedMatrix::partition(&a, ShardScheme::TesseractA, &g1).unwrap();
    let sb = ShardedMatrix::partition(&b, ShardScheme::TesseractB, &g1).unwrap();
    let sgc = ShardedMatrix::partition(&random_matrix(11, 2, 4, 4), ShardScheme::TesseractA, &g1).unwrap();
    let (_, _, stats) = tesseract_backward(&sgc, &sa, &sb).unwrap();
    assert_eq!(stats.kind(CollectiveKind::AllReduce), Default::default());
}

#[test]
fn depth_reduces_received_volume_at_fixed_p() {
    let a = random_matrix(12, 0, 64, 32);
    let b = random_matrix(12, 1, 32, 32);
    let opts = TesseractOptions::default();
    let (_, deep) = tesseract_matmul(&a, &b, &grid(2, 4), MatmulVariant::NN, opts).unwrap();
    let (_, flat) = tesseract_matmul(&a, &b, &grid(4, 1), MatmulVariant::NN, opts).unwrap();
    // (q − 1)(ab + bcd) received elements under flat counting
    assert_eq!(deep.total_recv_elements(), 64 * 32 + 32 * 32 * 4);
    assert_eq!(flat.total_recv_elements(), 3 * (64 * 32 + 32 * 32));
    assert!(deep.total_recv_elements() < flat.total_recv_elements());
}

#[test]
fn megatron_baseline() {
    let x = random_matrix(13, 0, 2, 4);
    let w1 = random_matrix(13, 1, 4, 8);
    let w2 = random_matrix(13, 2, 8, 4);
    let serial = x.matmul(&w1).unwrap().matmul(&w2).unwrap();
    let (y, stats) = megatron_1d_linear(&x, &w1, &w2, 1).unwrap();
    assert_eq!(y, serial);
    assert_eq!(stats.total_messages(), 0);
    let (y, stats) = megatron_1d_linear(&x, &w1, &w2, 2).unwrap();
    assert!(rel(&y, &serial) <= TOL);
    assert_eq!(stats.total_messages(), 2);
    let (y, _) = megatron_1d_linear(&x, &w1, &Matrix::zeros(8, 4), 4).unwrap();
    assert_eq!(y, Matrix::zeros(2, 4));
    assert!(megatron_1d_linear(&x, &w1, &w2, 3).is_err());
}

#[test]
fn chained_kernels_inside_one_program() {
    // two NN products back to back on the same ranks
    let g = grid(2, 2);
    let x = random_matrix(14, 0, 8, 4);
    let w1 = random_matrix(14, 1, 4, 6);
    let w2 = random_matrix(14, 2, 6, 4);
    let sx = ShardedMatrix::partition(&x, ShardScheme::TesseractA, &g).unwrap();
    let s1 = ShardedMatrix::partition(&w1, ShardScheme::TesseractB, &g).unwrap();
    let s2 = ShardedMatrix::partition(&w2, ShardScheme::TesseractB, &g).unwrap();
    let run = run_spmd(&g, inputs_from(&g, |c| c), |ctx, c| {
        let h = nn_local(ctx, sx.block(c).unwrap(), s1.block(c).unwrap())?;
        nn_local(ctx, &h, s2.block(c).unwrap())
    })
    .unwrap();
    let y = ShardedMatrix::from_blocks((8, 4), ShardScheme::TesseractA, &g, run.outputs).unwrap().combine().unwrap();
    let serial = x.matmul(&w1).unwrap().matmul(&w2).unwrap();
    assert!(rel(&y, &serial) <= TOL);
    let _ = GroupKind::Row;
}
