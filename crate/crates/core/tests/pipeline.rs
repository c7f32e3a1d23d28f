//! End-to-end use of the public API.

use tesseract_core::algorithms::{tesseract_backward, tesseract_matmul_sharded, MatmulVariant, TesseractOptions};
use tesseract_core::layers::{forward_global, serial, Layer, LayerParams, ModelDims};
use tesseract_core::rng::random_matrix;
use tesseract_core::runtime::{inputs_from, run_spmd};
use tesseract_core::tensor::io;
use tesseract_core::{Error, GridSpec, GroupKind, Matrix, ShardScheme, ShardedMatrix};

#[test]
fn two_layer_linear_chain_stays_sharded() {
    let grid = GridSpec::new(2, 2).unwrap();
    let x = random_matrix(1, 0, 16, 8);
    let w1 = random_matrix(1, 1, 8, 12);
    let w2 = random_matrix(1, 2, 12, 4);
    let opts = TesseractOptions::default();
    let sx = ShardedMatrix::partition(&x, ShardScheme::TesseractA, &grid).unwrap();
    let sw1 = ShardedMatrix::partition(&w1, ShardScheme::TesseractB, &grid).unwrap();
    let sw2 = ShardedMatrix::partition(&w2, ShardScheme::TesseractB, &grid).unwrap();
    let (h, _) = tesseract_matmul_sharded(&sx, &sw1, MatmulVariant::NN, opts).unwrap();
    let (y, _) = tesseract_matmul_sharded(&h, &sw2, MatmulVariant::NN, opts).unwrap();
    let expected = x.matmul(&w1).unwrap().matmul(&w2).unwrap();
    assert!(y.combine().unwrap().rel_diff(&expected).unwrap() < 1e-12);

    // backward through the second product feeds the first
    let dy = ShardedMatrix::partition(&random_matrix(1, 3, 16, 4), ShardScheme::TesseractA, &grid).unwrap();
    let (dh, dw2, _) = tesseract_backward(&dy, &h, &sw2).unwrap();
    let (dx, dw1, _) = tesseract_backward(&dh, &sx, &sw1).unwrap();
    let dyg = dy.combine().unwrap();
    let dhg = dyg.matmul(&w2.transpose()).unwrap();
    let hg = x.matmul(&w1).unwrap();
    assert!(dw2.combine().unwrap().rel_diff(&hg.transpose().matmul(&dyg).unwrap()).unwrap() < 1e-12);
    assert!(dx.combine().unwrap().rel_diff(&dhg.matmul(&w1.transpose()).unwrap()).unwrap() < 1e-12);
    assert!(dw1.combine().unwrap().rel_diff(&x.transpose().matmul(&dhg).unwrap()).unwrap() < 1e-12);
}

#[test]
fn custom_programs_see_group_sums() {
    let grid = GridSpec::new(3, 2).unwrap();
    let inputs = inputs_from(&grid, |c| Matrix::from_vec(1, 1, vec![grid.rank_of(c).unwrap() as f64]).unwrap());
    let run = run_spmd(&grid, inputs, |ctx, m| ctx.all_reduce(GroupKind::Depth, &m)).unwrap();
    for (c, m) in &run.outputs {
        let lower = (c.i * 3 + c.j) as f64;
        assert_eq!(m.get(0, 0), 2.0 * lower + 9.0);
    }
    assert_eq!(run.stats.total_messages(), 9 * 2);
}

#[test]
fn unmatched_collective_is_reported_not_hung() {
    let grid = GridSpec::new(2, 1).unwrap();
    let inputs = inputs_from(&grid, |c| c);
    let result = run_spmd(&grid, inputs, |ctx, c| {
        if c.i == 0 && c.j == 0 {
            ctx.broadcast(GroupKind::Row, 0, Some(&Matrix::zeros(1, 1)))?;
        }
        Ok(())
    });
    assert!(result.is_err());
    let e = result.unwrap_err();
    assert!(matches!(e, Error::Deadlock { .. } | Error::RankFailed { .. } | Error::Aborted), "{e}");
}

#[test]
fn block_layer_on_grid_matches_serial_and_files_round_trip() {
    let dims = ModelDims::new(4, 3, 8, 4);
    let grid = GridSpec::new(2, 2).unwrap();
    let p = LayerParams::random(8, 4, 0);
    let x = random_matrix(4, 10, dims.rows(), dims.h);
    let (y, stats) = forward_global(Layer::Block, dims, &grid, &x, &p).unwrap();
    let reference = serial::forward(Layer::Block, dims, &x, &p).unwrap();
    assert!(y.rel_diff(&reference).unwrap() < 1e-12);
    assert!(stats.total_messages() > 0);

    let dir = std::env::temp_dir().join(format!("tesseract-core-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    for name in ["y.csv", "y.bin"] {
        let path = dir.join(name);
        io::save(&y, &path).unwrap();
        assert_eq!(io::load(&path).unwrap(), y);
    }
    std::fs::remove_dir_all(&dir).unwrap();
}
