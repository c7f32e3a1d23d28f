use serde::Serialize;
use tesseract_core::algorithms::{
    cannon_matmul, megatron_1d_linear, summa_matmul, tesseract_matmul_sharded, MatmulVariant, TesseractOptions,
};
use tesseract_core::layers::{self, serial, Layer, LayerParams, ModelDims};
use tesseract_core::rng::random_matrix;
use tesseract_core::{GridSpec, Matrix, RankCoord, ShardedMatrix};

use crate::args::Format;
use crate::config::Settings;
use crate::output::{json, Csv};
use crate::{CliError, Report};

pub const MATMUL_TOLERANCE: f64 = 1e-10;
pub const LAYER_TOLERANCE: f64 = 1e-8;
const DEFAULT_TRIALS: usize = 50;
const DEFAULT_LAYER_TRIALS: usize = 5;

pub const DEFAULT_GRIDS: [(usize, usize); 6] = [(1, 1), (2, 1), (2, 2), (3, 1), (3, 3), (4, 2)];

#[derive(Clone, Debug, Serialize)]
struct Case {
    case: String,
    grid: String,
    trials: usize,
    max_rel_error: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    command: &'static str,
    config: &'a Settings,
    layer_trials: usize,
    cases: Vec<Case>,
    failed: Vec<String>,
    pass: bool,
}

/// Relative error that falls back to the absolute error for a zero reference.
fn rel_error(x: &Matrix, reference: &Matrix) -> Result<f64, CliError> {
    let diff = x.max_abs_diff(reference)?;
    let scale = reference.max_abs();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

fn matmul_dims(settings: &Settings, grid: &GridSpec) -> (usize, usize, usize) {
    let (q, d) = (grid.q(), grid.d());
    settings.dims_parsed.unwrap_or((4 * q * d, 3 * q, 2 * q))
}

fn layer_dims(settings: &Settings, grid: &GridSpec) -> ModelDims {
    let (q, d) = (grid.q(), grid.d());
    settings
        .model_parsed
        .unwrap_or(ModelDims::new(2 * q * d, 3, 4 * q, 2 * q))
}

fn check_divisible(what: &str, value: usize, divisor: usize, grid: &GridSpec) -> Result<(), CliError> {
    if !value.is_multiple_of(divisor) {
        return Err(CliError::Config(format!(
            "{what} = {value} is not divisible by {divisor} on grid {grid}"
        )));
    }
    Ok(())
}

fn validate(settings: &Settings, grid: &GridSpec, (a, b, c): (usize, usize, usize)) -> Result<(), CliError> {
    let (q, d, p) = (grid.q(), grid.d(), grid.p());
    check_divisible("a", a, q * d, grid)?;
    check_divisible("b", b, q, grid)?;
    check_divisible("c", c, q, grid)?;
    if settings.dims_parsed.is_some() {
        check_divisible("c (Megatron hidden)", c, p, grid)?;
    }
    layer_dims(settings, grid).check(grid).map_err(|e| CliError::Config(format!("{e} on grid {grid}")))
}

struct Tracker {
    cases: Vec<Case>,
}

impl Tracker {
    fn record(&mut self, case: &str, grid: &GridSpec, trials: usize, errors: impl IntoIterator<Item = f64>, tolerance: f64) {
        let max = errors.into_iter().fold(0.0, f64::max);
        self.cases.push(Case {
            case: case.to_string(),
            grid: grid.to_string(),
            trials,
            max_rel_error: max,
            tolerance,
            pass: max <= tolerance,
        });
    }
}

fn stream(trial: usize, tensor: u64) -> u64 {
    trial as u64 * 8 + tensor
}

fn tesseract_case(
    settings: &Settings,
    grid: &GridSpec,
    variant: MatmulVariant,
    dims: (usize, usize, usize),
    trial: usize,
    fault: bool,
) -> Result<f64, CliError> {
    let (a, b, c) = dims;
    let (ls, rs, _) = variant.schemes();
    let (lshape, rshape) = match variant {
        MatmulVariant::NN => ((a, b), (b, c)),
        MatmulVariant::NT => ((a, c), (b, c)),
        MatmulVariant::TN => ((a, b), (a, c)),
    };
    let left = random_matrix(settings.seed, stream(trial, 0), lshape.0, lshape.1);
    let right = random_matrix(settings.seed, stream(trial, 1), rshape.0, rshape.1);
    let opts = TesseractOptions {
        meter_initial_replication: settings.meter_initial_replication,
    };
    let sl = ShardedMatrix::partition(&left, ls, grid)?;
    let sr = ShardedMatrix::partition(&right, rs, grid)?;
    let (mut out, _) = tesseract_matmul_sharded(&sl, &sr, variant, opts)?;
    if fault {
        let blk = out.block_mut(RankCoord::new(0, 0, 0)).expect("origin block");
        let v = blk.get(0, 0);
        blk.set(0, 0, v + 1.0);
    }
    rel_error(&out.combine()?, &variant.serial(&left, &right)?)
}

fn layer_errors(settings: &Settings, grid: &GridSpec, layer: Layer, trial: usize) -> Result<(f64, f64), CliError> {
    let dims = layer_dims(settings, grid);
    let seed = settings.seed;
    let p = LayerParams::random(dims.h, seed, 1000 + 32 * trial as u64);
    let x = random_matrix(seed, 5000 + 2 * trial as u64, dims.rows(), dims.h);
    let dy = random_matrix(seed, 5001 + 2 * trial as u64, dims.rows(), dims.h);
    let (y, _) = layers::forward_global(layer, dims, grid, &x, &p)?;
    let fwd = rel_error(&y, &serial::forward(layer, dims, &x, &p)?)?;
    let grads = layers::backward_global(layer, dims, grid, &x, &p, &dy)?;
    let (dx, pg) = serial::backward(layer, dims, &x, &p, &dy)?;
    let mut bwd = rel_error(&grads.input, &dx)?;
    for (a, b) in grads.params.tensors().into_iter().zip(pg.tensors()) {
        bwd = bwd.max(rel_error(a, b)?);
    }
    Ok((fwd, bwd))
}

pub fn run(settings: &Settings, layer_trials: Option<usize>, inject_fault: bool) -> Result<Report, CliError> {
    let grids = if settings.grids.is_empty() {
        DEFAULT_GRIDS
            .iter()
            .map(|&(q, d)| GridSpec::new(q, d))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        settings.grids.clone()
    };
    let trials = settings.trials.unwrap_or(DEFAULT_TRIALS);
    let layer_trials = layer_trials.or(settings.extra.layer_trials).unwrap_or(DEFAULT_LAYER_TRIALS.min(trials));
    if trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    for g in &grids {
        validate(settings, g, matmul_dims(settings, g))?;
    }

    let mut t = Tracker { cases: Vec::new() };
    for (gi, grid) in grids.iter().enumerate() {
        let dims = matmul_dims(settings, grid);
        let (a, b, c) = dims;
        for variant in MatmulVariant::ALL {
            let errs = (0..trials)
                .map(|trial| {
                    let fault = inject_fault && gi == 0 && trial == 0 && variant == MatmulVariant::NN;
                    tesseract_case(settings, grid, variant, dims, trial, fault)
                })
                .collect::<Result<Vec<_>, _>>()?;
            t.record(&format!("tesseract_{}", variant.as_str()), grid, trials, errs, MATMUL_TOLERANCE);
        }
        if grid.d() == 1 {
            let q = grid.q();
            let mut summa = Vec::new();
            let mut cannon = Vec::new();
            for trial in 0..trials {
                let x = random_matrix(settings.seed, stream(trial, 2), a, b);
                let y = random_matrix(settings.seed, stream(trial, 3), b, c);
                let reference = x.matmul(&y)?;
                summa.push(rel_error(&summa_matmul(&x, &y, q)?.0, &reference)?);
                cannon.push(rel_error(&cannon_matmul(&x, &y, q)?.0, &reference)?);
            }
            t.record("summa", grid, trials, summa, MATMUL_TOLERANCE);
            t.record("cannon", grid, trials, cannon, MATMUL_TOLERANCE);
        }
        let p = grid.p();
        let hidden = if settings.dims_parsed.is_some() { c } else { 2 * p };
        let mut mega = Vec::new();
        for trial in 0..trials {
            let x = random_matrix(settings.seed, stream(trial, 4), a, b);
            let w1 = random_matrix(settings.seed, stream(trial, 5), b, hidden);
            let w2 = random_matrix(settings.seed, stream(trial, 6), hidden, b);
            let reference = x.matmul(&w1)?.matmul(&w2)?;
            mega.push(rel_error(&megatron_1d_linear(&x, &w1, &w2, p)?.0, &reference)?);
        }
        t.record(&format!("megatron_1d_p{p}"), grid, trials, mega, MATMUL_TOLERANCE);

        for layer in Layer::ALL {
            let mut fwd = Vec::new();
            let mut bwd = Vec::new();
            for trial in 0..layer_trials {
                let (f, b) = layer_errors(settings, grid, layer, trial)?;
                fwd.push(f);
                bwd.push(b);
            }
            t.record(&format!("layer_{}_forward", layer.as_str()), grid, layer_trials, fwd, LAYER_TOLERANCE);
            t.record(&format!("layer_{}_backward", layer.as_str()), grid, layer_trials, bwd, LAYER_TOLERANCE);
        }
    }

    let failed: Vec<String> = t
        .cases
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} on {}", c.case, c.grid))
        .collect();
    let notes = t
        .cases
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("FAIL {} on {}: max relative error {:e} > {:e}", c.case, c.grid, c.max_rel_error, c.tolerance))
        .collect();
    let pass = failed.is_empty();
    let body = match settings.format.unwrap_or(Format::Json) {
        Format::Json => json(&VerifyReport {
            command: "verify",
            config: settings,
            layer_trials,
            cases: t.cases,
            failed,
            pass,
        })?,
        Format::Csv => {
            let mut csv = Csv::new();
            csv.row(["case", "grid", "trials", "max_rel_error", "tolerance", "pass"]);
            for c in &t.cases {
                csv.row([
                    c.case.clone(),
                    c.grid.clone(),
                    c.trials.to_string(),
                    format!("{:e}", c.max_rel_error),
                    format!("{:e}", c.tolerance),
                    c.pass.to_string(),
                ]);
            }
            csv.finish()
        }
    };
    Ok(Report { body, passed: pass, notes })
}
