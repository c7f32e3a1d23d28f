use serde::Serialize;
use tesseract_core::layers::toy::{paired_training, ToyConfig, ToyReport};
use tesseract_core::GridSpec;

use crate::args::Format;
use crate::config::Settings;
use crate::output::json;
use crate::{CliError, Report};

pub const DIVERGENCE_TOLERANCE: f64 = 1e-8;

#[derive(Serialize)]
struct TrainReport<'a> {
    command: &'static str,
    tolerance: f64,
    pass: bool,
    #[serde(flatten)]
    report: &'a ToyReport,
}

fn toy_config(settings: &Settings, steps: Option<usize>, lr: Option<f64>, layers: Option<usize>) -> Result<ToyConfig, CliError> {
    let mut cfg = ToyConfig::default();
    let x = &settings.extra;
    let [b, s, h, n] = x.toy_dims;
    cfg.b = b.unwrap_or(cfg.b);
    cfg.s = s.unwrap_or(cfg.s);
    cfg.h = h.unwrap_or(cfg.h);
    cfg.n = n.unwrap_or(cfg.n);
    cfg.q = x.toy_grid[0].unwrap_or(cfg.q);
    cfg.d = x.toy_grid[1].unwrap_or(cfg.d);
    cfg.layers = layers.or(x.layers).unwrap_or(cfg.layers);
    cfg.steps = steps.or(x.steps).unwrap_or(cfg.steps);
    cfg.lr = lr.or(x.lr).unwrap_or(cfg.lr);
    cfg.seed = settings.seed;
    if let Some(m) = settings.model_parsed {
        (cfg.b, cfg.s, cfg.h, cfg.n) = (m.b, m.s, m.h, m.n);
    }
    match settings.grids.as_slice() {
        [] => {}
        [g] => (cfg.q, cfg.d) = (g.q(), g.d()),
        _ => return Err(CliError::Config("train-toy takes a single --grid".into())),
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(CliError::Config(format!("learning rate must be a nonnegative number, got {}", cfg.lr)));
    }
    if cfg.layers == 0 {
        return Err(CliError::Config("the toy model needs at least one block".into()));
    }
    let grid = GridSpec::with_depth_override(cfg.q, cfg.d, settings.allow_d_gt_q).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.dims().check(&grid).map_err(|e| CliError::Config(format!("{e} on grid {grid}")))?;
    Ok(cfg)
}

pub fn run(settings: &Settings, steps: Option<usize>, lr: Option<f64>, layers: Option<usize>) -> Result<Report, CliError> {
    let cfg = toy_config(settings, steps, lr, layers)?;
    let report = paired_training(&cfg, settings.allow_d_gt_q)?;
    let pass = report.max_divergence <= DIVERGENCE_TOLERANCE;
    let mut notes = vec![format!(
        "{} steps on [{},{},{}]: max loss divergence {:e}",
        cfg.steps, cfg.q, cfg.q, cfg.d, report.max_divergence
    )];
    if !pass {
        notes.push(format!("FAIL divergence exceeds {DIVERGENCE_TOLERANCE:e}"));
    }
    let body = match settings.format.unwrap_or(Format::Csv) {
        Format::Csv => report.to_csv(),
        Format::Json => json(&TrainReport {
            command: "train-toy",
            tolerance: DIVERGENCE_TOLERANCE,
            pass,
            report: &report,
        })?,
    };
    Ok(Report { body, passed: pass, notes })
}
