//! Merges the JSON config file with command-line flags into one normalized
//! configuration. Flags win on conflict.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tesseract_core::layers::ModelDims;
use tesseract_core::GridSpec;

use crate::args::{CommonArgs, Format};
use crate::CliError;

/// One grid or a list of grids.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum GridField {
    One(String),
    Many(Vec<String>),
}

/// Either `"a,b,c"` or `[a, b, c]`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum DimsField {
    Text(String),
    List(Vec<usize>),
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    grid: Option<GridField>,
    dims: Option<DimsField>,
    model: Option<DimsField>,
    seed: Option<u64>,
    trials: Option<usize>,
    out: Option<PathBuf>,
    format: Option<Format>,
    meter_initial_replication: Option<bool>,
    allow_d_gt_q: Option<bool>,
    trace: Option<PathBuf>,
    // toy-model keys
    b: Option<usize>,
    s: Option<usize>,
    h: Option<usize>,
    n: Option<usize>,
    q: Option<usize>,
    d: Option<usize>,
    layers: Option<usize>,
    steps: Option<usize>,
    lr: Option<f64>,
    layer_trials: Option<usize>,
    procs: Option<Vec<u64>>,
}

/// Fully resolved settings. Serializes to a canonical config document that
/// can be fed back through `--config`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    pub meter_initial_replication: bool,
    pub allow_d_gt_q: bool,
    #[serde(skip)]
    pub grids: Vec<GridSpec>,
    #[serde(skip)]
    pub dims_parsed: Option<(usize, usize, usize)>,
    #[serde(skip)]
    pub model_parsed: Option<ModelDims>,
    #[serde(skip)]
    pub format: Option<Format>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub trace: Option<PathBuf>,
    #[serde(skip)]
    pub extra: Extra,
}

/// Command-specific keys that only the config file can carry; the matching
/// subcommand flags override them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extra {
    pub toy_dims: [Option<usize>; 4],
    pub toy_grid: [Option<usize>; 2],
    pub layers: Option<usize>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub layer_trials: Option<usize>,
    pub procs: Option<Vec<u64>>,
}

fn parse_list(what: &str, text: &str, len: usize) -> Result<Vec<usize>, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != len {
        return Err(CliError::Config(format!(
            "--{what} expects {len} comma-separated integers, got {text:?}"
        )));
    }
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| match p.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(CliError::Config(format!("--{what}: entry {} ({p:?}) is not a positive integer", i + 1))),
        })
        .collect()
}

fn dims_text(field: DimsField) -> String {
    match field {
        DimsField::Text(t) => t,
        DimsField::List(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
    }
}

fn read_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

pub fn resolve(args: &CommonArgs) -> Result<Settings, CliError> {
    let file = match &args.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    let allow_d_gt_q = args.allow_d_gt_q || file.allow_d_gt_q.unwrap_or(false);
    let raw_grids = if !args.grid.is_empty() {
        args.grid.clone()
    } else {
        match file.grid {
            Some(GridField::One(g)) => vec![g],
            Some(GridField::Many(g)) => g,
            None => Vec::new(),
        }
    };
    let grids = raw_grids
        .iter()
        .map(|g| GridSpec::parse(g, allow_d_gt_q).map_err(|e| CliError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let dims = args.dims.clone().or(file.dims.map(dims_text));
    let dims_parsed = match &dims {
        Some(t) => {
            let v = parse_list("dims", t, 3)?;
            Some((v[0], v[1], v[2]))
        }
        None => None,
    };
    let model = args.model.clone().or(file.model.map(dims_text));
    let model_parsed = match &model {
        Some(t) => {
            let v = parse_list("model", t, 4)?;
            Some(ModelDims::new(v[0], v[1], v[2], v[3]))
        }
        None => None,
    };

    Ok(Settings {
        grid: grids.iter().map(|g| g.to_string()).collect(),
        dims: dims_parsed.map(|(a, b, c)| format!("{a},{b},{c}")),
        model: model_parsed.map(|m| format!("{},{},{},{}", m.b, m.s, m.h, m.n)),
        seed: args.seed.or(file.seed).unwrap_or(0),
        trials: args.trials.or(file.trials),
        meter_initial_replication: args.meter_initial_replication || file.meter_initial_replication.unwrap_or(false),
        allow_d_gt_q,
        grids,
        dims_parsed,
        model_parsed,
        format: args.format.or(file.format),
        out: args.out.clone().or(file.out),
        trace: args.trace.clone().or(file.trace),
        extra: Extra {
            toy_dims: [file.b, file.s, file.h, file.n],
            toy_grid: [file.q, file.d],
            layers: file.layers,
            steps: file.steps,
            lr: file.lr,
            layer_trials: file.layer_trials,
            procs: file.procs,
        },
    })
}
