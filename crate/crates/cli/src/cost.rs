use serde::Serialize;
use tesseract_core::costmodel::{
    cost_sweep, crossover_sweep, memory_per_proc, round4, speedup, table_metrics, transmission_count, Algo, CostRow,
    Crossover, TableMetrics, TableRow, SPEEDUP_CLAIMS, STRONG_SCALING, WEAK_SCALING,
};

use crate::args::Format;
use crate::config::Settings;
use crate::output::{json, opt, Csv};
use crate::{CliError, Report};

const DEFAULT_PROCS: [u64; 3] = [16, 64, 256];
const DEFAULT_N: u64 = 1024;

#[derive(Serialize)]
struct RatioLine {
    p: u64,
    cannon: u64,
    two_five_d: u64,
    tesseract: u64,
    cannon_over_tesseract: f64,
    two_five_d_over_tesseract: f64,
}

#[derive(Serialize)]
struct MetricLine {
    table: &'static str,
    #[serde(flatten)]
    row: TableRow,
    computed: TableMetrics,
    matches_printed: bool,
}

#[derive(Serialize)]
struct SpeedupLine {
    label: &'static str,
    numerator: f64,
    denominator: f64,
    computed: f64,
    quoted: f64,
    matches: bool,
}

#[derive(Serialize)]
struct MemoryLine {
    a: u64,
    b: u64,
    c: u64,
    p: u64,
    d: u64,
    tesseract: f64,
    megatron: f64,
}

#[derive(Serialize)]
struct CostReport<'a> {
    command: &'static str,
    config: &'a Settings,
    n: u64,
    sweep: Vec<CostRow>,
    ratios: Option<RatioLine>,
    crossover: Vec<Crossover>,
    memory: MemoryLine,
    table_metrics: Vec<MetricLine>,
    speedups: Vec<SpeedupLine>,
}

fn ratio_line(p: u64) -> Option<RatioLine> {
    let cannon = transmission_count(Algo::Cannon, p).ok()?;
    let two_five_d = transmission_count(Algo::TwoFiveD, p).ok()?;
    let tesseract = transmission_count(Algo::Tesseract, p).ok()?;
    Some(RatioLine {
        p,
        cannon,
        two_five_d,
        tesseract,
        cannon_over_tesseract: cannon as f64 / tesseract as f64,
        two_five_d_over_tesseract: two_five_d as f64 / tesseract as f64,
    })
}

fn metric_lines() -> Result<Vec<MetricLine>, CliError> {
    let mut out = Vec::new();
    for (table, rows) in [("strong", &STRONG_SCALING[..]), ("weak", &WEAK_SCALING[..])] {
        for row in rows {
            let computed = table_metrics(row.forward, row.backward, Some(row.batch))?;
            out.push(MetricLine {
                table,
                row: *row,
                matches_printed: round4(computed.per_iteration_throughput) == row.throughput
                    && round4(computed.per_iteration_inference) == row.inference,
                computed,
            });
        }
    }
    Ok(out)
}

pub fn run(settings: &Settings, procs: Vec<u64>, n: Option<u64>) -> Result<Report, CliError> {
    let procs = if !procs.is_empty() {
        procs
    } else {
        settings.extra.procs.clone().unwrap_or(DEFAULT_PROCS.to_vec())
    };
    if procs.contains(&0) {
        return Err(CliError::Config("--procs entries must be positive".into()));
    }
    let n = n.or(settings.dims_parsed.map(|(a, _, _)| a as u64)).unwrap_or(DEFAULT_N);
    let sweep = cost_sweep(&procs, n);
    let ratios = ratio_line(64);
    let crossover = crossover_sweep(2..=8)?;
    let nf = n as f64;
    let memory = MemoryLine {
        a: n,
        b: n,
        c: n,
        p: 16,
        d: 1,
        tesseract: memory_per_proc(Algo::Tesseract, nf, nf, nf, 16.0, 1.0)?,
        megatron: memory_per_proc(Algo::Megatron1D, nf, nf, nf, 16.0, 1.0)?,
    };
    let table_metrics = metric_lines()?;
    let speedups = SPEEDUP_CLAIMS
        .iter()
        .map(|c| {
            let v = speedup(c.numerator, c.denominator)?;
            Ok(SpeedupLine {
                label: c.label,
                numerator: c.numerator,
                denominator: c.denominator,
                computed: v,
                quoted: c.quoted,
                matches: round4(v) == c.quoted,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut notes: Vec<String> = sweep
        .iter()
        .filter_map(|r| r.note.as_ref().map(|n| format!("p={} {}: {n}", r.p, r.algo)))
        .collect();
    if let Some(r) = &ratios {
        notes.push(format!(
            "p=64: Cannon/Tesseract = {}, 2.5D/Tesseract = {}",
            r.cannon_over_tesseract, r.two_five_d_over_tesseract
        ));
    }

    let body = match settings.format.unwrap_or(Format::Json) {
        Format::Json => json(&CostReport {
            command: "cost",
            config: settings,
            n,
            sweep,
            ratios,
            crossover,
            memory,
            table_metrics,
            speedups,
        })?,
        Format::Csv => {
            let mut csv = Csv::new();
            csv.row(["algo", "p", "q", "d", "transmissions", "w_term", "s_term", "memory_elements", "note"]);
            for r in &sweep {
                csv.row([
                    r.algo.to_string(),
                    r.p.to_string(),
                    opt(r.q),
                    r.d.to_string(),
                    opt(r.transmissions),
                    opt(r.w_term),
                    opt(r.s_term),
                    opt(r.memory_elements),
                    r.note.clone().unwrap_or_default(),
                ]);
            }
            csv.blank();
            csv.row(["p", "cannon", "two_five_d", "tesseract", "cannon_over_tesseract", "two_five_d_over_tesseract"]);
            if let Some(r) = &ratios {
                csv.row([
                    r.p.to_string(),
                    r.cannon.to_string(),
                    r.two_five_d.to_string(),
                    r.tesseract.to_string(),
                    r.cannon_over_tesseract.to_string(),
                    r.two_five_d_over_tesseract.to_string(),
                ]);
            }
            csv.blank();
            csv.row(["p", "cannon", "two_five_d", "tesseract", "ahead_of_cannon", "ahead_of_two_five_d"]);
            for c in &crossover {
                csv.row([
                    c.p.to_string(),
                    c.cannon.to_string(),
                    c.two_five_d.to_string(),
                    c.tesseract.to_string(),
                    c.ahead_of_cannon.to_string(),
                    c.ahead_of_two_five_d.to_string(),
                ]);
            }
            csv.blank();
            csv.row([
                "table",
                "method",
                "shape",
                "batch",
                "forward",
                "backward",
                "per_iteration_throughput",
                "per_iteration_inference",
                "batch_throughput",
                "batch_inference",
                "printed_throughput",
                "printed_inference",
            ]);
            for m in &table_metrics {
                csv.row([
                    m.table.to_string(),
                    m.row.method.to_string(),
                    m.row.shape.to_string(),
                    m.row.batch.to_string(),
                    m.row.forward.to_string(),
                    m.row.backward.to_string(),
                    format!("{:.4}", m.computed.per_iteration_throughput),
                    format!("{:.4}", m.computed.per_iteration_inference),
                    opt(m.computed.batch_throughput.map(|v| format!("{v:.4}"))),
                    opt(m.computed.batch_inference.map(|v| format!("{v:.4}"))),
                    m.row.throughput.to_string(),
                    m.row.inference.to_string(),
                ]);
            }
            csv.blank();
            csv.row(["speedup", "computed", "quoted"]);
            for s in &speedups {
                csv.row([s.label.to_string(), format!("{:.4}", s.computed), s.quoted.to_string()]);
            }
            csv.finish()
        }
    };
    Ok(Report { body, passed: true, notes })
}
