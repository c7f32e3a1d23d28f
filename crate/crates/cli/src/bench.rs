use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use tesseract_core::algorithms::{cannon_matmul, summa_local, MatmulVariant, TesseractOptions};
use tesseract_core::algorithms::tesseract::variant_local;
use tesseract_core::rng::random_matrix;
use tesseract_core::runtime::{export_trace, CollectiveEngine, CollectiveKind, CommStats, TraceRecord};
use tesseract_core::{GridSpec, Matrix, ShardScheme, ShardedMatrix};

use crate::args::Format;
use crate::config::Settings;
use crate::output::{json, opt, Csv};
use crate::{CliError, Report};

const DEFAULT_DIMS: (usize, usize, usize) = (64, 32, 32);
const DEFAULT_GRIDS: [(usize, usize); 5] = [(1, 1), (2, 1), (2, 2), (4, 1), (2, 4)];

#[derive(Clone, Debug, Serialize)]
struct BenchRow {
    algorithm: &'static str,
    grid: String,
    p: usize,
    q: usize,
    d: usize,
    messages: u64,
    sent_elements: u64,
    recv_elements: u64,
    max_rank_recv_elements: u64,
    by_kind: BTreeMap<CollectiveKind, tesseract_core::runtime::KindStats>,
    oracle_rel_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stats_match_summa: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
struct Comparison {
    p: usize,
    deep_grid: String,
    flat_grid: String,
    deep_recv_elements: u64,
    flat_recv_elements: u64,
    recv_ratio: f64,
    deep_receives_less: bool,
}

#[derive(Serialize)]
struct BenchReport<'a> {
    command: &'static str,
    config: &'a Settings,
    dims: [usize; 3],
    depth_override: bool,
    rows: Vec<BenchRow>,
    fixed_p: Vec<Comparison>,
}

fn row(algorithm: &'static str, grid: &GridSpec, stats: &CommStats, err: f64) -> BenchRow {
    BenchRow {
        algorithm,
        grid: grid.to_string(),
        p: grid.p(),
        q: grid.q(),
        d: grid.d(),
        messages: stats.total_messages(),
        sent_elements: stats.total_sent_elements(),
        recv_elements: stats.total_recv_elements(),
        max_rank_recv_elements: stats.max_rank_recv_elements(),
        by_kind: stats.by_kind.clone(),
        oracle_rel_error: err,
        stats_match_summa: None,
    }
}

fn rel_error(x: &Matrix, reference: &Matrix) -> Result<f64, CliError> {
    Ok(x.rel_diff(reference)?)
}

struct Measured {
    product: Matrix,
    stats: CommStats,
    trace: Vec<TraceRecord>,
}

fn run_tesseract(grid: &GridSpec, a: &Matrix, b: &Matrix, opts: TesseractOptions, trace: bool) -> Result<Measured, CliError> {
    let sa = ShardedMatrix::partition(a, ShardScheme::TesseractA, grid)?;
    let sb = ShardedMatrix::partition(b, ShardScheme::TesseractB, grid)?;
    let inputs = grid
        .coords()
        .map(|c| (c, (sa.block(c).expect("block").clone(), sb.block(c).expect("block").clone())))
        .collect();
    let run = CollectiveEngine::new(*grid)
        .with_trace(trace)
        .run(inputs, |ctx, (l, r)| variant_local(ctx, MatmulVariant::NN, &l, &r, opts))?;
    let c = ShardedMatrix::from_blocks((a.rows(), b.cols()), ShardScheme::TesseractA, grid, run.outputs)?.combine()?;
    Ok(Measured {
        product: c,
        stats: run.stats,
        trace: run.trace,
    })
}

fn run_summa(grid: &GridSpec, a: &Matrix, b: &Matrix) -> Result<Measured, CliError> {
    let sa = ShardedMatrix::partition(a, ShardScheme::Summa2D, grid)?;
    let sb = ShardedMatrix::partition(b, ShardScheme::Summa2D, grid)?;
    let inputs = grid
        .coords()
        .map(|c| (c, (sa.block(c).expect("block").clone(), sb.block(c).expect("block").clone())))
        .collect();
    let run = CollectiveEngine::new(*grid).run(inputs, |ctx, (l, r)| summa_local(ctx, &l, &r))?;
    let c = ShardedMatrix::from_blocks((a.rows(), b.cols()), ShardScheme::Summa2D, grid, run.outputs)?.combine()?;
    Ok(Measured {
        product: c,
        stats: run.stats,
        trace: Vec::new(),
    })
}

pub fn run(settings: &Settings) -> Result<Report, CliError> {
    let (grids, depth_override) = if settings.grids.is_empty() {
        let g = DEFAULT_GRIDS
            .iter()
            .map(|&(q, d)| GridSpec::with_depth_override(q, d, true))
            .collect::<Result<Vec<_>, _>>()?;
        (g, true)
    } else {
        (settings.grids.clone(), settings.allow_d_gt_q)
    };
    let (a, b, c) = settings.dims_parsed.unwrap_or(DEFAULT_DIMS);
    for g in &grids {
        let (q, d) = (g.q(), g.d());
        if a % (q * d) != 0 || b % q != 0 || c % q != 0 {
            return Err(CliError::Config(format!(
                "dims {a},{b},{c} do not split over {g}: need a % {} == 0, b % {q} == 0, c % {q} == 0",
                q * d
            )));
        }
    }
    let x = random_matrix(settings.seed, 0, a, b);
    let y = random_matrix(settings.seed, 1, b, c);
    let reference = x.matmul(&y)?;
    let opts = TesseractOptions {
        meter_initial_replication: settings.meter_initial_replication,
    };

    let mut rows = Vec::new();
    let mut trace_text = String::new();
    let want_trace = settings.trace.is_some();
    for g in &grids {
        let t = run_tesseract(g, &x, &y, opts, want_trace)?;
        let mut tr = row("tesseract_nn", g, &t.stats, rel_error(&t.product, &reference)?);
        if g.d() == 1 {
            let s = run_summa(g, &x, &y)?;
            tr.stats_match_summa = Some(s.stats == t.stats && s.product == t.product);
            rows.push(tr);
            rows.push(row("summa", g, &s.stats, rel_error(&s.product, &reference)?));
            let (cp, cs) = cannon_matmul(&x, &y, g.q())?;
            rows.push(row("cannon", g, &cs, rel_error(&cp, &reference)?));
        } else {
            rows.push(tr);
        }
        if want_trace {
            let text = export_trace(&t.trace);
            for (i, line) in text.lines().enumerate() {
                if i == 0 {
                    if trace_text.is_empty() {
                        let _ = writeln!(trace_text, "grid,{line}");
                    }
                } else {
                    let _ = writeln!(trace_text, "{}x{}x{},{line}", g.q(), g.q(), g.d());
                }
            }
        }
    }
    if let Some(path) = &settings.trace {
        std::fs::write(path, trace_text)
            .map_err(|e| CliError::Config(format!("cannot write trace {}: {e}", path.display())))?;
    }

    let tess: Vec<&BenchRow> = rows.iter().filter(|r| r.algorithm == "tesseract_nn").collect();
    let mut fixed_p = Vec::new();
    for deep in &tess {
        for flat in &tess {
            if deep.p == flat.p && deep.d > flat.d {
                fixed_p.push(Comparison {
                    p: deep.p,
                    deep_grid: deep.grid.clone(),
                    flat_grid: flat.grid.clone(),
                    deep_recv_elements: deep.recv_elements,
                    flat_recv_elements: flat.recv_elements,
                    recv_ratio: if flat.recv_elements > 0 {
                        deep.recv_elements as f64 / flat.recv_elements as f64
                    } else {
                        f64::NAN
                    },
                    deep_receives_less: deep.recv_elements < flat.recv_elements,
                });
            }
        }
    }

    let notes = fixed_p
        .iter()
        .map(|c| {
            format!(
                "p={}: {} receives {} elements, {} receives {} (ratio {:.4})",
                c.p, c.deep_grid, c.deep_recv_elements, c.flat_grid, c.flat_recv_elements, c.recv_ratio
            )
        })
        .collect();
    let body = match settings.format.unwrap_or(Format::Json) {
        Format::Json => json(&BenchReport {
            command: "bench",
            config: settings,
            dims: [a, b, c],
            depth_override,
            rows,
            fixed_p,
        })?,
        Format::Csv => {
            let mut csv = Csv::new();
            csv.row([
                "algorithm",
                "grid",
                "p",
                "q",
                "d",
                "messages",
                "sent_elements",
                "recv_elements",
                "max_rank_recv_elements",
                "broadcast_messages",
                "reduce_messages",
                "all_reduce_messages",
                "shift_messages",
                "oracle_rel_error",
                "stats_match_summa",
            ]);
            for r in &rows {
                let k = |kind| r.by_kind.get(&kind).map(|s| s.messages).unwrap_or(0).to_string();
                csv.row([
                    r.algorithm.to_string(),
                    r.grid.clone(),
                    r.p.to_string(),
                    r.q.to_string(),
                    r.d.to_string(),
                    r.messages.to_string(),
                    r.sent_elements.to_string(),
                    r.recv_elements.to_string(),
                    r.max_rank_recv_elements.to_string(),
                    k(CollectiveKind::Broadcast),
                    k(CollectiveKind::Reduce),
                    k(CollectiveKind::AllReduce),
                    k(CollectiveKind::Shift),
                    format!("{:e}", r.oracle_rel_error),
                    opt(r.stats_match_summa),
                ]);
            }
            csv.blank();
            csv.row(["p", "deep_grid", "flat_grid", "deep_recv_elements", "flat_recv_elements", "recv_ratio", "deep_receives_less"]);
            for c in &fixed_p {
                csv.row([
                    c.p.to_string(),
                    c.deep_grid.clone(),
                    c.flat_grid.clone(),
                    c.deep_recv_elements.to_string(),
                    c.flat_recv_elements.to_string(),
                    c.recv_ratio.to_string(),
                    c.deep_receives_less.to_string(),
                ]);
            }
            csv.finish()
        }
    };
    Ok(Report { body, passed: true, notes })
}
