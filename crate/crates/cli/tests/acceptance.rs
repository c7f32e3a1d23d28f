//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::BTreeSet;
use std::process::{Command, Output};

use serde_json::Value;
use tesseract_core::algorithms::{summa_matmul, tesseract_backward, tesseract_matmul, MatmulVariant, TesseractOptions};
use tesseract_core::costmodel::{
    crossover_sweep, memory_per_proc, round4, table_metrics, transmission_count, Algo, SPEEDUP_CLAIMS, STRONG_SCALING,
};
use tesseract_core::layers::toy::{paired_training, ToyConfig};
use tesseract_core::layers::{backward_global, serial, Layer, LayerParams, ModelDims, PARAM_NAMES};
use tesseract_core::rng::random_matrix;
use tesseract_core::{GridSpec, Matrix, ShardScheme, ShardedMatrix};

type Check = Result<String, String>;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tesseract"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn grid(q: usize, d: usize) -> Result<GridSpec, String> {
    GridSpec::new(q, d).map_err(err)
}

const ORACLE_GRIDS: [&str; 6] = ["[1,1,1]", "[2,2,1]", "[2,2,2]", "[3,3,1]", "[3,3,3]", "[4,4,2]"];

fn ac1() -> Check {
    let mut args = vec!["verify", "--trials", "50", "--format", "json"];
    for g in ORACLE_GRIDS {
        args.extend(["--grid", g]);
    }
    let out = cli(&args);
    ensure(out.status.code() == Some(0), format!("verify exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))?;
    let report: Value = serde_json::from_slice(&out.stdout).map_err(err)?;
    let cases = report["cases"].as_array().ok_or("no cases")?;
    let mut seen = BTreeSet::new();
    let mut worst: f64 = 0.0;
    for c in cases {
        let name = c["case"].as_str().unwrap_or_default();
        if name.starts_with("layer_") {
            continue;
        }
        let g = c["grid"].as_str().unwrap_or_default();
        ensure(c["trials"].as_u64() == Some(50), format!("{name} on {g} ran {} trials", c["trials"]))?;
        ensure(c["tolerance"].as_f64() == Some(1e-10), format!("{name} tolerance {}", c["tolerance"]))?;
        ensure(c["pass"].as_bool() == Some(true), format!("{name} on {g} failed"))?;
        worst = worst.max(c["max_rel_error"].as_f64().unwrap_or(f64::INFINITY));
        let family = name.split("_p").next().unwrap_or(name).to_string();
        seen.insert((family, g.to_string()));
    }
    for g in ORACLE_GRIDS {
        for fam in ["tesseract_nn", "tesseract_nt", "tesseract_tn", "megatron_1d"] {
            ensure(seen.contains(&(fam.to_string(), g.to_string())), format!("{fam} missing on {g}"))?;
        }
        if g.ends_with(",1]") {
            for fam in ["summa", "cannon"] {
                ensure(seen.contains(&(fam.to_string(), g.to_string())), format!("{fam} missing on {g}"))?;
            }
        }
    }
    Ok(format!("{} matmul cases x 50 trials, worst relative error {worst:e}", seen.len()))
}

fn ac2() -> Check {
    let mut checked = 0;
    for q in 1..=4 {
        for seed in 0..5 {
            let a = random_matrix(seed, 0, 3 * q, 2 * q);
            let b = random_matrix(seed, 1, 2 * q, 4 * q);
            let (tc, ts) = tesseract_matmul(&a, &b, &grid(q, 1)?, MatmulVariant::NN, TesseractOptions::default()).map_err(err)?;
            let (sc, ss) = summa_matmul(&a, &b, q).map_err(err)?;
            ensure(tc == sc, format!("values differ on [{q},{q},1] seed {seed}"))?;
            ensure(ts == ss, format!("stats differ on [{q},{q},1] seed {seed}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} runs on [q,q,1], q=1..4, bit-identical values and CommStats"))
}

fn ac3() -> Check {
    let cannon = transmission_count(Algo::Cannon, 64).map_err(err)?;
    let two5 = transmission_count(Algo::TwoFiveD, 64).map_err(err)?;
    let tess = transmission_count(Algo::Tesseract, 64).map_err(err)?;
    let r1 = cannon as f64 / tess as f64;
    let r2 = two5 as f64 / tess as f64;
    ensure(r1 == 31.5 && r2 == 3.75, format!("ratios {r1} and {r2}"))?;
    for c in crossover_sweep(2..=8).map_err(err)? {
        ensure(c.ahead_of_cannon == (c.p > 2), format!("Cannon crossover wrong at {}", c.p))?;
        ensure(c.ahead_of_two_five_d == (c.p > 4), format!("2.5D crossover wrong at {}", c.p))?;
    }
    Ok(format!("p=64: {cannon}/{tess} = {r1}, {two5}/{tess} = {r2}; sweep 2..8 ahead of Cannon past 2, of 2.5D past 4"))
}

fn ac4() -> Check {
    let sizes = [16.0, 32.0, 64.0];
    let mut cases = 0;
    for q in 1..=4usize {
        for d in 1..=q {
            let p = (d * q * q) as f64;
            for a in sizes {
                for b in sizes {
                    for c in sizes {
                        let t = memory_per_proc(Algo::Tesseract, a, b, c, p, d as f64).map_err(err)?;
                        let m = memory_per_proc(Algo::Megatron1D, a, b, c, p, d as f64).map_err(err)?;
                        if p == 1.0 {
                            ensure(t == m, format!("p=1 not equal for ({a},{b},{c})"))?;
                        } else {
                            ensure(t <= m, format!("T > M on [{q},{q},{d}] for ({a},{b},{c})"))?;
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{cases} (grid, a, b, c) cases with sizes in {{16,32,64}}; equal at p=1"))
}

fn ac5() -> Check {
    let pick = |method: &str, shape: &str| {
        STRONG_SCALING
            .iter()
            .find(|r| r.method == method && r.shape == shape)
            .ok_or(format!("missing row {method} {shape}"))
    };
    for (row, want) in [(pick("Tesseract", "[4,4,4]")?, (2.8531, 11.5075)), (pick("Megatron-LM", "[64]")?, (1.5382, 8.3682))] {
        let m = table_metrics(row.forward, row.backward, Some(row.batch)).map_err(err)?;
        let got = (round4(m.per_iteration_throughput), round4(m.per_iteration_inference));
        ensure(got == want, format!("{} {}: {got:?} vs {want:?}", row.method, row.shape))?;
    }
    let expected = [1.3751, 1.5293, 2.0702, 1.5576, 3.3746, 1.7144, 4.0156, 1.6987];
    ensure(SPEEDUP_CLAIMS.len() == expected.len(), "speedup list length")?;
    for (claim, want) in SPEEDUP_CLAIMS.iter().zip(expected) {
        let got = round4(claim.numerator / claim.denominator);
        ensure(got == want, format!("{}: {got} vs {want}", claim.label))?;
    }
    Ok("both table rows and all 8 speedup ratios agree to 4 decimals".into())
}

/// `max |analytic − numeric| / max |numeric|` with central differences.
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
    analytic.max_abs_diff(&numeric).expect("same shape") / numeric.max_abs().max(1e-8)
}

fn ac6() -> Check {
    const TOL: f64 = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (q, d, n) in [(2, 1, 4), (2, 2, 8), (4, 1, 16)] {
        let g = grid(q, d)?;
        let a = random_matrix(3, 0, n, n);
        let b = random_matrix(3, 1, n, n);
        let r = random_matrix(3, 2, n, n);
        let sa = ShardedMatrix::partition(&a, ShardScheme::TesseractA, &g).map_err(err)?;
        let sb = ShardedMatrix::partition(&b, ShardScheme::TesseractB, &g).map_err(err)?;
        let sr = ShardedMatrix::partition(&r, ShardScheme::TesseractA, &g).map_err(err)?;
        let (ga, gb, _) = tesseract_backward(&sr, &sa, &sb).map_err(err)?;
        let loss = |a: &Matrix, b: &Matrix| a.matmul(b).unwrap().hadamard(&r).unwrap().sum();
        let ea = fd_error(&ga.combine().map_err(err)?, &a, |v| loss(v, &b));
        let eb = fd_error(&gb.combine().map_err(err)?, &b, |v| loss(&a, v));
        ensure(ea <= TOL && eb <= TOL, format!("matmul {n}x{n} on {g}: {ea:e} {eb:e}"))?;
        worst = worst.max(ea).max(eb);
        checks += 2;
    }
    for (dims, q, d) in [(ModelDims::new(4, 2, 4, 2), 2, 1), (ModelDims::new(4, 4, 8, 2), 2, 2)] {
        let g = grid(q, d)?;
        for layer in Layer::ALL {
            let p = LayerParams::random(dims.h, 21, 0);
            let x = random_matrix(21, 900, dims.rows(), dims.h);
            let r = random_matrix(21, 901, dims.rows(), dims.h);
            let grads = backward_global(layer, dims, &g, &x, &p, &r).map_err(err)?;
            let loss = |x: &Matrix, p: &LayerParams| serial::forward(layer, dims, x, p).unwrap().hadamard(&r).unwrap().sum();
            let e = fd_error(&grads.input, &x, |v| loss(v, &p));
            ensure(e <= TOL, format!("{layer} input gradient on {g}: {e:e}"))?;
            worst = worst.max(e);
            checks += 1;
            for (t, (name, _)) in PARAM_NAMES.iter().enumerate() {
                if !layer.uses_param(t) {
                    continue;
                }
                let e = fd_error(grads.params.tensors()[t], p.tensors()[t], |v| {
                    let mut pp = p.clone();
                    *pp.tensors_mut()[t] = v.clone();
                    loss(&x, &pp)
                });
                ensure(e <= TOL, format!("{layer} {name} gradient on {g}: {e:e}"))?;
                worst = worst.max(e);
                checks += 1;
            }
        }
    }
    Ok(format!("{checks} gradients incl. layernorm, worst relative error {worst:e}"))
}

fn ac7() -> Check {
    let a = random_matrix(7, 0, 64, 32);
    let b = random_matrix(7, 1, 32, 32);
    let opts = TesseractOptions::default();
    let deep = GridSpec::with_depth_override(2, 4, true).map_err(err)?;
    let flat = grid(4, 1)?;
    let (_, ds) = tesseract_matmul(&a, &b, &deep, MatmulVariant::NN, opts).map_err(err)?;
    let (_, fs) = tesseract_matmul(&a, &b, &flat, MatmulVariant::NN, opts).map_err(err)?;
    let (dr, fr) = (ds.total_recv_elements(), fs.total_recv_elements());
    ensure(dr < fr, format!("[2,2,4] receives {dr}, [4,4,1] receives {fr}"))?;
    let out = cli(&["bench", "--grid", "[2,2,4]", "--grid", "[4,4,1]", "--allow-d-gt-q", "--dims", "64,32,32"]);
    ensure(out.status.code() == Some(0), "bench failed")?;
    let report: Value = serde_json::from_slice(&out.stdout).map_err(err)?;
    let cmp = &report["fixed_p"][0];
    ensure(cmp["recv_ratio"].as_f64() == Some(dr as f64 / fr as f64), format!("bench ratio {}", cmp["recv_ratio"]))?;
    Ok(format!("p=16, 64x32x32: [2,2,4] receives {dr}, [4,4,1] receives {fr}, ratio {:.4}", dr as f64 / fr as f64))
}

fn ac8() -> Check {
    let cfg = ToyConfig::default();
    ensure(cfg.steps == 50 && (cfg.q, cfg.d) == (2, 2), "unexpected toy defaults")?;
    let report = paired_training(&cfg, false).map_err(err)?;
    ensure(report.steps.len() == 50, "wrong step count")?;
    ensure(report.max_divergence <= 1e-8, format!("divergence {:e}", report.max_divergence))?;
    let out = cli(&["train-toy"]);
    ensure(out.status.code() == Some(0), "train-toy exited nonzero")?;
    Ok(format!("50 steps on [2,2,2], max per-step divergence {:e}", report.max_divergence))
}

fn ac9() -> Check {
    let commands: [&[&str]; 6] = [
        &["verify", "--trials", "5"],
        &["bench", "--format", "csv"],
        &["cost"],
        &["cost", "--format", "csv"],
        &["train-toy", "--format", "json"],
        &["run", "--grid", "[2,2,2]", "--dims", "8,4,6", "--variant", "tn"],
    ];
    for args in commands {
        let first = cli(args);
        let second = cli(args);
        ensure(first.status.code() == Some(0), format!("{args:?} exited {:?}", first.status.code()))?;
        ensure(first.stdout == second.stdout && first.stderr == second.stderr, format!("{args:?} differs between runs"))?;
    }
    Ok(format!("{} commands byte-identical across repeated runs", commands.len()))
}

fn main() {
    type Criterion = (&'static str, &'static str, fn() -> Check);
    let criteria: [Criterion; 9] = [
        ("AC1", "oracle equivalence", ac1),
        ("AC2", "d=1 degenerates to SUMMA", ac2),
        ("AC3", "transmission counts and crossover", ac3),
        ("AC4", "memory formulas", ac4),
        ("AC5", "table metrics and speedups", ac5),
        ("AC6", "gradients vs central differences", ac6),
        ("AC7", "depth reduces received elements at p=16", ac7),
        ("AC8", "paired toy training", ac8),
        ("AC9", "determinism", ac9),
    ];
    let mut failed = 0;
    for (id, title, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {id} {title}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {title}: {why}");
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
