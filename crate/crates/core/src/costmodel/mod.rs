//! Analytic cost formulas: communication and latency bounds, transmission
//! counts, per-processor memory, 1-D/2-D communication time and the timing
//! metrics used for the published benchmark tables.
//!
//! Bounds are leading Ω-terms with no constants. They order algorithms; they
//! do not predict seconds.

mod tables;


use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use tables::{SpeedupClaim, TableRow, SPEEDUP_CLAIMS, STRONG_SCALING, WEAK_SCALING};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Cannon,
    TwoFiveD,
    Tesseract,
    Megatron1D,
    Optimus2D,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::Cannon, Algo::TwoFiveD, Algo::Tesseract, Algo::Megatron1D, Algo::Optimus2D];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Cannon => "cannon",
            Algo::TwoFiveD => "2.5d",
            Algo::Tesseract => "tesseract",
            Algo::Megatron1D => "megatron",
            Algo::Optimus2D => "optimus",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cannon" => Ok(Algo::Cannon),
            "2.5d" | "twofived" | "2.5-d" => Ok(Algo::TwoFiveD),
            "tesseract" => Ok(Algo::Tesseract),
            "megatron" | "megatron1d" => Ok(Algo::Megatron1D),
            "optimus" | "optimus2d" => Ok(Algo::Optimus2D),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Inputs of a cost query. Only the fields a formula reads need to be set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostQuery {
    pub algo: Algo,
    pub n: f64,
    pub p: f64,
    pub d: f64,
    pub beta: f64,
    pub b: f64,
    pub s: f64,
    pub h: f64,
}

impl CostQuery {
    pub fn new(algo: Algo, n: f64, p: f64, d: f64) -> Self {
        CostQuery {
            algo,
            n,
            p,
            d,
            beta: 1.0,
            b: 1.0,
            s: 1.0,
            h: 1.0,
        }
    }
}

/// Ω-terms of communication volume (`w_term`) and message latency (`s_term`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub w_term: f64,
    pub s_term: f64,
}

fn positive(what: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidArgument(format!("{what} must be positive, got {v}")));
    }
    Ok(())
}

/// `n²/√p, √p` for the 2-D family; `n²/√(dp), √p/d^{3/2}` for the
/// replicated family.
pub fn comm_bounds(q: &CostQuery) -> Result<Bounds> {
    positive("n", q.n)?;
    positive("p", q.p)?;
    positive("d", q.d)?;
    let n2 = q.n * q.n;
    match q.algo {
        Algo::Cannon | Algo::Optimus2D => {
            if q.d != 1.0 {
                return Err(Error::InvalidArgument(format!("{} has no depth, got d = {}", q.algo, q.d)));
            }
            Ok(Bounds {
                w_term: n2 / q.p.sqrt(),
                s_term: q.p.sqrt(),
            })
        }
        Algo::TwoFiveD | Algo::Tesseract => Ok(Bounds {
            w_term: n2 / (q.d * q.p).sqrt(),
            s_term: q.p.sqrt() / q.d.powf(1.5),
        }),
        Algo::Megatron1D => Err(Error::Unsupported("communication bounds for the 1-D baseline".into())),
    }
}

fn exact_root(p: u64, k: u32) -> Option<u64> {
    let guess = (p as f64).powf(1.0 / k as f64).round() as u64;
    (guess.saturating_sub(1)..=guess + 1).find(|r| r.checked_pow(k) == Some(p))
}

/// Transmission counts as closed forms in `p`: Cannon `2p^{3/2} − 2p^{1/2}`,
/// 2.5D `2p − 2p^{1/3}`, Tesseract with `d = q` `2p^{2/3}`. Requires `p` to
/// be a perfect square (Cannon) or cube (the others).
pub fn transmission_count(algo: Algo, p: u64) -> Result<u64> {
    let incompatible = |shape: &str| Error::InvalidArgument(format!("{algo} needs p to be a perfect {shape}, got {p}"));
    match algo {
        Algo::Cannon => {
            let r = exact_root(p, 2).ok_or_else(|| incompatible("square"))?;
            Ok(2 * r * r * r - 2 * r)
        }
        Algo::TwoFiveD => {
            let r = exact_root(p, 3).ok_or_else(|| incompatible("cube"))?;
            Ok(2 * p - 2 * r)
        }
        Algo::Tesseract => {
            let r = exact_root(p, 3).ok_or_else(|| incompatible("cube"))?;
            Ok(2 * r * r)
        }
        _ => Err(Error::Unsupported(format!("transmission count for {algo}"))),
    }
}

/// The same closed forms evaluated at any real `p`.
pub fn transmission_count_real(algo: Algo, p: f64) -> Result<f64> {
    positive("p", p)?;
    match algo {
        Algo::Cannon => Ok(2.0 * p.powf(1.5) - 2.0 * p.sqrt()),
        Algo::TwoFiveD => Ok(2.0 * p - 2.0 * p.cbrt()),
        Algo::Tesseract => Ok(2.0 * p.powf(2.0 / 3.0)),
        _ => Err(Error::Unsupported(format!("transmission count for {algo}"))),
    }
}

/// One point of the transmission sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Crossover {
    pub p: u64,
    pub cannon: f64,
    pub two_five_d: f64,
    pub tesseract: f64,
    pub ahead_of_cannon: bool,
    pub ahead_of_two_five_d: bool,
}

/// Evaluates the closed forms at each `p` and records where Tesseract needs
/// strictly fewer transmissions.
pub fn crossover_sweep(ps: impl IntoIterator<Item = u64>) -> Result<Vec<Crossover>> {
    ps.into_iter()
        .map(|p| {
            let pf = p as f64;
            let cannon = transmission_count_real(Algo::Cannon, pf)?;
            let two_five_d = transmission_count_real(Algo::TwoFiveD, pf)?;
            let tesseract = transmission_count_real(Algo::Tesseract, pf)?;
            Ok(Crossover {
                p,
                cannon,
                two_five_d,
                tesseract,
                ahead_of_cannon: tesseract < cannon,
                ahead_of_two_five_d: tesseract < two_five_d,
            })
        })
        .collect()
}

/// Elements per processor for `C[a,c] = A[a,b]·B[b,c]`: Tesseract
/// `ab/p + bcd/p + ac/p`, Megatron `ab + bc/p + ac/p`.
pub fn memory_per_proc(algo: Algo, a: f64, b: f64, c: f64, p: f64, d: f64) -> Result<f64> {
    for (name, v) in [("a", a), ("b", b), ("c", c), ("p", p), ("d", d)] {
        positive(name, v)?;
    }
    match algo {
        Algo::Tesseract => {
            let q2 = p / d;
            let q = q2.sqrt();
            if (q.round() * q.round() - q2).abs() > 1e-9 * q2 || q.round() < 1.0 {
                return Err(Error::InvalidArgument(format!("p = {p} is not d·q² for d = {d}")));
            }
            Ok(a * b / p + b * c * d / p + a * c / p)
        }
        Algo::Megatron1D => Ok(a * b + b * c / p + a * c / p),
        _ => Err(Error::Unsupported(format!("memory formula for {algo}"))),
    }
}

/// Communication time and isoefficiency descriptor. `comm_time` is `None`
/// where no closed form exists and the value has to be measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CommTime {
    pub comm_time: Option<f64>,
    pub isoefficiency: Option<f64>,
}

/// Megatron `2β(p−1)bsh/p`, isoefficiency `p³`; Optimus
/// `2βbsh²q·log₂p/p`, isoefficiency `(√p·log₂p)³`.
pub fn comm_time_and_isoefficiency(algo: Algo, beta: f64, b: f64, s: f64, h: f64, p: f64, q: f64) -> Result<CommTime> {
    for (name, v) in [("b", b), ("s", s), ("h", h), ("p", p)] {
        positive(name, v)?;
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
    }
    match algo {
        Algo::Megatron1D => Ok(CommTime {
            comm_time: Some(2.0 * beta * (p - 1.0) * b * s * h / p),
            isoefficiency: Some(p.powi(3)),
        }),
        Algo::Optimus2D => {
            positive("q", q)?;
            let lg = p.log2();
            Ok(CommTime {
                comm_time: Some(2.0 * beta * b * s * h * h * q * lg / p),
                isoefficiency: Some((p.sqrt() * lg).powi(3)),
            })
        }
        Algo::Tesseract => Ok(CommTime {
            comm_time: None,
            isoefficiency: None,
        }),
        _ => Err(Error::Unsupported(format!("communication time for {algo}"))),
    }
}

/// Both readings of the table columns. The `per_iteration_*` values are the
/// reciprocals that match the printed numbers; the `batch_*` values scale
/// them by the batch size as the prose defines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TableMetrics {
    pub per_iteration_throughput: f64,
    pub per_iteration_inference: f64,
    pub batch_throughput: Option<f64>,
    pub batch_inference: Option<f64>,
}

pub fn table_metrics(forward_s: f64, backward_s: f64, batch: Option<usize>) -> Result<TableMetrics> {
    positive("forward time", forward_s)?;
    if !(backward_s.is_finite() && backward_s >= 0.0) {
        return Err(Error::InvalidArgument(format!("backward time must be nonnegative, got {backward_s}")));
    }
    let t = 1.0 / (forward_s + backward_s);
    let i = 1.0 / forward_s;
    Ok(TableMetrics {
        per_iteration_throughput: t,
        per_iteration_inference: i,
        batch_throughput: batch.map(|b| b as f64 * t),
        batch_inference: batch.map(|b| b as f64 * i),
    })
}

pub fn speedup(numerator: f64, denominator: f64) -> Result<f64> {
    positive("denominator", denominator)?;
    Ok(numerator / denominator)
}

/// Rounds to four decimals, the precision of the published tables.
pub fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// One line of a cost sweep. Fields a formula cannot produce for the given
/// `p` are `None`, with the reason in `note`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub algo: Algo,
    pub p: u64,
    pub q: Option<u64>,
    pub d: u64,
    pub transmissions: Option<u64>,
    pub w_term: Option<f64>,
    pub s_term: Option<f64>,
    pub memory_elements: Option<f64>,
    pub note: Option<String>,
}

/// Sweeps Cannon, 2.5D and Tesseract over `ps` for an `n×n` product.
/// Tesseract and 2.5D use `d = q = p^{1/3}`; Megatron memory is reported
/// alongside on the 1-D arrangement.
pub fn cost_sweep(ps: &[u64], n: u64) -> Vec<CostRow> {
    let mut rows = Vec::new();
    let nf = n as f64;
    for &p in ps {
        let pf = p as f64;
        let cube = exact_root(p, 3);
        let square = exact_root(p, 2);
        for algo in [Algo::Cannon, Algo::TwoFiveD, Algo::Tesseract, Algo::Megatron1D] {
            let (q, d) = match algo {
                Algo::Cannon => (square, 1),
                Algo::Megatron1D => (None, 1),
                _ => (cube, cube.unwrap_or(1)),
            };
            let mut notes = Vec::new();
            let transmissions = match algo {
                Algo::Megatron1D => None,
                _ => transmission_count(algo, p).map_err(|e| notes.push(e.to_string())).ok(),
            };
            let bounds = match (algo, q) {
                (Algo::Megatron1D, _) => None,
                (_, Some(_)) => comm_bounds(&CostQuery::new(algo, nf, pf, d as f64)).ok(),
                (_, None) => None,
            };
            let memory = match algo {
                Algo::Tesseract => match q {
                    Some(_) => memory_per_proc(algo, nf, nf, nf, pf, d as f64).ok(),
                    None => None,
                },
                Algo::Megatron1D => memory_per_proc(algo, nf, nf, nf, pf, 1.0).ok(),
                _ => None,
            };
            rows.push(CostRow {
                algo,
                p,
                q,
                d,
                transmissions,
                w_term: bounds.map(|b| b.w_term),
                s_term: bounds.map(|b| b.s_term),
                memory_elements: memory,
                note: (!notes.is_empty()).then(|| notes.join("; ")),
            });
        }
    }
    rows
}
