//! Published forward/backward timings per batch (seconds) with the
//! throughput and inference columns printed next to them.

#![allow(clippy::approx_constant)]

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub method: &'static str,
    pub gpus: usize,
    pub shape: &'static str,
    pub batch: usize,
    pub hidden: usize,
    pub heads: usize,
    pub forward: f64,
    pub backward: f64,
    pub throughput: f64,
    pub inference: f64,
}

const fn row(
    method: &'static str,
    gpus: usize,
    shape: &'static str,
    batch: usize,
    hidden: usize,
    heads: usize,
    times: [f64; 4],
) -> TableRow {
    TableRow {
        method,
        gpus,
        shape,
        batch,
        hidden,
        heads,
        forward: times[0],
        backward: times[1],
        throughput: times[2],
        inference: times[3],
    }
}

/// Fixed problem size.
pub const STRONG_SCALING: [TableRow; 12] = [
    row("Megatron-LM", 4, "[4]", 12, 3072, 64, [0.1225, 0.4749, 1.6739, 8.1633]),
    row("Megatron-LM", 16, "[16]", 12, 3072, 64, [0.1143, 0.4293, 1.8396, 8.7489]),
    row("Megatron-LM", 64, "[64]", 12, 3072, 64, [0.1195, 0.5306, 1.5382, 8.3682]),
    row("Optimus", 4, "[2,2]", 12, 3072, 64, [0.1676, 0.5019, 1.4937, 5.9666]),
    row("Optimus", 16, "[4,4]", 12, 3072, 64, [0.2099, 0.6159, 1.2109, 4.7642]),
    row("Optimus", 64, "[8,8]", 12, 3072, 64, [0.1329, 0.3986, 1.8815, 7.5245]),
    row("Tesseract", 4, "[2,2,1]", 12, 3072, 64, [0.1666, 0.5014, 1.4970, 6.0024]),
    row("Tesseract", 8, "[2,2,2]", 12, 3072, 64, [0.0999, 0.3002, 2.4994, 10.0100]),
    row("Tesseract", 16, "[4,4,1]", 12, 3072, 64, [0.1444, 0.4343, 1.7280, 6.9252]),
    row("Tesseract", 32, "[4,4,2]", 12, 3072, 64, [0.1244, 0.3727, 2.0117, 8.0386]),
    row("Tesseract", 64, "[4,4,4]", 16, 3072, 64, [0.0869, 0.2636, 2.8531, 11.5075]),
    row("Tesseract", 64, "[8,8,1]", 12, 3072, 64, [0.1799, 0.5178, 1.4333, 5.5586]),
];

/// Fixed problem size per GPU.
pub const WEAK_SCALING: [TableRow; 13] = [
    row("Megatron-LM", 4, "[4]", 60, 2048, 32, [0.0793, 0.2613, 2.9360, 12.6103]),
    row("Megatron-LM", 16, "[16]", 60, 4096, 64, [0.2081, 0.5149, 1.3831, 4.8054]),
    row("Megatron-LM", 64, "[64]", 30, 8192, 128, [0.4638, 1.0963, 0.6410, 2.1561]),
    row("Optimus", 4, "[2,2]", 96, 2048, 32, [0.0827, 0.2445, 3.0562, 12.0919]),
    row("Optimus", 16, "[4,4]", 192, 4096, 64, [0.1829, 0.5458, 1.3723, 5.4675]),
    row("Optimus", 64, "[8,8]", 384, 8192, 128, [0.1962, 0.5964, 1.2617, 5.0968]),
    row("Tesseract", 1, "[1,1,1]", 48, 1024, 16, [0.0603, 0.1669, 4.4014, 16.5837]),
    row("Tesseract", 4, "[2,2,1]", 96, 2048, 32, [0.0867, 0.2557, 2.9206, 11.5340]),
    row("Tesseract", 8, "[2,2,2]", 192, 2048, 32, [0.0864, 0.2552, 2.9274, 11.5741]),
    row("Tesseract", 16, "[4,4,1]", 192, 4096, 64, [0.1177, 0.3553, 2.1142, 8.4962]),
    row("Tesseract", 32, "[4,4,2]", 384, 4096, 64, [0.1173, 0.3521, 2.1304, 8.5251]),
    row("Tesseract", 64, "[4,4,4]", 768, 4096, 64, [0.1155, 0.3468, 2.1631, 8.6580]),
    row("Tesseract", 64, "[8,8,1]", 384, 8192, 128, [0.1799, 0.5178, 1.4333, 5.5586]),
];

/// A quoted speedup: `numerator / denominator` rounded to four decimals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpeedupClaim {
    pub label: &'static str,
    pub numerator: f64,
    pub denominator: f64,
    pub quoted: f64,
}

const fn claim(label: &'static str, numerator: f64, denominator: f64, quoted: f64) -> SpeedupClaim {
    SpeedupClaim {
        label,
        numerator,
        denominator,
        quoted,
    }
}

pub const SPEEDUP_CLAIMS: [SpeedupClaim; 8] = [
    claim("strong forward, Megatron-LM [64] vs Tesseract [4,4,4]", 0.1195, 0.0869, 1.3751),
    claim("strong forward, Optimus [8,8] vs Tesseract [4,4,4]", 0.1329, 0.0869, 1.5293),
    claim("strong forward, Tesseract [8,8,1] vs [4,4,4]", 0.1799, 0.0869, 2.0702),
    claim("weak forward, Tesseract [8,8,1] vs [4,4,4]", 0.1799, 0.1155, 1.5576),
    claim("weak throughput, Tesseract [4,4,4] vs Megatron-LM [64]", 2.1631, 0.6410, 3.3746),
    claim("weak throughput, Tesseract [4,4,4] vs Optimus [8,8]", 2.1631, 1.2617, 1.7144),
    claim("weak inference, Tesseract [4,4,4] vs Megatron-LM [64]", 8.6580, 2.1561, 4.0156),
    claim("weak inference, Tesseract [4,4,4] vs Optimus [8,8]", 8.6580, 5.0968, 1.6987),
];
