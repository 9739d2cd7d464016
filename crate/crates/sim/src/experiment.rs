//! Sweeps over one system parameter, with one CSV row per
//! (value, seed, algorithm).

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use cellfree_core::baselines::{centralized_fp, local_zf_maxao, mrt_maxao, mrt_random, CentralizedSettings};
use cellfree_core::channel::{draw_channels, ChannelSet};
use cellfree_core::pipeline::{run_distributed, ExecutionMode, RunResult};
use cellfree_core::rng::{stream, Stream};
use cellfree_core::scenario::{build_scenario, SystemConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PerBs, Settings};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Centralized,
    Distributed,
    LocalZfMaxao,
    MrtMaxao,
    MrtRandom,
}

impl Algorithm {
    /// Expected order of mean WSR, best first.
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Centralized,
        Algorithm::Distributed,
        Algorithm::LocalZfMaxao,
        Algorithm::MrtMaxao,
        Algorithm::MrtRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Centralized => "centralized",
            Algorithm::Distributed => "distributed",
            Algorithm::LocalZfMaxao => "local_zf_maxao",
            Algorithm::MrtMaxao => "mrt_maxao",
            Algorithm::MrtRandom => "mrt_random",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    PDbm,
    N,
    K,
    B,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::PDbm => "P_dBm",
            SweepVar::N => "N",
            SweepVar::K => "K",
            SweepVar::B => "B",
        }
    }

    /// `settings` with this variable set to `value`. Per-BS and per-UE lists
    /// are not resized, so sweeping `B` or `K` needs scalar entries.
    pub fn apply(self, settings: &Settings, value: f64) -> Result<Settings, SimError> {
        let mut s = settings.clone();
        let count = || -> Result<usize, SimError> {
            if value >= 1.0 && value.fract() == 0.0 && value < 65536.0 {
                Ok(value as usize)
            } else {
                Err(SimError::Config(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepVar::PDbm => {
                s.p_max = None;
                s.p_dbm = Some(PerBs::One(value));
            }
            SweepVar::N => s.ris_elements = Some(count()?),
            SweepVar::K => s.num_ues = Some(count()?),
            SweepVar::B => {
                s.num_bs = Some(count()?);
                s.blocks = None;
            }
        }
        Ok(s)
    }
}

impl FromStr for SweepVar {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        [SweepVar::PDbm, SweepVar::N, SweepVar::K, SweepVar::B]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown sweep variable {s:?} (expected P_dBm, N, K or B)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub var: SweepVar,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    /// Record wall-clock time; off by default so replays are byte-identical.
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.values.is_empty() {
            return Err(SimError::Config("sweep needs at least one value".into()));
        }
        if self.seeds.is_empty() {
            return Err(SimError::Config("sweep needs at least one seed".into()));
        }
        if self.algorithms.is_empty() {
            return Err(SimError::Config("sweep needs at least one algorithm".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config("sweep values must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub seed: u64,
    pub wsr_bits: f64,
    pub consensus_err: f64,
    pub msg_complex_scalars: u64,
    pub runtime_ms: f64,
}

pub const CSV_HEADER: &str = "algorithm,sweep_var,sweep_value,seed,wsr_bits,consensus_err,msg_complex_scalars,runtime_ms";

/// Result of one algorithm on one channel draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub algorithm: Algorithm,
    pub wsr_bits: f64,
    pub consensus_err: f64,
    pub consensus_first: f64,
    pub msg_complex_scalars: u64,
    pub runtime_ms: f64,
    pub run: Option<RunResult>,
}

pub fn draw(cfg: &SystemConfig) -> Result<ChannelSet, SimError> {
    let scenario = build_scenario(cfg)?;
    Ok(draw_channels(cfg, &scenario)?)
}

pub fn evaluate(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    algorithm: Algorithm,
    mode: ExecutionMode,
    timing: bool,
) -> Result<Outcome, SimError> {
    let start = Instant::now();
    let mut out = Outcome {
        algorithm,
        wsr_bits: 0.0,
        consensus_err: 0.0,
        consensus_first: 0.0,
        msg_complex_scalars: 0,
        runtime_ms: 0.0,
        run: None,
    };
    match algorithm {
        Algorithm::Distributed => {
            let r = run_distributed(cfg, ch, mode)?;
            out.wsr_bits = r.final_wsr();
            out.consensus_err = r.final_consensus();
            out.consensus_first = r.consensus_trace[0];
            out.msg_complex_scalars = r.message_scalars;
            out.run = Some(r);
        }
        Algorithm::Centralized => {
            out.wsr_bits = centralized_fp(ch, cfg, CentralizedSettings::from_config(cfg))?.wsr(ch, cfg)?;
        }
        Algorithm::LocalZfMaxao => out.wsr_bits = local_zf_maxao(ch, cfg)?.wsr(ch, cfg)?,
        Algorithm::MrtMaxao => out.wsr_bits = mrt_maxao(ch, cfg)?.wsr(ch, cfg)?,
        Algorithm::MrtRandom => {
            let mut rng = stream(cfg.seed, Stream::Baseline, 0, 0, 0);
            out.wsr_bits = mrt_random(ch, cfg, &mut rng)?.wsr(ch, cfg)?;
        }
    }
    if timing {
        out.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    Ok(out)
}

/// Outcomes for every `(value, seed)` point, in spec order.
pub fn collect_outcomes(
    spec: &ExperimentSpec,
    base: &Settings,
    pool: &rayon::ThreadPool,
) -> Result<Vec<(f64, u64, Vec<Outcome>)>, SimError> {
    spec.validate()?;
    let points: Vec<(f64, u64)> = spec
        .values
        .iter()
        .flat_map(|v| spec.seeds.iter().map(move |s| (*v, *s)))
        .collect();
    pool.install(|| {
        points
            .par_iter()
            .map(|&(value, seed)| {
                let mut settings = spec.var.apply(base, value)?;
                settings.seed = Some(seed);
                let cfg = settings.build()?;
                let ch = draw(&cfg)?;
                let outcomes = spec
                    .algorithms
                    .iter()
                    .map(|&a| {
                        let mut o = evaluate(&cfg, &ch, a, ExecutionMode::Sequential, spec.timing)?;
                        o.run = None;
                        Ok(o)
                    })
                    .collect::<Result<Vec<_>, SimError>>()?;
                Ok((value, seed, outcomes))
            })
            .collect()
    })
}

pub fn run_experiment(spec: &ExperimentSpec, base: &Settings, pool: &rayon::ThreadPool) -> Result<Vec<ResultRow>, SimError> {
    let mut rows: Vec<(usize, ResultRow)> = collect_outcomes(spec, base, pool)?
        .into_iter()
        .flat_map(|(value, seed, outcomes)| {
            outcomes.into_iter().map(move |o| {
                let order = spec.algorithms.iter().position(|a| *a == o.algorithm).unwrap_or(0);
                (
                    order,
                    ResultRow {
                        algorithm: o.algorithm.name().to_string(),
                        sweep_var: spec.var.name().to_string(),
                        sweep_value: value,
                        seed,
                        wsr_bits: o.wsr_bits,
                        consensus_err: o.consensus_err,
                        msg_complex_scalars: o.msg_complex_scalars,
                        runtime_ms: o.runtime_ms,
                    },
                )
            })
        })
        .collect();
    let key = |order: usize, r: &ResultRow| {
        let v = spec.values.iter().position(|x| *x == r.sweep_value).unwrap_or(0);
        let s = spec.seeds.iter().position(|x| *x == r.seed).unwrap_or(0);
        (v, s, order)
    };
    rows.sort_by_key(|(order, r)| key(*order, r));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<(), SimError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| SimError::Output { path: "csv".into(), source: e })?;
    Ok(())
}

/// Mean WSR per (sweep value, algorithm).
pub fn mean_wsr(rows: &[ResultRow], value: f64, algorithm: Algorithm) -> Option<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.sweep_value == value && r.algorithm == algorithm.name())
        .map(|r| r.wsr_bits)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}
