//! Deployment geometry, path loss and the run configuration.
//!
//! BS `b` (1-based) sits at `(200 b / B, -50, 3)` m. The default pair of RISs
//! sits at `(75, 10, 6)` and `(125, 10, 6)` m; other counts are spread evenly
//! over the same segment. UEs are dropped uniformly in a 5 m disc centred at
//! `(75, 0)` at a height of 1.5 m.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Stream};
use crate::{Error, Result};

pub type Position = [f64; 3];

pub const UE_DISC_CENTER: [f64; 2] = [75.0, 0.0];
pub const UE_DISC_RADIUS: f64 = 5.0;
pub const UE_HEIGHT: f64 = 1.5;
const RIS_SEGMENT: [Position; 2] = [[75.0, 10.0, 6.0], [125.0, 10.0, 6.0]];

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    BsRis,
    RisUe,
    BsUe,
}

/// Log-distance model `G0 (d / d0)^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub gain_ref: f64,
    pub ref_distance: f64,
    pub exponent: f64,
}

impl PathLossParams {
    pub fn gain(&self, distance: f64) -> Result<f64> {
        if distance.is_nan() || distance <= 0.0 {
            return Err(Error::NonPositiveDistance(distance));
        }
        Ok(self.gain_ref * (distance / self.ref_distance).powf(-self.exponent))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub bs_ris: PathLossParams,
    pub ris_ue: PathLossParams,
    pub bs_ue: PathLossParams,
}

impl Default for PathLossModel {
    fn default() -> Self {
        let with = |exponent| PathLossParams {
            gain_ref: 1e-3,
            ref_distance: 1.0,
            exponent,
        };
        Self {
            bs_ris: with(2.0),
            ris_ue: with(2.8),
            bs_ue: with(2.8),
        }
    }
}

impl PathLossModel {
    pub fn params(&self, kind: LinkKind) -> &PathLossParams {
        match kind {
            LinkKind::BsRis => &self.bs_ris,
            LinkKind::RisUe => &self.ris_ue,
            LinkKind::BsUe => &self.bs_ue,
        }
    }

    pub fn gain(&self, distance: f64, kind: LinkKind) -> Result<f64> {
        self.params(kind).gain(distance)
    }
}

/// Linear path-loss gain under the default model.
pub fn path_loss(distance_m: f64, kind: LinkKind) -> Result<f64> {
    PathLossModel::default().gain(distance_m, kind)
}

/// Iteration limits for the inner solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub bcd_max_sweeps: usize,
    pub bcd_tol: f64,
    pub centralized_max_iters: usize,
    pub centralized_tol: f64,
    /// Weight of the fresh precoder when mixing it with the previous block's
    /// before renormalising. `1.0` disables mixing.
    #[serde(default = "unit")]
    pub w_damping: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            bcd_max_sweeps: 1000,
            bcd_tol: 1e-8,
            centralized_max_iters: 200,
            centralized_tol: 1e-6,
            w_damping: 1.0,
        }
    }
}

/// Dimensions, budgets and seeds for one run. Powers are linear watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    #[serde(rename = "B")]
    pub num_bs: usize,
    #[serde(rename = "R")]
    pub num_ris: usize,
    #[serde(rename = "K")]
    pub num_ues: usize,
    #[serde(rename = "N")]
    pub ris_elements: usize,
    #[serde(rename = "N_t")]
    pub bs_antennas: usize,
    #[serde(rename = "L")]
    pub blocks: usize,
    #[serde(rename = "P_max")]
    pub p_max: Vec<f64>,
    pub noise_power: f64,
    pub weights: Vec<f64>,
    pub rho: Vec<f64>,
    pub seed: u64,
    pub paths_per_channel: usize,
    pub pathloss: PathLossModel,
    pub solver: SolverSettings,
}

impl SystemConfig {
    /// Configuration with the reference defaults: `L = B + 2`, 30 dBm per BS,
    /// -80 dBm noise, unit weights, `rho = 1` and three paths per channel.
    pub fn new(num_bs: usize, num_ris: usize, num_ues: usize, ris_elements: usize, bs_antennas: usize) -> Self {
        Self {
            num_bs,
            num_ris,
            num_ues,
            ris_elements,
            bs_antennas,
            blocks: num_bs + 2,
            p_max: vec![dbm_to_watts(30.0); num_bs],
            noise_power: dbm_to_watts(-80.0),
            weights: vec![1.0; num_ues],
            rho: vec![1.0; num_bs],
            seed: 0,
            paths_per_channel: 3,
            pathloss: PathLossModel::default(),
            solver: SolverSettings::default(),
        }
    }

    /// The desk-scale reference setup: `B = 4`, `R = 2`, `K = 4`, `N = 16`, `N_t = 2`.
    pub fn reference() -> Self {
        Self::new(4, 2, 4, 16, 2)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_power_dbm(mut self, dbm: f64) -> Self {
        self.p_max = vec![dbm_to_watts(dbm); self.num_bs];
        self
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = vec![rho; self.num_bs];
        self
    }

    /// Total RIS elements `N R`, the length of a phase vector.
    pub fn phase_len(&self) -> usize {
        self.ris_elements * self.num_ris
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("B", self.num_bs),
            ("R", self.num_ris),
            ("K", self.num_ues),
            ("N", self.ris_elements),
            ("N_t", self.bs_antennas),
            ("L", self.blocks),
            ("paths_per_channel", self.paths_per_channel),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.num_bs >= 1 << 16 || self.num_ues >= 1 << 16 || self.num_ris >= 1 << 16 {
            return bad("dimension too large for stream indexing".into());
        }
        if self.blocks < self.num_bs {
            return bad(format!("L = {} must be at least B = {}", self.blocks, self.num_bs));
        }
        let positive = |xs: &[f64]| xs.iter().all(|&x| x > 0.0 && x.is_finite());
        if self.p_max.len() != self.num_bs || !positive(&self.p_max) {
            return bad("P_max needs one positive entry per BS".into());
        }
        if self.weights.len() != self.num_ues || !positive(&self.weights) {
            return bad("weights need one positive entry per UE".into());
        }
        if self.rho.len() != self.num_bs || !positive(&self.rho) {
            return bad("rho needs one positive entry per BS".into());
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return bad("noise_power must be positive".into());
        }
        for kind in [LinkKind::BsRis, LinkKind::RisUe, LinkKind::BsUe] {
            let p = self.pathloss.params(kind);
            if !(p.gain_ref > 0.0 && p.ref_distance > 0.0 && p.exponent.is_finite()) {
                return bad(format!("path-loss parameters for {kind:?} must be positive"));
            }
        }
        if self.solver.bcd_max_sweeps == 0 || self.solver.centralized_max_iters == 0 {
            return bad("solver iteration limits must be at least 1".into());
        }
        if !(self.solver.w_damping > 0.0 && self.solver.w_damping <= 1.0) {
            return bad("w_damping must lie in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs_positions: Vec<Position>,
    pub ris_positions: Vec<Position>,
    pub ue_positions: Vec<Position>,
    pub pathloss: PathLossModel,
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn build_scenario(config: &SystemConfig) -> Result<Scenario> {
    config.validate()?;
    let b_count = config.num_bs as f64;
    let bs_positions = (1..=config.num_bs)
        .map(|b| [200.0 * b as f64 / b_count, -50.0, 3.0])
        .collect();

    let [start, end] = RIS_SEGMENT;
    let ris_positions = (0..config.num_ris)
        .map(|r| {
            let t = if config.num_ris == 1 {
                0.5
            } else {
                r as f64 / (config.num_ris - 1) as f64
            };
            [0, 1, 2].map(|i| start[i] + t * (end[i] - start[i]))
        })
        .collect();

    let ue_positions = (0..config.num_ues)
        .map(|k| {
            let mut rng = stream(config.seed, Stream::UePosition, k, 0, 0);
            let radius = UE_DISC_RADIUS * rng.random::<f64>().sqrt();
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            [
                UE_DISC_CENTER[0] + radius * angle.cos(),
                UE_DISC_CENTER[1] + radius * angle.sin(),
                UE_HEIGHT,
            ]
        })
        .collect();

    let scenario = Scenario {
        bs_positions,
        ris_positions,
        ue_positions,
        pathloss: config.pathloss,
    };
    scenario.check_distances()?;
    Ok(scenario)
}

impl Scenario {
    fn check_distances(&self) -> Result<()> {
        let pairs = self
            .bs_positions
            .iter()
            .flat_map(|b| self.ris_positions.iter().chain(&self.ue_positions).map(move |o| (b, o)))
            .chain(
                self.ris_positions
                    .iter()
                    .flat_map(|r| self.ue_positions.iter().map(move |u| (r, u))),
            );
        for (a, b) in pairs {
            let d = distance(a, b);
            if d.is_nan() || d <= 0.0 {
                return Err(Error::NonPositiveDistance(d));
            }
        }
        Ok(())
    }

    pub fn link_gain(&self, from: &Position, to: &Position, kind: LinkKind) -> Result<f64> {
        self.pathloss.gain(distance(from, to), kind)
    }
}
