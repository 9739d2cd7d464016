//! JSON run configuration with dBm conveniences and CLI overrides.

use std::path::Path;

use cellfree_core::scenario::{dbm_to_watts, PathLossModel, SolverSettings, SystemConfig};
use serde::{Deserialize, Serialize};

use crate::SimError;

/// A scalar applied to every BS, or one value per BS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerBs {
    One(f64),
    Each(Vec<f64>),
}

impl PerBs {
    fn expand(&self, num_bs: usize) -> Vec<f64> {
        match self {
            PerBs::One(v) => vec![*v; num_bs],
            PerBs::Each(v) => v.clone(),
        }
    }
}

/// Every field is optional; missing ones take the desk-scale defaults
/// (`B = 4`, `R = 2`, `K = 4`, `N = 16`, `N_t = 2`, `L = B + 2`, 30 dBm,
/// -80 dBm noise, unit weights, `rho = 1`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub num_bs: Option<usize>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub num_ris: Option<usize>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub num_ues: Option<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub ris_elements: Option<usize>,
    #[serde(rename = "N_t", default, skip_serializing_if = "Option::is_none")]
    pub bs_antennas: Option<usize>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    /// Linear watts.
    #[serde(rename = "P_max", default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<PerBs>,
    #[serde(rename = "P_dBm", default, skip_serializing_if = "Option::is_none")]
    pub p_dbm: Option<PerBs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power: Option<f64>,
    #[serde(rename = "noise_dBm", default, skip_serializing_if = "Option::is_none")]
    pub noise_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<PerBs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths_per_channel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathloss: Option<PathLossModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSettings>,
}

pub const PAPER_SCALE_N: usize = 50;

impl Settings {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Parse {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::ConfigRead {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Fields set in `other` replace ours.
    pub fn merge(mut self, other: &Settings) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f.clone(); })*};
        }
        take!(num_bs, num_ris, num_ues, ris_elements, bs_antennas, blocks, noise_power, noise_dbm, weights, rho, seed);
        take!(paths_per_channel, pathloss, solver);
        if other.p_max.is_some() || other.p_dbm.is_some() {
            self.p_max = other.p_max.clone();
            self.p_dbm = other.p_dbm.clone();
        }
        if other.noise_power.is_some() {
            self.noise_dbm = None;
        } else if other.noise_dbm.is_some() {
            self.noise_power = None;
        }
        self
    }

    /// Restores the full-size RIS unless `N` was given explicitly.
    pub fn paper_scale(mut self) -> Self {
        self.ris_elements.get_or_insert(PAPER_SCALE_N);
        self
    }

    pub fn build(&self) -> Result<SystemConfig, SimError> {
        let invalid = |m: &str| Err(SimError::Config(m.to_string()));
        let base = SystemConfig::reference();
        let mut cfg = SystemConfig::new(
            self.num_bs.unwrap_or(base.num_bs),
            self.num_ris.unwrap_or(base.num_ris),
            self.num_ues.unwrap_or(base.num_ues),
            self.ris_elements.unwrap_or(base.ris_elements),
            self.bs_antennas.unwrap_or(base.bs_antennas),
        );
        let nb = cfg.num_bs;
        if let Some(l) = self.blocks {
            cfg.blocks = l;
        }
        match (&self.p_max, &self.p_dbm) {
            (Some(_), Some(_)) => return invalid("give either P_max or P_dBm, not both"),
            (Some(p), None) => cfg.p_max = p.expand(nb),
            (None, Some(p)) => cfg.p_max = p.expand(nb).into_iter().map(dbm_to_watts).collect(),
            (None, None) => {}
        }
        match (self.noise_power, self.noise_dbm) {
            (Some(_), Some(_)) => return invalid("give either noise_power or noise_dBm, not both"),
            (Some(n), None) => cfg.noise_power = n,
            (None, Some(n)) => cfg.noise_power = dbm_to_watts(n),
            (None, None) => {}
        }
        if let Some(w) = &self.weights {
            cfg.weights = w.clone();
        }
        if let Some(r) = &self.rho {
            cfg.rho = r.expand(nb);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.paths_per_channel {
            cfg.paths_per_channel = p;
        }
        if let Some(p) = self.pathloss {
            cfg.pathloss = p;
        }
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_reference_setup() {
        let cfg = Settings::from_json("{}", "-").unwrap().build().unwrap();
        assert_eq!(cfg, SystemConfig::reference());
    }

    #[test]
    fn dbm_fields_convert() {
        let s = Settings::from_json(r#"{"B": 2, "P_dBm": [20, 30], "noise_dBm": -90}"#, "-").unwrap();
        let cfg = s.build().unwrap();
        assert!((cfg.p_max[0] - 0.1).abs() < 1e-15 && (cfg.p_max[1] - 1.0).abs() < 1e-15);
        assert!((cfg.noise_power - 1e-12).abs() < 1e-27);
        assert_eq!(cfg.blocks, 4);
    }

    #[test]
    fn parse_errors_carry_position() {
        match Settings::from_json("{\n  \"B\": 4,\n  \"K\": }", "cfg.json") {
            Err(SimError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 8)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Settings::from_json(r#"{"Q": 1}"#, "-"), Err(SimError::Parse { .. })));
    }

    #[test]
    fn conflicting_and_invalid_values_are_rejected() {
        let s = Settings::from_json(r#"{"P_max": 1.0, "P_dBm": 30}"#, "-").unwrap();
        assert!(matches!(s.build(), Err(SimError::Config(_))));
        let s = Settings::from_json(r#"{"B": 3, "rho": [1, 2]}"#, "-").unwrap();
        assert!(s.build().is_err());
    }

    #[test]
    fn overrides_win_and_paper_scale_keeps_explicit_n() {
        let file = Settings::from_json(r#"{"K": 2, "P_max": 2.0, "seed": 4}"#, "-").unwrap();
        let cli = Settings { p_dbm: Some(PerBs::One(10.0)), seed: Some(9), ..Default::default() };
        let cfg = file.merge(&cli).paper_scale().build().unwrap();
        assert_eq!((cfg.num_ues, cfg.seed, cfg.ris_elements), (2, 9, PAPER_SCALE_N));
        assert!((cfg.p_max[0] - 0.01).abs() < 1e-15);
        let explicit = Settings { ris_elements: Some(8), ..Default::default() }.paper_scale();
        assert_eq!(explicit.build().unwrap().ris_elements, 8);
    }
}
