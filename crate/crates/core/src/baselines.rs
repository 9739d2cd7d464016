//! Comparison algorithms sharing the same channel draws.

use rand::Rng;

use crate::channel::ChannelSet;
use crate::fp::{mrt_precoder, normalize_power, update_eta, update_gamma, PrecodingProblem};
use crate::linalg::{random_phases, solve_hermitian, CMat, CVec, C64};
use crate::objective::{gain_table, wsr_from_table, CrossTermTable};
use crate::rng::{stream, Stream};
use crate::scenario::SystemConfig;
use crate::theta::{common_quadratic, solve_theta_bcd, ThetaQuadratic};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    pub w: Vec<CMat>,
    pub theta: CVec,
    pub iterations: usize,
    /// Objective per iteration or sweep, where the algorithm has one.
    pub trace: Vec<f64>,
}

impl BaselineOutput {
    pub fn wsr(&self, ch: &ChannelSet, cfg: &SystemConfig) -> Result<f64> {
        let a = gain_table(&self.w, &self.theta, ch)?;
        Ok(wsr_from_table(&a, cfg.noise_power, &cfg.weights))
    }
}

/// Matched filter on every BS's composite channels.
pub fn mrt_for_theta(ch: &ChannelSet, cfg: &SystemConfig, theta: &CVec) -> Vec<CMat> {
    (0..ch.num_bs)
        .map(|b| mrt_precoder(&ch.composite_matrix(b, theta), cfg.p_max[b]))
        .collect()
}

pub fn mrt_random<R: Rng + ?Sized>(ch: &ChannelSet, cfg: &SystemConfig, rng: &mut R) -> Result<BaselineOutput> {
    let theta = random_phases(rng, ch.phase_len());
    Ok(BaselineOutput {
        w: mrt_for_theta(ch, cfg, &theta),
        theta,
        iterations: 0,
        trace: vec![],
    })
}

/// Total composite-channel energy `sum_{b,k} ||h_hat_{b,k}(theta)||^2`.
pub fn cascade_gain(ch: &ChannelSet, theta: &CVec) -> f64 {
    (0..ch.num_bs)
        .flat_map(|b| (0..ch.num_ues).map(move |k| (b, k)))
        .map(|(b, k)| ch.composite(b, k, theta).norm_squared())
        .sum()
}

/// Phases maximising the total composite-channel energy, with the energy
/// after each BCD sweep.
pub fn maxao_theta(ch: &ChannelSet, cfg: &SystemConfig) -> Result<(CVec, Vec<f64>)> {
    let n = ch.phase_len();
    let mut t = CMat::zeros(n, n);
    let mut z = CVec::zeros(n);
    for b in 0..ch.num_bs {
        for k in 0..ch.num_ues {
            let c = ch.cascade(b, k);
            t += c * c.adjoint();
            z += c * ch.h(b, k);
        }
    }
    let shift: f64 = (0..n).map(|i| t[(i, i)].re).sum();
    let s = CMat::identity(n, n) * C64::from(shift) - t;
    let q = ThetaQuadratic::new(s, z)?;
    let init = CVec::from_element(n, C64::new(1.0, 0.0));
    let out = solve_theta_bcd(&q, &init, cfg.solver.bcd_max_sweeps, cfg.solver.bcd_tol)?;
    let direct: f64 = (0..ch.num_bs)
        .flat_map(|b| (0..ch.num_ues).map(move |k| (b, k)))
        .map(|(b, k)| ch.h(b, k).norm_squared())
        .sum();
    let offset = direct + n as f64 * shift;
    let trace = out.trace.iter().map(|v| offset - v).collect();
    Ok((out.theta, trace))
}

pub fn mrt_maxao(ch: &ChannelSet, cfg: &SystemConfig) -> Result<BaselineOutput> {
    let (theta, trace) = maxao_theta(ch, cfg)?;
    Ok(BaselineOutput {
        w: mrt_for_theta(ch, cfg, &theta),
        iterations: trace.len().saturating_sub(1),
        theta,
        trace,
    })
}

/// `H (H^H H + sigma I)^{-1}` with unit-norm columns, `sigma = 0` when
/// `K <= N_t` and the Gram matrix is invertible.
pub fn zf_directions(hats: &CMat, sigma: f64) -> CMat {
    let k = hats.ncols();
    let gram = hats.adjoint() * hats;
    let exact = if hats.nrows() >= k { solve_hermitian(&gram, &CMat::identity(k, k)) } else { None };
    let inv = exact.unwrap_or_else(|| {
        let reg = &gram + CMat::identity(k, k) * C64::from(sigma.max(f64::MIN_POSITIVE));
        solve_hermitian(&reg, &CMat::identity(k, k)).unwrap_or_else(|| CMat::zeros(k, k))
    });
    let mut w = hats * inv;
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 && n.is_finite() {
            col /= C64::from(n);
        } else {
            col.fill(C64::new(0.0, 0.0));
        }
    }
    w
}

pub fn local_zf_maxao(ch: &ChannelSet, cfg: &SystemConfig) -> Result<BaselineOutput> {
    let (theta, trace) = maxao_theta(ch, cfg)?;
    let k = ch.num_ues as f64;
    let w = (0..ch.num_bs)
        .map(|b| {
            let p = cfg.p_max[b];
            let dirs = zf_directions(&ch.composite_matrix(b, &theta), cfg.noise_power * k / p);
            normalize_power(&(dirs * C64::from((p / k).sqrt())), p).0
        })
        .collect();
    Ok(BaselineOutput { w, theta, iterations: 0, trace })
}

/// How the centralized solver enforces the power budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerStep {
    /// Exact minimiser under `||W_b||^2 <= P_b`; the WSR never decreases.
    #[default]
    Constrained,
    /// Unconstrained update scaled onto the budget, as in the pipeline.
    Normalize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralizedSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub power_step: PowerStep,
}

impl CentralizedSettings {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            max_iters: cfg.solver.centralized_max_iters,
            tol: cfg.solver.centralized_tol,
            power_step: PowerStep::Constrained,
        }
    }
}

fn table_of(a: &CMat) -> CrossTermTable {
    CrossTermTable {
        varpi: a.clone(),
        vartheta: CMat::zeros(a.nrows(), a.ncols()),
    }
}

/// Alternating FP with full CSI and one shared phase vector. Starts from the
/// same point as the distributed pipeline: BS 0's random phases and
/// direct-channel MRT. `trace[i]` is the WSR after iteration `i + 1`.
pub fn centralized_fp(ch: &ChannelSet, cfg: &SystemConfig, settings: CentralizedSettings) -> Result<BaselineOutput> {
    if ch.num_bs != cfg.num_bs || ch.num_ues != cfg.num_ues {
        return Err(Error::DimensionMismatch("channels do not match the configuration".into()));
    }
    let noise = cfg.noise_power;
    let weights = &cfg.weights;
    let mut theta = random_phases(&mut stream(cfg.seed, Stream::ThetaInit, 0, 0, 0), ch.phase_len());
    let mut w: Vec<CMat> = (0..ch.num_bs)
        .map(|b| {
            let direct = CMat::from_fn(ch.bs_antennas, ch.num_ues, |i, k| ch.h(b, k)[i]);
            mrt_precoder(&direct, cfg.p_max[b])
        })
        .collect();
    let coef = |gamma: &[f64]| -> Vec<f64> { gamma.iter().zip(weights).map(|(g, w)| ((1.0 + g) * w).sqrt()).collect() };

    let mut trace = Vec::new();
    let mut prev = wsr_from_table(&gain_table(&w, &theta, ch)?, noise, weights);
    let mut iterations = 0;
    while iterations < settings.max_iters {
        iterations += 1;
        let mut a = gain_table(&w, &theta, ch)?;
        let gamma = update_gamma(&table_of(&a), noise)?;
        let eta = update_eta(&table_of(&a), &gamma, weights, noise)?;
        for b in 0..ch.num_bs {
            let hats = ch.composite_matrix(b, &theta);
            let own = hats.adjoint() * &w[b];
            let others = &a - own;
            let problem = PrecodingProblem::from_parts(hats.clone(), eta.clone(), coef(&gamma), others.clone());
            let next = match settings.power_step {
                PowerStep::Constrained => problem.solve_constrained(b, cfg.p_max[b])?,
                PowerStep::Normalize => {
                    let (n, ok) = normalize_power(&problem.solve(b)?, cfg.p_max[b]);
                    if ok {
                        n
                    } else {
                        w[b].clone()
                    }
                }
            };
            a = others + hats.adjoint() * &next;
            w[b] = next;
        }
        let q = common_quadratic(ch, &w, &eta, &gamma, weights)?;
        theta = solve_theta_bcd(&q, &theta, cfg.solver.bcd_max_sweeps, cfg.solver.bcd_tol)?.theta;
        let value = wsr_from_table(&gain_table(&w, &theta, ch)?, noise, weights);
        trace.push(value);
        let change = (value - prev).abs();
        prev = value;
        if change < settings.tol * value.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(BaselineOutput { w, theta, iterations, trace })
}
