//! SINR, weighted sum rate, the transformed objectives and the loss.
//!
//! Everything here is expressed through the effective gain table
//! `A[k, j] = sum_b h_hat_{b,k}^H w_{b,j}`, i.e. row `k` is the receiver and
//! column `j` the stream. Rates are in bits. Both transformed objectives are
//! written in bits as well, so that at the closed-form auxiliary variables
//! they coincide with the negated WSR.

use std::f64::consts::LN_2;

use crate::channel::ChannelSet;
use crate::linalg::{CMat, CVec};
use crate::{Error, Result};

/// Aggregated direct and reflected cross terms.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTermTable {
    pub varpi: CMat,
    pub vartheta: CMat,
}

impl CrossTermTable {
    pub fn zeros(k: usize) -> Self {
        Self {
            varpi: CMat::zeros(k, k),
            vartheta: CMat::zeros(k, k),
        }
    }

    pub fn num_ues(&self) -> usize {
        self.varpi.nrows()
    }

    /// `varpi + vartheta`.
    pub fn combined(&self) -> CMat {
        &self.varpi + &self.vartheta
    }

    pub fn check(&self) -> Result<()> {
        let k = self.varpi.nrows();
        if self.varpi.shape() != (k, k) || self.vartheta.shape() != (k, k) {
            return Err(Error::DimensionMismatch("cross-term tables must be K x K".into()));
        }
        if !crate::linalg::all_finite(&self.varpi) || !crate::linalg::all_finite(&self.vartheta) {
            return Err(Error::NonFinite("cross-term table"));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            varpi: &self.varpi + &other.varpi,
            vartheta: &self.vartheta + &other.vartheta,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            varpi: &self.varpi - &other.varpi,
            vartheta: &self.vartheta - &other.vartheta,
        }
    }

    /// Largest entrywise deviation between two tables.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let d1 = (&self.varpi - &other.varpi).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let d2 = (&self.vartheta - &other.vartheta).iter().map(|z| z.norm()).fold(0.0, f64::max);
        d1.max(d2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxVars {
    pub gamma: Vec<f64>,
    pub eta: CVec,
}

fn check_noise(noise: f64) -> Result<()> {
    if noise > 0.0 && noise.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("noise power must be positive, got {noise}")))
    }
}

fn check_precoders(w: &[CMat], ch: &ChannelSet) -> Result<()> {
    if w.len() != ch.num_bs {
        return Err(Error::DimensionMismatch(format!("{} precoder blocks for {} BSs", w.len(), ch.num_bs)));
    }
    if w.iter().any(|m| m.shape() != (ch.bs_antennas, ch.num_ues)) {
        return Err(Error::DimensionMismatch("each W_b must be N_t x K".into()));
    }
    Ok(())
}

/// `A[k, j] = sum_b h_hat_{b,k}(theta_b)^H w_{b,j}`, with one phase vector per BS.
pub fn gain_table_per_bs(w: &[CMat], thetas: &[CVec], ch: &ChannelSet) -> Result<CMat> {
    check_precoders(w, ch)?;
    if thetas.len() != ch.num_bs || thetas.iter().any(|t| t.len() != ch.phase_len()) {
        return Err(Error::DimensionMismatch("one length-NR phase vector per BS".into()));
    }
    let mut a = CMat::zeros(ch.num_ues, ch.num_ues);
    for (b, (wb, tb)) in w.iter().zip(thetas).enumerate() {
        a += ch.composite_matrix(b, tb).adjoint() * wb;
    }
    Ok(a)
}

/// Gain table for a common phase vector.
pub fn gain_table(w: &[CMat], theta: &CVec, ch: &ChannelSet) -> Result<CMat> {
    let thetas = vec![theta.clone(); ch.num_bs];
    gain_table_per_bs(w, &thetas, ch)
}

/// `sum_j |A[k, j]|^2 + noise`.
pub fn total_received(a: &CMat, noise: f64, k: usize) -> f64 {
    a.row(k).iter().map(|z| z.norm_sqr()).sum::<f64>() + noise
}

pub fn sinr_from_table(a: &CMat, noise: f64, k: usize) -> f64 {
    let desired = a[(k, k)].norm_sqr();
    let interference: f64 = (0..a.ncols()).filter(|&j| j != k).map(|j| a[(k, j)].norm_sqr()).sum();
    desired / (interference + noise)
}

pub fn wsr_from_table(a: &CMat, noise: f64, weights: &[f64]) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(k, w)| w * sinr_from_table(a, noise, k).ln_1p() / LN_2)
        .sum()
}

pub fn sinr(w: &[CMat], theta: &CVec, ch: &ChannelSet, noise: f64, k: usize) -> Result<f64> {
    check_noise(noise)?;
    crate::linalg::check_unit_modulus(theta, 1e-9)?;
    if k >= ch.num_ues {
        return Err(Error::DimensionMismatch(format!("UE {k} out of range")));
    }
    Ok(sinr_from_table(&gain_table(w, theta, ch)?, noise, k))
}

pub fn wsr(w: &[CMat], theta: &CVec, ch: &ChannelSet, noise: f64, weights: &[f64]) -> Result<f64> {
    check_noise(noise)?;
    crate::linalg::check_unit_modulus(theta, 1e-9)?;
    check_weights(weights, ch.num_ues)?;
    Ok(wsr_from_table(&gain_table(w, theta, ch)?, noise, weights))
}

fn check_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(Error::DimensionMismatch(format!("{} weights for {k} UEs", weights.len())));
    }
    Ok(())
}

/// Lagrangian-dual transform evaluated on a gain table.
pub fn f1_from_table(a: &CMat, gamma: &[f64], noise: f64, weights: &[f64]) -> f64 {
    (0..a.nrows())
        .map(|k| {
            let g = gamma[k];
            let ratio = a[(k, k)].norm_sqr() / total_received(a, noise, k);
            weights[k] * (g - g.ln_1p() - (1.0 + g) * ratio) / LN_2
        })
        .sum()
}

/// Quadratic transform evaluated on a gain table.
pub fn f2_from_table(a: &CMat, gamma: &[f64], eta: &CVec, noise: f64, weights: &[f64]) -> f64 {
    (0..a.nrows())
        .map(|k| {
            let (g, w) = (gamma[k], weights[k]);
            let c = ((1.0 + g) * w).sqrt();
            let quad = eta[k].norm_sqr() * total_received(a, noise, k) - 2.0 * c * (eta[k] * a[(k, k)]).re;
            (quad + w * g - w * g.ln_1p()) / LN_2
        })
        .sum()
}

fn check_aux(gamma: &[f64], k: usize) -> Result<()> {
    if gamma.len() != k {
        return Err(Error::DimensionMismatch(format!("{} gamma entries for {k} UEs", gamma.len())));
    }
    if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Precondition("gamma must be finite and non-negative".into()));
    }
    Ok(())
}

pub fn f1(theta: &CVec, w: &[CMat], gamma: &[f64], ch: &ChannelSet, noise: f64, weights: &[f64]) -> Result<f64> {
    check_noise(noise)?;
    check_weights(weights, ch.num_ues)?;
    check_aux(gamma, ch.num_ues)?;
    Ok(f1_from_table(&gain_table(w, theta, ch)?, gamma, noise, weights))
}

#[allow(clippy::too_many_arguments)]
pub fn f2(
    theta: &CVec,
    w: &[CMat],
    gamma: &[f64],
    eta: &CVec,
    ch: &ChannelSet,
    noise: f64,
    weights: &[f64],
) -> Result<f64> {
    check_noise(noise)?;
    check_weights(weights, ch.num_ues)?;
    check_aux(gamma, ch.num_ues)?;
    if eta.len() != ch.num_ues {
        return Err(Error::DimensionMismatch("eta must have K entries".into()));
    }
    Ok(f2_from_table(&gain_table(w, theta, ch)?, gamma, eta, noise, weights))
}

/// `sum_b ||theta_b - theta_{succ(b)}||^2` over the ring.
pub fn consensus_error(thetas: &[CVec]) -> f64 {
    let n = thetas.len();
    (0..n).map(|b| (&thetas[b] - &thetas[(b + 1) % n]).norm_squared()).sum()
}

/// Single-sample loss: consensus error minus WSR.
pub fn loss(thetas: &[CVec], wsr_value: f64) -> f64 {
    consensus_error(thetas) - wsr_value
}

/// Mean loss over a batch of `(per-BS phases, WSR)` samples.
pub fn batch_loss(samples: &[(Vec<CVec>, f64)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Precondition("empty loss batch".into()));
    }
    Ok(samples.iter().map(|(t, r)| loss(t, *r)).sum::<f64>() / samples.len() as f64)
}
