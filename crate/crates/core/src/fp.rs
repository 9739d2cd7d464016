//! Closed-form auxiliary-variable and precoder updates.

use crate::channel::ChannelSet;
use crate::linalg::{power, solve_hermitian, CMat, CVec, C64};
use crate::objective::{total_received, CrossTermTable};
use crate::{Error, Result};

fn check_noise(noise: f64) -> Result<()> {
    if noise > 0.0 && noise.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("noise power must be positive, got {noise}")))
    }
}

/// `gamma_k = |A_kk|^2 / (sum_{j != k} |A_kj|^2 + noise)` with `A = varpi + vartheta`.
pub fn update_gamma(cross: &CrossTermTable, noise: f64) -> Result<Vec<f64>> {
    check_noise(noise)?;
    cross.check()?;
    let a = cross.combined();
    Ok((0..a.nrows()).map(|k| crate::objective::sinr_from_table(&a, noise, k)).collect())
}

/// `eta_k = conj(A_kk) sqrt((1 + gamma_k) w_k) / (sum_j |A_kj|^2 + noise)`.
pub fn update_eta(cross: &CrossTermTable, gamma: &[f64], weights: &[f64], noise: f64) -> Result<CVec> {
    check_noise(noise)?;
    cross.check()?;
    let a = cross.combined();
    let k = a.nrows();
    if gamma.len() != k || weights.len() != k {
        return Err(Error::DimensionMismatch("gamma and weights need K entries".into()));
    }
    Ok(CVec::from_fn(k, |i, _| {
        let c = ((1.0 + gamma[i]) * weights[i]).sqrt();
        a[(i, i)].conj() * (c / total_received(&a, noise, i))
    }))
}

/// Per-BS contribution `(h_{b,k}^H w_{b,j}, theta^H V_k^H G_b w_{b,j})`.
pub fn bs_contribution(b: usize, ch: &ChannelSet, w_b: &CMat, theta_b: &CVec) -> CrossTermTable {
    let k = ch.num_ues;
    let mut varpi = CMat::zeros(k, k);
    let mut vartheta = CMat::zeros(k, k);
    for kk in 0..k {
        let direct = ch.h(b, kk).adjoint() * w_b;
        let reflected = theta_b.adjoint() * (ch.cascade(b, kk) * w_b);
        varpi.set_row(kk, &direct);
        vartheta.set_row(kk, &reflected);
    }
    CrossTermTable { varpi, vartheta }
}

/// The precoding subproblem of one BS with every other BS's contribution
/// frozen:
///
/// `g(W) = sum_k |eta_k|^2 sum_j |h_hat_k^H w_j + O_kj|^2
///        - 2 sum_k c_k Re(eta_k (h_hat_k^H w_k + O_kk))`
///
/// with `c_k = sqrt((1 + gamma_k) weight_k)` and `O` the other BSs' part of
/// the gain table.
#[derive(Debug, Clone)]
pub struct PrecodingProblem {
    pub hats: CMat,
    pub eta: CVec,
    pub coef: Vec<f64>,
    pub others: CMat,
    m: CMat,
    rhs: CMat,
}

impl PrecodingProblem {
    /// `cross` must contain this BS's own contribution formed with
    /// `(theta_b, w_prev)`; it is removed to obtain `O`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: usize,
        ch: &ChannelSet,
        theta_b: &CVec,
        gamma: &[f64],
        eta: &CVec,
        cross: &CrossTermTable,
        w_prev: &CMat,
        weights: &[f64],
    ) -> Result<Self> {
        let k = ch.num_ues;
        if gamma.len() != k || eta.len() != k || weights.len() != k {
            return Err(Error::DimensionMismatch("gamma, eta and weights need K entries".into()));
        }
        if w_prev.shape() != (ch.bs_antennas, k) || theta_b.len() != ch.phase_len() {
            return Err(Error::DimensionMismatch("W_b must be N_t x K and theta_b of length NR".into()));
        }
        cross.check()?;
        let hats = ch.composite_matrix(b, theta_b);
        let others = cross.combined() - hats.adjoint() * w_prev;
        let coef = (0..k).map(|i| ((1.0 + gamma[i]) * weights[i]).sqrt()).collect();
        Ok(Self::from_parts(hats, eta.clone(), coef, others))
    }

    pub fn from_parts(hats: CMat, eta: CVec, coef: Vec<f64>, others: CMat) -> Self {
        let k = hats.ncols();
        let eta2: Vec<f64> = eta.iter().map(|e| e.norm_sqr()).collect();
        let mut scaled = hats.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= C64::from(eta2[j]);
        }
        let m = &scaled * hats.adjoint();
        let mut mix = -CMat::from_fn(k, k, |j, kk| others[(j, kk)] * eta2[j]);
        for i in 0..k {
            mix[(i, i)] += eta[i].conj() * coef[i];
        }
        let rhs = &hats * mix;
        Self { hats, eta, coef, others, m, rhs }
    }

    pub fn objective(&self, w: &CMat) -> f64 {
        let a = self.hats.adjoint() * w + &self.others;
        let k = a.nrows();
        (0..k)
            .map(|i| {
                let row: f64 = a.row(i).iter().map(|z| z.norm_sqr()).sum();
                self.eta[i].norm_sqr() * row - 2.0 * self.coef[i] * (self.eta[i] * a[(i, i)]).re
            })
            .sum()
    }

    fn jitter(&self) -> f64 {
        let n = self.m.nrows() as f64;
        let tr: f64 = (0..self.m.nrows()).map(|i| self.m[(i, i)].re).sum();
        (1e-12 * tr / n).max(1e-300)
    }

    /// Unconstrained minimiser `M^{-1} rhs` with a small Tikhonov term.
    pub fn solve(&self, bs: usize) -> Result<CMat> {
        let n = self.m.nrows();
        let m = &self.m + CMat::identity(n, n) * C64::from(self.jitter());
        solve_hermitian(&m, &self.rhs).ok_or_else(|| Error::DegenerateUpdate {
            bs,
            reason: "precoder system is singular".into(),
        })
    }

    /// Exact minimiser subject to `||W||_F^2 <= p_max`, with the multiplier
    /// found by bisection on the eigen-decomposition of `M`.
    pub fn solve_constrained(&self, bs: usize, p_max: f64) -> Result<CMat> {
        let eig = self.m.clone().symmetric_eigen();
        let proj = eig.eigenvectors.adjoint() * &self.rhs;
        let floor = self.jitter();
        let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0) + floor).collect();
        let weights: Vec<f64> = proj.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect();
        let pow = |mu: f64| -> f64 { lambdas.iter().zip(&weights).map(|(l, w)| w / (l + mu).powi(2)).sum() };
        let mut mu = 0.0;
        if pow(0.0) > p_max {
            let total: f64 = weights.iter().sum();
            let (mut lo, mut hi) = (0.0, (total / p_max).sqrt());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if pow(mid) > p_max {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            mu = hi;
        }
        let mut scaled = proj;
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row /= C64::from(lambdas[i] + mu);
        }
        let w = eig.eigenvectors * scaled;
        if !crate::linalg::all_finite(&w) {
            return Err(Error::DegenerateUpdate { bs, reason: "non-finite constrained precoder".into() });
        }
        Ok(w)
    }
}

/// Unnormalised precoder update for BS `b`.
#[allow(clippy::too_many_arguments)]
pub fn update_w(
    b: usize,
    ch: &ChannelSet,
    theta_b: &CVec,
    gamma: &[f64],
    eta: &CVec,
    cross: &CrossTermTable,
    w_prev: &CMat,
    weights: &[f64],
) -> Result<CMat> {
    PrecodingProblem::new(b, ch, theta_b, gamma, eta, cross, w_prev, weights)?.solve(b)
}

/// Scales `w` to total power `p_max`. Returns `false`, leaving `w` as is,
/// when it is identically zero.
pub fn normalize_power(w: &CMat, p_max: f64) -> (CMat, bool) {
    let p = power(w);
    if p > 0.0 && p.is_finite() {
        (w * C64::from((p_max / p).sqrt()), true)
    } else {
        (w.clone(), false)
    }
}

/// Matched-filter precoder: columns `h_hat_k / ||h_hat_k||` with an equal
/// power split, then normalised. Zero channels give zero columns.
pub fn mrt_precoder(hats: &CMat, p_max: f64) -> CMat {
    let k = hats.ncols();
    let mut w = hats.clone();
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col *= C64::from((p_max / k as f64).sqrt() / n);
        }
    }
    normalize_power(&w, p_max).0
}
