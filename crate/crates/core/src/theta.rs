//! The unit-modulus phase subproblem `min theta^H S theta - 2 Re(theta^H Z)`.
//!
//! For BS `b` with every other BS frozen, the gain table is affine in the
//! local phases: `A_kj(theta) = d_kj + theta^H u_kj` with
//! `u_kj = V_k^H G_b w_{b,j}` and `d_kj = h_{b,k}^H w_{b,j} + O_kj`. The
//! quadratic-transform objective then expands into the form above, and the
//! augmented-Lagrangian consensus term adds `(rho/2) I` to `S` and
//! `(rho/2) theta_nb - lambda/2` to `Z`.

use std::f64::consts::LN_2;

use crate::channel::ChannelSet;
use crate::linalg::{check_unit_modulus, phase_of, CMat, CVec, C64};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaQuadratic {
    pub s: CMat,
    pub z: CVec,
}

impl ThetaQuadratic {
    /// Checks shape, finiteness and Hermitian symmetry.
    pub fn new(s: CMat, z: CVec) -> Result<Self> {
        let n = z.len();
        if s.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("S is {:?}, Z has {n} entries", s.shape())));
        }
        if !crate::linalg::all_finite(&s) || z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("theta quadratic"));
        }
        let scale = s.norm().max(f64::MIN_POSITIVE);
        if (&s - s.adjoint()).norm() > 1e-10 * scale {
            return Err(Error::Precondition("S is not Hermitian".into()));
        }
        Ok(Self { s, z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn is_psd(&self) -> bool {
        let eig = self.s.clone().symmetric_eigen();
        let tol = 1e-9 * self.s.norm();
        eig.eigenvalues.iter().all(|l| *l >= -tol)
    }

    pub fn objective(&self, theta: &CVec) -> f64 {
        theta_objective(self, theta)
    }
}

/// `theta^H S theta - 2 Re(theta^H Z)`.
pub fn theta_objective(q: &ThetaQuadratic, theta: &CVec) -> f64 {
    (theta.dotc(&(&q.s * theta))).re - 2.0 * theta.dotc(&q.z).re
}

/// Augmented-Lagrangian consensus data for one BS.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTerm {
    pub rho: f64,
    pub lambda: CVec,
    pub neighbor: CVec,
}

/// `u[k * K + j] = V_k^H G_b w_{b,j}`.
fn reflected_terms(b: usize, ch: &ChannelSet, w_b: &CMat) -> Vec<CVec> {
    let k = ch.num_ues;
    let mut u = Vec::with_capacity(k * k);
    for kk in 0..k {
        let cw = ch.cascade(b, kk) * w_b;
        for j in 0..k {
            u.push(cw.column(j).into_owned());
        }
    }
    u
}

fn f2_s(u: &[CVec], eta: &CVec, n: usize) -> CMat {
    let k = eta.len();
    let mut s = CMat::zeros(n, n);
    for kk in 0..k {
        let e2 = eta[kk].norm_sqr();
        if e2 == 0.0 {
            continue;
        }
        for j in 0..k {
            let x = &u[kk * k + j];
            s += (x * x.adjoint()) * C64::from(e2 / LN_2);
        }
    }
    s
}

fn f2_z(u: &[CVec], d: &CMat, eta: &CVec, coef: &[f64], n: usize) -> CVec {
    let k = eta.len();
    let mut z = CVec::zeros(n);
    for kk in 0..k {
        let e2 = eta[kk].norm_sqr();
        z += &u[kk * k + kk] * (eta[kk] * coef[kk]);
        for j in 0..k {
            z -= &u[kk * k + j] * (d[(kk, j)].conj() * e2);
        }
    }
    z / C64::from(LN_2)
}

fn coefficients(gamma: &[f64], weights: &[f64]) -> Vec<f64> {
    gamma.iter().zip(weights).map(|(g, w)| ((1.0 + g) * w).sqrt()).collect()
}

fn check_dims(ch: &ChannelSet, w_b: &CMat, eta: &CVec) -> Result<()> {
    if w_b.shape() != (ch.bs_antennas, ch.num_ues) || eta.len() != ch.num_ues {
        return Err(Error::DimensionMismatch("W_b must be N_t x K and eta of length K".into()));
    }
    Ok(())
}

/// Quadratic coefficient for BS `b`, including `(rho/2) I`.
pub fn assemble_s(b: usize, ch: &ChannelSet, w_b: &CMat, eta: &CVec, rho: f64) -> Result<CMat> {
    check_dims(ch, w_b, eta)?;
    let n = ch.phase_len();
    let u = reflected_terms(b, ch, w_b);
    Ok(f2_s(&u, eta, n) + CMat::identity(n, n) * C64::from(rho / 2.0))
}

/// Linear coefficient for BS `b`. `others` is the part of the gain table
/// contributed by every other BS.
#[allow(clippy::too_many_arguments)]
pub fn assemble_z(
    b: usize,
    ch: &ChannelSet,
    w_b: &CMat,
    eta: &CVec,
    gamma: &[f64],
    weights: &[f64],
    others: &CMat,
    consensus: Option<&ConsensusTerm>,
) -> Result<CVec> {
    check_dims(ch, w_b, eta)?;
    let k = ch.num_ues;
    if gamma.len() != k || weights.len() != k || others.shape() != (k, k) {
        return Err(Error::DimensionMismatch("gamma, weights and O must match K".into()));
    }
    let n = ch.phase_len();
    let u = reflected_terms(b, ch, w_b);
    let mut d = others.clone();
    for kk in 0..k {
        d.set_row(kk, &(d.row(kk) + ch.h(b, kk).adjoint() * w_b));
    }
    let mut z = f2_z(&u, &d, eta, &coefficients(gamma, weights), n);
    if let Some(c) = consensus {
        if c.lambda.len() != n || c.neighbor.len() != n {
            return Err(Error::DimensionMismatch("lambda and neighbour phases need NR entries".into()));
        }
        z += &c.neighbor * C64::from(c.rho / 2.0) - &c.lambda * C64::from(0.5);
    }
    Ok(z)
}

/// The full local quadratic for BS `b`.
#[allow(clippy::too_many_arguments)]
pub fn local_quadratic(
    b: usize,
    ch: &ChannelSet,
    w_b: &CMat,
    eta: &CVec,
    gamma: &[f64],
    weights: &[f64],
    others: &CMat,
    consensus: Option<&ConsensusTerm>,
) -> Result<ThetaQuadratic> {
    let rho = consensus.map_or(0.0, |c| c.rho);
    let s = assemble_s(b, ch, w_b, eta, rho)?;
    let z = assemble_z(b, ch, w_b, eta, gamma, weights, others, consensus)?;
    ThetaQuadratic::new(s, z)
}

/// Quadratic in a phase vector shared by all BSs, with every precoder fixed.
pub fn common_quadratic(ch: &ChannelSet, w: &[CMat], eta: &CVec, gamma: &[f64], weights: &[f64]) -> Result<ThetaQuadratic> {
    let k = ch.num_ues;
    let n = ch.phase_len();
    if w.len() != ch.num_bs {
        return Err(Error::DimensionMismatch("one W_b per BS".into()));
    }
    let mut u = vec![CVec::zeros(n); k * k];
    let mut d = CMat::zeros(k, k);
    for (b, w_b) in w.iter().enumerate() {
        check_dims(ch, w_b, eta)?;
        for (acc, x) in u.iter_mut().zip(reflected_terms(b, ch, w_b)) {
            *acc += x;
        }
        for kk in 0..k {
            d.set_row(kk, &(d.row(kk) + ch.h(b, kk).adjoint() * w_b));
        }
    }
    let s = f2_s(&u, eta, n);
    let z = f2_z(&u, &d, eta, &coefficients(gamma, weights), n);
    ThetaQuadratic::new(s, z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutcome {
    pub theta: CVec,
    pub objective: f64,
    /// Objective after each completed sweep of the returned run, preceded by
    /// its starting value.
    pub trace: Vec<f64>,
    pub sweeps: usize,
}

fn bcd_run(q: &ThetaQuadratic, init: CVec, max_sweeps: usize, tol: f64) -> BcdOutcome {
    let n = q.len();
    let mut theta = init;
    let mut s_theta = &q.s * &theta;
    let mut value = theta_objective(q, &theta);
    let mut trace = vec![value];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        for i in 0..n {
            let arg = q.z[i] - s_theta[i] + q.s[(i, i)] * theta[i];
            if let Some(p) = phase_of(arg) {
                let delta = p - theta[i];
                if delta.re != 0.0 || delta.im != 0.0 {
                    s_theta += q.s.column(i) * delta;
                    theta[i] = p;
                }
            }
        }
        sweeps += 1;
        s_theta = &q.s * &theta;
        let next = theta_objective(q, &theta);
        trace.push(next);
        let decrease = value - next;
        value = next;
        if decrease <= tol * value.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    BcdOutcome { theta, objective: value, trace, sweeps }
}

/// Element-wise block-coordinate descent on the unit-modulus set.
///
/// Two runs are made: one from `theta_init` and one from the phases of `Z`
/// (entries with `Z_n = 0` keep `theta_init`). The second replaces the first
/// only when strictly better, so the result never exceeds the objective at
/// `theta_init`.
pub fn solve_theta_bcd(q: &ThetaQuadratic, theta_init: &CVec, max_sweeps: usize, tol: f64) -> Result<BcdOutcome> {
    if theta_init.len() != q.len() {
        return Err(Error::DimensionMismatch("initial phases must match Z".into()));
    }
    if !crate::linalg::all_finite(&q.s) || q.z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("theta quadratic"));
    }
    check_unit_modulus(theta_init, 1e-9)?;
    let first = bcd_run(q, theta_init.clone(), max_sweeps, tol);
    let alt_init = CVec::from_fn(q.len(), |i, _| phase_of(q.z[i]).unwrap_or(theta_init[i]));
    if alt_init == *theta_init {
        return Ok(first);
    }
    let second = bcd_run(q, alt_init, max_sweeps, tol);
    Ok(if second.objective < first.objective { second } else { first })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cscg, random_phases, ONE};
    use crate::rng::{stream, Stream};

    fn random_quadratic(seed: u64, n: usize) -> ThetaQuadratic {
        let mut rng = stream(seed, Stream::Test, 9, 0, 0);
        let a = CMat::from_fn(n, n + 1, |_, _| cscg(&mut rng, 1.0));
        let z = CVec::from_fn(n, |_, _| cscg(&mut rng, 1.0));
        ThetaQuadratic::new(&a * a.adjoint(), z).unwrap()
    }

    #[test]
    fn objective_examples() {
        let n = 5;
        let q = ThetaQuadratic::new(CMat::identity(n, n), CVec::zeros(n)).unwrap();
        let t = random_phases(&mut stream(1, Stream::Test, 0, 0, 0), n);
        assert!((theta_objective(&q, &t) - n as f64).abs() < 1e-12);
        let s = 0.3;
        let q = ThetaQuadratic::new(CMat::identity(n, n), &t * C64::from(s)).unwrap();
        assert!((theta_objective(&q, &t) - (n as f64 - 2.0 * s * n as f64)).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_double_loop() {
        for seed in 0..10 {
            let q = random_quadratic(seed, 6);
            let t = random_phases(&mut stream(seed, Stream::Test, 1, 0, 0), 6);
            let mut expected = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    expected += (t[i].conj() * q.s[(i, j)] * t[j]).re;
                }
                expected -= 2.0 * (t[i].conj() * q.z[i]).re;
            }
            assert!((theta_objective(&q, &t) - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_hermitian_and_nan() {
        let mut s = CMat::identity(2, 2);
        s[(0, 1)] = ONE;
        assert!(ThetaQuadratic::new(s, CVec::zeros(2)).is_err());
        let z = CVec::from_element(2, C64::new(f64::NAN, 0.0));
        assert_eq!(ThetaQuadratic::new(CMat::identity(2, 2), z), Err(Error::NonFinite("theta quadratic")));
    }

    #[test]
    fn diagonal_s_is_solved_in_one_sweep() {
        let mut rng = stream(2, Stream::Test, 0, 0, 0);
        let n = 7;
        let s = CMat::from_diagonal(&CVec::from_fn(n, |i, _| C64::from(1.0 + i as f64)));
        let z = CVec::from_fn(n, |_, _| cscg(&mut rng, 1.0));
        let q = ThetaQuadratic::new(s, z.clone()).unwrap();
        let init = random_phases(&mut rng, n);
        let out = bcd_run(&q, init, 1, 0.0);
        for i in 0..n {
            assert!((out.theta[i] - phase_of(z[i]).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn scaled_identity_closed_form() {
        let mut rng = stream(3, Stream::Test, 0, 0, 0);
        let n = 9;
        let c = 2.5;
        let z = CVec::from_fn(n, |_, _| cscg(&mut rng, 1.0));
        let q = ThetaQuadratic::new(CMat::identity(n, n) * C64::from(c), z.clone()).unwrap();
        let out = solve_theta_bcd(&q, &random_phases(&mut rng, n), 50, 1e-8).unwrap();
        let expected = n as f64 * c - 2.0 * z.iter().map(|v| v.norm()).sum::<f64>();
        assert!((out.objective - expected).abs() < 1e-10);
    }

    #[test]
    fn zero_z_keeps_initial_phases() {
        let n = 4;
        let q = ThetaQuadratic::new(CMat::identity(n, n) * C64::from(0.5), CVec::zeros(n)).unwrap();
        let init = random_phases(&mut stream(4, Stream::Test, 0, 0, 0), n);
        assert_eq!(solve_theta_bcd(&q, &init, 50, 1e-8).unwrap().theta, init);
    }

    #[test]
    fn sweeps_never_increase_and_output_is_unit_modulus() {
        for seed in 0..30 {
            let q = random_quadratic(seed, 12);
            let init = random_phases(&mut stream(seed, Stream::Test, 2, 0, 0), 12);
            let out = solve_theta_bcd(&q, &init, 1000, 1e-8).unwrap();
            for w in out.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
            assert!(out.objective <= theta_objective(&q, &init) + 1e-12);
            assert!(out.theta.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn deterministic() {
        let q = random_quadratic(5, 10);
        let init = random_phases(&mut stream(5, Stream::Test, 3, 0, 0), 10);
        assert_eq!(solve_theta_bcd(&q, &init, 100, 1e-8), solve_theta_bcd(&q, &init, 100, 1e-8));
    }

    #[test]
    fn rejects_infeasible_start() {
        let q = random_quadratic(6, 3);
        let bad = CVec::from_element(3, C64::new(2.0, 0.0));
        assert!(matches!(solve_theta_bcd(&q, &bad, 10, 1e-8), Err(Error::NotUnitModulus { .. })));
    }
}
