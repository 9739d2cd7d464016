//! Complex linear-algebra aliases and small helpers shared by the solvers.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// `a^H b` for column vectors.
pub fn inner(a: &CVec, b: &CVec) -> C64 {
    a.dotc(b)
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn cscg<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Vector of i.i.d. uniform phases.
pub fn random_phases<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVec {
    CVec::from_fn(len, |_, _| {
        C64::from_polar(1.0, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
    })
}

/// Unit-modulus element with the phase of `z`; `None` when `z` is exactly 0.
pub fn phase_of(z: C64) -> Option<C64> {
    if z.re == 0.0 && z.im == 0.0 {
        None
    } else {
        Some(C64::from_polar(1.0, z.im.atan2(z.re)))
    }
}

pub fn check_unit_modulus(theta: &CVec, tol: f64) -> crate::Result<()> {
    for (index, z) in theta.iter().enumerate() {
        let modulus = z.norm();
        if !modulus.is_finite() || (modulus - 1.0).abs() > tol {
            return Err(crate::Error::NotUnitModulus { index, modulus });
        }
    }
    Ok(())
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Solves `a x = b` for Hermitian positive definite `a`, falling back to LU.
pub fn solve_hermitian(a: &CMat, b: &CMat) -> Option<CMat> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if all_finite(&x) {
            return Some(x);
        }
    }
    let x = a.clone().lu().solve(b)?;
    all_finite(&x).then_some(x)
}

/// Squared Frobenius norm.
pub fn power(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn cscg_has_requested_variance() {
        let mut rng = stream(3, Stream::Test, 0, 0, 0);
        let n = 40_000;
        let mean_pow: f64 = (0..n).map(|_| cscg(&mut rng, 2.5).norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean_pow - 2.5).abs() / 2.5 < 0.03, "{mean_pow}");
    }

    #[test]
    fn phase_of_zero_is_none() {
        assert!(phase_of(ZERO).is_none());
        let p = phase_of(C64::new(0.0, -3.0)).unwrap();
        assert!((p - C64::new(0.0, -1.0)).norm() < 1e-15);
    }
}
