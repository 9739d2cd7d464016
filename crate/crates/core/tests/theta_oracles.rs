mod common;

use std::f64::consts::{LN_2, PI};

use cellfree_core::channel::ChannelSet;
use cellfree_core::fp::{update_eta, update_gamma};
use cellfree_core::linalg::{cscg, CMat, CVec, C64};
use cellfree_core::objective::{f2_from_table, gain_table, CrossTermTable};
use cellfree_core::theta::{
    assemble_s, assemble_z, local_quadratic, solve_theta_bcd, theta_objective, ConsensusTerm, ThetaQuadratic,
};
use common::*;
use rand::Rng;

fn grid_minimum(q: &ThetaQuadratic, steps: usize) -> f64 {
    let mut best = f64::INFINITY;
    let phasors: Vec<C64> = (0..steps).map(|i| C64::from_polar(1.0, 2.0 * PI * i as f64 / steps as f64)).collect();
    let mut t = CVec::zeros(2);
    for a in &phasors {
        for b in &phasors {
            t[0] = *a;
            t[1] = *b;
            best = best.min(theta_objective(q, &t));
        }
    }
    best
}

#[test]
fn bcd_reaches_the_phase_grid_minimum() {
    let mut r = rng(21);
    for _ in 0..50 {
        let a = CMat::from_fn(2, 3, |_, _| cscg(&mut r, 1.0));
        let q = ThetaQuadratic::new(&a * a.adjoint(), CVec::from_fn(2, |_, _| cscg(&mut r, 1.0))).unwrap();
        let init = random_theta(&mut r, 2);
        let out = solve_theta_bcd(&q, &init, 1000, 1e-8).unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        let grid = grid_minimum(&q, 400);
        assert!(out.objective <= grid + 1e-3, "bcd {} grid {}", out.objective, grid);
        assert!(out.theta.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }
}

#[test]
fn scaled_identity_is_solved_exactly() {
    let mut r = rng(22);
    for _ in 0..10 {
        let n = 7;
        let c = 0.5 + r.random::<f64>();
        let z = CVec::from_fn(n, |_, _| cscg(&mut r, 1.0));
        let q = ThetaQuadratic::new(CMat::identity(n, n) * C64::from(c), z.clone()).unwrap();
        let out = solve_theta_bcd(&q, &random_theta(&mut r, n), 50, 1e-8).unwrap();
        let expect = n as f64 * c - 2.0 * z.iter().map(|v| v.norm()).sum::<f64>();
        assert!((out.objective - expect).abs() < 1e-10);
    }
}

struct Instance {
    ch: ChannelSet,
    w: Vec<CMat>,
    theta: Vec<CVec>,
    gamma: Vec<f64>,
    eta: CVec,
    weights: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let (nb, k) = (3, 2);
    let ch = gaussian_channels(&mut r, nb, 2, k, 3, 2);
    let w = random_w(&mut r, nb, 2, k);
    let theta: Vec<CVec> = (0..nb).map(|_| random_theta(&mut r, 6)).collect();
    let weights = vec![1.0, 1.7];
    let a = gain_table(&w, &theta[0], &ch).unwrap();
    let t = CrossTermTable { varpi: a, vartheta: CMat::zeros(k, k) };
    let gamma = update_gamma(&t, 1.0).unwrap();
    let eta = update_eta(&t, &gamma, &weights, 1.0).unwrap();
    Instance { ch, w, theta, gamma, eta, weights }
}

/// Gain-table part contributed by every BS but `b`, each with its own phases.
fn others_of(inst: &Instance, b: usize) -> CMat {
    let k = inst.ch.num_ues;
    let mut o = CMat::zeros(k, k);
    for (bb, (w, t)) in inst.w.iter().zip(&inst.theta).enumerate() {
        if bb != b {
            o += inst.ch.composite_matrix(bb, t).adjoint() * w;
        }
    }
    o
}

#[test]
fn local_quadratic_tracks_the_lagrangian_up_to_a_constant() {
    for seed in 0..10 {
        let inst = instance(100 + seed);
        let b = 1;
        let others = others_of(&inst, b);
        let mut r = rng(200 + seed);
        let c = ConsensusTerm {
            rho: 0.8,
            lambda: CVec::from_fn(6, |_, _| cscg(&mut r, 1.0)),
            neighbor: random_theta(&mut r, 6),
        };
        let q = local_quadratic(b, &inst.ch, &inst.w[b], &inst.eta, &inst.gamma, &inst.weights, &others, Some(&c)).unwrap();
        let lagrangian = |t: &CVec| {
            let a = &others + inst.ch.composite_matrix(b, t).adjoint() * &inst.w[b];
            let diff = t - &c.neighbor;
            f2_from_table(&a, &inst.gamma, &inst.eta, 1.0, &inst.weights)
                + c.lambda.dotc(&diff).re
                + 0.5 * c.rho * diff.norm_squared()
        };
        let offsets: Vec<f64> = (0..5)
            .map(|_| {
                let t = random_theta(&mut r, 6);
                lagrangian(&t) - theta_objective(&q, &t)
            })
            .collect();
        for o in &offsets[1..] {
            assert!((o - offsets[0]).abs() < 1e-8, "{offsets:?}");
        }
    }
}

#[test]
fn common_rho_free_quadratic_uses_bits_scaling() {
    let inst = instance(7);
    let s = assemble_s(0, &inst.ch, &inst.w[0], &inst.eta, 0.0).unwrap();
    let k = inst.ch.num_ues;
    let mut expect = CMat::zeros(6, 6);
    for kk in 0..k {
        for j in 0..k {
            let x = inst.ch.cascade(0, kk) * inst.w[0].column(j);
            expect += &x * x.adjoint() * C64::from(inst.eta[kk].norm_sqr() / LN_2);
        }
    }
    assert!((s - expect).norm() < 1e-10);
}

#[test]
fn assembled_terms_at_zero_precoder() {
    let inst = instance(8);
    let w0 = CMat::zeros(2, 2);
    let s = assemble_s(0, &inst.ch, &w0, &inst.eta, 1.4).unwrap();
    assert!((s - CMat::identity(6, 6) * C64::from(0.7)).norm() < 1e-15);
    let nbr = inst.theta[1].clone();
    let c = ConsensusTerm { rho: 1.4, lambda: CVec::zeros(6), neighbor: nbr.clone() };
    let z = assemble_z(0, &inst.ch, &w0, &inst.eta, &inst.gamma, &inst.weights, &CMat::zeros(2, 2), Some(&c)).unwrap();
    assert!((z - nbr * C64::from(0.7)).norm() < 1e-15);
}

#[test]
fn s_is_hermitian_psd() {
    for seed in 0..10 {
        let inst = instance(300 + seed);
        let s = assemble_s(2, &inst.ch, &inst.w[2], &inst.eta, 0.3).unwrap();
        let q = ThetaQuadratic::new(s, CVec::zeros(6)).unwrap();
        assert!(q.is_psd());
    }
}

#[test]
fn conjugating_inputs_conjugates_z() {
    let inst = instance(9);
    let ch = &inst.ch;
    let conj_ch = ChannelSet::from_parts(
        (0..ch.num_bs).map(|b| (0..ch.num_ris).map(|r| ch.g(b, r).conjugate()).collect()).collect(),
        (0..ch.num_ris).map(|r| (0..ch.num_ues).map(|k| ch.v(r, k).conjugate()).collect()).collect(),
        (0..ch.num_bs).map(|b| (0..ch.num_ues).map(|k| ch.h(b, k).conjugate()).collect()).collect(),
    )
    .unwrap();
    let others = others_of(&inst, 0);
    let mut r = rng(10);
    let c = ConsensusTerm { rho: 0.5, lambda: CVec::from_fn(6, |_, _| cscg(&mut r, 1.0)), neighbor: inst.theta[1].clone() };
    let cc = ConsensusTerm { rho: 0.5, lambda: c.lambda.conjugate(), neighbor: c.neighbor.conjugate() };
    let z = assemble_z(0, ch, &inst.w[0], &inst.eta, &inst.gamma, &inst.weights, &others, Some(&c)).unwrap();
    let zc = assemble_z(
        0,
        &conj_ch,
        &inst.w[0].conjugate(),
        &inst.eta.conjugate(),
        &inst.gamma,
        &inst.weights,
        &others.conjugate(),
        Some(&cc),
    )
    .unwrap();
    assert!((z.conjugate() - zc).norm() < 1e-10 * z.norm());
}
