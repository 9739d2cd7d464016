#![allow(dead_code)]

use cellfree_core::channel::{draw_channels, ChannelSet};
use cellfree_core::linalg::{cscg, random_phases, CMat, CVec};
use cellfree_core::rng::{stream, Stream};
use cellfree_core::scenario::{build_scenario, SystemConfig};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream(seed, Stream::Test, 0, 0, 0)
}

/// Unit-variance i.i.d. channels.
pub fn gaussian_channels(r: &mut ChaCha8Rng, nb: usize, nr: usize, k: usize, n: usize, nt: usize) -> ChannelSet {
    let g = (0..nb).map(|_| (0..nr).map(|_| CMat::from_fn(n, nt, |_, _| cscg(r, 1.0))).collect()).collect();
    let v = (0..nr).map(|_| (0..k).map(|_| CVec::from_fn(n, |_, _| cscg(r, 1.0))).collect()).collect();
    let h = (0..nb).map(|_| (0..k).map(|_| CVec::from_fn(nt, |_, _| cscg(r, 1.0))).collect()).collect();
    ChannelSet::from_parts(g, v, h).unwrap()
}

pub fn scenario_channels(cfg: &SystemConfig) -> ChannelSet {
    let sc = build_scenario(cfg).unwrap();
    draw_channels(cfg, &sc).unwrap()
}

pub fn random_w(r: &mut ChaCha8Rng, nb: usize, nt: usize, k: usize) -> Vec<CMat> {
    (0..nb).map(|_| CMat::from_fn(nt, k, |_, _| cscg(r, 1.0))).collect()
}

pub fn random_theta(r: &mut ChaCha8Rng, len: usize) -> CVec {
    random_phases(r, len)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
