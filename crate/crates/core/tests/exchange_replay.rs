mod common;

use cellfree_core::channel::ChannelSet;
use cellfree_core::exchange::{
    contribution, count_overhead, i1_update, i2_update, i3_update, init_cross_terms, outgoing_table, ring_route,
    used_table, HistoryBuffer, Snapshot,
};
use cellfree_core::linalg::{CMat, CVec};
use cellfree_core::objective::CrossTermTable;
use cellfree_core::pipeline::{initial_state, run_block, run_distributed, ExecutionMode, RunContext};
use cellfree_core::scenario::SystemConfig;
use common::*;

const TOL: f64 = 1e-10;

fn sum_of(tables: impl Iterator<Item = CrossTermTable>, k: usize) -> CrossTermTable {
    tables.fold(CrossTermTable::zeros(k), |acc, t| acc.add(&t))
}

/// `c[l][b]` for blocks `1..=blocks`; index 0 is unused.
fn random_contributions(ch: &ChannelSet, blocks: usize, seed: u64) -> Vec<Vec<CrossTermTable>> {
    let mut r = rng(seed);
    let mut c = vec![vec![]];
    for _ in 1..=blocks {
        c.push(
            (0..ch.num_bs)
                .map(|b| {
                    let w = random_w(&mut r, 1, ch.bs_antennas, ch.num_ues).remove(0);
                    contribution(b, ch, &w, &random_theta(&mut r, ch.phase_len()))
                })
                .collect(),
        );
    }
    c
}

/// Table `b` should send at block `l`: the `B` latest contributions along
/// the ring, BS `b + d` contributing its block `l - d` value.
fn expected_hat(c: &[Vec<CrossTermTable>], b: usize, l: usize, nb: usize, k: usize) -> CrossTermTable {
    sum_of((0..nb).filter(|d| l > *d).map(|d| c[l - d][(b + d) % nb].clone()), k)
}

/// Table `b` uses in block `l + 1`: its own block-`l` contribution plus BS
/// `b + d`'s block `l + 1 - d` value. From `l + 1 = B` on every BS appears.
fn expected_used(c: &[Vec<CrossTermTable>], b: usize, l: usize, nb: usize, k: usize) -> CrossTermTable {
    let others: Vec<usize> = (1..nb).filter(|d| l + 1 > *d).collect();
    if l + 1 >= nb {
        assert_eq!(others.len(), nb - 1);
    }
    let own = c[l][b].clone();
    own.add(&sum_of(others.into_iter().map(|d| c[l + 1 - d][(b + d) % nb].clone()), k))
}

#[test]
fn layers_match_the_global_sum_oracle() {
    for nb in 2..=4 {
        let blocks = nb + 2;
        let k = 3;
        let ch = gaussian_channels(&mut rng(nb as u64), nb, 2, k, 2, 2);
        let c = random_contributions(&ch, blocks, 40 + nb as u64);
        let mut hist: Vec<HistoryBuffer> = (0..nb).map(|_| HistoryBuffer::new(nb)).collect();
        let mut hat_prev = vec![CrossTermTable::zeros(k); nb];
        for l in 1..blocks {
            let hat: Vec<CrossTermTable> = (0..nb)
                .map(|b| outgoing_table(l, nb, &hat_prev[(b + 1) % nb], &hist[b], &c[l][b]).unwrap())
                .collect();
            for b in 0..nb {
                let from = ring_route(b, nb).1;
                let (prev, recv, fresh) = (&hat_prev[from], &hat[from], &c[l][b]);
                let (out, used) = if l < nb {
                    i1_update(l, nb, prev, recv, fresh).unwrap()
                } else if l == nb {
                    i2_update(l, nb, prev, recv, &hist[b], fresh).unwrap()
                } else {
                    i3_update(l, nb, prev, recv, &hist[b], fresh).unwrap()
                };
                assert!(out.max_abs_diff(&hat[b]) < TOL);
                assert!(out.max_abs_diff(&expected_hat(&c, b, l, nb, k)) < TOL, "B={nb} l={l} b={b}");
                let mut h = hist[b].clone();
                h.push(l, snapshot(fresh)).unwrap();
                assert!(used.max_abs_diff(&used_table(l, nb, recv, &h, fresh).unwrap()) < TOL);
                assert!(used.max_abs_diff(&expected_used(&c, b, l, nb, k)) < TOL, "B={nb} l={l} b={b}");
            }
            for b in 0..nb {
                hist[b].push(l, snapshot(&c[l][b])).unwrap();
            }
            hat_prev = hat;
        }
    }
}

fn snapshot(t: &CrossTermTable) -> Snapshot {
    Snapshot { w: CMat::zeros(1, 1), theta: CVec::zeros(1), contribution: t.clone() }
}

#[test]
fn pipeline_used_tables_follow_ring_latency() {
    for nb in 2..=4 {
        let cfg = SystemConfig::new(nb, 1, 2, 4, 2).with_seed(nb as u64);
        let ch = scenario_channels(&cfg);
        let ctx = RunContext { config: &cfg, channels: &ch };
        let k = cfg.num_ues;
        let mut states: Vec<_> = (0..nb).map(|b| initial_state(ctx, b)).collect();
        let mut c: Vec<Vec<CrossTermTable>> = vec![states.iter().map(|s| contribution(s.b, &ch, &s.w, &s.theta)).collect()];
        let mut inbox = vec![None; nb];
        for l in 1..=cfg.blocks {
            let mut out = vec![];
            for b in 0..nb {
                out.push(run_block(ctx, &mut states[b], l, inbox[b].take()).unwrap());
            }
            if l >= 2 {
                for b in 0..nb {
                    let expect = expected_used(&c, b, l - 1, nb, k);
                    assert!(states[b].used.max_abs_diff(&expect) < 1e-10 * expect.varpi.norm().max(1e-30), "B={nb} l={l}");
                }
            }
            c.push(states.iter().map(|s| contribution(s.b, &ch, &s.w, &s.theta)).collect());
            for (b, m) in out.into_iter().enumerate() {
                assert_eq!(m.is_some(), l < cfg.blocks);
                if let Some(m) = m {
                    inbox[ring_route(b, nb).0] = Some(m);
                }
            }
        }
    }
}

#[test]
fn ini_uses_local_tables_only() {
    let cfg = SystemConfig::new(3, 1, 2, 4, 2).with_seed(5);
    let ch = scenario_channels(&cfg);
    let ctx = RunContext { config: &cfg, channels: &ch };
    for b in 0..3 {
        let mut st = initial_state(ctx, b);
        let (w0, t0) = (st.w.clone(), st.theta.clone());
        run_block(ctx, &mut st, 1, None).unwrap();
        let (used, hat) = init_cross_terms(b, &ch, &w0, &t0);
        assert!(hat.max_abs_diff(&CrossTermTable::zeros(2)) == 0.0);
        for kk in 0..2 {
            for j in 0..2 {
                let direct = ch.h(b, kk).dotc(&w0.column(j));
                let refl = t0.dotc(&(ch.cascade(b, kk) * w0.column(j)));
                assert!((used.varpi[(kk, j)] - direct).norm() < 1e-20);
                assert!((used.vartheta[(kk, j)] - refl).norm() < 1e-20);
            }
        }
    }
}

#[test]
fn run_tally_equals_the_overhead_formula() {
    for nb in 2..=4 {
        let cfg = SystemConfig::new(nb, 2, 3, 4, 2).with_seed(9);
        let ch = scenario_channels(&cfg);
        let res = run_distributed(&cfg, &ch, ExecutionMode::Sequential).unwrap();
        assert_eq!(res.message_scalars, count_overhead(nb, cfg.blocks, 3, 2, 4));
        assert_eq!(res.messages.len(), nb * (cfg.blocks - 1));
    }
    assert_eq!(count_overhead(4, 6, 4, 2, 50), 2640);
    assert_eq!(count_overhead(4, 1, 4, 2, 50), 0);
}

#[test]
fn single_bs_sends_nothing() {
    let cfg = SystemConfig::new(1, 1, 2, 4, 2).with_seed(3).with_blocks(4);
    let ch = scenario_channels(&cfg);
    let res = run_distributed(&cfg, &ch, ExecutionMode::Threaded).unwrap();
    assert!(res.messages.is_empty());
    assert_eq!(res.message_scalars, 0);
}
