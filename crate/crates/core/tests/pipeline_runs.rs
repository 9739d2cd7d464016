mod common;

use cellfree_core::baselines::{centralized_fp, CentralizedSettings, PowerStep};
use cellfree_core::error::Error;
use cellfree_core::linalg::power;
use cellfree_core::pipeline::{
    batch_loss, initial_state, run_block, run_distributed, tune_rho, tuning_batch, ExecutionMode, RunContext,
};
use cellfree_core::scenario::SystemConfig;
use common::*;

#[test]
fn threaded_and_sequential_runs_are_identical() {
    for (nb, seed) in [(1, 1), (2, 2), (3, 3), (4, 4)] {
        let cfg = SystemConfig::new(nb, 2, 3, 4, 2).with_seed(seed);
        let ch = scenario_channels(&cfg);
        let a = run_distributed(&cfg, &ch, ExecutionMode::Sequential).unwrap();
        let b = run_distributed(&cfg, &ch, ExecutionMode::Threaded).unwrap();
        let c = run_distributed(&cfg, &ch, ExecutionMode::Threaded).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert_eq!(a.wsr_trace.len(), cfg.blocks);
        assert_eq!(a.consensus_trace.len(), cfg.blocks);
    }
}

#[test]
fn every_block_is_feasible() {
    let cfg = SystemConfig::new(3, 2, 3, 4, 2).with_seed(6).with_blocks(6);
    let ch = scenario_channels(&cfg);
    let ctx = RunContext { config: &cfg, channels: &ch };
    let mut states: Vec<_> = (0..3).map(|b| initial_state(ctx, b)).collect();
    let mut inbox = [None, None, None];
    for l in 1..=cfg.blocks {
        let mut out = vec![];
        for (b, st) in states.iter_mut().enumerate() {
            out.push(run_block(ctx, st, l, inbox[b].take()).unwrap());
            assert!(rel_close(power(&st.w), cfg.p_max[b], 1e-9));
            assert!(st.theta.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
        for (b, m) in out.into_iter().enumerate() {
            inbox[(b + 2) % 3] = m;
        }
    }
}

#[test]
fn missing_inbox_is_reported() {
    let cfg = SystemConfig::new(2, 1, 2, 4, 2);
    let ch = scenario_channels(&cfg);
    let ctx = RunContext { config: &cfg, channels: &ch };
    let mut st = initial_state(ctx, 0);
    run_block(ctx, &mut st, 1, None).unwrap();
    assert_eq!(run_block(ctx, &mut st, 2, None), Err(Error::MissingInbox { bs: 0, block: 2 }));
}

#[test]
fn single_bs_run_is_centralized_fp_with_scaled_power() {
    for seed in 0..5 {
        let cfg = SystemConfig::new(1, 2, 3, 4, 2).with_seed(seed).with_blocks(8);
        let ch = scenario_channels(&cfg);
        let run = run_distributed(&cfg, &ch, ExecutionMode::Sequential).unwrap();
        let settings = CentralizedSettings { max_iters: 8, tol: 0.0, power_step: PowerStep::Normalize };
        let cen = centralized_fp(&ch, &cfg, settings).unwrap();
        assert_eq!(cen.trace.len(), 8);
        for (a, b) in run.wsr_trace.iter().zip(&cen.trace) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn single_bs_two_block_run_ascends() {
    for seed in 0..20 {
        let cfg = SystemConfig::new(1, 2, 4, 8, 2).with_seed(seed).with_blocks(2);
        let ch = scenario_channels(&cfg);
        let run = run_distributed(&cfg, &ch, ExecutionMode::Sequential).unwrap();
        assert!(run.wsr_trace[1] >= run.wsr_trace[0] - 1e-9, "{:?}", run.wsr_trace);
    }
}

#[test]
fn rho_tuning_never_loses_to_its_start() {
    let cfg = SystemConfig::new(2, 1, 2, 4, 2).with_seed(3);
    let single = tune_rho(&cfg, &[1.0], 2).unwrap();
    assert_eq!(single.rho, vec![1.0, 1.0]);
    assert_eq!(single.loss, single.initial_loss);
    let wide = tune_rho(&cfg, &[0.01, 0.1, 1.0, 10.0], 2).unwrap();
    assert!(wide.loss <= single.loss);
    assert_eq!(wide.initial_loss, single.loss);
    let batch = tuning_batch(&cfg, 2).unwrap();
    assert_eq!(batch_loss(&batch, &wide.rho).unwrap(), wide.loss);
    assert_eq!(tune_rho(&cfg, &[0.01, 0.1, 1.0, 10.0], 2).unwrap(), wide);
    assert!(tune_rho(&cfg, &[], 2).is_err());
    assert!(tune_rho(&cfg, &[0.0], 2).is_err());
}
