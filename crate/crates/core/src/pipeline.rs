//! Block-by-block orchestration of the distributed run.
//!
//! Each block of BS `b` runs, in order: the A layer (`gamma`, `eta`), the W
//! layer (precoder update and power normalisation), the phase step, the
//! multiplier update and the exchange layer. Messages produced in block `l`
//! are delivered to the receiver's inbox for block `l + 1`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::{Duration, Instant};

use rand::RngCore;

use crate::channel::{draw_channels, ChannelSet};
use crate::exchange::{
    contribution, init_cross_terms, outgoing_table, ring_route, used_table, ExchangeMessage, HistoryBuffer, Snapshot,
    TraceEntry,
};
use crate::fp::{mrt_precoder, normalize_power, update_eta, update_gamma, PrecodingProblem};
use crate::linalg::{phase_of, random_phases, CMat, CVec, C64};
use crate::objective::{consensus_error, gain_table, wsr_from_table, AuxVars, CrossTermTable};
use crate::rng::{stream, Stream};
use crate::scenario::{build_scenario, SystemConfig};
use crate::theta::{local_quadratic, solve_theta_bcd, ConsensusTerm};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Ini,
    Mid1,
    Mid2,
    Mid3,
    Out,
}

/// Kind of block `l` (1-based) in a run of `blocks` blocks on `num_bs` BSs.
pub fn block_kind(l: usize, num_bs: usize, blocks: usize) -> BlockKind {
    if l == blocks {
        BlockKind::Out
    } else if l == 1 {
        BlockKind::Ini
    } else if l < num_bs {
        BlockKind::Mid1
    } else if l == num_bs {
        BlockKind::Mid2
    } else {
        BlockKind::Mid3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    #[default]
    Sequential,
    Threaded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsState {
    pub b: usize,
    pub w: CMat,
    pub theta: CVec,
    pub lambda: CVec,
    pub aux: AuxVars,
    /// Tables used by the next A layer.
    pub used: CrossTermTable,
    /// Hatted tables last received from the successor.
    pub received: CrossTermTable,
    /// Phases last received from the successor.
    pub neighbor_theta: Option<CVec>,
    pub history: HistoryBuffer,
}

/// Shared read-only inputs of a run.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub config: &'a SystemConfig,
    pub channels: &'a ChannelSet,
}

impl RunContext<'_> {
    fn check(&self) -> Result<()> {
        let (cfg, ch) = (self.config, self.channels);
        cfg.validate()?;
        let dims = (ch.num_bs, ch.num_ris, ch.num_ues, ch.ris_elements, ch.bs_antennas);
        if dims != (cfg.num_bs, cfg.num_ris, cfg.num_ues, cfg.ris_elements, cfg.bs_antennas) {
            return Err(Error::DimensionMismatch("channels do not match the configuration".into()));
        }
        Ok(())
    }
}

/// Random phases and direct-channel MRT, power-normalised.
pub fn initial_state(ctx: RunContext<'_>, b: usize) -> BsState {
    let (cfg, ch) = (ctx.config, ctx.channels);
    let theta = random_phases(&mut stream(cfg.seed, Stream::ThetaInit, b, 0, 0), ch.phase_len());
    let direct = CMat::from_fn(ch.bs_antennas, ch.num_ues, |i, k| ch.h(b, k)[i]);
    let w = mrt_precoder(&direct, cfg.p_max[b]);
    BsState {
        b,
        w,
        lambda: CVec::zeros(ch.phase_len()),
        aux: AuxVars {
            gamma: vec![0.0; ch.num_ues],
            eta: CVec::zeros(ch.num_ues),
        },
        used: CrossTermTable::zeros(ch.num_ues),
        received: CrossTermTable::zeros(ch.num_ues),
        neighbor_theta: None,
        history: HistoryBuffer::new(cfg.num_bs),
        theta,
    }
}

fn absorb(ctx: RunContext<'_>, st: &mut BsState, l: usize, msg: ExchangeMessage) -> Result<()> {
    let fresh = st.history.get(l)?.contribution.clone();
    st.used = used_table(l, ctx.config.num_bs, &msg.tables, &st.history, &fresh)?;
    st.received = msg.tables;
    st.neighbor_theta = Some(msg.theta);
    Ok(())
}

/// Runs block `l` of BS `st.b`. `inbox` is the message received after block
/// `l - 1` and is required whenever `B > 1` and `l > 1`. Returns the message
/// to send, if any.
pub fn run_block(
    ctx: RunContext<'_>,
    st: &mut BsState,
    l: usize,
    inbox: Option<ExchangeMessage>,
) -> Result<Option<ExchangeMessage>> {
    let (cfg, ch) = (ctx.config, ctx.channels);
    let b = st.b;
    let nb = cfg.num_bs;
    let kind = block_kind(l, nb, cfg.blocks);

    if l == 1 {
        let (used, hat) = init_cross_terms(b, ch, &st.w, &st.theta);
        st.used = used;
        st.received = hat;
    } else if nb > 1 {
        let msg = inbox.ok_or(Error::MissingInbox { bs: b, block: l })?;
        absorb(ctx, st, l - 1, msg)?;
    }

    let noise = cfg.noise_power;
    let gamma = update_gamma(&st.used, noise)?;
    let eta = update_eta(&st.used, &gamma, &cfg.weights, noise)?;

    let problem = PrecodingProblem::new(b, ch, &st.theta, &gamma, &eta, &st.used, &st.w, &cfg.weights)?;
    let (mut w_new, ok) = normalize_power(&problem.solve(b)?, cfg.p_max[b]);
    let damping = cfg.solver.w_damping;
    if ok && l > 1 && damping < 1.0 {
        let mixed = &w_new * C64::from(damping) + &st.w * C64::from(1.0 - damping);
        w_new = normalize_power(&mixed, cfg.p_max[b]).0;
    }
    let w_new = if ok { w_new } else { st.w.clone() };

    let consensus = st.neighbor_theta.as_ref().map(|nbr| ConsensusTerm {
        rho: cfg.rho[b],
        lambda: st.lambda.clone(),
        neighbor: nbr.clone(),
    });
    let q = local_quadratic(b, ch, &w_new, &eta, &gamma, &cfg.weights, &problem.others, consensus.as_ref())?;
    let theta_new = solve_theta_bcd(&q, &st.theta, cfg.solver.bcd_max_sweeps, cfg.solver.bcd_tol)?.theta;

    st.w = w_new;
    st.theta = theta_new;
    st.aux = AuxVars { gamma, eta };

    if kind == BlockKind::Out {
        return Ok(None);
    }
    if let Some(c) = &consensus {
        st.lambda += (&st.theta - &c.neighbor) * C64::from(c.rho);
    }

    let fresh = contribution(b, ch, &st.w, &st.theta);
    if nb == 1 {
        st.used = fresh;
        return Ok(None);
    }
    let tables = outgoing_table(l, nb, &st.received, &st.history, &fresh)?;
    st.history.push(
        l,
        Snapshot {
            w: st.w.clone(),
            theta: st.theta.clone(),
            contribution: fresh,
        },
    )?;
    Ok(Some(ExchangeMessage {
        sender: b,
        block: l,
        tables,
        theta: st.theta.clone(),
    }))
}

/// Element-wise phase average; entries whose phasors cancel take BS 0's value.
pub fn fuse_thetas(thetas: &[CVec]) -> CVec {
    let n = thetas[0].len();
    CVec::from_fn(n, |i, _| {
        let sum: C64 = thetas.iter().map(|t| t[i]).sum();
        phase_of(sum).unwrap_or(thetas[0][i])
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub wsr_trace: Vec<f64>,
    pub consensus_trace: Vec<f64>,
    pub w: Vec<CMat>,
    pub thetas: Vec<CVec>,
    pub theta_fused: CVec,
    pub messages: Vec<TraceEntry>,
    pub message_scalars: u64,
    pub elapsed: Duration,
}

impl RunResult {
    pub fn final_wsr(&self) -> f64 {
        *self.wsr_trace.last().unwrap_or(&0.0)
    }

    pub fn final_consensus(&self) -> f64 {
        *self.consensus_trace.last().unwrap_or(&0.0)
    }
}

/// Equality ignores wall-clock time.
impl PartialEq for RunResult {
    fn eq(&self, o: &Self) -> bool {
        self.wsr_trace == o.wsr_trace
            && self.consensus_trace == o.consensus_trace
            && self.w == o.w
            && self.thetas == o.thetas
            && self.theta_fused == o.theta_fused
            && self.messages == o.messages
            && self.message_scalars == o.message_scalars
    }
}

type BlockRecord = (CMat, CVec);

struct WorkerOutput {
    records: Vec<BlockRecord>,
    sent: Vec<TraceEntry>,
}

fn trace_entry(msg: &ExchangeMessage, to: usize) -> TraceEntry {
    TraceEntry {
        block: msg.block,
        sender: msg.sender,
        receiver: to,
        scalar_count: msg.scalar_count(),
    }
}

fn run_sequential(ctx: RunContext<'_>) -> Result<Vec<WorkerOutput>> {
    let nb = ctx.config.num_bs;
    let mut states: Vec<BsState> = (0..nb).map(|b| initial_state(ctx, b)).collect();
    let mut outputs: Vec<WorkerOutput> = (0..nb).map(|_| WorkerOutput { records: vec![], sent: vec![] }).collect();
    let mut inboxes: Vec<Option<ExchangeMessage>> = vec![None; nb];
    for l in 1..=ctx.config.blocks {
        let mut outgoing = Vec::with_capacity(nb);
        for (b, st) in states.iter_mut().enumerate() {
            let msg = run_block(ctx, st, l, inboxes[b].take())
                .map_err(|e| Error::Worker { bs: b, block: l, source: Box::new(e) })?;
            outputs[b].records.push((st.w.clone(), st.theta.clone()));
            outgoing.push(msg);
        }
        for (b, msg) in outgoing.into_iter().enumerate() {
            if let Some(msg) = msg {
                let to = ring_route(b, nb).0;
                outputs[b].sent.push(trace_entry(&msg, to));
                inboxes[to] = Some(msg);
            }
        }
    }
    Ok(outputs)
}

fn run_threaded(ctx: RunContext<'_>) -> Result<Vec<WorkerOutput>> {
    let nb = ctx.config.num_bs;
    let blocks = ctx.config.blocks;
    let barrier = Barrier::new(nb);
    let failed = AtomicBool::new(false);
    let mailboxes: Vec<Mutex<[Option<ExchangeMessage>; 2]>> = (0..nb).map(|_| Mutex::new([None, None])).collect();

    let results: Vec<std::result::Result<WorkerOutput, Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..nb)
            .map(|b| {
                let (barrier, failed, mailboxes) = (&barrier, &failed, &mailboxes);
                scope.spawn(move || {
                    let mut st = initial_state(ctx, b);
                    let mut out = WorkerOutput { records: vec![], sent: vec![] };
                    let send_to = ring_route(b, nb).0;
                    for l in 1..=blocks {
                        let inbox = mailboxes[b].lock().expect("mailbox poisoned")[l % 2].take();
                        let step = run_block(ctx, &mut st, l, inbox);
                        let exchanges = nb > 1 && l < blocks;
                        match step {
                            Ok(msg) => {
                                out.records.push((st.w.clone(), st.theta.clone()));
                                if let Some(msg) = msg {
                                    out.sent.push(trace_entry(&msg, send_to));
                                    mailboxes[send_to].lock().expect("mailbox poisoned")[(l + 1) % 2] = Some(msg);
                                }
                            }
                            Err(e) => {
                                failed.store(true, Ordering::SeqCst);
                                if exchanges {
                                    barrier.wait();
                                }
                                return Err(Error::Worker { bs: b, block: l, source: Box::new(e) });
                            }
                        }
                        if exchanges {
                            barrier.wait();
                            if failed.load(Ordering::SeqCst) {
                                return Err(Error::Precondition("aborted after a peer failure".into()));
                            }
                        }
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut outputs = Vec::with_capacity(nb);
    let mut first_err = None;
    for r in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e @ Error::Worker { .. }) if !matches!(first_err, Some(Error::Worker { .. })) => first_err = Some(e),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(outputs),
    }
}

/// Runs all `L` blocks on every BS.
pub fn run_distributed(config: &SystemConfig, channels: &ChannelSet, mode: ExecutionMode) -> Result<RunResult> {
    let ctx = RunContext { config, channels };
    ctx.check()?;
    let start = Instant::now();
    let outputs = match mode {
        ExecutionMode::Sequential => run_sequential(ctx)?,
        ExecutionMode::Threaded => run_threaded(ctx)?,
    };
    let elapsed = start.elapsed();

    let mut wsr_trace = Vec::with_capacity(config.blocks);
    let mut consensus_trace = Vec::with_capacity(config.blocks);
    for l in 0..config.blocks {
        let w: Vec<CMat> = outputs.iter().map(|o| o.records[l].0.clone()).collect();
        let thetas: Vec<CVec> = outputs.iter().map(|o| o.records[l].1.clone()).collect();
        let fused = fuse_thetas(&thetas);
        let a = gain_table(&w, &fused, channels)?;
        wsr_trace.push(wsr_from_table(&a, config.noise_power, &config.weights));
        consensus_trace.push(consensus_error(&thetas));
    }
    let w: Vec<CMat> = outputs.iter().map(|o| o.records[config.blocks - 1].0.clone()).collect();
    let thetas: Vec<CVec> = outputs.iter().map(|o| o.records[config.blocks - 1].1.clone()).collect();
    let mut messages: Vec<TraceEntry> = outputs.into_iter().flat_map(|o| o.sent).collect();
    messages.sort();
    let message_scalars = messages.iter().map(|m| m.scalar_count as u64).sum();
    Ok(RunResult {
        wsr_trace,
        consensus_trace,
        w,
        theta_fused: fuse_thetas(&thetas),
        thetas,
        messages,
        message_scalars,
        elapsed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoTuning {
    pub rho: Vec<f64>,
    pub loss: f64,
    /// Loss at the starting point of the search.
    pub initial_loss: f64,
}

/// Held-out channel draws for tuning, seeded from the config seed.
pub fn tuning_batch(config: &SystemConfig, size: usize) -> Result<Vec<(SystemConfig, ChannelSet)>> {
    (0..size)
        .map(|q| {
            let seed = stream(config.seed, Stream::Tuning, q, 0, 0).next_u64();
            let cfg = config.clone().with_seed(seed);
            let sc = build_scenario(&cfg)?;
            let ch = draw_channels(&cfg, &sc)?;
            Ok((cfg, ch))
        })
        .collect()
}

/// Mean of `consensus error - WSR` at the final block over a batch.
pub fn batch_loss(batch: &[(SystemConfig, ChannelSet)], rho: &[f64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty tuning batch".into()));
    }
    let mut total = 0.0;
    for (cfg, ch) in batch {
        let mut cfg = cfg.clone();
        cfg.rho = rho.to_vec();
        let r = run_distributed(&cfg, ch, ExecutionMode::Sequential)?;
        total += crate::objective::loss(&r.thetas, r.final_wsr());
    }
    Ok(total / batch.len() as f64)
}

/// Coordinate descent over `grid` for each BS's `rho`. Each BS starts from
/// its configured value when that is on the grid, otherwise from the first
/// grid value; a candidate replaces the current value only if it strictly
/// lowers the batch loss.
pub fn tune_rho(config: &SystemConfig, grid: &[f64], batch_size: usize) -> Result<RhoTuning> {
    if grid.is_empty() || grid.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::InvalidConfig("rho grid must be non-empty, finite and positive".into()));
    }
    let batch = tuning_batch(config, batch_size)?;
    let mut rho: Vec<f64> = config
        .rho
        .iter()
        .map(|r| if grid.contains(r) { *r } else { grid[0] })
        .collect();
    let initial_loss = batch_loss(&batch, &rho)?;
    let mut best = initial_loss;
    for _ in 0..2 {
        let mut changed = false;
        for b in 0..rho.len() {
            for &cand in grid {
                if cand == rho[b] {
                    continue;
                }
                let mut trial = rho.clone();
                trial[b] = cand;
                let value = batch_loss(&batch, &trial)?;
                if value < best {
                    best = value;
                    rho = trial;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(RhoTuning { rho, loss: best, initial_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use BlockKind::*;

    #[test]
    fn block_kinds() {
        let kinds = |b, l| (1..=l).map(|i| block_kind(i, b, l)).collect::<Vec<_>>();
        assert_eq!(kinds(4, 6), vec![Ini, Mid1, Mid1, Mid2, Mid3, Out]);
        assert_eq!(kinds(2, 4), vec![Ini, Mid2, Mid3, Out]);
        assert_eq!(kinds(3, 3), vec![Ini, Mid1, Out]);
        assert_eq!(kinds(1, 2), vec![Ini, Out]);
    }

    #[test]
    fn fusion() {
        let a = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let b = CVec::from_vec(vec![C64::new(0.0, 1.0), C64::new(0.0, -1.0)]);
        let f = fuse_thetas(&[a.clone(), b]);
        assert!((f[0] - C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)).norm() < 1e-15);
        assert_eq!(f[1], a[1]);
    }
}
