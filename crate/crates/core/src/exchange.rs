//! Monodirectional ring exchange of aggregated cross terms.
//!
//! BS `b` receives from `b + 1` and sends to `b - 1` (indices modulo `B`,
//! 0-based here). Writing `c_b^l` for the contribution of BS `b` formed with
//! its block-`l` variables, the hatted table a BS sends at block `l` is
//!
//! `hat_b^l = hat_{b+1}^{l-1} - c_b^{l-B} + c_b^l`
//!
//! and the table it uses in block `l + 1` is
//!
//! `used_b^{l+1} = hat_{b+1}^l - c_b^{l-B+1} + c_b^l`,
//!
//! where a subtracted term is dropped when its block index is below 1. The
//! hatted table therefore always holds the `B` most recent contributions
//! along the ring, each exactly once.

use std::collections::VecDeque;
use std::io::Write;

use crate::channel::ChannelSet;
use crate::fp::bs_contribution;
use crate::linalg::{CMat, CVec};
use crate::objective::CrossTermTable;
use crate::{Error, Result};

/// `(send_to, recv_from)` for BS `b` on a ring of `num_bs`.
pub fn ring_route(b: usize, num_bs: usize) -> (usize, usize) {
    ((b + num_bs - 1) % num_bs, (b + 1) % num_bs)
}

/// Contribution of BS `b` to the global tables.
pub fn contribution(b: usize, ch: &ChannelSet, w_b: &CMat, theta_b: &CVec) -> CrossTermTable {
    bs_contribution(b, ch, w_b, theta_b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeMessage {
    pub sender: usize,
    pub block: usize,
    pub tables: CrossTermTable,
    pub theta: CVec,
}

impl ExchangeMessage {
    /// Complex scalars on the wire: `2 K^2 + N R`.
    pub fn scalar_count(&self) -> usize {
        let k = self.tables.num_ues();
        2 * k * k + self.theta.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub w: CMat,
    pub theta: CVec,
    pub contribution: CrossTermTable,
}

/// The last `depth` snapshots of one BS, keyed by block number.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    depth: usize,
    entries: VecDeque<(usize, Snapshot)>,
}

impl HistoryBuffer {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            entries: VecDeque::with_capacity(depth),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends the snapshot for `block`, evicting the oldest beyond `depth`.
    pub fn push(&mut self, block: usize, snapshot: Snapshot) -> Result<()> {
        if let Some((last, _)) = self.entries.back() {
            if block != last + 1 {
                return Err(Error::Precondition(format!("history expects block {}, got {block}", last + 1)));
            }
        }
        self.entries.push_back((block, snapshot));
        while self.entries.len() > self.depth {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn get(&self, block: usize) -> Result<&Snapshot> {
        self.entries
            .iter()
            .find(|(l, _)| *l == block)
            .map(|(_, s)| s)
            .ok_or(Error::HistoryMissing {
                block,
                oldest: self.entries.front().map_or(0, |e| e.0),
                newest: self.entries.back().map_or(0, |e| e.0),
            })
    }
}

/// Ini layer: nothing has been sent yet and the used tables hold only the
/// local contribution.
pub fn init_cross_terms(b: usize, ch: &ChannelSet, w0: &CMat, theta0: &CVec) -> (CrossTermTable, CrossTermTable) {
    (contribution(b, ch, w0, theta0), CrossTermTable::zeros(ch.num_ues))
}

fn replace(received: &CrossTermTable, history: &HistoryBuffer, stale: usize, fresh: &CrossTermTable) -> Result<CrossTermTable> {
    if stale == 0 {
        return Ok(received.add(fresh));
    }
    Ok(received.sub(&history.get(stale)?.contribution).add(fresh))
}

fn stale_block(l: usize, offset: usize, num_bs: usize) -> usize {
    (l + offset).saturating_sub(num_bs)
}

/// Hatted table to send at block `l`, from the table received after block
/// `l - 1`. `history` must hold blocks `l - B ..= l - 1`.
pub fn outgoing_table(
    l: usize,
    num_bs: usize,
    prev_received: &CrossTermTable,
    history: &HistoryBuffer,
    fresh: &CrossTermTable,
) -> Result<CrossTermTable> {
    replace(prev_received, history, stale_block(l, 0, num_bs), fresh)
}

/// Table used in block `l + 1`, from the table received after block `l`.
/// `history` must hold blocks `l - B + 1 ..= l`.
pub fn used_table(
    l: usize,
    num_bs: usize,
    received: &CrossTermTable,
    history: &HistoryBuffer,
    fresh: &CrossTermTable,
) -> Result<CrossTermTable> {
    replace(received, history, stale_block(l, 1, num_bs), fresh)
}

fn check_range(l: usize, lo: usize, hi: usize, layer: &str) -> Result<()> {
    if l < lo || l > hi {
        return Err(Error::Precondition(format!("{layer} layer applies to blocks {lo}..={hi}, got {l}")));
    }
    Ok(())
}

/// Accumulating layer for `1 <= l <= B - 1`: nothing is obsolete yet.
pub fn i1_update(
    l: usize,
    num_bs: usize,
    prev_received: &CrossTermTable,
    received: &CrossTermTable,
    fresh: &CrossTermTable,
) -> Result<(CrossTermTable, CrossTermTable)> {
    check_range(l, 1, num_bs.saturating_sub(1), "I1")?;
    Ok((prev_received.add(fresh), received.add(fresh)))
}

/// Layer at `l = B`: the used table drops the block-1 contribution that
/// has travelled the full ring. `history` holds blocks before `l`.
pub fn i2_update(
    l: usize,
    num_bs: usize,
    prev_received: &CrossTermTable,
    received: &CrossTermTable,
    history: &HistoryBuffer,
    fresh: &CrossTermTable,
) -> Result<(CrossTermTable, CrossTermTable)> {
    check_range(l, num_bs, num_bs, "I2")?;
    let used = received.sub(&history.get(1)?.contribution).add(fresh);
    Ok((prev_received.add(fresh), used))
}

/// Layer for `B + 1 <= l`: both tables swap a stale contribution for the
/// fresh one. `history` holds blocks `l - B ..= l - 1`.
pub fn i3_update(
    l: usize,
    num_bs: usize,
    prev_received: &CrossTermTable,
    received: &CrossTermTable,
    history: &HistoryBuffer,
    fresh: &CrossTermTable,
) -> Result<(CrossTermTable, CrossTermTable)> {
    check_range(l, num_bs + 1, usize::MAX, "I3")?;
    let outgoing = prev_received.sub(&history.get(l - num_bs)?.contribution).add(fresh);
    let used = received.sub(&history.get(l - num_bs + 1)?.contribution).add(fresh);
    Ok((outgoing, used))
}

/// Total complex scalars over a run: `B (L - 1) (2 K^2 + R N)`.
pub fn count_overhead(num_bs: usize, blocks: usize, k: usize, num_ris: usize, n: usize) -> u64 {
    (num_bs * blocks.saturating_sub(1) * (2 * k * k + num_ris * n)) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TraceEntry {
    pub block: usize,
    pub sender: usize,
    pub receiver: usize,
    pub scalar_count: usize,
}

/// Writes `block,sender,receiver,scalar_count` lines (1-based block).
pub fn write_message_trace<W: Write>(entries: &[TraceEntry], out: W) -> Result<()> {
    let err = |e: csv::Error| Error::Precondition(format!("message trace: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["block", "sender", "receiver", "scalar_count"]).map_err(err)?;
    for e in entries {
        w.serialize((e.block, e.sender, e.receiver, e.scalar_count)).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Precondition(format!("message trace: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cscg, C64};
    use crate::rng::{stream, Stream};

    #[test]
    fn routes() {
        assert_eq!(ring_route(1, 4), (0, 2));
        assert_eq!(ring_route(0, 4), (3, 1));
        assert_eq!(ring_route(0, 1), (0, 0));
        for nb in 1..7 {
            for b in 0..nb {
                let mut at = b;
                for _ in 0..nb {
                    at = ring_route(at, nb).1;
                }
                assert_eq!(at, b);
                assert_eq!(ring_route(ring_route(b, nb).1, nb).0, b);
            }
        }
    }

    #[test]
    fn overhead_examples() {
        assert_eq!(count_overhead(4, 6, 4, 2, 50), 2640);
        assert_eq!(count_overhead(4, 1, 4, 2, 50), 0);
        assert_eq!(count_overhead(3, 0, 2, 1, 8), 0);
    }

    fn table(seed: u64) -> CrossTermTable {
        let mut rng = stream(seed, Stream::Test, 5, 0, 0);
        CrossTermTable {
            varpi: CMat::from_fn(2, 2, |_, _| cscg(&mut rng, 1.0)),
            vartheta: CMat::from_fn(2, 2, |_, _| cscg(&mut rng, 1.0)),
        }
    }

    fn snap(seed: u64) -> Snapshot {
        Snapshot {
            w: CMat::zeros(1, 2),
            theta: CVec::from_element(1, C64::new(1.0, 0.0)),
            contribution: table(seed),
        }
    }

    #[test]
    fn history_keeps_depth() {
        let mut h = HistoryBuffer::new(2);
        for l in 1..=4 {
            h.push(l, snap(l as u64)).unwrap();
        }
        assert_eq!(h.len(), 2);
        assert!(h.get(3).is_ok() && h.get(4).is_ok());
        assert_eq!(h.get(2).unwrap_err(), Error::HistoryMissing { block: 2, oldest: 3, newest: 4 });
        assert!(h.push(6, snap(6)).is_err());
    }

    #[test]
    fn i1_from_zero_passes_contribution() {
        let c = table(1);
        let zero = CrossTermTable::zeros(2);
        let (out, used) = i1_update(1, 3, &zero, &zero, &c).unwrap();
        assert_eq!(out, c);
        assert_eq!(used, c);
        let r = table(2);
        let (out, _) = i1_update(2, 3, &r, &zero, &zero).unwrap();
        assert_eq!(out, r);
        assert!(i1_update(3, 3, &zero, &zero, &c).is_err());
    }

    #[test]
    fn i2_i3_cancel_when_variables_repeat() {
        let c = table(3);
        let mut h = HistoryBuffer::new(2);
        h.push(1, Snapshot { contribution: c.clone(), ..snap(0) }).unwrap();
        let r = table(4);
        let (_, used) = i2_update(2, 2, &r, &r, &h, &c).unwrap();
        assert!(used.max_abs_diff(&r) < 1e-14);
        h.push(2, Snapshot { contribution: c.clone(), ..snap(0) }).unwrap();
        let (out, used) = i3_update(3, 2, &r, &r, &h, &c).unwrap();
        assert!(out.max_abs_diff(&r) < 1e-14 && used.max_abs_diff(&r) < 1e-14);
    }

    #[test]
    fn missing_history_is_an_error() {
        let h = HistoryBuffer::new(2);
        let z = CrossTermTable::zeros(2);
        assert!(matches!(i2_update(2, 2, &z, &z, &h, &z), Err(Error::HistoryMissing { .. })));
        assert!(matches!(i3_update(4, 2, &z, &z, &h, &z), Err(Error::HistoryMissing { .. })));
    }

    #[test]
    fn trace_csv() {
        let entries = [TraceEntry { block: 1, sender: 0, receiver: 3, scalar_count: 132 }];
        let mut buf = Vec::new();
        write_message_trace(&entries, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "block,sender,receiver,scalar_count\n1,0,3,132\n");
    }
}
