//! Channel- and QoS-aware downlink scheduler working on resource block
//! groups, one decision per 1 ms TTI.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::radio::{Cqi, CqiTable};
use crate::traffic::UeQueue;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RbgPartition {
    group_size: u32,
    groups: Vec<u32>,
}

impl RbgPartition {
    /// Group size by bandwidth tier: up to 10 RBs -> 1, 11..=26 -> 2,
    /// 27..=63 -> 3, otherwise 4. The last group holds the remainder.
    pub fn for_bandwidth(n_rb: u32) -> Result<Self> {
        if n_rb == 0 {
            return Err(Error::invalid("n_rb", "must be at least 1"));
        }
        let k = match n_rb {
            0..=10 => 1,
            11..=26 => 2,
            27..=63 => 3,
            _ => 4,
        };
        let full = n_rb / k;
        let mut groups = vec![k; full as usize];
        if !n_rb.is_multiple_of(k) {
            groups.push(n_rb % k);
        }
        Ok(Self {
            group_size: k,
            groups,
        })
    }

    pub fn group_size(&self) -> u32 {
        self.group_size
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn n_rb(&self) -> u32 {
        self.groups.iter().sum()
    }
}

/// One scheduling candidate at a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackloggedUe {
    pub ue_id: usize,
    pub hol_ms: f64,
    pub cqi: Cqi,
    /// Bits still owed to the UE's queue.
    pub backlog_bits: u64,
}

impl BackloggedUe {
    pub fn from_queue(ue_id: usize, queue: &UeQueue, cqi: Cqi, now_ms: f64) -> Option<Self> {
        queue.head()?;
        Some(Self {
            ue_id,
            hol_ms: queue.hol_delay_ms(now_ms),
            cqi,
            backlog_bits: queue.backlog_bits(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub ue_id: usize,
    pub bits: u64,
    pub rbs: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TtiAllocation {
    /// Owner of each group, `None` when idle.
    pub assignments: Vec<Option<usize>>,
    /// One entry per served UE, ordered by first assignment.
    pub grants: Vec<Grant>,
    pub rbs_used: u32,
}

impl TtiAllocation {
    pub fn utilization(&self, n_rb: u32) -> f64 {
        self.rbs_used as f64 / n_rb as f64
    }

    pub fn bits_for(&self, ue_id: usize) -> u64 {
        self.grants
            .iter()
            .find(|g| g.ue_id == ue_id)
            .map_or(0, |g| g.bits)
    }
}

/// Scheduling priority `(1 + HOL) * achievable bits per RB`.
pub fn cqa_metric(hol_ms: f64, bits_per_rb: u32) -> f64 {
    (1.0 + hol_ms) * bits_per_rb as f64
}

/// Greedy per-group allocation in group-index order.
///
/// Each group goes to the backlogged UE with the highest [`cqa_metric`]
/// (ties to the lower UE id). A UE leaves the contest once its grants cover
/// its whole backlog. A UE at CQI 0 cannot carry bits and is never served.
pub fn schedule_tti(
    partition: &RbgPartition,
    table: &CqiTable,
    candidates: &[BackloggedUe],
) -> TtiAllocation {
    struct Slot {
        ue_id: usize,
        metric: f64,
        bits_per_rb: u64,
        remaining: u64,
        grant: Option<usize>,
    }
    let mut slots: Vec<Slot> = candidates
        .iter()
        .filter_map(|c| {
            let bpr = table.bits_per_rb(c.cqi) as u64;
            (bpr > 0 && c.backlog_bits > 0).then(|| Slot {
                ue_id: c.ue_id,
                metric: cqa_metric(c.hol_ms, bpr as u32),
                bits_per_rb: bpr,
                remaining: c.backlog_bits,
                grant: None,
            })
        })
        .collect();

    let mut alloc = TtiAllocation {
        assignments: vec![None; partition.groups().len()],
        grants: Vec::new(),
        rbs_used: 0,
    };
    for (g, &size) in partition.groups().iter().enumerate() {
        let best = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.remaining > 0)
            .fold(None::<usize>, |best, (i, s)| match best {
                None => Some(i),
                Some(b) => {
                    let cur = &slots[b];
                    if s.metric > cur.metric || (s.metric == cur.metric && s.ue_id < cur.ue_id) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            });
        let Some(i) = best else { break };
        let slot = &mut slots[i];
        let bits = slot.bits_per_rb * size as u64;
        slot.remaining = slot.remaining.saturating_sub(bits);
        let gi = *slot.grant.get_or_insert_with(|| {
            alloc.grants.push(Grant {
                ue_id: slot.ue_id,
                bits: 0,
                rbs: 0,
            });
            alloc.grants.len() - 1
        });
        alloc.grants[gi].bits += bits;
        alloc.grants[gi].rbs += size;
        alloc.assignments[g] = Some(slot.ue_id);
        alloc.rbs_used += size;
    }
    alloc
}

/// Applies the grants to the queues (indexed by UE id). Packets leave with
/// `delivered_at = now + 1`. Returns the number of packets delivered.
pub fn deliver(alloc: &TtiAllocation, queues: &mut [UeQueue], now_ms: f64) -> usize {
    alloc
        .grants
        .iter()
        .map(|g| queues[g.ue_id].transmit(g.bits, now_ms + 1.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::Packet;
    use proptest::prelude::*;

    fn cqi(k: u8) -> Cqi {
        Cqi::new(k).unwrap()
    }

    fn ue(id: usize, hol: f64, k: u8, backlog: u64) -> BackloggedUe {
        BackloggedUe {
            ue_id: id,
            hol_ms: hol,
            cqi: cqi(k),
            backlog_bits: backlog,
        }
    }

    #[test]
    fn partition_tiers() {
        let p = RbgPartition::for_bandwidth(25).unwrap();
        assert_eq!(p.group_size(), 2);
        assert_eq!(p.groups().len(), 13);
        assert_eq!(p.groups().iter().filter(|&&g| g == 2).count(), 12);
        assert_eq!(*p.groups().last().unwrap(), 1);

        let p = RbgPartition::for_bandwidth(6).unwrap();
        assert_eq!((p.group_size(), p.groups()), (1, &[1u32; 6][..]));

        let p = RbgPartition::for_bandwidth(50).unwrap();
        assert_eq!(p.group_size(), 3);
        assert_eq!(p.groups().len(), 17);
        assert_eq!(*p.groups().last().unwrap(), 2);

        assert_eq!(RbgPartition::for_bandwidth(100).unwrap().group_size(), 4);
        assert!(RbgPartition::for_bandwidth(0).is_err());
        for n in 1..120 {
            assert_eq!(RbgPartition::for_bandwidth(n).unwrap().n_rb(), n);
        }
    }

    #[test]
    fn idle_cell() {
        let p = RbgPartition::for_bandwidth(25).unwrap();
        let a = schedule_tti(&p, &CqiTable::default(), &[]);
        assert_eq!(a.rbs_used, 0);
        assert!(a.grants.is_empty());
        assert!(a.assignments.iter().all(Option::is_none));
    }

    #[test]
    fn sole_competitor_takes_everything() {
        let p = RbgPartition::for_bandwidth(25).unwrap();
        let a = schedule_tti(&p, &CqiTable::default(), &[ue(4, 3.0, 12, 1_000_000)]);
        assert_eq!(a.rbs_used, 25);
        assert!(a.assignments.iter().all(|&o| o == Some(4)));
        assert_eq!(a.grants.len(), 1);
    }

    #[test]
    fn longer_hol_wins_first_group() {
        let p = RbgPartition::for_bandwidth(25).unwrap();
        let a = schedule_tti(
            &p,
            &CqiTable::default(),
            &[ue(0, 5.0, 9, 100_000), ue(1, 50.0, 9, 100_000)],
        );
        assert_eq!(a.assignments[0], Some(1));
    }

    #[test]
    fn ties_go_to_lower_id() {
        let p = RbgPartition::for_bandwidth(25).unwrap();
        let a = schedule_tti(
            &p,
            &CqiTable::default(),
            &[ue(7, 10.0, 9, 100_000), ue(2, 10.0, 9, 100_000)],
        );
        assert_eq!(a.assignments[0], Some(2));
    }

    #[test]
    fn exhausted_backlog_releases_groups() {
        let table = CqiTable::default();
        let p = RbgPartition::for_bandwidth(25).unwrap();
        // CQI 15 carries 999 bits/RB: 256 bits need exactly one group.
        let a = schedule_tti(&p, &table, &[ue(0, 100.0, 15, 256), ue(1, 1.0, 15, 5000)]);
        assert_eq!(a.assignments[0], Some(0));
        assert_eq!(a.bits_for(0), 1998);
        // 5000 bits -> three 2-RB groups.
        assert_eq!(a.grants[1].rbs, 6);
        assert_eq!(a.rbs_used, 8);
        assert!(a.assignments[4..].iter().all(Option::is_none));
    }

    #[test]
    fn cqi_zero_is_never_served() {
        let table = CqiTable::default();
        let p = RbgPartition::for_bandwidth(25).unwrap();
        let a = schedule_tti(&p, &table, &[ue(0, 900.0, 0, 4000)]);
        assert_eq!(a.rbs_used, 0);
        // CQI 3 carries 67 bits/RB: 4000 bits need 30 RBs, so the whole TTI.
        let a = schedule_tti(&p, &table, &[ue(0, 900.0, 0, 4000), ue(1, 1.0, 3, 4000)]);
        assert_eq!(a.rbs_used, 25);
        assert_eq!(a.bits_for(1), 67 * 25);
    }

    #[test]
    fn deliver_moves_whole_packets() {
        let table = CqiTable::default();
        let p = RbgPartition::for_bandwidth(25).unwrap();
        let mut queues = vec![UeQueue::new(100)];
        for i in 0..40 {
            queues[0].enqueue(Packet {
                id: i,
                ue_id: 0,
                size_bytes: 100,
                created_at_ms: 0.0,
                delivered_at_ms: None,
            });
        }
        let c = BackloggedUe::from_queue(0, &queues[0], cqi(15), 5.0).unwrap();
        let a = schedule_tti(&p, &table, &[c]);
        assert_eq!(a.bits_for(0), 999 * 25);
        let n = deliver(&a, &mut queues, 5.0);
        assert_eq!(n, 31);
        assert!(queues[0]
            .delivered()
            .iter()
            .all(|p| p.delivered_at_ms == Some(6.0)));

        let empty = TtiAllocation::default();
        assert_eq!(deliver(&empty, &mut queues, 6.0), 0);
    }

    proptest! {
        #[test]
        fn allocation_invariants(
            specs in proptest::collection::vec((0.0f64..500.0, 0u8..=15, 1u64..40_000), 0..12),
        ) {
            let table = CqiTable::default();
            let p = RbgPartition::for_bandwidth(25).unwrap();
            let cands: Vec<_> = specs
                .iter()
                .enumerate()
                .map(|(i, &(h, k, b))| ue(i, h, k, b))
                .collect();
            let a = schedule_tti(&p, &table, &cands);
            let util = a.utilization(25);
            prop_assert!((0.0..=1.0).contains(&util));

            let eligible: Vec<_> = cands
                .iter()
                .filter(|c| table.bits_per_rb(c.cqi) > 0)
                .collect();
            prop_assert_eq!(a.rbs_used == 0, eligible.is_empty());

            // Work conservation: an idle group implies every eligible UE's
            // backlog is already covered.
            if a.assignments.iter().any(Option::is_none) {
                for c in &eligible {
                    prop_assert!(a.bits_for(c.ue_id) >= c.backlog_bits);
                }
            }
            let granted: u32 = a.grants.iter().map(|g| g.rbs).sum();
            prop_assert_eq!(granted, a.rbs_used);
        }
    }
}
