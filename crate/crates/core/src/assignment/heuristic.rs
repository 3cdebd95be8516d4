use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{assign_sfs, Assignment};
use crate::channel::{ChannelRealization, Topology};
use crate::config::NetworkConfig;

/// Heap entry ordered by gain, then lower device, then lower channel.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    device: usize,
    channel: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.device.cmp(&self.device))
            .then_with(|| other.channel.cmp(&self.channel))
    }
}

/// Uncorrelated-channel heuristic: repeatedly take the strongest remaining
/// (device, channel) pair whose channel still has room, then order SFs per
/// channel by the gain-ordered SF rule.
pub fn hurma_frame(realization: &ChannelRealization, config: &NetworkConfig) -> Assignment {
    let capacity = config.sf_capacity();
    let target = config.scheduled_per_frame();
    let mut load = vec![0usize; config.channels];
    let mut channel_of: Vec<Option<usize>> = vec![None; config.devices];

    let mut heap: BinaryHeap<Candidate> = (0..config.devices)
        .flat_map(|device| {
            (0..config.channels).map(move |channel| Candidate {
                gain: realization.gain(device, channel),
                device,
                channel,
            })
        })
        .collect::<Vec<_>>()
        .into();

    let mut placed = 0;
    while placed < target {
        let Some(c) = heap.pop() else { break };
        if channel_of[c.device].is_some() || load[c.channel] == capacity {
            continue;
        }
        channel_of[c.device] = Some(c.channel);
        load[c.channel] += 1;
        placed += 1;
    }
    assign_sfs(&channel_of, realization, config)
}

/// Correlated-channel heuristic: serve the `M N` most distant devices, most
/// distant first, each on its best channel that still has room.
pub fn hcrma_frame(realization: &ChannelRealization, topology: &Topology, config: &NetworkConfig) -> Assignment {
    let capacity = config.sf_capacity();
    let target = config.scheduled_per_frame();
    let mut order: Vec<usize> = (0..config.devices).collect();
    // Weakest large-scale gain first; the sort is stable so ties keep index order.
    order.sort_by(|&a, &b| topology.beta[a].total_cmp(&topology.beta[b]));

    let mut load = vec![0usize; config.channels];
    let mut open: Vec<usize> = (0..config.channels).collect();
    let mut channel_of: Vec<Option<usize>> = vec![None; config.devices];
    for &k in order.iter().take(target) {
        let Some((pos, &m)) = open.iter().enumerate().max_by(|(_, &a), (_, &b)| {
            realization
                .gain(k, a)
                .total_cmp(&realization.gain(k, b))
                .then_with(|| b.cmp(&a))
        }) else {
            break;
        };
        channel_of[k] = Some(m);
        load[m] += 1;
        if load[m] == capacity {
            open.remove(pos);
        }
    }
    assign_sfs(&channel_of, realization, config)
}
