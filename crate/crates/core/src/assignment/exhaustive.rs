use super::{objective, optimal_sf_order, Assignment, Slot};
use crate::channel::ChannelRealization;
use crate::config::NetworkConfig;
use crate::error::{Error, Result};

/// Default bound on enumerated device-to-channel maps.
pub const DEFAULT_SEARCH_CAP: u128 = 5_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

/// Number of maps sending exactly `min(K, M N)` labelled devices to labelled
/// channels with at most `N` per channel. This is what the search visits.
pub fn search_space_size(devices: usize, channels: usize, capacity: usize) -> u128 {
    let target = devices.min(channels * capacity);
    // ways[s]: channels so far hold s distinct devices.
    let mut ways = vec![0u128; target + 1];
    ways[0] = 1;
    for _ in 0..channels {
        let mut next = vec![0u128; target + 1];
        for (s, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for c in 0..=capacity.min(target - s) {
                let add = w.saturating_mul(binomial(devices - s, c));
                next[s + c] = next[s + c].saturating_add(add);
            }
        }
        ways = next;
    }
    ways[target]
}

struct Search<'a> {
    v: Vec<f64>,
    channels: usize,
    capacity: usize,
    target: usize,
    sf_set: &'a [u32],
    members: Vec<Vec<usize>>,
    best_cost: f64,
    best: Option<Vec<Vec<usize>>>,
}

impl Search<'_> {
    fn leaf_cost(&self) -> f64 {
        let mut total = 0.0;
        for (m, devs) in self.members.iter().enumerate() {
            let v: Vec<f64> = devs.iter().map(|&k| self.v[k * self.channels + m]).collect();
            let sfs = optimal_sf_order(&v, self.sf_set).expect("bounded by capacity");
            total += super::sf_cost(&v, &sfs);
        }
        total
    }

    fn visit(&mut self, k: usize, devices: usize, placed: usize) {
        if placed == self.target {
            let cost = self.leaf_cost();
            if cost < self.best_cost {
                self.best_cost = cost;
                self.best = Some(self.members.clone());
            }
            return;
        }
        if k == devices || devices - k < self.target - placed {
            return;
        }
        for m in 0..self.channels {
            if self.members[m].len() < self.capacity {
                self.members[m].push(k);
                self.visit(k + 1, devices, placed + 1);
                self.members[m].pop();
            }
        }
        self.visit(k + 1, devices, placed);
    }
}

/// Exact minimizer of the per-frame objective by enumeration of every
/// device-to-channel map, with gain-ordered SFs inside each channel.
pub fn brute_force_optimal(realization: &ChannelRealization, config: &NetworkConfig, cap: u128) -> Result<Assignment> {
    let capacity = config.sf_capacity();
    let count = search_space_size(config.devices, config.channels, capacity);
    if count > cap {
        return Err(Error::InstanceTooLarge { count, cap });
    }
    let sigma2 = config.noise_variance();
    let gamma = config.gamma_th();
    let v = (0..config.devices)
        .flat_map(|k| (0..config.channels).map(move |m| (k, m)))
        .map(|(k, m)| gamma * sigma2 / realization.gain(k, m))
        .collect();
    let mut search = Search {
        v,
        channels: config.channels,
        capacity,
        target: config.scheduled_per_frame(),
        sf_set: &config.sf_set,
        members: vec![Vec::new(); config.channels],
        best_cost: f64::INFINITY,
        best: None,
    };
    search.visit(0, config.devices, 0);
    let mut out = Assignment::empty(config.devices);
    if let Some(best) = search.best {
        for (m, devs) in best.into_iter().enumerate() {
            let v: Vec<f64> = devs.iter().map(|&k| search.v[k * config.channels + m]).collect();
            let sfs = optimal_sf_order(&v, &config.sf_set)?;
            for (k, sf) in devs.into_iter().zip(sfs) {
                out.set(k, Slot { channel: m, sf });
            }
        }
    }
    debug_assert!(objective(&out, realization, config).is_finite() || config.devices == 0);
    Ok(out)
}
