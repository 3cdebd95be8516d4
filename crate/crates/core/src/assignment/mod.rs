//! Per-frame channel and spreading-factor assignment.
//!
//! Every producer schedules exactly `min(K, M * N)` devices, at most one
//! channel per device, at most `N` devices per channel, and pairwise distinct
//! spreading factors inside a channel.

mod baseline;
mod exhaustive;
mod heuristic;

pub use baseline::{random_assignment, round_robin};
pub use exhaustive::{brute_force_optimal, search_space_size, DEFAULT_SEARCH_CAP};
pub use heuristic::{hcrma_frame, hurma_frame};

use std::fmt::Write as _;

use crate::channel::{required_power, ChannelRealization};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    pub channel: usize,
    pub sf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    slots: Vec<Option<Slot>>,
}

impl Assignment {
    pub fn empty(devices: usize) -> Self {
        Self {
            slots: vec![None; devices],
        }
    }

    pub fn devices(&self) -> usize {
        self.slots.len()
    }

    pub fn set(&mut self, device: usize, slot: Slot) {
        self.slots[device] = Some(slot);
    }

    pub fn clear(&mut self, device: usize) {
        self.slots[device] = None;
    }

    pub fn slot(&self, device: usize) -> Option<Slot> {
        self.slots[device]
    }

    /// `chi_{k,m}`.
    pub fn chi(&self, device: usize, channel: usize) -> bool {
        self.slots[device].is_some_and(|s| s.channel == channel)
    }

    pub fn scheduled(&self) -> impl Iterator<Item = (usize, Slot)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.map(|s| (k, s)))
    }

    pub fn scheduled_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// `psi_m`: devices on channel `m`, in device order.
    pub fn psi(&self, channel: usize) -> Vec<usize> {
        self.scheduled()
            .filter(|(_, s)| s.channel == channel)
            .map(|(k, _)| k)
            .collect()
    }

    /// Checks every structural constraint against `config`.
    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        if self.devices() != config.devices {
            return Err(Error::InvalidAssignment(format!(
                "{} device entries for K = {}",
                self.devices(),
                config.devices
            )));
        }
        let n = config.sf_capacity();
        let mut used: Vec<Vec<u32>> = vec![Vec::new(); config.channels];
        for (k, s) in self.scheduled() {
            if s.channel >= config.channels {
                return Err(Error::InvalidAssignment(format!(
                    "device {k} on channel {} of {}",
                    s.channel, config.channels
                )));
            }
            if !config.sf_set.contains(&s.sf) {
                return Err(Error::InvalidAssignment(format!("device {k} uses SF {} outside the set", s.sf)));
            }
            let sfs = &mut used[s.channel];
            if sfs.contains(&s.sf) {
                return Err(Error::InvalidAssignment(format!(
                    "SF {} reused on channel {}",
                    s.sf, s.channel
                )));
            }
            sfs.push(s.sf);
            if sfs.len() > n {
                return Err(Error::InvalidAssignment(format!("channel {} over capacity", s.channel)));
            }
        }
        let expected = config.scheduled_per_frame();
        if self.scheduled_count() != expected {
            return Err(Error::InvalidAssignment(format!(
                "{} devices scheduled, expected {expected}",
                self.scheduled_count()
            )));
        }
        Ok(())
    }

    /// `k,m,sf,p_k` rows for scheduled devices.
    pub fn to_csv(&self, realization: &ChannelRealization, config: &NetworkConfig) -> Result<String> {
        let mut out = String::from("k,m,sf,p_k\n");
        for (k, s) in self.scheduled() {
            let p = required_power(config.gamma_th(), config.noise_variance(), realization.coefficient(k, s.channel))?;
            let _ = writeln!(out, "{k},{},{},{p}", s.channel, s.sf);
        }
        Ok(out)
    }
}

/// Downlink energy score `sum_k gamma_th sigma^2 / |g_{k,m}|^2 * 2^{alpha_k}`.
/// Frame energy is `E_c + T * objective`.
pub fn objective(assignment: &Assignment, realization: &ChannelRealization, config: &NetworkConfig) -> f64 {
    let scale = config.gamma_th() * config.noise_variance();
    assignment
        .scheduled()
        .map(|(k, s)| scale / realization.gain(k, s.channel) * f64::from(1u32 << s.sf))
        .sum()
}

/// Optimal SFs for one channel: the largest coefficient gets the smallest
/// spreading factor, and so on in order. Equal coefficients keep input order.
pub fn optimal_sf_order(v: &[f64], sf_set: &[u32]) -> Result<Vec<u32>> {
    if v.len() > sf_set.len() {
        return Err(Error::TooManyElements(v.len(), sf_set.len()));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut sfs = vec![0; v.len()];
    for (rank, idx) in order.into_iter().enumerate() {
        sfs[idx] = sf_set[rank];
    }
    Ok(sfs)
}

/// `sum v_i 2^{sf_i}`.
pub fn sf_cost(v: &[f64], sfs: &[u32]) -> f64 {
    v.iter().zip(sfs).map(|(v, &s)| v * f64::from(1u32 << s)).sum()
}

/// Assigns SFs on every channel by the gain-ordered rule over `v = sigma^2 / |g|^2`.
pub(crate) fn assign_sfs(
    channel_of: &[Option<usize>],
    realization: &ChannelRealization,
    config: &NetworkConfig,
) -> Assignment {
    let sigma2 = config.noise_variance();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); config.channels];
    for (k, c) in channel_of.iter().enumerate() {
        if let Some(m) = *c {
            members[m].push(k);
        }
    }
    let mut out = Assignment::empty(channel_of.len());
    for (m, devs) in members.into_iter().enumerate() {
        let v: Vec<f64> = devs.iter().map(|&k| sigma2 / realization.gain(k, m)).collect();
        let sfs = optimal_sf_order(&v, &config.sf_set).expect("channel load bounded by capacity");
        for (k, sf) in devs.into_iter().zip(sfs) {
            out.set(k, Slot { channel: m, sf });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Minimum of `sum v_i 2^{sf}` over every injective map into `sf_set`.
    fn factorial_min(v: &[f64], sf_set: &[u32]) -> f64 {
        let n = sf_set.len();
        permutations(n)
            .into_iter()
            .map(|p| v.iter().enumerate().map(|(i, x)| x * f64::from(1u32 << sf_set[p[i]])).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn two_element_proof_case() {
        assert_eq!(optimal_sf_order(&[1.0, 2.0], &[7, 8]).unwrap(), vec![8, 7]);
    }

    #[test]
    fn single_element_gets_smallest_sf() {
        assert_eq!(optimal_sf_order(&[3.0], &[9, 10, 11]).unwrap(), vec![9]);
        assert!(optimal_sf_order(&[1.0, 2.0, 3.0], &[7, 8]).is_err());
    }

    #[test]
    fn sf_order_matches_factorial_search() {
        let mut rng = rng_from_seed(11);
        let full: Vec<u32> = (7..=12).collect();
        for _ in 0..300 {
            let len = rng.random_range(1..=6);
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(1e-3..10.0)).collect();
            let got = sf_cost(&v, &optimal_sf_order(&v, &full).unwrap());
            let want = factorial_min(&v, &full);
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn validate_rejects_broken_assignments() {
        let cfg = NetworkConfig {
            devices: 3,
            channels: 1,
            sf_set: vec![7, 8],
            ..NetworkConfig::default()
        };
        let mut a = Assignment::empty(3);
        a.set(0, Slot { channel: 0, sf: 7 });
        a.set(1, Slot { channel: 0, sf: 8 });
        a.validate(&cfg).unwrap();
        assert!(a.chi(0, 0) && !a.chi(2, 0));
        assert_eq!(a.psi(0), vec![0, 1]);

        let mut dup = a.clone();
        dup.set(1, Slot { channel: 0, sf: 7 });
        assert!(dup.validate(&cfg).is_err());
        let mut wrong_sf = a.clone();
        wrong_sf.set(1, Slot { channel: 0, sf: 9 });
        assert!(wrong_sf.validate(&cfg).is_err());
        let mut bad_channel = a.clone();
        bad_channel.set(1, Slot { channel: 1, sf: 8 });
        assert!(bad_channel.validate(&cfg).is_err());
        let mut short = a.clone();
        short.clear(1);
        assert!(short.validate(&cfg).is_err());
    }

    #[test]
    fn objective_unit_case() {
        let cfg = NetworkConfig {
            devices: 1,
            channels: 1,
            noise_psd_dbm_hz: 30.0,
            bandwidth_hz: 1.0,
            gamma_th_db: 0.0,
            ..NetworkConfig::default()
        };
        let r = ChannelRealization::from_gains(0, 1, 1, &[1.0]).unwrap();
        assert_eq!(objective(&Assignment::empty(1), &r, &cfg), 0.0);
        let mut a = Assignment::empty(1);
        a.set(0, Slot { channel: 0, sf: 9 });
        assert!((objective(&a, &r, &cfg) - 512.0).abs() < 1e-9);
    }
}
