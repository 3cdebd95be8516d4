//! Independent checkers shared by the integration tests. Nothing here calls
//! the library's own validation routines.

#![allow(dead_code)]

use std::collections::BTreeSet;

use lora_hybrid::assignment::Assignment;
use lora_hybrid::config::NetworkConfig;
use lora_hybrid::energy::EnergyTrace;

/// Describes the first broken assignment invariant, if any.
pub fn assignment_violation(a: &Assignment, cfg: &NetworkConfig) -> Option<String> {
    let n = cfg.sf_set.len();
    let mut per_channel: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); cfg.channels];
    let mut scheduled = 0;
    for k in 0..cfg.devices {
        let channels: Vec<usize> = (0..cfg.channels).filter(|&m| a.chi(k, m)).collect();
        if channels.len() > 1 {
            return Some(format!("device {k} on {} channels", channels.len()));
        }
        match a.slot(k) {
            None if !channels.is_empty() => return Some(format!("device {k}: chi set without a slot")),
            None => {}
            Some(s) => {
                if channels != [s.channel] {
                    return Some(format!("device {k}: chi disagrees with slot"));
                }
                if !cfg.sf_set.contains(&s.sf) {
                    return Some(format!("device {k}: SF {} outside the set", s.sf));
                }
                if !per_channel[s.channel].insert(s.sf) {
                    return Some(format!("channel {}: SF {} used twice", s.channel, s.sf));
                }
                scheduled += 1;
            }
        }
    }
    if let Some(m) = per_channel.iter().position(|s| s.len() > n) {
        return Some(format!("channel {m} over capacity"));
    }
    let want = cfg.devices.min(cfg.channels * n);
    if scheduled != want {
        return Some(format!("{scheduled} scheduled, expected {want}"));
    }
    None
}

/// Re-derives the battery from scratch and checks every frame.
pub fn trace_violation(t: &EnergyTrace, b_max: f64) -> Option<String> {
    const TOL: f64 = 1e-9;
    let mut b = t.frames.first()?.e.min(b_max);
    for (i, f) in t.frames.iter().enumerate() {
        if (f.b - b).abs() > TOL * b.max(1.0) {
            return Some(format!("frame {i}: battery {} but recursion gives {b}", f.b));
        }
        if f.b < -TOL || f.b > b_max + TOL {
            return Some(format!("frame {i}: battery {} outside [0, {b_max}]", f.b));
        }
        if f.xh < -TOL || f.xh > f.b + TOL {
            return Some(format!("frame {i}: draw {} with {} stored", f.xh, f.b));
        }
        if f.xg < -TOL || (f.xh + f.xg - f.x).abs() > TOL * f.x.max(1.0) {
            return Some(format!("frame {i}: {} + {} != {}", f.xh, f.xg, f.x));
        }
        let next_e = t.frames.get(i + 1).map_or(0.0, |n| n.e);
        b = (b - f.xh + next_e).min(b_max).max(0.0);
    }
    None
}

/// Every permutation of `0..n`, by Heap's algorithm.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            if k.is_multiple_of(2) {
                p.swap(i, k - 1);
            } else {
                p.swap(0, k - 1);
            }
        }
    }
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut p, &mut out);
    out
}

/// Smallest `sum v_i 2^{sf_i}` over every injective map of `v` into `sf_set`.
pub fn brute_sf_cost(v: &[f64], sf_set: &[u32]) -> f64 {
    let mut best = f64::INFINITY;
    for p in permutations(sf_set.len()) {
        let cost: f64 = v.iter().zip(&p).map(|(vi, &j)| vi * f64::from(1u32 << sf_set[j])).sum();
        best = best.min(cost);
    }
    best
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst elementwise relative error. Entries smaller than `floor` in both
/// vectors are compared against `floor`, where rounding in the difference
/// quotient dominates.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
