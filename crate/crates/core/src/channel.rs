//! Topology, fading processes and the link-budget formulas.
//!
//! The large-scale gain is kept in the amplitude domain, `beta = d^(-eta/2)`,
//! so that the received power scales as `|g|^2 = d^(-eta) |h|^2`.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::assignment::Assignment;
use crate::config::{GilbertElliottParams, NetworkConfig};
use crate::error::{Error, Result};

/// Devices closer than this are placed at this distance.
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub distance_m: Vec<f64>,
    /// Amplitude gain per device.
    pub beta: Vec<f64>,
}

impl Topology {
    pub fn from_distances(distance_m: Vec<f64>, path_loss_exponent: f64) -> Self {
        let beta = distance_m
            .iter()
            .map(|&d| d.powf(-path_loss_exponent / 2.0))
            .collect();
        Self { distance_m, beta }
    }

    pub fn devices(&self) -> usize {
        self.beta.len()
    }

    /// Power-domain large-scale gain `beta^2 = d^(-eta)`.
    pub fn path_gain(&self, k: usize) -> f64 {
        self.beta[k] * self.beta[k]
    }
}

/// Places `K` devices uniformly over the disk of radius `cell_radius_m`.
pub fn sample_topology<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Topology {
    let distances = (0..config.devices)
        .map(|_| {
            let u: f64 = rng.random();
            (config.cell_radius_m * u.sqrt()).max(MIN_DISTANCE_M)
        })
        .collect();
    Topology::from_distances(distances, config.path_loss_exponent)
}

/// Channel coefficients of one frame, stored device-major (`k * M + m`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub frame_index: usize,
    pub devices: usize,
    pub channels: usize,
    pub g: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn new(frame_index: usize, devices: usize, channels: usize, g: Vec<Complex64>) -> Result<Self> {
        if g.len() != devices * channels {
            return Err(Error::Shape(format!(
                "{} coefficients for {devices}x{channels} realization",
                g.len()
            )));
        }
        Ok(Self {
            frame_index,
            devices,
            channels,
            g,
        })
    }

    /// Realization with real coefficients `sqrt(gain)`; convenient for tests.
    pub fn from_gains(frame_index: usize, devices: usize, channels: usize, gains: &[f64]) -> Result<Self> {
        let g = gains.iter().map(|&p| Complex64::new(p.sqrt(), 0.0)).collect();
        Self::new(frame_index, devices, channels, g)
    }

    pub fn coefficient(&self, k: usize, m: usize) -> Complex64 {
        self.g[k * self.channels + m]
    }

    /// `|g_{k,m}|^2`.
    pub fn gain(&self, k: usize, m: usize) -> f64 {
        self.coefficient(k, m).norm_sqr()
    }

    pub fn to_csv_rows(&self, out: &mut String) {
        for k in 0..self.devices {
            for m in 0..self.channels {
                let g = self.coefficient(k, m);
                let _ = writeln!(out, "{},{},{},{},{}", self.frame_index, k, m, g.re, g.im);
            }
        }
    }
}

pub const REALIZATION_CSV_HEADER: &str = "frame,k,m,re,im";

pub fn realizations_to_csv(frames: &[ChannelRealization]) -> String {
    let mut out = String::from(REALIZATION_CSV_HEADER);
    out.push('\n');
    for r in frames {
        r.to_csv_rows(&mut out);
    }
    out
}

/// Parses the `frame,k,m,re,im` dump back into per-frame realizations.
pub fn realizations_from_csv(text: &str) -> Result<Vec<ChannelRealization>> {
    let mut rows: Vec<(usize, usize, usize, Complex64)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 && line.trim() == REALIZATION_CSV_HEADER {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(Error::parse("realization csv", format!("line {}: expected 5 columns", idx + 1)));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse("realization csv", format!("line {}: {e}", idx + 1)))
        };
        let float = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::parse("realization csv", format!("line {}: {e}", idx + 1)))
        };
        rows.push((
            int(cols[0])?,
            int(cols[1])?,
            int(cols[2])?,
            Complex64::new(float(cols[3])?, float(cols[4])?),
        ));
    }
    let devices = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let channels = rows.iter().map(|r| r.2 + 1).max().unwrap_or(0);
    let mut frames: Vec<usize> = rows.iter().map(|r| r.0).collect();
    frames.sort_unstable();
    frames.dedup();
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let mut g = vec![None; devices * channels];
        for &(_, k, m, c) in rows.iter().filter(|r| r.0 == f) {
            g[k * channels + m] = Some(c);
        }
        let g = g
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::parse("realization csv", format!("frame {f} is incomplete")))?;
        out.push(ChannelRealization::new(f, devices, channels, g)?);
    }
    Ok(out)
}

/// Rayleigh block fading: `h ~ CN(0, 1)`, `g = beta * h`.
pub fn sample_iid_channels<R: Rng + ?Sized>(
    topology: &Topology,
    config: &NetworkConfig,
    frame_index: usize,
    rng: &mut R,
) -> ChannelRealization {
    let k_count = topology.devices();
    let mut g = Vec::with_capacity(k_count * config.channels);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..k_count {
        for _ in 0..config.channels {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            g.push(Complex64::new(re * scale, im * scale) * topology.beta[k]);
        }
    }
    ChannelRealization {
        frame_index,
        devices: k_count,
        channels: config.channels,
        g,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeState {
    Good,
    Bad,
}

/// Independent two-state Markov chain per (device, channel) pair.
#[derive(Debug, Clone)]
pub struct GilbertElliottProcess {
    pub params: GilbertElliottParams,
    pub states: Vec<GeState>,
    pub devices: usize,
    pub channels: usize,
    frame: usize,
}

impl GilbertElliottProcess {
    pub fn with_states(params: GilbertElliottParams, devices: usize, channels: usize, states: Vec<GeState>) -> Self {
        assert_eq!(states.len(), devices * channels);
        Self {
            params,
            states,
            devices,
            channels,
            frame: 0,
        }
    }

    /// Starts every chain from its stationary distribution.
    pub fn stationary<R: Rng + ?Sized>(params: GilbertElliottParams, devices: usize, channels: usize, rng: &mut R) -> Self {
        let p_good = stationary_good_fraction(params.lambda1, params.lambda0);
        let states = (0..devices * channels)
            .map(|_| {
                if rng.random::<f64>() < p_good {
                    GeState::Good
                } else {
                    GeState::Bad
                }
            })
            .collect();
        Self::with_states(params, devices, channels, states)
    }

    pub fn gain_of(&self, state: GeState) -> f64 {
        match state {
            GeState::Good => self.params.gain_good,
            GeState::Bad => self.params.gain_bad,
        }
    }

    /// Transitions every chain once and emits the frame's coefficients.
    pub fn step<R: Rng + ?Sized>(&mut self, topology: &Topology, rng: &mut R) -> ChannelRealization {
        for s in &mut self.states {
            let p_good = match s {
                GeState::Good => self.params.lambda1,
                GeState::Bad => self.params.lambda0,
            };
            *s = if rng.random::<f64>() < p_good {
                GeState::Good
            } else {
                GeState::Bad
            };
        }
        let g = self
            .states
            .iter()
            .enumerate()
            .map(|(idx, &s)| {
                let k = idx / self.channels;
                Complex64::new(self.gain_of(s).sqrt() * topology.beta[k], 0.0)
            })
            .collect();
        let frame_index = self.frame;
        self.frame += 1;
        ChannelRealization {
            frame_index,
            devices: self.devices,
            channels: self.channels,
            g,
        }
    }
}

/// Long-run fraction of time in G: `lambda0 / (1 - lambda1 + lambda0)`.
pub fn stationary_good_fraction(lambda1: f64, lambda0: f64) -> f64 {
    let denom = 1.0 - lambda1 + lambda0;
    if denom <= 0.0 {
        1.0
    } else {
        lambda0 / denom
    }
}

pub fn snr(power: f64, g: Complex64, sigma2: f64) -> f64 {
    power * g.norm_sqr() / sigma2
}

/// Transmit power that lands exactly on `gamma_th`.
pub fn required_power(gamma_th: f64, sigma2: f64, g: Complex64) -> Result<f64> {
    let gain = g.norm_sqr();
    if gain > 0.0 {
        Ok(gamma_th * sigma2 / gain)
    } else {
        Err(Error::Unservable(String::new()))
    }
}

pub fn shannon_rate(power: f64, g: Complex64, sigma2: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (1.0 + snr(power, g, sigma2)).log2()
}

/// `E_c + T * sum_k p_k 2^{alpha_k}` for the scheduled devices.
pub fn frame_energy(assignment: &Assignment, realization: &ChannelRealization, config: &NetworkConfig) -> Result<f64> {
    let sigma2 = config.noise_variance();
    let gamma = config.gamma_th();
    let mut total = 0.0;
    for (k, slot) in assignment.scheduled() {
        let p = required_power(gamma, sigma2, realization.coefficient(k, slot.channel))
            .map_err(|_| Error::Unservable(format!(" {k} on channel {}", slot.channel)))?;
        total += p * f64::from(1u32 << slot.sf);
    }
    Ok(config.circuit_energy() + total * config.sample_time())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::Slot;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;

    fn unit_config() -> NetworkConfig {
        // sigma^2 = 1 W: psd 30 dBm/Hz over 1 Hz.
        NetworkConfig {
            noise_psd_dbm_hz: 30.0,
            bandwidth_hz: 1.0,
            gamma_th_db: 0.0,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn path_gain_values() {
        let t = Topology::from_distances(vec![1.0, 500.0], 3.7);
        assert_eq!(t.beta[0], 1.0);
        assert_eq!(t.path_gain(0), 1.0);
        assert_relative_eq!(t.path_gain(1), 500f64.powf(-3.7), max_relative = 1e-12);
    }

    #[test]
    fn disk_uniform_second_moment() {
        let cfg = NetworkConfig {
            devices: 100_000,
            ..NetworkConfig::default()
        };
        let t = sample_topology(&cfg, &mut rng_from_seed(1));
        let mean_d2 = t.distance_m.iter().map(|d| d * d).sum::<f64>() / t.devices() as f64;
        let expected = 500.0 * 500.0 / 2.0;
        assert!((mean_d2 / expected - 1.0).abs() < 0.01, "{mean_d2}");
        assert!(t.distance_m.iter().all(|d| (MIN_DISTANCE_M..=500.0).contains(d)));
    }

    #[test]
    fn iid_fading_statistics() {
        let cfg = NetworkConfig {
            devices: 1,
            channels: 1,
            ..NetworkConfig::default()
        };
        let topo = Topology::from_distances(vec![1.0], 3.7);
        let mut rng = rng_from_seed(2);
        let n = 100_000;
        let gains: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let a = sample_iid_channels(&topo, &cfg, 2 * i, &mut rng).gain(0, 0);
                let b = sample_iid_channels(&topo, &cfg, 2 * i + 1, &mut rng).gain(0, 0);
                (a, b)
            })
            .collect();
        let mean = gains.iter().map(|p| p.0 + p.1).sum::<f64>() / (2 * n) as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");

        let ma = gains.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let mb = gains.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for (a, b) in &gains {
            cov += (a - ma) * (b - mb);
            va += (a - ma).powi(2);
            vb += (b - mb).powi(2);
        }
        let rho = cov / (va * vb).sqrt();
        assert!(rho.abs() < 0.02, "{rho}");
    }

    #[test]
    fn unit_beta_passes_fading_through() {
        let cfg = NetworkConfig {
            devices: 2,
            channels: 3,
            ..NetworkConfig::default()
        };
        let topo = Topology::from_distances(vec![1.0, 1.0], 3.7);
        let r = sample_iid_channels(&topo, &cfg, 0, &mut rng_from_seed(3));
        let mut rng = rng_from_seed(3);
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        for k in 0..2 {
            for m in 0..3 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                assert_eq!(r.coefficient(k, m), Complex64::new(re * scale, im * scale));
            }
        }
    }

    #[test]
    fn ge_absorbing_states() {
        let topo = Topology::from_distances(vec![1.0], 3.7);
        let stay_good = GilbertElliottParams {
            lambda1: 1.0,
            ..Default::default()
        };
        let mut p = GilbertElliottProcess::with_states(stay_good, 1, 1, vec![GeState::Good]);
        let mut rng = rng_from_seed(4);
        for _ in 0..1000 {
            let r = p.step(&topo, &mut rng);
            assert_eq!(p.states[0], GeState::Good);
            assert_eq!(r.gain(0, 0), 1.0);
        }
        let stay_bad = GilbertElliottParams {
            lambda0: 0.0,
            ..Default::default()
        };
        let mut p = GilbertElliottProcess::with_states(stay_bad, 1, 1, vec![GeState::Bad]);
        for _ in 0..1000 {
            let r = p.step(&topo, &mut rng);
            assert_eq!(p.states[0], GeState::Bad);
            assert_relative_eq!(r.gain(0, 0), 0.1, max_relative = 1e-12);
        }
    }

    #[test]
    fn ge_stationary_fraction() {
        let params = GilbertElliottParams::default();
        let expected = stationary_good_fraction(params.lambda1, params.lambda0);
        assert_relative_eq!(expected, 0.75);
        let topo = Topology::from_distances(vec![1.0], 3.7);
        let mut p = GilbertElliottProcess::with_states(params, 1, 1, vec![GeState::Bad]);
        let mut rng = rng_from_seed(5);
        let steps = 100_000;
        let good = (0..steps)
            .filter(|_| {
                p.step(&topo, &mut rng);
                p.states[0] == GeState::Good
            })
            .count();
        let frac = good as f64 / steps as f64;
        assert!((frac - expected).abs() < 0.02 * expected, "{frac}");
    }

    #[test]
    fn snr_and_required_power() {
        let one = Complex64::new(1.0, 0.0);
        assert_eq!(snr(0.0, one, 1.0), 0.0);
        assert_eq!(snr(1.0, one, 1.0), 1.0);
        assert_eq!(required_power(0.0, 1.0, one).unwrap(), 0.0);
        assert_eq!(required_power(1.0, 1.0, one).unwrap(), 1.0);
        assert!(matches!(
            required_power(1.0, 1.0, Complex64::new(0.0, 0.0)),
            Err(Error::Unservable(_))
        ));
        let g = Complex64::new(3.1e-6, -1.7e-6);
        let sigma2 = 4.98e-16;
        let gamma = 0.37;
        let p = required_power(gamma, sigma2, g).unwrap();
        assert_relative_eq!(snr(p, g, sigma2), gamma, max_relative = 1e-14);
    }

    #[test]
    fn shannon_rate_values() {
        let one = Complex64::new(1.0, 0.0);
        assert_eq!(shannon_rate(0.0, one, 1.0, 125e3), 0.0);
        assert_eq!(shannon_rate(1.0, one, 1.0, 125e3), 125e3);
        assert_eq!(shannon_rate(3.0, one, 1.0, 125e3), 250e3);
    }

    #[test]
    fn frame_energy_cases() {
        let cfg = NetworkConfig {
            devices: 1,
            channels: 1,
            ..unit_config()
        };
        let r = ChannelRealization::from_gains(0, 1, 1, &[1.0]).unwrap();
        let empty = Assignment::empty(1);
        assert_relative_eq!(frame_energy(&empty, &r, &cfg).unwrap(), cfg.circuit_energy());
        let mut one = Assignment::empty(1);
        one.set(0, Slot { channel: 0, sf: 7 });
        let expected = cfg.circuit_energy() + 128.0 * cfg.sample_time();
        assert_relative_eq!(frame_energy(&one, &r, &cfg).unwrap(), expected, max_relative = 1e-12);

        let zero = ChannelRealization::from_gains(0, 1, 1, &[0.0]).unwrap();
        assert!(frame_energy(&one, &zero, &cfg).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = NetworkConfig {
            devices: 3,
            channels: 2,
            ..NetworkConfig::default()
        };
        let mut rng = rng_from_seed(9);
        let topo = sample_topology(&cfg, &mut rng);
        let frames: Vec<_> = (0..3).map(|i| sample_iid_channels(&topo, &cfg, i, &mut rng)).collect();
        let back = realizations_from_csv(&realizations_to_csv(&frames)).unwrap();
        assert_eq!(back, frames);
    }
}
