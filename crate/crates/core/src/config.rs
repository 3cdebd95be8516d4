//! Scenario constants and the plain-text `key = value` config format.
//!
//! One assignment per line, `#` starts a comment. Keys:
//!
//! | key | unit | required | default |
//! |-----|------|----------|---------|
//! | `devices` | count K | yes | |
//! | `channels` | count M | yes | |
//! | `frames` | count L | yes | |
//! | `battery_capacity_j` | J | yes | |
//! | `path_loss_exponent` | | yes | |
//! | `noise_psd_dbm_hz` | dBm/Hz | yes | |
//! | `circuit_power_dbm` | dBm | yes | |
//! | `cell_radius_m` | m | yes | |
//! | `sf_set` | comma list | no | `7,8,9,10,11,12` |
//! | `gamma_th_db` | dB | no | `0` |
//! | `frame_duration_s` | s | no | `1` |
//! | `bandwidth_hz` | Hz | no | `125000` |
//! | `seed` | u64 | no | `0` |
//! | `ge_lambda1` | P(G→G) | no | `0.9` |
//! | `ge_lambda0` | P(B→G) | no | `0.3` |
//! | `ge_gain_good` | power gain | no | `1` |
//! | `ge_gain_bad` | power gain | no | `0.1` |
//! | `harvest_levels_j` | comma list | no | `0,2,4,6,8` |
//! | `harvest_stay` | probability | no | `0.5` |
//!
//! The harvest chain built from the last two keys is tridiagonal: stay with
//! `harvest_stay`, move one level up or down with half the remainder each,
//! reflecting at the ends.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAX_SF: u32 = 12;
pub const MIN_SF: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GilbertElliottParams {
    /// P(G at i | G at i-1).
    pub lambda1: f64,
    /// P(G at i | B at i-1).
    pub lambda0: f64,
    pub gain_good: f64,
    pub gain_bad: f64,
}

impl Default for GilbertElliottParams {
    fn default() -> Self {
        Self {
            lambda1: 0.9,
            lambda0: 0.3,
            gain_good: 1.0,
            gain_bad: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub devices: usize,
    pub channels: usize,
    pub frames: usize,
    pub sf_set: Vec<u32>,
    pub battery_capacity: f64,
    pub circuit_power_dbm: f64,
    pub frame_duration: f64,
    pub gamma_th_db: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub path_loss_exponent: f64,
    pub cell_radius_m: f64,
    pub seed: u64,
    pub gilbert_elliott: GilbertElliottParams,
    pub harvest_levels: Vec<f64>,
    pub harvest_stay: f64,
}

const REQUIRED: [&str; 8] = [
    "devices",
    "channels",
    "frames",
    "battery_capacity_j",
    "path_loss_exponent",
    "noise_psd_dbm_hz",
    "circuit_power_dbm",
    "cell_radius_m",
];

const OPTIONAL: [&str; 11] = [
    "sf_set",
    "gamma_th_db",
    "frame_duration_s",
    "bandwidth_hz",
    "seed",
    "ge_lambda1",
    "ge_lambda0",
    "ge_gain_good",
    "ge_gain_bad",
    "harvest_levels_j",
    "harvest_stay",
];

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl Default for NetworkConfig {
    /// Reference scenario with a 0 dB SNR target.
    fn default() -> Self {
        Self {
            devices: 35,
            channels: 5,
            frames: 50,
            sf_set: (MIN_SF..=MAX_SF).collect(),
            battery_capacity: 200.0,
            circuit_power_dbm: 30.0,
            frame_duration: 1.0,
            gamma_th_db: 0.0,
            bandwidth_hz: 125_000.0,
            noise_psd_dbm_hz: -174.0,
            path_loss_exponent: 3.7,
            cell_radius_m: 500.0,
            seed: 0,
            gilbert_elliott: GilbertElliottParams::default(),
            harvest_levels: vec![0.0, 2.0, 4.0, 6.0, 8.0],
            harvest_stay: 0.5,
        }
    }
}

impl NetworkConfig {
    /// Devices one channel can carry at once (one per spreading factor).
    pub fn sf_capacity(&self) -> usize {
        self.sf_set.len()
    }

    /// Duration of one sample, `T_out / 2^12`.
    pub fn sample_time(&self) -> f64 {
        self.frame_duration / f64::from(1u32 << MAX_SF)
    }

    /// Per-channel noise variance in W.
    pub fn noise_variance(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz) * self.bandwidth_hz
    }

    /// Energy drawn by the gateway circuitry during one frame, in J.
    pub fn circuit_energy(&self) -> f64 {
        dbm_to_watts(self.circuit_power_dbm) * self.frame_duration
    }

    pub fn gamma_th(&self) -> f64 {
        db_to_linear(self.gamma_th_db)
    }

    /// Slots available per frame, `M * N`.
    pub fn slots(&self) -> usize {
        self.channels * self.sf_capacity()
    }

    /// Devices that must be scheduled each frame.
    pub fn scheduled_per_frame(&self) -> usize {
        self.devices.min(self.slots())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        for key in REQUIRED {
            if !entries.contains_key(key) {
                return Err(Error::MissingKey(key.to_string()));
            }
        }
        let mut cfg = NetworkConfig::default();
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a single `key=value` override and revalidates.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Syntax {
                line: 0,
                text: assignment.to_string(),
            })?;
        self.set(key.trim(), value.trim())?;
        self.validate()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "devices" => self.devices = parse_num(key, value)?,
            "channels" => self.channels = parse_num(key, value)?,
            "frames" => self.frames = parse_num(key, value)?,
            "battery_capacity_j" => self.battery_capacity = parse_num(key, value)?,
            "path_loss_exponent" => self.path_loss_exponent = parse_num(key, value)?,
            "noise_psd_dbm_hz" => self.noise_psd_dbm_hz = parse_num(key, value)?,
            "circuit_power_dbm" => self.circuit_power_dbm = parse_num(key, value)?,
            "cell_radius_m" => self.cell_radius_m = parse_num(key, value)?,
            "sf_set" => self.sf_set = parse_list(key, value)?,
            "gamma_th_db" => self.gamma_th_db = parse_num(key, value)?,
            "frame_duration_s" => self.frame_duration = parse_num(key, value)?,
            "bandwidth_hz" => self.bandwidth_hz = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "ge_lambda1" => self.gilbert_elliott.lambda1 = parse_num(key, value)?,
            "ge_lambda0" => self.gilbert_elliott.lambda0 = parse_num(key, value)?,
            "ge_gain_good" => self.gilbert_elliott.gain_good = parse_num(key, value)?,
            "ge_gain_bad" => self.gilbert_elliott.gain_bad = parse_num(key, value)?,
            "harvest_levels_j" => self.harvest_levels = parse_list(key, value)?,
            "harvest_stay" => self.harvest_stay = parse_num(key, value)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(key, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("devices", self.devices)?;
        positive("channels", self.channels)?;
        positive("frames", self.frames)?;

        if self.sf_set.is_empty() {
            return Err(Error::invalid("sf_set", "must not be empty"));
        }
        if let Some(sf) = self.sf_set.iter().find(|sf| !(MIN_SF..=MAX_SF).contains(*sf)) {
            return Err(Error::invalid("sf_set", format!("{sf} outside 7..=12")));
        }
        if self.sf_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sf_set", "must be strictly increasing"));
        }

        let nonneg = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(key, format!("{v} must be finite and >= 0")))
            }
        };
        let strictly_positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(key, format!("{v} must be finite and > 0")))
            }
        };
        nonneg("battery_capacity_j", self.battery_capacity)?;
        strictly_positive("frame_duration_s", self.frame_duration)?;
        strictly_positive("bandwidth_hz", self.bandwidth_hz)?;
        strictly_positive("cell_radius_m", self.cell_radius_m)?;
        strictly_positive("path_loss_exponent", self.path_loss_exponent)?;
        for (key, v) in [
            ("gamma_th_db", self.gamma_th_db),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
            ("circuit_power_dbm", self.circuit_power_dbm),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(key, "must be finite"));
            }
        }
        if !(self.noise_variance() > 0.0) {
            return Err(Error::invalid("noise_psd_dbm_hz", "noise variance underflows to zero"));
        }

        let ge = &self.gilbert_elliott;
        for (key, p) in [("ge_lambda1", ge.lambda1), ("ge_lambda0", ge.lambda0)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(key, format!("{p} is not a probability")));
            }
        }
        if !(ge.gain_bad > 0.0 && ge.gain_good > ge.gain_bad && ge.gain_good.is_finite()) {
            return Err(Error::invalid(
                "ge_gain_good",
                "need ge_gain_good > ge_gain_bad > 0",
            ));
        }

        if self.harvest_levels.is_empty() {
            return Err(Error::invalid("harvest_levels_j", "must not be empty"));
        }
        for &w in &self.harvest_levels {
            nonneg("harvest_levels_j", w)?;
        }
        if !(0.0..=1.0).contains(&self.harvest_stay) {
            return Err(Error::invalid("harvest_stay", "not a probability"));
        }
        Ok(())
    }

    /// Writes every key, required and optional, in a fixed order.
    pub fn to_document(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let sfs = self
            .sf_set
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let ge = &self.gilbert_elliott;
        let mut out = String::new();
        let _ = writeln!(out, "devices = {}", self.devices);
        let _ = writeln!(out, "channels = {}", self.channels);
        let _ = writeln!(out, "frames = {}", self.frames);
        let _ = writeln!(out, "battery_capacity_j = {}", self.battery_capacity);
        let _ = writeln!(out, "path_loss_exponent = {}", self.path_loss_exponent);
        let _ = writeln!(out, "noise_psd_dbm_hz = {}", self.noise_psd_dbm_hz);
        let _ = writeln!(out, "circuit_power_dbm = {}", self.circuit_power_dbm);
        let _ = writeln!(out, "cell_radius_m = {}", self.cell_radius_m);
        let _ = writeln!(out, "sf_set = {sfs}");
        let _ = writeln!(out, "gamma_th_db = {}", self.gamma_th_db);
        let _ = writeln!(out, "frame_duration_s = {}", self.frame_duration);
        let _ = writeln!(out, "bandwidth_hz = {}", self.bandwidth_hz);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "ge_lambda1 = {}", ge.lambda1);
        let _ = writeln!(out, "ge_lambda0 = {}", ge.lambda0);
        let _ = writeln!(out, "ge_gain_good = {}", ge.gain_good);
        let _ = writeln!(out, "ge_gain_bad = {}", ge.gain_bad);
        let _ = writeln!(out, "harvest_levels_j = {}", list(&self.harvest_levels));
        let _ = writeln!(out, "harvest_stay = {}", self.harvest_stay);
        out
    }
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Syntax {
            line: idx + 1,
            text: raw.to_string(),
        })?;
        let key = key.trim();
        if !REQUIRED.contains(&key) && !OPTIONAL.contains(&key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        if entries
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(Error::DuplicateKey(key.to_string()));
        }
    }
    Ok(entries)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::invalid(key, format!("`{value}`: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|s| parse_num(key, s.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const REFERENCE_DOC: &str = "\
# Simulation parameters
devices = 35
frames = 50
channels = 5
battery_capacity_j = 200
path_loss_exponent = 3.7
noise_psd_dbm_hz = -174
circuit_power_dbm = 30
cell_radius_m = 500
";

    #[test]
    fn reference_document() {
        let cfg = NetworkConfig::parse(REFERENCE_DOC).unwrap();
        assert_eq!(cfg.devices, 35);
        assert_eq!(cfg.frames, 50);
        assert_eq!(cfg.channels, 5);
        assert_eq!(cfg.battery_capacity, 200.0);
        assert_eq!(cfg.path_loss_exponent, 3.7);
        assert_eq!(cfg.noise_psd_dbm_hz, -174.0);
        assert_eq!(cfg.cell_radius_m, 500.0);
        assert_relative_eq!(cfg.circuit_energy(), 1.0, max_relative = 1e-12);
        assert_eq!(cfg.sf_capacity(), 6);
        assert_relative_eq!(cfg.sample_time(), 1.0 / 4096.0);
        assert_eq!(cfg, NetworkConfig::default());
    }

    #[test]
    fn singleton_sf_set() {
        let cfg = NetworkConfig::parse(&format!("{REFERENCE_DOC}sf_set = 7\n")).unwrap();
        assert_eq!(cfg.sf_capacity(), 1);
    }

    #[test]
    fn noise_variance_from_psd() {
        // -174 dBm/Hz = 10^(-20.4) W/Hz, times 125 kHz.
        let cfg = NetworkConfig::default();
        let expected = 10f64.powf(-20.4) * 125_000.0;
        assert_relative_eq!(cfg.noise_variance(), expected, max_relative = 1e-12);
        assert_relative_eq!(cfg.noise_variance(), 4.98e-16, max_relative = 1e-3);
    }

    #[test]
    fn missing_and_duplicate_keys_are_named() {
        let err = NetworkConfig::parse("devices = 3\n").unwrap_err();
        assert!(matches!(err, Error::MissingKey(ref k) if k == "channels"), "{err}");
        let err = NetworkConfig::parse(&format!("{REFERENCE_DOC}devices = 4\n")).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey(ref k) if k == "devices"));
        let err = NetworkConfig::parse(&format!("{REFERENCE_DOC}device = 4\n")).unwrap_err();
        assert!(matches!(err, Error::UnknownKey(_)));
    }

    #[test]
    fn range_errors() {
        for (extra, key) in [
            ("sf_set = 8,7", "sf_set"),
            ("sf_set = 6,7", "sf_set"),
            ("sf_set = 7,7", "sf_set"),
            ("ge_lambda1 = 1.5", "ge_lambda1"),
        ] {
            let err = NetworkConfig::parse(&format!("{REFERENCE_DOC}{extra}\n")).unwrap_err();
            match err {
                Error::InvalidValue { key: k, .. } => assert_eq!(k, key),
                other => panic!("unexpected {other}"),
            }
        }
        let bad = REFERENCE_DOC.replace("channels = 5", "channels = 0");
        assert!(NetworkConfig::parse(&bad).is_err());
        let bad = REFERENCE_DOC.replace("battery_capacity_j = 200", "battery_capacity_j = -1");
        assert!(NetworkConfig::parse(&bad).is_err());
        let bad = REFERENCE_DOC.replace("devices = 35", "devices = many");
        assert!(NetworkConfig::parse(&bad).is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = NetworkConfig::default();
        cfg.apply_override("gamma_th_db=-20").unwrap();
        assert_relative_eq!(cfg.gamma_th(), 0.01, max_relative = 1e-12);
        assert!(cfg.apply_override("sf_set=9,8").is_err());
        assert!(cfg.apply_override("nonsense").is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = NetworkConfig::default();
        cfg.sf_set = vec![7, 9, 11];
        cfg.gamma_th_db = -7.3;
        cfg.harvest_levels = vec![0.0, 0.25, 1.5];
        cfg.seed = 99;
        let back = NetworkConfig::parse(&cfg.to_document()).unwrap();
        assert_eq!(back, cfg);
    }
}
