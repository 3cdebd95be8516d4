//! Chirp spread modulation at baseband.
//!
//! Symbol `s` at spreading factor `a` is the base chirp cyclically shifted by
//! `s`, which is the same as the base chirp times the `s`-th DFT tone. The
//! receiver therefore dechirps and takes one FFT to get the projections onto
//! every candidate template at once.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::config::{db_to_linear, MAX_SF, MIN_SF};
use crate::error::{Error, Result};

/// Samples per frame slot, `2^12`. Shorter symbols are zero-padded.
pub const WAVEFORM_LEN: usize = 1 << MAX_SF;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsmSymbol {
    sf: u32,
    value: u32,
}

impl CsmSymbol {
    pub fn new(sf: u32, value: u32) -> Result<Self> {
        if !(MIN_SF..=MAX_SF).contains(&sf) {
            return Err(Error::invalid("sf", format!("{sf} outside {MIN_SF}..={MAX_SF}")));
        }
        if value >= 1 << sf {
            return Err(Error::invalid("symbol", format!("{value} does not fit in SF {sf}")));
        }
        Ok(Self { sf, value })
    }

    pub fn sf(&self) -> u32 {
        self.sf
    }

    pub fn value(&self) -> u32 {
        self.value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsmWaveform {
    pub samples: Vec<Complex64>,
}

impl CsmWaveform {
    /// `<self, other> = sum self[f] * conj(other[f])`.
    pub fn inner(&self, other: &CsmWaveform) -> Complex64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a * b.conj())
            .sum()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x.norm_sqr()).sum()
    }
}

/// `exp(j 2 pi f^2 / n)`, computed with the exponent reduced mod `n`.
fn base_chirp(sf: u32) -> Vec<Complex64> {
    let n = 1u64 << sf;
    (0..n)
        .map(|f| {
            let phase = (f * f) % n;
            Complex64::from_polar(1.0, std::f64::consts::TAU * phase as f64 / n as f64)
        })
        .collect()
}

pub fn modulate(symbol: CsmSymbol) -> CsmWaveform {
    let n = 1u64 << symbol.sf;
    let s = u64::from(symbol.value);
    let amp = 1.0 / (n as f64).sqrt();
    let mut samples = vec![Complex64::new(0.0, 0.0); WAVEFORM_LEN];
    for (f, x) in samples.iter_mut().take(n as usize).enumerate() {
        let f = f as u64;
        let phase = (((s + f) % n) * f) % n;
        *x = Complex64::from_polar(amp, std::f64::consts::TAU * phase as f64 / n as f64);
    }
    CsmWaveform { samples }
}

/// Matched-filter receiver for one spreading factor. Reuse it across many
/// symbols; planning the FFT dominates a single call.
pub struct Demodulator {
    sf: u32,
    dechirp: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

impl Demodulator {
    pub fn new(sf: u32) -> Result<Self> {
        CsmSymbol::new(sf, 0)?;
        let n = 1usize << sf;
        let scale = 1.0 / (n as f64).sqrt();
        let dechirp = base_chirp(sf).into_iter().map(|c| c.conj() * scale).collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            sf,
            dechirp,
            fft,
            buf: vec![Complex64::new(0.0, 0.0); n],
        })
    }

    /// `<y, template_s>` for every `s`.
    pub fn projections(&mut self, received: &[Complex64]) -> Result<&[Complex64]> {
        if received.len() != WAVEFORM_LEN {
            return Err(Error::Shape(format!(
                "received vector has {} samples, expected {WAVEFORM_LEN}",
                received.len()
            )));
        }
        for ((b, y), d) in self.buf.iter_mut().zip(received).zip(&self.dechirp) {
            *b = y * d;
        }
        self.fft.process(&mut self.buf);
        Ok(&self.buf)
    }

    /// Argmax over `s` of `|<y, conj(g) template_s>|^2`; ties go to the lowest `s`.
    pub fn decide(&mut self, received: &[Complex64], g: Complex64) -> Result<u32> {
        let weight = g.norm_sqr();
        let proj = self.projections(received)?;
        let mut best = 0;
        let mut best_metric = f64::NEG_INFINITY;
        for (s, p) in proj.iter().enumerate() {
            let metric = weight * p.norm_sqr();
            if metric > best_metric {
                best = s;
                best_metric = metric;
            }
        }
        Ok(best as u32)
    }

    pub fn sf(&self) -> u32 {
        self.sf
    }
}

pub fn demodulate(received: &[Complex64], g: Complex64, sf: u32) -> Result<u32> {
    Demodulator::new(sf)?.decide(received, g)
}

/// Monte Carlo symbol error rate through `y = g x + w` with unit `g`.
///
/// `snr_db` is per sample: the symbol's average sample power `2^-sf` over the
/// noise variance.
pub fn symbol_error_rate<R: Rng + ?Sized>(sf: u32, snr_db: f64, trials: usize, rng: &mut R) -> Result<f64> {
    let mut demod = Demodulator::new(sf)?;
    let n = 1u32 << sf;
    let sigma2 = 1.0 / (f64::from(n) * db_to_linear(snr_db));
    let std = (sigma2 / 2.0).sqrt();
    let g = Complex64::new(1.0, 0.0);
    let mut errors = 0usize;
    let mut y = vec![Complex64::new(0.0, 0.0); WAVEFORM_LEN];
    for _ in 0..trials {
        let s = rng.random_range(0..n);
        let x = modulate(CsmSymbol::new(sf, s)?);
        for (yi, xi) in y.iter_mut().zip(&x.samples) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *yi = g * xi + Complex64::new(re * std, im * std);
        }
        if demod.decide(&y, g)? != s {
            errors += 1;
        }
    }
    Ok(errors as f64 / trials.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Noiseless reconstruction of every symbol through a fixed complex gain.
pub fn check_reconstruction(sf: u32) -> Result<CheckOutcome> {
    let mut demod = Demodulator::new(sf)?;
    let g = Complex64::new(0.6, -0.8) * 1e-4;
    let mut failures = 0usize;
    for s in 0..1u32 << sf {
        let x = modulate(CsmSymbol::new(sf, s)?);
        let y: Vec<Complex64> = x.samples.iter().map(|v| g * v).collect();
        if demod.decide(&y, g)? != s {
            failures += 1;
        }
    }
    Ok(CheckOutcome {
        name: format!("reconstruction sf={sf}"),
        passed: failures == 0,
        detail: format!("{failures} of {} symbols misdecoded", 1u32 << sf),
    })
}

/// Largest `|<x_a, x_b>|` over distinct same-SF symbols, and the largest
/// deviation of a symbol's energy from 1.
pub fn orthogonality_error(sf: u32) -> Result<(f64, f64)> {
    let mut demod = Demodulator::new(sf)?;
    let mut cross = 0.0f64;
    let mut norm = 0.0f64;
    for a in 0..1u32 << sf {
        let x = modulate(CsmSymbol::new(sf, a)?);
        // Projections of x_a onto every template are exactly <x_a, x_b>.
        for (b, p) in demod.projections(&x.samples)?.iter().enumerate() {
            if b as u32 == a {
                norm = norm.max((p.norm() - 1.0).abs());
            } else {
                cross = cross.max(p.norm());
            }
        }
    }
    Ok((cross, norm))
}

pub fn check_orthogonality(sf: u32, tol: f64) -> Result<CheckOutcome> {
    let (cross, norm) = orthogonality_error(sf)?;
    Ok(CheckOutcome {
        name: format!("orthogonality sf={sf}"),
        passed: cross <= tol && norm <= tol,
        detail: format!("max cross {cross:.3e}; max energy deviation {norm:.3e}"),
    })
}
