//! Harvesting source, grid prices and battery bookkeeping.
//!
//! Timing: harvest `E(i)` arrives at the start of frame `i` and is stored
//! before use, so `B(1) = min(B_max, E(1))`, the frame may draw
//! `Xh(i) <= B(i)`, and `B(i+1) = min(B_max, B(i) - Xh(i) + E(i+1))`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};

/// Slack allowed when comparing energies that went through float arithmetic.
pub const ENERGY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestProcess {
    omega: Vec<f64>,
    /// Row-major, `q[m * n + j] = P(next = m | current = j)`.
    q: Vec<f64>,
    state: usize,
}

impl HarvestProcess {
    pub fn new(omega: Vec<f64>, q: Vec<Vec<f64>>, state: usize) -> Result<Self> {
        let n = omega.len();
        if n == 0 {
            return Err(Error::invalid("harvest_levels_j", "at least one level is needed"));
        }
        if let Some(w) = omega.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid("harvest_levels_j", format!("level {w} is not a nonnegative number")));
        }
        if q.len() != n || q.iter().any(|row| row.len() != n) {
            return Err(Error::Shape(format!("transition matrix must be {n}x{n}")));
        }
        for j in 0..n {
            let col: f64 = q.iter().map(|row| row[j]).sum();
            if q.iter().any(|row| !(row[j] >= 0.0)) || (col - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("harvest transition", format!("column {j} is not a distribution")));
            }
        }
        if state >= n {
            return Err(Error::invalid("harvest state", format!("{state} out of {n} levels")));
        }
        Ok(Self {
            omega,
            q: q.into_iter().flatten().collect(),
            state,
        })
    }

    /// Birth-death chain over `levels`: stay with `stay`, move one level either
    /// way with equal probability, reflecting at the ends.
    pub fn tridiagonal(levels: Vec<f64>, stay: f64, state: usize) -> Result<Self> {
        let n = levels.len();
        let mut q = vec![vec![0.0; n]; n];
        if n == 1 {
            q[0][0] = 1.0;
        } else {
            let mv = (1.0 - stay) / 2.0;
            for j in 0..n {
                q[j][j] = stay;
                for t in [j.wrapping_sub(1), j + 1] {
                    // A blocked move at a boundary stays put.
                    let target = if t < n { t } else { j };
                    q[target][j] += mv;
                }
            }
        }
        Self::new(levels, q, state)
    }

    /// The configured chain started from a uniformly drawn level (its
    /// stationary law, since the chain is doubly stochastic).
    pub fn from_config<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        let state = rng.random_range(0..config.harvest_levels.len().max(1));
        Self::tridiagonal(config.harvest_levels.clone(), config.harvest_stay, state)
    }

    /// Harvest model file: Omega values on the first line, then one matrix
    /// row per line. Values are separated by commas or whitespace; `#` starts
    /// a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<f64>().map_err(|e| Error::parse("harvest model", format!("`{t}`: {e}"))))
                    .collect::<Result<Vec<f64>>>()
            });
        let omega = rows
            .next()
            .ok_or_else(|| Error::parse("harvest model", "empty file"))??;
        let q = rows.collect::<Result<Vec<_>>>()?;
        Self::new(omega, q, 0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn with_state(mut self, state: usize) -> Result<Self> {
        if state >= self.omega.len() {
            return Err(Error::invalid("harvest state", format!("{state} out of {} levels", self.omega.len())));
        }
        self.state = state;
        Ok(self)
    }

    pub fn levels(&self) -> &[f64] {
        &self.omega
    }

    pub fn transition(&self, to: usize, from: usize) -> f64 {
        self.q[to * self.omega.len() + from]
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn current(&self) -> f64 {
        self.omega[self.state]
    }

    /// Moves to the next level and returns its harvest.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let n = self.omega.len();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = None;
        for m in 0..n {
            let p = self.transition(m, self.state);
            acc += p;
            if p > 0.0 {
                next = Some(m);
                if u < acc {
                    break;
                }
            }
        }
        self.state = next.unwrap_or(self.state);
        self.current()
    }
}

/// Grid price weight, uniform on `[0, 1)`.
pub fn sample_weight<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

pub fn update_battery(b: f64, xh: f64, e: f64, b_max: f64) -> Result<f64> {
    if xh > b + ENERGY_TOL || xh < -ENERGY_TOL {
        return Err(Error::CausalityViolation {
            requested: xh,
            available: b,
        });
    }
    Ok((b - xh + e).clamp(0.0, b_max))
}

/// Online rule: cover as much as the battery allows, buy the rest.
pub fn greedy_split(x: f64, b: f64) -> (f64, f64) {
    let xh = x.min(b).max(0.0);
    (xh, x - xh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEnergy {
    pub e: f64,
    pub w: f64,
    pub x: f64,
    pub xh: f64,
    pub xg: f64,
    /// Battery level available at the start of the frame.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyTrace {
    pub frames: Vec<FrameEnergy>,
}

pub const TRACE_CSV_HEADER: &str = "i,E,W,X,Xh,Xg,B";

impl EnergyTrace {
    /// Drives the battery through `e`, `w`, `x`, asking `policy(i, x, b)`
    /// for each frame's battery draw.
    pub fn run(
        e: &[f64],
        w: &[f64],
        x: &[f64],
        b_max: f64,
        mut policy: impl FnMut(usize, f64, f64) -> f64,
    ) -> Result<Self> {
        if e.len() != w.len() || e.len() != x.len() {
            return Err(Error::Shape(format!(
                "trace lengths differ: E {}, W {}, X {}",
                e.len(),
                w.len(),
                x.len()
            )));
        }
        let mut frames = Vec::with_capacity(e.len());
        let mut b = e.first().map_or(0.0, |&e0| e0.min(b_max));
        for i in 0..e.len() {
            let xh = policy(i, x[i], b);
            if xh > x[i] + ENERGY_TOL {
                return Err(Error::PlannerInput(format!("frame {i}: draw {xh} exceeds demand {}", x[i])));
            }
            let xh = xh.min(x[i]);
            let next_e = e.get(i + 1).copied().unwrap_or(0.0);
            let b_next = update_battery(b, xh, next_e, b_max)?;
            frames.push(FrameEnergy {
                e: e[i],
                w: w[i],
                x: x[i],
                xh,
                xg: x[i] - xh,
                b,
            });
            b = b_next;
        }
        Ok(Self { frames })
    }

    pub fn greedy(e: &[f64], w: &[f64], x: &[f64], b_max: f64) -> Result<Self> {
        Self::run(e, w, x, b_max, |_, x, b| greedy_split(x, b).0)
    }

    /// Replays a fixed draw schedule; fails on any causality violation.
    pub fn replay(e: &[f64], w: &[f64], x: &[f64], xh: &[f64], b_max: f64) -> Result<Self> {
        if xh.len() != x.len() {
            return Err(Error::Shape(format!("{} draws for {} frames", xh.len(), x.len())));
        }
        Self::run(e, w, x, b_max, |i, _, _| xh[i])
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn total_harvest_used(&self) -> f64 {
        self.frames.iter().map(|f| f.xh).sum()
    }

    pub fn total_grid(&self) -> f64 {
        self.frames.iter().map(|f| f.xg).sum()
    }

    /// Checks bounds, conservation, causality and the battery recursion.
    pub fn audit(&self, b_max: f64) -> Result<()> {
        let bad = |i: usize, what: &str| Err(Error::PlannerInput(format!("frame {i}: {what}")));
        for (i, f) in self.frames.iter().enumerate() {
            let tol = ENERGY_TOL * f.x.abs().max(1.0);
            if f.b < -ENERGY_TOL || f.b > b_max + ENERGY_TOL {
                return bad(i, "battery out of bounds");
            }
            if f.xh < -tol || f.xg < -tol || (f.xh + f.xg - f.x).abs() > tol {
                return bad(i, "draws do not add up to demand");
            }
            if f.xh > f.b + ENERGY_TOL {
                return bad(i, "draw exceeds stored energy");
            }
            let expected = if i == 0 {
                f.e.min(b_max)
            } else {
                let p = &self.frames[i - 1];
                (p.b - p.xh + f.e).clamp(0.0, b_max)
            };
            if (expected - f.b).abs() > ENERGY_TOL * expected.max(1.0) {
                return bad(i, "battery does not follow the recursion");
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRACE_CSV_HEADER}\n");
        for (i, f) in self.frames.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{},{},{}", i + 1, f.e, f.w, f.x, f.xh, f.xg, f.b);
        }
        out
    }
}

/// `Delta = sum_i W_i Xg(i)`.
pub fn grid_cost(trace: &EnergyTrace) -> f64 {
    trace.frames.iter().map(|f| f.w * f.xg).sum()
}

/// Reads named numeric columns from a CSV with a header row.
pub fn read_columns(text: &str, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::parse("csv", "missing header"))?
        .split(',')
        .map(str::trim)
        .collect();
    let idx = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::parse("csv", format!("no `{n}` column")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (ln, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        for (c, &i) in idx.iter().enumerate() {
            let cell = cells
                .get(i)
                .ok_or_else(|| Error::parse("csv", format!("row {} is short", ln + 2)))?;
            let v = cell
                .parse::<f64>()
                .map_err(|e| Error::parse("csv", format!("row {}: `{cell}`: {e}", ln + 2)))?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}
