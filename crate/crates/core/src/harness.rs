//! Seeded Monte Carlo experiments over whole trajectories.
//!
//! Every trial draws its topology, channels, harvest and prices from one
//! stream seeded by `derive_seed(base, sweep_index, trial_index)`, in the
//! same order whatever the scheme. Schemes that need randomness of their
//! own use a second stream derived from the trial seed, so runs of
//! different schemes on the same seeds see identical environments and can
//! be compared pairwise.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;

use crate::assignment::{
    brute_force_optimal, hcrma_frame, hurma_frame, random_assignment, round_robin, search_space_size, Assignment,
    DEFAULT_SEARCH_CAP,
};
use crate::channel::{frame_energy, sample_iid_channels, sample_topology, ChannelRealization, GilbertElliottProcess};
use crate::config::NetworkConfig;
use crate::ddpg::{EnergyAgent, EnergyEpisode};
use crate::energy::{grid_cost, sample_weight, EnergyTrace, HarvestProcess, ENERGY_TOL};
use crate::error::{Error, Result};
use crate::planner::{solve_offline, PlannerInput};
use crate::ppo::ChannelAgent;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    Iid,
    GilbertElliott,
}

impl FromStr for ChannelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Self::Iid),
            "ge" | "gilbert-elliott" => Ok(Self::GilbertElliott),
            _ => Err(Error::invalid("mode", format!("`{s}` is not iid or ge"))),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Iid => "iid",
            Self::GilbertElliott => "ge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Exhaustive assignment with the offline energy plan.
    Optimal,
    Hurma,
    Hcrma,
    Random,
    RoundRobin,
    /// Learned assignment and learned energy split.
    Rl,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Self::Optimal),
            "hurma" => Ok(Self::Hurma),
            "hcrma" => Ok(Self::Hcrma),
            "random" => Ok(Self::Random),
            "rr" | "round-robin" => Ok(Self::RoundRobin),
            "rl" => Ok(Self::Rl),
            _ => Err(Error::invalid("scheme", format!("unknown scheme `{s}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Optimal => "optimal",
            Self::Hurma => "hurma",
            Self::Hcrma => "hcrma",
            Self::Random => "random",
            Self::RoundRobin => "rr",
            Self::Rl => "rl",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    None,
    GammaThDb,
    Channels,
    BatteryCapacity,
}

impl FromStr for SweepVar {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "gamma_th_db" | "gamma" => Ok(Self::GammaThDb),
            "channels" | "M" => Ok(Self::Channels),
            "battery_capacity_j" | "bmax" => Ok(Self::BatteryCapacity),
            _ => Err(Error::invalid("sweep", format!("unknown sweep variable `{s}`"))),
        }
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::GammaThDb => "gamma_th_db",
            Self::Channels => "channels",
            Self::BatteryCapacity => "battery_capacity_j",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: NetworkConfig,
    pub mode: ChannelMode,
    pub scheme: Scheme,
    pub sweep: SweepVar,
    /// Ignored when `sweep` is `None`.
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Overrides the configured harvest chain; the start level is drawn
    /// uniformly per trial.
    pub harvest: Option<HarvestProcess>,
    pub search_cap: u128,
}

impl Scenario {
    pub fn new(config: NetworkConfig, mode: ChannelMode, scheme: Scheme) -> Self {
        Self {
            seed: config.seed,
            config,
            mode,
            scheme,
            sweep: SweepVar::None,
            values: Vec::new(),
            trials: 1000,
            harvest: None,
            search_cap: DEFAULT_SEARCH_CAP,
        }
    }

    /// Sweep points as `(value, config)`; a single point without a sweep.
    pub fn points(&self) -> Vec<(f64, NetworkConfig)> {
        if self.sweep == SweepVar::None {
            return vec![(f64::NAN, self.config.clone())];
        }
        self.values
            .iter()
            .map(|&v| {
                let mut c = self.config.clone();
                match self.sweep {
                    SweepVar::GammaThDb => c.gamma_th_db = v,
                    SweepVar::Channels => c.channels = v.max(0.0).round() as usize,
                    SweepVar::BatteryCapacity => c.battery_capacity = v,
                    SweepVar::None => {}
                }
                (v, c)
            })
            .collect()
    }

    pub fn validate(&self, agents: Option<&RlAgents>) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Scenario("at least one trial is needed".into()));
        }
        if self.sweep != SweepVar::None && self.values.is_empty() {
            return Err(Error::Scenario(format!("sweep over {} has no values", self.sweep)));
        }
        for (_, c) in self.points() {
            if self.scheme == Scheme::Optimal {
                let count = search_space_size(c.devices, c.channels, c.sf_capacity());
                if count > self.search_cap {
                    return Err(Error::InstanceTooLarge {
                        count,
                        cap: self.search_cap,
                    });
                }
            }
            if self.scheme == Scheme::Rl && agents.is_none() {
                return Err(Error::Scenario("the rl scheme needs trained channel and energy agents".into()));
            }
        }
        Ok(())
    }
}

/// Trained policies used by [`Scheme::Rl`].
#[derive(Debug, Clone)]
pub struct RlAgents {
    pub channel: ChannelAgent,
    pub energy: EnergyAgent,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub grid_cost: f64,
    pub trace: EnergyTrace,
    /// Fraction of frames whose energy draw met every constraint (RL only).
    pub accuracy: Option<f64>,
}

fn assign(
    scheme: Scheme,
    frame: usize,
    realization: &ChannelRealization,
    topology: &crate::channel::Topology,
    config: &NetworkConfig,
    agents: Option<&RlAgents>,
    search_cap: u128,
    rng: &mut crate::rng::SimRng,
) -> Result<Assignment> {
    Ok(match scheme {
        Scheme::Optimal => brute_force_optimal(realization, config, search_cap)?,
        Scheme::Hurma => hurma_frame(realization, config),
        Scheme::Hcrma => hcrma_frame(realization, topology, config),
        Scheme::Random => random_assignment(rng, config),
        Scheme::RoundRobin => round_robin(frame, config),
        Scheme::Rl => agents
            .ok_or_else(|| Error::Scenario("missing trained agents".into()))?
            .channel
            .assign_frame(realization, config),
    })
}

/// Demand, harvest and prices of one trajectory, with its assignments.
pub fn simulate_inputs(
    scenario: &Scenario,
    config: &NetworkConfig,
    sweep_index: usize,
    trial_index: usize,
    agents: Option<&RlAgents>,
) -> Result<(EnergyEpisode, Vec<Assignment>)> {
    let t = simulate_trajectory(scenario, config, sweep_index, trial_index, agents)?;
    Ok((t.episode, t.assignments))
}

/// Everything one trial draws and decides, frame by frame.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub episode: EnergyEpisode,
    pub assignments: Vec<Assignment>,
    pub realizations: Vec<ChannelRealization>,
}

/// Like [`simulate_inputs`] but keeps the channel draws. The environment
/// stream does not depend on the scheme, so every scheme sees the same
/// channels for a given trial.
pub fn simulate_trajectory(
    scenario: &Scenario,
    config: &NetworkConfig,
    sweep_index: usize,
    trial_index: usize,
    agents: Option<&RlAgents>,
) -> Result<Trajectory> {
    let seed = derive_seed(scenario.seed, sweep_index as u64, trial_index as u64);
    let mut env = rng_from_seed(seed);
    let mut own = rng_from_seed(derive_seed(seed, u64::MAX, 0));

    let topology = sample_topology(config, &mut env);
    let mut ge = match scenario.mode {
        ChannelMode::GilbertElliott => Some(GilbertElliottProcess::stationary(
            config.gilbert_elliott,
            config.devices,
            config.channels,
            &mut env,
        )),
        ChannelMode::Iid => None,
    };
    let mut harvest = match &scenario.harvest {
        Some(h) => {
            let start = env.random_range(0..h.levels().len());
            h.clone().with_state(start)?
        }
        None => HarvestProcess::from_config(config, &mut env)?,
    };
    let l = config.frames;
    let mut ep = EnergyEpisode {
        e: Vec::with_capacity(l),
        w: Vec::with_capacity(l),
        x: Vec::with_capacity(l),
    };
    let mut assignments = Vec::with_capacity(l);
    let mut realizations = Vec::with_capacity(l);
    for i in 0..l {
        let realization = match &mut ge {
            Some(ge) => {
                let mut r = ge.step(&topology, &mut env);
                r.frame_index = i;
                r
            }
            None => sample_iid_channels(&topology, config, i, &mut env),
        };
        ep.e.push(if i == 0 { harvest.current() } else { harvest.step(&mut env) });
        ep.w.push(sample_weight(&mut env));
        let a = assign(
            scenario.scheme,
            i,
            &realization,
            &topology,
            config,
            agents,
            scenario.search_cap,
            &mut own,
        )?;
        a.validate(config)?;
        ep.x.push(frame_energy(&a, &realization, config)?);
        assignments.push(a);
        realizations.push(realization);
    }
    Ok(Trajectory {
        episode: ep,
        assignments,
        realizations,
    })
}

pub fn run_trial(
    scenario: &Scenario,
    config: &NetworkConfig,
    sweep_index: usize,
    trial_index: usize,
    agents: Option<&RlAgents>,
) -> Result<TrialResult> {
    let (ep, _) = simulate_inputs(scenario, config, sweep_index, trial_index, agents)?;
    let b_max = config.battery_capacity;
    let (trace, accuracy) = match scenario.scheme {
        Scheme::Optimal => {
            let input = PlannerInput {
                x: ep.x.clone(),
                e: ep.e.clone(),
                w: ep.w.clone(),
                b_max,
            };
            let plan = solve_offline(&input)?;
            (input.replay(&plan.xh)?, None)
        }
        Scheme::Rl => {
            let agent = &agents.ok_or_else(|| Error::Scenario("missing trained agents".into()))?.energy;
            let trace = agent.run(&ep, b_max)?;
            let ok = trace
                .frames
                .iter()
                .filter(|f| f.xh <= f.b + ENERGY_TOL && f.xh <= f.x + ENERGY_TOL && f.xh >= 0.0)
                .count();
            let acc = ok as f64 / trace.len().max(1) as f64;
            (trace, Some(acc))
        }
        _ => (EnergyTrace::greedy(&ep.e, &ep.w, &ep.x, b_max)?, None),
    };
    trace.audit(b_max)?;
    Ok(TrialResult {
        grid_cost: grid_cost(&trace),
        trace,
        accuracy,
    })
}

/// All trials of one sweep point, in trial order.
pub fn run_point(
    scenario: &Scenario,
    config: &NetworkConfig,
    sweep_index: usize,
    agents: Option<&RlAgents>,
) -> Result<Vec<TrialResult>> {
    (0..scenario.trials)
        .into_par_iter()
        .map(|t| run_trial(scenario, config, sweep_index, t, agents))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep: SweepVar,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub mode: ChannelMode,
    pub trials: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub mean_harvested: f64,
    pub mean_grid: f64,
    pub accuracy: Option<f64>,
    pub wall_s: Option<f64>,
}

impl ResultRow {
    pub fn stderr_cost(&self) -> f64 {
        self.std_cost / (self.trials as f64).sqrt()
    }
}

/// Sum in a fixed tree order, so results do not depend on scheduling.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Sample mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0)).sqrt())
}

pub fn summarize(scenario: &Scenario, sweep_value: f64, trials: &[TrialResult], wall_s: Option<f64>) -> ResultRow {
    let costs: Vec<f64> = trials.iter().map(|t| t.grid_cost).collect();
    let harvested: Vec<f64> = trials.iter().map(|t| t.trace.total_harvest_used()).collect();
    let grid: Vec<f64> = trials.iter().map(|t| t.trace.total_grid()).collect();
    let (mean_cost, std_cost) = mean_std(&costs);
    let accuracy = if scenario.scheme == Scheme::Rl {
        let acc: Vec<f64> = trials.iter().filter_map(|t| t.accuracy).collect();
        Some(mean_std(&acc).0)
    } else {
        None
    };
    ResultRow {
        sweep: scenario.sweep,
        sweep_value,
        scheme: scenario.scheme,
        mode: scenario.mode,
        trials: trials.len(),
        mean_cost,
        std_cost,
        mean_harvested: mean_std(&harvested).0,
        mean_grid: mean_std(&grid).0,
        accuracy,
        wall_s,
    }
}

/// One row per sweep point. Wall time is recorded only when `timing` is
/// set, since it would break byte-identical reruns.
pub fn run_scenario(scenario: &Scenario, agents: Option<&RlAgents>, timing: bool) -> Result<Vec<ResultRow>> {
    scenario.validate(agents)?;
    scenario
        .points()
        .into_iter()
        .enumerate()
        .map(|(idx, (value, config))| {
            let start = Instant::now();
            let trials = run_point(scenario, &config, idx, agents)?;
            let wall = timing.then(|| start.elapsed().as_secs_f64());
            Ok(summarize(scenario, value, &trials, wall))
        })
        .collect()
}

/// Grid cost against the number of channels.
pub fn sweep_channels(
    scenario: &Scenario,
    channels: &[usize],
    agents: Option<&RlAgents>,
    timing: bool,
) -> Result<Vec<ResultRow>> {
    let s = Scenario {
        sweep: SweepVar::Channels,
        values: channels.iter().map(|&m| m as f64).collect(),
        ..scenario.clone()
    };
    run_scenario(&s, agents, timing)
}

pub fn results_header(timing: bool) -> String {
    let mut h = String::from(
        "sweep,sweep_value,scheme,mode,trials,mean_cost,std_cost,stderr_cost,mean_harvested,mean_grid,accuracy",
    );
    if timing {
        h.push_str(",wall_s");
    }
    h
}

pub fn results_to_csv(rows: &[ResultRow], timing: bool) -> String {
    let mut out = results_header(timing);
    out.push('\n');
    for r in rows {
        let value = if r.sweep_value.is_nan() {
            String::new()
        } else {
            r.sweep_value.to_string()
        };
        let acc = r.accuracy.map_or(String::new(), |a| a.to_string());
        let _ = write!(
            out,
            "{},{value},{},{},{},{},{},{},{},{},{acc}",
            r.sweep,
            r.scheme,
            r.mode,
            r.trials,
            r.mean_cost,
            r.std_cost,
            r.stderr_cost(),
            r.mean_harvested,
            r.mean_grid
        );
        if timing {
            let _ = write!(out, ",{}", r.wall_s.unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulativePoint {
    pub frame: usize,
    pub grid: f64,
    pub harvested: f64,
}

/// Mean cumulative grid and harvested energy per frame across trajectories.
pub fn cumulative_report(traces: &[EnergyTrace]) -> Vec<CumulativePoint> {
    let frames = traces.iter().map(EnergyTrace::len).max().unwrap_or(0);
    let n = traces.len().max(1) as f64;
    let mut grid = vec![0.0; frames];
    let mut harvested = vec![0.0; frames];
    for t in traces {
        let (mut g, mut h) = (0.0, 0.0);
        for i in 0..frames {
            if let Some(f) = t.frames.get(i) {
                g += f.xg;
                h += f.xh;
            }
            grid[i] += g;
            harvested[i] += h;
        }
    }
    (0..frames)
        .map(|i| CumulativePoint {
            frame: i + 1,
            grid: grid[i] / n,
            harvested: harvested[i] / n,
        })
        .collect()
}

pub fn cumulative_to_csv(points: &[CumulativePoint]) -> String {
    let mut out = String::from("frame,cum_grid,cum_harvested\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.frame, p.grid, p.harvested);
    }
    out
}

/// Companion gnuplot script plotting columns of `csv_file` against `x`.
/// When `group` is set, one line is drawn per distinct value in `groups`.
pub fn gnuplot_script(csv_file: &str, x: &str, y: &str, group: Option<(&str, &[String])>, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel '{x}'");
    let _ = writeln!(s, "set ylabel '{y}'");
    let _ = writeln!(s, "set grid");
    match group {
        Some((col, values)) if !values.is_empty() => {
            let parts: Vec<String> = values
                .iter()
                .map(|v| {
                    format!(
                        "'{csv_file}' using (column('{x}')):(strcol('{col}') eq '{v}' ? column('{y}') : NaN) with linespoints title '{v}'"
                    )
                })
                .collect();
            let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
        }
        _ => {
            let _ = writeln!(s, "plot '{csv_file}' using '{x}':'{y}' with linespoints");
        }
    }
    let _ = writeln!(s, "pause mouse close");
    s
}
