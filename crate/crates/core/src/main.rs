use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lora_hybrid::assignment::{
    brute_force_optimal, hcrma_frame, hurma_frame, objective, random_assignment, round_robin,
};
use lora_hybrid::channel::{sample_iid_channels, sample_topology};
use lora_hybrid::config::NetworkConfig;
use lora_hybrid::csm::{check_orthogonality, check_reconstruction};
use lora_hybrid::ddpg::{energy_logs_to_csv, train_energy_agent, DdpgConfig, EnergyAgent, EnergyEpisode};
use lora_hybrid::energy::{read_columns, HarvestProcess};
use lora_hybrid::harness::{
    cumulative_report, cumulative_to_csv, gnuplot_script, results_to_csv, run_point, run_scenario,
    simulate_inputs, simulate_trajectory, ChannelMode, RlAgents, Scenario, Scheme, SweepVar,
};
use lora_hybrid::nn::Mlp;
use lora_hybrid::planner::{dp_oracle, quantization_bound, solve_offline, PlannerInput, DEFAULT_GRID_STEP, DEFAULT_STATE_CAP};
use lora_hybrid::ppo::{episode_logs_to_csv, train_channel_agent, ChannelAgent, PpoConfig};
use lora_hybrid::rng::{derive_seed, rng_from_seed};
use lora_hybrid::{Error, Result};

#[derive(Parser)]
#[command(name = "lora-hybrid", version, about = "Hybrid-energy LoRa downlink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-key override, e.g. `--set channels=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    emit_gnuplot: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "hurma")]
    scheme: String,
    /// `iid` or `ge`.
    #[arg(long, default_value = "iid")]
    mode: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Harvest model file replacing the configured chain.
    #[arg(long)]
    harvest_model: Option<PathBuf>,
    /// Channel policy checkpoint for the rl scheme.
    #[arg(long)]
    channel_policy: Option<PathBuf>,
    /// Energy agent checkpoint for the rl scheme.
    #[arg(long)]
    energy_policy: Option<PathBuf>,
    /// Append measured wall time (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo grid cost of one scheme.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        /// Emit per-frame cumulative grid and harvested energy instead.
        #[arg(long)]
        cumulative: bool,
    },
    /// Grid cost over a parameter grid, one or more schemes.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        /// gamma_th_db, channels or battery_capacity_j.
        #[arg(long)]
        var: String,
        /// Comma-separated grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        /// Extra schemes run on the same seeds.
        #[arg(long, value_delimiter = ',')]
        also: Vec<String>,
    },
    /// Train the channel and SF selection policy.
    TrainChannel {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        /// Episodes span every frame of a correlated channel.
        #[arg(long)]
        correlated: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Train the harvested-energy allocation agent.
    TrainEnergy {
        #[command(flatten)]
        common: Common,
        /// CSV with an `X` column giving per-frame demand.
        #[arg(long)]
        assignments: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        episodes: usize,
        #[arg(long)]
        harvest_model: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Offline optimal battery draws for a trace with E, W, X columns.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Cross-check against the quantized dynamic program.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
    },
    /// Modulation orthogonality and reconstruction checks.
    CsmCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Per-frame objective of every assignment scheme against the exhaustive optimum.
    OracleCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Dump one frame's assignment.
    Assign {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "hurma")]
        scheme: String,
        #[arg(long, default_value = "iid")]
        mode: String,
        /// Zero-based frame of the seeded trajectory.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        channel_policy: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<NetworkConfig> {
    let mut config = match &common.config {
        Some(p) => NetworkConfig::load(p)?,
        None => NetworkConfig::default(),
    };
    for o in &common.overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    Ok(config)
}

fn emit(common: &Common, csv: &str, plot: impl FnOnce(&str) -> String) -> Result<()> {
    match &common.out {
        Some(path) => {
            fs::write(path, csv)?;
            if common.emit_gnuplot {
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out.csv");
                fs::write(path.with_extension("gp"), plot(name))?;
            }
        }
        None => {
            if common.emit_gnuplot {
                return Err(Error::Scenario("--emit-gnuplot needs --out".into()));
            }
            print!("{csv}");
        }
    }
    Ok(())
}

fn load_agents(
    config: &NetworkConfig,
    correlated: bool,
    channel: Option<&Path>,
    energy: Option<&Path>,
) -> Result<Option<RlAgents>> {
    match (channel, energy) {
        (None, None) => Ok(None),
        (Some(c), Some(e)) => {
            let policy = Mlp::from_bytes(&fs::read(c)?)?;
            Ok(Some(RlAgents {
                channel: ChannelAgent::from_policy(policy, config, correlated)?,
                energy: EnergyAgent::from_bytes(&fs::read(e)?)?,
            }))
        }
        _ => Err(Error::Scenario(
            "the rl scheme needs both --channel-policy and --energy-policy".into(),
        )),
    }
}

fn scenario(config: &NetworkConfig, run: &RunArgs) -> Result<Scenario> {
    let mut s = Scenario::new(config.clone(), run.mode.parse()?, run.scheme.parse()?);
    s.trials = run.trials;
    if let Some(p) = &run.harvest_model {
        s.harvest = Some(HarvestProcess::load(p)?);
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, run, cumulative } => {
            let config = load_config(&common)?;
            let s = scenario(&config, &run)?;
            let agents = load_agents(
                &config,
                s.mode == ChannelMode::GilbertElliott,
                run.channel_policy.as_deref(),
                run.energy_policy.as_deref(),
            )?;
            if cumulative {
                s.validate(agents.as_ref())?;
                let trials = run_point(&s, &s.config, 0, agents.as_ref())?;
                let traces: Vec<_> = trials.into_iter().map(|t| t.trace).collect();
                let csv = cumulative_to_csv(&cumulative_report(&traces));
                emit(&common, &csv, |f| {
                    gnuplot_script(f, "frame", "cum_grid", None, "cumulative grid energy")
                })
            } else {
                let rows = run_scenario(&s, agents.as_ref(), run.timing)?;
                emit(&common, &results_to_csv(&rows, run.timing), |f| {
                    gnuplot_script(f, "trials", "mean_cost", None, "grid energy cost")
                })
            }
        }
        Command::Sweep {
            common,
            run,
            var,
            values,
            also,
        } => {
            let config = load_config(&common)?;
            let mut base = scenario(&config, &run)?;
            base.sweep = var.parse::<SweepVar>()?;
            base.values = values;
            let agents = load_agents(
                &config,
                base.mode == ChannelMode::GilbertElliott,
                run.channel_policy.as_deref(),
                run.energy_policy.as_deref(),
            )?;
            let mut schemes = vec![base.scheme];
            for a in &also {
                schemes.push(a.parse()?);
            }
            let mut rows = Vec::new();
            for scheme in &schemes {
                let s = Scenario {
                    scheme: *scheme,
                    ..base.clone()
                };
                rows.extend(run_scenario(&s, agents.as_ref(), run.timing)?);
            }
            let names: Vec<String> = schemes.iter().map(|s| s.to_string()).collect();
            emit(&common, &results_to_csv(&rows, run.timing), |f| {
                gnuplot_script(f, "sweep_value", "mean_cost", Some(("scheme", &names)), "grid energy cost")
            })
        }
        Command::TrainChannel {
            common,
            episodes,
            correlated,
            checkpoint,
            lr,
        } => {
            let config = load_config(&common)?;
            let mut ppo = PpoConfig {
                episodes,
                correlated,
                seed: config.seed,
                ..PpoConfig::default()
            };
            if let Some(lr) = lr {
                ppo.lr = lr;
            }
            let (agent, logs) = train_channel_agent(&config, &ppo)?;
            if let Some(p) = checkpoint {
                fs::write(p, agent.policy.to_bytes())?;
            }
            emit(&common, &episode_logs_to_csv(&logs), |f| {
                gnuplot_script(f, "episode", "cum_reward", None, "channel agent training")
            })
        }
        Command::TrainEnergy {
            common,
            assignments,
            episodes,
            harvest_model,
            checkpoint,
        } => {
            let config = load_config(&common)?;
            let ddpg = DdpgConfig {
                episodes,
                seed: config.seed,
                ..DdpgConfig::default()
            };
            let mut harvest = match &harvest_model {
                Some(p) => HarvestProcess::load(p)?,
                None => HarvestProcess::tridiagonal(config.harvest_levels.clone(), config.harvest_stay, 0)?,
            };
            let (agent, logs) = match assignments {
                Some(path) => {
                    let x = read_columns(&fs::read_to_string(path)?, &["X"])?.remove(0);
                    train_energy_agent(config.battery_capacity, &ddpg, |_, rng| {
                        EnergyEpisode::sample(&mut harvest, x.clone(), rng)
                    })?
                }
                None => {
                    let mut s = Scenario::new(config.clone(), ChannelMode::Iid, Scheme::Hurma);
                    s.harvest = harvest_model.map(HarvestProcess::load).transpose()?;
                    let mut failure = None;
                    let out = train_energy_agent(config.battery_capacity, &ddpg, |i, _| {
                        match simulate_inputs(&s, &config, 0, i, None) {
                            Ok((ep, _)) => ep,
                            Err(e) => {
                                failure.get_or_insert(e);
                                EnergyEpisode {
                                    e: Vec::new(),
                                    w: Vec::new(),
                                    x: Vec::new(),
                                }
                            }
                        }
                    })?;
                    if let Some(e) = failure {
                        return Err(e);
                    }
                    out
                }
            };
            if let Some(p) = checkpoint {
                fs::write(p, agent.to_bytes())?;
            }
            emit(&common, &energy_logs_to_csv(&logs), |f| {
                gnuplot_script(f, "episode", "cum_reward", None, "energy agent training")
            })
        }
        Command::Plan {
            common,
            input,
            verify,
            grid_step,
        } => {
            let config = load_config(&common)?;
            let text = fs::read_to_string(&input)?;
            let cols = read_columns(&text, &["E", "W", "X"])?;
            let p = PlannerInput {
                e: cols[0].clone(),
                w: cols[1].clone(),
                x: cols[2].clone(),
                b_max: config.battery_capacity,
            };
            let sol = solve_offline(&p)?;
            if verify {
                let dp = dp_oracle(&p, grid_step, DEFAULT_STATE_CAP)?;
                let tol = quantization_bound(&p, grid_step) + 1e-9;
                let ok = sol.feasible && (sol.objective - dp.objective).abs() <= tol;
                eprintln!(
                    "verify: {} (flow {}, dp {}, tolerance {tol})",
                    if ok { "pass" } else { "fail" },
                    sol.objective,
                    dp.objective
                );
                if !ok {
                    return Err(Error::PlannerInput("offline plan disagrees with the dp oracle".into()));
                }
            }
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            let mut csv = format!("{},Xh_opt\n", lines.next().unwrap_or_default());
            for (line, xh) in lines.zip(&sol.xh) {
                csv.push_str(&format!("{line},{xh}\n"));
            }
            emit(&common, &csv, |f| gnuplot_script(f, "i", "Xh_opt", None, "offline battery draw"))
        }
        Command::CsmCheck { common } => {
            let config = load_config(&common)?;
            let mut csv = String::from("check,passed,detail\n");
            let mut all = true;
            for &sf in &config.sf_set {
                for outcome in [check_reconstruction(sf)?, check_orthogonality(sf, 1e-10)?] {
                    all &= outcome.passed;
                    eprintln!("{}: {}", outcome.name, if outcome.passed { "pass" } else { "FAIL" });
                    csv.push_str(&format!("{},{},{}\n", outcome.name, u8::from(outcome.passed), outcome.detail));
                }
            }
            emit(&common, &csv, |f| gnuplot_script(f, "check", "passed", None, "modulation checks"))?;
            if all {
                Ok(())
            } else {
                Err(Error::Scenario("modulation checks failed".into()))
            }
        }
        Command::OracleCompare { common, instances } => {
            let config = load_config(&common)?;
            let mut csv = String::from("instance,optimal,hurma,hcrma,random,rr\n");
            for i in 0..instances {
                let mut rng = rng_from_seed(derive_seed(config.seed, 0, i as u64));
                let topo = sample_topology(&config, &mut rng);
                let r = sample_iid_channels(&topo, &config, 0, &mut rng);
                let opt = brute_force_optimal(&r, &config, lora_hybrid::assignment::DEFAULT_SEARCH_CAP)?;
                let values = [
                    objective(&opt, &r, &config),
                    objective(&hurma_frame(&r, &config), &r, &config),
                    objective(&hcrma_frame(&r, &topo, &config), &r, &config),
                    objective(&random_assignment(&mut rng, &config), &r, &config),
                    objective(&round_robin(i, &config), &r, &config),
                ];
                let cells: Vec<String> = values.iter().map(f64::to_string).collect();
                csv.push_str(&format!("{i},{}\n", cells.join(",")));
            }
            emit(&common, &csv, |f| gnuplot_script(f, "instance", "hurma", None, "objective per instance"))
        }
        Command::Assign {
            common,
            scheme,
            mode,
            frame,
            channel_policy,
        } => {
            let config = load_config(&common)?;
            let mode: ChannelMode = mode.parse()?;
            let scheme: Scheme = scheme.parse()?;
            let c = NetworkConfig {
                frames: frame + 1,
                ..config
            };
            // The rl channel agent is applied to the shared channel draws
            // directly; the energy side plays no part in a single frame.
            let agent = match (scheme, channel_policy) {
                (Scheme::Rl, Some(p)) => Some(ChannelAgent::from_policy(
                    Mlp::from_bytes(&fs::read(p)?)?,
                    &c,
                    mode == ChannelMode::GilbertElliott,
                )?),
                (Scheme::Rl, None) => {
                    return Err(Error::Scenario("the rl scheme needs --channel-policy".into()));
                }
                _ => None,
            };
            let run_as = if agent.is_some() { Scheme::Hurma } else { scheme };
            let mut s = Scenario::new(c.clone(), mode, run_as);
            s.trials = 1;
            s.validate(None)?;
            let t = simulate_trajectory(&s, &c, 0, 0, None)?;
            let realization = &t.realizations[frame];
            let a = match &agent {
                Some(agent) => agent.assign_frame(realization, &c),
                None => t.assignments[frame].clone(),
            };
            let csv = a.to_csv(realization, &c)?;
            emit(&common, &csv, |f| gnuplot_script(f, "k", "p_k", None, "transmit power per device"))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
