//! Channel and spreading-factor selection learned with PPO.
//!
//! One step serves one device: the agent sees which (channel, SF) cells are
//! already taken this frame plus the device's per-channel gains, and picks a
//! cell or leaves the device out. Actions are one categorical over
//! `(M + 1) * N` outcomes; indices below `N` all mean "not scheduled".

use rand::seq::SliceRandom;
use rand::Rng;

use crate::assignment::{Assignment, Slot};
use crate::channel::{sample_iid_channels, sample_topology, ChannelRealization, GilbertElliottProcess, Topology};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::nn::{categorical_sample, Adam, Head, Mlp};
use crate::rng::{rng_from_seed, SimRng};

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lr: f64,
    pub value_lr: f64,
    pub clip: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Episodes collected between updates.
    pub rollout_episodes: usize,
    pub episodes: usize,
    pub hidden: usize,
    pub correlated: bool,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-4,
            value_lr: 1e-3,
            clip: 0.2,
            lambda: 0.01,
            epochs: 4,
            batch_size: 64,
            rollout_episodes: 8,
            episodes: 10_000,
            hidden: 64,
            correlated: false,
            seed: 0,
        }
    }
}

/// Steps per episode: one frame of `K` devices, or every frame when the
/// channel carries memory across frames.
pub fn episode_layout(config: &NetworkConfig, correlated: bool) -> usize {
    if correlated {
        config.devices * config.frames
    } else {
        config.devices
    }
}

pub fn action_count(config: &NetworkConfig) -> usize {
    (config.channels + 1) * config.sf_capacity()
}

/// `None` for "not scheduled", else `(channel, index into sf_set)`.
pub fn decode_action(action: usize, sf_count: usize) -> Option<(usize, usize)> {
    match action / sf_count {
        0 => None,
        m => Some((m - 1, action % sf_count)),
    }
}

pub fn encode_action(cell: Option<(usize, usize)>, sf_count: usize) -> usize {
    cell.map_or(0, |(m, s)| (m + 1) * sf_count + s)
}

/// Fixed per-configuration normalizers: reward scale and gain reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Multiplies `gamma_th sigma^2 / |g|^2 2^sf` in the reward.
    pub penalty_scale: f64,
    /// Median `|g|^2`, the zero point of the gain features.
    pub gain_ref: f64,
}

const CALIBRATION_SEED: u64 = 0x6361_6c69_6272_6174;
const CALIBRATION_DRAWS: usize = 64;

impl Calibration {
    /// Medians over a fixed-seed sample of channel draws, so the same
    /// configuration always yields the same normalizers.
    pub fn for_config(config: &NetworkConfig, correlated: bool) -> Self {
        let mut rng = rng_from_seed(CALIBRATION_SEED);
        let mut gains = Vec::new();
        for _ in 0..CALIBRATION_DRAWS {
            let topo = sample_topology(config, &mut rng);
            let r = if correlated {
                let mut ge =
                    GilbertElliottProcess::stationary(config.gilbert_elliott, config.devices, config.channels, &mut rng);
                ge.step(&topo, &mut rng)
            } else {
                sample_iid_channels(&topo, config, 0, &mut rng)
            };
            for k in 0..config.devices {
                for m in 0..config.channels {
                    let g = r.gain(k, m);
                    if g > 0.0 {
                        gains.push(g);
                    }
                }
            }
        }
        let gain_ref = median(&mut gains).unwrap_or(1.0);
        let median_penalty = config.gamma_th() * config.noise_variance() / gain_ref;
        let penalty_scale = if median_penalty > 0.0 {
            2f64.powi(-12) / median_penalty
        } else {
            1.0
        };
        Self {
            penalty_scale,
            gain_ref,
        }
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Raw `gamma_th sigma^2 / |g|^2 2^sf` of a scheduling attempt, 0 otherwise.
    pub penalty: f64,
    /// C1 and C2 both hold.
    pub valid: bool,
}

/// Reward for one action given this frame's taken cells (`M x N`, row per
/// channel) and the device's `|g|^2` per channel.
///
/// A violation earns 0. Leaving the device out earns 0 and violates nothing.
/// A valid cell earns `1 - scale * penalty`, floored at -1.
pub fn step_reward(
    assigned: &[bool],
    gains: &[f64],
    action: usize,
    config: &NetworkConfig,
    penalty_scale: f64,
) -> StepOutcome {
    let n = config.sf_capacity();
    let Some((m, s)) = decode_action(action, n) else {
        return StepOutcome {
            reward: 0.0,
            penalty: 0.0,
            valid: true,
        };
    };
    let gamma = config.gamma_th();
    let penalty = if gamma == 0.0 {
        0.0
    } else {
        gamma * config.noise_variance() / gains[m] * f64::from(1u32 << config.sf_set[s])
    };
    let row = &assigned[m * n..(m + 1) * n];
    let c1 = row.iter().filter(|&&a| a).count() < n;
    let c2 = !row[s];
    let valid = c1 && c2;
    let reward = if valid {
        (1.0 - penalty * penalty_scale).max(-1.0)
    } else {
        0.0
    };
    StepOutcome { reward, penalty, valid }
}

/// Network input: taken cells, log-gains relative to the reference, and the
/// position of the device within its frame.
pub fn observation(assigned: &[bool], gains: &[f64], position: f64, calibration: &Calibration) -> Vec<f64> {
    let mut obs: Vec<f64> = assigned.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    obs.extend(gains.iter().map(|&g| {
        if g > 0.0 {
            ((g / calibration.gain_ref).ln() / 5.0).clamp(-4.0, 4.0)
        } else {
            -4.0
        }
    }));
    obs.push(position);
    obs
}

pub fn observation_size(config: &NetworkConfig) -> usize {
    config.slots() + config.channels + 1
}

enum Source {
    Iid,
    Correlated(GilbertElliottProcess),
}

/// The scheduling MDP over freshly drawn devices and channels.
pub struct ChannelEnv {
    config: NetworkConfig,
    calibration: Calibration,
    correlated: bool,
    rng: SimRng,
    topology: Topology,
    source: Source,
    realization: ChannelRealization,
    assigned: Vec<bool>,
    frame: usize,
    device: usize,
}

impl ChannelEnv {
    pub fn new(config: NetworkConfig, correlated: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let calibration = Calibration::for_config(&config, correlated);
        let mut rng = rng_from_seed(seed);
        let topology = sample_topology(&config, &mut rng);
        let realization = sample_iid_channels(&topology, &config, 0, &mut rng);
        let mut env = Self {
            assigned: vec![false; config.slots()],
            config,
            calibration,
            correlated,
            rng,
            topology,
            source: Source::Iid,
            realization,
            frame: 0,
            device: 0,
        };
        env.reset();
        Ok(env)
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// New devices, new channels, empty cell matrix.
    pub fn reset(&mut self) {
        self.topology = sample_topology(&self.config, &mut self.rng);
        if self.correlated {
            let mut ge = GilbertElliottProcess::stationary(
                self.config.gilbert_elliott,
                self.config.devices,
                self.config.channels,
                &mut self.rng,
            );
            self.realization = ge.step(&self.topology, &mut self.rng);
            self.source = Source::Correlated(ge);
        } else {
            self.realization = sample_iid_channels(&self.topology, &self.config, 0, &mut self.rng);
            self.source = Source::Iid;
        }
        self.assigned.iter_mut().for_each(|a| *a = false);
        self.frame = 0;
        self.device = 0;
    }

    fn gains(&self) -> Vec<f64> {
        (0..self.config.channels)
            .map(|m| self.realization.gain(self.device, m))
            .collect()
    }

    pub fn observe(&self) -> Vec<f64> {
        let position = self.device as f64 / self.config.devices as f64;
        observation(&self.assigned, &self.gains(), position, &self.calibration)
    }

    /// Applies `action` and returns its outcome and whether the episode ended.
    pub fn step(&mut self, action: usize) -> (StepOutcome, bool) {
        let n = self.config.sf_capacity();
        let out = step_reward(
            &self.assigned,
            &self.gains(),
            action,
            &self.config,
            self.calibration.penalty_scale,
        );
        if out.valid {
            if let Some((m, s)) = decode_action(action, n) {
                self.assigned[m * n + s] = true;
            }
        }
        self.device += 1;
        if self.device < self.config.devices {
            return (out, false);
        }
        self.frame += 1;
        let last = if self.correlated {
            self.frame >= self.config.frames
        } else {
            true
        };
        if !last {
            if let Source::Correlated(ge) = &mut self.source {
                self.realization = ge.step(&self.topology, &mut self.rng);
            }
            self.assigned.iter_mut().for_each(|a| *a = false);
            self.device = 0;
        }
        (out, last)
    }
}

/// `A_t = sum_i (gamma lambda)^i delta_{t+i}` with zero value past the end.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let next = values.get(t + 1).copied().unwrap_or(0.0);
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// `min(p A, clip(p, 1 - eps, 1 + eps) A)`.
pub fn clipped_term(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Mean clipped surrogate over `samples`.
pub fn clipped_surrogate(policy: &Mlp, samples: &[PolicySample], clip: f64) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let p = policy.forward(&s.obs)[s.action];
            clipped_term((p.ln() - s.old_log_prob).exp(), s.advantage, clip)
        })
        .sum();
    total / samples.len().max(1) as f64
}

/// Gradient of [`clipped_surrogate`] with respect to the policy parameters.
pub fn surrogate_gradient(policy: &Mlp, samples: &[PolicySample], clip: f64) -> Vec<f64> {
    let mut grads = vec![0.0; policy.num_params()];
    accumulate_surrogate(policy, samples, clip, 1.0 / samples.len().max(1) as f64, &mut grads);
    grads
}

/// Adds `weight * d(sum of clipped terms)/d params` into `grads`.
fn accumulate_surrogate(policy: &Mlp, samples: &[PolicySample], clip: f64, weight: f64, grads: &mut [f64]) {
    let mut upstream = vec![0.0; policy.output_size()];
    for s in samples {
        let cache = policy.forward_cached(&s.obs);
        let p = cache.output[s.action];
        let ratio = (p.ln() - s.old_log_prob).exp();
        // The unclipped branch carries the gradient unless clipping binds.
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        if ratio * s.advantage > clipped * s.advantage {
            continue;
        }
        upstream.iter_mut().for_each(|u| *u = 0.0);
        // d(ratio A)/dp_a = ratio A / p_a.
        upstream[s.action] = weight * ratio * s.advantage / p;
        policy.backward(&cache, &upstream, grads);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
}

/// Several epochs of minibatch ascent on the clipped surrogate plus value
/// regression toward the empirical returns.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Mlp,
    value: &mut Mlp,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    samples: &[PolicySample],
    config: &PpoConfig,
    update: usize,
    rng: &mut R,
) -> Result<UpdateStats> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut pg = vec![0.0; policy.num_params()];
    let mut vg = vec![0.0; value.num_params()];
    let mut stats = UpdateStats {
        surrogate: 0.0,
        value_loss: 0.0,
    };
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<PolicySample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let w = 1.0 / batch.len() as f64;
            pg.iter_mut().for_each(|g| *g = 0.0);
            // Ascent on the surrogate is descent on its negative.
            accumulate_surrogate(policy, &batch, config.clip, -w, &mut pg);
            vg.iter_mut().for_each(|g| *g = 0.0);
            let mut vloss = 0.0;
            for s in &batch {
                let cache = value.forward_cached(&s.obs);
                let err = cache.output[0] - s.ret;
                vloss += err * err * w;
                value.backward(&cache, &[2.0 * err * w], &mut vg);
            }
            let surrogate = clipped_surrogate(policy, &batch, config.clip);
            if !surrogate.is_finite() || !vloss.is_finite() || pg.iter().chain(&vg).any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    update,
                    detail: format!("surrogate {surrogate}, value loss {vloss}"),
                });
            }
            stats = UpdateStats {
                surrogate,
                value_loss: vloss,
            };
            policy_opt.step(policy.params_mut(), &pg);
            value_opt.step(value.params_mut(), &vg);
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub cum_reward: f64,
    pub cum_penalty: f64,
    pub accuracy_flag: bool,
}

pub const EPISODE_CSV_HEADER: &str = "episode,cum_reward,cum_penalty,accuracy_flag";

pub fn episode_logs_to_csv(logs: &[EpisodeLog]) -> String {
    let mut out = format!("{EPISODE_CSV_HEADER}\n");
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            l.episode,
            l.cum_reward,
            l.cum_penalty,
            u8::from(l.accuracy_flag)
        ));
    }
    out
}

/// A trained scheduling policy and the normalizers it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAgent {
    pub policy: Mlp,
    pub calibration: Calibration,
}

impl ChannelAgent {
    /// Rebuilds an agent from a saved policy for `config`.
    pub fn from_policy(policy: Mlp, config: &NetworkConfig, correlated: bool) -> Result<Self> {
        if policy.input_size() != observation_size(config) || policy.output_size() != action_count(config) {
            return Err(Error::Checkpoint(format!(
                "policy shape {:?} does not fit M = {}, N = {}",
                policy.sizes(),
                config.channels,
                config.sf_capacity()
            )));
        }
        Ok(Self {
            policy,
            calibration: Calibration::for_config(config, correlated),
        })
    }

    /// Deterministic frame assignment: devices in index order, most likely
    /// action among those that keep the frame valid. Leaving a device out is
    /// only allowed while the remaining devices outnumber the free cells, so
    /// exactly `min(K, M N)` devices are served.
    pub fn assign_frame(&self, realization: &ChannelRealization, config: &NetworkConfig) -> Assignment {
        let n = config.sf_capacity();
        let k_count = config.devices;
        let mut assigned = vec![false; config.slots()];
        let mut free = config.slots();
        let mut out = Assignment::empty(k_count);
        for k in 0..k_count {
            if free == 0 {
                break;
            }
            let gains: Vec<f64> = (0..config.channels).map(|m| realization.gain(k, m)).collect();
            let obs = observation(&assigned, &gains, k as f64 / k_count as f64, &self.calibration);
            let probs = self.policy.forward(&obs);
            let may_skip = k_count - k > free;
            let mut best: Option<(usize, f64)> = None;
            for (a, &p) in probs.iter().enumerate() {
                let allowed = match decode_action(a, n) {
                    None => may_skip,
                    Some((m, s)) => !assigned[m * n + s],
                };
                if allowed && best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((a, p));
                }
            }
            if let Some((a, _)) = best {
                if let Some((m, s)) = decode_action(a, n) {
                    assigned[m * n + s] = true;
                    free -= 1;
                    out.set(
                        k,
                        Slot {
                            channel: m,
                            sf: config.sf_set[s],
                        },
                    );
                }
            }
        }
        out
    }
}

/// Runs the full training loop and returns the agent with per-episode logs.
pub fn train_channel_agent(
    network: &NetworkConfig,
    config: &PpoConfig,
) -> Result<(ChannelAgent, Vec<EpisodeLog>)> {
    let mut env = ChannelEnv::new(network.clone(), config.correlated, config.seed)?;
    let mut rng = rng_from_seed(config.seed.wrapping_add(1));
    let obs_size = observation_size(network);
    let actions = action_count(network);
    let h = config.hidden;
    let mut policy = Mlp::new(&[obs_size, h, h, actions], Head::Softmax, &mut rng)?;
    let mut value = Mlp::new(&[obs_size, h, h, 1], Head::Linear, &mut rng)?;
    let mut policy_opt = Adam::new(config.lr, policy.num_params());
    let mut value_opt = Adam::new(config.value_lr, value.num_params());

    let mut logs = Vec::with_capacity(config.episodes);
    let mut memory: Vec<PolicySample> = Vec::new();
    let mut update = 0;
    for episode in 0..config.episodes {
        env.reset();
        let mut rewards = Vec::new();
        let mut values = Vec::new();
        let mut pending = Vec::new();
        let mut log = EpisodeLog {
            episode: episode + 1,
            cum_reward: 0.0,
            cum_penalty: 0.0,
            accuracy_flag: true,
        };
        loop {
            let obs = env.observe();
            let probs = policy.forward(&obs);
            let action = categorical_sample(&probs, &mut rng);
            values.push(value.forward(&obs)[0]);
            let (out, done) = env.step(action);
            rewards.push(out.reward);
            log.cum_reward += out.reward;
            log.cum_penalty += out.penalty;
            log.accuracy_flag &= out.valid;
            pending.push((obs, action, probs[action].ln()));
            if done {
                break;
            }
        }
        let adv = gae(&rewards, &values, config.gamma, config.lambda);
        for ((obs, action, lp), (a, v)) in pending.into_iter().zip(adv.into_iter().zip(values)) {
            memory.push(PolicySample {
                obs,
                action,
                old_log_prob: lp,
                advantage: a,
                ret: a + v,
            });
        }
        logs.push(log);

        if (episode + 1) % config.rollout_episodes.max(1) == 0 || episode + 1 == config.episodes {
            normalize_advantages(&mut memory);
            ppo_update(
                &mut policy,
                &mut value,
                &mut policy_opt,
                &mut value_opt,
                &memory,
                config,
                update,
                &mut rng,
            )?;
            update += 1;
            memory.clear();
        }
    }
    let calibration = *env.calibration();
    Ok((ChannelAgent { policy, calibration }, logs))
}

fn normalize_advantages(samples: &mut [PolicySample]) {
    let n = samples.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for s in samples {
        s.advantage = (s.advantage - mean) / std;
    }
}

/// Fraction of logged episodes whose every step respected C1 and C2.
pub fn accuracy(logs: &[EpisodeLog]) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    logs.iter().filter(|l| l.accuracy_flag).count() as f64 / logs.len() as f64
}

/// Trailing moving average with the given window.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
