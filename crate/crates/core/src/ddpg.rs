//! Harvested-energy allocation learned with DDPG.
//!
//! The actor outputs a fraction `f = (tanh(z) + 1) / 2` of the largest
//! admissible draw `min(X, B)`; the critic scores `(state, f)`. Storing the
//! fraction rather than joules keeps the replayed actions on one scale.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::energy::{sample_weight, update_battery, EnergyTrace, HarvestProcess, ENERGY_TOL};
use crate::error::{Error, Result};
use crate::nn::{soft_update, Adam, Head, Mlp};
use crate::rng::{rng_from_seed, SimRng};

pub const STATE_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub rho: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Exploration noise on the fraction, decayed linearly over training.
    pub noise_start: f64,
    pub noise_end: f64,
    pub episodes: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            rho: 0.001,
            batch_size: 64,
            buffer_capacity: 25_000,
            noise_start: 0.2,
            noise_end: 0.01,
            episodes: 300,
            hidden: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: [f64; STATE_SIZE],
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; STATE_SIZE],
    pub terminal: bool,
}

/// Fixed-capacity FIFO with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        self.sample_indices(n, rng).into_iter().map(|i| self.items[i]).collect()
    }
}

/// Running per-component maximum used to scale raw states into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateNormalizer {
    pub max: [f64; STATE_SIZE],
}

impl Default for StateNormalizer {
    fn default() -> Self {
        Self { max: [0.0; STATE_SIZE] }
    }
}

impl StateNormalizer {
    pub fn observe(&mut self, raw: [f64; STATE_SIZE]) {
        for (m, r) in self.max.iter_mut().zip(raw) {
            *m = m.max(r.abs());
        }
    }

    pub fn apply(&self, raw: [f64; STATE_SIZE]) -> [f64; STATE_SIZE] {
        let mut out = raw;
        for (o, m) in out.iter_mut().zip(self.max) {
            if m > 0.0 {
                *o /= m;
            }
        }
        out
    }
}

fn squash(z: f64) -> f64 {
    0.5 * (z.tanh() + 1.0)
}

pub fn actor_fraction(actor: &Mlp, state: &[f64; STATE_SIZE]) -> f64 {
    squash(actor.forward(state)[0])
}

/// Returns `(fraction, draw)`. Noise perturbs the fraction, which is then
/// clamped, so the draw always lies in `[0, min(X, B)]`.
pub fn select_action<R: Rng + ?Sized>(
    actor: &Mlp,
    state: &[f64; STATE_SIZE],
    x: f64,
    b: f64,
    noise_std: f64,
    rng: &mut R,
) -> (f64, f64) {
    let mut f = actor_fraction(actor, state);
    if noise_std > 0.0 {
        let n: f64 = rng.sample(StandardNormal);
        f = (f + noise_std * n).clamp(0.0, 1.0);
    }
    let room = x.min(b).max(0.0);
    (f, f * room)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStep {
    pub reward: f64,
    /// C3, C4 and C5 all hold.
    pub valid: bool,
    /// Battery at the start of the next frame.
    pub next_battery: f64,
}

/// `W A` if the draw is causal (C3), keeps the battery within `[0, B_max]`
/// after spill (C4) and does not exceed demand (C5); otherwise -1. A
/// rejected draw leaves the battery untouched.
pub fn energy_reward(b: f64, next_harvest: f64, b_max: f64, x: f64, w: f64, action: f64) -> EnergyStep {
    let c3 = action <= b + ENERGY_TOL;
    let c4 = action >= 0.0 && b - action + ENERGY_TOL >= 0.0 && b <= b_max + ENERGY_TOL;
    let c5 = action <= x + ENERGY_TOL;
    if c3 && c4 && c5 {
        let next_battery = update_battery(b, action.min(b), next_harvest, b_max).unwrap_or(b);
        EnergyStep {
            reward: w * action,
            valid: true,
            next_battery,
        }
    } else {
        EnergyStep {
            reward: -1.0,
            valid: false,
            next_battery: (b + next_harvest).min(b_max),
        }
    }
}

fn critic_input(state: &[f64; STATE_SIZE], action: f64) -> [f64; STATE_SIZE + 1] {
    [state[0], state[1], state[2], action]
}

/// `y = R + gamma Q'(S', mu'(S'))`, or `R` on terminal steps.
pub fn critic_target(batch: &[Transition], target_actor: &Mlp, target_critic: &Mlp, gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.terminal || gamma == 0.0 {
                t.reward
            } else {
                let a = actor_fraction(target_actor, &t.next_state);
                t.reward + gamma * target_critic.forward(&critic_input(&t.next_state, a))[0]
            }
        })
        .collect()
}

/// `(1/B) sum (y - Q(S, A))^2`.
pub fn critic_loss(critic: &Mlp, batch: &[Transition], targets: &[f64]) -> f64 {
    let n = batch.len().max(1) as f64;
    batch
        .iter()
        .zip(targets)
        .map(|(t, y)| (y - critic.forward(&critic_input(&t.state, t.action))[0]).powi(2))
        .sum::<f64>()
        / n
}

pub fn critic_gradient(critic: &Mlp, batch: &[Transition], targets: &[f64]) -> Vec<f64> {
    let n = batch.len().max(1) as f64;
    let mut grads = vec![0.0; critic.num_params()];
    for (t, y) in batch.iter().zip(targets) {
        let cache = critic.forward_cached(&critic_input(&t.state, t.action));
        let err = cache.output[0] - y;
        critic.backward(&cache, &[2.0 * err / n], &mut grads);
    }
    grads
}

pub fn critic_update(critic: &mut Mlp, opt: &mut Adam, batch: &[Transition], targets: &[f64]) -> Result<f64> {
    let loss = critic_loss(critic, batch, targets);
    let grads = critic_gradient(critic, batch, targets);
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            update: opt.steps() as usize,
            detail: format!("critic loss {loss}"),
        });
    }
    opt.step(critic.params_mut(), &grads);
    Ok(loss)
}

/// `(1/B) sum Q(s, mu(s))`, the quantity the actor ascends.
pub fn actor_objective(actor: &Mlp, critic: &Mlp, states: &[[f64; STATE_SIZE]]) -> f64 {
    let n = states.len().max(1) as f64;
    states
        .iter()
        .map(|s| critic.forward(&critic_input(s, actor_fraction(actor, s)))[0])
        .sum::<f64>()
        / n
}

/// Gradient of [`actor_objective`] through the critic's action input.
pub fn actor_gradient(actor: &Mlp, critic: &Mlp, states: &[[f64; STATE_SIZE]]) -> Vec<f64> {
    let n = states.len().max(1) as f64;
    let mut grads = vec![0.0; actor.num_params()];
    let mut scratch = vec![0.0; critic.num_params()];
    for s in states {
        let a_cache = actor.forward_cached(s);
        let th = a_cache.output[0].tanh();
        let f = 0.5 * (th + 1.0);
        let c_cache = critic.forward_cached(&critic_input(s, f));
        let dq_dinput = critic.backward(&c_cache, &[1.0], &mut scratch);
        let dq_df = dq_dinput[STATE_SIZE];
        let df_dz = 0.5 * (1.0 - th * th);
        actor.backward(&a_cache, &[dq_df * df_dz / n], &mut grads);
    }
    grads
}

pub fn actor_update(actor: &mut Mlp, opt: &mut Adam, critic: &Mlp, states: &[[f64; STATE_SIZE]]) -> Result<()> {
    let mut grads = actor_gradient(actor, critic, states);
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            update: opt.steps() as usize,
            detail: "actor gradient".into(),
        });
    }
    // Ascent.
    grads.iter_mut().for_each(|g| *g = -*g);
    opt.step(actor.params_mut(), &grads);
    Ok(())
}

/// One episode's exogenous inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEpisode {
    pub e: Vec<f64>,
    pub w: Vec<f64>,
    pub x: Vec<f64>,
}

impl EnergyEpisode {
    /// Harvest from `harvest`, uniform weights, demand from `x`.
    pub fn sample<R: Rng + ?Sized>(harvest: &mut HarvestProcess, x: Vec<f64>, rng: &mut R) -> Self {
        let mut e = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            e.push(if i == 0 { harvest.current() } else { harvest.step(rng) });
        }
        let w = (0..x.len()).map(|_| sample_weight(rng)).collect();
        Self { e, w, x }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLog {
    pub episode: usize,
    pub cum_reward: f64,
    pub accuracy_flag: bool,
}

pub const ENERGY_LOG_HEADER: &str = "episode,cum_reward,accuracy_flag";

pub fn energy_logs_to_csv(logs: &[EnergyLog]) -> String {
    let mut out = format!("{ENERGY_LOG_HEADER}\n");
    for l in logs {
        out.push_str(&format!("{},{},{}\n", l.episode, l.cum_reward, u8::from(l.accuracy_flag)));
    }
    out
}

/// A trained actor with the state scaling it saw during training.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAgent {
    pub actor: Mlp,
    pub normalizer: StateNormalizer,
}

impl EnergyAgent {
    pub fn draw(&self, e: f64, x: f64, w: f64, b: f64) -> f64 {
        let s = self.normalizer.apply([e, x, w]);
        actor_fraction(&self.actor, &s) * x.min(b).max(0.0)
    }

    /// Runs the noiseless policy over one episode.
    pub fn run(&self, episode: &EnergyEpisode, b_max: f64) -> Result<EnergyTrace> {
        EnergyTrace::run(&episode.e, &episode.w, &episode.x, b_max, |i, x, b| {
            self.draw(episode.e[i], x, episode.w[i], b)
        })
    }

    /// Actor checkpoint followed by the three normalizer maxima.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.actor.to_bytes();
        for m in self.normalizer.max {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let tail = STATE_SIZE * 8;
        if bytes.len() < tail {
            return Err(Error::Checkpoint("truncated energy agent".into()));
        }
        let (net, norm) = bytes.split_at(bytes.len() - tail);
        let actor = Mlp::from_bytes(net)?;
        if actor.input_size() != STATE_SIZE || actor.output_size() != 1 {
            return Err(Error::Checkpoint(format!("actor shape {:?}", actor.sizes())));
        }
        let mut max = [0.0; STATE_SIZE];
        for (m, chunk) in max.iter_mut().zip(norm.chunks_exact(8)) {
            *m = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Ok(Self {
            actor,
            normalizer: StateNormalizer { max },
        })
    }
}

/// Full training loop. `episodes(i, rng)` supplies episode `i`'s inputs.
pub fn train_energy_agent(
    b_max: f64,
    config: &DdpgConfig,
    mut episodes: impl FnMut(usize, &mut SimRng) -> EnergyEpisode,
) -> Result<(EnergyAgent, Vec<EnergyLog>)> {
    let mut rng = rng_from_seed(config.seed);
    let h = config.hidden;
    let mut actor = Mlp::new(&[STATE_SIZE, h, h, 1], Head::Linear, &mut rng)?;
    let mut critic = Mlp::new(&[STATE_SIZE + 1, h, h, 1], Head::Linear, &mut rng)?;
    let mut target_actor = actor.clone();
    let mut target_critic = critic.clone();
    let mut actor_opt = Adam::new(config.actor_lr, actor.num_params());
    let mut critic_opt = Adam::new(config.critic_lr, critic.num_params());
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut norm = StateNormalizer::default();
    let mut logs = Vec::with_capacity(config.episodes);

    for ep in 0..config.episodes {
        let data = episodes(ep, &mut rng);
        let l = data.x.len();
        let progress = if config.episodes > 1 {
            ep as f64 / (config.episodes - 1) as f64
        } else {
            1.0
        };
        let noise = config.noise_start + (config.noise_end - config.noise_start) * progress;
        let raw = |i: usize| [data.e[i], data.x[i], data.w[i]];
        let mut b = data.e.first().map_or(0.0, |&e| e.min(b_max));
        let mut log = EnergyLog {
            episode: ep + 1,
            cum_reward: 0.0,
            accuracy_flag: true,
        };
        for i in 0..l {
            norm.observe(raw(i));
            let state = norm.apply(raw(i));
            let (f, draw) = select_action(&actor, &state, data.x[i], b, noise, &mut rng);
            let next_e = data.e.get(i + 1).copied().unwrap_or(0.0);
            let step = energy_reward(b, next_e, b_max, data.x[i], data.w[i], draw);
            log.cum_reward += step.reward;
            log.accuracy_flag &= step.valid;
            b = step.next_battery;
            let terminal = i + 1 == l;
            let next_state = if terminal { state } else { norm.apply(raw(i + 1)) };
            buffer.push(Transition {
                state,
                action: f,
                reward: step.reward,
                next_state,
                terminal,
            });
            if buffer.len() >= config.batch_size {
                let batch = buffer.sample(config.batch_size, &mut rng);
                let y = critic_target(&batch, &target_actor, &target_critic, config.gamma);
                critic_update(&mut critic, &mut critic_opt, &batch, &y)?;
                let states: Vec<_> = batch.iter().map(|t| t.state).collect();
                actor_update(&mut actor, &mut actor_opt, &critic, &states)?;
                soft_update(&mut target_critic, &critic, config.rho);
                soft_update(&mut target_actor, &actor, config.rho);
            }
        }
        logs.push(log);
    }
    Ok((
        EnergyAgent {
            actor,
            normalizer: norm,
        },
        logs,
    ))
}
