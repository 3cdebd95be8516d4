mod common;

use approx::assert_relative_eq;
use num_complex::Complex64;
use proptest::prelude::*;

use lora_hybrid::assignment::{
    brute_force_optimal, hcrma_frame, hurma_frame, objective, optimal_sf_order, random_assignment, round_robin,
    sf_cost, Slot, DEFAULT_SEARCH_CAP,
};
use lora_hybrid::channel::{frame_energy, sample_iid_channels, sample_topology, ChannelRealization, Topology};
use lora_hybrid::config::NetworkConfig;
use lora_hybrid::csm::{modulate, symbol_error_rate, CsmSymbol, WAVEFORM_LEN};
use lora_hybrid::ddpg::{
    actor_gradient, actor_objective, critic_gradient, critic_loss, train_energy_agent, DdpgConfig, EnergyEpisode,
    ReplayBuffer, Transition, STATE_SIZE,
};
use lora_hybrid::energy::{greedy_split, EnergyTrace, HarvestProcess};
use lora_hybrid::nn::{soft_update, Head, Mlp};
use lora_hybrid::harness::{cumulative_report, run_point, ChannelMode, Scenario, Scheme};
use lora_hybrid::planner::{dp_oracle, solve_offline, PlannerInput};
use lora_hybrid::ppo::{train_channel_agent, PpoConfig};
use lora_hybrid::rng::rng_from_seed;

use common::{assignment_violation, brute_sf_cost, max_rel_error, numeric_gradient, trace_violation};

fn small_config(devices: usize, channels: usize, n: usize, gamma: f64) -> NetworkConfig {
    NetworkConfig {
        devices,
        channels,
        sf_set: (7..7 + n as u32).collect(),
        gamma_th_db: gamma,
        ..NetworkConfig::default()
    }
}

fn realization(cfg: &NetworkConfig, seed: u64) -> (Topology, ChannelRealization) {
    let mut rng = rng_from_seed(seed);
    let topo = sample_topology(cfg, &mut rng);
    let r = sample_iid_channels(&topo, cfg, 0, &mut rng);
    (topo, r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_producer_emits_valid_assignments(
        devices in 0usize..30,
        channels in 0usize..5,
        n in 1usize..7,
        frame in 0usize..50,
        seed in any::<u64>(),
    ) {
        let cfg = small_config(devices, channels, n, 0.0);
        let (topo, r) = realization(&cfg, seed);
        let mut rng = rng_from_seed(seed ^ 1);
        let produced = [
            ("hurma", hurma_frame(&r, &cfg)),
            ("hcrma", hcrma_frame(&r, &topo, &cfg)),
            ("random", random_assignment(&mut rng, &cfg)),
            ("rr", round_robin(frame, &cfg)),
        ];
        for (name, a) in &produced {
            prop_assert_eq!(assignment_violation(a, &cfg), None, "{}", name);
        }
    }

    #[test]
    fn brute_force_is_valid_and_dominates(
        devices in 1usize..7,
        channels in 1usize..3,
        n in 1usize..4,
        seed in any::<u64>(),
    ) {
        let cfg = small_config(devices, channels, n, -10.0);
        let (topo, r) = realization(&cfg, seed);
        let best = brute_force_optimal(&r, &cfg, DEFAULT_SEARCH_CAP).unwrap();
        prop_assert_eq!(assignment_violation(&best, &cfg), None);
        let opt = objective(&best, &r, &cfg);
        let mut rng = rng_from_seed(seed);
        for other in [
            hurma_frame(&r, &cfg),
            hcrma_frame(&r, &topo, &cfg),
            random_assignment(&mut rng, &cfg),
            round_robin(3, &cfg),
        ] {
            prop_assert!(opt <= objective(&other, &r, &cfg) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn frame_energy_matches_objective(seed in any::<u64>(), gamma in -20.0f64..10.0) {
        let cfg = small_config(12, 3, 4, gamma);
        let (_, r) = realization(&cfg, seed);
        let a = hurma_frame(&r, &cfg);
        let x = frame_energy(&a, &r, &cfg).unwrap();
        let t = cfg.sample_time();
        assert_relative_eq!(x - cfg.circuit_energy(), t * objective(&a, &r, &cfg), max_relative = 1e-6, epsilon = 1e-15);
    }

    #[test]
    fn frame_energy_grows_with_target_and_sf(seed in any::<u64>(), g1 in -20.0f64..10.0, dg in 0.0f64..10.0, pick in any::<usize>()) {
        let low = small_config(12, 3, 6, g1);
        let high = NetworkConfig { gamma_th_db: g1 + dg, ..low.clone() };
        let (_, r) = realization(&low, seed);
        let a = hurma_frame(&r, &low);
        let x = frame_energy(&a, &r, &low).unwrap();
        prop_assert!(frame_energy(&a, &r, &high).unwrap() >= x);

        // Move one device to a larger SF still free on its channel.
        let scheduled: Vec<(usize, Slot)> = a.scheduled().collect();
        let (k, slot) = scheduled[pick % scheduled.len()];
        let taken: Vec<u32> = scheduled.iter().filter(|(_, s)| s.channel == slot.channel).map(|(_, s)| s.sf).collect();
        if let Some(&sf) = low.sf_set.iter().find(|&&sf| sf > slot.sf && !taken.contains(&sf)) {
            let mut b = a.clone();
            b.set(k, Slot { channel: slot.channel, sf });
            prop_assert!(frame_energy(&b, &r, &low).unwrap() > x);
        }
    }

    #[test]
    fn sf_order_matches_permutation_search(v in prop::collection::vec(1e-3f64..1e3, 1..=6)) {
        let sfs: Vec<u32> = (7..13).collect();
        let order = optimal_sf_order(&v, &sfs).unwrap();
        prop_assert_eq!(sf_cost(&v, &order), brute_sf_cost(&v, &sfs));
    }

    #[test]
    fn battery_stays_bounded_under_any_policy(
        e in prop::collection::vec(0.0f64..5.0, 1..40),
        fractions in prop::collection::vec(0.0f64..=1.0, 40),
        b_max in 0.0f64..8.0,
        x_scale in 0.0f64..4.0,
    ) {
        let l = e.len();
        let x: Vec<f64> = (0..l).map(|i| x_scale * (1.0 + (i % 3) as f64)).collect();
        let w: Vec<f64> = (0..l).map(|i| (i as f64 * 0.37).fract()).collect();
        let t = EnergyTrace::run(&e, &w, &x, b_max, |i, x, b| fractions[i] * x.min(b)).unwrap();
        prop_assert_eq!(trace_violation(&t, b_max), None);
        // Everything drawn was harvested first.
        prop_assert!(t.total_harvest_used() <= e.iter().sum::<f64>() + 1e-9);
        let g = EnergyTrace::greedy(&e, &w, &x, b_max).unwrap();
        prop_assert_eq!(trace_violation(&g, b_max), None);
    }

    #[test]
    fn greedy_split_conserves(x in 0.0f64..10.0, b in 0.0f64..10.0) {
        let (xh, xg) = greedy_split(x, b);
        prop_assert!(xh >= 0.0 && xg >= 0.0 && xh <= b);
        prop_assert!((xh + xg - x).abs() <= 1e-12 * x.max(1.0));
    }

    #[test]
    fn planner_beats_feasible_schedules_and_grows_with_capacity(
        e in prop::collection::vec(0.0f64..3.0, 1..12),
        seed in any::<u64>(),
        b_max in 0.0f64..6.0,
    ) {
        let l = e.len();
        let mut rng = rng_from_seed(seed);
        let x: Vec<f64> = (0..l).map(|_| rand::Rng::random_range(&mut rng, 0.0..3.0)).collect();
        let w: Vec<f64> = (0..l).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let input = PlannerInput { x: x.clone(), e: e.clone(), w: w.clone(), b_max };
        let sol = solve_offline(&input).unwrap();
        prop_assert!(sol.feasible);
        let replayed = input.replay(&sol.xh).unwrap();
        prop_assert_eq!(trace_violation(&replayed, b_max), None);

        let greedy = EnergyTrace::greedy(&e, &w, &x, b_max).unwrap();
        let greedy_value: f64 = greedy.frames.iter().map(|f| f.w * f.xh).sum();
        prop_assert!(sol.objective >= greedy_value - 1e-9);
        let f: Vec<f64> = (0..l).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let random = EnergyTrace::run(&e, &w, &x, b_max, |i, x, b| f[i] * x.min(b)).unwrap();
        let random_value: f64 = random.frames.iter().map(|f| f.w * f.xh).sum();
        prop_assert!(sol.objective >= random_value - 1e-9);

        let mut more = input.clone();
        more.e[seed as usize % l] += 1.0;
        prop_assert!(solve_offline(&more).unwrap().objective >= sol.objective - 1e-9);
        let bigger = solve_offline(&PlannerInput { b_max: b_max + 1.0, ..input }).unwrap();
        prop_assert!(bigger.objective >= sol.objective - 1e-9);
    }

    #[test]
    fn dp_tracks_the_exact_plan(
        e in prop::collection::vec(0.0f64..2.0, 1..8),
        x in prop::collection::vec(0.0f64..2.0, 8),
        w in prop::collection::vec(0.0f64..1.0, 8),
        b_max in 0.0f64..3.0,
    ) {
        let l = e.len();
        let input = PlannerInput { x: x[..l].to_vec(), e, w: w[..l].to_vec(), b_max };
        let exact = solve_offline(&input).unwrap();
        let dp = dp_oracle(&input, 0.05, 1_000_000).unwrap();
        let w_max = input.w.iter().copied().fold(0.0, f64::max);
        let bound = 0.025 * (l as f64 * w_max + 2.0 * input.w.iter().sum::<f64>());
        prop_assert!((exact.objective - dp.objective).abs() <= bound + 1e-9);
    }

    #[test]
    fn soft_update_contracts(seed in any::<u64>(), rho in 0.0f64..=1.0) {
        let mut rng = rng_from_seed(seed);
        let main = Mlp::new(&[3, 5, 2], Head::Linear, &mut rng).unwrap();
        let mut target = Mlp::new(&[3, 5, 2], Head::Linear, &mut rng).unwrap();
        let dist = |a: &Mlp, b: &Mlp| a.params().iter().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let before = dist(&target, &main);
        soft_update(&mut target, &main, rho);
        assert_relative_eq!(dist(&target, &main), (1.0 - rho) * before, epsilon = 1e-12, max_relative = 1e-9);
    }

    #[test]
    fn repeated_soft_updates_converge_geometrically(seed in any::<u64>(), rho in 0.01f64..0.5, steps in 1i32..30) {
        let mut rng = rng_from_seed(seed);
        let main = Mlp::new(&[2, 4, 1], Head::Linear, &mut rng).unwrap();
        let mut target = Mlp::new(&[2, 4, 1], Head::Linear, &mut rng).unwrap();
        let dist = |a: &Mlp, b: &Mlp| a.params().iter().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let before = dist(&target, &main);
        for _ in 0..steps {
            soft_update(&mut target, &main, rho);
        }
        assert_relative_eq!(dist(&target, &main), (1.0 - rho).powi(steps) * before, epsilon = 1e-12, max_relative = 1e-8);
    }

    #[test]
    fn softmax_head_is_a_distribution(seed in any::<u64>(), input in prop::collection::vec(-50.0f64..50.0, 5)) {
        let mut rng = rng_from_seed(seed);
        let net = Mlp::new(&[5, 8, 7], Head::Softmax, &mut rng).unwrap();
        let p = net.forward(&input);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), hidden in 1usize..9, softmax in any::<bool>()) {
        let mut rng = rng_from_seed(seed);
        let head = if softmax { Head::Softmax } else { Head::Linear };
        let net = Mlp::new(&[4, hidden, 3], head, &mut rng).unwrap();
        let back = Mlp::from_bytes(&net.to_bytes()).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn config_document_round_trip(devices in 1usize..200, channels in 1usize..9, gamma in -30.0f64..30.0, seed in any::<u64>()) {
        let cfg = NetworkConfig { devices, channels, gamma_th_db: gamma, seed, ..NetworkConfig::default() };
        prop_assert_eq!(NetworkConfig::parse(&cfg.to_document()).unwrap(), cfg);
    }

    #[test]
    fn harvest_chain_stays_on_its_levels(seed in any::<u64>(), stay in 0.0f64..=1.0, steps in 1usize..200) {
        let mut rng = rng_from_seed(seed);
        let mut h = HarvestProcess::tridiagonal(vec![0.0, 1.0, 2.0, 3.0], stay, 1).unwrap();
        let mut prev = h.state();
        for _ in 0..steps {
            let e = h.step(&mut rng);
            prop_assert!(h.levels().contains(&e));
            prop_assert!(h.state().abs_diff(prev) <= 1);
            prev = h.state();
        }
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(11);
    for probe in 0..20 {
        let head = if probe % 2 == 0 { Head::Linear } else { Head::Softmax };
        let net = Mlp::new(&[3, 6, 5, 4], head, &mut rng).unwrap();
        let input: Vec<f64> = (0..3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let up: Vec<f64> = (0..4).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let mut analytic = vec![0.0; net.num_params()];
        net.backward(&net.forward_cached(&input), &up, &mut analytic);
        let numeric = numeric_gradient(net.params(), 1e-5, |p| {
            let mut n = net.clone();
            n.params_mut().copy_from_slice(p);
            n.forward(&input).iter().zip(&up).map(|(o, u)| o * u).sum()
        });
        assert!(max_rel_error(&analytic, &numeric, 1e-6) < 1e-4, "probe {probe}");
    }
}

#[test]
fn zero_upstream_gives_zero_gradient_and_scaling_is_linear() {
    let mut rng = rng_from_seed(2);
    let net = Mlp::new(&[2, 4, 3], Head::Softmax, &mut rng).unwrap();
    let cache = net.forward_cached(&[0.3, -0.7]);
    let mut g = vec![0.0; net.num_params()];
    net.backward(&cache, &[0.0; 3], &mut g);
    assert!(g.iter().all(|&v| v == 0.0));
    let mut g1 = vec![0.0; net.num_params()];
    let mut g3 = vec![0.0; net.num_params()];
    net.backward(&cache, &[0.2, -0.1, 0.5], &mut g1);
    net.backward(&cache, &[0.6, -0.3, 1.5], &mut g3);
    for (a, b) in g1.iter().zip(&g3) {
        assert_relative_eq!(3.0 * a, b, epsilon = 1e-14, max_relative = 1e-12);
    }
}

#[test]
fn critic_and_actor_gradients_match_finite_differences() {
    let mut rng = rng_from_seed(5);
    for probe in 0..10 {
        let critic = Mlp::new(&[STATE_SIZE + 1, 8, 8, 1], Head::Linear, &mut rng).unwrap();
        let actor = Mlp::new(&[STATE_SIZE, 8, 8, 1], Head::Linear, &mut rng).unwrap();
        let batch: Vec<Transition> = (0..6)
            .map(|_| {
                let mut s = [0.0; STATE_SIZE];
                s.iter_mut().for_each(|v| *v = rand::Rng::random(&mut rng));
                Transition {
                    state: s,
                    action: rand::Rng::random(&mut rng),
                    reward: rand::Rng::random(&mut rng),
                    next_state: s,
                    terminal: false,
                }
            })
            .collect();
        let y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let analytic = critic_gradient(&critic, &batch, &y);
        let numeric = numeric_gradient(critic.params(), 1e-5, |p| {
            let mut c = critic.clone();
            c.params_mut().copy_from_slice(p);
            critic_loss(&c, &batch, &y)
        });
        assert!(max_rel_error(&analytic, &numeric, 1e-6) < 1e-4, "critic probe {probe}");

        let states: Vec<_> = batch.iter().map(|t| t.state).collect();
        let analytic = actor_gradient(&actor, &critic, &states);
        let numeric = numeric_gradient(actor.params(), 1e-5, |p| {
            let mut a = actor.clone();
            a.params_mut().copy_from_slice(p);
            actor_objective(&a, &critic, &states)
        });
        assert!(max_rel_error(&analytic, &numeric, 1e-6) < 1e-3, "actor probe {probe}");
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buffer = ReplayBuffer::new(10);
    for i in 0..25 {
        buffer.push(Transition {
            state: [i as f64; STATE_SIZE],
            action: 0.0,
            reward: i as f64,
            next_state: [0.0; STATE_SIZE],
            terminal: false,
        });
    }
    // Only the last ten survive.
    let mut counts = [0usize; 10];
    let mut rng = rng_from_seed(9);
    let draws = 100_000;
    for t in buffer.sample(draws, &mut rng) {
        let r = t.reward as usize;
        assert!((15..25).contains(&r));
        counts[r - 15] += 1;
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom, 0.999 quantile.
    assert!(chi2 < 27.88, "chi-square {chi2}");
}

/// Symbol `s` straight from the chirp formula, without modular reduction.
fn direct_waveform(sf: u32, s: u32) -> Vec<Complex64> {
    let n = 1usize << sf;
    (0..n)
        .map(|f| {
            let (f, s, nf) = (f as f64, f64::from(s), n as f64);
            Complex64::from_polar(1.0 / nf.sqrt(), std::f64::consts::TAU * (f * f + s * f) / nf)
        })
        .collect()
}

#[test]
fn direct_chirp_oracle_at_sf7() {
    let sf = 7;
    let n = 1usize << sf;
    let direct: Vec<Vec<Complex64>> = (0..n as u32).map(|s| direct_waveform(sf, s)).collect();
    for (s, d) in direct.iter().enumerate() {
        let lib = modulate(CsmSymbol::new(sf, s as u32).unwrap());
        assert_eq!(lib.samples.len(), WAVEFORM_LEN);
        for (a, b) in lib.samples.iter().zip(d) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(lib.samples[n..].iter().all(|v| v.norm() == 0.0));
    }
    let mut worst = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            let ip: Complex64 = direct[a].iter().zip(&direct[b]).map(|(x, y)| x * y.conj()).sum();
            if a == b {
                assert!((ip.norm() - 1.0).abs() < 1e-10);
            } else {
                worst = worst.max(ip.norm());
            }
        }
        // Correlation receiver: the transmitted symbol wins.
        let best = (0..n)
            .max_by(|&i, &j| {
                let ci: Complex64 = direct[a].iter().zip(&direct[i]).map(|(x, y)| x * y.conj()).sum();
                let cj: Complex64 = direct[a].iter().zip(&direct[j]).map(|(x, y)| x * y.conj()).sum();
                ci.norm().total_cmp(&cj.norm()).then(j.cmp(&i))
            })
            .unwrap();
        assert_eq!(best, a);
    }
    assert!(worst < 1e-10, "cross {worst}");
}

#[test]
fn symbol_error_rate_falls_with_snr() {
    let mut rng = rng_from_seed(21);
    let ser = |snr: f64, rng: &mut _| symbol_error_rate(7, snr, 10_000, rng).unwrap();
    let grid: Vec<f64> = [0.0, 5.0, 10.0].iter().map(|&s| ser(s, &mut rng)).collect();
    assert!(grid.windows(2).all(|w| w[1] <= w[0]), "{grid:?}");
    // Where errors actually occur the decrease is strict.
    let low: Vec<f64> = [-16.0, -13.0, -10.0].iter().map(|&s| ser(s, &mut rng)).collect();
    assert!(low.windows(2).all(|w| w[1] < w[0]), "{low:?}");
}

#[test]
fn training_is_bit_reproducible() {
    let net = small_config(4, 2, 3, 0.0);
    let ppo = PpoConfig { episodes: 40, seed: 3, ..PpoConfig::default() };
    let (a1, l1) = train_channel_agent(&net, &ppo).unwrap();
    let (a2, l2) = train_channel_agent(&net, &ppo).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(a1.policy.to_bytes(), a2.policy.to_bytes());

    let ddpg = DdpgConfig { episodes: 15, seed: 4, ..DdpgConfig::default() };
    let train = || {
        let mut harvest = HarvestProcess::tridiagonal(vec![0.0, 1.0, 2.0], 0.5, 1).unwrap();
        train_energy_agent(5.0, &ddpg, |_, rng| EnergyEpisode::sample(&mut harvest, vec![1.5; 10], rng)).unwrap()
    };
    let (e1, l1) = train();
    let (e2, l2) = train();
    assert_eq!(l1, l2);
    assert_eq!(e1.to_bytes(), e2.to_bytes());
}

/// Paired standard error of `a - b` across trials.
fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn optimal_scheme_is_never_beaten_in_the_harness() {
    let cfg = NetworkConfig { frames: 20, battery_capacity: 10.0, ..small_config(6, 2, 3, -10.0) };
    let costs = |scheme| {
        let mut s = Scenario::new(cfg.clone(), ChannelMode::Iid, scheme);
        s.trials = 100;
        s.seed = 31;
        run_point(&s, &cfg, 0, None).unwrap().into_iter().map(|t| t.grid_cost).collect::<Vec<_>>()
    };
    let opt = costs(Scheme::Optimal);
    for scheme in [Scheme::Hurma, Scheme::Hcrma, Scheme::Random, Scheme::RoundRobin] {
        let (diff, se) = paired(&costs(scheme), &opt);
        assert!(diff >= -3.0 * se, "{scheme}: {diff} vs se {se}");
    }
}

#[test]
fn hcrma_accumulates_less_grid_energy_than_random_on_correlated_channels() {
    let cfg = NetworkConfig { devices: 20, channels: 3, frames: 20, ..NetworkConfig::default() };
    let final_grid = |scheme| {
        let mut s = Scenario::new(cfg.clone(), ChannelMode::GilbertElliott, scheme);
        s.trials = 200;
        s.seed = 41;
        let traces: Vec<EnergyTrace> = run_point(&s, &cfg, 0, None).unwrap().into_iter().map(|t| t.trace).collect();
        cumulative_report(&traces).last().unwrap().grid
    };
    let (h, r) = (final_grid(Scheme::Hcrma), final_grid(Scheme::Random));
    assert!(h <= r, "hcrma {h} random {r}");
}
