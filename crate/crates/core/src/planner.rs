//! Offline harvested-energy allocation with full knowledge of `X`, `E`, `W`.
//!
//! The linear program is solved as a min-cost flow. Harvest `E(i)` enters
//! frame node `i`, passes through a battery arc of capacity `B_max`, and is
//! either spent on frame `i` (capacity `X(i)`, cost `-W_i`) or carried to
//! frame `i + 1`. Energy the flow chooses not to route is spilled. Any flow is
//! realizable by the clamped battery recursion because forced spill never
//! leaves less energy stored than the flow assumes.

use crate::energy::{EnergyTrace, ENERGY_TOL};
use crate::error::{Error, Result};

pub const DEFAULT_GRID_STEP: f64 = 0.05;
pub const DEFAULT_STATE_CAP: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerInput {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub w: Vec<f64>,
    pub b_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerSolution {
    pub xh: Vec<f64>,
    pub objective: f64,
    pub feasible: bool,
}

impl PlannerInput {
    pub fn validate(&self) -> Result<()> {
        let l = self.x.len();
        if self.e.len() != l || self.w.len() != l {
            return Err(Error::PlannerInput(format!(
                "lengths differ: X {l}, E {}, W {}",
                self.e.len(),
                self.w.len()
            )));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.b_max) {
            return Err(Error::PlannerInput(format!("B_max = {}", self.b_max)));
        }
        for (name, col) in [("X", &self.x), ("E", &self.e), ("W", &self.w)] {
            if let Some(i) = col.iter().position(|&v| !ok(v)) {
                return Err(Error::PlannerInput(format!("{name}({}) = {}", i + 1, col[i])));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn objective(&self, xh: &[f64]) -> f64 {
        self.w.iter().zip(xh).map(|(w, x)| w * x).sum()
    }

    /// Runs `xh` through the battery recursion and returns the trace.
    pub fn replay(&self, xh: &[f64]) -> Result<EnergyTrace> {
        EnergyTrace::replay(&self.e, &self.w, &self.x, xh, self.b_max)
    }
}

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

struct Network {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl Network {
    fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.adj[from].push(id);
        self.arcs.push(Arc {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
        self.adj[to].push(id + 1);
        id
    }

    /// Successive shortest paths, augmenting only while a path has negative
    /// cost. Bellman-Ford handles the negative arc costs.
    fn min_cost_flow(&mut self, source: usize, sink: usize, eps: f64) {
        let n = self.adj.len();
        loop {
            let mut dist = vec![f64::INFINITY; n];
            let mut via = vec![usize::MAX; n];
            dist[source] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    if dist[u] == f64::INFINITY {
                        continue;
                    }
                    for &a in &self.adj[u] {
                        let arc = &self.arcs[a];
                        if arc.cap > eps && dist[u] + arc.cost < dist[arc.to] - 1e-15 {
                            dist[arc.to] = dist[u] + arc.cost;
                            via[arc.to] = a;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if !(dist[sink] < -1e-15) {
                return;
            }
            let mut push = f64::INFINITY;
            let mut v = sink;
            while v != source {
                let a = via[v];
                push = push.min(self.arcs[a].cap);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let a = via[v];
                self.arcs[a].cap -= push;
                self.arcs[a ^ 1].cap += push;
                v = self.arcs[a ^ 1].to;
            }
        }
    }
}

/// Exact optimum of `max sum W_i Xh(i)` over schedules the battery can serve.
pub fn solve_offline(input: &PlannerInput) -> Result<PlannerSolution> {
    input.validate()?;
    let l = input.len();
    if l == 0 {
        return Ok(PlannerSolution {
            xh: Vec::new(),
            objective: 0.0,
            feasible: true,
        });
    }
    let total_e: f64 = input.e.iter().sum();
    let unbounded = total_e + 1.0;
    let source = 2 * l;
    let sink = 2 * l + 1;
    let mut net = Network::new(2 * l + 2);
    let mut use_arcs = Vec::with_capacity(l);
    for i in 0..l {
        let (inp, out) = (2 * i, 2 * i + 1);
        net.add(source, inp, input.e[i], 0.0);
        net.add(inp, out, input.b_max, 0.0);
        use_arcs.push(net.add(out, sink, input.x[i], -input.w[i]));
        if i + 1 < l {
            net.add(out, 2 * (i + 1), unbounded, 0.0);
        }
    }
    let scale = total_e.max(input.x.iter().sum::<f64>()).max(1.0);
    net.min_cost_flow(source, sink, 1e-13 * scale);

    let xh: Vec<f64> = use_arcs
        .iter()
        .zip(&input.x)
        .map(|(&a, &x)| net.arcs[a ^ 1].cap.clamp(0.0, x))
        .collect();
    let feasible = input.replay(&xh).is_ok();
    Ok(PlannerSolution {
        objective: input.objective(&xh),
        xh,
        feasible,
    })
}

/// Exact dynamic program over battery levels quantized to `grid_step`.
/// Inputs are rounded to the grid first.
pub fn dp_oracle(input: &PlannerInput, grid_step: f64, state_cap: usize) -> Result<PlannerSolution> {
    input.validate()?;
    if !(grid_step > 0.0) {
        return Err(Error::PlannerInput(format!("grid step {grid_step}")));
    }
    let l = input.len();
    let units = |v: f64| (v / grid_step).round() as usize;
    let b_max = units(input.b_max);
    let levels = b_max + 1;
    let states = l.saturating_mul(levels);
    if states > state_cap {
        return Err(Error::StateSpaceTooLarge { states, cap: state_cap });
    }
    let e: Vec<usize> = input.e.iter().map(|&v| units(v)).collect();
    let x: Vec<usize> = input.x.iter().map(|&v| units(v)).collect();

    // value[i][b]: best payoff from frame i on, holding b at its start.
    let mut value = vec![vec![0.0f64; levels]; l + 1];
    let mut choice = vec![vec![0usize; levels]; l];
    for i in (0..l).rev() {
        let e_next = e.get(i + 1).copied().unwrap_or(0);
        let w = input.w[i] * grid_step;
        for b in 0..levels {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..=x[i].min(b) {
                let next = (b - a + e_next).min(b_max);
                let v = w * a as f64 + value[i + 1][next];
                if v > best + 1e-12 {
                    best = v;
                    best_a = a;
                }
            }
            value[i][b] = best;
            choice[i][b] = best_a;
        }
    }
    let mut xh = Vec::with_capacity(l);
    let mut b = e.first().map_or(0, |&e0| e0.min(b_max));
    for i in 0..l {
        let a = choice[i][b];
        xh.push(a as f64 * grid_step);
        b = (b - a + e.get(i + 1).copied().unwrap_or(0)).min(b_max);
    }
    let objective = input.objective(&xh);
    Ok(PlannerSolution {
        objective,
        feasible: true,
        xh,
    })
}

/// Largest gap between [`dp_oracle`] and the exact optimum caused by
/// rounding. Moving each `E`, `X` and `B_max` by at most half a step shifts
/// the optimum by at most `step/2 * (L max W + 2 sum W)`. On grid-aligned
/// inputs the two agree exactly.
pub fn quantization_bound(input: &PlannerInput, grid_step: f64) -> f64 {
    let w_max = input.w.iter().copied().fold(0.0, f64::max);
    let w_sum: f64 = input.w.iter().sum();
    0.5 * grid_step * (input.len() as f64 * w_max + 2.0 * w_sum)
}

/// Checks a solution against the battery recursion and the demand bounds.
pub fn verify_solution(input: &PlannerInput, solution: &PlannerSolution) -> Result<()> {
    if solution.xh.iter().zip(&input.x).any(|(h, x)| *h < -ENERGY_TOL || *h > x + ENERGY_TOL) {
        return Err(Error::PlannerInput("draw outside [0, X]".into()));
    }
    let trace = input.replay(&solution.xh)?;
    trace.audit(input.b_max)?;
    let cumulative_ok = {
        let (mut used, mut harvested) = (0.0, 0.0);
        solution.xh.iter().zip(&input.e).all(|(h, e)| {
            used += h;
            harvested += e;
            used <= harvested + ENERGY_TOL * harvested.max(1.0)
        })
    };
    if !cumulative_ok {
        return Err(Error::PlannerInput("prefix causality violated".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(e: &[f64], x: &[f64], w: &[f64], b_max: f64) -> PlannerInput {
        PlannerInput {
            x: x.to_vec(),
            e: e.to_vec(),
            w: w.to_vec(),
            b_max,
        }
    }

    #[test]
    fn single_frame_uses_what_it_can() {
        let s = solve_offline(&input(&[10.0], &[4.0], &[0.5], 20.0)).unwrap();
        assert_eq!(s.xh, vec![4.0]);
        assert!((s.objective - 2.0).abs() < 1e-12);
        assert!(s.feasible);
    }

    #[test]
    fn reserves_for_expensive_frame() {
        let p = input(&[6.0, 0.0], &[5.0, 5.0], &[0.1, 0.9], 20.0);
        let s = solve_offline(&p).unwrap();
        assert!((s.xh[0] - 1.0).abs() < 1e-9 && (s.xh[1] - 5.0).abs() < 1e-9, "{:?}", s.xh);
        assert!((s.objective - 4.6).abs() < 1e-9);
        let d = dp_oracle(&p, DEFAULT_GRID_STEP, DEFAULT_STATE_CAP).unwrap();
        assert!((d.objective - 4.6).abs() < 1e-9);
        verify_solution(&p, &s).unwrap();
    }

    #[test]
    fn zero_weights_draw_nothing() {
        let s = solve_offline(&input(&[3.0, 3.0], &[2.0, 2.0], &[0.0, 0.0], 5.0)).unwrap();
        assert_eq!(s.xh, vec![0.0, 0.0]);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn no_storage_means_nothing_usable() {
        // Harvest must pass through the battery before use.
        let p = input(&[3.0, 3.0], &[2.0, 2.0], &[1.0, 1.0], 0.0);
        let s = solve_offline(&p).unwrap();
        assert_eq!(s.objective, 0.0);
        assert!(s.xh.iter().zip([2.0, 2.0]).all(|(h, m)| *h <= m));
    }

    #[test]
    fn spill_makes_problem_feasible() {
        let p = input(&[50.0, 50.0, 0.0], &[1.0, 1.0, 30.0], &[0.2, 0.2, 0.9], 10.0);
        let s = solve_offline(&p).unwrap();
        verify_solution(&p, &s).unwrap();
        // Frame 3 can see at most a full battery.
        assert!((s.xh[2] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_offline(&input(&[1.0], &[1.0, 2.0], &[1.0], 1.0)).is_err());
        assert!(solve_offline(&input(&[-1.0], &[1.0], &[1.0], 1.0)).is_err());
        assert!(matches!(
            dp_oracle(&input(&[1.0; 100], &[1.0; 100], &[1.0; 100], 1e4), 0.05, 1000),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }
}
