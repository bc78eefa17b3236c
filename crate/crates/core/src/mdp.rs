//! Finite MDPs, the built-in environments, rollouts and exact solvers.
//!
//! Transitions are stored densely as `P(s'|s,a)` in row-major `[s][a][s']`
//! order. Rewards are deterministic `r(s,a)`. States listed as terminal are
//! absorbing: an episode ends on entering one and no further reward accrues.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SarsRecord, Trajectory};
use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    start_dist: Vec<f64>,
    horizon: usize,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// Builds an MDP after checking every row-stochasticity and range invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        start_dist: Vec<f64>,
        horizon: usize,
        terminal_states: &[usize],
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("MDP needs at least one state and one action"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::invalid(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::invalid("reward table has wrong size"));
        }
        if start_dist.len() != n_states {
            return Err(Error::invalid("start distribution has wrong size"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma {gamma} outside [0, 1)")));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        for (row_idx, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|msg| {
                Error::invalid(format!(
                    "transition row (s={}, a={}) {msg}",
                    row_idx / n_actions,
                    row_idx % n_actions
                ))
            })?;
        }
        check_distribution(&start_dist)
            .map_err(|msg| Error::invalid(format!("start distribution {msg}")))?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        let mut terminal = vec![false; n_states];
        for &s in terminal_states {
            if s >= n_states {
                return Err(Error::invalid(format!("terminal state {s} out of range")));
            }
            terminal[s] = true;
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            start_dist,
            horizon,
            terminal,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.terminal[s]).collect()
    }

    /// `P(.|s,a)` as a dense row.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// Random MDP with sparse random dynamics, used by property tests and
    /// the analysis checks. Roughly a third of transition entries are zero.
    pub fn random<R: Rng>(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        gamma: f64,
        with_terminal: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let mut row: Vec<f64> = (0..n_states)
                .map(|_| {
                    if rng.gen_bool(0.33) {
                        0.0
                    } else {
                        rng.gen::<f64>() + 0.05
                    }
                })
                .collect();
            if row.iter().all(|&p| p == 0.0) {
                row[rng.gen_range(0..n_states)] = 1.0;
            }
            normalize(&mut row);
            transition.extend(row);
        }
        let reward = (0..n_states * n_actions)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut start: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 0.01).collect();
        let terminal: Vec<usize> = if with_terminal && n_states > 1 {
            let t = rng.gen_range(0..n_states);
            start[t] = 0.0;
            vec![t]
        } else {
            Vec::new()
        };
        normalize(&mut start);
        Self::new(
            n_states, n_actions, transition, reward, gamma, start, horizon, &terminal,
        )
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("has a negative or non-finite entry".into());
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("sums to {sum}, not 1"));
    }
    Ok(())
}

fn normalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
}

/// Grid moves in action-index order.
pub const GRID_MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// Desk-scale goal-reaching grid: `size x size` cells, four moves (up, right,
/// down, left), walls keep the agent in place, the centre cell is an absorbing
/// goal paying +1 on entry. Starts are uniform over the non-goal cells.
pub fn build_monolith_grid(size: usize, gamma: f64) -> Result<TabularMdp> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::invalid(format!(
            "grid size must be odd and at least 3, got {size}"
        )));
    }
    let n = size * size;
    let goal = monolith_goal(size);
    let mut transition = vec![0.0; n * 4 * n];
    let mut reward = vec![0.0; n * 4];
    for s in 0..n {
        let (row, col) = ((s / size) as isize, (s % size) as isize);
        for (a, (dr, dc)) in GRID_MOVES.iter().enumerate() {
            let next = if s == goal {
                s
            } else {
                let (r2, c2) = (row + dr, col + dc);
                if r2 < 0 || c2 < 0 || r2 >= size as isize || c2 >= size as isize {
                    s
                } else {
                    r2 as usize * size + c2 as usize
                }
            };
            transition[(s * 4 + a) * n + next] = 1.0;
            if s != goal && next == goal {
                reward[s * 4 + a] = 1.0;
            }
        }
    }
    let mut start = vec![1.0 / (n - 1) as f64; n];
    start[goal] = 0.0;
    TabularMdp::new(n, 4, transition, reward, gamma, start, 4 * size, &[goal])
}

pub fn monolith_goal(size: usize) -> usize {
    (size / 2) * size + size / 2
}

/// Deterministic corridor: actions are (left, right), start at 0, the last
/// state is an absorbing goal paying +1 on entry. Horizon `2 * len`.
pub fn build_chain(len: usize, gamma: f64) -> Result<TabularMdp> {
    if len < 2 {
        return Err(Error::invalid("chain needs at least 2 states"));
    }
    let goal = len - 1;
    let mut transition = vec![0.0; len * 2 * len];
    let mut reward = vec![0.0; len * 2];
    for s in 0..len {
        for a in 0..2 {
            let next = if s == goal {
                s
            } else if a == 0 {
                s.saturating_sub(1)
            } else {
                s + 1
            };
            transition[(s * 2 + a) * len + next] = 1.0;
            if s != goal && next == goal {
                reward[s * 2 + a] = 1.0;
            }
        }
    }
    let mut start = vec![0.0; len];
    start[0] = 1.0;
    TabularMdp::new(len, 2, transition, reward, gamma, start, 2 * len, &[goal])
}

/// Single-state MDP whose arm `k` pays `k / (n - 1)` (a single arm pays 1).
pub fn build_bandit(n_actions: usize, gamma: f64, horizon: usize) -> Result<TabularMdp> {
    if n_actions == 0 {
        return Err(Error::invalid("bandit needs at least one arm"));
    }
    let reward = if n_actions == 1 {
        vec![1.0]
    } else {
        (0..n_actions)
            .map(|k| k as f64 / (n_actions - 1) as f64)
            .collect()
    };
    TabularMdp::new(
        1,
        n_actions,
        vec![1.0; n_actions],
        reward,
        gamma,
        vec![1.0],
        horizon,
        &[],
    )
}

/// Stochastic policy table `pi(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(Error::invalid("policy table has wrong shape"));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row)
                .map_err(|msg| Error::invalid(format!("policy row {s} {msg}")))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!("action {a} out of range")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// Greedy policy over a `[s][a]` value table; ties go to the lowest index.
    pub fn greedy(n_actions: usize, values: &[f64]) -> Self {
        let actions: Vec<usize> = values.chunks(n_actions).map(argmax).collect();
        Self::deterministic(n_actions, &actions).expect("argmax is always in range")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    pub fn sample<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(s), rng)
    }

    pub fn check_matches(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::invalid(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }

    /// Mixes the policy with uniform noise: `(1 - eps) * pi + eps / |A|`.
    pub fn epsilon_noised(&self, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::invalid(format!("eps {eps} outside [0, 1]")));
        }
        let floor = eps / self.n_actions as f64;
        let mut probs: Vec<f64> = self.probs.iter().map(|p| (1.0 - eps) * p + floor).collect();
        // Renormalize so each row sums to 1 as exactly as floating point allows.
        for row in probs.chunks_mut(self.n_actions) {
            normalize(row);
        }
        Ok(Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        })
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularSolution {
    pub v_star: Vec<f64>,
    /// Row-major `[s][a]`.
    pub q_star: Vec<f64>,
    pub policy_star: TabularPolicy,
}

impl TabularSolution {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q_star[s * self.policy_star.n_actions() + a]
    }
}

fn backup_q(mdp: &TabularMdp, v: &[f64], q: &mut [f64]) {
    let n_a = mdp.n_actions();
    for s in 0..mdp.n_states() {
        for a in 0..n_a {
            q[s * n_a + a] = if mdp.is_terminal(s) {
                0.0
            } else {
                let future: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(v)
                    .map(|(p, v)| p * v)
                    .sum();
                mdp.reward(s, a) + mdp.gamma() * future
            };
        }
    }
}

/// Discounted infinite-horizon value iteration. The returned `v_star` has a
/// sup-norm Bellman residual of at most `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<TabularSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; n_s];
    let mut q = vec![0.0; n_s * n_a];
    loop {
        backup_q(mdp, &v, &mut q);
        let mut delta: f64 = 0.0;
        for s in 0..n_s {
            let best = q[s * n_a..(s + 1) * n_a]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta <= tol {
            break;
        }
    }
    backup_q(mdp, &v, &mut q);
    let v_star: Vec<f64> = q
        .chunks(n_a)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let policy_star = TabularPolicy::greedy(n_a, &q);
    Ok(TabularSolution {
        v_star,
        q_star: q,
        policy_star,
    })
}

/// Discounted infinite-horizon `V^pi`, solved by iterating to `tol`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<Vec<f64>> {
    policy.check_matches(mdp)?;
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; n_s];
    let mut q = vec![0.0; n_s * n_a];
    loop {
        backup_q(mdp, &v, &mut q);
        let mut delta: f64 = 0.0;
        for s in 0..n_s {
            let value: f64 = policy
                .row(s)
                .iter()
                .zip(&q[s * n_a..(s + 1) * n_a])
                .map(|(p, q)| p * q)
                .sum();
            delta = delta.max((value - v[s]).abs());
            v[s] = value;
        }
        if delta <= tol {
            return Ok(v);
        }
    }
}

/// Exact expected episodic return within the horizon, computed by pushing
/// the state distribution forward and retiring mass that enters a terminal
/// state. With `discounted = false` this is the success probability on the
/// goal-reaching environments.
pub fn expected_return(mdp: &TabularMdp, policy: &TabularPolicy, discounted: bool) -> Result<f64> {
    policy.check_matches(mdp)?;
    let n_s = mdp.n_states();
    let mut dist: Vec<f64> = (0..n_s)
        .map(|s| {
            if mdp.is_terminal(s) {
                0.0
            } else {
                mdp.start_dist()[s]
            }
        })
        .collect();
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..mdp.horizon() {
        let mut next = vec![0.0; n_s];
        let mut step_reward = 0.0;
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (a, &pa) in policy.row(s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                let w = mass * pa;
                step_reward += w * mdp.reward(s, a);
                for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    if p > 0.0 && !mdp.is_terminal(s2) {
                        next[s2] += w * p;
                    }
                }
            }
        }
        total += discount * step_reward;
        if discounted {
            discount *= mdp.gamma();
        }
        dist = next;
    }
    Ok(total)
}

/// Probability that an episode under `policy` ever collects positive reward.
/// Only meaningful for sparse non-negative rewards, where it equals the
/// undiscounted expected return.
pub fn success_probability(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    expected_return(mdp, policy, false)
}

/// Finds the noise level `eps` for which `epsilon_noised(pi_star, eps)`
/// attains `fraction` of the optimal policy's expected undiscounted return.
/// Bisection; the return is assumed non-increasing in `eps`.
pub fn calibrate_noise(mdp: &TabularMdp, pi_star: &TabularPolicy, fraction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("fraction must lie in [0, 1]"));
    }
    let optimal = expected_return(mdp, pi_star, false)?;
    let target = fraction * optimal;
    let at = |eps: f64| -> Result<f64> { expected_return(mdp, &pi_star.epsilon_noised(eps)?, false) };
    if at(1.0)? > target {
        return Err(Error::invalid(format!(
            "even the uniform policy exceeds {:.0}% of optimal return",
            fraction * 100.0
        )));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Runs one seeded episode.
pub fn rollout(mdp: &TabularMdp, policy: &TabularPolicy, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout_with(mdp, policy, &mut rng, 0)
}

/// Runs one episode drawing from `rng`, tagging records with `episode_id`.
/// The last record has `done = true` only if the episode entered a terminal
/// state; horizon truncation leaves `done = false`.
pub fn rollout_with<R: Rng>(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    rng: &mut R,
    episode_id: u64,
) -> Result<Trajectory> {
    policy.check_matches(mdp)?;
    let mut records = Vec::new();
    let mut s = sample_categorical(mdp.start_dist(), rng);
    for t in 0..mdp.horizon() {
        if mdp.is_terminal(s) {
            break;
        }
        let a = policy.sample(s, rng);
        let next = sample_categorical(mdp.transition_row(s, a), rng);
        let done = mdp.is_terminal(next);
        records.push(SarsRecord {
            state: s,
            action: a,
            reward: mdp.reward(s, a),
            next_state: next,
            done,
            episode_id,
            t,
        });
        if done {
            break;
        }
        s = next;
    }
    Ok(Trajectory::new(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monolith_five_layout() {
        let mdp = build_monolith_grid(5, 0.99).unwrap();
        assert_eq!(mdp.n_states(), 25);
        assert_eq!(mdp.n_actions(), 4);
        assert_eq!(monolith_goal(5), 12);
        assert_eq!(mdp.terminal_states(), vec![12]);
        assert_eq!(mdp.horizon(), 20);
        // Every move into the goal pays exactly +1: from 7 down, 11 right, 13 left, 17 up.
        for (s, a) in [(7, 2), (11, 1), (13, 3), (17, 0)] {
            assert_eq!(mdp.reward(s, a), 1.0);
            assert_eq!(mdp.transition_row(s, a)[12], 1.0);
        }
        let paying = (0..25)
            .flat_map(|s| (0..4).map(move |a| (s, a)))
            .filter(|&(s, a)| mdp.reward(s, a) != 0.0)
            .count();
        assert_eq!(paying, 4);
        assert_eq!(mdp.start_dist()[12], 0.0);
    }

    #[test]
    fn monolith_rejects_bad_sizes() {
        for size in [0, 1, 2, 4, 6] {
            assert!(matches!(
                build_monolith_grid(size, 0.99),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn monolith_three_step_into_goal_is_terminal() {
        let mdp = build_monolith_grid(3, 0.99).unwrap();
        // State 1 is directly above the centre (4); action 2 moves down.
        let policy = TabularPolicy::deterministic(4, &[2; 9]).unwrap();
        let mut start = vec![0.0; 9];
        start[1] = 1.0;
        let mdp = TabularMdp::new(
            9,
            4,
            mdp.transition.clone(),
            mdp.reward.clone(),
            0.99,
            start,
            12,
            &[4],
        )
        .unwrap();
        let traj = rollout(&mdp, &policy, 3).unwrap();
        assert_eq!(traj.len(), 1);
        let rec = traj.records()[0];
        assert_eq!((rec.state, rec.action, rec.next_state), (1, 2, 4));
        assert_eq!(rec.reward, 1.0);
        assert!(rec.done);
    }

    #[test]
    fn value_iteration_geometric_series() {
        let mdp = build_bandit(1, 0.5, 10).unwrap();
        let sol = value_iteration(&mdp, 1e-12).unwrap();
        assert!((sol.v_star[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn value_iteration_monolith_adjacent_cells() {
        let mdp = build_monolith_grid(5, 0.99).unwrap();
        let sol = value_iteration(&mdp, 1e-12).unwrap();
        // V*(cell at Manhattan distance d) = gamma^(d-1), by hand on the grid.
        for s in 0..25 {
            if s == 12 {
                assert_eq!(sol.v_star[s], 0.0);
                continue;
            }
            let d = (s / 5).abs_diff(2) + (s % 5).abs_diff(2);
            let expected = 0.99f64.powi(d as i32 - 1);
            assert!((sol.v_star[s] - expected).abs() < 1e-9, "state {s}");
        }
        for s in [7, 11, 13, 17] {
            assert!((sol.v_star[s] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn value_iteration_two_armed_bandit() {
        let mdp = build_bandit(2, 0.9, 1).unwrap();
        let sol = value_iteration(&mdp, 1e-10).unwrap();
        assert_eq!(sol.policy_star.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn value_iteration_rejects_bad_tolerance() {
        let mdp = build_bandit(2, 0.9, 1).unwrap();
        assert!(value_iteration(&mdp, 0.0).is_err());
    }

    #[test]
    fn greedy_ties_take_lowest_index() {
        let p = TabularPolicy::greedy(3, &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert_eq!(p.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(p.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn chain_rollout_is_exact() {
        let mdp = build_chain(3, 0.9).unwrap();
        let right = TabularPolicy::deterministic(2, &[1, 1, 1]).unwrap();
        let traj = rollout(&mdp, &right, 11).unwrap();
        let mut states: Vec<usize> = traj.records().iter().map(|r| r.state).collect();
        states.push(traj.records().last().unwrap().next_state);
        assert_eq!(states, vec![0, 1, 2]);
        assert_eq!(traj.total_reward(), 1.0);
    }

    #[test]
    fn rollout_is_seed_deterministic() {
        let mdp = build_monolith_grid(5, 0.99).unwrap();
        let pi = TabularPolicy::uniform(25, 4);
        assert_eq!(rollout(&mdp, &pi, 42).unwrap(), rollout(&mdp, &pi, 42).unwrap());
    }

    #[test]
    fn rollout_rejects_mismatched_policy() {
        let mdp = build_monolith_grid(5, 0.99).unwrap();
        let pi = TabularPolicy::uniform(9, 4);
        assert!(matches!(rollout(&mdp, &pi, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn optimal_rollouts_reach_goal() {
        let mdp = build_monolith_grid(5, 0.99).unwrap();
        let sol = value_iteration(&mdp, 1e-10).unwrap();
        for seed in 0..50 {
            let traj = rollout(&mdp, &sol.policy_star, seed).unwrap();
            assert_eq!(traj.total_reward(), 1.0);
            assert!(traj.records().last().unwrap().done);
            assert!(traj.len() <= mdp.horizon());
        }
    }

    #[test]
    fn epsilon_noise_formula() {
        let pi = TabularPolicy::deterministic(4, &[1]).unwrap();
        assert_eq!(pi.epsilon_noised(0.0).unwrap(), pi);
        assert_eq!(pi.epsilon_noised(1.0).unwrap().row(0), &[0.25; 4]);
        let noised = pi.epsilon_noised(0.4).unwrap();
        for (a, expect) in [0.1, 0.7, 0.1, 0.1].iter().enumerate() {
            assert!((noised.prob(0, a) - expect).abs() < 1e-15);
        }
        assert!(pi.epsilon_noised(-0.1).is_err());
        assert!(pi.epsilon_noised(1.5).is_err());
    }

    #[test]
    fn calibrated_noise_hits_sixty_percent() {
        let mdp = build_monolith_grid(5, 0.99).unwrap();
        let sol = value_iteration(&mdp, 1e-10).unwrap();
        let eps = calibrate_noise(&mdp, &sol.policy_star, 0.6).unwrap();
        let ret = expected_return(&mdp, &sol.policy_star.epsilon_noised(eps).unwrap(), false).unwrap();
        assert!((ret - 0.6).abs() < 1e-9);
        assert!(eps > 0.5 && eps < 1.0);
    }

    #[test]
    fn new_rejects_non_stochastic_rows() {
        let err = TabularMdp::new(1, 1, vec![0.5], vec![0.0], 0.9, vec![1.0], 1, &[]);
        assert!(err.is_err());
        let err = TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0], 1, &[]);
        assert!(err.is_err());
        let err = TabularMdp::new(1, 1, vec![1.0], vec![0.0], 0.5, vec![1.0], 0, &[]);
        assert!(err.is_err());
    }
}
