//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uges::analysis::{check_expert_dominance, concentrability, data_efficiency_report, occupancy, NaiveRun};
use uges::critic::{
    bellman_loss_and_grad, critic_step, cql_penalty_and_grad, mean_and_variance, uncertainty, Bootstrap,
    CriticConfig, QEnsemble,
};
use uges::dataset::{
    compose_mixed, compose_with_human, generate_dataset, GenerateConfig, ReplayDataset, SarsRecord, Source,
    Trajectory,
};
use uges::mdp::{
    build_bandit, build_monolith_grid, calibrate_noise, value_iteration, TabularMdp, TabularPolicy,
};
use uges::neural::{MlpNet, OptimizerState};
use uges::sampler::{expert_draw_ledger, uges_select, SamplerConfig, SamplerDecision, SamplingMode};
use uges::trainer::{actor_loss_and_grad, train, CriticMode, EvalEntry, TrainData, TrainLog, TrainerConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

fn random_net<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> MlpNet {
    let mut sizes = vec![n_in];
    for _ in 0..rng.gen_range(1..=2) {
        sizes.push(rng.gen_range(3..=8));
    }
    sizes.push(n_out);
    random_net_with(&sizes, rng)
}

fn random_net_with<R: Rng>(sizes: &[usize], rng: &mut R) -> MlpNet {
    let n_params: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let params = (0..n_params).map(|_| rng.gen_range(-1.0..1.0)).collect();
    MlpNet::from_params(sizes, params).unwrap()
}

fn random_batch<R: Rng>(n_s: usize, n_a: usize, rng: &mut R) -> Vec<SarsRecord> {
    (0..rng.gen_range(1..=8))
        .map(|_| SarsRecord {
            state: rng.gen_range(0..n_s),
            action: rng.gen_range(0..n_a),
            reward: rng.gen_range(-1.0..1.0),
            next_state: rng.gen_range(0..n_s),
            done: rng.gen_bool(0.2),
            episode_id: 0,
            t: 0,
        })
        .collect()
}

/// Largest per-entry `|a - n| / max(|a|, |n|, 1e-6)` against central differences.
fn max_rel_error(net: &MlpNet, analytic: &[f64], loss: impl Fn(&MlpNet) -> f64) -> f64 {
    const H: f64 = 1e-5;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + H;
        let up = loss(&probe);
        probe.params_mut()[i] = orig - H;
        let down = loss(&probe);
        probe.params_mut()[i] = orig;
        let n = (up - down) / (2.0 * H);
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut bellman, mut cql, mut actor) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n_s = rng.gen_range(2..=6);
        let n_a = rng.gen_range(2..=4);
        let net = random_net(n_s, n_a, &mut rng);
        let batch = random_batch(n_s, n_a, &mut rng);

        let targets: Vec<f64> = batch.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, g) = bellman_loss_and_grad(&net, &batch, &targets).unwrap();
        bellman = bellman.max(max_rel_error(&net, &g, |n| bellman_loss_and_grad(n, &batch, &targets).unwrap().0));

        let (_, g) = cql_penalty_and_grad(&net, &batch).unwrap();
        cql = cql.max(max_rel_error(&net, &g, |n| cql_penalty_and_grad(n, &batch).unwrap().0));

        let states: Vec<usize> = batch.iter().map(|r| r.state).collect();
        let q: Vec<f64> = (0..states.len() * n_a).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let temp = rng.gen_range(0.0..2.0);
        let (_, g) = actor_loss_and_grad(&net, &states, &q, temp).unwrap();
        actor = actor.max(max_rel_error(&net, &g, |n| actor_loss_and_grad(n, &states, &q, temp).unwrap().0));
    }
    let worst = bellman.max(cql).max(actor);
    let elapsed = start.elapsed();
    ensure(
        worst < 1e-4 && within(elapsed, 30.0),
        format!("max rel error bellman {bellman:.1e}, cql {cql:.1e}, actor {actor:.1e} (< 1e-4) over 100 pairs"),
    )
}

// ---------------------------------------------------------------------------
// 2. Uncertainty estimator

/// Single-layer net whose output for every state is `value` on all actions.
fn constant_net(n_s: usize, n_a: usize, value: f64) -> MlpNet {
    let mut params = vec![0.0; n_s * n_a];
    params.extend(std::iter::repeat(value).take(n_a));
    MlpNet::from_params(&[n_s, n_a], params).unwrap()
}

fn criterion_uncertainty() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = random_batch(5, 3, &mut rng);

    let net = random_net(5, 3, &mut rng);
    let identical = QEnsemble::from_members(vec![net; 7]).unwrap();
    let est = uncertainty(&identical, &batch).unwrap();
    let zero = est.sigma_sq.iter().all(|&v| v == 0.0) && est.batch_sigma == 0.0;

    let hand = |values: &[f64]| {
        let ens = QEnsemble::from_members(values.iter().map(|&v| constant_net(5, 3, v)).collect()).unwrap();
        let est = uncertainty(&ens, &batch).unwrap();
        (est.mu[0], est.sigma_sq[0])
    };
    let (mu2, var2) = hand(&[1.0, 3.0]);
    let (mu4, var4) = hand(&[0.0, 0.0, 0.0, 4.0]);
    let exact = (mu2 - 2.0).abs() < 1e-12
        && (var2 - 1.0).abs() < 1e-12
        && (mu4 - 1.0).abs() < 1e-12
        && (var4 - 3.0).abs() < 1e-12
        && mean_and_variance(&[1.0, 3.0]) == (2.0, 1.0);

    let mut min_var = f64::INFINITY;
    for _ in 0..10_000 {
        let m = rng.gen_range(2..=6);
        let sizes = [4, rng.gen_range(2..=6), 2];
        let members = (0..m).map(|_| random_net_with(&sizes, &mut rng)).collect();
        let ens = QEnsemble::from_members(members).unwrap();
        let batch = random_batch(4, 2, &mut rng);
        let est = uncertainty(&ens, &batch).unwrap();
        min_var = est.sigma_sq.iter().copied().fold(min_var, f64::min);
    }
    ensure(
        zero && exact && min_var >= 0.0,
        format!(
            "identical members give zero: {zero}; hand cases (2, 1) and (1, 3): got ({mu2}, {var2}) and ({mu4}, {var4}); \
             min variance over 10000 ensembles {min_var:.2e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Branch semantics

fn single_state_dataset(state: usize, source: Source) -> ReplayDataset {
    let trajectories = (0..4)
        .map(|k| {
            Trajectory::new(vec![SarsRecord {
                state,
                action: 0,
                reward: 1.0,
                next_state: state,
                done: true,
                episode_id: k,
                t: 0,
            }])
        })
        .collect();
    ReplayDataset::from_trajectories("toy", source, trajectories).unwrap()
}

fn criterion_branch() -> Outcome {
    let start = Instant::now();
    let eps = 0.05f64;
    let below = f64::from_bits(eps.to_bits() - 1);
    let above = f64::from_bits(eps.to_bits() + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut stream: Vec<f64> = vec![eps, below, above, 0.0, f64::MAX, f64::MIN_POSITIVE, eps];
    while stream.len() < 1000 {
        stream.push(match rng.gen_range(0..4) {
            0 => eps,
            1 => rng.gen_range(0.0..eps),
            2 => rng.gen_range(eps..1.0),
            _ => rng.gen_range(0.0..0.1),
        });
    }
    let cfg = SamplerConfig {
        epsilon: eps,
        batch_size: 4,
        mode: SamplingMode::Uges,
        soa_fraction: 0.8,
    };
    let (d_soa, d_h) = (single_state_dataset(0, Source::Soa), single_state_dataset(1, Source::Human));
    let mut decisions: Vec<SamplerDecision> = Vec::new();
    let mut mismatches = 0;
    for (step, &sigma) in stream.iter().enumerate() {
        let sel = uges_select(sigma, step + 1, &cfg, &d_soa, &d_h, &mut rng).unwrap();
        let expected = if sigma < eps { Source::Soa } else { Source::Human };
        let state = if expected == Source::Soa { 0 } else { 1 };
        if sel.decision.source != expected || sel.batch.iter().any(|r| r.state != state) {
            mismatches += 1;
        }
        decisions.push(sel.decision);
    }
    let ledger = expert_draw_ledger(&decisions);
    let boundary = stream.iter().zip(&decisions).filter(|(&s, _)| s == eps).all(|(_, d)| d.source == Source::Human);
    let soa_expected = stream.iter().filter(|&&s| s < eps).count();
    let elapsed = start.elapsed();
    ensure(
        mismatches == 0
            && boundary
            && ledger.total_batches() == 1000
            && ledger.soa_batches == soa_expected
            && within(elapsed, 1.0),
        format!(
            "{mismatches} mismatches over 1000 steps, sigma = eps goes to human: {boundary}, ledger {} soa + {} human = {}",
            ledger.soa_batches,
            ledger.human_batches,
            ledger.total_batches()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Concentrability oracle

fn random_policy<R: Rng>(n_s: usize, n_a: usize, rng: &mut R) -> TabularPolicy {
    let mut probs = Vec::new();
    for _ in 0..n_s {
        let mut row: Vec<f64> = (0..n_a).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen() }).collect();
        if row.iter().sum::<f64>() == 0.0 {
            row[0] = 1.0;
        }
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|p| p / total));
    }
    TabularPolicy::new(n_s, n_a, probs).unwrap()
}

/// `d[t][s * A + a]` by walking every path prefix with its probability.
fn enumerate_paths(mdp: &TabularMdp, pi: &TabularPolicy) -> Vec<Vec<f64>> {
    let n_a = mdp.n_actions();
    let mut d = vec![vec![0.0; mdp.n_states() * n_a]; mdp.horizon()];
    let mut frontier: Vec<(usize, f64)> = mdp.start_dist().iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect();
    for slice in d.iter_mut() {
        let mut next = Vec::new();
        for &(s, p) in &frontier {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..n_a {
                let pa = p * pi.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                slice[s * n_a + a] += pa;
                for (s2, &q) in mdp.transition_row(s, a).iter().enumerate() {
                    if q > 0.0 {
                        next.push((s2, pa * q));
                    }
                }
            }
        }
        frontier = next;
    }
    d
}

fn criterion_concentrability() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut identity_err = 0.0f64;
    for _ in 0..50 {
        let n_s = rng.gen_range(1..=8);
        let n_a = rng.gen_range(1..=4);
        let terminal = n_s > 1 && rng.gen_bool(0.5);
        let mdp = TabularMdp::random(n_s, n_a, rng.gen_range(1..=8), 0.9, terminal, &mut rng).unwrap();
        let actions: Vec<usize> = (0..n_s).map(|_| rng.gen_range(0..n_a)).collect();
        let pi = TabularPolicy::deterministic(n_a, &actions).unwrap();
        identity_err = identity_err.max((concentrability(&mdp, &pi, &pi).unwrap().c_star.value() - 1.0).abs());
    }

    let mut closed_err = 0.0f64;
    for n_a in [2, 3, 4, 5] {
        let mdp = build_bandit(n_a, 0.9, 3).unwrap();
        let star = TabularPolicy::deterministic(n_a, &[n_a - 1]).unwrap();
        for k in 0..=9 {
            let eps = k as f64 / 10.0;
            let c = concentrability(&mdp, &star.epsilon_noised(eps).unwrap(), &star).unwrap().c_star.value();
            closed_err = closed_err.max((c - 1.0 / (1.0 - eps * (1.0 - 1.0 / n_a as f64))).abs());
        }
    }

    let (mut shapes, mut enum_err) = (0, 0.0f64);
    for n_s in 1..=4 {
        for n_a in 1..=3 {
            for h in 1..=4 {
                for terminal in [false, true] {
                    if terminal && n_s == 1 {
                        continue;
                    }
                    for _ in 0..5 {
                        let mdp = TabularMdp::random(n_s, n_a, h, 0.9, terminal, &mut rng).unwrap();
                        let pi = random_policy(n_s, n_a, &mut rng);
                        let occ = occupancy(&mdp, &pi).unwrap();
                        for (t, slice) in enumerate_paths(&mdp, &pi).iter().enumerate() {
                            for (x, y) in occ.slice(t + 1).iter().zip(slice) {
                                enum_err = enum_err.max((x - y).abs());
                            }
                        }
                    }
                    shapes += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(
        identity_err < 1e-9 && closed_err < 1e-9 && enum_err < 1e-9 && within(elapsed, 60.0),
        format!(
            "identity err {identity_err:.1e} on 50 MDPs, closed-form err {closed_err:.1e}, \
             enumeration err {enum_err:.1e} over {shapes} shapes x 5 instances"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Expert dominance

fn criterion_dominance() -> Outcome {
    let start = Instant::now();
    let mdp = build_monolith_grid(5, 0.99).unwrap();
    let star = value_iteration(&mdp, 1e-10).unwrap().policy_star;
    let eps_soa = calibrate_noise(&mdp, &star, 0.6).unwrap();
    let report = check_expert_dominance(
        &mdp,
        &star.epsilon_noised(0.05).unwrap(),
        &star.epsilon_noised(eps_soa).unwrap(),
        &star,
    )
    .unwrap();
    let elapsed = start.elapsed();
    ensure(
        report.dominates && within(elapsed, 5.0),
        format!(
            "C*(expert, eps 0.05) = {:.4} < C*(SOA, eps {eps_soa:.4}) = {:.4}: {}",
            report.human.c_star.value(),
            report.soa.c_star.value(),
            report.dominates
        ),
    )
}

// ---------------------------------------------------------------------------
// 6 and 7. Critic fixed points

/// One record per (non-terminal state, action), skipping `skip(s)` if given.
fn tabular_records(mdp: &TabularMdp, skip: Option<fn(usize) -> usize>) -> Vec<SarsRecord> {
    let mut out = Vec::new();
    for s in (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..mdp.n_actions() {
            if skip.map_or(false, |f| f(s) == a) {
                continue;
            }
            let next = mdp.transition_row(s, a).iter().position(|&p| p == 1.0).expect("deterministic grid");
            out.push(SarsRecord {
                state: s,
                action: a,
                reward: mdp.reward(s, a),
                next_state: next,
                done: mdp.is_terminal(next),
                episode_id: 0,
                t: 0,
            });
        }
    }
    out
}

fn fit_critic(mdp: &TabularMdp, records: &[SarsRecord], alpha: f64, seed: u64, steps: usize) -> QEnsemble {
    let sizes = [mdp.n_states(), 32, 32, mdp.n_actions()];
    let mut ens = QEnsemble::new(&sizes, 5, seed).unwrap();
    let mut opts: Vec<OptimizerState> = ens.members().iter().map(|n| OptimizerState::for_net(n, 1e-3)).collect();
    let cfg = CriticConfig {
        gamma: mdp.gamma(),
        alpha,
        tau: 0.01,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
    for _ in 0..steps {
        let batch: Vec<SarsRecord> = (0..32).map(|_| records[rng.gen_range(0..records.len())]).collect();
        critic_step(&mut ens, &mut opts, &batch, &cfg, Bootstrap::Greedy).unwrap();
    }
    ens
}

fn criterion_convergence() -> Outcome {
    let start = Instant::now();
    let mdp = build_monolith_grid(3, 0.9).unwrap();
    let q_star = value_iteration(&mdp, 1e-12).unwrap();
    let ens = fit_critic(&mdp, &tabular_records(&mdp, None), 0.0, 6, 5000);
    let q = ens.mean_q_table();
    let n_a = mdp.n_actions();
    let sup = (0..mdp.n_states())
        .filter(|&s| !mdp.is_terminal(s))
        .flat_map(|s| (0..n_a).map(move |a| (s, a)))
        .map(|(s, a)| (q[s * n_a + a] - q_star.q(s, a)).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    ensure(
        sup < 0.05 && within(elapsed, 120.0),
        format!("sup |Q - Q*| = {sup:.4} (< 0.05) on the 3x3 grid, 5000 steps"),
    )
}

fn criterion_conservatism() -> Outcome {
    let mdp = build_monolith_grid(3, 0.9).unwrap();
    let skip: fn(usize) -> usize = |s| s % 4;
    let records = tabular_records(&mdp, Some(skip));
    let n_a = mdp.n_actions();
    let ood: Vec<usize> = (0..mdp.n_states())
        .filter(|&s| !mdp.is_terminal(s))
        .map(|s| s * n_a + skip(s))
        .collect();
    let mut wins = 0;
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let q0 = fit_critic(&mdp, &records, 0.0, seed, 5000).mean_q_table();
        let q1 = fit_critic(&mdp, &records, 1.0, seed, 5000).mean_q_table();
        if ood.iter().all(|&i| q1[i] < q0[i]) {
            wins += 1;
        }
        gaps.push(ood.iter().map(|&i| q0[i] - q1[i]).fold(f64::INFINITY, f64::min));
    }
    ensure(
        wins == 5,
        format!(
            "{wins}/5 seeds with every unseen action lower under alpha = 1; smallest gaps {:?}",
            gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8 and 9. Desk-scale comparisons

struct Buffers {
    soa: ReplayDataset,
    human: ReplayDataset,
    large_human: ReplayDataset,
}

fn buffers(mdp: &TabularMdp, seed: u64, n_soa: usize, n_human: usize, n_large: usize) -> Buffers {
    let star = value_iteration(mdp, 1e-10).unwrap().policy_star;
    let soa_policy = star.epsilon_noised(calibrate_noise(mdp, &star, 0.6).unwrap()).unwrap();
    let expert = star.epsilon_noised(0.05).unwrap();
    let gen = |p: &TabularPolicy, source, n, s| generate_dataset(mdp, p, &GenerateConfig::new("monolith5", source, n, s)).unwrap();
    Buffers {
        soa: gen(&soa_policy, Source::Soa, n_soa, 100 + seed),
        human: gen(&expert, Source::Human, n_human, 200 + seed),
        large_human: gen(&expert, Source::Human, n_large.max(1), 200 + seed),
    }
}

fn metric(e: &EvalEntry) -> f64 {
    e.exact_return
}

/// Mean over runs of the evaluation metric at each shared step.
fn mean_curve(logs: &[TrainLog]) -> Vec<(usize, f64)> {
    let n = logs.len() as f64;
    (0..logs[0].evals.len())
        .map(|i| (logs[0].evals[i].step, logs.iter().map(|l| metric(&l.evals[i])).sum::<f64>() / n))
        .collect()
}

fn first_reach(curve: &[(usize, f64)], threshold: f64) -> Option<usize> {
    curve.iter().find(|(_, v)| *v >= threshold).map(|(s, _)| *s)
}

fn criterion_speedup() -> Outcome {
    let start = Instant::now();
    let mdp = build_monolith_grid(5, 0.99).unwrap();
    let cfg = TrainerConfig::default();
    let (mut uges_logs, mut naive_logs) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let b = buffers(&mdp, seed, 200, 50, 0);
        let mixed = compose_mixed(&b.soa, &b.human, 0.8).unwrap();
        let run_cfg = TrainerConfig { seed, ..cfg.clone() };
        uges_logs.push(train(&run_cfg, TrainData::Uges { soa: &b.soa, human: &b.human }, &mdp).unwrap().log);
        let naive_cfg = TrainerConfig {
            sampling: SamplingMode::Naive,
            ..run_cfg
        };
        naive_logs.push(train(&naive_cfg, TrainData::Naive { mixed: &mixed }, &mdp).unwrap().log);
    }
    let (u, n) = (mean_curve(&uges_logs), mean_curve(&naive_logs));
    let (u_reach, n_reach) = (first_reach(&u, 0.8), first_reach(&n, 0.8));
    let (u_final, n_final) = (u.last().unwrap().1, n.last().unwrap().1);
    let elapsed = start.elapsed();
    let fmt = |r: Option<usize>| r.map_or("never".to_string(), |s| s.to_string());
    let detail = format!(
        "mean return >= 0.8 at step {} (uges) vs {} (naive), final {u_final:.3} vs {n_final:.3}, {} steps x 5 seeds",
        fmt(u_reach),
        fmt(n_reach),
        cfg.steps
    );
    match (u_reach, n_reach) {
        (Some(us), Some(ns)) => ensure(
            us as f64 <= 0.75 * ns as f64 && u_final >= n_final && within(elapsed, 900.0),
            format!("{detail}, speedup {:.2}x", ns as f64 / us as f64),
        ),
        _ => Err(detail),
    }
}

fn criterion_data_efficiency() -> Outcome {
    let mdp = build_monolith_grid(5, 0.99).unwrap();
    let sizes = [50, 100, 200, 400];
    let cfg = TrainerConfig {
        steps: 500,
        eval_every: 500,
        ..TrainerConfig::default()
    };
    let mut passing = 0;
    let mut summary = Vec::new();
    for seed in 0..5 {
        let b = buffers(&mdp, seed, 200, 50, *sizes.last().unwrap());
        let run_cfg = TrainerConfig { seed, ..cfg.clone() };
        let uges_log = train(&run_cfg, TrainData::Uges { soa: &b.soa, human: &b.human }, &mdp).unwrap().log;
        let naive_cfg = TrainerConfig {
            sampling: SamplingMode::Naive,
            ..run_cfg
        };
        let naive: Vec<NaiveRun> = sizes
            .iter()
            .map(|&n| {
                let mixed = compose_with_human(&b.soa, &b.large_human, n).unwrap();
                let log = train(&naive_cfg, TrainData::Naive { mixed: &mixed }, &mdp).unwrap().log;
                NaiveRun {
                    human_successful: n,
                    final_return: metric(log.final_eval().unwrap()),
                }
            })
            .collect();
        let report = data_efficiency_report(
            metric(uges_log.final_eval().unwrap()),
            uges_log.human_successful_drawn,
            &naive,
            0.05,
        )
        .unwrap();
        if report.multiplier > 1.0 {
            passing += 1;
        }
        summary.push(format!(
            "{}{:.0}",
            if report.lower_bound { ">=" } else { "" },
            report.multiplier
        ));
    }
    ensure(
        passing >= 4,
        format!("multiplier > 1 in {passing}/5 seed groups (need 4); multipliers [{}]", summary.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 10. Determinism and round trips

fn random_dataset<R: Rng>(rng: &mut R) -> ReplayDataset {
    let n_s = rng.gen_range(1..20);
    let trajectories: Vec<Trajectory> = (0..rng.gen_range(1..6u64))
        .map(|ep| {
            let len = rng.gen_range(1..8);
            let mut state = rng.gen_range(0..n_s);
            let records = (0..len)
                .map(|t| {
                    let next = rng.gen_range(0..n_s);
                    let reward = match rng.gen_range(0..4) {
                        0 => 0.0,
                        1 => 1.0,
                        2 => rng.gen_range(-1e-300..1e-300),
                        _ => rng.gen_range(-10.0..10.0),
                    };
                    let rec = SarsRecord {
                        state,
                        action: rng.gen_range(0..5),
                        reward,
                        next_state: next,
                        done: t + 1 == len && rng.gen_bool(0.5),
                        episode_id: ep,
                        t,
                    };
                    state = next;
                    rec
                })
                .collect();
            Trajectory::new(records)
        })
        .collect();
    let source = if rng.gen_bool(0.5) { Source::Soa } else { Source::Human };
    ReplayDataset::from_trajectories(format!("env{}", rng.gen_range(0..100)), source, trajectories).unwrap()
}

fn random_ensemble<R: Rng>(rng: &mut R) -> QEnsemble {
    let n_s = rng.gen_range(1..10);
    let n_a = rng.gen_range(1..5);
    let mut sizes = vec![n_s];
    for _ in 0..rng.gen_range(0..3) {
        sizes.push(rng.gen_range(1..10));
    }
    sizes.push(n_a);
    let mut ens = QEnsemble::new(&sizes, rng.gen_range(2..6), rng.gen()).unwrap();
    for t in ens.targets_mut() {
        t.params_mut().iter_mut().for_each(|p| *p += rng.gen_range(-1.0..1.0));
    }
    ens
}

fn train_artifacts(mdp: &TabularMdp, b: &Buffers, mode: CriticMode) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let cfg = TrainerConfig {
        steps: 150,
        eval_every: 50,
        ensemble_size: 3,
        mode,
        seed: 9,
        ..TrainerConfig::default()
    };
    let out = train(&cfg, TrainData::Uges { soa: &b.soa, human: &b.human }, mdp).unwrap();
    let (mut steps, mut evals) = (Vec::new(), Vec::new());
    out.log.write_steps_csv(&mut steps).unwrap();
    out.log.write_evals_csv(&mut evals).unwrap();
    let mut weights = out.ensemble.to_bytes();
    if let Some(actor) = &out.actor {
        weights.extend(actor.net.to_bytes());
    }
    (steps, evals, weights)
}

fn criterion_determinism() -> Outcome {
    let mdp = build_monolith_grid(5, 0.99).unwrap();
    let a = buffers(&mdp, 3, 40, 10, 0);
    let b = buffers(&mdp, 3, 40, 10, 0);
    let datasets_equal = a.soa.encode() == b.soa.encode() && a.human.encode() == b.human.encode();
    let runs_equal = [CriticMode::QLearning, CriticMode::ActorCritic]
        .into_iter()
        .all(|mode| train_artifacts(&mdp, &a, mode) == train_artifacts(&mdp, &b, mode));

    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut dataset_failures = 0;
    let mut checkpoint_failures = 0;
    for i in 0..100 {
        let d = random_dataset(&mut rng);
        let d = if i % 4 == 0 {
            let other = random_dataset(&mut rng);
            let human = ReplayDataset::from_trajectories(d.env_id(), Source::Human, other.trajectories()).unwrap();
            compose_with_human(&d, &human, 0).unwrap()
        } else {
            d
        };
        let path = dir.path().join(format!("d{i}.dataset"));
        d.save(&path).unwrap();
        let loaded = ReplayDataset::load(&path).unwrap();
        if loaded != d || loaded.encode() != d.encode() {
            dataset_failures += 1;
        }

        let ens = random_ensemble(&mut rng);
        let path = dir.path().join(format!("e{i}.ens"));
        ens.save(&path).unwrap();
        let loaded = QEnsemble::load(&path).unwrap();
        if loaded != ens || loaded.to_bytes() != ens.to_bytes() {
            checkpoint_failures += 1;
        }
    }
    ensure(
        datasets_equal && runs_equal && dataset_failures == 0 && checkpoint_failures == 0,
        format!(
            "same-seed datasets identical: {datasets_equal}, logs and weights identical: {runs_equal}; \
             round-trip failures: {dataset_failures} datasets, {checkpoint_failures} checkpoints of 100"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", criterion_gradients),
        ("uncertainty estimator", criterion_uncertainty),
        ("branch semantics", criterion_branch),
        ("concentrability oracle", criterion_concentrability),
        ("expert dominance", criterion_dominance),
        ("critic convergence", criterion_convergence),
        ("conservatism", criterion_conservatism),
        ("desk-scale speedup", criterion_speedup),
        ("data efficiency", criterion_data_efficiency),
        ("determinism and round trips", criterion_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{:>2}] {name}: {detail} ({secs:.1}s)", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
