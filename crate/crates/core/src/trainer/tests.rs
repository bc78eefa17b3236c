use super::*;
use crate::dataset::{compose_mixed, generate_dataset, GenerateConfig};
use crate::mdp::{build_monolith_grid, success_probability, value_iteration};

struct Fixture {
    mdp: TabularMdp,
    soa: ReplayDataset,
    human: ReplayDataset,
}

fn fixture(size: usize) -> Fixture {
    let mdp = build_monolith_grid(size, 0.99).unwrap();
    let star = value_iteration(&mdp, 1e-10).unwrap().policy_star;
    let env = format!("monolith{size}");
    let soa_policy = star.epsilon_noised(0.9).unwrap();
    let human_policy = star.epsilon_noised(0.05).unwrap();
    let soa = generate_dataset(&mdp, &soa_policy, &GenerateConfig::new(&env, Source::Soa, 40, 1)).unwrap();
    let human = generate_dataset(&mdp, &human_policy, &GenerateConfig::new(&env, Source::Human, 10, 2)).unwrap();
    Fixture { mdp, soa, human }
}

fn small_cfg(steps: usize) -> TrainerConfig {
    TrainerConfig {
        steps,
        ensemble_size: 3,
        hidden: vec![16],
        batch_size: 8,
        eval_every: steps.max(1),
        eval_episodes: 5,
        ..TrainerConfig::default()
    }
}

#[test]
fn single_step_run() {
    let f = fixture(3);
    let out = train(&small_cfg(1), TrainData::Uges { soa: &f.soa, human: &f.human }, &f.mdp).unwrap();
    assert_eq!(out.log.steps.len(), 1);
    assert_eq!(out.log.decisions.len(), 1);
    assert_eq!(out.log.evals.len(), 1);
    assert_eq!(out.log.ledger().total_batches(), 1);
}

#[test]
fn ledger_totals_match_steps() {
    let f = fixture(3);
    let cfg = TrainerConfig {
        eval_every: 20,
        ..small_cfg(60)
    };
    let out = train(&cfg, TrainData::Uges { soa: &f.soa, human: &f.human }, &f.mdp).unwrap();
    let ledger = out.log.ledger();
    assert_eq!(ledger.soa_batches + ledger.human_batches, 60);
    assert_eq!(out.log.evals.iter().map(|e| e.step).collect::<Vec<_>>(), vec![20, 40, 60]);
    for (entry, d) in out.log.steps.iter().zip(&out.log.decisions) {
        assert_eq!(d.source == Source::Soa, entry.batch_sigma < cfg.epsilon);
    }
}

#[test]
fn identical_seed_gives_identical_log() {
    let f = fixture(3);
    for mode in [CriticMode::QLearning, CriticMode::ActorCritic] {
        let cfg = TrainerConfig { mode, ..small_cfg(40) };
        let a = train(&cfg, TrainData::Uges { soa: &f.soa, human: &f.human }, &f.mdp).unwrap();
        let b = train(&cfg, TrainData::Uges { soa: &f.soa, human: &f.human }, &f.mdp).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.ensemble.to_bytes(), b.ensemble.to_bytes());
        assert_eq!(a.actor, b.actor);
    }
}

#[test]
fn degenerate_thresholds() {
    let f = fixture(3);
    let data = TrainData::Uges { soa: &f.soa, human: &f.human };
    let never = train(&TrainerConfig { epsilon: f64::INFINITY, ..small_cfg(30) }, data, &f.mdp).unwrap();
    assert_eq!(never.log.ledger().human_batches, 0);
    assert_eq!(never.log.human_successful_drawn, 0);
    let always = train(&TrainerConfig { epsilon: 1e-300, ..small_cfg(30) }, data, &f.mdp).unwrap();
    assert_eq!(always.log.ledger().human_batches, 30);
}

#[test]
fn naive_mode_uses_single_buffer() {
    let f = fixture(3);
    let mixed = compose_mixed(&f.soa, &f.human, 0.8).unwrap();
    let cfg = TrainerConfig {
        sampling: SamplingMode::Naive,
        ..small_cfg(20)
    };
    let out = train(&cfg, TrainData::Naive { mixed: &mixed }, &f.mdp).unwrap();
    let ledger = out.log.ledger();
    assert_eq!((ledger.mixed_batches, ledger.soa_batches, ledger.human_batches), (20, 0, 0));
    assert!(out.log.human_successful_drawn <= mixed.successful_count(Some(Source::Human)));

    let wrong = train(&cfg, TrainData::Uges { soa: &f.soa, human: &f.human }, &f.mdp);
    assert!(matches!(wrong, Err(Error::InvalidArgument(_))));
}

#[test]
fn records_outside_mdp_are_rejected() {
    let f = fixture(3);
    let bigger = build_monolith_grid(5, 0.99).unwrap();
    let big = fixture(5);
    assert!(train(&small_cfg(1), TrainData::Uges { soa: &big.soa, human: &big.human }, &f.mdp).is_err());
    assert!(train(&small_cfg(1), TrainData::Uges { soa: &f.soa, human: &f.human }, &bigger).is_ok());
}

#[test]
fn evaluate_optimal_and_uniform() {
    let mdp = build_monolith_grid(5, 0.99).unwrap();
    let star = value_iteration(&mdp, 1e-10).unwrap().policy_star;
    let opt = evaluate(PolicySource::Tabular(&star), &mdp, 50, 3).unwrap();
    assert_eq!(opt.mean, 1.0);

    let uniform = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let reach = success_probability(&mdp, &uniform).unwrap();
    let r = evaluate(PolicySource::Tabular(&uniform), &mdp, 2000, 4).unwrap();
    assert!((r.mean - reach).abs() <= 3.0 * r.std_error, "{} vs {reach}", r.mean);

    assert!(matches!(
        evaluate(PolicySource::Tabular(&star), &mdp, 0, 0),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn evaluation_leaves_networks_untouched() {
    let mdp = build_monolith_grid(3, 0.99).unwrap();
    let ens = QEnsemble::new(&[9, 8, 4], 3, 1).unwrap();
    let actor = ActorNet::new(&[9, 8, 4], 2, 1.0).unwrap();
    let (e0, a0) = (ens.clone(), actor.clone());
    evaluate(PolicySource::Greedy(&ens), &mdp, 10, 0).unwrap();
    evaluate(PolicySource::Actor(&actor), &mdp, 10, 0).unwrap();
    assert_eq!(e0.to_bytes(), ens.to_bytes());
    assert_eq!(a0, actor);
}

#[test]
fn sweep_orders_rows_and_covers_extremes() {
    let f = fixture(3);
    let rows = sweep_epsilon(&small_cfg(30), &[f64::INFINITY, 1e-300], &f.soa, &f.human, &f.mdp).unwrap();
    assert_eq!(rows.len(), 2);
    let by_eps = |e: f64| rows.iter().find(|r| r.epsilon == e).unwrap();
    assert_eq!(by_eps(f64::INFINITY).human_draws, 0);
    assert_eq!(by_eps(1e-300).human_draws, 30);
    assert!(rows[0].final_return >= rows[1].final_return);
    assert!(sweep_epsilon(&small_cfg(5), &[1.0], &f.soa, &f.human, &f.mdp).is_err());
}

#[test]
fn eval_csv_round_trip() {
    let f = fixture(3);
    let cfg = TrainerConfig {
        eval_every: 10,
        ..small_cfg(30)
    };
    let out = train(&cfg, TrainData::Uges { soa: &f.soa, human: &f.human }, &f.mdp).unwrap();
    let mut buf = Vec::new();
    out.log.write_evals_csv(&mut buf).unwrap();
    let back = EvalSeries::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, EvalSeries::from_log(&out.log));
    let mut steps = Vec::new();
    out.log.write_steps_csv(&mut steps).unwrap();
    assert_eq!(String::from_utf8(steps).unwrap().lines().count(), 31);
}

#[test]
fn hook_sees_every_evaluation() {
    let f = fixture(3);
    let cfg = TrainerConfig {
        eval_every: 7,
        ..small_cfg(20)
    };
    let mut seen = Vec::new();
    train_with(&cfg, TrainData::Uges { soa: &f.soa, human: &f.human }, &f.mdp, |snap| {
        seen.push(snap.step);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![7, 14, 20]);
}
