use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use log::info;
use serde_json::{json, Value};
use uges::analysis::{check_expert_dominance, concentrability, export_curves};
use uges::critic::QEnsemble;
use uges::dataset::{compose_mixed, generate_dataset, GenerateConfig, ReplayDataset, Source};
use uges::env::{EnvSpec, PolicySpec};
use uges::mdp::{expected_return, value_iteration, TabularMdp};
use uges::neural::MlpNet;
use uges::sampler::{save_decision_log, SamplingMode};
use uges::trainer::{evaluate, sweep_epsilon, train_with, ActorNet, EvalSeries, PolicySource, TrainData, TrainerConfig};

use crate::manifest::{record, RunManifest};
use crate::{AnalyzeArgs, CliError, EvalArgs, GenDataArgs, Metric, PlotArgs, RunArgs, SourceArg, SweepArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn usage(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{context}: {e}"))
}

fn env_spec(arg: &str) -> Result<EnvSpec> {
    EnvSpec::resolve(arg).map_err(|e| usage("--env", e))
}

fn policy_spec(flag: &str, arg: &str) -> Result<PolicySpec> {
    arg.parse().map_err(|e| usage(flag, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| uges::Error::io(dir, e).into())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
    std::fs::write(path, text).map_err(|e| uges::Error::io(path, e).into())
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let spec = env_spec(&args.env)?;
    let policy_spec = policy_spec("--policy", &args.policy)?;
    let mdp = spec.build()?;
    let policy = policy_spec.build(&mdp)?;
    let source = match (args.source, policy_spec) {
        (Some(SourceArg::Soa), _) | (None, PolicySpec::Soa(_)) => Source::Soa,
        _ => Source::Human,
    };
    let cfg = GenerateConfig::new(spec.id(), source, args.successful as usize, args.seed);
    let data = generate_dataset(&mdp, &policy, &cfg)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    data.save(&args.out)?;

    let stats = data.stats();
    let stats_json = json!({
        "env": spec.id(),
        "policy": policy_spec.to_string(),
        "source": source.to_string(),
        "seed": args.seed,
        "n_episodes": stats.n_episodes,
        "n_timesteps": stats.n_timesteps,
        "n_successful_trajectories": stats.n_successful_trajectories,
        "mean_return": stats.mean_return,
        "policy_expected_return": expected_return(&mdp, &policy, false)?,
    });
    let stats_path = args.out.with_extension("stats.json");
    write_json(&stats_path, &stats_json)?;
    emit(&stats_json);

    let mut run = RunManifest::new("gen-data").output(&args.out).output(&stats_path);
    run.seed = Some(args.seed);
    record(&parent_dir(&args.out), &file_name(&args.out), run)?;
    Ok(())
}

struct Prepared {
    cfg: TrainerConfig,
    mdp: TabularMdp,
    soa: Option<ReplayDataset>,
    human: Option<ReplayDataset>,
    inputs: Vec<PathBuf>,
}

fn load_config(run: &RunArgs) -> Result<TrainerConfig> {
    let mut text = match &run.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| usage(&format!("--config {}", p.display()), e))?,
        None => String::new(),
    };
    text.push('\n');
    if let Some(seed) = run.seed {
        text += &format!("seed = {seed}\n");
    }
    for kv in &run.overrides {
        if !kv.contains('=') {
            return Err(CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")));
        }
        text += kv;
        text.push('\n');
    }
    TrainerConfig::parse(&text).map_err(|e| usage("config", e))
}

fn load_dataset(path: &Option<PathBuf>) -> Result<Option<ReplayDataset>> {
    path.as_ref().map(ReplayDataset::load).transpose().map_err(Into::into)
}

fn prepare(run: &RunArgs, extra: Option<&ReplayDataset>) -> Result<Prepared> {
    let cfg = load_config(run)?;
    let soa = load_dataset(&run.soa)?;
    let human = load_dataset(&run.human)?;
    let env_arg = match &run.env {
        Some(e) => e.clone(),
        None => soa
            .as_ref()
            .or(human.as_ref())
            .or(extra)
            .map(|d| d.env_id().to_string())
            .ok_or_else(|| CliError::Usage("--env is required when no dataset names its environment".into()))?,
    };
    let mdp = env_spec(&env_arg)?.build()?;
    let inputs = run.soa.iter().chain(&run.human).chain(&run.config).cloned().collect();
    Ok(Prepared {
        cfg,
        mdp,
        soa,
        human,
        inputs,
    })
}

fn require<'a>(d: &'a Option<ReplayDataset>, flag: &str, mode: &str) -> Result<&'a ReplayDataset> {
    d.as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing {flag} dataset (required for {mode} sampling)")))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mixed_in = load_dataset(&args.mixed)?;
    let p = prepare(&args.run, mixed_in.as_ref())?;
    let out = &args.run.out;
    create_dir(out)?;
    let mut run = RunManifest::new("train");
    run.config = args.run.config.as_ref().map(|c| c.display().to_string());
    run.seed = Some(p.cfg.seed);
    for i in p.inputs.iter().chain(&args.mixed) {
        run = run.input(i);
    }

    let composed;
    let data = match p.cfg.sampling {
        SamplingMode::Uges => {
            if args.mixed.is_some() {
                return Err(CliError::Usage("--mixed is only used with sampling = naive".into()));
            }
            TrainData::Uges {
                soa: require(&p.soa, "--soa", "uges")?,
                human: require(&p.human, "--human", "uges")?,
            }
        }
        SamplingMode::Naive => match &mixed_in {
            Some(mixed) => TrainData::Naive { mixed },
            None => {
                let soa = require(&p.soa, "--soa", "naive")?;
                let human = require(&p.human, "--human", "naive")?;
                composed = compose_mixed(soa, human, p.cfg.soa_fraction)?;
                let path = out.join("mixed.dataset");
                composed.save(&path)?;
                run = run.output(&path);
                TrainData::Naive { mixed: &composed }
            }
        },
    };

    let ckpt_dir = out.join("checkpoints");
    if !args.no_checkpoints {
        create_dir(&ckpt_dir)?;
    }
    let output = train_with(&p.cfg, data, &p.mdp, |snap| {
        info!(
            "step {:>6}: return {:.3} (exact {:.3})",
            snap.step, snap.eval.mean_return, snap.eval.exact_return
        );
        if !args.no_checkpoints {
            snap.ensemble.save(ckpt_dir.join(format!("step_{:06}.ens", snap.step)))?;
            if let Some(actor) = snap.actor {
                actor.net.save(ckpt_dir.join(format!("step_{:06}.actor", snap.step)))?;
            }
        }
        Ok(())
    })?;

    let log = &output.log;
    let steps_path = out.join("steps.csv");
    let evals_path = out.join("evals.csv");
    let decisions_path = out.join("decisions.csv");
    let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| uges::Error::io(p, e));
    log.write_steps_csv(create(&steps_path)?)?;
    log.write_evals_csv(create(&evals_path)?)?;
    save_decision_log(&decisions_path, &log.decisions, p.cfg.epsilon)?;
    let final_path = out.join("final.ens");
    output.ensemble.save(&final_path)?;
    if let Some(actor) = &output.actor {
        let path = out.join("final.actor");
        actor.net.save(&path)?;
        run = run.output(path);
    }
    let config_path = out.join("config.txt");
    std::fs::write(&config_path, p.cfg.to_config_string()).map_err(|e| uges::Error::io(&config_path, e))?;

    let ledger = log.ledger();
    let last = log.final_eval().expect("training evaluates at the last step");
    let summary = json!({
        "method": p.cfg.sampling.to_string(),
        "seed": p.cfg.seed,
        "steps": p.cfg.steps,
        "final_return": last.mean_return,
        "final_exact_return": last.exact_return,
        "ledger": ledger,
        "human_successful_drawn": log.human_successful_drawn,
    });
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary)?;
    emit(&summary);

    for path in [&steps_path, &evals_path, &decisions_path, &final_path, &config_path, &summary_path] {
        run = run.output(path);
    }
    if !args.no_checkpoints {
        run = run.output(&ckpt_dir);
    }
    record(out, "train", run)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mdp = env_spec(&args.env)?.build()?;
    let mut run = RunManifest::new("eval");
    run.seed = Some(args.seed);
    let (ensemble, actor, table);
    let source = match (&args.checkpoint, &args.actor, &args.policy) {
        (Some(ckpt), actor_path, _) => {
            ensemble = QEnsemble::load(ckpt)?;
            run = run.input(ckpt);
            if ensemble.n_states() != mdp.n_states() || ensemble.n_actions() != mdp.n_actions() {
                return Err(CliError::Usage(format!(
                    "checkpoint has {}x{} inputs/outputs but the env has {} states and {} actions",
                    ensemble.n_states(),
                    ensemble.n_actions(),
                    mdp.n_states(),
                    mdp.n_actions()
                )));
            }
            match actor_path {
                Some(path) => {
                    actor = ActorNet {
                        net: MlpNet::load(path)?,
                        temperature: 1.0,
                    };
                    run = run.input(path);
                    PolicySource::Actor(&actor)
                }
                None => PolicySource::Greedy(&ensemble),
            }
        }
        (None, _, Some(p)) => {
            table = policy_spec("--policy", p)?.build(&mdp)?;
            PolicySource::Tabular(&table)
        }
        (None, _, None) => return Err(CliError::Usage("give --checkpoint or --policy".into())),
    };
    let result = evaluate(source, &mdp, args.episodes, args.seed)?;
    let policy = source.to_policy();
    let value = json!({
        "mean": result.mean,
        "std_error": result.std_error,
        "exact_return": expected_return(&mdp, &policy, false)?,
        "episodes": args.episodes,
        "seed": args.seed,
        "returns": result.returns,
    });
    emit(&value);
    if let Some(out) = &args.out {
        write_json(out, &value)?;
        record(&parent_dir(out), &file_name(out), run.output(out))?;
    }
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let spec = env_spec(&args.env)?;
    let mu_spec = policy_spec("--mu", &args.mu)?;
    let against = args.against.as_deref().map(|a| policy_spec("--against", a)).transpose()?;
    let mdp = spec.build()?;
    let pi_star = value_iteration(&mdp, 1e-10)?.policy_star;
    let mu = mu_spec.build(&mdp)?;
    let mut value = concentrability(&mdp, &mu, &pi_star)?.to_json();
    value["env"] = json!(spec.id());
    value["mu"] = json!(mu_spec.to_string());
    if let Some(other) = against {
        let report = check_expert_dominance(&mdp, &mu, &other.build(&mdp)?, &pi_star)?;
        value["against"] = json!(other.to_string());
        value["dominance"] = report.to_json();
    }
    emit(&value);
    if let Some(out) = &args.out {
        write_json(out, &value)?;
        record(&parent_dir(out), &file_name(out), RunManifest::new("analyze").output(out))?;
    }
    Ok(())
}

pub fn plot(args: PlotArgs) -> Result<()> {
    let metric = match args.metric {
        Metric::MeanReturn => "mean_return",
        Metric::ExactReturn => "exact_return",
    };
    let series = args
        .logs
        .iter()
        .map(|path| {
            let file = File::open(path).map_err(|e| uges::Error::io(path, e))?;
            EvalSeries::read_csv_metric(std::io::BufReader::new(file), metric)
        })
        .collect::<uges::Result<Vec<_>>>()?;
    let (curves, paths) = export_curves(&series, &args.out)?;
    let mut run = RunManifest::new("plot");
    for l in &args.logs {
        run = run.input(l);
    }
    for p in &paths {
        run = run.output(p);
        let _ = writeln!(std::io::stdout().lock(), "{}", p.display());
    }
    for c in &curves {
        info!("{}: {} seeds, final mean {:.3}", c.method, c.seeds.len(), c.mean.last().copied().unwrap_or(f64::NAN));
    }
    record(&args.out, "plot", run)?;
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let p = prepare(&args.run, None)?;
    let soa = require(&p.soa, "--soa", "uges")?;
    let human = require(&p.human, "--human", "uges")?;
    if args.eps.len() < 2 {
        return Err(CliError::Usage("--eps needs at least 2 candidates".into()));
    }
    let rows = sweep_epsilon(&p.cfg, &args.eps, soa, human, &p.mdp)?;
    let out = &args.run.out;
    create_dir(out)?;
    let path = out.join("sweep.csv");
    let mut text = String::from("epsilon,final_return,final_exact_return,human_draws\n");
    for r in &rows {
        text += &format!("{},{},{},{}\n", r.epsilon, r.final_return, r.final_exact_return, r.human_draws);
    }
    std::fs::write(&path, text).map_err(|e| uges::Error::io(&path, e))?;
    emit(&json!({ "best_epsilon": rows[0].epsilon, "rows": rows }));
    let mut run = RunManifest::new("sweep-epsilon");
    run.config = args.run.config.as_ref().map(|c| c.display().to_string());
    run.seed = Some(p.cfg.seed);
    for i in &p.inputs {
        run = run.input(i);
    }
    record(out, "sweep-epsilon", run.output(&path))?;
    Ok(())
}
