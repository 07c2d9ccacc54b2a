use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use spot_core::autodiff::checkpoint;
use spot_core::cvae::{train_vae, DensityModel};
use spot_core::data::{self, generate_with, normalize_states, OfflineDataset, Transition};
use spot_core::envs::{normalized_score, EnvKind};
use spot_core::finetune::finetune;
use spot_core::rng::{stream, Stream};
use spot_core::spot::{
    bc_baseline, constraint_strength_profile, density_profile, evaluate, train_offline, SpotAgent, TrainLog,
};
use spot_core::tabular::{suboptimality_gap, TabularMdp};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::RunDir;
use crate::{Analyze, Cli, Command, Common, OUTPUT_ROOT_VAR};

pub const DATASET_FILE: &str = "dataset.bin";
pub const VAE_FILE: &str = "vae.ckpt";
pub const AGENT_FILE: &str = "agent.ckpt";
pub const SUMMARY_FILE: &str = "summary.csv";

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData {
            env,
            regime,
            size,
            common,
        } => {
            if let Some(env) = env {
                config.env = env;
            }
            if let Some(regime) = regime {
                config.regime = regime;
            }
            if let Some(size) = size {
                config.dataset_size = size;
            }
            gen_data(&config, &common)
        }
        Command::TrainVae { data, common } => train_vae_cmd(&config, &data, &common),
        Command::TrainSpot {
            data,
            vae,
            lambda,
            steps,
            common,
        } => {
            if lambda.is_some() {
                config.spot.lambda = lambda;
            }
            if let Some(steps) = steps {
                config.spot.steps = steps;
            }
            train_spot(&config, &data, &vae, &common)
        }
        Command::Finetune {
            agent,
            data,
            env,
            steps,
            common,
        } => {
            if let Some(steps) = steps {
                config.finetune.steps = steps;
            }
            finetune_cmd(&config, &agent, &data, env.as_deref(), &common)
        }
        Command::Eval {
            agent,
            env,
            episodes,
            common,
        } => {
            if let Some(env) = env {
                config.env = env;
            }
            eval_cmd(&config, &agent, episodes, &common)
        }
        Command::Analyze(analyze) => match analyze {
            Analyze::TabularBound { mdps, common } => {
                if let Some(mdps) = mdps {
                    config.analysis.tabular_mdps = mdps;
                }
                tabular_bound(&config, &common)
            }
            Analyze::DensityProfile { agent, data, common } => density_profile_cmd(&config, &agent, &data, &common),
            Analyze::LambdaSweep { data, vae, common } => lambda_sweep(&config, &data, &vae, &common),
            Analyze::LEffect {
                data,
                vae,
                lambda,
                common,
            } => {
                if lambda.is_some() {
                    config.spot.lambda = lambda;
                }
                l_effect(&config, &data, &vae, &common)
            }
        },
    }
}

fn seed_of(config: &RunConfig, common: &Common) -> u64 {
    common.seed.unwrap_or(config.seeds[0])
}

/// `--out`, else `<root>/<name>` with the root from the config, then
/// `SPOT_OUTPUT_ROOT`, then `runs`.
fn out_dir(config: &RunConfig, common: &Common, name: &str) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    let root = config
        .output_root
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(name)
}

fn open_run(config: &RunConfig, common: &Common, command: &str, seed: Option<u64>) -> Result<RunDir, CliError> {
    config.validate()?;
    let name = match seed {
        Some(seed) => format!("{command}-seed{seed}"),
        None => command.to_string(),
    };
    RunDir::create(&out_dir(config, common, &name), command, config, seed)
}

fn with_path(path: &Path, e: spot_core::Error) -> CliError {
    match e {
        spot_core::Error::Io(source) => CliError::io(path, source),
        other => other.into(),
    }
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset, CliError> {
    data::load(path).map_err(|e| with_path(path, e))
}

pub fn load_density(path: &Path) -> Result<DensityModel, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let tensors = checkpoint::read_tensors(BufReader::new(file)).map_err(|e| with_path(path, e))?;
    DensityModel::from_named(&tensors).map_err(|e| with_path(path, e))
}

fn save_density(density: &DensityModel, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    checkpoint::write_tensors(BufWriter::new(file), &density.named_tensors()).map_err(|e| with_path(path, e))
}

fn load_agent(config: &RunConfig, kind: EnvKind, path: &Path) -> Result<SpotAgent, CliError> {
    let base = config.spot_config(kind, None)?;
    SpotAgent::load(path, &base).map_err(|e| with_path(path, e))
}

fn log_training(run: &mut RunDir, stage: &str, log: &TrainLog, interval: usize) -> Result<(), CliError> {
    for r in log.steps.iter().filter(|r| r.step % interval == 0) {
        let mut values = vec![
            ("critic_loss", r.critic_loss),
            ("mean_q", r.mean_q),
            ("lambda", r.lambda),
        ];
        if let Some(loss) = r.actor_loss {
            values.push(("actor_loss", loss));
        }
        if let Some(d) = r.mean_log_density {
            values.push(("mean_log_density", d));
        }
        run.metric(stage, r.step, &values)?;
    }
    for e in &log.evals {
        run.metric(
            &format!("{stage}_eval"),
            e.step,
            &[
                ("eval_return", e.mean_return),
                ("normalized_score", e.normalized_score),
                ("percentile5_logpb", e.percentile5_log_density),
            ],
        )?;
    }
    Ok(())
}

fn gen_data(config: &RunConfig, common: &Common) -> Result<(), CliError> {
    let seed = seed_of(config, common);
    let kind = config.env_kind()?;
    let mut run = open_run(config, common, "gen-data", Some(seed))?;
    let mut dataset = generate_with(
        kind,
        config.regime_kind()?,
        config.dataset_size,
        seed,
        &config.behavior_config(),
    )?;
    if config.normalize(kind) {
        dataset = normalize_states(&dataset)?;
    }
    let path = run.artifact(DATASET_FILE);
    data::save(&dataset, &path).map_err(|e| with_path(&path, e))?;
    let terminals = dataset.transitions.iter().filter(|t| t.terminal).count();
    let mean_reward = dataset.transitions.iter().map(|t| t.reward).sum::<f64>() / dataset.len() as f64;
    run.write_text(
        SUMMARY_FILE,
        &format!(
            "transitions,episodes,terminals,mean_reward\n{},{},{},{}\n",
            dataset.len(),
            dataset.episode_lengths.len(),
            terminals,
            mean_reward
        ),
    )?;
    run.metric(
        "gen-data",
        dataset.len(),
        &[
            ("episodes", dataset.episode_lengths.len() as f64),
            ("terminals", terminals as f64),
            ("mean_reward", mean_reward),
        ],
    )?;
    run.finish()?;
    Ok(())
}

fn train_vae_cmd(config: &RunConfig, data_path: &Path, common: &Common) -> Result<(), CliError> {
    let seed = seed_of(config, common);
    let dataset = load_dataset(data_path)?;
    let mut run = open_run(config, common, "train-vae", Some(seed))?;
    run.input(data_path);
    let (model, log) = train_vae(&dataset, &config.cvae_config(), seed)?;
    let interval = config.vae.log_interval;
    let mut csv = String::from("iteration,loss\n");
    for (i, loss) in log.losses.iter().enumerate() {
        let iteration = i + 1;
        if iteration % interval == 0 || iteration == log.losses.len() {
            let _ = writeln!(csv, "{iteration},{loss}");
            run.metric("train-vae", iteration, &[("loss", *loss)])?;
        }
    }
    run.write_text(SUMMARY_FILE, &csv)?;
    let path = run.artifact(VAE_FILE);
    save_density(&DensityModel::Cvae(model), &path)?;
    run.finish()?;
    Ok(())
}

fn train_spot(config: &RunConfig, data_path: &Path, vae_path: &Path, common: &Common) -> Result<(), CliError> {
    let seed = seed_of(config, common);
    let dataset = load_dataset(data_path)?;
    let density = load_density(vae_path)?;
    let spot = config.spot_config(dataset.env, None)?;
    let mut run = open_run(config, common, "train-spot", Some(seed))?;
    run.input(data_path);
    run.input(vae_path);
    let (agent, log) = train_offline(&dataset, density, &spot, seed)?;
    log_training(&mut run, "train-spot", &log, config.spot.log_interval)?;
    run.write_text(SUMMARY_FILE, &log.summary_csv())?;
    let path = run.artifact(AGENT_FILE);
    agent.save(&path).map_err(|e| with_path(&path, e))?;
    run.finish()?;
    Ok(())
}

fn finetune_cmd(
    config: &RunConfig,
    agent_path: &Path,
    data_path: &Path,
    env: Option<&str>,
    common: &Common,
) -> Result<(), CliError> {
    let seed = seed_of(config, common);
    let dataset = load_dataset(data_path)?;
    if let Some(name) = env {
        let kind = EnvKind::from_name(name).map_err(|e| CliError::Config(e.to_string()))?;
        if kind != dataset.env {
            return Err(CliError::Config(format!(
                "--env {kind} does not match the dataset's environment {}",
                dataset.env
            )));
        }
    }
    let agent = load_agent(config, dataset.env, agent_path)?;
    let mut run = open_run(config, common, "finetune", Some(seed))?;
    run.input(agent_path);
    run.input(data_path);
    let (agent, log) = finetune(agent, &dataset, &config.finetune_config(), seed)?;
    log_training(&mut run, "finetune", &log, config.spot.log_interval)?;
    run.write_text(SUMMARY_FILE, &log.summary_csv())?;
    let path = run.artifact(AGENT_FILE);
    agent.save(&path).map_err(|e| with_path(&path, e))?;
    run.finish()?;
    Ok(())
}

fn eval_cmd(config: &RunConfig, agent_path: &Path, episodes: usize, common: &Common) -> Result<(), CliError> {
    if episodes == 0 {
        return Err(CliError::Config("--episodes must be positive".into()));
    }
    let seed = seed_of(config, common);
    let kind = config.env_kind()?;
    let agent = load_agent(config, kind, agent_path)?;
    let mut run = open_run(config, common, "eval", Some(seed))?;
    run.input(agent_path);
    let returns = evaluate(agent.actor(), kind, episodes, &mut stream(seed, Stream::Evaluation))?;
    let mut csv = String::from("episode,return\n");
    for (i, r) in returns.iter().enumerate() {
        let _ = writeln!(csv, "{i},{r}");
    }
    run.write_text("returns.csv", &csv)?;
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let score = normalized_score(mean, kind)?;
    run.write_text(SUMMARY_FILE, &format!("mean_return,normalized_score\n{mean},{score}\n"))?;
    run.metric("eval", episodes, &[("mean_return", mean), ("normalized_score", score)])?;
    run.finish()?;
    Ok(())
}

fn tabular_bound(config: &RunConfig, common: &Common) -> Result<(), CliError> {
    let a = &config.analysis;
    let mut run = open_run(config, common, "tabular-bound", None)?;
    let mut csv = String::from("mdp,eps,gap,bound\n");
    let mut violations = 0usize;
    for m in 0..a.tabular_mdps {
        let mdp = TabularMdp::random(a.tabular_states, a.tabular_actions, a.tabular_discount, m as u64)?;
        for &eps in &a.eps_grid {
            let report = suboptimality_gap(&mdp, eps)?;
            if report.gap > report.bound + 1e-9 {
                violations += 1;
            }
            let _ = writeln!(csv, "{m},{eps},{},{}", report.gap, report.bound);
        }
    }
    run.write_text("tabular_bound.csv", &csv)?;
    run.metric(
        "tabular-bound",
        a.tabular_mdps,
        &[("violations", violations as f64)],
    )?;
    run.finish()?;
    Ok(())
}

fn density_profile_cmd(config: &RunConfig, agent_path: &Path, data_path: &Path, common: &Common) -> Result<(), CliError> {
    let seed = seed_of(config, common);
    let dataset = load_dataset(data_path)?;
    let agent = load_agent(config, dataset.env, agent_path)?;
    let mut run = open_run(config, common, "density-profile", Some(seed))?;
    run.input(agent_path);
    run.input(data_path);
    let profile_config = &agent.config().profile;
    let policy = constraint_strength_profile(
        agent.actor(),
        agent.density(),
        &dataset,
        profile_config,
        &mut stream(seed, Stream::Analysis),
    )?;
    let n = profile_config.states.min(dataset.len());
    let picks = spot_core::data::sample_indices(dataset.len(), n, &mut stream(seed, Stream::Minibatch))?;
    let rows = |f: fn(&Transition) -> &[f64]| {
        spot_core::autodiff::Tensor::from_rows(&picks.iter().map(|&i| f(&dataset.transitions[i])).collect::<Vec<_>>())
    };
    let logged = density_profile(
        agent.density(),
        &rows(|t| t.state.as_slice())?,
        &rows(|t| t.action.as_slice())?,
        profile_config.samples,
        &mut stream(seed, Stream::Analysis),
    )?;
    let mut csv = String::from("source,p5,p25,p50\n");
    for (name, p) in [("policy", policy), ("dataset", logged)] {
        let _ = writeln!(csv, "{name},{},{},{}", p.p5, p.p25, p.p50);
        run.metric(
            "density-profile",
            0,
            &[(&format!("{name}_p5"), p.p5), (&format!("{name}_p50"), p.p50)],
        )?;
    }
    run.write_text("density_profile.csv", &csv)?;
    run.finish()?;
    Ok(())
}

fn lambda_sweep(config: &RunConfig, data_path: &Path, vae_path: &Path, common: &Common) -> Result<(), CliError> {
    let dataset = load_dataset(data_path)?;
    let density = load_density(vae_path)?;
    let kind = dataset.env;
    let mut run = open_run(config, common, "lambda-sweep", None)?;
    run.input(data_path);
    run.input(vae_path);
    let mut csv = String::from("lambda,seed,percentile5,normalized_score,mean_return\n");
    for lambda in config.lambdas(kind) {
        let spot = config.spot_config(kind, Some(lambda))?;
        for &seed in &config.seeds {
            let (agent, log) = train_offline(&dataset, density.clone(), &spot, seed)?;
            let profile = constraint_strength_profile(
                agent.actor(),
                agent.density(),
                &dataset,
                &spot.profile,
                &mut stream(seed, Stream::Analysis),
            )?;
            let (mean_return, score) = match log.last_eval() {
                Some(e) => (e.mean_return, e.normalized_score),
                None => {
                    let returns = evaluate(agent.actor(), kind, spot.eval_episodes, &mut stream(seed, Stream::Evaluation))?;
                    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
                    (mean, normalized_score(mean, kind)?)
                }
            };
            let _ = writeln!(csv, "{lambda},{seed},{},{score},{mean_return}", profile.p5);
            run.metric(
                "lambda-sweep",
                spot.steps,
                &[
                    ("lambda", lambda),
                    ("seed", seed as f64),
                    ("percentile5", profile.p5),
                    ("normalized_score", score),
                ],
            )?;
        }
    }
    run.write_text("lambda_sweep.csv", &csv)?;

    let mut baseline = String::from("method,seed,mean_return,normalized_score\n");
    for &seed in &config.seeds {
        let policy = bc_baseline(&dataset, &config.bc_config(), seed)?;
        let returns = evaluate(&policy, kind, config.bc.eval_episodes, &mut stream(seed, Stream::Evaluation))?;
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        let _ = writeln!(baseline, "bc,{seed},{mean},{}", normalized_score(mean, kind)?);
    }
    run.write_text("baselines.csv", &baseline)?;
    run.finish()?;
    Ok(())
}

fn l_effect(config: &RunConfig, data_path: &Path, vae_path: &Path, common: &Common) -> Result<(), CliError> {
    let dataset = load_dataset(data_path)?;
    let density = load_density(vae_path)?;
    let kind = dataset.env;
    let mut run = open_run(config, common, "l-effect", None)?;
    run.input(data_path);
    run.input(vae_path);
    let mut csv = String::from("L,seed,normalized_score,mean_return\n");
    for &samples in &config.analysis.l_values {
        let mut spot = config.spot_config(kind, None)?;
        spot.density_samples = samples;
        for &seed in &config.seeds {
            let (agent, log) = train_offline(&dataset, density.clone(), &spot, seed)?;
            let (mean_return, score) = match log.last_eval() {
                Some(e) => (e.mean_return, e.normalized_score),
                None => {
                    let returns = evaluate(agent.actor(), kind, spot.eval_episodes, &mut stream(seed, Stream::Evaluation))?;
                    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
                    (mean, normalized_score(mean, kind)?)
                }
            };
            let _ = writeln!(csv, "{samples},{seed},{score},{mean_return}");
            run.metric(
                "l-effect",
                spot.steps,
                &[("L", samples as f64), ("seed", seed as f64), ("normalized_score", score)],
            )?;
        }
    }
    run.write_text("l_effect.csv", &csv)?;
    run.finish()?;
    Ok(())
}
