use std::path::Path;

use dpn::checkpoint::{ModelMeta, TrainedModel};
use dpn::config::{MetricKind, RenderConfig};
use dpn::env::{collect_random, episode_rng, render, true_distance, validate_render, Dataset, EnvKind, EnvState};
use dpn::io::{dataset_size, load_dataset, load_weights, save_dataset, save_weights, ModelKind};
use dpn::metric::{latent_distance_trace, metric_correlation, Embedder, Metric};
use dpn::rl::{evaluate_policy, evaluation_seed, goal_state, median, rollout, sac_train, MeanPolicy, ScriptedController};
use dpn::training::{model_dims, train_dpn, train_inverse, train_upn, train_vae, LossHistory};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{create_dir, curve_csv, sidecar, write_file, write_run_record};
use crate::{CollectArgs, EvalArgs, RlArgs, RlMetric, TrainArgs};

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn resolve(config: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::load(config)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn render_config(cfg: &RunConfig, distractor: bool) -> Result<RenderConfig, CliError> {
    let render = RenderConfig {
        distractor: cfg.render.distractor || distractor,
        ..cfg.render.clone()
    };
    validate_render(&render)?;
    Ok(render)
}

pub fn collect(a: &CollectArgs) -> Result<(), CliError> {
    if a.episodes == 0 || a.horizon == 0 {
        return Err(CliError::usage("--episodes and --horizon must be at least 1"));
    }
    let cfg = resolve(a.config.as_deref(), a.seed)?;
    let env = a.env.unwrap_or(cfg.rl.env);
    let render = render_config(&cfg, a.distractor)?;
    let ds = collect_random(env, a.episodes, a.horizon, &render, cfg.seed)?;
    save_dataset(&ds, &a.out).map_err(|e| CliError::at(&a.out, e))?;
    let args = json!({
        "env": env,
        "episodes": a.episodes,
        "horizon": a.horizon,
        "out": path_str(&a.out),
        "distractor": render.distractor,
    });
    write_run_record(&sidecar(&a.out, ".run.json"), "collect", &args, &cfg)?;
    let bytes = std::fs::read(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("four bytes"));
    println!(
        "wrote {}: {} {} episodes of {} steps, {} bytes, crc32 {crc:08x}",
        a.out.display(),
        a.episodes,
        env.name(),
        a.horizon,
        dataset_size(&ds)
    );
    Ok(())
}

fn check_dataset_matches(ds: &Dataset, render: &RenderConfig) -> Result<(), CliError> {
    let data = [ds.channels, ds.height, ds.width];
    let config = [render.channels, render.height, render.width];
    if data != config {
        return Err(CliError::mismatch(format!(
            "dataset observations are {data:?} (C, H, W) but the config renders {config:?}"
        )));
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve(a.config.as_deref(), a.seed)?;
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    let ds = load_dataset(&a.data).map_err(|e| CliError::at(&a.data, e))?;
    check_dataset_matches(&ds, &cfg.render)?;
    let meta = ModelMeta {
        env: ds.kind,
        dims: model_dims(&ds),
        train: cfg.train.clone(),
        render: cfg.render.clone(),
    };
    let (model, history): (TrainedModel, LossHistory) = match a.model {
        ModelKind::Dpn => {
            let (m, h) = train_dpn(&ds, &cfg.train)?;
            (TrainedModel::Dpn(m), h)
        }
        ModelKind::Vae => {
            let (m, h) = train_vae(&ds, &cfg.train)?;
            (TrainedModel::Vae(m), h)
        }
        ModelKind::Inverse => {
            let (m, h) = train_inverse(&ds, &cfg.train)?;
            (TrainedModel::Inverse(m), h)
        }
        ModelKind::Upn => {
            let (m, h) = train_upn(&ds, &cfg.train)?;
            (TrainedModel::Upn(m), h)
        }
    };
    save_weights(&model.to_weights(&meta)?, &a.out).map_err(|e| CliError::at(&a.out, e))?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_file(&loss_path, history.to_csv().as_bytes())?;
    let args = json!({
        "data": path_str(&a.data),
        "model": a.model.name(),
        "out": path_str(&a.out),
        "loss_csv": path_str(&loss_path),
    });
    write_run_record(&sidecar(&a.out, ".run.json"), "train", &args, &cfg)?;
    let summary = if history.records.is_empty() {
        "no iterations".to_string()
    } else {
        let (head, tail) = history.head_tail_means(0.1);
        format!("mean loss {head:.4} over the first 10% of iterations, {tail:.4} over the last 10%")
    };
    println!("trained {} for {} iterations: {summary}", a.model.name(), history.records.len());
    println!("wrote {} and {}", a.out.display(), loss_path.display());
    Ok(())
}

/// Loads a metric model and checks it against the environment and renderer.
fn load_metric(path: &Path, env: EnvKind, render: &RenderConfig, delta: f64) -> Result<Metric, CliError> {
    if !path.exists() {
        return Err(CliError::io(path, "weights file not found"));
    }
    let file = load_weights(path).map_err(|e| CliError::at(path, e))?;
    let (model, meta) = TrainedModel::from_weights(file).map_err(|e| CliError::at(path, e))?;
    if meta.env != env {
        return Err(CliError::mismatch(format!(
            "{}: model was trained on {} but the run uses {}",
            path.display(),
            meta.env.name(),
            env.name()
        )));
    }
    let model_shape = meta.dims.obs_shape();
    let run_shape = [render.channels, render.height, render.width];
    if model_shape != run_shape {
        return Err(CliError::mismatch(format!(
            "{}: model expects observations {model_shape:?} (C, H, W) but the config renders {run_shape:?}",
            path.display()
        )));
    }
    let embedder = Embedder::from_model(model).map_err(|e| CliError::at(path, e))?;
    Ok(Metric::new(embedder, delta)?)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    if a.pairs < 10 {
        return Err(CliError::usage("--pairs must be at least 10"));
    }
    let cfg = resolve(a.config.as_deref(), a.seed)?;
    let env = a.env.unwrap_or(cfg.rl.env);
    let rc = render_config(&cfg, a.distractor)?;
    let mut metrics = Vec::new();
    for w in &a.weights {
        let m = load_metric(w, env, &rc, cfg.metric.delta)?;
        if metrics.iter().any(|other: &Metric| other.kind() == m.kind()) {
            return Err(CliError::usage(format!("more than one {} model given", m.kind().name())));
        }
        metrics.push(m);
    }
    metrics.push(Metric::new(Embedder::Pixel, cfg.metric.delta)?);
    create_dir(&a.out_dir)?;

    // Straight reaching trajectory between two random states.
    let mut rng = episode_rng(cfg.seed, 1);
    let start = EnvState::random(env, &mut rng, rc.distractor);
    let goal = EnvState::random(env, &mut rng, rc.distractor);
    let states = rollout(&ScriptedController { goal }, start, cfg.rl.horizon, &mut rng);
    let observations: Vec<_> = states.iter().map(|s| render(s, &rc)).collect();
    let goal_obs = render(&goal, &rc);

    let mut summary = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    summary.write_record(["kind", "rho", "degenerate", "pairs", "seed"]).expect("in-memory write");
    let mut true_written = false;
    for m in &metrics {
        let kind = m.kind().name();
        let report = metric_correlation(m, env, &rc, a.pairs, cfg.seed)?;
        let values = report.pairs.iter().map(|p| p.metric).enumerate();
        write_file(&a.out_dir.join(format!("pairs_{kind}.csv")), &curve_csv("pair", values, kind, cfg.seed))?;
        if !true_written {
            let d = report.pairs.iter().map(|p| p.true_distance).enumerate();
            write_file(&a.out_dir.join("pairs_true.csv"), &curve_csv("pair", d, "true", cfg.seed))?;
            true_written = true;
        }
        summary
            .write_record([
                kind.to_string(),
                report.spearman.rho.to_string(),
                report.spearman.degenerate.to_string(),
                a.pairs.to_string(),
                cfg.seed.to_string(),
            ])
            .expect("in-memory write");
        let trace = latent_distance_trace(m, &observations, &goal_obs)?;
        write_file(
            &a.out_dir.join(format!("trace_{kind}.csv")),
            &curve_csv("step", trace.values.iter().copied().enumerate(), kind, cfg.seed),
        )?;
        let flag = if report.spearman.degenerate { " (degenerate ranks)" } else { "" };
        let norm = if trace.normalized { "" } else { ", trace not normalized" };
        println!("{kind:>8}: spearman {:+.4}{flag}{norm}", report.spearman.rho);
    }
    let d0 = true_distance(&states[0], &goal)?;
    let true_trace = states
        .iter()
        .map(|s| true_distance(s, &goal).map(|d| if d0 > 0.0 { d / d0 } else { d }))
        .collect::<dpn::Result<Vec<_>>>()?;
    write_file(&a.out_dir.join("trace_true.csv"), &curve_csv("step", true_trace.into_iter().enumerate(), "true", cfg.seed))?;
    write_file(&a.out_dir.join("correlation.csv"), &summary.into_inner().expect("in-memory write"))?;
    let args = json!({
        "weights": a.weights.iter().map(|w| path_str(w)).collect::<Vec<_>>(),
        "env": env,
        "pairs": a.pairs,
        "distractor": rc.distractor,
    });
    write_run_record(&a.out_dir.join("run.json"), "eval", &args, &cfg)?;
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn metric_kind(m: RlMetric) -> Option<MetricKind> {
    match m {
        RlMetric::Dpn => Some(MetricKind::Dpn),
        RlMetric::Inverse => Some(MetricKind::Inverse),
        RlMetric::Vae => Some(MetricKind::Vae),
        RlMetric::Pixel => Some(MetricKind::Pixel),
        RlMetric::Oracle => None,
    }
}

pub fn rl(a: &RlArgs) -> Result<(), CliError> {
    let mut cfg = resolve(a.config.as_deref(), a.seed)?;
    if let Some(n) = a.episodes {
        if n == 0 {
            return Err(CliError::usage("--episodes must be at least 1"));
        }
        cfg.rl.episodes = n;
    }
    let env = a.env.unwrap_or(cfg.rl.env);
    cfg.rl.env = env;
    let render = render_config(&cfg, a.distractor)?;
    let goal = goal_state(env, &render, a.goal_seed);
    let eval_seed = evaluation_seed(cfg.seed);
    create_dir(&a.out_dir)?;
    let kind_name = match metric_kind(a.metric) {
        Some(k) => k.name(),
        None => "oracle",
    };

    let (distances, curve, clamped) = match metric_kind(a.metric) {
        None => {
            let d = evaluate_policy(&ScriptedController { goal }, env, &goal, cfg.rl.eval_episodes, cfg.rl.horizon, eval_seed)?;
            (d, Vec::new(), 0)
        }
        Some(kind) => {
            let metric = match (kind, &a.weights) {
                (MetricKind::Pixel, _) => Metric::new(Embedder::Pixel, cfg.metric.delta)?,
                (_, None) => return Err(CliError::usage(format!("--metric {} needs --weights", kind.name()))),
                (_, Some(w)) => {
                    let m = load_metric(w, env, &render, cfg.metric.delta)?;
                    if m.kind() != kind {
                        return Err(CliError::mismatch(format!(
                            "{} holds a {} model but --metric is {}",
                            w.display(),
                            m.kind().name(),
                            kind.name()
                        )));
                    }
                    m
                }
            };
            let outcome = sac_train(&metric, &goal, &render, &cfg.rl)?;
            let d = evaluate_policy(&MeanPolicy(&outcome.agent), env, &goal, cfg.rl.eval_episodes, cfg.rl.horizon, eval_seed)?;
            (d, outcome.curve, outcome.clamped_rewards)
        }
    };

    let seed = cfg.seed;
    write_file(
        &a.out_dir.join("learning_curve.csv"),
        &curve_csv("episode", curve.iter().map(|r| (r.episode, r.final_distance)), kind_name, seed),
    )?;
    write_file(
        &a.out_dir.join("returns.csv"),
        &curve_csv("episode", curve.iter().map(|r| (r.episode, r.episode_return)), kind_name, seed),
    )?;
    write_file(
        &a.out_dir.join("final_distance.csv"),
        &curve_csv("episode", distances.iter().copied().enumerate(), kind_name, seed),
    )?;
    let args = json!({
        "weights": a.weights.as_ref().map(|w| path_str(w)),
        "metric": kind_name,
        "env": env,
        "goal_seed": a.goal_seed,
        "distractor": render.distractor,
    });
    write_run_record(&a.out_dir.join("run.json"), "rl", &args, &cfg)?;
    println!(
        "{kind_name} reward: median final distance {:.4} over {} evaluation episodes",
        median(&distances),
        distances.len()
    );
    if clamped > 0 {
        println!("{clamped} rewards hit the overflow clamp");
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}
