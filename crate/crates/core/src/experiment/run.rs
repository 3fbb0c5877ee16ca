//! Experiment orchestration: builds networks and learners from a config, runs the regime
//! and writes metrics, the sparsity report, a checkpoint and a summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointPayload};
use super::config::{ExperimentConfig, MaskInit, Regime};
use crate::continual::{continual_metrics, run_stream, ContinualMethod, TaskStream};
use crate::error::{Error, Result};
use crate::fewshot::{
    cross_domain_eval, FewShotMetrics, MaskState, MetaState, MetaTrainer, TaskSampler, TrainConfig,
};
use crate::mask::{MaskKind, MaskParams, SparsityReport, StochasticMaskGenerator};
use crate::metrics::{read_metrics, write_metrics};
use crate::nn::{init_mask_values, init_params, InitScheme, LossKind, Mlp, OptimizerState, ParamVector};
use crate::online::{initial_online_state, run_online};
use crate::patterns::{N_CLASSES, PIXELS};
use crate::rng::{derive_seed, seeded};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SPARSITY_FILE: &str = "sparsity.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MATRIX_FILE: &str = "accuracy_matrix.csv";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub regime: Regime,
    pub config_hash: String,
    /// Meta-iterations, stream tasks or online steps completed.
    pub steps: u64,
    pub results: BTreeMap<String, f64>,
}

/// Seeds derived from the three configured streams.
struct SeedPlan {
    theta: u64,
    mask: u64,
    generator: u64,
    train_tasks: u64,
    val_tasks: u64,
    test_tasks: u64,
    shifted_tasks: u64,
    stochastic: u64,
}

impl SeedPlan {
    fn new(cfg: &ExperimentConfig) -> Self {
        let s = cfg.seeds;
        Self {
            theta: derive_seed(s.model, 0),
            mask: derive_seed(s.model, 1),
            generator: derive_seed(s.model, 2),
            train_tasks: derive_seed(s.tasks, 0),
            val_tasks: derive_seed(s.tasks, 1),
            test_tasks: derive_seed(s.tasks, 2),
            shifted_tasks: derive_seed(s.tasks, 3),
            stochastic: derive_seed(s.stream, 0),
        }
    }
}

pub fn build_net(cfg: &ExperimentConfig) -> Result<Mlp> {
    let (d_in, d_out, loss) = match cfg.regime {
        Regime::Fewshot | Regime::Twophase => {
            let f = &cfg.fewshot.family;
            (f.input_width(), f.output_width(), f.loss_kind())
        }
        Regime::Continual | Regime::Online => (PIXELS, N_CLASSES, LossKind::CrossEntropy),
    };
    let mut widths = vec![d_in];
    widths.extend(&cfg.arch.hidden);
    widths.push(d_out);
    Mlp::new(widths, cfg.arch.activation, loss, cfg.arch.bias)
}

fn initial_mask_values(cfg: &ExperimentConfig, net: &Mlp, sparsity: f64, seed: u64) -> Result<Vec<f64>> {
    match cfg.mask.init {
        MaskInit::AllOn => Ok(vec![1.0; net.layout().total_len()]),
        MaskInit::Kaiming => init_mask_values(net.layout(), sparsity, seed),
    }
}

fn fewshot_mask(cfg: &ExperimentConfig, net: &Mlp, seeds: &SeedPlan) -> Result<MaskState> {
    let m = initial_mask_values(cfg, net, cfg.mask.sparsity, seeds.mask)?;
    let base = MaskParams::new(m, cfg.mask.kind, cfg.fewshot.alpha)?;
    if !cfg.mask.stochastic {
        return Ok(MaskState::Plain(base));
    }
    let groups = StochasticMaskGenerator::hidden_weight_groups(net.layout());
    let generator = StochasticMaskGenerator::init(
        net.layout(),
        groups,
        cfg.mask.latent_dim,
        base.m(),
        cfg.mask.a_scale,
        &mut seeded(seeds.generator),
    )?;
    Ok(MaskState::Stochastic { base, generator })
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    let f = &cfg.fewshot;
    TrainConfig {
        iterations: f.iterations,
        tasks_per_batch: f.effective_tasks_per_batch(),
        val_every: f.val_every,
        val_tasks: f.val_tasks,
        k_test: f.k_test,
        patience: f.patience,
    }
}

fn sampler(cfg: &ExperimentConfig) -> Result<TaskSampler> {
    TaskSampler::new(cfg.fewshot.family, cfg.fewshot.query_size)
}

/// Meta-state before any training. Two-phase runs take `θ` from the pretrained checkpoint.
fn initial_meta_state(cfg: &ExperimentConfig, net: &Mlp, seeds: &SeedPlan) -> Result<MetaState> {
    let theta = match cfg.regime {
        Regime::Twophase => pretrained_theta(cfg, net)?,
        _ => init_params(net.layout(), InitScheme::Kaiming, seeds.theta)?,
    };
    let mask = fewshot_mask(cfg, net, seeds)?;
    let opt = OptimizerState::new(cfg.fewshot.optimizer, cfg.fewshot.meta_lr, theta.len());
    let mut state = MetaState::new(net.clone(), theta, mask, opt, cfg.fewshot.k_train, cfg.fewshot.gamma_m)?;
    state.freeze_groups = cfg.mask.freeze_groups.clone();
    state.freeze_theta = cfg.regime == Regime::Twophase;
    for g in &state.freeze_groups {
        if net.layout().group(g).is_none() {
            return Err(Error::field("mask.freeze_groups", format!("unknown group `{g}`")));
        }
    }
    Ok(state)
}

fn pretrained_theta(cfg: &ExperimentConfig, net: &Mlp) -> Result<ParamVector> {
    let path = cfg
        .output
        .pretrained
        .as_ref()
        .ok_or_else(|| Error::Precondition("the two-phase regime needs output.pretrained pointing at a few-shot checkpoint".into()))?;
    let ckpt = load_checkpoint(path)?;
    ckpt.check_layout(net.layout())?;
    match ckpt.payload {
        CheckpointPayload::Fewshot { selected_theta, .. } => ParamVector::new(selected_theta, net.layout().clone()),
        _ => Err(Error::Precondition(format!("{} is not a few-shot checkpoint", path.display()))),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::structural(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn fewshot_results(prefix: &str, m: &FewShotMetrics, out: &mut BTreeMap<String, f64>) {
    out.insert(format!("{prefix}_pre_loss"), m.pre_loss.mean);
    out.insert(format!("{prefix}_post_loss"), m.post_loss.mean);
    out.insert(format!("{prefix}_post_loss_std"), m.post_loss.std);
    if let (Some(pre), Some(post)) = (m.pre_accuracy, m.post_accuracy) {
        out.insert(format!("{prefix}_pre_accuracy"), pre.mean);
        out.insert(format!("{prefix}_post_accuracy"), post.mean);
        out.insert(format!("{prefix}_post_accuracy_std"), post.std);
    }
}

fn fewshot_test(cfg: &ExperimentConfig, state: &MetaState, seeds: &SeedPlan) -> Result<BTreeMap<String, f64>> {
    let sampler = sampler(cfg)?;
    let tasks = sampler.sample_tasks(cfg.fewshot.test_tasks, &mut seeded(seeds.test_tasks))?;
    let mut results = BTreeMap::new();
    fewshot_results("test", &state.evaluate(&tasks, cfg.fewshot.k_test)?, &mut results);
    if let Some(shift) = cfg.fewshot.shift {
        let shifted = TaskSampler::new(cfg.fewshot.family.shifted(shift.rotation, shift.spread_scale), cfg.fewshot.query_size)?;
        let m = cross_domain_eval(state, &shifted, cfg.fewshot.test_tasks, cfg.fewshot.k_test, seeds.shifted_tasks)?;
        fewshot_results("shifted", &m, &mut results);
    }
    Ok(results)
}

fn sparsity_results(report: &SparsityReport, out: &mut BTreeMap<String, f64>) {
    out.insert("sparsity_overall".into(), report.overall);
}

/// Runs the configured regime from scratch.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    prepare_dir(&cfg.output.dir)?;
    match cfg.regime {
        Regime::Fewshot | Regime::Twophase => run_fewshot(cfg, None),
        Regime::Continual => run_continual(cfg),
        Regime::Online => run_online_regime(cfg),
    }
}

/// Continues few-shot or two-phase meta-training from `checkpoint` up to the configured
/// iteration count, appending to the existing metrics file.
pub fn resume_experiment(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    if !matches!(cfg.regime, Regime::Fewshot | Regime::Twophase) {
        return Err(Error::Precondition(format!(
            "resuming is supported for few-shot and two-phase runs, not `{}`",
            cfg.regime.name()
        )));
    }
    prepare_dir(&cfg.output.dir)?;
    run_fewshot(cfg, Some(checkpoint))
}

fn run_fewshot(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunSummary> {
    let seeds = SeedPlan::new(cfg);
    let net = build_net(cfg)?;
    let sampler = sampler(cfg)?;
    let hash = cfg.trajectory_hash();
    let metrics_path = cfg.output.dir.join(METRICS_FILE);
    let (mut trainer, previous) = match resume {
        None => {
            let state = initial_meta_state(cfg, &net, &seeds)?;
            let t = MetaTrainer::new(state, sampler, train_config(cfg), seeds.train_tasks, seeds.val_tasks, seeds.stochastic)?;
            (t, None)
        }
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            ckpt.check_layout(net.layout())?;
            if ckpt.regime != cfg.regime || ckpt.config_hash != hash {
                return Err(Error::Precondition(format!(
                    "{} was written by a different configuration; only the iteration budget and output paths may change",
                    path.display()
                )));
            }
            let CheckpointPayload::Fewshot { trainer: snap, .. } = ckpt.payload else {
                return Err(Error::Precondition(format!("{} is not a few-shot checkpoint", path.display())));
            };
            // θ and the mask come from the snapshot; the state only supplies fixed settings.
            let mut state = MetaState::new(
                net.clone(),
                ParamVector::zeros(net.layout().clone()),
                MaskState::Plain(MaskParams::all_on(net.layout().total_len(), cfg.mask.kind, cfg.fewshot.alpha)?),
                OptimizerState::new(cfg.fewshot.optimizer, cfg.fewshot.meta_lr, net.layout().total_len()),
                cfg.fewshot.k_train,
                cfg.fewshot.gamma_m,
            )?;
            state.freeze_groups = cfg.mask.freeze_groups.clone();
            state.freeze_theta = cfg.regime == Regime::Twophase;
            let t = MetaTrainer::restore(state, sampler, train_config(cfg), seeds.val_tasks, snap)?;
            let previous = if metrics_path.exists() { Some(read_metrics(&metrics_path)?) } else { None };
            (t, previous)
        }
    };
    let start = trainer.iteration();
    trainer.run()?;
    let mut telemetry = trainer.telemetry().clone();
    if let Some(mut prev) = previous {
        if prev.columns() != telemetry.columns() {
            return Err(Error::Precondition("existing metrics file has different columns".into()));
        }
        prev.extend(telemetry)?;
        telemetry = prev;
    }
    write_metrics(&telemetry, &metrics_path)?;

    let selected = trainer.result_state()?;
    let report = selected.sparsity()?;
    write_json(&report, &cfg.output.dir.join(SPARSITY_FILE))?;
    save_checkpoint(
        &Checkpoint {
            regime: cfg.regime,
            config_hash: hash.clone(),
            layout: net.layout().as_ref().clone(),
            payload: CheckpointPayload::Fewshot {
                trainer: trainer.snapshot(),
                selected_theta: selected.theta.values().to_vec(),
                selected_mask: selected.mask.clone(),
            },
        },
        &cfg.output.dir.join(CHECKPOINT_FILE),
    )?;
    let mut results = fewshot_test(cfg, &selected, &seeds)?;
    sparsity_results(&report, &mut results);
    if let Some(b) = trainer.best_score() {
        results.insert("best_val_score".into(), b);
    }
    let summary = RunSummary {
        regime: cfg.regime,
        config_hash: hash,
        steps: trainer.iteration() - start,
        results,
    };
    write_json(&summary, &cfg.output.dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

fn continual_stream(cfg: &ExperimentConfig) -> Result<TaskStream> {
    TaskStream::generate(cfg.continual.stream, derive_seed(cfg.seeds.tasks, 0))
}

fn run_continual(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let seeds = SeedPlan::new(cfg);
    let net = build_net(cfg)?;
    let stream = continual_stream(cfg)?;
    let learner = &cfg.continual.learner;
    let theta = init_params(net.layout(), InitScheme::Kaiming, seeds.theta)?;
    let mask = if learner.method == ContinualMethod::SparseLaMaml && learner.init_sparsity > 0.0 {
        let m = initial_mask_values(cfg, &net, learner.init_sparsity, seeds.mask)?;
        Some(MaskParams::new(m, MaskKind::Binary, learner.alpha0)?)
    } else {
        None
    };
    let out = run_stream(&net, theta, mask, &stream, learner, seeds.stochastic)?;
    let dir = &cfg.output.dir;
    write_metrics(&out.telemetry, &dir.join(METRICS_FILE))?;
    write_metrics(&out.matrix.to_table(), &dir.join(MATRIX_FILE))?;
    let layout = net.layout();
    let report = match (&out.mask, &out.learning_rates) {
        (Some(m), _) => m.sparsity(layout)?,
        (None, Some(lr)) => lr.as_mask()?.sparsity(layout)?,
        (None, None) => MaskParams::all_on(layout.total_len(), MaskKind::Binary, 1.0)?.sparsity(layout)?,
    };
    write_json(&report, &dir.join(SPARSITY_FILE))?;
    let hash = cfg.trajectory_hash();
    save_checkpoint(
        &Checkpoint {
            regime: cfg.regime,
            config_hash: hash.clone(),
            layout: layout.as_ref().clone(),
            payload: CheckpointPayload::Continual {
                theta: out.theta.values().to_vec(),
                mask: out.mask.clone(),
                learning_rates: out.learning_rates.clone(),
            },
        },
        &dir.join(CHECKPOINT_FILE),
    )?;
    let cm = continual_metrics(&out.matrix)?;
    let mut results = BTreeMap::new();
    results.insert("ra".into(), cm.ra);
    results.insert("bti".into(), cm.bti);
    results.insert("initial_accuracy".into(), out.initial.iter().sum::<f64>() / out.initial.len() as f64);
    sparsity_results(&report, &mut results);
    let summary = RunSummary {
        regime: cfg.regime,
        config_hash: hash,
        steps: stream.tasks.len() as u64,
        results,
    };
    write_json(&summary, &dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

fn run_online_regime(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let seeds = SeedPlan::new(cfg);
    let net = build_net(cfg)?;
    let theta = init_params(net.layout(), InitScheme::Kaiming, seeds.theta)?;
    let state = initial_online_state(&net, theta, &cfg.online.learner, seeds.mask)?;
    let out = run_online(&net, state, cfg.online.stream.clone(), seeds.stochastic)?;
    let dir = &cfg.output.dir;
    write_metrics(&out.telemetry, &dir.join(METRICS_FILE))?;
    let report = out.state.mask.sparsity(net.layout())?;
    write_json(&report, &dir.join(SPARSITY_FILE))?;
    let hash = cfg.trajectory_hash();
    save_checkpoint(
        &Checkpoint {
            regime: cfg.regime,
            config_hash: hash.clone(),
            layout: net.layout().as_ref().clone(),
            payload: CheckpointPayload::Online {
                theta: out.state.theta.values().to_vec(),
                phi: out.state.phi.values().to_vec(),
                mask: out.state.mask.clone(),
            },
        },
        &dir.join(CHECKPOINT_FILE),
    )?;
    let mut results = BTreeMap::new();
    results.insert("cumulative_accuracy".into(), out.cumulative_accuracy);
    for (name, acc) in &out.per_family {
        if let Some(a) = acc {
            results.insert(format!("accuracy_{name}"), *a);
        }
    }
    results.insert("true_switches".into(), out.true_switches as f64);
    results.insert("detected_switches".into(), out.detected_switches as f64);
    sparsity_results(&report, &mut results);
    let summary = RunSummary {
        regime: cfg.regime,
        config_hash: hash,
        steps: out.telemetry.len() as u64,
        results,
    };
    write_json(&summary, &dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

/// Evaluates a saved checkpoint under `cfg` and writes `eval.json` to the output
/// directory.
///
/// Few-shot checkpoints are evaluated on the test (and shifted) tasks, continual ones on
/// every task's test split, and online ones by replaying the stream from the saved `θ`
/// and mask under a fresh stream seed.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let seeds = SeedPlan::new(cfg);
    let net = build_net(cfg)?;
    let ckpt = load_checkpoint(checkpoint)?;
    ckpt.check_layout(net.layout())?;
    let regime_matches = match ckpt.regime {
        Regime::Fewshot | Regime::Twophase => matches!(cfg.regime, Regime::Fewshot | Regime::Twophase),
        r => r == cfg.regime,
    };
    if !regime_matches {
        return Err(Error::Precondition(format!(
            "checkpoint is from the `{}` regime but the config says `{}`",
            ckpt.regime.name(),
            cfg.regime.name()
        )));
    }
    let layout = net.layout().clone();
    let mut results = BTreeMap::new();
    match ckpt.payload {
        CheckpointPayload::Fewshot {
            selected_theta,
            selected_mask,
            ..
        } => {
            let theta = ParamVector::new(selected_theta, layout.clone())?;
            let state = MetaState::new(
                net.clone(),
                theta,
                selected_mask,
                OptimizerState::sgd(cfg.fewshot.meta_lr),
                cfg.fewshot.k_train,
                0.0,
            )?;
            results = fewshot_test(cfg, &state, &seeds)?;
            sparsity_results(&state.sparsity()?, &mut results);
        }
        CheckpointPayload::Continual { theta, .. } => {
            let theta = ParamVector::new(theta, layout.clone())?;
            let stream = continual_stream(cfg)?;
            let mut sum = 0.0;
            for (j, task) in stream.tasks.iter().enumerate() {
                let acc = net.evaluate(&theta, &task.test)?.1.unwrap_or(0.0);
                results.insert(format!("accuracy_task_{j}"), acc);
                sum += acc;
            }
            results.insert("mean_accuracy".into(), sum / stream.tasks.len() as f64);
        }
        CheckpointPayload::Online { theta, mask, .. } => {
            let theta = ParamVector::new(theta, layout.clone())?;
            let mut state = initial_online_state(&net, theta, &cfg.online.learner, seeds.mask)?;
            state.mask = mask;
            let out = run_online(&net, state, cfg.online.stream.clone(), derive_seed(cfg.seeds.stream, 1))?;
            results.insert("cumulative_accuracy".into(), out.cumulative_accuracy);
        }
    }
    let summary = RunSummary {
        regime: ckpt.regime,
        config_hash: ckpt.config_hash,
        steps: 0,
        results,
    };
    prepare_dir(&cfg.output.dir)?;
    write_json(&summary, &cfg.output.dir.join(EVAL_FILE))?;
    Ok(summary)
}

/// Default checkpoint location for a config.
pub fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.dir.join(CHECKPOINT_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::parse_config;

    fn tiny(regime: &str, dir: &Path, extra: &[&str]) -> ExperimentConfig {
        let mut o: Vec<String> = vec![
            format!("regime={regime}"),
            "arch.hidden=[8]".into(),
            "fewshot.iterations=6".into(),
            "fewshot.val_every=2".into(),
            "fewshot.val_tasks=3".into(),
            "fewshot.test_tasks=4".into(),
            "continual.stream.n_tasks=2".into(),
            "continual.stream.train_per_task=20".into(),
            "continual.stream.test_per_task=10".into(),
            "continual.stream.glances=1".into(),
            "online.stream.horizon=30".into(),
            format!("output.dir=\"{}\"", dir.display()),
        ];
        o.extend(extra.iter().map(|s| s.to_string()));
        parse_config("", &o).unwrap()
    }

    #[test]
    fn writes_all_artifacts() {
        for regime in ["fewshot", "continual", "online"] {
            let dir = tempfile::tempdir().unwrap();
            let cfg = tiny(regime, dir.path(), &[]);
            let s = run_experiment(&cfg).unwrap();
            for f in [METRICS_FILE, SPARSITY_FILE, CHECKPOINT_FILE, SUMMARY_FILE] {
                assert!(dir.path().join(f).exists(), "{regime}: {f}");
            }
            assert!(s.results.values().all(|v| v.is_finite()));
            let e = evaluate_checkpoint(&cfg, &checkpoint_path(&cfg)).unwrap();
            assert!(!e.results.is_empty());
        }
    }

    #[test]
    fn zero_iterations_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("fewshot", dir.path(), &["fewshot.iterations=0"]);
        run_experiment(&cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1);
        let ckpt = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        let CheckpointPayload::Fewshot { trainer, .. } = ckpt.payload else { panic!() };
        let net = build_net(&cfg).unwrap();
        let theta0 = init_params(net.layout(), InitScheme::Kaiming, SeedPlan::new(&cfg).theta).unwrap();
        assert_eq!(trainer.theta, theta0.values());
    }

    #[test]
    fn twophase_needs_pretrained() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("twophase", dir.path(), &[]);
        assert!(matches!(run_experiment(&cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn twophase_keeps_theta() {
        let pre = tempfile::tempdir().unwrap();
        run_experiment(&tiny("fewshot", pre.path(), &[])).unwrap();
        let pre_ckpt = pre.path().join(CHECKPOINT_FILE);
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("twophase", dir.path(), &[&format!("output.pretrained=\"{}\"", pre_ckpt.display())]);
        run_experiment(&cfg).unwrap();
        let a = load_checkpoint(&pre_ckpt).unwrap();
        let b = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        let (CheckpointPayload::Fewshot { selected_theta: ta, .. }, CheckpointPayload::Fewshot { trainer, .. }) = (a.payload, b.payload) else {
            panic!()
        };
        assert_eq!(ta, trainer.theta);
    }

    #[test]
    fn resume_rejects_changed_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("fewshot", dir.path(), &[]);
        run_experiment(&cfg).unwrap();
        let other = tiny("fewshot", dir.path(), &["fewshot.alpha=0.2"]);
        assert!(matches!(resume_experiment(&other, &checkpoint_path(&cfg)), Err(Error::Precondition(_))));
    }
}
