//! Staged training: pre-training on same-clip pairs, cross-video
//! fine-tuning, trade-off fine-tuning, and multi-identity branches.

mod data;
mod regimen;

pub use data::{stage_examples, ExampleIndex, LatentStore};
pub use regimen::{run_regimen, ModelSpec, PaperTrainingDefaults, Regimen, RegimenOutcome};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curator::{PairKind, PairManifest};
use crate::error::{Error, Result};
use crate::model::{training_loss, Checkpoint, CheckpointMeta, Denoiser, DropRates};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Pretrain,
    Cross,
    Tradeoff,
    /// 1:1 interleaving of pre-training and cross pairs. Ablation only.
    Mixed,
}

impl StageKind {
    /// Pair kind a plan of this stage must name as its dataset.
    pub fn dataset(self) -> PairKind {
        match self {
            StageKind::Pretrain => PairKind::Pretrain,
            StageKind::Cross | StageKind::Mixed => PairKind::Cross,
            StageKind::Tradeoff => PairKind::Tradeoff,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Pretrain => "pretrain",
            StageKind::Cross => "cross",
            StageKind::Tradeoff => "tradeoff",
            StageKind::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Scratch,
    /// Continue from the model produced by the preceding plan.
    Previous,
    FromCheckpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub name: String,
    pub stage: StageKind,
    pub dataset: PairKind,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub decay: Decay,
    pub init: Init,
    #[serde(default)]
    pub multi_identity: bool,
    pub seed: u64,
    pub log_every: usize,
}

impl StagePlan {
    pub fn new(stage: StageKind, lr: f64, steps: usize, init: Init) -> StagePlan {
        StagePlan {
            name: stage.name().to_string(),
            stage,
            dataset: stage.dataset(),
            lr,
            steps,
            batch_size: 8,
            decay: Decay::Linear,
            init,
            multi_identity: false,
            seed: 0,
            log_every: 25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset != self.stage.dataset() {
            return Err(Error::Config(format!(
                "stage {} must train on {} pairs, plan names {}",
                self.stage.name(),
                self.stage.dataset(),
                self.dataset
            )));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config(format!("plan {}: lr, batch_size and log_every must be positive", self.name)));
        }
        Ok(())
    }

    /// `lr (1 - s / steps)`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.decay {
            Decay::Linear => self.lr * (1.0 - step as f64 / self.steps as f64),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: 1.0 }
    }
}

pub struct Optimizer {
    cfg: OptimConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, n: usize) -> Self {
        Optimizer { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &mut [f64], lr: f64) {
        if self.cfg.grad_clip > 0.0 {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > self.cfg.grad_clip {
                let s = self.cfg.grad_clip / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let (c1, c2) = (1.0 - b1.powi(self.t), 1.0 - b2.powi(self.t));
        for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.cfg.eps);
        }
    }
}

/// Loss-side training settings shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub drop_text: f64,
    pub drop_image: f64,
    /// Reference augmentation noise in units of the latent scale.
    pub ref_noise_scale: f64,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { drop_text: 0.1, drop_image: 0.1, ref_noise_scale: 0.05, optim: OptimConfig::default() }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub step: usize,
    /// Mean loss over the steps since the previous record.
    pub loss: f64,
    pub lr: f64,
    pub wall_clock_s: f64,
}

pub struct StageOutcome {
    pub model: Denoiser,
    pub metrics: Vec<MetricRecord>,
    pub checkpoint: Option<PathBuf>,
}

fn append_jsonl(path: &Path, rec: &MetricRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(rec)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Train `model` for `plan.steps` steps on the plan's pairs.
///
/// With `out_dir`, metrics are appended to `metrics.jsonl` and the result
/// is written to `<name>.ckpt`.
pub fn run_stage(
    plan: &StagePlan,
    mut model: Denoiser,
    store: &LatentStore,
    manifest: &PairManifest,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<StageOutcome> {
    plan.validate()?;
    let primary = stage_examples(manifest, plan.dataset, store, plan.multi_identity);
    let secondary = if plan.stage == StageKind::Mixed {
        stage_examples(manifest, PairKind::Pretrain, store, plan.multi_identity)
    } else {
        Vec::new()
    };
    if plan.steps > 0 && (primary.is_empty() || (plan.stage == StageKind::Mixed && secondary.is_empty())) {
        return Err(Error::Config(format!(
            "stage {} has no {} pairs{}",
            plan.name,
            plan.dataset,
            if plan.multi_identity { " for two-identity clips" } else { "" }
        )));
    }
    if let Some(d) = out_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let log_path = out_dir.map(|d| d.join("metrics.jsonl"));
    let rates = DropRates { text: cfg.drop_text, image: cfg.drop_image };
    let mut rng = seed::rng(plan.seed, "stage", &[plan.stage as u64, plan.multi_identity as u64]);
    let mut opt = Optimizer::new(cfg.optim, model.n_params());
    let mut grads = vec![0.0; model.n_params()];
    let start = Instant::now();
    let mut metrics = Vec::new();
    let (mut window, mut count) = (0.0, 0usize);
    for step in 0..plan.steps {
        let lr = plan.lr_at(step);
        let mut batch = Vec::with_capacity(plan.batch_size);
        for b in 0..plan.batch_size {
            let pool = if plan.stage == StageKind::Mixed && b % 2 == 1 { &secondary } else { &primary };
            batch.push(store.example(&pool[rng.gen_range(0..pool.len())])?);
        }
        grads.iter_mut().for_each(|g| *g = 0.0);
        let loss = training_loss(&model, &batch, rates, cfg.ref_noise_scale, &mut rng, Some(&mut grads))?;
        if !loss.is_finite() {
            return Err(Error::Config(format!("stage {} diverged at step {step} (loss {loss})", plan.name)));
        }
        opt.step(&mut model.params, &mut grads, lr);
        window += loss;
        count += 1;
        if (step + 1) % plan.log_every == 0 || step + 1 == plan.steps {
            let rec = MetricRecord {
                stage: plan.name.clone(),
                step: step + 1,
                loss: window / count as f64,
                lr,
                wall_clock_s: start.elapsed().as_secs_f64(),
            };
            log::info!("{} step {} loss {:.5} lr {:.2e}", rec.stage, rec.step, rec.loss, rec.lr);
            if let Some(p) = &log_path {
                append_jsonl(p, &rec)?;
            }
            metrics.push(rec);
            window = 0.0;
            count = 0;
        }
    }
    let checkpoint = match out_dir {
        Some(d) => {
            let p = d.join(format!("{}.ckpt", plan.name));
            let meta = CheckpointMeta { stage: plan.stage.name().into(), step: plan.steps as u64, ..Default::default() };
            Checkpoint::of(&model, meta).write(&p)?;
            Some(p)
        }
        None => None,
    };
    Ok(StageOutcome { model, metrics, checkpoint })
}

/// Read a metrics log written by [`run_stage`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
