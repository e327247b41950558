use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_stage, Init, LatentStore, MetricRecord, StageKind, StagePlan, TrainConfig};
use crate::curator::PairManifest;
use crate::error::{Error, Result};
use crate::eval::EvalRow;
use crate::model::{default_rope_pairs, Checkpoint, Denoiser, DenoiserConfig};

/// Architecture knobs; latent dims come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub text_len: usize,
    pub max_refs: usize,
    pub rope_theta: f64,
    #[serde(default)]
    pub channel_concat: bool,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            dim: 96,
            layers: 2,
            heads: 4,
            mlp_ratio: 4,
            text_len: 12,
            max_refs: 2,
            rope_theta: 100.0,
            channel_concat: false,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn config(&self, store: &LatentStore, patch: usize) -> DenoiserConfig {
        DenoiserConfig {
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            mlp_ratio: self.mlp_ratio,
            channels: store.channels(),
            patch,
            t_lat: store.t_lat(),
            h_lat: store.h_lat,
            w_lat: store.w_lat,
            max_refs: self.max_refs,
            text_len: self.text_len,
            rope_pairs: default_rope_pairs(self.dim / self.heads.max(1)),
            rope_theta: self.rope_theta,
            parameterization: "rectified_flow".into(),
            channel_concat: self.channel_concat,
            latent_scale: store.latent_scale,
        }
    }
}

/// Published training constants, kept for reference next to the desk-scale
/// values actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperTrainingDefaults {
    pub lr_pretrain: f64,
    pub lr_cross: f64,
    pub lr_tradeoff: f64,
    pub decay: String,
    pub drop_text: f64,
    pub drop_image: f64,
}

impl Default for PaperTrainingDefaults {
    fn default() -> Self {
        PaperTrainingDefaults {
            lr_pretrain: 1.0e-5,
            lr_cross: 5.0e-6,
            lr_tradeoff: 5.0e-6,
            decay: "linear".into(),
            drop_text: 0.1,
            drop_image: 0.1,
        }
    }
}

/// An ordered list of stage plans plus the model and loss settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regimen {
    pub paper_defaults: PaperTrainingDefaults,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub plans: Vec<StagePlan>,
}

impl Regimen {
    /// Published learning rates with the default desk-scale step budgets
    /// (20k / 8k / 2k).
    pub fn paper() -> Regimen {
        let p = PaperTrainingDefaults::default();
        Regimen {
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            plans: vec![
                StagePlan::new(StageKind::Pretrain, p.lr_pretrain, 20_000, Init::Scratch),
                StagePlan::new(StageKind::Cross, p.lr_cross, 8_000, Init::Previous),
                StagePlan::new(StageKind::Tradeoff, p.lr_tradeoff, 2_000, Init::Previous),
            ],
            paper_defaults: p,
        }
    }

    /// CPU preset: a from-scratch toy model needs far larger learning rates
    /// and far fewer steps than a fine-tuned 5B model.
    pub fn reduced() -> Regimen {
        let mut r = Regimen::paper();
        let budget = [(2e-3, 6000), (1e-3, 2000), (1e-3, 600)];
        for (p, (lr, steps)) in r.plans.iter_mut().zip(budget) {
            p.lr = lr;
            p.steps = steps;
        }
        r
    }

    pub fn validate(&self) -> Result<()> {
        if self.plans.is_empty() {
            return Err(Error::Config("regimen has no plans".into()));
        }
        for p in &self.plans {
            p.validate()?;
        }
        if self.plans[0].init == Init::Previous {
            return Err(Error::Config("first plan cannot continue from a previous stage".into()));
        }
        if self.model.heads == 0 || self.model.dim % self.model.heads != 0 {
            return Err(Error::Config("model dim must be divisible by heads".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Regimen> {
        let r: Regimen = toml::from_str(text).map_err(|e| Error::Config(format!("regimen: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Regimen> {
        if !path.exists() {
            return Err(Error::MissingInput { what: "regimen config".into(), path: path.to_path_buf() });
        }
        Regimen::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub struct RegimenOutcome {
    pub model: Denoiser,
    /// One evaluation row per plan, when the evaluator returned one.
    pub snapshots: Vec<EvalRow>,
    pub metrics: Vec<MetricRecord>,
    pub checkpoints: Vec<std::path::PathBuf>,
}

/// Run the plans in order; after each plan `evaluate(plan_name, model)` is
/// called and its row kept. `initial` seeds a leading `Previous` chain.
pub fn run_regimen(
    regimen: &Regimen,
    store: &LatentStore,
    manifest: &PairManifest,
    patch: usize,
    out_dir: Option<&Path>,
    initial: Option<Denoiser>,
    evaluate: &mut dyn FnMut(&str, &Denoiser) -> Result<Option<EvalRow>>,
) -> Result<RegimenOutcome> {
    let config = regimen.model.config(store, patch);
    config.validate()?;
    let mut current = initial;
    let mut snapshots = Vec::new();
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    for plan in &regimen.plans {
        plan.validate()?;
        let start = match &plan.init {
            Init::Scratch => Denoiser::new(config.clone(), regimen.model.seed)?,
            Init::Previous => current
                .take()
                .ok_or_else(|| Error::Config(format!("plan {} has no previous model", plan.name)))?,
            Init::FromCheckpoint(p) => {
                let ck = Checkpoint::read(p)?;
                if ck.config != config {
                    return Err(Error::Config(format!(
                        "checkpoint {} was trained with a different model config",
                        p.display()
                    )));
                }
                ck.into_model()?
            }
        };
        let out = run_stage(plan, start, store, manifest, &regimen.train, out_dir)?;
        metrics.extend(out.metrics);
        checkpoints.extend(out.checkpoint);
        if let Some(row) = evaluate(&plan.name, &out.model)? {
            snapshots.push(row);
        }
        current = Some(out.model);
    }
    Ok(RegimenOutcome { model: current.expect("at least one plan ran"), snapshots, metrics, checkpoints })
}
