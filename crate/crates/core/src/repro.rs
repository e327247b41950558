//! End-to-end experiments on the synthetic corpus: stage ordering,
//! multi-identity transfer, reference-order control, a guidance sweep and
//! the overfit smoke run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curator::{curate, Curation, CurationConfig};
use crate::embed::{EmbedderConfig, IdentityEmbedder};
use crate::error::{Error, Result};
use crate::eval::{build_probes, evaluate, identity_consistency, left_subject_ref, make_report, EvalReport, EvalRow, EvalSettings, ProbeConfig};
use crate::latent::OrthoCodec;
use crate::model::{training_loss, Denoiser, DropRates};
use crate::sampler::{sample, SamplerConfig};
use crate::seed;
use crate::synth::scene::caption_words;
use crate::synth::{generate_corpus, Corpus, CorpusConfig, Hue};
use crate::curator::PairKind;
use crate::trainer::{run_regimen, run_stage, stage_examples, Init, LatentStore, MetricRecord, Regimen, StageKind, StagePlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub stage: StageKind,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { stage: StageKind::Pretrain, lr: 1e-3, steps: 400, batch_size: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    /// Fixed noise draws the before/after loss is measured on.
    pub eval_draws: usize,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig { lr: 3e-3, steps: 6000, batch_size: 2, log_every: 100, eval_draws: 64 }
    }
}

/// Everything an end-to-end run needs; `with_seed` re-seeds every part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub curation: CurationConfig,
    pub patch: usize,
    pub regimen: Regimen,
    pub probes: ProbeConfig,
    pub sampler: SamplerConfig,
    pub transfer: TransferConfig,
    pub order_scenes: u32,
    pub overfit: OverfitConfig,
}

impl Default for ReproConfig {
    fn default() -> Self {
        ReproConfig {
            seed: 0,
            corpus: CorpusConfig {
                n_identities: 48,
                clips_per_identity: 6,
                two_identity_clips: 120,
                n_frames: 5,
                h: 32,
                w: 32,
                ..CorpusConfig::default()
            },
            curation: CurationConfig::default(),
            patch: 8,
            regimen: Regimen::reduced(),
            probes: ProbeConfig::default(),
            sampler: SamplerConfig::default(),
            transfer: TransferConfig::default(),
            order_scenes: 50,
            overfit: OverfitConfig::default(),
        }
    }
}

impl ReproConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.corpus.seed = seed;
        self.probes.identity_seed = seed;
        self.regimen.model.seed = seed;
        self.sampler.seed = seed;
        for p in &mut self.regimen.plans {
            p.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.curation.validate()?;
        self.regimen.validate()?;
        if self.probes.identity_offset < self.corpus.identity_offset + self.corpus.n_identities {
            return Err(Error::Config("probe identities overlap the training identities".into()));
        }
        if self.corpus.h % self.patch != 0 || self.corpus.w % self.patch != 0 {
            return Err(Error::Config(format!("frame size must be a multiple of patch {}", self.patch)));
        }
        if (self.probes.h, self.probes.w) != (self.corpus.h, self.corpus.w) {
            return Err(Error::Config("probe and corpus frame sizes differ".into()));
        }
        Ok(())
    }

    fn settings(&self, noise_scale: f64) -> EvalSettings {
        EvalSettings { sampler: self.sampler, noise_scale }
    }
}

/// Corpus, curation and encoded latents shared by the experiments.
pub struct Workspace {
    pub corpus: Corpus,
    pub curation: Curation,
    pub codec: OrthoCodec,
    pub store: LatentStore,
}

impl Workspace {
    pub fn prepare(cfg: &ReproConfig) -> Result<Workspace> {
        cfg.validate()?;
        let corpus = generate_corpus(&cfg.corpus)?;
        let curation = curate(&corpus, &cfg.curation, None)?;
        let codec = OrthoCodec::new(cfg.patch, cfg.seed);
        let store = LatentStore::build(&corpus, &curation, &codec, cfg.regimen.model.text_len)?;
        Ok(Workspace { corpus, curation, codec, store })
    }

    pub fn noise_scale(&self) -> f64 {
        self.curation.summary.noise_scale
    }
}

/// One named pass/fail comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

fn gap_check(name: &str, hi: Option<f64>, lo: Option<f64>, min_gap: f64) -> Check {
    match (hi, lo) {
        (Some(h), Some(l)) => Check {
            name: name.into(),
            detail: format!("{h:.3} - {l:.3} = {:.3} (need >= {min_gap})", h - l),
            pass: h - l >= min_gap,
        },
        _ => Check { name: name.into(), detail: "metric missing".into(), pass: false },
    }
}

fn find<'a>(report: &'a EvalReport, tag: &str) -> Result<&'a EvalRow> {
    report
        .rows
        .iter()
        .find(|r| r.tag == tag)
        .ok_or_else(|| Error::MissingInput { what: format!("report row {tag}"), path: "report".into() })
}

pub struct StageOrdering {
    pub report: EvalReport,
    pub metrics: Vec<MetricRecord>,
    pub model: Denoiser,
}

/// Train the three-stage regimen, evaluating held-out probes after each
/// stage. Rows are tagged with the plan names.
pub fn stage_ordering(cfg: &ReproConfig, ws: &Workspace, out_dir: Option<&Path>) -> Result<StageOrdering> {
    let probes = build_probes(&cfg.probes)?;
    let settings = cfg.settings(ws.noise_scale());
    let codec = &ws.codec;
    let out = run_regimen(&cfg.regimen, &ws.store, &ws.curation.pairs, cfg.patch, out_dir, None, &mut |name, m| {
        let (row, _) = evaluate(name, m, codec, &probes, &settings)?;
        log::info!("{name}: idsim_A {:?} idsim_B {:?} editdist {:?}", row.idsim_a, row.idsim_b, row.editdist);
        Ok(Some(row))
    })?;
    let report = make_report(out.snapshots)?;
    if let Some(d) = out_dir {
        report.write(&d.join("report"))?;
    }
    Ok(StageOrdering { report, metrics: out.metrics, model: out.model })
}

/// Identity must fall I > III > II and editability rise I < III < II, by
/// at least `min_gap`, for both identity embedders. `tags` names the
/// three stage rows in order I, II, III.
pub fn stage_ordering_checks(report: &EvalReport, tags: [&str; 3], min_gap: f64) -> Result<Vec<Check>> {
    let [s1, s2, s3] = [find(report, tags[0])?, find(report, tags[1])?, find(report, tags[2])?];
    Ok(vec![
        gap_check("idsim_A I>III", s1.idsim_a, s3.idsim_a, min_gap),
        gap_check("idsim_A III>II", s3.idsim_a, s2.idsim_a, min_gap),
        gap_check("idsim_B I>III", s1.idsim_b, s3.idsim_b, min_gap),
        gap_check("idsim_B III>II", s3.idsim_b, s2.idsim_b, min_gap),
        gap_check("editdist II>III", s2.editdist, s3.editdist, min_gap),
        gap_check("editdist III>I", s3.editdist, s1.editdist, min_gap),
    ])
}

pub const FROM_SINGLE: &str = "multi_from_single";
pub const FROM_SCRATCH: &str = "multi_from_scratch";

pub struct Transfer {
    pub report: EvalReport,
    pub from_single: Denoiser,
}

fn two_subject_probes(cfg: &ReproConfig) -> ProbeConfig {
    ProbeConfig { n_subjects: 2, ..cfg.probes.clone() }
}

/// Two-identity training from `single` and from scratch with the same
/// seeds and budget, evaluated on two-subject probes.
pub fn transfer(cfg: &ReproConfig, ws: &Workspace, single: &Denoiser, out_dir: Option<&Path>) -> Result<Transfer> {
    let t = &cfg.transfer;
    let mut plan = StagePlan::new(t.stage, t.lr, t.steps, Init::Scratch);
    plan.multi_identity = true;
    plan.batch_size = t.batch_size;
    plan.seed = cfg.seed;
    let probes = build_probes(&two_subject_probes(cfg))?;
    let settings = cfg.settings(ws.noise_scale());
    let scratch = Denoiser::new(single.config.clone(), cfg.regimen.model.seed)?;
    let mut rows = Vec::new();
    let mut trained = Vec::new();
    for (tag, start) in [(FROM_SINGLE, single.clone()), (FROM_SCRATCH, scratch)] {
        plan.name = tag.to_string();
        let dir = out_dir.map(|d| d.join(tag));
        let out = run_stage(&plan, start, &ws.store, &ws.curation.pairs, &cfg.regimen.train, dir.as_deref())?;
        let (row, _) = evaluate(tag, &out.model, &ws.codec, &probes, &settings)?;
        log::info!("{tag}: slots {:?}", row.slots);
        rows.push(row);
        trained.push(out.model);
    }
    let report = make_report(rows)?;
    if let Some(d) = out_dir {
        report.write(&d.join("report"))?;
    }
    Ok(Transfer { report, from_single: trained.swap_remove(0) })
}

/// Initialising from the single-identity checkpoint must beat scratch on
/// every slot for both embedders.
pub fn transfer_checks(report: &EvalReport, min_gap: f64) -> Result<Vec<Check>> {
    let (s, z) = (find(report, FROM_SINGLE)?, find(report, FROM_SCRATCH)?);
    if s.slots.is_empty() || s.slots.len() != z.slots.len() {
        return Err(Error::Config("transfer rows lack matching per-slot scores".into()));
    }
    let mut out = Vec::new();
    for (k, (a, b)) in s.slots.iter().zip(&z.slots).enumerate() {
        out.push(gap_check(&format!("slot{} idsim_A", k + 1), a.idsim_a, b.idsim_a, min_gap));
        out.push(gap_check(&format!("slot{} idsim_B", k + 1), a.idsim_b, b.idsim_b, min_gap));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderControl {
    pub scenes: usize,
    /// Scenes where both orders gave a verdict.
    pub decided: usize,
    pub flipped: usize,
}

impl OrderControl {
    pub fn fraction(&self) -> f64 {
        self.flipped as f64 / self.scenes.max(1) as f64
    }
}

/// Caption with the per-subject color words removed, so the text no longer
/// says which subject is which.
pub fn neutral_caption(caption: &str) -> String {
    caption_words(caption).into_iter().filter(|w| Hue::from_word(w).is_none()).collect::<Vec<_>>().join(" ")
}

/// Sample each two-subject scene with references in both orders (same
/// noise, same identity-neutral caption). The scene flips when the leftmost
/// subject follows the first reference in both samples, i.e. its identity
/// changes with the order. Undecided scenes count as not flipped.
pub fn order_control(cfg: &ReproConfig, model: &Denoiser, codec: &OrthoCodec) -> Result<OrderControl> {
    let pc = ProbeConfig {
        n_identities: cfg.order_scenes,
        prompts_per_identity: 1,
        seed: cfg.probes.seed + 1,
        ..two_subject_probes(cfg)
    };
    let probes = build_probes(&pc)?;
    let oracle = IdentityEmbedder::new(EmbedderConfig::oracle())?;
    let mut res = OrderControl { scenes: probes.len(), decided: 0, flipped: 0 };
    for (k, p) in probes.iter().enumerate() {
        let sc = SamplerConfig { seed: cfg.sampler.seed + k as u64, ..cfg.sampler };
        let fwd = p.ref_views();
        let rev: Vec<_> = fwd.iter().rev().copied().collect();
        let caption = neutral_caption(&p.caption);
        let a = sample(model, codec, &fwd, &caption, &sc)?;
        let b = sample(model, codec, &rev, &caption, &sc)?;
        let la = left_subject_ref(a.view(), &fwd.iter().map(|r| r.0).collect::<Vec<_>>(), &oracle)?;
        let lb = left_subject_ref(b.view(), &rev.iter().map(|r| r.0).collect::<Vec<_>>(), &oracle)?;
        if let (Some(i), Some(j)) = (la, lb) {
            res.decided += 1;
            if i == j {
                res.flipped += 1;
            }
        }
    }
    Ok(res)
}

/// Evaluate `model` under each `(s_text, s_image)` pair.
pub fn guidance_sweep(cfg: &ReproConfig, ws: &Workspace, model: &Denoiser, scales: &[(f64, f64)]) -> Result<EvalReport> {
    let probes = build_probes(&cfg.probes)?;
    let mut rows = Vec::new();
    for &(st, si) in scales {
        let mut s = cfg.settings(ws.noise_scale());
        s.sampler.guidance_text = st;
        s.sampler.guidance_image = si;
        let (row, _) = evaluate(&format!("cfg_t{st}_i{si}"), model, &ws.codec, &probes, &s)?;
        rows.push(row);
    }
    make_report(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overfit {
    /// Loss on the fixed draws before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub idsim_same: Option<f64>,
    pub idsim_other: Option<f64>,
}

impl Overfit {
    pub fn loss_ratio(&self) -> f64 {
        self.initial_loss / self.final_loss
    }

    pub fn margin(&self) -> Option<f64> {
        Some(self.idsim_same? - self.idsim_other?)
    }
}

/// Four clips of two identities: memorise them, then sample with a
/// training reference and score it against that reference and against the
/// other identity's reference.
pub fn overfit(cfg: &ReproConfig) -> Result<Overfit> {
    let corpus_cfg = CorpusConfig {
        seed: cfg.seed,
        n_identities: 2,
        clips_per_identity: 2,
        two_identity_clips: 0,
        no_subject_frac: 0.0,
        count_inconsistent_frac: 0.0,
        identity_swap_frac: 0.0,
        ..cfg.corpus.clone()
    };
    let corpus = generate_corpus(&corpus_cfg)?;
    let noise = 0.3;
    let curation = curate(&corpus, &cfg.curation, Some(noise))?;
    let codec = OrthoCodec::new(cfg.patch, cfg.seed);
    let store = LatentStore::build(&corpus, &curation, &codec, cfg.regimen.model.text_len)?;
    let model = Denoiser::new(cfg.regimen.model.config(&store, cfg.patch), cfg.seed)?;
    let o = &cfg.overfit;
    let mut plan = StagePlan::new(StageKind::Pretrain, o.lr, o.steps, Init::Scratch);
    plan.batch_size = o.batch_size;
    plan.log_every = o.log_every;
    plan.seed = cfg.seed;
    let examples = stage_examples(&curation.pairs, PairKind::Pretrain, &store, false)
        .iter()
        .map(|e| store.example(e))
        .collect::<Result<Vec<_>>>()?;
    if examples.is_empty() {
        return Err(Error::Empty("overfit corpus has no pre-training pairs".into()));
    }
    let draws: Vec<_> = examples.iter().cycle().take(o.eval_draws.max(examples.len())).cloned().collect();
    let t = &cfg.regimen.train;
    let rates = DropRates { text: t.drop_text, image: t.drop_image };
    let fixed_loss = |m: &Denoiser| {
        let mut rng = seed::rng(cfg.seed, "overfit-eval", &[]);
        training_loss(m, &draws, rates, t.ref_noise_scale, &mut rng, None)
    };
    let initial = fixed_loss(&model)?;
    let out = run_stage(&plan, model, &store, &curation.pairs, t, None)?;
    let last = fixed_loss(&out.model)?;
    let by_identity = |id: u32| curation.refs.iter().find(|r| r.record.identity_id == id && r.record.slot == 0);
    let (own, other) = match (by_identity(0), by_identity(1)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Empty("overfit corpus lacks references for both identities".into())),
    };
    let clip = corpus.get(&own.record.clip_id).expect("reference names a corpus clip");
    let video = sample(&out.model, &codec, &[(own.image.view(), own.mask.view())], &clip.meta.caption, &cfg.sampler)?;
    let emb = IdentityEmbedder::new(EmbedderConfig::noisy_a(noise))?;
    let same = identity_consistency(video.view(), own.image.view(), &emb)?;
    let diff = identity_consistency(video.view(), other.image.view(), &emb)?;
    Ok(Overfit { initial_loss: initial, final_loss: last, idsim_same: same.mean, idsim_other: diff.mean })
}
