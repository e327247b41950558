use ndarray::{Array2, Array3, ArrayView3, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::report::{EvalRow, SlotScores};
use super::{attribute_alignment, editability, identity_consistency, multi_identity_consistency, CROP_MARGIN};
use crate::embed::{cosine, crop_subject, Detector, EmbedderConfig, HolisticEmbedder, IdentityEmbedder};
use crate::error::{Error, Result};
use crate::latent::Codec;
use crate::model::Denoiser;
use crate::sampler::{sample, SamplerConfig};
use crate::seed;
use crate::synth::identity::sample_identity;
use crate::synth::render::Renderer;
use crate::synth::scene::{Action, Background, SUBJECT_TERMS};

/// Held-out evaluation prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub seed: u64,
    /// Seed of the identity table (the corpus seed).
    pub identity_seed: u64,
    /// First held-out identity id; training must use ids below it.
    pub identity_offset: u32,
    pub n_identities: u32,
    pub prompts_per_identity: usize,
    pub n_subjects: usize,
    pub h: usize,
    pub w: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            seed: 7,
            identity_seed: 0,
            identity_offset: 1000,
            n_identities: 16,
            prompts_per_identity: 3,
            n_subjects: 1,
            h: 32,
            w: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub probe_id: String,
    pub identity_ids: Vec<u32>,
    pub caption: String,
    /// Ordered reference crops with masks.
    pub refs: Vec<(Array3<f64>, Array2<bool>)>,
}

impl Probe {
    pub fn ref_views(&self) -> Vec<(ArrayView3<'_, f64>, ndarray::ArrayView2<'_, bool>)> {
        self.refs.iter().map(|(i, m)| (i.view(), m.view())).collect()
    }
}

/// Render a reference crop the same way curation crops training frames.
pub fn reference_crop(
    renderer: &Renderer,
    identity_seed: u64,
    id: u32,
    pose: f64,
    expression: f64,
    bg: Background,
    jitter: u64,
) -> Result<(Array3<f64>, Array2<bool>)> {
    let (img, _) = renderer.render_reference(&sample_identity(identity_seed, id), pose, expression, bg, jitter);
    let d = Detector::default()
        .detect_primary(img.view())
        .ok_or_else(|| Error::NoDetection(format!("reference of identity {id}")))?;
    crop_subject(img.view(), &d.bbox, CROP_MARGIN)
}

pub fn build_probes(cfg: &ProbeConfig) -> Result<Vec<Probe>> {
    if cfg.n_subjects == 0 || cfg.n_subjects > 2 || cfg.n_identities < cfg.n_subjects as u32 {
        return Err(Error::Config("probes need 1 or 2 subjects and enough identities".into()));
    }
    let renderer = Renderer::new(cfg.h, cfg.w);
    let mut out = Vec::new();
    for i in 0..cfg.n_identities {
        let ids: Vec<u32> = (0..cfg.n_subjects as u32)
            .map(|k| cfg.identity_offset + (i + k) % cfg.n_identities)
            .collect();
        for p in 0..cfg.prompts_per_identity {
            let mut rng = seed::rng(cfg.seed, "probe", &[i as u64, p as u64, cfg.n_subjects as u64]);
            let action = Action::ALL[rng.gen_range(0..Action::ALL.len())];
            let bg = Background::ALL[rng.gen_range(0..Background::ALL.len())];
            let mut refs = Vec::new();
            let mut subjects = Vec::new();
            for &id in &ids {
                let pose = rng.gen_range(-90.0..90.0);
                let expr = rng.gen_range(0.0..1.0);
                let ref_bg = Background::ALL[rng.gen_range(0..Background::ALL.len())];
                refs.push(reference_crop(&renderer, cfg.identity_seed, id, pose, expr, ref_bg, rng.gen())?);
                let term = SUBJECT_TERMS[rng.gen_range(0..SUBJECT_TERMS.len())];
                subjects.push(format!("a {} {}", sample_identity(cfg.identity_seed, id).body().word(), term));
            }
            out.push(Probe {
                probe_id: format!("probe_{i:03}_{p}"),
                identity_ids: ids.clone(),
                caption: format!("{} {} on a {} backdrop", subjects.join(" and "), action.word(), bg.word()),
                refs,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub sampler: SamplerConfig,
    /// Calibrated identity-embedder noise scale.
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScores {
    pub probe_id: String,
    pub idsim_a: Option<f64>,
    pub idsim_b: Option<f64>,
    pub editdist: Option<f64>,
    pub align: f64,
    pub detection_rate: f64,
    pub slots: Vec<SlotScores>,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let got: Vec<f64> = v.flatten().collect();
    if got.is_empty() {
        None
    } else {
        Some(got.iter().sum::<f64>() / got.len() as f64)
    }
}

/// Score one generated video against its probe.
pub fn score_video(
    video: ArrayView4<f64>,
    probe: &Probe,
    a: &IdentityEmbedder,
    b: &IdentityEmbedder,
    holistic: &HolisticEmbedder,
) -> Result<VideoScores> {
    let align = attribute_alignment(video, &probe.caption)?;
    if probe.refs.len() == 1 {
        let r = probe.refs[0].0.view();
        let sa = identity_consistency(video, r, a)?;
        let sb = identity_consistency(video, r, b)?;
        let ed = editability(video, r, holistic)?;
        Ok(VideoScores {
            probe_id: probe.probe_id.clone(),
            idsim_a: sa.mean,
            idsim_b: sb.mean,
            editdist: ed.mean,
            align,
            detection_rate: sa.detection_rate,
            slots: vec![],
        })
    } else {
        let refs: Vec<_> = probe.refs.iter().map(|(i, _)| i.view()).collect();
        let (per, rate) = multi_identity_consistency(video, &refs, &[a, b])?;
        let slots: Vec<SlotScores> = (0..refs.len())
            .map(|s| SlotScores { idsim_a: per[0][s].mean, idsim_b: per[1][s].mean })
            .collect();
        Ok(VideoScores {
            probe_id: probe.probe_id.clone(),
            idsim_a: mean(slots.iter().map(|s| s.idsim_a)),
            idsim_b: mean(slots.iter().map(|s| s.idsim_b)),
            editdist: None,
            align,
            detection_rate: rate,
            slots,
        })
    }
}

/// Aggregate per-video scores: average per video, then across videos,
/// skipping videos where a metric is missing.
pub fn aggregate(tag: &str, scores: &[VideoScores]) -> EvalRow {
    let n_slots = scores.iter().map(|s| s.slots.len()).max().unwrap_or(0);
    EvalRow {
        tag: tag.to_string(),
        idsim_a: mean(scores.iter().map(|s| s.idsim_a)),
        idsim_b: mean(scores.iter().map(|s| s.idsim_b)),
        align: mean(scores.iter().map(|s| Some(s.align))),
        editdist: mean(scores.iter().map(|s| s.editdist)),
        detection_rate: mean(scores.iter().map(|s| Some(s.detection_rate))).unwrap_or(0.0),
        n_videos: scores.len(),
        slots: (0..n_slots)
            .map(|k| SlotScores {
                idsim_a: mean(scores.iter().map(|s| s.slots.get(k).and_then(|x| x.idsim_a))),
                idsim_b: mean(scores.iter().map(|s| s.slots.get(k).and_then(|x| x.idsim_b))),
            })
            .collect(),
    }
}

/// Sample every probe (probe `k` uses sampler seed `seed + k`) and score it.
pub fn evaluate(
    tag: &str,
    model: &Denoiser,
    codec: &dyn Codec,
    probes: &[Probe],
    settings: &EvalSettings,
) -> Result<(EvalRow, Vec<VideoScores>)> {
    let a = IdentityEmbedder::new(EmbedderConfig::noisy_a(settings.noise_scale))?;
    let b = IdentityEmbedder::new(EmbedderConfig::noisy_b(settings.noise_scale))?;
    let h = HolisticEmbedder::new(EmbedderConfig::holistic())?;
    let mut scores = Vec::with_capacity(probes.len());
    for (k, p) in probes.iter().enumerate() {
        let cfg = SamplerConfig { seed: settings.sampler.seed + k as u64, ..settings.sampler };
        let video = sample(model, codec, &p.ref_views(), &p.caption, &cfg)?;
        scores.push(score_video(video.view(), p, &a, &b, &h)?);
    }
    Ok((aggregate(tag, &scores), scores))
}

/// Which reference the leftmost subject matches, by majority over frames
/// with at least two detections; `None` on a tie or no evidence.
pub fn left_subject_ref(video: ArrayView4<f64>, refs: &[ArrayView3<f64>], oracle: &IdentityEmbedder) -> Result<Option<usize>> {
    let re: Vec<Vec<f64>> = refs.iter().map(|r| oracle.embed(*r)).collect::<Result<_>>()?;
    let mut votes = vec![0usize; refs.len()];
    for f in video.axis_iter(Axis(0)) {
        let dets = oracle.detector.detect(f);
        if dets.len() < 2 {
            continue;
        }
        let e = oracle.embed_decode(&dets[0].decode);
        let sims: Vec<f64> = re.iter().map(|r| cosine(&e, r).unwrap_or(-1.0)).collect();
        let best = (0..sims.len()).max_by(|&i, &j| sims[i].total_cmp(&sims[j])).unwrap();
        votes[best] += 1;
    }
    let top = *votes.iter().max().unwrap_or(&0);
    if top == 0 || votes.iter().filter(|&&v| v == top).count() > 1 {
        return Ok(None);
    }
    Ok(votes.iter().position(|&v| v == top))
}
