//! Data curation: caption, count and identity filters, reference extraction,
//! and the pretrain / cross-video / trade-off pair builders.

mod pairs;
mod pipeline;

pub use pipeline::{calibration_refs, curate, run_calibration, Curation, CurationSummary};

pub use pairs::{
    build_cross_pairs, build_multi_cross_pairs, build_pretrain_pairs, build_tradeoff_pairs,
    clip_scores, Anchor, BandIndex, ClipScores, Interval, PairKind, PairManifest, PairRecord,
    RefImage, RefRecord, TradeoffOutcome,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Detector, IdentityEmbedder};
use crate::error::{Error, Result};
use crate::synth::scene::{caption_words, SUBJECT_TERMS};
use crate::synth::{Clip, ClipMeta};

/// Every threshold of the curation pipeline. Defaults are the published ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub sample_rate_hz: f64,
    pub refs_per_clip: usize,
    pub count_deviation_frac: f64,
    pub identity_min_similarity: f64,
    pub identity_deviation_frac: f64,
    pub cross_band: [f64; 2],
    /// Closed band used for multi-identity cross pairs.
    pub multi_cross_band: [f64; 2],
    pub tradeoff_band: [f64; 2],
    pub face_area_min: f64,
    pub face_area_max: f64,
    pub tradeoff_top_k: usize,
    /// Weights of (aesthetics, flow, motion) after z-normalization.
    pub score_weights: [f64; 3],
    /// Crop side relative to the longer box side.
    pub crop_margin: f64,
    pub seed: u64,
    pub term_table: Vec<String>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            sample_rate_hz: 2.0,
            refs_per_clip: 5,
            count_deviation_frac: 0.3,
            identity_min_similarity: 0.5,
            identity_deviation_frac: 0.3,
            cross_band: [0.7, 0.9],
            multi_cross_band: [0.87, 0.97],
            tradeoff_band: [0.9, 0.99],
            face_area_min: 0.04,
            face_area_max: 0.9,
            tradeoff_top_k: 50_000,
            score_weights: [1.0 / 3.0; 3],
            crop_margin: 1.6,
            seed: 0,
            term_table: SUBJECT_TERMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.term_table.is_empty() {
            return Err(Error::Config("term table must not be empty".into()));
        }
        if self.sample_rate_hz <= 0.0 || self.refs_per_clip == 0 {
            return Err(Error::Config("sample rate and refs_per_clip must be positive".into()));
        }
        for (name, b) in [
            ("cross_band", self.cross_band),
            ("multi_cross_band", self.multi_cross_band),
            ("tradeoff_band", self.tradeoff_band),
        ] {
            if !(b[0] < b[1]) || b[0] < -1.0 || b[1] > 1.0 {
                return Err(Error::Config(format!("{name} must satisfy -1 <= lo < hi <= 1")));
            }
        }
        if !(self.face_area_min < self.face_area_max) {
            return Err(Error::Config("face_area_min must be below face_area_max".into()));
        }
        if self.crop_margin < 1.0 {
            return Err(Error::Config("crop_margin must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCount {
    pub input: usize,
    pub dropped: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Filters in application order.
    pub filters: Vec<(String, FilterCount)>,
    /// Why each dropped clip was dropped, keyed by clip id.
    pub drop_reasons: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl FilterReport {
    pub fn record(&mut self, name: &str, input: usize, drops: Vec<(String, String)>) {
        let dropped = drops.len();
        self.filters.push((
            name.to_string(),
            FilterCount {
                input,
                dropped,
                kept: input - dropped,
            },
        ));
        for (id, why) in drops {
            self.drop_reasons.insert(id, format!("{name}: {why}"));
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&b)?)
    }
}

/// Keep clips whose caption contains at least one table term (whole word,
/// case-insensitive). Returns the kept indices and per-clip drops.
pub fn filter_by_caption(metas: &[&ClipMeta], term_table: &[String]) -> (Vec<usize>, Vec<(String, String)>) {
    let terms: Vec<String> = term_table.iter().map(|t| t.to_lowercase()).collect();
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for (i, m) in metas.iter().enumerate() {
        let words = caption_words(&m.caption);
        if words.iter().any(|w| terms.contains(w)) {
            kept.push(i);
        } else {
            drops.push((m.clip_id.clone(), "caption names no subject".into()));
        }
    }
    (kept, drops)
}

/// Every `round(fps / rate)`-th frame starting at 0; every frame when the
/// clip rate is below the sampling rate.
pub fn sample_frames(n_frames: usize, fps: f64, rate_hz: f64) -> Vec<usize> {
    let step = if fps < rate_hz { 1 } else { ((fps / rate_hz).round() as usize).max(1) };
    (0..n_frames).step_by(step).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Keep { person_count: usize },
    Drop { reason: String },
}

impl Verdict {
    pub fn kept(&self) -> bool {
        matches!(self, Verdict::Keep { .. })
    }
}

/// Strict "more than `frac`" with a tolerance for binary fractions.
fn exceeds(count: usize, total: usize, frac: f64) -> bool {
    count as f64 > frac * total as f64 + 1e-9
}

/// Mode of the per-frame counts is the clip's person count; drop iff strictly
/// more than `max_frac` of frames deviate. Ties pick the smaller count.
pub fn check_count_consistency(counts: &[usize], max_frac: f64) -> Result<Verdict> {
    if counts.is_empty() {
        return Err(Error::Empty("no sampled frames for count check".into()));
    }
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in counts {
        *freq.entry(c).or_default() += 1;
    }
    let (&mode, _) = freq
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("non-empty");
    let deviants = counts.iter().filter(|&&c| c != mode).count();
    Ok(if exceeds(deviants, counts.len(), max_frac) {
        Verdict::Drop {
            reason: format!("{deviants} of {} frames deviate from count {mode}", counts.len()),
        }
    } else {
        Verdict::Keep { person_count: mode }
    })
}

/// Identity consistency over consecutive sampled frames. Subjects are matched
/// across frames by left-to-right order. A pair is below threshold when any
/// slot's cosine is under `min_sim` or detection fails to find `person_count`
/// subjects in either frame.
pub fn check_identity_consistency(
    frames: &[ndarray::ArrayView3<f64>],
    person_count: usize,
    embedder: &IdentityEmbedder,
    min_sim: f64,
    max_frac: f64,
) -> Result<Verdict> {
    if frames.len() < 2 {
        return Ok(Verdict::Keep { person_count });
    }
    let embs: Vec<Option<Vec<Vec<f64>>>> = frames
        .iter()
        .map(|f| {
            let d = embedder.detector.detect(*f);
            (d.len() == person_count && person_count > 0)
                .then(|| d.iter().map(|x| embedder.embed_decode(&x.decode)).collect())
        })
        .collect();
    let pairs = frames.len() - 1;
    let mut below = 0;
    for i in 0..pairs {
        let bad = match (&embs[i], &embs[i + 1]) {
            (Some(a), Some(b)) => {
                let mut bad = false;
                for s in 0..person_count {
                    if cosine(&a[s], &b[s])? < min_sim {
                        bad = true;
                    }
                }
                bad
            }
            _ => true,
        };
        if bad {
            below += 1;
        }
    }
    Ok(if exceeds(below, pairs, max_frac) {
        Verdict::Drop {
            reason: format!("{below} of {pairs} consecutive pairs below {min_sim}"),
        }
    } else {
        Verdict::Keep { person_count }
    })
}

/// Left-to-right slot order of a multi-subject clip and the frames whose
/// per-frame order agrees with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOrder {
    /// Track indices, leftmost first.
    pub tracks: Vec<usize>,
    pub identity_ids: Vec<u32>,
    pub mean_x: Vec<f64>,
    /// Frames (out of the candidates given) usable for reference extraction.
    pub agreeing_frames: Vec<usize>,
}

/// Order subjects by mean box-center x over `frames`; ties go to the lower
/// identity id. Frames where the per-frame order disagrees, or where a
/// subject is missing, are excluded from `agreeing_frames`.
pub fn order_identities(meta: &ClipMeta, frames: &[usize]) -> SlotOrder {
    let n = meta.n_subjects();
    let mut sum = vec![0.0; n];
    let mut cnt = vec![0usize; n];
    for &f in frames {
        for b in &meta.face_boxes[f] {
            sum[b.subject_index] += b.center()[0] / meta.w as f64;
            cnt[b.subject_index] += 1;
        }
    }
    let mean_x: Vec<f64> = (0..n)
        .map(|t| if cnt[t] > 0 { sum[t] / cnt[t] as f64 } else { f64::INFINITY })
        .collect();
    let mut tracks: Vec<usize> = (0..n).collect();
    tracks.sort_by(|&a, &b| {
        mean_x[a]
            .total_cmp(&mean_x[b])
            .then(meta.identity_ids[a].cmp(&meta.identity_ids[b]))
    });
    let agreeing_frames = frames
        .iter()
        .copied()
        .filter(|&f| {
            let boxes = &meta.face_boxes[f];
            let xs: Option<Vec<f64>> = tracks
                .iter()
                .map(|&t| boxes.iter().find(|b| b.subject_index == t).map(|b| b.center()[0]))
                .collect();
            match xs {
                Some(xs) => xs.windows(2).all(|w| w[0] < w[1]),
                None => false,
            }
        })
        .collect();
    SlotOrder {
        identity_ids: tracks.iter().map(|&t| meta.identity_ids[t]).collect(),
        mean_x: tracks.iter().map(|&t| mean_x[t]).collect(),
        tracks,
        agreeing_frames,
    }
}

/// Clips surviving every filter, with their person count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptClip {
    pub clip_id: String,
    pub person_count: usize,
}

/// Run caption, count and identity filters in order.
pub fn run_filters(
    clips: &[&Clip],
    config: &CurationConfig,
    embedder: &IdentityEmbedder,
    report: &mut FilterReport,
) -> Result<Vec<KeptClip>> {
    let metas: Vec<&ClipMeta> = clips.iter().map(|c| &c.meta).collect();
    let (cap_kept, drops) = filter_by_caption(&metas, &config.term_table);
    report.record("caption", clips.len(), drops);

    let detector = Detector::default();
    let mut after_count = Vec::new();
    let mut drops = Vec::new();
    for &i in &cap_kept {
        let c = clips[i];
        let idx = sample_frames(c.meta.n_frames, c.meta.fps, config.sample_rate_hz);
        let counts: Vec<usize> = idx.iter().map(|&f| detector.detect(c.frame(f)).len()).collect();
        match check_count_consistency(&counts, config.count_deviation_frac)? {
            Verdict::Keep { person_count } if person_count > 0 => after_count.push((i, person_count)),
            Verdict::Keep { .. } => drops.push((c.meta.clip_id.clone(), "no subject detected".into())),
            Verdict::Drop { reason } => drops.push((c.meta.clip_id.clone(), reason)),
        }
    }
    report.record("count", cap_kept.len(), drops);

    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for &(i, pc) in &after_count {
        let c = clips[i];
        let idx = sample_frames(c.meta.n_frames, c.meta.fps, config.sample_rate_hz);
        let views: Vec<_> = idx.iter().map(|&f| c.frame(f)).collect();
        match check_identity_consistency(
            &views,
            pc,
            embedder,
            config.identity_min_similarity,
            config.identity_deviation_frac,
        )? {
            Verdict::Keep { person_count } => kept.push(KeptClip {
                clip_id: c.meta.clip_id.clone(),
                person_count,
            }),
            Verdict::Drop { reason } => drops.push((c.meta.clip_id.clone(), reason)),
        }
    }
    report.record("identity", after_count.len(), drops);
    Ok(kept)
}
