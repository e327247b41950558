//! Proxy metrics on generated videos: identity consistency under two
//! noisy identity embedders, holistic editability distance, and caption
//! attribute alignment, plus report tables.

mod attributes;
mod probes;
mod report;

pub use attributes::{
    attribute_alignment, chance_alignment, estimate_action, estimate_attributes, parse_caption, CaptionAttributes,
    RealizedAttributes,
};
pub use probes::{build_probes, evaluate, left_subject_ref, EvalSettings, Probe, ProbeConfig, VideoScores};
pub use report::{make_report, EvalReport, EvalRow, SlotScores, COLUMNS};

use ndarray::{Array2, Array3, ArrayView3, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, crop_subject, Detection, Detector, HolisticEmbedder, IdentityEmbedder};
use crate::error::Result;

/// Margin used when cropping detected subjects for embedding.
pub const CROP_MARGIN: f64 = 1.6;

/// Boxes and decoded features of every subject in a frame, left to right.
pub fn detect_subject(frame: ArrayView3<f64>) -> Vec<Detection> {
    Detector::default().detect(frame)
}

fn crop(frame: ArrayView3<f64>, d: &Detection) -> Option<(Array3<f64>, Array2<bool>)> {
    crop_subject(frame, &d.bbox, CROP_MARGIN).ok()
}

/// A per-frame mean and how many frames contributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    /// `None` when no frame had a detection.
    pub mean: Option<f64>,
    pub detection_rate: f64,
}

fn frame_score(values: &[Option<f64>]) -> FrameScore {
    let got: Vec<f64> = values.iter().flatten().copied().collect();
    FrameScore {
        mean: if got.is_empty() { None } else { Some(got.iter().sum::<f64>() / got.len() as f64) },
        detection_rate: if values.is_empty() { 0.0 } else { got.len() as f64 / values.len() as f64 },
    }
}

/// Mean cosine between the reference embedding and the largest subject of
/// each frame; frames without detections are excluded.
pub fn identity_consistency(
    video: ArrayView4<f64>,
    reference: ArrayView3<f64>,
    embedder: &IdentityEmbedder,
) -> Result<FrameScore> {
    let r = embedder.embed(reference)?;
    let mut vals = Vec::new();
    for f in video.axis_iter(Axis(0)) {
        let v = match embedder.detector.detect_primary(f).and_then(|d| crop(f, &d)) {
            Some((c, _)) => match embedder.embed(c.view()) {
                Ok(e) => Some(cosine(&r, &e)?),
                Err(_) => None,
            },
            None => None,
        };
        vals.push(v);
    }
    Ok(frame_score(&vals))
}

/// One minus the mean holistic cosine between the reference and each
/// frame's cropped subject.
pub fn editability(video: ArrayView4<f64>, reference: ArrayView3<f64>, holistic: &HolisticEmbedder) -> Result<FrameScore> {
    let r = holistic.embed(reference);
    let det = Detector::default();
    let mut vals = Vec::new();
    for f in video.axis_iter(Axis(0)) {
        let v = match det.detect_primary(f).and_then(|d| crop(f, &d)) {
            Some((c, _)) => Some(1.0 - cosine(&r, &holistic.embed(c.view()))?),
            None => None,
        };
        vals.push(v);
    }
    Ok(frame_score(&vals))
}

const FILL_BONUS: f64 = 10.0;

/// Injective assignment of detections to slots maximizing total score;
/// slots are filled whenever enough detections exist.
/// `scores[i][s]` is detection `i` against slot `s`; returns per slot the
/// assigned detection.
pub fn best_assignment(scores: &[Vec<f64>], n_slots: usize) -> Vec<Option<usize>> {
    fn rec(i: usize, scores: &[Vec<f64>], used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, best: &mut (f64, Vec<Option<usize>>), acc: f64) {
        if i == scores.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        // detection i left unassigned
        rec(i + 1, scores, used, cur, best, acc);
        for s in 0..used.len() {
            if !used[s] {
                used[s] = true;
                cur[s] = Some(i);
                rec(i + 1, scores, used, cur, best, acc + FILL_BONUS + scores[i][s]);
                cur[s] = None;
                used[s] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, vec![None; n_slots]);
    rec(0, scores, &mut vec![false; n_slots], &mut vec![None; n_slots], &mut best, 0.0);
    best.1
}

/// Per-slot identity consistency for multi-identity videos: in every frame
/// detections are matched to references by maximizing total cosine under
/// `embedders[0]`; every embedder then scores the matched pairs.
pub fn multi_identity_consistency(
    video: ArrayView4<f64>,
    references: &[ArrayView3<f64>],
    embedders: &[&IdentityEmbedder],
) -> Result<(Vec<Vec<FrameScore>>, f64)> {
    let refs: Vec<Vec<Vec<f64>>> = embedders
        .iter()
        .map(|e| references.iter().map(|r| e.embed(*r)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let det = Detector::default();
    let ns = references.len();
    let mut vals = vec![vec![Vec::new(); ns]; embedders.len()];
    let mut found = 0usize;
    let n_frames = video.dim().0;
    for f in video.axis_iter(Axis(0)) {
        let decodes: Vec<_> = det
            .detect(f)
            .iter()
            .filter_map(|d| crop(f, d))
            .filter_map(|(c, _)| det.detect_primary(c.view()).map(|d| d.decode))
            .collect();
        let embs: Vec<Vec<Vec<f64>>> =
            embedders.iter().map(|e| decodes.iter().map(|d| e.embed_decode(d)).collect()).collect();
        found += embs[0].len().min(ns);
        let scores: Vec<Vec<f64>> = embs[0]
            .iter()
            .map(|e| refs[0].iter().map(|r| cosine(e, r).unwrap_or(-1.0)).collect())
            .collect();
        let assign = best_assignment(&scores, ns);
        for (k, emb) in embs.iter().enumerate() {
            for s in 0..ns {
                let v = match assign[s] {
                    Some(i) if i < emb.len() => Some(cosine(&emb[i], &refs[k][s])?),
                    _ => None,
                };
                vals[k][s].push(v);
            }
        }
    }
    let scores = vals.iter().map(|per| per.iter().map(|v| frame_score(v)).collect()).collect();
    Ok((scores, found as f64 / (n_frames * ns).max(1) as f64))
}
