use ndarray::{ArrayView3, ArrayView4, Axis};

use crate::embed::{estimate_background, foreground_mask, Detector};
use crate::error::{Error, Result};
use crate::synth::identity::Hue;
use crate::synth::scene::{caption_words, Action, Background};

/// Attributes a caption commands.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionAttributes {
    /// Body colors, one per described subject.
    pub colors: Vec<Hue>,
    pub action: Option<Action>,
    pub background: Background,
}

impl CaptionAttributes {
    pub fn count(&self) -> usize {
        self.colors.len() + usize::from(self.action.is_some()) + 1
    }
}

pub fn parse_caption(caption: &str) -> Result<CaptionAttributes> {
    let words = caption_words(caption);
    let background = words
        .iter()
        .find_map(|w| Background::from_word(w))
        .ok_or_else(|| Error::Caption(caption.to_string()))?;
    let colors: Vec<Hue> = words.iter().filter_map(|w| Hue::from_word(w)).collect();
    let action = words.iter().find_map(|w| Action::from_word(w));
    if !colors.is_empty() && action.is_none() {
        return Err(Error::Caption(caption.to_string()));
    }
    Ok(CaptionAttributes { colors, action, background })
}

/// Attributes estimated from pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedAttributes {
    /// Body hues of the subjects found in the middle frame, left to right.
    pub colors: Vec<Hue>,
    pub action: Option<Action>,
    pub background: usize,
}

const DRIFT_MIN: f64 = 0.06;
const SPIN_MIN_DEG: f64 = 30.0;
const SQUASH_MIN: f64 = 0.3;

fn wrap_deg(d: f64) -> f64 {
    (d + 180.0).rem_euclid(360.0) - 180.0
}

/// Classify the motion of the leftmost subject: the largest of
/// displacement, accumulated rotation and expression range relative to its
/// threshold wins; below every threshold the subject rests.
pub fn estimate_action(video: ArrayView4<f64>) -> Option<Action> {
    let det = Detector::default();
    let (_, h, w, _) = video.dim();
    let size = h.max(w) as f64;
    let mut track = Vec::new();
    for f in video.axis_iter(Axis(0)) {
        if let Some(d) = det.detect(f).into_iter().next() {
            track.push(d);
        }
    }
    if track.len() < 2 {
        return None;
    }
    let (a, b) = (&track[0], &track[track.len() - 1]);
    let disp = ((a.decode.center[0] - b.decode.center[0]).powi(2) + (a.decode.center[1] - b.decode.center[1]).powi(2))
        .sqrt()
        / size;
    let spin: f64 = track
        .windows(2)
        .map(|p| wrap_deg(p[1].decode.pose_deg - p[0].decode.pose_deg))
        .sum::<f64>()
        .abs();
    let ex: Vec<f64> = track.iter().map(|d| d.decode.expression).collect();
    let range = ex.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ex.iter().cloned().fold(f64::INFINITY, f64::min);
    let scores = [
        (disp / DRIFT_MIN, Action::Drifts),
        (spin / SPIN_MIN_DEG, Action::Spins),
        (range / SQUASH_MIN, Action::Squashes),
    ];
    let best = scores.iter().cloned().fold((0.0, Action::Rests), |m, s| if s.0 > m.0 { s } else { m });
    Some(if best.0 < 1.0 { Action::Rests } else { best.1 })
}

pub fn estimate_colors_and_background(frame: ArrayView3<f64>) -> (Vec<Hue>, usize) {
    let det = Detector::default();
    let colors = det.detect(frame).into_iter().filter_map(|d| d.decode.hues[0]).collect();
    let mask = foreground_mask(&frame, det.saturation_threshold);
    (colors, estimate_background(frame, &mask))
}

pub fn estimate_attributes(video: ArrayView4<f64>) -> RealizedAttributes {
    let mid = video.dim().0 / 2;
    let (colors, background) = estimate_colors_and_background(video.index_axis(Axis(0), mid));
    RealizedAttributes { colors, action: estimate_action(video), background }
}

/// Fraction of commanded attributes (each subject color, the action, the
/// backdrop) realized in the video.
pub fn attribute_alignment(video: ArrayView4<f64>, caption: &str) -> Result<f64> {
    let want = parse_caption(caption)?;
    let got = estimate_attributes(video);
    let mut pool = got.colors.clone();
    let mut hits = 0usize;
    for c in &want.colors {
        if let Some(i) = pool.iter().position(|h| h == c) {
            pool.remove(i);
            hits += 1;
        }
    }
    if want.action.is_some() && want.action == got.action {
        hits += 1;
    }
    if want.background.index() == got.background {
        hits += 1;
    }
    Ok(hits as f64 / want.count() as f64)
}

/// Expected alignment of a random single-subject caption against an
/// unrelated clip under uniform grammar marginals.
pub fn chance_alignment() -> f64 {
    (1.0 / Hue::ALL.len() as f64 + 1.0 / Action::ALL.len() as f64 + 1.0 / Background::ALL.len() as f64) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, CorpusConfig};
    use rand::Rng;

    fn corpus() -> crate::synth::Corpus {
        generate_corpus(&CorpusConfig {
            n_identities: 20,
            clips_per_identity: 3,
            two_identity_clips: 6,
            no_subject_frac: 0.0,
            count_inconsistent_frac: 0.0,
            identity_swap_frac: 0.0,
            n_frames: 9,
            h: 32,
            w: 32,
            ..CorpusConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn parses_grammar_and_rejects_garbage() {
        let a = parse_caption("a red walker and a blue glyph spins on a striped backdrop").unwrap();
        assert_eq!(a.colors, vec![Hue::Red, Hue::Blue]);
        assert_eq!(a.action, Some(Action::Spins));
        assert_eq!(a.background, Background::Striped);
        assert_eq!(a.count(), 4);
        let e = parse_caption("an empty plain backdrop").unwrap();
        assert_eq!(e.count(), 1);
        assert!(matches!(parse_caption("hello world"), Err(Error::Caption(_))));
    }

    #[test]
    fn ground_truth_clips_align_with_their_captions() {
        let c = corpus();
        let scores: Vec<f64> = c
            .clips
            .iter()
            .map(|clip| attribute_alignment(clip.frames.view(), &clip.meta.caption).unwrap())
            .collect();
        let perfect = scores.iter().filter(|&&s| s == 1.0).count();
        assert!(perfect as f64 >= 0.95 * scores.len() as f64, "{perfect}/{}", scores.len());
    }

    #[test]
    fn wrong_color_costs_one_attribute() {
        let c = corpus();
        let clip = c.clips.iter().find(|k| k.meta.n_subjects() == 1).unwrap();
        let body = clip.meta.identities[0].body();
        let other = Hue::ALL.iter().find(|&&h| h != body).unwrap();
        let cap = clip.meta.caption.replacen(body.word(), other.word(), 1);
        assert!(attribute_alignment(clip.frames.view(), &cap).unwrap() <= 2.0 / 3.0 + 1e-12);
    }

    #[test]
    fn random_pairs_sit_near_chance() {
        let c = corpus();
        let singles: Vec<_> = c.clips.iter().filter(|k| k.meta.n_subjects() == 1).collect();
        let mut rng = crate::seed::rng(3, "chance", &[]);
        let n = 300;
        let mut total = 0.0;
        for _ in 0..n {
            let a = singles[rng.gen_range(0..singles.len())];
            let b = singles[rng.gen_range(0..singles.len())];
            total += attribute_alignment(a.frames.view(), &b.meta.caption).unwrap();
        }
        let mean = total / n as f64;
        assert!((mean - chance_alignment()).abs() < 0.07, "mean {mean} chance {}", chance_alignment());
    }
}
