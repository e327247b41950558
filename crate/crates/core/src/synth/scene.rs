use rand::Rng;
use serde::{Deserialize, Serialize};

use super::identity::IdentitySpec;

/// What the subject does over the clip. Each action drives one
/// identity-irrelevant axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Rests,
    Drifts,
    Spins,
    Squashes,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Rests, Action::Drifts, Action::Spins, Action::Squashes];

    pub fn word(self) -> &'static str {
        match self {
            Action::Rests => "rests",
            Action::Drifts => "drifts",
            Action::Spins => "spins",
            Action::Squashes => "squashes",
        }
    }

    pub fn from_word(w: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.word() == w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Plain,
    Striped,
    Checkered,
    Gradient,
}

impl Background {
    pub const ALL: [Background; 4] = [
        Background::Plain,
        Background::Striped,
        Background::Checkered,
        Background::Gradient,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Background::Plain => "plain",
            Background::Striped => "striped",
            Background::Checkered => "checkered",
            Background::Gradient => "gradient",
        }
    }

    pub fn from_word(w: &str) -> Option<Background> {
        Background::ALL.into_iter().find(|b| b.word() == w)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Linear path of a subject center in normalized frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl Trajectory {
    pub fn fixed(at: [f64; 2]) -> Self {
        Trajectory { start: at, end: at }
    }

    pub fn at(&self, u: f64) -> [f64; 2] {
        [
            self.start[0] + (self.end[0] - self.start[0]) * u,
            self.start[1] + (self.end[1] - self.start[1]) * u,
        ]
    }

    pub fn path_length(&self) -> f64 {
        ((self.end[0] - self.start[0]).powi(2) + (self.end[1] - self.start[1]).powi(2)).sqrt()
    }
}

/// A scalar that ramps linearly from `start` to `end` over the clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
}

impl Ramp {
    pub fn constant(v: f64) -> Self {
        Ramp { start: v, end: v }
    }

    pub fn at(&self, u: f64) -> f64 {
        self.start + (self.end - self.start) * u
    }
}

/// Alternate between two identities every `period` frames. Used only for the
/// identity-swap negative fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Swap {
    pub alt_slot: usize,
    pub period: usize,
}

/// One subject's motion within a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTrack {
    /// Index into the identity list passed to the renderer.
    pub identity_slot: usize,
    pub trajectory: Trajectory,
    /// In-plane rotation in degrees.
    pub pose_curve: Ramp,
    /// Deformation parameter in [0, 1].
    pub expression_curve: Ramp,
    /// Glyph diameter as a fraction of frame height.
    pub subject_scale: f64,
    /// First frame on which the subject is drawn.
    #[serde(default)]
    pub appears_at: usize,
    #[serde(default)]
    pub swap: Option<Swap>,
}

impl SubjectTrack {
    pub fn center(&self, frame: usize, n_frames: usize) -> [f64; 2] {
        self.trajectory.at(unit(frame, n_frames))
    }

    pub fn pose(&self, frame: usize, n_frames: usize) -> f64 {
        self.pose_curve.at(unit(frame, n_frames))
    }

    pub fn expression(&self, frame: usize, n_frames: usize) -> f64 {
        self.expression_curve.at(unit(frame, n_frames)).clamp(0.0, 1.0)
    }

    pub fn slot_at(&self, frame: usize) -> usize {
        match self.swap {
            Some(s) if s.period > 0 && (frame / s.period) % 2 == 1 => s.alt_slot,
            _ => self.identity_slot,
        }
    }

    pub fn visible_at(&self, frame: usize) -> bool {
        frame >= self.appears_at
    }
}

pub(crate) fn unit(frame: usize, n_frames: usize) -> f64 {
    if n_frames <= 1 {
        0.0
    } else {
        frame as f64 / (n_frames - 1) as f64
    }
}

/// Identity-irrelevant description of a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub action: Action,
    pub background_code: Background,
    pub tracks: Vec<SubjectTrack>,
    /// Drives the free choices of the caption grammar (subject terms).
    #[serde(default)]
    pub caption_seed: u64,
}

impl SceneSpec {
    pub fn n_subjects(&self) -> usize {
        self.tracks.len()
    }

    pub fn empty(background_code: Background) -> Self {
        SceneSpec {
            action: Action::Rests,
            background_code,
            tracks: Vec::new(),
            caption_seed: 0,
        }
    }
}

/// Sample a scene for `n_subjects` glyphs carrying `action`.
///
/// Single subjects sit near the frame center at a large scale; pairs are
/// placed in the left and right halves at a smaller scale so their tracks
/// never overlap.
pub fn sample_scene<R: Rng>(
    rng: &mut R,
    action: Action,
    background_code: Background,
    n_subjects: usize,
) -> SceneSpec {
    let mut tracks = Vec::with_capacity(n_subjects);
    for s in 0..n_subjects {
        let (cx, cy, scale) = match n_subjects {
            1 => (
                rng.gen_range(0.42..0.58),
                rng.gen_range(0.42..0.58),
                rng.gen_range(0.5..0.62),
            ),
            _ => {
                let lane = (s as f64 + 0.5) / n_subjects as f64;
                (
                    lane + rng.gen_range(-0.03..0.03),
                    rng.gen_range(0.4..0.6),
                    rng.gen_range(0.32..0.4) * 2.0 / n_subjects as f64,
                )
            }
        };
        let pose0 = rng.gen_range(-90.0..90.0);
        let expr0 = rng.gen_range(0.0..1.0);
        let mut track = SubjectTrack {
            identity_slot: s,
            trajectory: Trajectory::fixed([cx, cy]),
            pose_curve: Ramp::constant(pose0),
            expression_curve: Ramp::constant(expr0),
            subject_scale: scale,
            appears_at: 0,
            swap: None,
        };
        match action {
            Action::Rests => {}
            Action::Drifts => {
                let (dx, dy) = if n_subjects == 1 {
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (0.16 * a.cos(), 0.16 * a.sin())
                } else {
                    // vertical only, keeps lanes separate
                    (0.0, if rng.gen_bool(0.5) { 0.14 } else { -0.14 })
                };
                let start = [cx - dx / 2.0, cy - dy / 2.0];
                let end = [cx + dx / 2.0, cy + dy / 2.0];
                track.trajectory = Trajectory { start, end };
            }
            Action::Spins => {
                let delta = rng.gen_range(60.0..120.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                track.pose_curve = Ramp {
                    start: pose0,
                    end: pose0 + delta,
                };
            }
            Action::Squashes => {
                let lo = rng.gen_range(0.0..0.25);
                let hi = rng.gen_range(0.75..1.0);
                track.expression_curve = if rng.gen_bool(0.5) {
                    Ramp { start: lo, end: hi }
                } else {
                    Ramp { start: hi, end: lo }
                };
            }
        }
        tracks.push(track);
    }
    SceneSpec {
        action,
        background_code,
        tracks,
        caption_seed: rng.gen(),
    }
}

/// Words that mark a caption as describing a subject. Matching is whole-word
/// and case-insensitive.
pub const SUBJECT_TERMS: [&str; 5] = ["walker", "sprite", "glyph", "figure", "critter"];

const EMPTY_TEMPLATES: [&str; 3] = [
    "an empty {bg} backdrop",
    "a quiet {bg} backdrop with nothing on it",
    "the {bg} backdrop at dusk",
];

/// Build a caption from the grammar
/// `a {color} {term} [and a {color} {term}] {action} on a {bg} backdrop`.
pub fn make_caption<R: Rng>(rng: &mut R, identities: &[&IdentitySpec], scene: &SceneSpec) -> String {
    let bg = scene.background_code.word();
    if identities.is_empty() {
        let t = EMPTY_TEMPLATES[rng.gen_range(0..EMPTY_TEMPLATES.len())];
        return t.replace("{bg}", bg);
    }
    let subjects: Vec<String> = identities
        .iter()
        .map(|id| {
            let term = SUBJECT_TERMS[rng.gen_range(0..SUBJECT_TERMS.len())];
            format!("a {} {}", id.body().word(), term)
        })
        .collect();
    format!(
        "{} {} on a {} backdrop",
        subjects.join(" and "),
        scene.action.word(),
        bg
    )
}

/// Lower-cased whole words of a caption.
pub fn caption_words(caption: &str) -> Vec<String> {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}
