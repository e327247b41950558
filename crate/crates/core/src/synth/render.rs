//! Supersampled glyph rasterizer.
//!
//! A glyph lives in a unit local frame (x right, y down, "up" is -y). The
//! expression parameter squashes it along local y and widens it along local
//! x; pose rotates the deformed glyph in-plane; the track supplies center and
//! scale. Every pixel value is a pure function of its inputs.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::identity::{IdentitySpec, ShapeCode};
use super::scene::{caption_words, make_caption, Background, SceneSpec, SUBJECT_TERMS};
use crate::error::{Error, Result};
use crate::seed;

/// Horizontal stretch per unit expression.
pub const EXPR_WIDEN: f64 = 0.25;
/// Vertical squash per unit expression.
pub const EXPR_SQUASH: f64 = 0.35;
/// Core region scale relative to the silhouette.
pub const CORE_SCALE: f64 = 0.45;
/// Accent spot center (local coords) and radius.
pub const ACCENT_CENTER: [f64; 2] = [0.0, -0.5];
pub const ACCENT_RADIUS: f64 = 0.24;
const SPECKLE_AMPLITUDE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub subject_index: usize,
    pub identity_id: u32,
    /// Pixel box `[x0, y0, x1, y1)`.
    pub bbox: [f64; 4],
}

impl FaceBox {
    pub fn center(&self) -> [f64; 2] {
        [
            (self.bbox[0] + self.bbox[2]) / 2.0,
            (self.bbox[1] + self.bbox[3]) / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        (self.bbox[2] - self.bbox[0]).max(0.0) * (self.bbox[3] - self.bbox[1]).max(0.0)
    }
}

pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone)]
pub struct RenderedClip {
    /// `(N, H, W, 3)` in [0, 1].
    pub frames: Array4<f64>,
    pub face_boxes: Vec<Vec<FaceBox>>,
    /// Per frame, per track: true where any supersample hits the glyph.
    pub alpha_masks: Vec<Vec<Array2<bool>>>,
    pub caption: String,
    pub identity_ids: Vec<u32>,
}

/// Placement of one glyph in pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphPlacement {
    pub center: [f64; 2],
    pub radius: f64,
    pub pose_deg: f64,
    pub expression: f64,
}

impl GlyphPlacement {
    fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let t = self.pose_deg.to_radians();
        let (s, c) = t.sin_cos();
        let dx = (px - self.center[0]) / self.radius;
        let dy = (py - self.center[1]) / self.radius;
        let a = c * dx + s * dy;
        let b = -s * dx + c * dy;
        (
            a / (1.0 + EXPR_WIDEN * self.expression),
            b / (1.0 - EXPR_SQUASH * self.expression),
        )
    }

    /// Pixel-space bounding radius.
    fn reach(&self) -> f64 {
        self.radius * 1.15 * (1.0 + EXPR_WIDEN) + 1.0
    }
}

pub fn silhouette(shape: ShapeCode) -> Vec<[f64; 2]> {
    match shape {
        ShapeCode::Disc => (0..32)
            .map(|i| {
                let a = i as f64 / 32.0 * std::f64::consts::TAU;
                [0.95 * a.cos(), 0.95 * a.sin()]
            })
            .collect(),
        ShapeCode::Square => vec![[-0.78, -0.78], [0.78, -0.78], [0.78, 0.78], [-0.78, 0.78]],
        ShapeCode::Triangle => [-90.0f64, 30.0, 150.0]
            .iter()
            .map(|d| {
                let a = d.to_radians();
                [1.05 * a.cos(), 1.05 * a.sin()]
            })
            .collect(),
        ShapeCode::Cross => {
            let (a, l) = (0.34, 0.98);
            vec![
                [-a, -l],
                [a, -l],
                [a, -a],
                [l, -a],
                [l, a],
                [a, a],
                [a, l],
                [-a, l],
                [-a, a],
                [-l, a],
                [-l, -a],
                [-a, -a],
            ]
        }
    }
}

fn in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

struct GlyphShape {
    shape: ShapeCode,
    poly: Vec<[f64; 2]>,
}

impl GlyphShape {
    fn new(shape: ShapeCode) -> Self {
        GlyphShape {
            shape,
            poly: silhouette(shape),
        }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        match self.shape {
            ShapeCode::Disc => u * u + v * v <= 0.95 * 0.95,
            _ => in_polygon(&self.poly, u, v),
        }
    }
}

/// Seeded smooth texture in [-1, 1] over local glyph coordinates.
struct Speckle {
    waves: [[f64; 3]; 3],
}

impl Speckle {
    fn new(marking_seed: u64) -> Self {
        use rand::Rng;
        let mut rng = seed::rng(marking_seed, "speckle", &[]);
        let mut waves = [[0.0; 3]; 3];
        for w in waves.iter_mut() {
            *w = [
                rng.gen_range(2.0..6.0),
                rng.gen_range(2.0..6.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ];
        }
        Speckle { waves }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| (w[0] * u + w[1] * v + w[2]).cos())
            .sum::<f64>()
            / 3.0
    }
}

/// Per-glyph raster: coverage in [0,1] and premultiplied color.
struct GlyphRaster {
    coverage: Array2<f64>,
    color: Array3<f64>,
}

fn rasterize(id: &IdentitySpec, g: &GlyphPlacement, h: usize, w: usize, ss: usize) -> GlyphRaster {
    let shape = GlyphShape::new(id.shape);
    let speckle = Speckle::new(id.marking_seed);
    let [body, core, accent] = id.palette.map(|p| p.rgb());
    let mut coverage = Array2::<f64>::zeros((h, w));
    let mut color = Array3::<f64>::zeros((h, w, 3));
    let reach = g.reach();
    let x0 = ((g.center[0] - reach).floor().max(0.0)) as usize;
    let x1 = ((g.center[0] + reach).ceil().min(w as f64)).max(0.0) as usize;
    let y0 = ((g.center[1] - reach).floor().max(0.0)) as usize;
    let y1 = ((g.center[1] + reach).ceil().min(h as f64)).max(0.0) as usize;
    let inv = 1.0 / (ss * ss) as f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let mut hits = 0usize;
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                    let (u, v) = g.to_local(px, py);
                    if !shape.contains(u, v) {
                        continue;
                    }
                    hits += 1;
                    let du = u - ACCENT_CENTER[0];
                    let dv = v - ACCENT_CENTER[1];
                    let c = if du * du + dv * dv <= ACCENT_RADIUS * ACCENT_RADIUS {
                        accent
                    } else if shape.contains(u / CORE_SCALE, v / CORE_SCALE) {
                        core
                    } else {
                        let k = 1.0 + SPECKLE_AMPLITUDE * speckle.at(u, v);
                        body.map(|b| b * k)
                    };
                    for ch in 0..3 {
                        acc[ch] += c[ch];
                    }
                }
            }
            if hits > 0 {
                coverage[[y, x]] = hits as f64 * inv;
                for ch in 0..3 {
                    color[[y, x, ch]] = acc[ch] * inv;
                }
            }
        }
    }
    GlyphRaster { coverage, color }
}

/// Gray level of a background at pixel `(x, y)`.
pub fn background_value(bg: Background, x: usize, y: usize, h: usize, w: usize) -> f64 {
    let cell_w = (w / 4).max(1);
    let cell_h = (h / 4).max(1);
    match bg {
        Background::Plain => 0.3,
        Background::Striped => {
            if (x / cell_w) % 2 == 0 {
                0.2
            } else {
                0.42
            }
        }
        Background::Checkered => {
            if (x / cell_w + y / cell_h) % 2 == 0 {
                0.2
            } else {
                0.42
            }
        }
        Background::Gradient => 0.1 + 0.4 * (y as f64 + 0.5) / h as f64,
    }
}

pub fn render_background(bg: Background, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((h, w, 3), |(y, x, _)| background_value(bg, x, y, h, w))
}

/// Renderer settings shared by clips and reference images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Renderer {
    pub h: usize,
    pub w: usize,
    pub supersample: usize,
}

impl Renderer {
    pub fn new(h: usize, w: usize) -> Self {
        Renderer {
            h,
            w,
            supersample: 4,
        }
    }

    /// Composite every visible glyph of `scene` at frame `f` over the
    /// background. Returns the image, per-track alpha masks and boxes.
    pub fn render_frame(
        &self,
        identities: &[IdentitySpec],
        scene: &SceneSpec,
        f: usize,
        n_frames: usize,
    ) -> (Array3<f64>, Vec<Array2<bool>>, Vec<FaceBox>) {
        let (h, w) = (self.h, self.w);
        let mut img = render_background(scene.background_code, h, w);
        let mut masks = Vec::with_capacity(scene.tracks.len());
        let mut boxes = Vec::new();
        for (ti, track) in scene.tracks.iter().enumerate() {
            if !track.visible_at(f) {
                masks.push(Array2::from_elem((h, w), false));
                continue;
            }
            let id = &identities[track.slot_at(f)];
            let c = track.center(f, n_frames);
            let placement = GlyphPlacement {
                center: [c[0] * w as f64, c[1] * h as f64],
                radius: track.subject_scale * h as f64 / 2.0,
                pose_deg: track.pose(f, n_frames),
                expression: track.expression(f, n_frames),
            };
            let r = rasterize(id, &placement, h, w, self.supersample);
            let mut mask = Array2::from_elem((h, w), false);
            let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for y in 0..h {
                for x in 0..w {
                    let a = r.coverage[[y, x]];
                    if a <= 0.0 {
                        continue;
                    }
                    mask[[y, x]] = true;
                    for ch in 0..3 {
                        img[[y, x, ch]] = img[[y, x, ch]] * (1.0 - a) + r.color[[y, x, ch]];
                    }
                    if a >= 0.5 {
                        bb[0] = bb[0].min(x as f64);
                        bb[1] = bb[1].min(y as f64);
                        bb[2] = bb[2].max(x as f64 + 1.0);
                        bb[3] = bb[3].max(y as f64 + 1.0);
                    }
                }
            }
            if bb[0].is_finite() {
                boxes.push(FaceBox {
                    subject_index: ti,
                    identity_id: id.identity_id,
                    bbox: bb,
                });
            }
            masks.push(mask);
        }
        (img, masks, boxes)
    }

    /// Render a whole clip.
    ///
    /// Fails when a subject that should be on screen has no visible pixel on
    /// more than 30% of frames, or when fewer than 70% of frames hold every
    /// scheduled glyph fully inside the frame.
    pub fn render_clip(
        &self,
        identity_specs: &[IdentitySpec],
        scene: &SceneSpec,
        n_frames: usize,
    ) -> Result<RenderedClip> {
        if n_frames == 0 {
            return Err(Error::Scene("n_frames must be at least 1".into()));
        }
        for t in &scene.tracks {
            let need = t.identity_slot.max(t.swap.map_or(0, |s| s.alt_slot));
            if need >= identity_specs.len() {
                return Err(Error::Scene(format!(
                    "track references identity slot {need} but only {} identities given",
                    identity_specs.len()
                )));
            }
        }
        let (h, w) = (self.h, self.w);
        let mut frames = Array4::<f64>::zeros((n_frames, h, w, 3));
        let mut face_boxes = Vec::with_capacity(n_frames);
        let mut alpha_masks = Vec::with_capacity(n_frames);
        let mut missing = 0usize;
        let mut scheduled = 0usize;
        let mut fits = 0usize;
        for f in 0..n_frames {
            let (img, masks, boxes) = self.render_frame(identity_specs, scene, f, n_frames);
            frames.slice_mut(ndarray::s![f, .., .., ..]).assign(&img);
            let due: Vec<usize> = (0..scene.tracks.len())
                .filter(|&t| scene.tracks[t].visible_at(f))
                .collect();
            if !due.is_empty() {
                scheduled += 1;
                if due.iter().any(|&t| !masks[t].iter().any(|&m| m)) {
                    missing += 1;
                }
                let inside = due.iter().all(|&t| {
                    let tr = &scene.tracks[t];
                    let c = tr.center(f, n_frames);
                    let r = tr.subject_scale / 2.0;
                    let rx = r * h as f64 / w as f64;
                    c[0] - rx >= 0.0 && c[0] + rx <= 1.0 && c[1] - r >= 0.0 && c[1] + r <= 1.0
                });
                if inside {
                    fits += 1;
                }
            }
            face_boxes.push(boxes);
            alpha_masks.push(masks);
        }
        if scheduled > 0 {
            if missing as f64 > 0.3 * scheduled as f64 {
                return Err(Error::Scene(format!(
                    "subject invisible on {missing} of {scheduled} frames"
                )));
            }
            if (fits as f64) < 0.7 * scheduled as f64 {
                return Err(Error::Scene(format!(
                    "subject box inside frame on only {fits} of {scheduled} frames"
                )));
            }
        }
        let mut ids_in_order: Vec<&IdentitySpec> = Vec::new();
        for t in &scene.tracks {
            ids_in_order.push(&identity_specs[t.identity_slot]);
        }
        let mut rng = seed::rng(scene.caption_seed, "caption", &[]);
        let caption = make_caption(&mut rng, &ids_in_order, scene);
        debug_assert_eq!(
            caption_words(&caption)
                .iter()
                .any(|w| SUBJECT_TERMS.contains(&w.as_str())),
            !scene.tracks.is_empty()
        );
        Ok(RenderedClip {
            frames,
            face_boxes,
            alpha_masks,
            caption,
            identity_ids: ids_in_order.iter().map(|i| i.identity_id).collect(),
        })
    }

    /// Render a single centered subject over a background.
    ///
    /// `rng_seed` jitters placement slightly so references of one identity
    /// are not pixel-aligned.
    pub fn render_reference(
        &self,
        identity: &IdentitySpec,
        pose: f64,
        expression: f64,
        background_code: Background,
        rng_seed: u64,
    ) -> (Array3<f64>, Array2<bool>) {
        use rand::Rng;
        let mut rng = seed::rng(rng_seed, "reference", &[identity.identity_id as u64]);
        let scene = SceneSpec {
            action: super::scene::Action::Rests,
            background_code,
            tracks: vec![super::scene::SubjectTrack {
                identity_slot: 0,
                trajectory: super::scene::Trajectory::fixed([
                    0.5 + rng.gen_range(-0.04..0.04),
                    0.5 + rng.gen_range(-0.04..0.04),
                ]),
                pose_curve: super::scene::Ramp::constant(pose),
                expression_curve: super::scene::Ramp::constant(expression.clamp(0.0, 1.0)),
                subject_scale: rng.gen_range(0.52..0.6),
                appears_at: 0,
                swap: None,
            }],
            caption_seed: 0,
        };
        let (img, mut masks, _) = self.render_frame(std::slice::from_ref(identity), &scene, 0, 1);
        (img, masks.remove(0))
    }
}

/// Mean vertex displacement of the unit silhouette under `expression`.
/// Strictly increasing in expression for every shape.
pub fn deformation_measure(shape: ShapeCode, expression: f64) -> f64 {
    let poly = silhouette(shape);
    poly.iter()
        .map(|p| {
            let dx = p[0] * EXPR_WIDEN * expression;
            let dy = p[1] * EXPR_SQUASH * expression;
            (dx * dx + dy * dy).sqrt()
        })
        .sum::<f64>()
        / poly.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::identity::sample_identity;
    use crate::synth::scene::{sample_scene, Action, Ramp, SubjectTrack, Trajectory};

    fn track(slot: usize, at: [f64; 2], scale: f64) -> SubjectTrack {
        SubjectTrack {
            identity_slot: slot,
            trajectory: Trajectory::fixed(at),
            pose_curve: Ramp::constant(10.0),
            expression_curve: Ramp::constant(0.3),
            subject_scale: scale,
            appears_at: 0,
            swap: None,
        }
    }

    #[test]
    fn static_scene_frames_identical() {
        let r = Renderer::new(32, 32);
        let id = sample_identity(0, 0);
        let scene = SceneSpec {
            action: Action::Rests,
            background_code: Background::Checkered,
            tracks: vec![track(0, [0.5, 0.5], 0.55)],
            caption_seed: 1,
        };
        let clip = r.render_clip(&[id], &scene, 5, ).unwrap();
        for f in 1..5 {
            let d = (&clip.frames.slice(ndarray::s![f, .., .., ..])
                - &clip.frames.slice(ndarray::s![0, .., .., ..]))
                .mapv(f64::abs)
                .fold(0.0f64, |a, &b| a.max(b));
            assert!(d <= 1e-6);
        }
    }

    #[test]
    fn two_separated_subjects_give_two_boxes_every_frame() {
        let r = Renderer::new(32, 32);
        let ids = [sample_identity(0, 0), sample_identity(0, 1)];
        let mut rng = seed::rng(4, "t", &[]);
        for action in Action::ALL {
            let scene = sample_scene(&mut rng, action, Background::Plain, 2);
            let clip = r.render_clip(&ids, &scene, 9).unwrap();
            assert!(clip.face_boxes.iter().all(|b| b.len() == 2));
        }
    }

    #[test]
    fn expression_ramp_deformation_is_monotone() {
        let r = Renderer::new(32, 32);
        let id = sample_identity(0, 5);
        let mut t = track(0, [0.5, 0.5], 0.55);
        t.expression_curve = Ramp { start: 0.0, end: 1.0 };
        let scene = SceneSpec {
            action: Action::Squashes,
            background_code: Background::Plain,
            tracks: vec![t.clone()],
            caption_seed: 0,
        };
        let n = 9;
        assert!(r.render_clip(&[id.clone()], &scene, n).is_ok());
        let measures: Vec<f64> = (0..n)
            .map(|f| deformation_measure(id.shape, t.expression(f, n)))
            .collect();
        assert!(measures.windows(2).all(|w| w[1] >= w[0]));
        assert!(measures[n - 1] > measures[0]);
    }

    #[test]
    fn reference_mask_excludes_only_background() {
        let r = Renderer::new(32, 32);
        let id = sample_identity(2, 9);
        let (img, mask) = r.render_reference(&id, 30.0, 0.4, Background::Striped, 3);
        let bg = render_background(Background::Striped, 32, 32);
        let mut covered = 0;
        for y in 0..32 {
            for x in 0..32 {
                if mask[[y, x]] {
                    covered += 1;
                } else {
                    for c in 0..3 {
                        assert_eq!(img[[y, x, c]], bg[[y, x, c]]);
                    }
                }
            }
        }
        assert!(covered > 100);
    }

    #[test]
    fn rejects_offscreen_trajectory() {
        let r = Renderer::new(32, 32);
        let id = sample_identity(0, 0);
        let mut t = track(0, [0.5, 0.5], 0.5);
        t.trajectory = Trajectory {
            start: [0.5, 0.5],
            end: [3.0, 0.5],
        };
        let scene = SceneSpec {
            action: Action::Drifts,
            background_code: Background::Plain,
            tracks: vec![t],
            caption_seed: 0,
        };
        assert!(matches!(r.render_clip(&[id], &scene, 10), Err(Error::Scene(_))));
    }

    #[test]
    fn rendering_is_pure() {
        let r = Renderer::new(24, 24);
        let ids = [sample_identity(1, 1)];
        let mut rng = seed::rng(8, "t", &[]);
        let scene = sample_scene(&mut rng, Action::Spins, Background::Gradient, 1);
        let a = r.render_clip(&ids, &scene, 4).unwrap();
        let b = r.render_clip(&ids, &scene, 4).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.caption, b.caption);
    }

    #[test]
    fn iou_basics() {
        assert_eq!(iou(&[0.0, 0.0, 2.0, 2.0], &[0.0, 0.0, 2.0, 2.0]), 1.0);
        assert_eq!(iou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 2.0, 3.0, 3.0]), 0.0);
        assert!((iou(&[0.0, 0.0, 2.0, 1.0], &[1.0, 0.0, 3.0, 1.0]) - 1.0 / 3.0).abs() < 1e-12);
    }
}
