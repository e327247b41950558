//! Proxy embedders: an identity embedder that is invariant to scene factors
//! (up to controllable noise) and a holistic embedder that is not.

mod calibrate;
mod detect;

pub use calibrate::{calibrate, default_grid, BandCoverage, CalibrationReport};
pub use detect::{components, foreground_mask, Detection, Detector, SubjectDecode};

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, ArrayView3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::synth::identity::{Hue, ShapeCode};
use crate::synth::scene::Background;

/// Length of the categorical identity code before rotation.
pub const IDENTITY_CODE_DIM: usize = 4 + 3 * 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    IdentityOracle,
    IdentityNoisyA,
    IdentityNoisyB,
    Holistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub noise_scale: f64,
    pub seed: u64,
    pub dim: usize,
}

/// Seeds of the two noisy "face models". They differ in nothing else.
pub const NOISY_A_SEED: u64 = 0xA11CE;
pub const NOISY_B_SEED: u64 = 0xB0B;

impl EmbedderConfig {
    pub fn oracle() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::IdentityOracle,
            noise_scale: 0.0,
            seed: 0,
            dim: 32,
        }
    }

    pub fn noisy_a(noise_scale: f64) -> Self {
        EmbedderConfig {
            kind: EmbedderKind::IdentityNoisyA,
            noise_scale,
            seed: NOISY_A_SEED,
            dim: 32,
        }
    }

    pub fn noisy_b(noise_scale: f64) -> Self {
        EmbedderConfig {
            kind: EmbedderKind::IdentityNoisyB,
            noise_scale,
            seed: NOISY_B_SEED,
            dim: 32,
        }
    }

    pub fn holistic() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Holistic,
            noise_scale: 0.0,
            seed: 0x401157,
            dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale must be finite and >= 0, got {}", self.noise_scale)));
        }
        if self.kind == EmbedderKind::IdentityOracle && self.noise_scale != 0.0 {
            return Err(Error::Config("identity_oracle requires noise_scale == 0".into()));
        }
        let min_dim = match self.kind {
            EmbedderKind::Holistic => HOLISTIC_FEATURES,
            _ => IDENTITY_CODE_DIM,
        };
        if self.dim < min_dim {
            return Err(Error::Config(format!("embedding dim must be >= {min_dim}, got {}", self.dim)));
        }
        Ok(())
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity. Inputs need not be normalized but must be nonzero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Seeded Haar-random orthogonal matrix.
fn random_orthogonal(n: usize, seed_value: u64, tag: &str) -> DMatrix<f64> {
    let mut rng = seed::rng(seed_value, tag, &[n as u64]);
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

fn centered_one_hot(out: &mut [f64], n: usize, idx: Option<usize>) {
    let Some(i) = idx else {
        return;
    };
    let scale = 1.0 / (1.0 - 1.0 / n as f64).sqrt();
    for k in 0..n {
        let v = if k == i { 1.0 } else { 0.0 };
        out[k] = (v - 1.0 / n as f64) * scale;
    }
}

/// Block code of the decoded identity: centered one-hots for shape and the
/// three palette slots, each of unit norm. Unreadable slots stay zero.
pub fn identity_code(d: &SubjectDecode) -> [f64; IDENTITY_CODE_DIM] {
    let mut out = [0.0; IDENTITY_CODE_DIM];
    centered_one_hot(&mut out[0..4], 4, Some(d.shape.index()));
    for slot in 0..3 {
        let o = 4 + slot * 6;
        centered_one_hot(&mut out[o..o + 6], 6, d.hues[slot].map(Hue::index));
    }
    out
}

fn key_tag(d: &SubjectDecode) -> Vec<u64> {
    let mut v = vec![d.shape.index() as u64];
    v.extend(d.hues.iter().map(|h| h.map_or(99, |h| h.index() as u64)));
    v
}

/// Scene and rendering-quality features the noisy embedders leak.
const SCENE_FEATURES: usize = 3 + 9;

fn scene_features(d: &SubjectDecode, palette: [Option<Hue>; 3]) -> [f64; SCENE_FEATURES] {
    let (s, c) = d.pose_deg.to_radians().sin_cos();
    let mut f = [0.0; SCENE_FEATURES];
    f[0] = c;
    f[1] = s;
    f[2] = 0.8 * (d.expression - 0.5);
    for slot in 0..3 {
        if let Some(h) = palette[slot] {
            let t = h.rgb();
            for ch in 0..3 {
                f[3 + slot * 3 + ch] = 2.0 * (d.mean_colors[slot][ch] - t[ch]);
            }
        }
    }
    f
}

/// Identity embedder (oracle or noisy).
///
/// The noisy variants add `noise_scale * W_key * psi` to the oracle vector,
/// where `psi` holds pose, expression and color residuals and `W_key` is a
/// Gaussian map seeded by the embedder seed and the decoded key. Different
/// identities therefore get uncorrelated perturbations while one identity's
/// perturbation varies smoothly with the scene.
#[derive(Debug, Clone)]
pub struct IdentityEmbedder {
    pub config: EmbedderConfig,
    rotation: DMatrix<f64>,
    pub detector: Detector,
}

impl IdentityEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        if config.kind == EmbedderKind::Holistic {
            return Err(Error::Config("holistic config passed to identity embedder".into()));
        }
        // the rotation is shared by every identity embedder so A and B agree
        // on the oracle part and differ only through their noise seeds
        Ok(IdentityEmbedder {
            config,
            rotation: random_orthogonal(config.dim, 0x1D, "identity-rotation"),
            detector: Detector::default(),
        })
    }

    pub fn with_noise(&self, noise_scale: f64) -> Result<Self> {
        let mut c = self.config;
        c.noise_scale = noise_scale;
        IdentityEmbedder::new(c)
    }

    /// Embed an already decoded subject.
    pub fn embed_decode(&self, d: &SubjectDecode) -> Vec<f64> {
        let dim = self.config.dim;
        let code = identity_code(d);
        let mut padded = vec![0.0; dim];
        let cn = norm(&code);
        for (p, c) in padded.iter_mut().zip(code.iter()) {
            *p = c / cn;
        }
        let mut v: Vec<f64> = (0..dim)
            .map(|i| (0..dim).map(|j| self.rotation[(i, j)] * padded[j]).sum())
            .collect();
        if self.config.noise_scale > 0.0 {
            let psi = scene_features(d, d.hues);
            let mut rng = seed::rng(self.config.seed, "identity-noise", &key_tag(d));
            let sd = 1.0 / (dim as f64).sqrt();
            for vi in v.iter_mut() {
                let mut acc = 0.0;
                for p in psi.iter() {
                    let w: f64 = rng.sample(StandardNormal);
                    acc += w * sd * p;
                }
                *vi += self.config.noise_scale * acc;
            }
        }
        normalize(&v).expect("shape block is always nonzero")
    }

    /// Embed the largest subject in an image or crop.
    pub fn embed(&self, img: ArrayView3<f64>) -> Result<Vec<f64>> {
        let d = self
            .detector
            .detect_primary(img)
            .ok_or_else(|| Error::NoDetection("identity embedder found no subject".into()))?;
        Ok(self.embed_decode(&d.decode))
    }
}

/// Background classes seen by the holistic embedder; index 4 is the masked
/// black backdrop of preprocessed references.
pub const BACKGROUND_CLASSES: usize = 5;

const HOLISTIC_FEATURES: usize = IDENTITY_CODE_DIM + 2 + 2 + BACKGROUND_CLASSES + 9;

/// Classify the backdrop from pixels not covered by any subject.
pub fn estimate_background(img: ArrayView3<f64>, subject_mask: &Array2<bool>) -> usize {
    let (h, w, _) = img.dim();
    let cell_w = (w / 4).max(1);
    let cell_h = (h / 4).max(1);
    let mut g = Vec::new();
    let mut t = [Vec::new(), Vec::new(), Vec::new()];
    for y in 0..h {
        for x in 0..w {
            let near = (y.saturating_sub(1)..(y + 2).min(h))
                .any(|yy| (x.saturating_sub(1)..(x + 2).min(w)).any(|xx| subject_mask[[yy, xx]]));
            if near {
                continue;
            }
            g.push((img[[y, x, 0]] + img[[y, x, 1]] + img[[y, x, 2]]) / 3.0);
            t[0].push(((x / cell_w) % 2) as f64);
            t[1].push(((x / cell_w + y / cell_h) % 2) as f64);
            t[2].push(y as f64);
        }
    }
    if g.is_empty() {
        return 4;
    }
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if mean < 0.06 && var.sqrt() < 0.03 {
        return 4;
    }
    let corr = |tv: &[f64]| {
        let tm = tv.iter().sum::<f64>() / n;
        let tvv = tv.iter().map(|v| (v - tm).powi(2)).sum::<f64>() / n;
        if tvv <= 0.0 || var <= 1e-12 {
            return 0.0;
        }
        let cov = g.iter().zip(tv).map(|(a, b)| (a - mean) * (b - tm)).sum::<f64>() / n;
        (cov / (var * tvv).sqrt()).abs()
    };
    let scores = [corr(&t[0]), corr(&t[1]), corr(&t[2])];
    let (best, score) = scores
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    if score < 0.6 {
        Background::Plain.index()
    } else {
        [Background::Striped, Background::Checkered, Background::Gradient][best].index()
    }
}

/// Holistic embedder: a fixed random projection of identity code, pose,
/// expression, backdrop class and raw subject colors.
#[derive(Debug, Clone)]
pub struct HolisticEmbedder {
    pub config: EmbedderConfig,
    projection: DMatrix<f64>,
    pub detector: Detector,
}

/// Expression is mapped onto an arc so the feature distance grows
/// monotonically with the expression gap over [0, 1].
const EXPRESSION_ARC: f64 = 2.0 * std::f64::consts::PI / 3.0;

impl HolisticEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        if config.kind != EmbedderKind::Holistic {
            return Err(Error::Config("identity config passed to holistic embedder".into()));
        }
        Ok(HolisticEmbedder {
            config,
            projection: random_orthogonal(config.dim, config.seed, "holistic"),
            detector: Detector::default(),
        })
    }

    pub fn features(&self, img: ArrayView3<f64>) -> Vec<f64> {
        let mut f = vec![0.0; HOLISTIC_FEATURES];
        let mask = foreground_mask(&img, self.detector.saturation_threshold);
        let bg = estimate_background(img, &mask);
        if let Some(d) = self.detector.detect_primary(img) {
            let d = d.decode;
            let code = identity_code(&d);
            let cn = norm(&code);
            for i in 0..IDENTITY_CODE_DIM {
                f[i] = code[i] / cn;
            }
            let o = IDENTITY_CODE_DIM;
            let (s, c) = d.pose_deg.to_radians().sin_cos();
            f[o] = 0.8 * c;
            f[o + 1] = 0.8 * s;
            let (es, ec) = (d.expression * EXPRESSION_ARC).sin_cos();
            f[o + 2] = 0.8 * ec;
            f[o + 3] = 0.8 * es;
            for slot in 0..3 {
                for ch in 0..3 {
                    f[o + 4 + BACKGROUND_CLASSES + slot * 3 + ch] = 0.3 * (d.mean_colors[slot][ch] - 0.5);
                }
            }
        }
        f[IDENTITY_CODE_DIM + 4 + bg] = 0.5;
        f
    }

    pub fn embed(&self, img: ArrayView3<f64>) -> Vec<f64> {
        let f = self.features(img);
        let dim = self.config.dim;
        let v: Vec<f64> = (0..dim)
            .map(|i| (0..HOLISTIC_FEATURES).map(|j| self.projection[(i, j)] * f[j]).sum())
            .collect();
        normalize(&v).expect("backdrop block is always nonzero")
    }
}

/// Crop a square window around `bbox` scaled by `margin`, keep only the
/// largest saturated component inside it and zero everything else.
/// Returns the crop and its foreground mask; pixels outside the frame are 0.
pub fn crop_subject(img: ArrayView3<f64>, bbox: &[f64; 4], margin: f64) -> Result<(Array3<f64>, Array2<bool>)> {
    let (h, w, _) = img.dim();
    let cx = (bbox[0] + bbox[2]) / 2.0;
    let cy = (bbox[1] + bbox[3]) / 2.0;
    let side = ((bbox[2] - bbox[0]).max(bbox[3] - bbox[1]) * margin).round().max(4.0) as i64;
    let x0 = (cx - side as f64 / 2.0).round() as i64;
    let y0 = (cy - side as f64 / 2.0).round() as i64;
    let n = side as usize;
    let mut crop = Array3::<f64>::zeros((n, n, 3));
    for yy in 0..n {
        for xx in 0..n {
            let (sy, sx) = (y0 + yy as i64, x0 + xx as i64);
            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                crop.slice_mut(s![yy, xx, ..])
                    .assign(&img.slice(s![sy as usize, sx as usize, ..]));
            }
        }
    }
    let sat = foreground_mask(&crop.view(), Detector::default().saturation_threshold);
    let comps = components(&sat);
    let largest = comps
        .iter()
        .max_by_key(|c| c.len())
        .ok_or_else(|| Error::NoDetection("crop holds no subject pixels".into()))?;
    let mut mask = Array2::from_elem((n, n), false);
    for &(y, x) in largest {
        mask[[y, x]] = true;
    }
    for yy in 0..n {
        for xx in 0..n {
            if !mask[[yy, xx]] {
                crop.slice_mut(s![yy, xx, ..]).fill(0.0);
            }
        }
    }
    Ok((crop, mask))
}

/// Shape of a decode, used by reports.
pub fn shape_word(s: ShapeCode) -> &'static str {
    match s {
        ShapeCode::Disc => "disc",
        ShapeCode::Square => "square",
        ShapeCode::Triangle => "triangle",
        ShapeCode::Cross => "cross",
    }
}
