use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{null_text, DenoiserConfig};
use crate::error::{Error, Result};

/// Role of a token in the concatenated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Video,
    Ref(usize),
    Text,
}

/// Reserved position of every text token; outside the video/ref grid.
pub const TEXT_POSITION: [f64; 3] = [-1.0, -1.0, -1.0];

/// A denoiser input: latent rows for non-text tokens, text ids, and one
/// position and segment per token (non-text first, then text).
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub latents: Array2<f64>,
    pub hw_index: Vec<usize>,
    pub text_ids: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    pub segments: Vec<Segment>,
    pub n_video: usize,
    pub tau: f64,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn n_latent(&self) -> usize {
        self.latents.nrows()
    }
}

/// Build the token sequence for a noisy video (T x HW x C) and references
/// (each HW x C).
///
/// Video token `(t, h, w)` sits at position `(t, h, w)`; reference `i` at
/// `(T + i, h, w)` so its spatial coordinates line up with the video grid.
/// In channel-concat mode references become extra channels instead.
pub fn concat_latents(
    config: &DenoiserConfig,
    video: ArrayView3<f64>,
    refs: &[ArrayView2<f64>],
    text_ids: &[usize],
    tau: f64,
) -> Result<TokenSequence> {
    let (t_lat, hw, c) = video.dim();
    if t_lat != config.t_lat || hw != config.hw_lat() || c != config.channels {
        return Err(Error::Shape(format!(
            "video latent {:?} does not match config ({}, {}, {})",
            video.dim(),
            config.t_lat,
            config.hw_lat(),
            config.channels
        )));
    }
    if refs.len() > config.max_refs {
        return Err(Error::Shape(format!("{} references exceed max_refs {}", refs.len(), config.max_refs)));
    }
    for r in refs {
        if r.dim() != (hw, c) {
            return Err(Error::Shape(format!("reference latent {:?} does not match ({hw}, {c})", r.dim())));
        }
    }
    if text_ids.len() != config.text_len {
        return Err(Error::Shape(format!("{} text tokens, expected {}", text_ids.len(), config.text_len)));
    }
    let w_lat = config.w_lat;
    let grid = |j: usize| ((j / w_lat) as f64, (j % w_lat) as f64);
    let mut positions = Vec::new();
    let mut segments = Vec::new();
    let mut hw_index = Vec::new();
    let latents = if config.channel_concat {
        let mut x = Array2::zeros((t_lat * hw, config.input_channels()));
        for t in 0..t_lat {
            for j in 0..hw {
                let row = t * hw + j;
                x.slice_mut(s![row, 0..c]).assign(&video.slice(s![t, j, ..]));
                for (i, r) in refs.iter().enumerate() {
                    x.slice_mut(s![row, (i + 1) * c..(i + 2) * c]).assign(&r.row(j));
                }
                let (h, w) = grid(j);
                positions.push([t as f64, h, w]);
                segments.push(Segment::Video);
                hw_index.push(j);
            }
        }
        x
    } else {
        let mut x = Array2::zeros(((t_lat + refs.len()) * hw, c));
        for t in 0..t_lat {
            x.slice_mut(s![t * hw..(t + 1) * hw, ..]).assign(&video.slice(s![t, .., ..]));
            for j in 0..hw {
                let (h, w) = grid(j);
                positions.push([t as f64, h, w]);
                segments.push(Segment::Video);
                hw_index.push(j);
            }
        }
        for (i, r) in refs.iter().enumerate() {
            let o = (t_lat + i) * hw;
            x.slice_mut(s![o..o + hw, ..]).assign(r);
            for j in 0..hw {
                let (h, w) = grid(j);
                positions.push([(t_lat + i) as f64, h, w]);
                segments.push(Segment::Ref(i));
                hw_index.push(j);
            }
        }
        x
    };
    for _ in text_ids {
        positions.push(TEXT_POSITION);
        segments.push(Segment::Text);
    }
    Ok(TokenSequence {
        latents,
        hw_index,
        text_ids: text_ids.to_vec(),
        positions,
        segments,
        n_video: t_lat * hw,
        tau,
    })
}

/// Conditioning for one example, in scaled latent space.
#[derive(Debug, Clone)]
pub struct ConditioningBundle {
    pub refs: Vec<Array2<f64>>,
    pub text_ids: Vec<usize>,
    pub text_dropped: bool,
    pub image_dropped: bool,
}

impl ConditioningBundle {
    pub fn new(refs: Vec<Array2<f64>>, text_ids: Vec<usize>) -> Self {
        ConditioningBundle { refs, text_ids, text_dropped: false, image_dropped: false }
    }

    pub fn ref_views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.refs.iter().map(|r| r.view()).collect()
    }
}

/// Zero the reference latents; their tokens and positions are kept.
pub fn drop_image_condition(bundle: &ConditioningBundle) -> ConditioningBundle {
    ConditioningBundle {
        refs: bundle.refs.iter().map(|r| Array2::zeros(r.raw_dim())).collect(),
        text_ids: bundle.text_ids.clone(),
        text_dropped: bundle.text_dropped,
        image_dropped: true,
    }
}

/// Replace the caption with the null condition.
pub fn drop_text_condition(bundle: &ConditioningBundle) -> ConditioningBundle {
    ConditioningBundle {
        refs: bundle.refs.clone(),
        text_ids: null_text(bundle.text_ids.len()),
        text_dropped: true,
        image_dropped: bundle.image_dropped,
    }
}

/// Add `N(0, scale^2)` noise to every reference latent.
pub fn augment_references<R: Rng>(bundle: &mut ConditioningBundle, scale: f64, rng: &mut R) {
    if scale <= 0.0 {
        return;
    }
    for r in &mut bundle.refs {
        r.mapv_inplace(|v| v + scale * rng.sample::<f64, _>(StandardNormal));
    }
}

/// Background-zeroed, aspect-preserving fit of a reference crop into a
/// `th x tw` canvas, padding the short axis symmetrically.
///
/// Returns the image and the resampled mask.
pub fn preprocess_reference(
    image: ArrayView3<f64>,
    mask: ArrayView2<bool>,
    th: usize,
    tw: usize,
) -> Result<(Array3<f64>, Array2<bool>)> {
    let (h, w, ch) = image.dim();
    if mask.dim() != (h, w) {
        return Err(Error::Shape(format!("mask {:?} does not match image {:?}", mask.dim(), (h, w))));
    }
    if h == 0 || w == 0 || th == 0 || tw == 0 {
        return Err(Error::Shape("empty reference image or target".into()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::NoDetection("reference mask is empty".into()));
    }
    let scale = (th as f64 / h as f64).min(tw as f64 / w as f64);
    let nh = ((h as f64 * scale).round() as usize).clamp(1, th);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, tw);
    let (oy, ox) = ((th - nh) / 2, (tw - nw) / 2);
    let mut out = Array3::zeros((th, tw, ch));
    let mut out_mask = Array2::from_elem((th, tw), false);
    let (sy, sx) = (h as f64 / nh as f64, w as f64 / nw as f64);
    let lerp_idx = |v: f64, n: usize| -> (usize, usize, f64) {
        let v = v.clamp(0.0, (n - 1) as f64);
        let i0 = v.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, v - i0 as f64)
    };
    for y in 0..nh {
        let (y0, y1, fy) = lerp_idx((y as f64 + 0.5) * sy - 0.5, h);
        for x in 0..nw {
            let (x0, x1, fx) = lerp_idx((x as f64 + 0.5) * sx - 0.5, w);
            let taps = [(y0, x0, (1.0 - fy) * (1.0 - fx)), (y0, x1, (1.0 - fy) * fx), (y1, x0, fy * (1.0 - fx)), (y1, x1, fy * fx)];
            let mut m = 0.0;
            for &(yy, xx, wt) in &taps {
                if mask[[yy, xx]] {
                    m += wt;
                    for k in 0..ch {
                        out[[oy + y, ox + x, k]] += wt * image[[yy, xx, k]];
                    }
                }
            }
            out_mask[[oy + y, ox + x]] = m >= 0.5;
        }
    }
    Ok((out, out_mask))
}
