use ndarray::{s, Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::denoiser::Denoiser;
use super::sequence::{concat_latents, drop_image_condition, drop_text_condition, ConditioningBundle, Segment};
use crate::error::{Error, Result};

/// One training pair in scaled latent space.
#[derive(Debug, Clone)]
pub struct TrainExample {
    /// Clean video latent, T x HW x C.
    pub video: Array3<f64>,
    pub cond: ConditioningBundle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropRates {
    pub text: f64,
    pub image: f64,
}

impl Default for DropRates {
    fn default() -> Self {
        DropRates { text: 0.1, image: 0.1 }
    }
}

/// Every random choice made for one example.
#[derive(Debug, Clone)]
pub struct LossDraw {
    pub tau: f64,
    pub noise: Array3<f64>,
    pub drop_text: bool,
    pub drop_image: bool,
    pub ref_noise: Vec<Array2<f64>>,
}

impl LossDraw {
    pub fn sample<R: Rng>(ex: &TrainExample, rates: DropRates, ref_noise_scale: f64, rng: &mut R) -> LossDraw {
        let tau = rng.gen::<f64>();
        let noise = Array3::from_shape_simple_fn(ex.video.raw_dim(), || rng.sample(StandardNormal));
        let drop_text = rng.gen::<f64>() < rates.text;
        let drop_image = rng.gen::<f64>() < rates.image;
        let ref_noise = ex
            .cond
            .refs
            .iter()
            .map(|r| {
                if ref_noise_scale > 0.0 {
                    Array2::from_shape_simple_fn(r.raw_dim(), || ref_noise_scale * rng.sample::<f64, _>(StandardNormal))
                } else {
                    Array2::zeros(r.raw_dim())
                }
            })
            .collect();
        LossDraw { tau, noise, drop_text, drop_image, ref_noise }
    }
}

/// Mean squared error over video tokens only, with its gradient.
pub fn sequence_mse(pred: &Array2<f64>, target: &Array2<f64>, segments: &[Segment]) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() || pred.nrows() > segments.len() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    let rows: Vec<usize> = (0..pred.nrows()).filter(|&i| segments[i] == Segment::Video).collect();
    if rows.is_empty() {
        return Err(Error::Empty("no video tokens in sequence".into()));
    }
    let n = (rows.len() * pred.ncols()) as f64;
    let mut grad = Array2::zeros(pred.raw_dim());
    let mut loss = 0.0;
    for &i in &rows {
        let diff = &pred.row(i) - &target.row(i);
        loss += diff.dot(&diff);
        grad.row_mut(i).assign(&(diff * (2.0 / n)));
    }
    Ok((loss / n, grad))
}

pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to the undropped reference latents.
    pub d_refs: Vec<Array2<f64>>,
}

/// Rectified-flow velocity loss for one example under fixed draws.
///
/// `x_tau = (1 - tau) x0 + tau eps`, target `eps - x0`. Gradients are
/// accumulated into `grads` scaled by `weight`.
pub fn loss_with_draw(
    model: &Denoiser,
    ex: &TrainExample,
    draw: &LossDraw,
    weight: f64,
    grads: Option<&mut [f64]>,
) -> Result<LossOutput> {
    let mut cond = ex.cond.clone();
    for (r, n) in cond.refs.iter_mut().zip(&draw.ref_noise) {
        *r += n;
    }
    if draw.drop_image {
        cond = drop_image_condition(&cond);
    }
    if draw.drop_text {
        cond = drop_text_condition(&cond);
    }
    let tau = draw.tau;
    let x_t = &ex.video * (1.0 - tau) + &draw.noise * tau;
    let v = &draw.noise - &ex.video;
    let seq = concat_latents(&model.config, x_t.view(), &cond.ref_views(), &cond.text_ids, tau)?;
    let (pred, cache) = model.forward_cached(&seq)?;
    let (t, hw, c) = v.dim();
    let mut target = pred.clone();
    target
        .slice_mut(s![..t * hw, ..])
        .assign(&v.view().into_shape_with_order((t * hw, c)).map_err(|e| Error::Shape(e.to_string()))?);
    let (loss, d_pred) = sequence_mse(&pred, &target, &seq.segments)?;
    let mut d_refs: Vec<Array2<f64>> = ex.cond.refs.iter().map(|r| Array2::zeros(r.raw_dim())).collect();
    if let Some(g) = grads {
        let d_lat = model.backward(&seq, &cache, &(d_pred * weight), g);
        if !draw.drop_image {
            for (i, dr) in d_refs.iter_mut().enumerate() {
                if model.config.channel_concat {
                    for tt in 0..t {
                        *dr += &d_lat.slice(s![tt * hw..(tt + 1) * hw, (i + 1) * c..(i + 2) * c]);
                    }
                } else {
                    let o = (t + i) * hw;
                    dr.assign(&d_lat.slice(s![o..o + hw, ..]));
                }
            }
        }
    }
    Ok(LossOutput { loss, d_refs })
}

/// Mean loss over a batch with fresh draws; gradients of the mean are
/// accumulated into `grads`.
pub fn training_loss<R: Rng>(
    model: &Denoiser,
    batch: &[TrainExample],
    rates: DropRates,
    ref_noise_scale: f64,
    rng: &mut R,
    mut grads: Option<&mut [f64]>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("empty training batch".into()));
    }
    let w = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let draw = LossDraw::sample(ex, rates, ref_noise_scale, rng);
        total += loss_with_draw(model, ex, &draw, w, grads.as_deref_mut())?.loss * w;
    }
    Ok(total)
}
