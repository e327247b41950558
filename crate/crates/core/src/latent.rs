//! Shared latent space for video frames and reference images.
//!
//! Frames are cut into non-overlapping `p×p` patches; each patch (minus
//! mid-gray) is mapped to `C` channels by a fixed linear transform. Video
//! latents and reference latents go through the same map, so a reference
//! token and a video token at the same grid cell live in the same space.

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// What a reference latent depicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    IdentityFace,
    Clothing,
    Background,
}

/// `(T_lat, HW_lat, C)` latent grid of a video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLatent {
    pub grid: Array3<f64>,
    pub h_lat: usize,
    pub w_lat: usize,
}

impl VideoLatent {
    pub fn t_lat(&self) -> usize {
        self.grid.dim().0
    }
    pub fn hw_lat(&self) -> usize {
        self.grid.dim().1
    }
    pub fn channels(&self) -> usize {
        self.grid.dim().2
    }
}

/// `(HW_lat, C)` latent grid of one reference image (a single latent frame).
#[derive(Debug, Clone, PartialEq)]
pub struct RefLatent {
    pub grid: Array2<f64>,
    pub h_lat: usize,
    pub w_lat: usize,
    pub source_kind: SourceKind,
}

impl RefLatent {
    pub fn hw_lat(&self) -> usize {
        self.grid.dim().0
    }
    pub fn channels(&self) -> usize {
        self.grid.dim().1
    }

    pub fn zeros_like(&self) -> RefLatent {
        RefLatent {
            grid: Array2::zeros(self.grid.raw_dim()),
            ..self.clone()
        }
    }
}

/// Gather `p×p×3` patches (row-major within the patch) into rows of a
/// `(HW_lat, 3p²)` matrix, shifted so mid-gray maps to zero.
fn patches(frame: ArrayView3<f64>, p: usize) -> Result<(Array2<f64>, usize, usize)> {
    let (h, w, c) = frame.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 color channels, got {c}")));
    }
    if h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!(
            "frame {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (hl, wl) = (h / p, w / p);
    let mut out = Array2::zeros((hl * wl, 3 * p * p));
    for i in 0..hl {
        for j in 0..wl {
            let mut row = out.row_mut(i * wl + j);
            let mut k = 0;
            for y in 0..p {
                for x in 0..p {
                    for ch in 0..3 {
                        row[k] = frame[[i * p + y, j * p + x, ch]] - 0.5;
                        k += 1;
                    }
                }
            }
        }
    }
    Ok((out, hl, wl))
}

fn unpatch(rows: ArrayView2<f64>, p: usize, hl: usize, wl: usize) -> Array3<f64> {
    let mut img = Array3::zeros((hl * p, wl * p, 3));
    for i in 0..hl {
        for j in 0..wl {
            let row = rows.row(i * wl + j);
            let mut k = 0;
            for y in 0..p {
                for x in 0..p {
                    for ch in 0..3 {
                        img[[i * p + y, j * p + x, ch]] = row[k] + 0.5;
                        k += 1;
                    }
                }
            }
        }
    }
    img
}

/// A patch codec: linear encoder `z = (x - 0.5) · E` and decoder
/// `x = z · D + 0.5` applied per patch.
pub trait Codec {
    fn patch(&self) -> usize;
    fn channels(&self) -> usize;
    fn temporal_stride(&self) -> usize {
        1
    }
    /// `(3p², C)` encoder matrix.
    fn encoder(&self) -> ArrayView2<'_, f64>;
    /// `(C, 3p²)` decoder matrix.
    fn decoder(&self) -> ArrayView2<'_, f64>;

    fn encode_frame(&self, frame: ArrayView3<f64>) -> Result<(Array2<f64>, usize, usize)> {
        let (rows, hl, wl) = patches(frame, self.patch())?;
        Ok((rows.dot(&self.encoder()), hl, wl))
    }

    fn encode_image(&self, image: ArrayView3<f64>, kind: SourceKind) -> Result<RefLatent> {
        let (grid, h_lat, w_lat) = self.encode_frame(image)?;
        Ok(RefLatent {
            grid,
            h_lat,
            w_lat,
            source_kind: kind,
        })
    }

    fn encode_video(&self, frames: ArrayView4<f64>) -> Result<VideoLatent> {
        let n = frames.dim().0;
        let stride = self.temporal_stride();
        if n == 0 || n % stride != 0 {
            return Err(Error::Shape(format!(
                "{n} frames not divisible by temporal stride {stride}"
            )));
        }
        let t_lat = n / stride;
        let mut grid: Option<Array3<f64>> = None;
        let (mut hl, mut wl) = (0, 0);
        for t in 0..t_lat {
            let group = frames.slice(s![t * stride..(t + 1) * stride, .., .., ..]);
            let frame = group.mean_axis(Axis(0)).expect("non-empty group");
            let (z, h_lat, w_lat) = self.encode_frame(frame.view())?;
            let g = grid.get_or_insert_with(|| Array3::zeros((t_lat, z.nrows(), z.ncols())));
            g.slice_mut(s![t, .., ..]).assign(&z);
            hl = h_lat;
            wl = w_lat;
        }
        Ok(VideoLatent {
            grid: grid.expect("t_lat >= 1"),
            h_lat: hl,
            w_lat: wl,
        })
    }

    /// Decode a latent grid back to pixels without clamping.
    fn decode_unclamped(&self, grid: ArrayView3<f64>, h_lat: usize, w_lat: usize) -> Array4<f64> {
        let (t, _, _) = grid.dim();
        let p = self.patch();
        let stride = self.temporal_stride();
        let mut out = Array4::zeros((t * stride, h_lat * p, w_lat * p, 3));
        for ti in 0..t {
            let rows = grid.slice(s![ti, .., ..]).dot(&self.decoder());
            let img = unpatch(rows.view(), p, h_lat, w_lat);
            for k in 0..stride {
                out.slice_mut(s![ti * stride + k, .., .., ..]).assign(&img);
            }
        }
        out
    }

    /// Decode to frames in [0, 1].
    fn decode(&self, latent: &VideoLatent) -> Array4<f64> {
        self.decode_unclamped(latent.grid.view(), latent.h_lat, latent.w_lat)
            .mapv(|v| v.clamp(0.0, 1.0))
    }

    fn decode_ref(&self, latent: &RefLatent) -> Array3<f64> {
        let g = latent.grid.view().insert_axis(Axis(0));
        self.decode_unclamped(g, latent.h_lat, latent.w_lat)
            .index_axis_move(Axis(0), 0)
            .mapv(|v| v.clamp(0.0, 1.0))
    }
}

/// Seeded orthogonal patch transform with `C = 3p²` channels. Exactly
/// invertible and norm-preserving.
#[derive(Debug, Clone)]
pub struct OrthoCodec {
    pub patch: usize,
    pub seed: u64,
    enc: Array2<f64>,
    dec: Array2<f64>,
}

impl OrthoCodec {
    pub fn new(patch: usize, seed: u64) -> Self {
        let n = 3 * patch * patch;
        let mut rng = seed::rng(seed, "ortho-codec", &[patch as u64]);
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let qr = g.qr();
        let q = qr.q();
        // Sign-fix columns so the result is a deterministic function of the
        // Gaussian draw, independent of the QR routine's sign convention.
        let r = qr.r();
        let enc = Array2::from_shape_fn((n, n), |(i, j)| {
            let sgn = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            q[(i, j)] * sgn
        });
        let dec = enc.t().to_owned();
        OrthoCodec {
            patch,
            seed,
            enc,
            dec,
        }
    }
}

impl Codec for OrthoCodec {
    fn patch(&self) -> usize {
        self.patch
    }
    fn channels(&self) -> usize {
        3 * self.patch * self.patch
    }
    fn encoder(&self) -> ArrayView2<'_, f64> {
        self.enc.view()
    }
    fn decoder(&self) -> ArrayView2<'_, f64> {
        self.dec.view()
    }
}

/// Lossy patch codec fitted to data: the top-`C` principal directions of
/// mid-gray-centered patches. Optional alternative to [`OrthoCodec`] for
/// experiments with a compressed latent space.
#[derive(Debug, Clone)]
pub struct PcaCodec {
    pub patch: usize,
    enc: Array2<f64>,
    dec: Array2<f64>,
    pub explained: f64,
}

impl PcaCodec {
    /// Fit on a stack of frames `(N, H, W, 3)`.
    pub fn fit(frames: ArrayView4<f64>, patch: usize, channels: usize) -> Result<Self> {
        let d = 3 * patch * patch;
        if channels == 0 || channels > d {
            return Err(Error::Config(format!(
                "PCA channels must lie in 1..={d}, got {channels}"
            )));
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut count = 0usize;
        for f in frames.outer_iter() {
            let (rows, _, _) = patches(f, patch)?;
            let m = DMatrix::from_row_slice(rows.nrows(), d, rows.as_slice().expect("contiguous"));
            cov += m.transpose() * &m;
            count += rows.nrows();
        }
        if count == 0 {
            return Err(Error::Empty("no frames to fit codec on".into()));
        }
        cov /= count as f64;
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let total: f64 = eig.eigenvalues.iter().sum();
        let kept: f64 = order[..channels].iter().map(|&i| eig.eigenvalues[i]).sum();
        let enc = Array2::from_shape_fn((d, channels), |(i, j)| {
            eig.eigenvectors[(i, order[j])]
        });
        let dec = enc.t().to_owned();
        Ok(PcaCodec {
            patch,
            enc,
            dec,
            explained: if total > 0.0 { kept / total } else { 1.0 },
        })
    }
}

impl Codec for PcaCodec {
    fn patch(&self) -> usize {
        self.patch
    }
    fn channels(&self) -> usize {
        self.enc.ncols()
    }
    fn encoder(&self) -> ArrayView2<'_, f64> {
        self.enc.view()
    }
    fn decoder(&self) -> ArrayView2<'_, f64> {
        self.dec.view()
    }
}

/// An orthogonal codec that averages groups of `stride` frames in time.
/// Decoding repeats each latent frame `stride` times.
#[derive(Debug, Clone)]
pub struct StridedCodec {
    pub inner: OrthoCodec,
    pub stride: usize,
}

impl Codec for StridedCodec {
    fn patch(&self) -> usize {
        self.inner.patch
    }
    fn channels(&self) -> usize {
        self.inner.channels()
    }
    fn temporal_stride(&self) -> usize {
        self.stride
    }
    fn encoder(&self) -> ArrayView2<'_, f64> {
        self.inner.encoder()
    }
    fn decoder(&self) -> ArrayView2<'_, f64> {
        self.inner.decoder()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, CorpusConfig};
    use rand::Rng;

    fn random_frames(n: usize, h: usize, w: usize, seed: u64) -> Array4<f64> {
        let mut rng = seed::rng(seed, "test-frames", &[]);
        Array4::from_shape_fn((n, h, w, 3), |_| rng.gen_range(0.0..1.0))
    }

    fn max_abs(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
        (a - b).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v))
    }

    #[test]
    fn video_shape_arithmetic() {
        let codec = OrthoCodec::new(8, 0);
        let v = codec.encode_video(random_frames(17, 64, 64, 1).view()).unwrap();
        assert_eq!(v.grid.dim(), (17, 64, 192));
        assert_eq!((v.h_lat, v.w_lat), (8, 8));
    }

    #[test]
    fn orthogonal_round_trip() {
        let codec = OrthoCodec::new(4, 3);
        let x = random_frames(3, 16, 24, 2);
        let z = codec.encode_video(x.view()).unwrap();
        assert!(max_abs(&codec.decode(&z), &x) <= 1e-5);
    }

    #[test]
    fn isometry() {
        let codec = OrthoCodec::new(4, 3);
        let x = random_frames(2, 16, 16, 5);
        let z = codec.encode_video(x.view()).unwrap();
        let nx = (&x - 0.5).mapv(|v| v * v).sum().sqrt();
        let nz = z.grid.mapv(|v| v * v).sum().sqrt();
        assert!((nx - nz).abs() <= 1e-6);
    }

    #[test]
    fn single_frame_video_equals_image_bits() {
        let codec = OrthoCodec::new(4, 9);
        let x = random_frames(4, 16, 16, 6);
        let video = codec.encode_video(x.view()).unwrap();
        for t in 0..4 {
            let img = codec
                .encode_image(x.slice(s![t, .., .., ..]), SourceKind::IdentityFace)
                .unwrap();
            assert_eq!(img.grid, video.grid.slice(s![t, .., ..]));
        }
        let one = x.slice(s![0..1, .., .., ..]);
        let v1 = codec.encode_video(one).unwrap();
        let i1 = codec
            .encode_image(x.slice(s![0, .., .., ..]), SourceKind::IdentityFace)
            .unwrap();
        assert_eq!(v1.grid.index_axis(Axis(0), 0), i1.grid);
    }

    #[test]
    fn zero_grid_decodes_to_mid_gray() {
        let codec = OrthoCodec::new(4, 0);
        let z = VideoLatent {
            grid: Array3::zeros((2, 4, 48)),
            h_lat: 2,
            w_lat: 2,
        };
        assert!(codec.decode(&z).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn decode_is_affine_linear() {
        let codec = OrthoCodec::new(4, 0);
        let mut rng = seed::rng(0, "lin", &[]);
        let a = Array3::from_shape_fn((2, 4, 48), |_| rng.gen_range(-1.0..1.0));
        let b = Array3::from_shape_fn((2, 4, 48), |_| rng.gen_range(-1.0..1.0));
        // the decoder adds 0.5 once, so compare decode(a+b) with
        // decode(a) + decode(b) - 0.5
        let dab = codec.decode_unclamped((&a + &b).view(), 2, 2);
        let da = codec.decode_unclamped(a.view(), 2, 2);
        let db = codec.decode_unclamped(b.view(), 2, 2);
        assert!(max_abs(&dab, &(&da + &db - 0.5)) <= 1e-6);
    }

    #[test]
    fn rejects_bad_shapes() {
        let codec = OrthoCodec::new(8, 0);
        let x = random_frames(2, 20, 16, 0);
        assert!(matches!(codec.encode_video(x.view()), Err(Error::Shape(_))));
        let strided = StridedCodec {
            inner: OrthoCodec::new(4, 0),
            stride: 2,
        };
        let y = random_frames(3, 16, 16, 0);
        assert!(matches!(strided.encode_video(y.view()), Err(Error::Shape(_))));
        let z = strided.encode_video(random_frames(4, 16, 16, 0).view()).unwrap();
        assert_eq!(z.t_lat(), 2);
    }

    #[test]
    fn pca_codec_round_trip_within_tolerance() {
        let corpus = generate_corpus(&CorpusConfig {
            n_identities: 8,
            clips_per_identity: 2,
            n_frames: 3,
            h: 32,
            w: 32,
            ..CorpusConfig::default()
        })
        .unwrap();
        let frames: Vec<ArrayView3<f64>> = corpus
            .clips
            .iter()
            .flat_map(|c| c.frames.outer_iter().collect::<Vec<_>>())
            .collect();
        let stack = ndarray::stack(Axis(0), &frames).unwrap();
        let codec = PcaCodec::fit(stack.view(), 8, 64).unwrap();
        let z = codec.encode_video(stack.view()).unwrap();
        let back = codec.decode(&z);
        let mae = (&back - &stack).mapv(f64::abs).mean().unwrap();
        assert!(mae <= 0.05, "mae {mae}");
        assert!(codec.explained > 0.9);
    }
}
