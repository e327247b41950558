//! Noise calibration for the noisy identity embedders.
//!
//! The curator's similarity bands only select anything if the same-identity
//! cross-clip similarity distribution actually spans them. The sweep picks
//! the noise scale that best balances mass in `[0.7, 0.9)` and `[0.9, 0.99)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cosine, EmbedderConfig, IdentityEmbedder, SubjectDecode};
use crate::error::{Error, Result};

/// Mass of a similarity sample inside the two curator bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCoverage {
    pub noise_scale: f64,
    /// Fraction in `[0.7, 0.9)`.
    pub cross_band: f64,
    /// Fraction in `[0.9, 0.99)`.
    pub tradeoff_band: f64,
    pub same_mean: f64,
}

impl BandCoverage {
    pub fn satisfied(&self, min_mass: f64) -> bool {
        self.cross_band >= min_mass && self.tradeoff_band >= min_mass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub noise_scale: f64,
    pub min_mass: f64,
    pub satisfied: bool,
    pub coverage: BandCoverage,
    pub n_same_pairs: usize,
    pub n_diff_pairs: usize,
    /// 5th percentile of same-identity similarity at the chosen scale.
    pub same_floor: f64,
    pub diff_mean: f64,
    /// 20 equal bins over [-1, 1] of same-identity similarity.
    pub same_histogram: Vec<usize>,
    pub sweep: Vec<BandCoverage>,
}

impl CalibrationReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput {
                    what: "calibration report".into(),
                    path: path.to_path_buf(),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        Ok(serde_json::from_str(&s)?)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Default sweep grid.
pub fn default_grid() -> Vec<f64> {
    (1..=40).map(|i| i as f64 * 0.05).collect()
}

/// Sweep `grid` for the noise scale of `base` (a noisy config) using one
/// decoded reference per clip, tagged with its identity id.
pub fn calibrate(
    base: EmbedderConfig,
    refs: &[(u32, SubjectDecode)],
    grid: &[f64],
    min_mass: f64,
) -> Result<CalibrationReport> {
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..refs.len() {
        for j in i + 1..refs.len() {
            if refs[i].0 == refs[j].0 {
                same.push((i, j));
            } else {
                diff.push((i, j));
            }
        }
    }
    if same.is_empty() {
        return Err(Error::Empty("calibration needs at least one same-identity pair".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty calibration grid".into()));
    }
    // a fixed stride subsample keeps the different-identity pass bounded
    let stride = (diff.len() / 2000).max(1);
    let diff: Vec<(usize, usize)> = diff.into_iter().step_by(stride).collect();

    let sims = |scale: f64, pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
        let mut c = base;
        c.noise_scale = scale;
        let e = IdentityEmbedder::new(c)?;
        let embs: Vec<Vec<f64>> = refs.iter().map(|(_, d)| e.embed_decode(d)).collect();
        pairs.iter().map(|&(i, j)| cosine(&embs[i], &embs[j])).collect()
    };

    let mut sweep = Vec::with_capacity(grid.len());
    for &scale in grid {
        let s = sims(scale, &same)?;
        let n = s.len() as f64;
        sweep.push(BandCoverage {
            noise_scale: scale,
            cross_band: s.iter().filter(|&&v| (0.7..0.9).contains(&v)).count() as f64 / n,
            tradeoff_band: s.iter().filter(|&&v| (0.9..0.99).contains(&v)).count() as f64 / n,
            same_mean: s.iter().sum::<f64>() / n,
        });
    }
    let score = |c: &BandCoverage| c.cross_band.min(c.tradeoff_band);
    let best = *sweep
        .iter()
        .max_by(|a, b| score(a).total_cmp(&score(b)).then(b.noise_scale.total_cmp(&a.noise_scale)))
        .expect("grid is non-empty");

    let mut s = sims(best.noise_scale, &same)?;
    s.sort_by(f64::total_cmp);
    let d = sims(best.noise_scale, &diff)?;
    let mut hist = vec![0usize; 20];
    for v in &s {
        let b = (((v + 1.0) / 2.0 * 20.0).floor() as usize).min(19);
        hist[b] += 1;
    }
    Ok(CalibrationReport {
        noise_scale: best.noise_scale,
        min_mass,
        satisfied: best.satisfied(min_mass),
        coverage: best,
        n_same_pairs: s.len(),
        n_diff_pairs: d.len(),
        same_floor: quantile(&s, 0.05),
        diff_mean: if d.is_empty() { f64::NAN } else { d.iter().sum::<f64>() / d.len() as f64 },
        same_histogram: hist,
        sweep,
    })
}
