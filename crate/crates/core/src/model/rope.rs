use ndarray::{Array2, ArrayViewMut2};

/// Per-token rotation angles for a 3D rotary embedding.
///
/// Rotary pairs are assigned to axes in order t, h, w; within an axis pair
/// `k` of `n` rotates at frequency `theta^(-k/n)`.
#[derive(Debug, Clone)]
pub struct Rope {
    pub cos: Array2<f64>,
    pub sin: Array2<f64>,
}

pub fn frequencies(pairs: [usize; 3], theta: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (axis, &n) in pairs.iter().enumerate() {
        for k in 0..n {
            out.push((axis, theta.powf(-(k as f64) / n as f64)));
        }
    }
    out
}

impl Rope {
    pub fn new(positions: &[[f64; 3]], pairs: [usize; 3], theta: f64) -> Rope {
        let freqs = frequencies(pairs, theta);
        let mut cos = Array2::zeros((positions.len(), freqs.len()));
        let mut sin = Array2::zeros((positions.len(), freqs.len()));
        for (i, p) in positions.iter().enumerate() {
            for (j, &(axis, f)) in freqs.iter().enumerate() {
                let a = p[axis] * f;
                cos[[i, j]] = a.cos();
                sin[[i, j]] = a.sin();
            }
        }
        Rope { cos, sin }
    }

    /// Rotate rows of `x` (L x head_dim) in place; `inverse` undoes it.
    pub fn apply(&self, mut x: ArrayViewMut2<f64>, inverse: bool) {
        let s = if inverse { -1.0 } else { 1.0 };
        for (i, mut row) in x.outer_iter_mut().enumerate() {
            for j in 0..self.cos.ncols() {
                let (c, sn) = (self.cos[[i, j]], s * self.sin[[i, j]]);
                let (a, b) = (row[2 * j], row[2 * j + 1]);
                row[2 * j] = a * c - b * sn;
                row[2 * j + 1] = a * sn + b * c;
            }
        }
    }
}
