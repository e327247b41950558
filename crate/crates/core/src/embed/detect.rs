//! Subject detection and identity decoding from pixels.
//!
//! Backgrounds are gray and glyph hues are saturated, so a saturation
//! threshold followed by connected components finds candidate subjects. Each
//! component is decoded into (shape, palette, pose, expression): hues by
//! nearest-table assignment and pixel counts, pose from the accent spot,
//! expression from second moments, and shape by matched filtering against
//! the glyph atlas rendered at the estimated pose.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::synth::identity::{Hue, IdentityKey, ShapeCode};
use crate::synth::render::{silhouette, EXPR_SQUASH, EXPR_WIDEN};

/// Everything the decoders recover about one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDecode {
    pub shape: ShapeCode,
    /// Matched-filter IoU per atlas shape, in `ShapeCode::ALL` order.
    pub shape_scores: [f64; 4],
    /// (body, core, accent) hues by descending pixel count.
    pub hues: [Option<Hue>; 3],
    /// Mean raw color of the pixels assigned to each hue slot.
    pub mean_colors: [[f64; 3]; 3],
    pub pose_deg: f64,
    pub expression: f64,
    pub center: [f64; 2],
    pub radius: f64,
}

impl SubjectDecode {
    /// The full key, or `None` when a palette slot could not be read.
    pub fn key(&self) -> Option<IdentityKey> {
        Some(IdentityKey {
            shape: self.shape,
            palette: [self.hues[0]?, self.hues[1]?, self.hues[2]?],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Pixel box `[x0, y0, x1, y1)`.
    pub bbox: [f64; 4],
    pub area: usize,
    pub confidence: f64,
    pub decode: SubjectDecode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub saturation_threshold: f64,
    /// Components smaller than this fraction of the frame are ignored.
    pub min_area_frac: f64,
    /// Max RGB distance for a pixel to count toward a table hue.
    pub hue_tolerance: f64,
}

impl Default for Detector {
    fn default() -> Self {
        Detector {
            saturation_threshold: 0.3,
            min_area_frac: 0.012,
            hue_tolerance: 0.3,
        }
    }
}

fn saturation(img: &ArrayView3<f64>, y: usize, x: usize) -> f64 {
    let (r, g, b) = (img[[y, x, 0]], img[[y, x, 1]], img[[y, x, 2]]);
    r.max(g).max(b) - r.min(g).min(b)
}

/// Foreground mask used for detection and for dropping reference backgrounds.
pub fn foreground_mask(img: &ArrayView3<f64>, threshold: f64) -> Array2<bool> {
    let (h, w, _) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| saturation(img, y, x) > threshold)
}

/// 8-connected components of a mask, each as a list of `(y, x)`.
pub fn components(mask: &Array2<bool>) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut out = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask[[y0, x0]] || seen[[y0, x0]] {
                continue;
            }
            let mut comp = Vec::new();
            let mut q = VecDeque::from([(y0, x0)]);
            seen[[y0, x0]] = true;
            while let Some((y, x)) = q.pop_front() {
                comp.push((y, x));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask[[ny, nx]] && !seen[[ny, nx]] {
                            seen[[ny, nx]] = true;
                            q.push_back((ny, nx));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1]
        })
        .sum::<f64>()
        .abs()
        / 2.0
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

/// Map a pixel offset from the glyph center into undeformed local coords.
fn to_local(dx: f64, dy: f64, radius: f64, pose_deg: f64, expression: f64) -> (f64, f64) {
    let (s, c) = pose_deg.to_radians().sin_cos();
    let a = (c * dx + s * dy) / radius;
    let b = (-s * dx + c * dy) / radius;
    (
        a / (1.0 + EXPR_WIDEN * expression),
        b / (1.0 - EXPR_SQUASH * expression),
    )
}

impl Detector {
    /// Detect every subject in `img`, ordered left to right by box center.
    pub fn detect(&self, img: ArrayView3<f64>) -> Vec<Detection> {
        let (h, w, _) = img.dim();
        let mask = foreground_mask(&img, self.saturation_threshold);
        let min_area = ((self.min_area_frac * (h * w) as f64).ceil() as usize).max(4);
        let mut dets: Vec<Detection> = components(&mask)
            .into_iter()
            .filter(|c| c.len() >= min_area)
            .map(|c| self.decode_component(&img, &c))
            .collect();
        dets.sort_by(|a, b| {
            let ca = a.bbox[0] + a.bbox[2];
            let cb = b.bbox[0] + b.bbox[2];
            ca.total_cmp(&cb).then(a.bbox[1].total_cmp(&b.bbox[1]))
        });
        dets
    }

    /// The largest detection, if any.
    pub fn detect_primary(&self, img: ArrayView3<f64>) -> Option<Detection> {
        self.detect(img).into_iter().max_by_key(|d| d.area)
    }

    fn decode_component(&self, img: &ArrayView3<f64>, comp: &[(usize, usize)]) -> Detection {
        let n = comp.len() as f64;
        let (mut cy, mut cx) = (0.0, 0.0);
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &(y, x) in comp {
            cy += y as f64 + 0.5;
            cx += x as f64 + 0.5;
            bb[0] = bb[0].min(x as f64);
            bb[1] = bb[1].min(y as f64);
            bb[2] = bb[2].max(x as f64 + 1.0);
            bb[3] = bb[3].max(y as f64 + 1.0);
        }
        cy /= n;
        cx /= n;

        // hue histogram
        let mut counts = [0usize; 6];
        let mut sums = [[0.0f64; 3]; 6];
        let mut sums_xy = [[0.0f64; 2]; 6];
        for &(y, x) in comp {
            let rgb = [img[[y, x, 0]], img[[y, x, 1]], img[[y, x, 2]]];
            let (hue, d) = Hue::nearest(rgb);
            if d <= self.hue_tolerance {
                let k = hue.index();
                counts[k] += 1;
                for c in 0..3 {
                    sums[k][c] += rgb[c];
                }
                sums_xy[k][0] += x as f64 + 0.5;
                sums_xy[k][1] += y as f64 + 0.5;
            }
        }
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let min_count = ((0.015 * n).ceil() as usize).max(1);
        let mut hues = [None; 3];
        let mut mean_colors = [[0.5; 3]; 3];
        for slot in 0..3 {
            let k = order[slot];
            if counts[k] >= min_count {
                hues[slot] = Some(Hue::ALL[k]);
                mean_colors[slot] = sums[k].map(|s| s / counts[k] as f64);
            }
        }

        // pose from the accent spot
        let accent_pose = hues[2].map(|hue| {
            let k = hue.index();
            let ax = sums_xy[k][0] / counts[k] as f64 - cx;
            let ay = sums_xy[k][1] / counts[k] as f64 - cy;
            ax.atan2(-ay).to_degrees()
        });

        let moments = |pose: f64| {
            let (s, c) = pose.to_radians().sin_cos();
            let (mut saa, mut sbb) = (0.0, 0.0);
            for &(y, x) in comp {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let a = c * dx + s * dy;
                let b = -s * dx + c * dy;
                saa += a * a;
                sbb += b * b;
            }
            let rho = if saa > 0.0 { (sbb / saa).sqrt() } else { 1.0 };
            ((1.0 - rho) / (EXPR_SQUASH + EXPR_WIDEN * rho)).clamp(0.0, 1.0)
        };

        let mut best: Option<(f64, ShapeCode, f64, f64, f64)> = None;
        let mut shape_scores = [0.0f64; 4];
        let poses: Vec<f64> = match accent_pose {
            Some(p) => vec![p],
            None => (0..24).map(|i| i as f64 * 15.0 - 180.0).collect(),
        };
        for &pose in &poses {
            let expr = moments(pose);
            for shape in ShapeCode::ALL {
                let poly = silhouette(shape);
                let unit_area = polygon_area(&poly);
                let stretch = (1.0 + EXPR_WIDEN * expr) * (1.0 - EXPR_SQUASH * expr);
                let radius = (n / (unit_area * stretch)).sqrt();
                let iou = template_iou(comp, &poly, [cx, cy], radius, pose, expr, &bb);
                let k = shape.index();
                shape_scores[k] = shape_scores[k].max(iou);
                if best.map_or(true, |b| iou > b.0) {
                    best = Some((iou, shape, pose, expr, radius));
                }
            }
        }
        let (conf, shape, pose, expr, radius) = best.expect("atlas is non-empty");
        Detection {
            bbox: bb,
            area: comp.len(),
            confidence: conf,
            decode: SubjectDecode {
                shape,
                shape_scores,
                hues,
                mean_colors,
                pose_deg: pose,
                expression: expr,
                center: [cx, cy],
                radius,
            },
        }
    }
}

/// IoU between a component and an atlas silhouette placed at the given pose.
fn template_iou(
    comp: &[(usize, usize)],
    poly: &[[f64; 2]],
    center: [f64; 2],
    radius: f64,
    pose: f64,
    expr: f64,
    bb: &[f64; 4],
) -> f64 {
    let reach = radius * 1.6 + 2.0;
    let x0 = (center[0] - reach).min(bb[0]).floor() as i64;
    let x1 = (center[0] + reach).max(bb[2]).ceil() as i64;
    let y0 = (center[1] - reach).min(bb[1]).floor() as i64;
    let y1 = (center[1] + reach).max(bb[3]).ceil() as i64;
    let wdt = (x1 - x0) as usize;
    let hgt = (y1 - y0) as usize;
    let mut comp_mask = Array2::from_elem((hgt, wdt), false);
    for &(y, x) in comp {
        comp_mask[[(y as i64 - y0) as usize, (x as i64 - x0) as usize]] = true;
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for yy in 0..hgt {
        for xx in 0..wdt {
            let px = (x0 + xx as i64) as f64 + 0.5;
            let py = (y0 + yy as i64) as f64 + 0.5;
            let (u, v) = to_local(px - center[0], py - center[1], radius, pose, expr);
            let t = in_polygon(poly, u, v);
            let c = comp_mask[[yy, xx]];
            if t && c {
                inter += 1;
            }
            if t || c {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
