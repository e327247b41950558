use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed;

/// The six saturated hues subjects are painted with. Backgrounds are pure
/// gray, so saturation alone separates subject from scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hue {
    Red,
    Yellow,
    Green,
    Cyan,
    Blue,
    Magenta,
}

const HI: f64 = 0.9;
const LO: f64 = 0.135;

impl Hue {
    pub const ALL: [Hue; 6] = [
        Hue::Red,
        Hue::Yellow,
        Hue::Green,
        Hue::Cyan,
        Hue::Blue,
        Hue::Magenta,
    ];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Hue::Red => [HI, LO, LO],
            Hue::Yellow => [HI, HI, LO],
            Hue::Green => [LO, HI, LO],
            Hue::Cyan => [LO, HI, HI],
            Hue::Blue => [LO, LO, HI],
            Hue::Magenta => [HI, LO, HI],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Hue::Red => "red",
            Hue::Yellow => "yellow",
            Hue::Green => "green",
            Hue::Cyan => "cyan",
            Hue::Blue => "blue",
            Hue::Magenta => "magenta",
        }
    }

    pub fn from_word(w: &str) -> Option<Hue> {
        Hue::ALL.into_iter().find(|h| h.word() == w)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Nearest table hue to an RGB triple, with its Euclidean distance.
    pub fn nearest(rgb: [f64; 3]) -> (Hue, f64) {
        let mut best = (Hue::Red, f64::INFINITY);
        for h in Hue::ALL {
            let c = h.rgb();
            let d = ((rgb[0] - c[0]).powi(2) + (rgb[1] - c[1]).powi(2) + (rgb[2] - c[2]).powi(2))
                .sqrt();
            if d < best.1 {
                best = (h, d);
            }
        }
        best
    }
}

/// Glyph silhouette classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeCode {
    Disc,
    Square,
    Triangle,
    Cross,
}

impl ShapeCode {
    pub const ALL: [ShapeCode; 4] = [
        ShapeCode::Disc,
        ShapeCode::Square,
        ShapeCode::Triangle,
        ShapeCode::Cross,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Identity-relevant parameters of one synthetic subject.
///
/// `palette` is (body, core, accent); the three hues are always distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub identity_id: u32,
    pub shape: ShapeCode,
    pub palette: [Hue; 3],
    pub marking_seed: u64,
}

impl IdentitySpec {
    /// The discrete key the identity embedder decodes from pixels.
    pub fn key(&self) -> IdentityKey {
        IdentityKey {
            shape: self.shape,
            palette: self.palette,
        }
    }

    pub fn body(&self) -> Hue {
        self.palette[0]
    }
}

/// Pixel-recoverable part of an identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IdentityKey {
    pub shape: ShapeCode,
    pub palette: [Hue; 3],
}

/// Number of distinct identities the generator can produce (4 shapes × 6·5·4
/// ordered palettes).
pub const IDENTITY_CAPACITY: usize = 4 * 6 * 5 * 4;

fn combo(index: usize) -> IdentityKey {
    let shape = ShapeCode::ALL[index / 120];
    let mut rest = index % 120;
    let mut pool: Vec<Hue> = Hue::ALL.to_vec();
    let b = pool.remove(rest / 20);
    rest %= 20;
    let c = pool.remove(rest / 4);
    let a = pool.remove(rest % 4);
    IdentityKey {
        shape,
        palette: [b, c, a],
    }
}

/// Deterministically map `(seed, identity_id)` to an identity.
///
/// Ids below [`IDENTITY_CAPACITY`] map through a seeded permutation of the
/// combination space, so distinct ids never share a key.
pub fn sample_identity(rng_seed: u64, identity_id: u32) -> IdentitySpec {
    let mut order: Vec<usize> = (0..IDENTITY_CAPACITY).collect();
    order.shuffle(&mut seed::rng(rng_seed, "identity-permutation", &[]));
    let key = combo(order[identity_id as usize % IDENTITY_CAPACITY]);
    IdentitySpec {
        identity_id,
        shape: key.shape,
        palette: key.palette,
        marking_seed: seed::derive(rng_seed, "marking", &[identity_id as u64]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic() {
        assert_eq!(sample_identity(0, 0), sample_identity(0, 0));
    }

    #[test]
    fn distinct_ids_have_distinct_keys() {
        assert_ne!(sample_identity(0, 0).key(), sample_identity(0, 1).key());
        let keys: HashSet<_> = (0..IDENTITY_CAPACITY as u32)
            .map(|i| sample_identity(3, i).key())
            .collect();
        assert_eq!(keys.len(), IDENTITY_CAPACITY);
    }

    #[test]
    fn palettes_are_distinct_hues() {
        for i in 0..IDENTITY_CAPACITY {
            let k = combo(i);
            assert_ne!(k.palette[0], k.palette[1]);
            assert_ne!(k.palette[0], k.palette[2]);
            assert_ne!(k.palette[1], k.palette[2]);
        }
    }

    #[test]
    fn golden_seed7_id3() {
        let spec = sample_identity(7, 3);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, GOLDEN_7_3, "regenerate only if the generator intentionally changed");
    }

    const GOLDEN_7_3: &str = r#"{"identity_id":3,"shape":"disc","palette":["yellow","cyan","blue"],"marking_seed":14028801975973545283}"#;

    #[test]
    fn nearest_hue_tolerates_brightness_speckle() {
        for h in Hue::ALL {
            let c = h.rgb().map(|v| v * 1.08);
            assert_eq!(Hue::nearest(c).0, h);
        }
    }
}
