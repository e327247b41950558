use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{vocab_size, DenoiserConfig};

pub const TIME_FEATURES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named tensors packed into one flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub total: usize,
}

/// Offsets of the tensors of one transformer block.
#[derive(Debug, Clone, Copy)]
pub struct BlockIdx {
    pub norm1: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub o_w: usize,
    pub o_b: usize,
    pub norm2: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Slot indices resolved once per layout.
#[derive(Debug, Clone)]
pub struct Index {
    pub in_w: usize,
    pub in_b: usize,
    pub pos: usize,
    pub t_w1: usize,
    pub t_b1: usize,
    pub t_w2: usize,
    pub t_b2: usize,
    pub text: usize,
    pub blocks: Vec<BlockIdx>,
    pub out_norm: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub out_skip: usize,
}

impl Layout {
    pub fn for_config(c: &DenoiserConfig) -> (Layout, Index) {
        let d = c.dim;
        let f = d * c.mlp_ratio;
        let mut slots = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            slots.push(Slot { name, shape, offset: total });
            total += n;
            slots.len() - 1
        };
        let in_w = add("in.w".into(), vec![c.input_channels(), d]);
        let in_b = add("in.b".into(), vec![d]);
        let pos = add("pos.hw".into(), vec![c.hw_lat(), d]);
        let t_w1 = add("time.w1".into(), vec![TIME_FEATURES, d]);
        let t_b1 = add("time.b1".into(), vec![d]);
        let t_w2 = add("time.w2".into(), vec![d, d]);
        let t_b2 = add("time.b2".into(), vec![d]);
        let text = add("text.emb".into(), vec![vocab_size(), d]);
        let mut blocks = Vec::new();
        for l in 0..c.layers {
            blocks.push(BlockIdx {
                norm1: add(format!("l{l}.norm1"), vec![d]),
                qkv_w: add(format!("l{l}.qkv.w"), vec![d, 3 * d]),
                qkv_b: add(format!("l{l}.qkv.b"), vec![3 * d]),
                o_w: add(format!("l{l}.o.w"), vec![d, d]),
                o_b: add(format!("l{l}.o.b"), vec![d]),
                norm2: add(format!("l{l}.norm2"), vec![d]),
                w1: add(format!("l{l}.mlp.w1"), vec![d, f]),
                b1: add(format!("l{l}.mlp.b1"), vec![f]),
                w2: add(format!("l{l}.mlp.w2"), vec![f, d]),
                b2: add(format!("l{l}.mlp.b2"), vec![d]),
            });
        }
        let out_norm = add("out.norm".into(), vec![d]);
        let out_w = add("out.w".into(), vec![d, c.channels]);
        let out_b = add("out.b".into(), vec![c.channels]);
        // log per-channel data variance of the noisy-input skip
        let out_skip = add("out.skip".into(), vec![c.channels]);
        let index = Index { in_w, in_b, pos, t_w1, t_b1, t_w2, t_b2, text, blocks, out_norm, out_w, out_b, out_skip };
        (Layout { slots, total }, index)
    }

    pub fn m<'a>(&self, buf: &'a [f64], i: usize) -> ArrayView2<'a, f64> {
        let s = &self.slots[i];
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &buf[s.offset..s.offset + s.len()]).unwrap()
    }

    pub fn v<'a>(&self, buf: &'a [f64], i: usize) -> ArrayView1<'a, f64> {
        let s = &self.slots[i];
        ArrayView1::from(&buf[s.offset..s.offset + s.len()])
    }

    pub fn m_mut<'a>(&self, buf: &'a mut [f64], i: usize) -> ArrayViewMut2<'a, f64> {
        let s = &self.slots[i];
        let n = s.len();
        ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut buf[s.offset..s.offset + n]).unwrap()
    }

    pub fn v_mut<'a>(&self, buf: &'a mut [f64], i: usize) -> ArrayViewMut1<'a, f64> {
        let s = &self.slots[i];
        let n = s.len();
        ArrayViewMut1::from(&mut buf[s.offset..s.offset + n])
    }

    /// Scaled-normal weights, unit norm gains, zero biases.
    pub fn init<R: Rng>(&self, c: &DenoiserConfig, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        let depth_scale = 1.0 / (2.0 * c.layers as f64).sqrt();
        for s in &self.slots {
            let name = s.name.as_str();
            let std = if name.ends_with(".b") || name == "out.skip" || name.ends_with(".b1") || name.ends_with(".b2") {
                0.0
            } else if name.contains("norm") {
                for x in &mut p[s.offset..s.offset + s.len()] {
                    *x = 1.0;
                }
                continue;
            } else if name == "pos.hw" || name == "text.emb" {
                0.3
            } else {
                let fan_in = s.shape[0] as f64;
                let base = 1.0 / fan_in.sqrt();
                if name.ends_with("o.w") || name.ends_with("mlp.w2") {
                    base * depth_scale
                } else if name == "out.w" {
                    base * 0.1
                } else {
                    base
                }
            };
            if std > 0.0 {
                let n = Normal::new(0.0, std).unwrap();
                for x in &mut p[s.offset..s.offset + s.len()] {
                    *x = n.sample(rng);
                }
            }
        }
        p
    }
}
