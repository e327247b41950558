use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::config::DenoiserConfig;
use super::params::{Index, Layout, TIME_FEATURES};
use super::rope::Rope;
use super::sequence::TokenSequence;
use crate::error::{Error, Result};
use crate::seed;

const EPS: f64 = 1e-6;
const GELU_K: f64 = 0.797_884_560_802_865_4;

/// Pre-norm transformer denoiser over a concatenated token sequence,
/// predicting velocities for every latent token.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub layout: Layout,
    index: Index,
    pub params: Vec<f64>,
}

struct LayerCache {
    n1: Array2<f64>,
    r1: Array1<f64>,
    a1: Array2<f64>,
    qkv: Array2<f64>,
    q: Vec<Array2<f64>>,
    k: Vec<Array2<f64>>,
    p: Vec<Array2<f64>>,
    attn: Array2<f64>,
    n2: Array2<f64>,
    r2: Array1<f64>,
    a2: Array2<f64>,
    m_pre: Array2<f64>,
    m_act: Array2<f64>,
}

/// Activations kept by [`Denoiser::forward_cached`] for the backward pass.
pub struct Cache {
    rope: Rope,
    e: Array1<f64>,
    u: Array1<f64>,
    sv: Array1<f64>,
    layers: Vec<LayerCache>,
    nf: Array2<f64>,
    rf: Array1<f64>,
    af: Array2<f64>,
}

/// Smallest per-channel variance the skip gain may assume.
const MIN_SKIP_VAR: f64 = 1e-3;

/// Gain of the linear velocity estimate `g x_tau` that is optimal for data
/// of variance `s`, and its derivative with respect to `s`.
fn skip_gain(tau: f64, s: f64) -> (f64, f64) {
    let u = 1.0 - tau;
    let num = tau - u * s;
    let den = u * u * s + tau * tau;
    (num / den, (-u * den - num * u * u) / (den * den))
}

pub fn time_features(tau: f64) -> Array1<f64> {
    let half = TIME_FEATURES / 2;
    let mut e = Array1::zeros(TIME_FEATURES);
    for k in 0..half {
        let f = (-(1000f64).ln() * k as f64 / half as f64).exp();
        let a = 1000.0 * tau * f;
        e[k] = a.sin();
        e[half + k] = a.cos();
    }
    e
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * 0.044715 * x * x)
}

fn rms_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let r = x.map_axis(Axis(1), |row| (row.dot(&row) / d + EPS).sqrt());
    let n = x / &r.view().insert_axis(Axis(1));
    (n, r)
}

fn rms_norm_back(dn: &Array2<f64>, n: &Array2<f64>, r: &Array1<f64>) -> Array2<f64> {
    let d = n.ncols() as f64;
    let mut out = Array2::zeros(dn.raw_dim());
    Zip::from(out.rows_mut())
        .and(dn.rows())
        .and(n.rows())
        .and(r)
        .for_each(|mut o, dr, nr, &rr| {
            let m = dr.dot(&nr) / d;
            Zip::from(&mut o).and(&dr).and(&nr).for_each(|o, &a, &b| *o = (a - b * m) / rr);
        });
    out
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

fn add_row(x: &mut Array2<f64>, b: ArrayView1<f64>) {
    *x += &b.insert_axis(Axis(0));
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed_value: u64) -> Result<Denoiser> {
        config.validate()?;
        let (layout, index) = Layout::for_config(&config);
        let mut rng = seed::rng(seed_value, "denoiser-init", &[]);
        let params = layout.init(&config, &mut rng);
        Ok(Denoiser { config, layout, index, params })
    }

    pub fn from_params(config: DenoiserConfig, params: Vec<f64>) -> Result<Denoiser> {
        config.validate()?;
        let (layout, index) = Layout::for_config(&config);
        if params.len() != layout.total {
            return Err(Error::Shape(format!("{} parameters, layout needs {}", params.len(), layout.total)));
        }
        Ok(Denoiser { config, layout, index, params })
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    fn check(&self, seq: &TokenSequence) -> Result<()> {
        let c = &self.config;
        if seq.latents.ncols() != c.input_channels() {
            return Err(Error::Shape(format!(
                "sequence has {} channels, model expects {}",
                seq.latents.ncols(),
                c.input_channels()
            )));
        }
        if seq.hw_index.iter().any(|&j| j >= c.hw_lat()) || seq.hw_index.len() != seq.n_latent() {
            return Err(Error::Shape("spatial index out of range".into()));
        }
        if seq.text_ids.iter().any(|&i| i >= super::config::vocab_size()) {
            return Err(Error::Shape("text id out of vocabulary".into()));
        }
        Ok(())
    }

    /// Velocity prediction for every latent (non-text) token.
    pub fn forward(&self, seq: &TokenSequence) -> Result<Array2<f64>> {
        Ok(self.forward_cached(seq)?.0)
    }

    pub fn forward_cached(&self, seq: &TokenSequence) -> Result<(Array2<f64>, Cache)> {
        self.check(seq)?;
        let (p, l, ix) = (&self.params[..], &self.layout, &self.index);
        let c = &self.config;
        let d = c.dim;
        let dh = c.head_dim();
        let nl = seq.n_latent();
        let total = seq.len();

        let mut x = Array2::zeros((total, d));
        {
            let mut xl = x.slice_mut(s![..nl, ..]);
            xl.assign(&seq.latents.dot(&l.m(p, ix.in_w)));
            xl += &l.v(p, ix.in_b).insert_axis(Axis(0));
            let pos = l.m(p, ix.pos);
            for (i, &j) in seq.hw_index.iter().enumerate() {
                let mut row = xl.row_mut(i);
                row += &pos.row(j);
            }
        }
        let e = time_features(seq.tau);
        let u = e.dot(&l.m(p, ix.t_w1)) + l.v(p, ix.t_b1);
        let sv = u.mapv(|v| v * sigmoid(v));
        let temb = sv.dot(&l.m(p, ix.t_w2)) + l.v(p, ix.t_b2);
        x.slice_mut(s![..seq.n_video, ..]).rows_mut().into_iter().for_each(|mut r| r += &temb);
        let text = l.m(p, ix.text);
        for (j, &id) in seq.text_ids.iter().enumerate() {
            x.row_mut(nl + j).assign(&text.row(id));
        }

        let rope = Rope::new(&seq.positions, c.rope_pairs, c.rope_theta);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(c.layers);
        for b in &ix.blocks {
            let (n1, r1) = rms_norm(&x);
            let a1 = &n1 * &l.v(p, b.norm1).insert_axis(Axis(0));
            let mut qkv = a1.dot(&l.m(p, b.qkv_w));
            add_row(&mut qkv, l.v(p, b.qkv_b));
            let mut attn = Array2::zeros((total, d));
            let (mut qs, mut ks, mut ps) = (Vec::new(), Vec::new(), Vec::new());
            for h in 0..c.heads {
                let mut q = qkv.slice(s![.., h * dh..(h + 1) * dh]).to_owned();
                let mut k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]).to_owned();
                rope.apply(q.view_mut(), false);
                rope.apply(k.view_mut(), false);
                let mut sc = q.dot(&k.t()) * scale;
                softmax_rows(&mut sc);
                let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
                attn.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&sc.dot(&v));
                qs.push(q);
                ks.push(k);
                ps.push(sc);
            }
            let mut hres = attn.dot(&l.m(p, b.o_w));
            add_row(&mut hres, l.v(p, b.o_b));
            hres += &x;
            let (n2, r2) = rms_norm(&hres);
            let a2 = &n2 * &l.v(p, b.norm2).insert_axis(Axis(0));
            let mut m_pre = a2.dot(&l.m(p, b.w1));
            add_row(&mut m_pre, l.v(p, b.b1));
            let m_act = m_pre.mapv(gelu);
            let mut y = m_act.dot(&l.m(p, b.w2));
            add_row(&mut y, l.v(p, b.b2));
            x = hres + y;
            layers.push(LayerCache { n1, r1, a1, qkv, q: qs, k: ks, p: ps, attn, n2, r2, a2, m_pre, m_act });
        }
        let xl = x.slice(s![..nl, ..]).to_owned();
        let (nf, rf) = rms_norm(&xl);
        let af = &nf * &l.v(p, ix.out_norm).insert_axis(Axis(0));
        let mut out = af.dot(&l.m(p, ix.out_w));
        add_row(&mut out, l.v(p, ix.out_b));
        let gains = self.skip_gains(seq.tau).0;
        let ch = c.channels;
        let mut ov = out.slice_mut(s![..seq.n_video, ..]);
        ov += &(&seq.latents.slice(s![..seq.n_video, ..ch]) * &gains.view().insert_axis(Axis(0)));
        Ok((out, Cache { rope, e, u, sv, layers, nf, rf, af }))
    }

    /// Per-channel skip gains and their derivatives with respect to the
    /// log-variance parameters (zero where the variance is clamped).
    fn skip_gains(&self, tau: f64) -> (Array1<f64>, Array1<f64>) {
        let logv = self.layout.v(&self.params, self.index.out_skip);
        let mut g = Array1::zeros(logv.len());
        let mut dg = Array1::zeros(logv.len());
        for (k, &lv) in logv.iter().enumerate() {
            let raw = lv.exp();
            let s = raw.max(MIN_SKIP_VAR);
            let (v, ds) = skip_gain(tau, s);
            g[k] = v;
            dg[k] = if raw > MIN_SKIP_VAR { ds * s } else { 0.0 };
        }
        (g, dg)
    }

    /// Accumulate parameter gradients of `sum(d_out * out)` into `grads`
    /// and return the gradient with respect to the input latents.
    pub fn backward(&self, seq: &TokenSequence, cache: &Cache, d_out: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        let (p, l, ix) = (&self.params[..], &self.layout, &self.index);
        let c = &self.config;
        let d = c.dim;
        let dh = c.head_dim();
        let nl = seq.n_latent();
        let total = seq.len();
        let scale = 1.0 / (dh as f64).sqrt();
        let acc2 = |g: &mut [f64], i: usize, a: ArrayView2<f64>, b: ArrayView2<f64>| {
            let mut m = l.m_mut(g, i);
            ndarray::linalg::general_mat_mul(1.0, &a.t(), &b, 1.0, &mut m);
        };
        let acc1 = |g: &mut [f64], i: usize, v: Array1<f64>| {
            let mut m = l.v_mut(g, i);
            m += &v;
        };

        let ch = c.channels;
        let (gains, d_gains) = self.skip_gains(seq.tau);
        let d_vid = d_out.slice(s![..seq.n_video, ..]);
        let x_vid = seq.latents.slice(s![..seq.n_video, ..ch]);
        acc1(grads, ix.out_skip, (&d_vid * &x_vid).sum_axis(Axis(0)) * &d_gains);
        acc2(grads, ix.out_w, cache.af.view(), d_out.view());
        acc1(grads, ix.out_b, d_out.sum_axis(Axis(0)));
        let d_af = d_out.dot(&l.m(p, ix.out_w).t());
        acc1(grads, ix.out_norm, (&d_af * &cache.nf).sum_axis(Axis(0)));
        let d_nf = &d_af * &l.v(p, ix.out_norm).insert_axis(Axis(0));
        let mut dx = Array2::zeros((total, d));
        dx.slice_mut(s![..nl, ..]).assign(&rms_norm_back(&d_nf, &cache.nf, &cache.rf));

        for (b, lc) in ix.blocks.iter().zip(&cache.layers).rev() {
            // MLP branch
            acc2(grads, b.w2, lc.m_act.view(), dx.view());
            acc1(grads, b.b2, dx.sum_axis(Axis(0)));
            let mut d_m = dx.dot(&l.m(p, b.w2).t());
            Zip::from(&mut d_m).and(&lc.m_pre).for_each(|g, &x| *g *= gelu_grad(x));
            acc2(grads, b.w1, lc.a2.view(), d_m.view());
            acc1(grads, b.b1, d_m.sum_axis(Axis(0)));
            let d_a2 = d_m.dot(&l.m(p, b.w1).t());
            acc1(grads, b.norm2, (&d_a2 * &lc.n2).sum_axis(Axis(0)));
            let d_n2 = &d_a2 * &l.v(p, b.norm2).insert_axis(Axis(0));
            let dh_res = dx + rms_norm_back(&d_n2, &lc.n2, &lc.r2);

            // attention branch
            acc2(grads, b.o_w, lc.attn.view(), dh_res.view());
            acc1(grads, b.o_b, dh_res.sum_axis(Axis(0)));
            let d_attn = dh_res.dot(&l.m(p, b.o_w).t());
            let mut d_qkv = Array2::zeros((total, 3 * d));
            for h in 0..c.heads {
                let d_o = d_attn.slice(s![.., h * dh..(h + 1) * dh]);
                let v = lc.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let pm = &lc.p[h];
                let d_p = d_o.dot(&v.t());
                d_qkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&pm.t().dot(&d_o));
                let mut d_s = pm * &d_p;
                let rs = d_s.sum_axis(Axis(1));
                d_s -= &(pm * &rs.insert_axis(Axis(1)));
                d_s *= scale;
                let mut d_q = d_s.dot(&lc.k[h]);
                let mut d_k = d_s.t().dot(&lc.q[h]);
                cache.rope.apply(d_q.view_mut(), true);
                cache.rope.apply(d_k.view_mut(), true);
                d_qkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&d_q);
                d_qkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&d_k);
            }
            acc2(grads, b.qkv_w, lc.a1.view(), d_qkv.view());
            acc1(grads, b.qkv_b, d_qkv.sum_axis(Axis(0)));
            let d_a1 = d_qkv.dot(&l.m(p, b.qkv_w).t());
            acc1(grads, b.norm1, (&d_a1 * &lc.n1).sum_axis(Axis(0)));
            let d_n1 = &d_a1 * &l.v(p, b.norm1).insert_axis(Axis(0));
            dx = dh_res + rms_norm_back(&d_n1, &lc.n1, &lc.r1);
        }

        {
            let mut gt = l.m_mut(grads, ix.text);
            for (j, &id) in seq.text_ids.iter().enumerate() {
                let mut row = gt.row_mut(id);
                row += &dx.row(nl + j);
            }
        }
        let d_xl = dx.slice(s![..nl, ..]);
        acc2(grads, ix.in_w, seq.latents.view(), d_xl);
        acc1(grads, ix.in_b, d_xl.sum_axis(Axis(0)));
        {
            let mut gp = l.m_mut(grads, ix.pos);
            for (i, &j) in seq.hw_index.iter().enumerate() {
                let mut row = gp.row_mut(j);
                row += &d_xl.row(i);
            }
        }
        let d_temb = dx.slice(s![..seq.n_video, ..]).sum_axis(Axis(0));
        {
            let mut g = l.m_mut(grads, ix.t_w2);
            g += &(&cache.sv.view().insert_axis(Axis(1)) * &d_temb.view().insert_axis(Axis(0)));
        }
        acc1(grads, ix.t_b2, d_temb.clone());
        let d_sv = l.m(p, ix.t_w2).dot(&d_temb);
        let d_u = Zip::from(&d_sv).and(&cache.u).map_collect(|&g, &u| {
            let sg = sigmoid(u);
            g * sg * (1.0 + u * (1.0 - sg))
        });
        {
            let mut g = l.m_mut(grads, ix.t_w1);
            g += &(&cache.e.view().insert_axis(Axis(1)) * &d_u.view().insert_axis(Axis(0)));
        }
        acc1(grads, ix.t_b1, d_u);
        let mut d_lat = d_xl.dot(&l.m(p, ix.in_w).t());
        let mut dv = d_lat.slice_mut(s![..seq.n_video, ..ch]);
        dv += &(&d_vid * &gains.view().insert_axis(Axis(0)));
        d_lat
    }
}
