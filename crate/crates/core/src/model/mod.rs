//! Sequence-concatenation denoiser: config, parameters, token assembly,
//! forward/backward passes, loss and checkpoints.

mod checkpoint;
mod config;
mod denoiser;
mod loss;
mod params;
mod rope;
mod sequence;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{default_rope_pairs, null_text, tokenize, vocab_size, DenoiserConfig, NULL, PAD, UNK};
pub use denoiser::{time_features, Cache, Denoiser};
pub use loss::{loss_with_draw, sequence_mse, training_loss, DropRates, LossDraw, LossOutput, TrainExample};
pub use params::{Layout, Slot, TIME_FEATURES};
pub use rope::{frequencies, Rope};
pub use sequence::{
    augment_references, concat_latents, drop_image_condition, drop_text_condition, preprocess_reference,
    ConditioningBundle, Segment, TokenSequence, TEXT_POSITION,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::{Array2, Array3};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tiny(channel_concat: bool) -> DenoiserConfig {
        DenoiserConfig {
            layers: 2,
            heads: 2,
            dim: 12,
            mlp_ratio: 2,
            channels: 3,
            patch: 2,
            t_lat: 2,
            h_lat: 2,
            w_lat: 2,
            max_refs: 2,
            text_len: 3,
            rope_pairs: [1, 1, 1],
            rope_theta: 100.0,
            parameterization: "rectified_flow".into(),
            channel_concat,
            latent_scale: 1.0,
        }
    }

    fn example(seed_value: u64, n_refs: usize) -> TrainExample {
        let mut rng = seed::rng(seed_value, "example", &[]);
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let video = Array3::from_shape_simple_fn((2, 4, 3), &mut g);
        let refs = (0..n_refs).map(|_| Array2::from_shape_simple_fn((4, 3), &mut g)).collect();
        TrainExample { video, cond: ConditioningBundle::new(refs, vec![5, 9, PAD]) }
    }

    fn check_gradients(channel_concat: bool) {
        let model = Denoiser::new(tiny(channel_concat), 3).unwrap();
        let ex = example(1, 2);
        let mut rng = seed::rng(2, "draw", &[]);
        let mut draw = LossDraw::sample(&ex, DropRates { text: 0.0, image: 0.0 }, 0.05, &mut rng);
        draw.tau = 0.37;
        let mut g = vec![0.0; model.n_params()];
        let out = loss_with_draw(&model, &ex, &draw, 1.0, Some(&mut g)).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..model.n_params() {
            let mut m = model.clone();
            m.params[i] += h;
            let up = loss_with_draw(&m, &ex, &draw, 1.0, None).unwrap().loss;
            m.params[i] -= 2.0 * h;
            let dn = loss_with_draw(&m, &ex, &draw, 1.0, None).unwrap().loss;
            let num = (up - dn) / (2.0 * h);
            let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-4);
            worst = worst.max(rel);
            assert!(rel <= 1e-3, "param {i} ({}) analytic {} numeric {num}", slot_name(&model, i), g[i]);
        }
        // reference latents
        for r in 0..2 {
            for j in 0..12 {
                let (a, b) = (j / 3, j % 3);
                let mut e2 = ex.clone();
                e2.cond.refs[r][[a, b]] += h;
                let up = loss_with_draw(&model, &e2, &draw, 1.0, None).unwrap().loss;
                e2.cond.refs[r][[a, b]] -= 2.0 * h;
                let dn = loss_with_draw(&model, &e2, &draw, 1.0, None).unwrap().loss;
                let num = (up - dn) / (2.0 * h);
                let an = out.d_refs[r][[a, b]];
                assert!((num - an).abs() / num.abs().max(an.abs()).max(1e-4) <= 1e-3);
            }
        }
        assert!(worst.is_finite());
    }

    fn slot_name(m: &Denoiser, i: usize) -> String {
        m.layout
            .slots
            .iter()
            .find(|s| i >= s.offset && i < s.offset + s.len())
            .map(|s| s.name.clone())
            .unwrap_or_default()
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(false);
    }

    #[test]
    fn channel_concat_gradients_match_finite_differences() {
        check_gradients(true);
    }

    #[test]
    fn reference_tokens_add_no_parameters() {
        let c = tiny(false);
        let d = c.dim;
        let f = d * c.mlp_ratio;
        let block = d + 3 * d * d + 3 * d + d * d + d + d + d * f + f + f * d + d;
        let expected = c.channels * d
            + d
            + c.hw_lat() * d
            + TIME_FEATURES * d
            + d
            + d * d
            + d
            + vocab_size() * d
            + c.layers * block
            + d
            + d * c.channels
            + c.channels
            + c.channels;
        for refs in [0, 1, 5] {
            let cfg = DenoiserConfig { max_refs: refs, ..c.clone() };
            assert_eq!(Denoiser::new(cfg, 0).unwrap().n_params(), expected);
        }
        let cc = Denoiser::new(tiny(true), 0).unwrap();
        assert_eq!(cc.n_params(), expected + 2 * c.channels * d);
    }

    #[test]
    fn loss_ignores_reference_targets() {
        let model = Denoiser::new(tiny(false), 1).unwrap();
        let ex = example(4, 2);
        let seq = concat_latents(&model.config, ex.video.view(), &ex.cond.ref_views(), &ex.cond.text_ids, 0.5).unwrap();
        let pred = model.forward(&seq).unwrap();
        let target = Array2::from_shape_fn(pred.raw_dim(), |(i, j)| (i * 3 + j) as f64 * 0.01);
        let (a, ga) = sequence_mse(&pred, &target, &seq.segments).unwrap();
        let mut t2 = target.clone();
        for i in 0..t2.nrows() {
            if seq.segments[i] != Segment::Video {
                t2.row_mut(i).fill(123.0);
            }
        }
        let (b, gb) = sequence_mse(&pred, &t2, &seq.segments).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        assert!(ga.rows().into_iter().skip(8).all(|r| r.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dropped_image_gives_zero_reference_gradient() {
        let model = Denoiser::new(tiny(false), 1).unwrap();
        let ex = example(5, 2);
        let mut rng = seed::rng(0, "d", &[]);
        for _ in 0..5 {
            let draw = LossDraw::sample(&ex, DropRates { text: 1.0, image: 1.0 }, 0.05, &mut rng);
            assert!(draw.drop_text && draw.drop_image);
            let mut g = vec![0.0; model.n_params()];
            let out = loss_with_draw(&model, &ex, &draw, 1.0, Some(&mut g)).unwrap();
            assert!(out.d_refs.iter().all(|r| r.iter().all(|&v| v == 0.0)));
            assert!(g.iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn drop_rates_are_independent_bernoullis() {
        let ex = example(6, 1);
        let mut rng = seed::rng(7, "drops", &[]);
        let n = 10_000;
        let mut cells = [0usize; 4];
        for _ in 0..n {
            let d = LossDraw::sample(&ex, DropRates::default(), 0.0, &mut rng);
            cells[(d.drop_text as usize) * 2 + d.drop_image as usize] += 1;
        }
        let text = (cells[2] + cells[3]) as f64 / n as f64;
        let image = (cells[1] + cells[3]) as f64 / n as f64;
        // binomial 3-sigma band
        let band = 3.0 * (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((text - 0.1).abs() < band && (image - 0.1).abs() < band, "{text} {image}");
        let probs = [0.81, 0.09, 0.09, 0.01];
        let chi: f64 = cells
            .iter()
            .zip(probs)
            .map(|(&o, p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
        assert!(chi < crit, "chi2 {chi} >= {crit}");
    }

    #[test]
    fn reference_order_matters() {
        let model = Denoiser::new(tiny(false), 2).unwrap();
        let ex = example(8, 2);
        let r = &ex.cond.refs;
        let a = concat_latents(&model.config, ex.video.view(), &[r[0].view(), r[1].view()], &ex.cond.text_ids, 0.5).unwrap();
        let b = concat_latents(&model.config, ex.video.view(), &[r[1].view(), r[0].view()], &ex.cond.text_ids, 0.5).unwrap();
        let (pa, pb) = (model.forward(&a).unwrap(), model.forward(&b).unwrap());
        let diff = (&pa.slice(ndarray::s![..8, ..]) - &pb.slice(ndarray::s![..8, ..])).mapv(f64::abs).sum();
        assert!(diff > 1e-6, "permuting references left video output unchanged");
    }

    #[test]
    fn forward_rejects_wrong_channels() {
        let model = Denoiser::new(tiny(false), 0).unwrap();
        let cc = tiny(true);
        let ex = example(9, 1);
        let seq = concat_latents(&cc, ex.video.view(), &ex.cond.ref_views(), &ex.cond.text_ids, 0.1).unwrap();
        assert!(matches!(model.forward(&seq), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let model = Denoiser::new(tiny(false), 11).unwrap();
        let meta = CheckpointMeta { stage: "pretrain".into(), step: 42, ..Default::default() };
        let ck = Checkpoint::of(&model, meta);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        ck.write(&p).unwrap();
        let back = Checkpoint::read(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), std::fs::read(&p).unwrap());
        let ex = example(1, 1);
        let seq = concat_latents(&model.config, ex.video.view(), &ex.cond.ref_views(), &ex.cond.text_ids, 0.3).unwrap();
        assert_eq!(back.into_model().unwrap().forward(&seq).unwrap(), model.forward(&seq).unwrap());
        assert!(matches!(Checkpoint::read(&dir.path().join("nope")), Err(crate::Error::MissingInput { .. })));
        std::fs::write(&p, b"garbage-bytes-here").unwrap();
        assert!(matches!(Checkpoint::read(&p), Err(crate::Error::Format { .. })));
    }
}
