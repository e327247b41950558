use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pairs::{
    build_cross_pairs, build_multi_cross_pairs, build_pretrain_pairs, build_tradeoff_pairs, clip_scores,
    Interval, PairManifest, RefImage, RefRecord,
};
use super::{run_filters, sample_frames, CurationConfig, FilterReport, KeptClip};
use crate::embed::{calibrate, crop_subject, default_grid, CalibrationReport, EmbedderConfig, IdentityEmbedder};
use crate::error::{Error, Result};
use crate::synth::{Clip, Corpus};

/// Summary written next to the pair manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub config: CurationConfig,
    pub noise_scale: f64,
    pub kept: Vec<KeptClip>,
    pub refs: Vec<RefRecord>,
    pub tradeoff_ranking: Vec<(String, f64)>,
    pub area_excluded: Vec<String>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct Curation {
    pub summary: CurationSummary,
    pub report: FilterReport,
    pub calibration: Option<CalibrationReport>,
    pub refs: Vec<RefImage>,
    pub pairs: PairManifest,
}

/// Decode the first-frame crop of every single-subject clip whose caption
/// passes, tagged with its ground-truth identity, for noise calibration.
pub fn calibration_refs(corpus: &Corpus, config: &CurationConfig) -> Vec<(u32, crate::embed::SubjectDecode)> {
    let metas: Vec<_> = corpus.clips.iter().map(|c| &c.meta).collect();
    let (kept, _) = super::filter_by_caption(&metas, &config.term_table);
    let det = crate::embed::Detector::default();
    let mut out = Vec::new();
    for i in kept {
        let c = &corpus.clips[i];
        if c.meta.n_subjects() != 1 || c.meta.scene.tracks[0].swap.is_some() {
            continue;
        }
        let Some(b) = c.meta.face_boxes[0].first() else {
            continue;
        };
        let Ok((crop, _)) = crop_subject(c.frame(0), &b.bbox, config.crop_margin) else {
            continue;
        };
        if let Some(d) = det.detect_primary(crop.view()) {
            out.push((b.identity_id, d.decode));
        }
    }
    out
}

/// Run noise calibration for the designated (A) embedder.
pub fn run_calibration(corpus: &Corpus, config: &CurationConfig) -> Result<CalibrationReport> {
    let refs = calibration_refs(corpus, config);
    calibrate(EmbedderConfig::noisy_a(0.0), &refs, &default_grid(), 0.2)
}

/// Full curation: filters, references and all pair kinds.
///
/// `noise_scale` defaults to a fresh calibration when `None`.
pub fn curate(corpus: &Corpus, config: &CurationConfig, noise_scale: Option<f64>) -> Result<Curation> {
    config.validate()?;
    let (noise_scale, calibration) = match noise_scale {
        Some(s) => (s, None),
        None => {
            let r = run_calibration(corpus, config)?;
            (r.noise_scale, Some(r))
        }
    };
    let embedder = IdentityEmbedder::new(EmbedderConfig::noisy_a(noise_scale))?;
    let clips: Vec<&Clip> = corpus.clips.iter().collect();
    let mut report = FilterReport::default();
    let kept = run_filters(&clips, config, &embedder, &mut report)?;

    let by_id: BTreeMap<&str, &Clip> = corpus.clips.iter().map(|c| (c.meta.clip_id.as_str(), c)).collect();
    let kept_pairs: Vec<(&Clip, &KeptClip)> = kept.iter().map(|k| (by_id[k.clip_id.as_str()], k)).collect();
    let pre = build_pretrain_pairs(&kept_pairs, config, &embedder)?;
    report.warnings.extend(pre.warnings.iter().cloned());

    let multi: Vec<String> = kept.iter().filter(|k| k.person_count > 1).map(|k| k.clip_id.clone()).collect();
    let single_anchors: Vec<_> = pre
        .anchors
        .iter()
        .filter(|a| !multi.contains(&a.clip_id))
        .cloned()
        .collect();
    let cross = build_cross_pairs(
        &single_anchors,
        Interval::HalfOpen(config.cross_band[0], config.cross_band[1]),
        config.seed,
    )?;
    let multi_cross = build_multi_cross_pairs(
        &pre.anchors,
        &multi,
        Interval::Closed(config.multi_cross_band[0], config.multi_cross_band[1]),
        config.seed,
    )?;
    let mut scores = BTreeMap::new();
    for a in &single_anchors {
        let c = by_id[a.clip_id.as_str()];
        let sampled = sample_frames(c.meta.n_frames, c.meta.fps, config.sample_rate_hz);
        scores.insert(a.clip_id.clone(), clip_scores(c, &sampled));
    }
    let trade = build_tradeoff_pairs(
        &single_anchors,
        &scores,
        Interval::HalfOpen(config.tradeoff_band[0], config.tradeoff_band[1]),
        [config.face_area_min, config.face_area_max],
        config.score_weights,
        config.tradeoff_top_k,
    )?;
    report.warnings.extend(trade.warnings.iter().cloned());

    let mut records = pre.pairs;
    records.extend(cross);
    records.extend(multi_cross);
    records.extend(trade.pairs);
    let pairs = PairManifest { records };
    let mut counts = BTreeMap::new();
    for r in &pairs.records {
        let key = if multi.contains(&r.video_id) { format!("{}_multi", r.kind) } else { r.kind.to_string() };
        *counts.entry(key).or_insert(0) += 1;
    }
    Ok(Curation {
        summary: CurationSummary {
            config: config.clone(),
            noise_scale,
            kept,
            refs: pre.refs.iter().map(|r| r.record.clone()).collect(),
            tradeoff_ranking: trade.ranking,
            area_excluded: trade.area_excluded,
            counts,
        },
        report,
        calibration,
        refs: pre.refs,
        pairs,
    })
}

impl Curation {
    /// Layout: `pairs.tsv`, `filter_report.json`, `curation.json`,
    /// optional `calibration.json`, and `refs/` with one image and mask per
    /// reference.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let rd = dir.join("refs");
        fs::create_dir_all(&rd).map_err(|e| Error::io(&rd, e))?;
        for r in &self.refs {
            r.write(&rd)?;
        }
        self.pairs.write(&dir.join("pairs.tsv"))?;
        self.report.write(&dir.join("filter_report.json"))?;
        if let Some(c) = &self.calibration {
            c.write(&dir.join("calibration.json"))?;
        }
        let p = dir.join("curation.json");
        fs::write(&p, serde_json::to_vec_pretty(&self.summary)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Curation> {
        let sp = dir.join("curation.json");
        if !sp.exists() {
            return Err(Error::MissingInput {
                what: "curation output (run `curate` first)".into(),
                path: sp,
            });
        }
        let b = fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
        let summary: CurationSummary = serde_json::from_slice(&b)?;
        let rd = dir.join("refs");
        let refs = summary
            .refs
            .iter()
            .map(|r| RefImage::read(&rd, r.clone()))
            .collect::<Result<Vec<_>>>()?;
        let cp = dir.join("calibration.json");
        let calibration = if cp.exists() { Some(CalibrationReport::read(&cp)?) } else { None };
        Ok(Curation {
            report: FilterReport::read(&dir.join("filter_report.json"))?,
            pairs: PairManifest::read(&dir.join("pairs.tsv"))?,
            summary,
            calibration,
            refs,
        })
    }

    pub fn ref_by_id(&self, id: &str) -> Option<&RefImage> {
        self.refs.iter().find(|r| r.record.ref_id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curator::PairKind;
    use crate::synth::{generate_corpus, CorpusConfig};

    #[test]
    fn end_to_end_small_corpus_round_trips() {
        let corpus = generate_corpus(&CorpusConfig {
            n_identities: 12,
            clips_per_identity: 3,
            two_identity_clips: 4,
            n_frames: 9,
            h: 32,
            w: 32,
            ..CorpusConfig::default()
        })
        .unwrap();
        let cfg = CurationConfig::default();
        let cur = curate(&corpus, &cfg, None).unwrap();
        for r in &cur.pairs.records {
            match r.kind {
                PairKind::Pretrain => assert!(r.ref_id.starts_with(&r.video_id)),
                PairKind::Cross => {
                    assert!(!r.ref_id.starts_with(&r.video_id));
                    assert!((0.7..0.9).contains(&r.similarity) || (0.87..=0.97).contains(&r.similarity));
                }
                PairKind::Tradeoff => assert!((0.9..0.99).contains(&r.similarity)),
            }
        }
        assert!(cur.pairs.of_kind(PairKind::Pretrain).count() > 0);
        assert!(cur.pairs.of_kind(PairKind::Cross).count() > 0);
        // pretrain similarity equals a recomputation against I_1
        let e = IdentityEmbedder::new(EmbedderConfig::noisy_a(cur.summary.noise_scale)).unwrap();
        for r in cur.pairs.of_kind(PairKind::Pretrain).take(20) {
            let img = &cur.ref_by_id(&r.ref_id).unwrap().image;
            let first = format!("{}_s{}_r0", r.video_id, r.slot);
            let f = &cur.ref_by_id(&first).unwrap().image;
            let s = crate::embed::cosine(&e.embed(img.view()).unwrap(), &e.embed(f.view()).unwrap()).unwrap();
            assert!((s - r.similarity).abs() < 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        cur.write(dir.path()).unwrap();
        let back = Curation::load(dir.path()).unwrap();
        assert_eq!(back.pairs, cur.pairs);
        assert_eq!(back.summary, cur.summary);
        assert_eq!(back.refs, cur.refs);
    }
}
