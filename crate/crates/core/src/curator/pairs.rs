use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{order_identities, sample_frames, CurationConfig, KeptClip};
use crate::embed::{cosine, crop_subject, IdentityEmbedder};
use crate::error::{Error, Result};
use crate::seed;
use crate::synth::Clip;
use crate::tensorio::{self, DType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Pretrain,
    Cross,
    Tradeoff,
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairKind::Pretrain => "pretrain",
            PairKind::Cross => "cross",
            PairKind::Tradeoff => "tradeoff",
        })
    }
}

impl FromStr for PairKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pretrain" => Ok(PairKind::Pretrain),
            "cross" => Ok(PairKind::Cross),
            "tradeoff" => Ok(PairKind::Tradeoff),
            _ => Err(format!("unknown pair kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub video_id: String,
    pub ref_id: String,
    pub kind: PairKind,
    pub similarity: f64,
    pub slot: usize,
}

/// A similarity interval, half-open `[lo, hi)` or closed `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Interval {
    HalfOpen(f64, f64),
    Closed(f64, f64),
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Interval::HalfOpen(lo, hi) => lo <= v && v < hi,
            Interval::Closed(lo, hi) => lo <= v && v <= hi,
        }
    }
}

/// Metadata of one extracted reference crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefRecord {
    pub ref_id: String,
    pub clip_id: String,
    pub slot: usize,
    /// Position among the clip's references for this slot; 0 is `I_1`.
    pub rank: usize,
    pub frame: usize,
    /// Ground-truth identity, kept for diagnostics only.
    pub identity_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefImage {
    pub record: RefRecord,
    pub image: Array3<f64>,
    pub mask: Array2<bool>,
}

impl RefImage {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let id = &self.record.ref_id;
        tensorio::write(&dir.join(format!("{id}.bin")), &self.image.clone().into_dyn(), DType::F32)?;
        let m = self.mask.mapv(|b| if b { 1.0 } else { 0.0 }).into_dyn();
        tensorio::write(&dir.join(format!("{id}.mask.bin")), &m, DType::U8)
    }

    pub fn read(dir: &Path, record: RefRecord) -> Result<Self> {
        let id = &record.ref_id;
        let ip = dir.join(format!("{id}.bin"));
        let image = tensorio::read(&ip)?
            .into_dimensionality()
            .map_err(|e| Error::format(&ip, e.to_string()))?;
        let mp = dir.join(format!("{id}.mask.bin"));
        let mask: Array2<f64> = tensorio::read(&mp)?
            .into_dimensionality()
            .map_err(|e| Error::format(&mp, e.to_string()))?;
        Ok(RefImage {
            record,
            image,
            mask: mask.mapv(|v| v > 0.5),
        })
    }
}

/// The `I_1` reference of one clip slot with its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub ref_id: String,
    pub clip_id: String,
    pub slot: usize,
    pub embedding: Vec<f64>,
}

/// Uniformly spaced picks of `k` out of `n` positions, endpoints included.
pub(crate) fn uniform_picks(n: usize, k: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = k.min(n);
    if k == 1 {
        return vec![0];
    }
    (0..k)
        .map(|i| ((i * (n - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

pub struct PretrainOutcome {
    pub refs: Vec<RefImage>,
    pub pairs: Vec<PairRecord>,
    /// `I_1` of every clip slot.
    pub anchors: Vec<Anchor>,
    pub warnings: Vec<String>,
}

/// Extract up to `refs_per_clip` reference crops per clip slot from
/// uniformly spaced sampled frames and emit one pretrain record per crop.
/// Each record's similarity is the cosine between that crop and `I_1`.
pub fn build_pretrain_pairs(
    clips: &[(&Clip, &KeptClip)],
    config: &CurationConfig,
    embedder: &IdentityEmbedder,
) -> Result<PretrainOutcome> {
    let mut out = PretrainOutcome {
        refs: Vec::new(),
        pairs: Vec::new(),
        anchors: Vec::new(),
        warnings: Vec::new(),
    };
    for (clip, kept) in clips {
        let meta = &clip.meta;
        let sampled = sample_frames(meta.n_frames, meta.fps, config.sample_rate_hz);
        let (tracks, frames) = if kept.person_count > 1 {
            let o = order_identities(meta, &sampled);
            (o.tracks, o.agreeing_frames)
        } else {
            (vec![0], sampled)
        };
        for (slot, &track) in tracks.iter().enumerate() {
            // detectable frames: the subject has a box and its crop decodes
            let mut usable = Vec::new();
            for &f in &frames {
                let Some(b) = meta.face_boxes[f].iter().find(|b| b.subject_index == track) else {
                    continue;
                };
                let Ok((img, mask)) = crop_subject(clip.frame(f), &b.bbox, config.crop_margin) else {
                    continue;
                };
                let Ok(emb) = embedder.embed(img.view()) else {
                    continue;
                };
                usable.push((f, b.identity_id, img, mask, emb));
            }
            if usable.len() < config.refs_per_clip {
                out.warnings.push(format!(
                    "{} slot {slot}: {} detectable frames, fewer than {}",
                    meta.clip_id,
                    usable.len(),
                    config.refs_per_clip
                ));
            }
            let picks = uniform_picks(usable.len(), config.refs_per_clip);
            let mut first: Option<Vec<f64>> = None;
            for (rank, &p) in picks.iter().enumerate() {
                let (f, identity_id, img, mask, emb) = &usable[p];
                let ref_id = format!("{}_s{slot}_r{rank}", meta.clip_id);
                let sim = match &first {
                    None => {
                        first = Some(emb.clone());
                        out.anchors.push(Anchor {
                            ref_id: ref_id.clone(),
                            clip_id: meta.clip_id.clone(),
                            slot,
                            embedding: emb.clone(),
                        });
                        1.0
                    }
                    Some(f1) => cosine(emb, f1)?,
                };
                out.pairs.push(PairRecord {
                    video_id: meta.clip_id.clone(),
                    ref_id: ref_id.clone(),
                    kind: PairKind::Pretrain,
                    similarity: sim,
                    slot,
                });
                out.refs.push(RefImage {
                    record: RefRecord {
                        ref_id,
                        clip_id: meta.clip_id.clone(),
                        slot,
                        rank,
                        frame: *f,
                        identity_id: *identity_id,
                    },
                    image: img.clone(),
                    mask: mask.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Pairwise similarity index over anchors. Each row holds the other-clip
/// anchors sorted by similarity so band queries are two binary searches.
#[derive(Debug, Clone)]
pub struct BandIndex {
    rows: Vec<Vec<(f64, usize)>>,
}

impl BandIndex {
    pub fn new(anchors: &[Anchor]) -> Result<Self> {
        let n = anchors.len();
        let mut sims = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let s = cosine(&anchors[i].embedding, &anchors[j].embedding)?;
                sims[i][j] = s;
                sims[j][i] = s;
            }
        }
        let rows = (0..n)
            .map(|i| {
                let mut row: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| anchors[j].clip_id != anchors[i].clip_id)
                    .map(|j| (sims[i][j], j))
                    .collect();
                row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                row
            })
            .collect();
        Ok(BandIndex { rows })
    }

    /// Anchors from other clips whose similarity to `k` lies in `band`,
    /// sorted by similarity then index.
    pub fn candidates(&self, k: usize, band: Interval) -> Vec<(f64, usize)> {
        let row = &self.rows[k];
        let (start, end) = match band {
            Interval::HalfOpen(lo, hi) => (row.partition_point(|p| p.0 < lo), row.partition_point(|p| p.0 < hi)),
            Interval::Closed(lo, hi) => (row.partition_point(|p| p.0 < lo), row.partition_point(|p| p.0 <= hi)),
        };
        row[start..end.max(start)].to_vec()
    }
}

/// For each anchor's clip, draw one other-clip reference uniformly from the
/// band. Clips with no candidate are omitted.
pub fn build_cross_pairs(anchors: &[Anchor], band: Interval, rng_seed: u64) -> Result<Vec<PairRecord>> {
    let index = BandIndex::new(anchors)?;
    let mut out = Vec::new();
    for (k, a) in anchors.iter().enumerate() {
        let mut cands = index.candidates(k, band);
        if cands.is_empty() {
            continue;
        }
        cands.sort_by_key(|c| c.1);
        let mut rng = seed::rng(rng_seed, "cross", &[k as u64]);
        let (sim, j) = cands[rng.gen_range(0..cands.len())];
        out.push(PairRecord {
            video_id: a.clip_id.clone(),
            ref_id: anchors[j].ref_id.clone(),
            kind: PairKind::Cross,
            similarity: sim,
            slot: a.slot,
        });
    }
    Ok(out)
}

/// Cross pairs for multi-subject clips: every slot of `multi_clips` needs a
/// partner from another clip inside `band`, otherwise the clip is omitted.
/// `anchors` is the full pool (single- and multi-subject clips).
pub fn build_multi_cross_pairs(
    anchors: &[Anchor],
    multi_clips: &[String],
    band: Interval,
    rng_seed: u64,
) -> Result<Vec<PairRecord>> {
    let index = BandIndex::new(anchors)?;
    let mut out = Vec::new();
    for (ci, clip_id) in multi_clips.iter().enumerate() {
        let mut slots: Vec<usize> = (0..anchors.len()).filter(|&k| &anchors[k].clip_id == clip_id).collect();
        slots.sort_by_key(|&k| anchors[k].slot);
        let mut recs = Vec::new();
        for &k in &slots {
            let mut cands = index.candidates(k, band);
            if cands.is_empty() {
                recs.clear();
                break;
            }
            cands.sort_by_key(|c| c.1);
            let mut rng = seed::rng(rng_seed, "multi-cross", &[ci as u64, anchors[k].slot as u64]);
            let (sim, j) = cands[rng.gen_range(0..cands.len())];
            recs.push(PairRecord {
                video_id: clip_id.clone(),
                ref_id: anchors[j].ref_id.clone(),
                kind: PairKind::Cross,
                similarity: sim,
                slot: anchors[k].slot,
            });
        }
        out.extend(recs);
    }
    Ok(out)
}

/// Proxy quality scores of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    /// Color diversity: mean per-channel pixel standard deviation.
    pub aesthetics: f64,
    /// Mean absolute difference between consecutive frames.
    pub flow: f64,
    /// Total trajectory path length from metadata.
    pub motion: f64,
    /// Mean fraction of the frame covered by subject boxes.
    pub face_area: f64,
}

pub fn clip_scores(clip: &Clip, sampled: &[usize]) -> ClipScores {
    let meta = &clip.meta;
    let mut aesthetics = 0.0;
    for &f in sampled {
        let fr = clip.frame(f);
        for ch in 0..3 {
            let c = fr.slice(ndarray::s![.., .., ch]);
            let m = c.mean().unwrap_or(0.0);
            aesthetics += (c.mapv(|v| (v - m).powi(2)).mean().unwrap_or(0.0)).sqrt();
        }
    }
    aesthetics /= (3 * sampled.len().max(1)) as f64;
    let n = meta.n_frames;
    let flow = if n > 1 {
        (1..n)
            .map(|f| (&clip.frame(f) - &clip.frame(f - 1)).mapv(f64::abs).mean().unwrap_or(0.0))
            .sum::<f64>()
            / (n - 1) as f64
    } else {
        0.0
    };
    let motion = meta.scene.tracks.iter().map(|t| t.trajectory.path_length()).sum();
    let area = (meta.h * meta.w) as f64;
    let face_area = sampled
        .iter()
        .map(|&f| meta.face_boxes[f].iter().map(|b| b.area()).sum::<f64>() / area)
        .sum::<f64>()
        / sampled.len().max(1) as f64;
    ClipScores {
        aesthetics,
        flow,
        motion,
        face_area,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffOutcome {
    pub pairs: Vec<PairRecord>,
    /// Clips dropped by the face-area filter.
    pub area_excluded: Vec<String>,
    /// Weighted z-score of every ranked clip, best first.
    pub ranking: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

fn zscores(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    if v.is_empty() {
        return Vec::new();
    }
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| if sd > 0.0 { (x - m) / sd } else { 0.0 }).collect()
}

/// For each clip, the other-clip reference with the smallest similarity in
/// `band`; then the face-area filter, weighted ranking and top-k cut.
pub fn build_tradeoff_pairs(
    anchors: &[Anchor],
    scores: &BTreeMap<String, ClipScores>,
    band: Interval,
    face_area: [f64; 2],
    weights: [f64; 3],
    top_k: usize,
) -> Result<TradeoffOutcome> {
    let index = BandIndex::new(anchors)?;
    let mut chosen = Vec::new();
    let mut area_excluded = Vec::new();
    for (k, a) in anchors.iter().enumerate() {
        let Some(&(sim, j)) = index.candidates(k, band).first() else {
            continue;
        };
        let s = scores
            .get(&a.clip_id)
            .ok_or_else(|| Error::Config(format!("no proxy scores for {}", a.clip_id)))?;
        if s.face_area < face_area[0] || s.face_area > face_area[1] {
            area_excluded.push(a.clip_id.clone());
            continue;
        }
        chosen.push((k, j, sim, *s));
    }
    let za = zscores(&chosen.iter().map(|c| c.3.aesthetics).collect::<Vec<_>>());
    let zf = zscores(&chosen.iter().map(|c| c.3.flow).collect::<Vec<_>>());
    let zm = zscores(&chosen.iter().map(|c| c.3.motion).collect::<Vec<_>>());
    let mut ranked: Vec<(usize, f64)> = (0..chosen.len())
        .map(|i| (i, weights[0] * za[i] + weights[1] * zf[i] + weights[2] * zm[i]))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| anchors[chosen[a.0].0].clip_id.cmp(&anchors[chosen[b.0].0].clip_id))
    });
    let mut warnings = Vec::new();
    if top_k > ranked.len() {
        warnings.push(format!("top_k {top_k} exceeds {} available trade-off clips; keeping all", ranked.len()));
    }
    let ranking: Vec<(String, f64)> = ranked
        .iter()
        .map(|&(i, s)| (anchors[chosen[i].0].clip_id.clone(), s))
        .collect();
    let pairs = ranked
        .iter()
        .take(top_k)
        .map(|&(i, _)| {
            let (k, j, sim, _) = chosen[i];
            PairRecord {
                video_id: anchors[k].clip_id.clone(),
                ref_id: anchors[j].ref_id.clone(),
                kind: PairKind::Tradeoff,
                similarity: sim,
                slot: anchors[k].slot,
            }
        })
        .collect();
    Ok(TradeoffOutcome {
        pairs,
        area_excluded,
        ranking,
        warnings,
    })
}

/// Pair records as a tab-separated file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairManifest {
    pub records: Vec<PairRecord>,
}

const HEADER: &str = "video_id\tref_id\tkind\tsimilarity\tslot";

impl PairManifest {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.video_id, r.ref_id, r.kind, r.similarity, r.slot));
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::format(origin, "missing pair manifest header"));
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| Error::format(origin, format!("line {}: {what}", n + 2));
            if f.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            records.push(PairRecord {
                video_id: f[0].to_string(),
                ref_id: f[1].to_string(),
                kind: f[2].parse().map_err(|e: String| bad(&e))?,
                similarity: f[3].parse().map_err(|_| bad("bad similarity"))?,
                slot: f[4].parse().map_err(|_| bad("bad slot"))?,
            });
        }
        Ok(PairManifest { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput {
                    what: "pair manifest (run `curate` first)".into(),
                    path: path.to_path_buf(),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        PairManifest::parse(&text, path)
    }

    pub fn of_kind(&self, kind: PairKind) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn anchor(i: usize, v: Vec<f64>) -> Anchor {
        Anchor {
            ref_id: format!("r{i}"),
            clip_id: format!("c{i}"),
            slot: 0,
            embedding: v,
        }
    }

    #[test]
    fn uniform_picks_examples() {
        assert_eq!(uniform_picks(13, 5), vec![0, 3, 6, 9, 12]);
        assert_eq!(uniform_picks(3, 5), vec![0, 1, 2]);
        assert_eq!(uniform_picks(1, 5), vec![0]);
        assert!(uniform_picks(0, 5).is_empty());
    }

    #[test]
    fn interval_boundaries() {
        let h = Interval::HalfOpen(0.7, 0.9);
        assert!(h.contains(0.7) && !h.contains(0.9) && h.contains(0.8999999));
        let c = Interval::Closed(0.87, 0.97);
        assert!(c.contains(0.87) && c.contains(0.97) && !c.contains(0.9700001));
    }

    fn unit2(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin()]
    }

    #[test]
    fn tradeoff_picks_smallest_in_band() {
        // anchor 0 sees others at cos 0.91, 0.95, 0.98
        let a: Vec<Anchor> = [0.0, 0.91f64.acos(), 0.95f64.acos(), 0.98f64.acos()]
            .iter()
            .enumerate()
            .map(|(i, &t)| anchor(i, unit2(t)))
            .collect();
        let scores: BTreeMap<String, ClipScores> = (0..4)
            .map(|i| {
                (
                    format!("c{i}"),
                    ClipScores {
                        aesthetics: i as f64,
                        flow: 0.0,
                        motion: 0.0,
                        face_area: 0.2,
                    },
                )
            })
            .collect();
        let out = build_tradeoff_pairs(&a, &scores, Interval::HalfOpen(0.9, 0.99), [0.04, 0.9], [1.0 / 3.0; 3], 100).unwrap();
        let p0 = out.pairs.iter().find(|p| p.video_id == "c0").unwrap();
        assert_eq!(p0.ref_id, "r1");
        assert!((p0.similarity - 0.91).abs() < 1e-9);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn face_area_filter_excludes_small_and_large() {
        let a: Vec<Anchor> = (0..3).map(|i| anchor(i, unit2(i as f64 * 0.1))).collect();
        let areas = [0.03, 0.5, 0.95];
        let scores: BTreeMap<String, ClipScores> = (0..3)
            .map(|i| {
                (
                    format!("c{i}"),
                    ClipScores {
                        aesthetics: 0.0,
                        flow: 0.0,
                        motion: 0.0,
                        face_area: areas[i],
                    },
                )
            })
            .collect();
        let out = build_tradeoff_pairs(&a, &scores, Interval::HalfOpen(0.9, 0.999), [0.04, 0.9], [1.0 / 3.0; 3], 10).unwrap();
        assert_eq!(out.area_excluded, vec!["c0".to_string(), "c2".to_string()]);
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].video_id, "c1");
    }

    fn random_anchors(n: usize, seed_value: u64) -> Vec<Anchor> {
        let mut rng = seed::rng(seed_value, "anchors", &[]);
        // clustered so bands are populated
        let centers: Vec<Vec<f64>> = (0..(n / 4).max(1))
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (0..n)
            .map(|i| {
                let c = &centers[i % centers.len()];
                let v: Vec<f64> = c.iter().map(|x| x + rng.gen_range(-0.35..0.35)).collect();
                anchor(i, v)
            })
            .collect()
    }

    fn brute(anchors: &[Anchor], k: usize, lo: f64, hi: f64, closed: bool) -> BTreeSet<usize> {
        let mut s = BTreeSet::new();
        for j in 0..anchors.len() {
            if anchors[j].clip_id == anchors[k].clip_id {
                continue;
            }
            let a = &anchors[k].embedding;
            let b = &anchors[j].embedding;
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let c = (dot / (na * nb)).clamp(-1.0, 1.0);
            if lo <= c && (c < hi || (closed && c <= hi)) {
                s.insert(j);
            }
        }
        s
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn index_matches_quadratic_scan(n in 2usize..120, seed_value in 0u64..1000) {
            let anchors = random_anchors(n, seed_value);
            let index = BandIndex::new(&anchors).unwrap();
            for k in 0..n {
                for (band, lo, hi, closed) in [
                    (Interval::HalfOpen(0.7, 0.9), 0.7, 0.9, false),
                    (Interval::HalfOpen(0.9, 0.99), 0.9, 0.99, false),
                    (Interval::Closed(0.87, 0.97), 0.87, 0.97, true),
                ] {
                    let got: BTreeSet<usize> = index.candidates(k, band).into_iter().map(|c| c.1).collect();
                    prop_assert_eq!(got, brute(&anchors, k, lo, hi, closed));
                }
            }
        }

        #[test]
        fn cross_pairs_respect_band_and_are_deterministic(n in 2usize..80, seed_value in 0u64..1000) {
            let anchors = random_anchors(n, seed_value);
            let a = build_cross_pairs(&anchors, Interval::HalfOpen(0.7, 0.9), 3).unwrap();
            let b = build_cross_pairs(&anchors, Interval::HalfOpen(0.7, 0.9), 3).unwrap();
            prop_assert_eq!(&a, &b);
            for p in &a {
                prop_assert!((0.7..0.9).contains(&p.similarity));
                prop_assert!(p.ref_id != p.video_id.replace('c', "r"));
            }
            let with: BTreeSet<String> = a.iter().map(|p| p.video_id.clone()).collect();
            for k in 0..n {
                let has = !brute(&anchors, k, 0.7, 0.9, false).is_empty();
                prop_assert_eq!(has, with.contains(&anchors[k].clip_id));
            }
        }
    }

    #[test]
    fn ranking_matches_independent_sort() {
        let anchors = random_anchors(60, 4);
        let mut rng = seed::rng(8, "scores", &[]);
        let scores: BTreeMap<String, ClipScores> = anchors
            .iter()
            .map(|a| {
                (
                    a.clip_id.clone(),
                    ClipScores {
                        aesthetics: rng.gen_range(0.0..1.0),
                        flow: rng.gen_range(0.0..0.2),
                        motion: rng.gen_range(0.0..0.3),
                        face_area: rng.gen_range(0.02..0.95),
                    },
                )
            })
            .collect();
        let w = [0.5, 0.3, 0.2];
        let out = build_tradeoff_pairs(&anchors, &scores, Interval::HalfOpen(0.5, 0.99), [0.04, 0.9], w, 7).unwrap();
        // recompute from the ranked clip set
        let ids: Vec<&String> = out.ranking.iter().map(|r| &r.0).collect();
        let col = |f: fn(&ClipScores) -> f64| -> Vec<f64> { ids.iter().map(|id| f(&scores[*id])).collect() };
        let z = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
            v.into_iter().map(move |x| (x - m) / sd).collect::<Vec<f64>>()
        };
        let (a, f, m) = (z(col(|s| s.aesthetics)), z(col(|s| s.flow)), z(col(|s| s.motion)));
        let mut expect: Vec<(String, f64)> = (0..ids.len())
            .map(|i| (ids[i].clone(), w[0] * a[i] + w[1] * f[i] + w[2] * m[i]))
            .collect();
        expect.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        let got: Vec<&String> = out.pairs.iter().map(|p| &p.video_id).collect();
        let want: Vec<&String> = expect.iter().take(7).map(|e| &e.0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn manifest_round_trip() {
        let m = PairManifest {
            records: vec![
                PairRecord {
                    video_id: "clip_00001".into(),
                    ref_id: "clip_00002_s0_r0".into(),
                    kind: PairKind::Cross,
                    similarity: 0.812345678901234,
                    slot: 0,
                },
                PairRecord {
                    video_id: "clip_00003".into(),
                    ref_id: "clip_00003_s1_r2".into(),
                    kind: PairKind::Pretrain,
                    similarity: 1.0,
                    slot: 1,
                },
            ],
        };
        let back = PairManifest::parse(&m.to_tsv(), Path::new("x")).unwrap();
        assert_eq!(back, m);
        assert!(PairManifest::parse("bad\n", Path::new("x")).is_err());
    }
}
