use std::collections::BTreeMap;

use ndarray::{Array2, Array3};

use crate::curator::{Curation, PairKind, PairManifest};
use crate::error::{Error, Result};
use crate::latent::{Codec, SourceKind};
use crate::model::{preprocess_reference, tokenize, ConditioningBundle, TrainExample};
use crate::synth::Corpus;

/// Scaled latents of every kept clip and curated reference.
#[derive(Debug, Clone)]
pub struct LatentStore {
    pub videos: BTreeMap<String, Array3<f64>>,
    pub texts: BTreeMap<String, Vec<usize>>,
    pub refs: BTreeMap<String, Array2<f64>>,
    pub person_count: BTreeMap<String, usize>,
    pub latent_scale: f64,
    pub h_lat: usize,
    pub w_lat: usize,
}

impl LatentStore {
    /// Encode kept clips and references; the latent scale is the RMS of
    /// the kept video latents.
    pub fn build(corpus: &Corpus, curation: &Curation, codec: &dyn Codec, text_len: usize) -> Result<LatentStore> {
        if curation.summary.kept.is_empty() {
            return Err(Error::Empty("curation kept no clips".into()));
        }
        let mut raw = BTreeMap::new();
        let mut texts = BTreeMap::new();
        let mut person_count = BTreeMap::new();
        let (mut sq, mut n) = (0.0, 0usize);
        let (mut h_lat, mut w_lat) = (0, 0);
        for k in &curation.summary.kept {
            let clip = corpus.get(&k.clip_id).ok_or_else(|| Error::MissingInput {
                what: format!("clip {} named by curation", k.clip_id),
                path: "corpus".into(),
            })?;
            let z = codec.encode_video(clip.frames.view())?;
            h_lat = z.h_lat;
            w_lat = z.w_lat;
            sq += z.grid.iter().map(|v| v * v).sum::<f64>();
            n += z.grid.len();
            raw.insert(k.clip_id.clone(), z.grid);
            texts.insert(k.clip_id.clone(), tokenize(&clip.meta.caption, text_len));
            person_count.insert(k.clip_id.clone(), k.person_count);
        }
        let scale = (sq / n as f64).sqrt();
        let videos = raw.into_iter().map(|(k, v)| (k, v / scale)).collect();
        let (th, tw) = (h_lat * codec.patch(), w_lat * codec.patch());
        let mut refs = BTreeMap::new();
        for r in &curation.refs {
            let (img, _) = preprocess_reference(r.image.view(), r.mask.view(), th, tw)?;
            let z = codec.encode_image(img.view(), SourceKind::IdentityFace)?;
            refs.insert(r.record.ref_id.clone(), z.grid / scale);
        }
        Ok(LatentStore { videos, texts, refs, person_count, latent_scale: scale, h_lat, w_lat })
    }

    pub fn t_lat(&self) -> usize {
        self.videos.values().next().map_or(0, |v| v.dim().0)
    }

    pub fn channels(&self) -> usize {
        self.videos.values().next().map_or(0, |v| v.dim().2)
    }

    pub fn example(&self, ix: &ExampleIndex) -> Result<TrainExample> {
        let missing = |what: &str, id: &str| Error::MissingInput { what: format!("{what} {id}"), path: "latent store".into() };
        let video = self.videos.get(&ix.video_id).ok_or_else(|| missing("video", &ix.video_id))?.clone();
        let text = self.texts[&ix.video_id].clone();
        let refs = ix
            .ref_ids
            .iter()
            .map(|r| self.refs.get(r).cloned().ok_or_else(|| missing("reference", r)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainExample { video, cond: ConditioningBundle::new(refs, text) })
    }
}

/// A training example by id: one video and its ordered references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleIndex {
    pub video_id: String,
    pub ref_ids: Vec<String>,
}

/// Examples of one pair kind.
///
/// Single-identity mode uses clips with one subject and one reference per
/// pair. Multi-identity mode uses two-subject clips; per video the `k`-th
/// reference of every slot (cycled) forms one ordered reference list.
pub fn stage_examples(manifest: &PairManifest, kind: PairKind, store: &LatentStore, multi: bool) -> Vec<ExampleIndex> {
    let want = if multi { 2 } else { 1 };
    let mut by_video: BTreeMap<&str, BTreeMap<usize, Vec<&str>>> = BTreeMap::new();
    for r in manifest.of_kind(kind) {
        if store.person_count.get(&r.video_id) != Some(&want) || !store.refs.contains_key(&r.ref_id) {
            continue;
        }
        by_video.entry(&r.video_id).or_default().entry(r.slot).or_default().push(&r.ref_id);
    }
    let mut out = Vec::new();
    for (vid, slots) in by_video {
        if slots.len() != want || slots.keys().copied().ne(0..want) {
            continue;
        }
        let n = slots.values().map(|v| v.len()).max().unwrap_or(0);
        for k in 0..n {
            out.push(ExampleIndex {
                video_id: vid.to_string(),
                ref_ids: slots.values().map(|v| v[k % v.len()].to_string()).collect(),
            });
        }
    }
    out
}
