//! Corpus synthesis and the on-disk corpus layout.
//!
//! ```text
//! <dir>/manifest.json          every clip with content hashes
//! <dir>/clips/<id>.bin         frames, tensor file (f32, N×H×W×3)
//! <dir>/clips/<id>.json        metadata sidecar
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array4, ArrayD};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::identity::{sample_identity, IdentitySpec};
use super::render::{FaceBox, Renderer};
use super::scene::{sample_scene, Action, Background, SceneSpec, Swap};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensorio::{self, DType};

/// Frame rate recorded in every clip's metadata.
pub const FPS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    /// Identities `identity_offset .. identity_offset + n_identities` are used.
    pub n_identities: u32,
    #[serde(default)]
    pub identity_offset: u32,
    pub clips_per_identity: usize,
    pub n_frames: usize,
    pub h: usize,
    pub w: usize,
    /// Additional two-subject clips built from random identity pairs.
    #[serde(default)]
    pub two_identity_clips: usize,
    /// Fractions are relative to the number of single-subject clips.
    pub no_subject_frac: f64,
    pub count_inconsistent_frac: f64,
    pub identity_swap_frac: f64,
    /// Set when downstream curation will build cross-video pairs.
    #[serde(default = "yes")]
    pub require_cross_pairs: bool,
}

fn yes() -> bool {
    true
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            n_identities: 50,
            identity_offset: 0,
            clips_per_identity: 4,
            n_frames: 17,
            h: 64,
            w: 64,
            two_identity_clips: 0,
            no_subject_frac: 0.1,
            count_inconsistent_frac: 0.05,
            identity_swap_frac: 0.05,
            require_cross_pairs: true,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.require_cross_pairs && self.clips_per_identity < 2 {
            return Err(Error::Config(
                "cross-video pairing needs clips_per_identity >= 2".into(),
            ));
        }
        if self.n_frames == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Config("frame geometry must be positive".into()));
        }
        for (name, v) in [
            ("no_subject_frac", self.no_subject_frac),
            ("count_inconsistent_frac", self.count_inconsistent_frac),
            ("identity_swap_frac", self.identity_swap_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        let needs_two = self.two_identity_clips > 0
            || self.count_inconsistent_frac > 0.0
            || self.identity_swap_frac > 0.0;
        if self.n_identities == 0 || (needs_two && self.n_identities < 2) {
            return Err(Error::Config("not enough identities for the requested clips".into()));
        }
        Ok(())
    }

    pub fn renderer(&self) -> Renderer {
        Renderer::new(self.h, self.w)
    }
}

/// Ground-truth label of deliberately broken clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureLabel {
    Clean,
    NoSubject,
    CountInconsistent,
    IdentitySwap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    /// Identities in track order.
    pub identity_ids: Vec<u32>,
    /// Every identity the renderer was given (includes swap partners).
    pub identities: Vec<IdentitySpec>,
    pub scene: SceneSpec,
    pub caption: String,
    pub fps: f64,
    pub n_frames: usize,
    pub h: usize,
    pub w: usize,
    pub face_boxes: Vec<Vec<FaceBox>>,
    pub label: FixtureLabel,
}

impl ClipMeta {
    pub fn n_subjects(&self) -> usize {
        self.scene.n_subjects()
    }
}

#[derive(Debug, Clone)]
pub struct Clip {
    pub meta: ClipMeta,
    /// `(N, H, W, 3)`.
    pub frames: Array4<f64>,
}

impl Clip {
    pub fn frame(&self, f: usize) -> ndarray::ArrayView3<'_, f64> {
        self.frames.slice(ndarray::s![f, .., .., ..])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub frames_file: String,
    pub meta_file: String,
    pub frames_sha256: String,
    pub meta_sha256: String,
    pub label: FixtureLabel,
    pub n_subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: CorpusConfig,
    pub clips: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub clips: Vec<Clip>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Quantize to f32 so in-memory frames equal what a reload produces.
fn quantize(frames: Array4<f64>) -> Array4<f64> {
    frames.mapv(|v| v as f32 as f64)
}

enum Plan {
    Single(u32),
    Pair(u32, u32),
    Empty,
    CountInconsistent(u32, u32),
    Swap(u32, u32),
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let renderer = config.renderer();
    let ids: Vec<u32> = (0..config.n_identities)
        .map(|i| i + config.identity_offset)
        .collect();
    let mut plan_rng = seed::rng(config.seed, "corpus-plan", &[]);
    let mut plans = Vec::new();
    for &id in &ids {
        for _ in 0..config.clips_per_identity {
            plans.push(Plan::Single(id));
        }
    }
    let n_single = plans.len();
    let pick_two = |rng: &mut rand_chacha::ChaCha8Rng| {
        let a = rng.gen_range(0..ids.len());
        let mut b = rng.gen_range(0..ids.len() - 1);
        if b >= a {
            b += 1;
        }
        (ids[a], ids[b])
    };
    for _ in 0..config.two_identity_clips {
        let (a, b) = pick_two(&mut plan_rng);
        plans.push(Plan::Pair(a, b));
    }
    let count = |frac: f64| (frac * n_single as f64).round() as usize;
    for _ in 0..count(config.no_subject_frac) {
        plans.push(Plan::Empty);
    }
    for _ in 0..count(config.count_inconsistent_frac) {
        let (a, b) = pick_two(&mut plan_rng);
        plans.push(Plan::CountInconsistent(a, b));
    }
    for _ in 0..count(config.identity_swap_frac) {
        let (a, b) = pick_two(&mut plan_rng);
        plans.push(Plan::Swap(a, b));
    }

    let n = config.n_frames;
    let swap_period = (FPS / 2.0).round() as usize;
    let mut clips = Vec::with_capacity(plans.len());
    for (ci, plan) in plans.iter().enumerate() {
        let mut attempt = 0u64;
        let clip = loop {
            let mut rng = seed::rng(config.seed, "clip", &[ci as u64, attempt]);
            let action = Action::ALL[rng.gen_range(0..Action::ALL.len())];
            let bg = Background::ALL[rng.gen_range(0..Background::ALL.len())];
            let (identities, scene, label) = match *plan {
                Plan::Single(id) => (
                    vec![sample_identity(config.seed, id)],
                    sample_scene(&mut rng, action, bg, 1),
                    FixtureLabel::Clean,
                ),
                Plan::Pair(a, b) => (
                    vec![sample_identity(config.seed, a), sample_identity(config.seed, b)],
                    sample_scene(&mut rng, action, bg, 2),
                    FixtureLabel::Clean,
                ),
                Plan::Empty => (Vec::new(), SceneSpec::empty(bg), FixtureLabel::NoSubject),
                Plan::CountInconsistent(a, b) => {
                    let mut scene = sample_scene(&mut rng, action, bg, 2);
                    scene.tracks[1].appears_at = n / 2 + 1;
                    (
                        vec![sample_identity(config.seed, a), sample_identity(config.seed, b)],
                        scene,
                        FixtureLabel::CountInconsistent,
                    )
                }
                Plan::Swap(a, b) => {
                    let mut scene = sample_scene(&mut rng, action, bg, 1);
                    scene.tracks[0].swap = Some(Swap {
                        alt_slot: 1,
                        period: swap_period,
                    });
                    (
                        vec![sample_identity(config.seed, a), sample_identity(config.seed, b)],
                        scene,
                        FixtureLabel::IdentitySwap,
                    )
                }
            };
            match renderer.render_clip(&identities, &scene, n) {
                Ok(rc) => {
                    break Clip {
                        meta: ClipMeta {
                            clip_id: format!("clip_{ci:05}"),
                            identity_ids: rc.identity_ids,
                            identities,
                            scene,
                            caption: rc.caption,
                            fps: FPS,
                            n_frames: n,
                            h: config.h,
                            w: config.w,
                            face_boxes: rc.face_boxes,
                            label,
                        },
                        frames: quantize(rc.frames),
                    }
                }
                Err(e) if attempt < 16 => {
                    log::debug!("clip {ci} attempt {attempt} rejected: {e}");
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        clips.push(clip);
    }
    Ok(Corpus {
        config: config.clone(),
        clips,
    })
}

impl Corpus {
    pub fn get(&self, clip_id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.meta.clip_id == clip_id)
    }

    /// Write the corpus and return the manifest.
    pub fn write(&self, dir: &Path) -> Result<CorpusManifest> {
        let clip_dir = dir.join("clips");
        fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
        let mut entries = Vec::with_capacity(self.clips.len());
        for clip in &self.clips {
            let id = &clip.meta.clip_id;
            let frames_file = format!("clips/{id}.bin");
            let meta_file = format!("clips/{id}.json");
            let tensor = tensorio::encode(&clip.frames.clone().into_dyn(), DType::F32);
            let meta = serde_json::to_vec_pretty(&clip.meta)?;
            let fp = dir.join(&frames_file);
            fs::write(&fp, &tensor).map_err(|e| Error::io(&fp, e))?;
            let mp = dir.join(&meta_file);
            fs::write(&mp, &meta).map_err(|e| Error::io(&mp, e))?;
            entries.push(ManifestEntry {
                clip_id: id.clone(),
                frames_file,
                meta_file,
                frames_sha256: sha256_hex(&tensor),
                meta_sha256: sha256_hex(&meta),
                label: clip.meta.label,
                n_subjects: clip.meta.n_subjects(),
            });
        }
        let manifest = CorpusManifest {
            config: self.config.clone(),
            clips: entries,
        };
        let mp = dir.join("manifest.json");
        fs::write(&mp, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;
        Ok(manifest)
    }

    /// Load a corpus directory, verifying every content hash.
    pub fn load(dir: &Path) -> Result<Corpus> {
        let mp = dir.join("manifest.json");
        if !mp.exists() {
            return Err(Error::MissingInput {
                what: "corpus manifest (run `synth` first)".into(),
                path: mp,
            });
        }
        let bytes = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
        let manifest: CorpusManifest = serde_json::from_slice(&bytes)?;
        let mut clips = Vec::with_capacity(manifest.clips.len());
        for e in &manifest.clips {
            let fp = dir.join(&e.frames_file);
            let fb = fs::read(&fp).map_err(|err| Error::io(&fp, err))?;
            if sha256_hex(&fb) != e.frames_sha256 {
                return Err(Error::format(&fp, "content hash mismatch"));
            }
            let mpath = dir.join(&e.meta_file);
            let mb = fs::read(&mpath).map_err(|err| Error::io(&mpath, err))?;
            if sha256_hex(&mb) != e.meta_sha256 {
                return Err(Error::format(&mpath, "content hash mismatch"));
            }
            let (arr, _) = tensorio::decode(&fb, &fp)?;
            let frames = into4(arr, &fp)?;
            clips.push(Clip {
                meta: serde_json::from_slice(&mb)?,
                frames,
            });
        }
        Ok(Corpus {
            config: manifest.config,
            clips,
        })
    }
}

fn into4(arr: ArrayD<f64>, origin: &Path) -> Result<Array4<f64>> {
    arr.into_dimensionality()
        .map_err(|e| Error::format(origin, format!("expected a 4-d tensor: {e}")))
}

/// SHA-256 of the manifest file of a written corpus.
pub fn manifest_hash(dir: &Path) -> Result<String> {
    let mp = dir.join("manifest.json");
    let bytes = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
    Ok(sha256_hex(&bytes))
}
