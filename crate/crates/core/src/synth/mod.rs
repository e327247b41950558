//! Procedural glyph-subject videos with exact ground truth.

pub mod corpus;
pub mod identity;
pub mod render;
pub mod scene;

pub use corpus::{generate_corpus, Clip, ClipMeta, Corpus, CorpusConfig, FixtureLabel, FPS};
pub use identity::{sample_identity, Hue, IdentityKey, IdentitySpec, ShapeCode};
pub use render::{FaceBox, RenderedClip, Renderer};
pub use scene::{Action, Background, SceneSpec, SubjectTrack};
