use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use seqcat::repro::ReproConfig;
use seqcat::Error;

/// Published constants. They are copied over the matching fields of the
/// experiment config, so a deviation has to be made here, visibly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperDefaults {
    pub sample_rate_hz: f64,
    pub refs_per_clip: usize,
    pub count_deviation_frac: f64,
    pub identity_min_similarity: f64,
    pub identity_deviation_frac: f64,
    pub cross_band: [f64; 2],
    pub tradeoff_band: [f64; 2],
    pub face_area_min: f64,
    pub face_area_max: f64,
    pub drop_text: f64,
    pub drop_image: f64,
    pub lr_pretrain: f64,
    pub lr_cross: f64,
    pub lr_tradeoff: f64,
}

impl Default for PaperDefaults {
    fn default() -> Self {
        PaperDefaults {
            sample_rate_hz: 2.0,
            refs_per_clip: 5,
            count_deviation_frac: 0.3,
            identity_min_similarity: 0.5,
            identity_deviation_frac: 0.3,
            cross_band: [0.7, 0.9],
            tradeoff_band: [0.9, 0.99],
            face_area_min: 0.04,
            face_area_max: 0.9,
            drop_text: 0.1,
            drop_image: 0.1,
            lr_pretrain: 1e-5,
            lr_cross: 5e-6,
            lr_tradeoff: 5e-6,
        }
    }
}

/// The run configuration file: `[paper_defaults]` plus `[experiment]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub paper_defaults: PaperDefaults,
    pub experiment: ReproConfig,
}

impl RunConfig {
    /// The experiment config with the published constants applied. Stage
    /// learning rates stay as configured under `experiment.regimen.plans`;
    /// the published ones are recorded in the regimen's `paper_defaults`.
    pub fn resolved(&self) -> ReproConfig {
        let p = &self.paper_defaults;
        let mut e = self.experiment.clone();
        let c = &mut e.curation;
        c.sample_rate_hz = p.sample_rate_hz;
        c.refs_per_clip = p.refs_per_clip;
        c.count_deviation_frac = p.count_deviation_frac;
        c.identity_min_similarity = p.identity_min_similarity;
        c.identity_deviation_frac = p.identity_deviation_frac;
        c.cross_band = p.cross_band;
        c.tradeoff_band = p.tradeoff_band;
        c.face_area_min = p.face_area_min;
        c.face_area_max = p.face_area_max;
        e.regimen.train.drop_text = p.drop_text;
        e.regimen.train.drop_image = p.drop_image;
        let r = &mut e.regimen.paper_defaults;
        r.lr_pretrain = p.lr_pretrain;
        r.lr_cross = p.lr_cross;
        r.lr_tradeoff = p.lr_tradeoff;
        r.drop_text = p.drop_text;
        r.drop_image = p.drop_image;
        e
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Parse config text, applying `key.path=value` overrides first.
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("config does not match the schema: {e}")))?;
        cfg.resolved().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        if !path.exists() {
            return Err(Error::MissingInput { what: "config file".into(), path: path.to_path_buf() }.into());
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::parse(&text, overrides)
    }
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` must look like key.path=value")))?;
    // a bare word that is not a TOML literal is taken as a string
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    if !t.contains_key(*part) {
                        return Err(Error::Config(format!("unknown config key `{key}`")).into());
                    }
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?
            }
            toml::Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("`{part}` in `{key}` is not an array index")))?;
                let n = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| Error::Config(format!("index {idx} out of range ({n}) in `{key}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("`{key}` descends into a scalar")).into()),
        };
    }
    Ok(())
}
