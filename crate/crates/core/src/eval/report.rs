use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotScores {
    pub idsim_a: Option<f64>,
    pub idsim_b: Option<f64>,
}

/// One evaluated run (a method, stage or ablation).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub tag: String,
    pub idsim_a: Option<f64>,
    pub idsim_b: Option<f64>,
    pub align: Option<f64>,
    pub editdist: Option<f64>,
    pub detection_rate: f64,
    pub n_videos: usize,
    /// Per-identity-slot breakdown; empty for single-identity runs.
    #[serde(default)]
    pub slots: Vec<SlotScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const COLUMNS: [&str; 4] = ["idsim_A", "idsim_B", "align", "editdist"];

pub fn make_report(rows: Vec<EvalRow>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Empty("report needs at least one run".into()));
    }
    Ok(EvalReport { rows })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    fn n_slots(&self) -> usize {
        self.rows.iter().map(|r| r.slots.len()).max().unwrap_or(0)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["tag".to_string()];
        h.extend(COLUMNS.iter().map(|s| s.to_string()));
        h.push("detection_rate".into());
        h.push("n_videos".into());
        for s in 0..self.n_slots() {
            h.push(format!("idsim_A_identity{}", s + 1));
            h.push(format!("idsim_B_identity{}", s + 1));
        }
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        let ns = self.n_slots();
        self.rows
            .iter()
            .map(|r| {
                let mut c = vec![
                    r.tag.clone(),
                    cell(r.idsim_a),
                    cell(r.idsim_b),
                    cell(r.align),
                    cell(r.editdist),
                    format!("{:.4}", r.detection_rate),
                    r.n_videos.to_string(),
                ];
                for s in 0..ns {
                    let sc = r.slots.get(s).cloned().unwrap_or_default();
                    c.push(cell(sc.idsim_a));
                    c.push(cell(sc.idsim_b));
                }
                c
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header().join("\t");
        out.push('\n');
        for r in self.cells() {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let header = self.header();
        let rows = self.cells();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap())
            .collect();
        let line = |r: &[String]| {
            r.iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = String::new();
        out.push_str("                 identity consistency   align  editability\n");
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn row(&self, tag: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.tag == tag)
    }

    /// Writes `report.json`, `report.tsv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let w = |name: &str, b: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, b).map_err(|e| Error::io(&p, e))
        };
        w("report.json", &serde_json::to_vec_pretty(self)?)?;
        w("report.tsv", self.to_tsv().as_bytes())?;
        w("report.txt", self.to_table().as_bytes())
    }

    pub fn read(dir: &Path) -> Result<EvalReport> {
        let p = dir.join("report.json");
        if !p.exists() {
            return Err(Error::MissingInput { what: "evaluation report".into(), path: p });
        }
        let b = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_slice(&b)?)
    }
}
