use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::ArrayView4;
use serde::Serialize;

use seqcat::curator::{curate, run_calibration, Curation, CurationSummary};
use seqcat::embed::CalibrationReport;
use seqcat::eval::{build_probes, evaluate, make_report, EvalReport, EvalSettings, ProbeConfig};
use seqcat::latent::OrthoCodec;
use seqcat::model::{Checkpoint, Denoiser};
use seqcat::repro::{self, Check, ReproConfig, Workspace};
use seqcat::sampler::{sample, SamplerConfig};
use seqcat::synth::{generate_corpus, ClipMeta, Corpus};
use seqcat::tensorio::{self, DType};
use seqcat::trainer::{run_regimen, LatentStore};
use seqcat::Error;

use crate::config::RunConfig;
use crate::manifest;
use crate::{Cli, Command, EvalArgs, Experiment, ProbeKind, ReproArgs, SampleArgs};

struct Run {
    dir: PathBuf,
    cfg: ReproConfig,
}

impl Run {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn codec(&self) -> OrthoCodec {
        OrthoCodec::new(self.cfg.patch, self.cfg.seed)
    }

    fn corpus(&self) -> Result<Corpus> {
        Ok(Corpus::load(&self.path("corpus"))?)
    }

    fn curation(&self) -> Result<Curation> {
        Ok(Curation::load(&self.path("curation"))?)
    }

    fn noise_scale(&self, explicit: Option<f64>) -> Result<f64> {
        if let Some(s) = explicit {
            return Ok(s);
        }
        let p = self.path("curation/curation.json");
        if !p.exists() {
            return Err(Error::MissingInput {
                what: "calibrated noise scale (run `curate` or pass --noise-scale)".into(),
                path: p,
            }
            .into());
        }
        let s: CurationSummary = serde_json::from_slice(&fs::read(&p)?)?;
        Ok(s.noise_scale)
    }

    fn default_checkpoint(&self) -> Result<PathBuf> {
        let last = self.cfg.regimen.plans.last().map(|p| p.name.clone()).unwrap_or_default();
        Ok(self.path(&format!("train/{last}.ckpt")))
    }

    fn record(&self, command: &str, inputs: &[&str], outputs: &[&str]) -> Result<()> {
        let abs = |v: &[&str]| v.iter().map(|r| self.path(r)).collect::<Vec<_>>();
        manifest::record(&self.dir, command, &abs(inputs), &abs(outputs))
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let stored = cli.run_dir.join("config.toml");
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p, &cli.overrides)?,
        None if stored.exists() => RunConfig::load(&stored, &cli.overrides)?,
        None => RunConfig::parse(&RunConfig::default().to_toml()?, &cli.overrides)?,
    };
    if let Some(seed) = cli.seed {
        cfg.experiment = cfg.experiment.with_seed(seed);
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let rc = load_config(cli)?;
    if let Command::Config = cli.command {
        print!("{}", rc.to_toml()?);
        return Ok(());
    }
    fs::create_dir_all(&cli.run_dir).with_context(|| format!("creating {}", cli.run_dir.display()))?;
    let stored = cli.run_dir.join("config.toml");
    let starts_run = matches!(cli.command, Command::Synth | Command::Repro(_));
    if starts_run || !stored.exists() {
        fs::write(&stored, rc.to_toml()?).with_context(|| format!("writing {}", stored.display()))?;
    }
    let run = Run { dir: cli.run_dir.clone(), cfg: rc.resolved() };
    match &cli.command {
        Command::Synth => synth(&run),
        Command::Calibrate => calibrate(&run),
        Command::Curate(a) => curate_cmd(&run, a.noise_scale),
        Command::Train => train(&run),
        Command::Sample(a) => sample_cmd(&run, a),
        Command::Eval(a) => eval_cmd(&run, a),
        Command::Report => report(&run),
        Command::Repro(a) => repro_cmd(&run, a),
        Command::Config => unreachable!(),
    }
}

fn synth(run: &Run) -> Result<()> {
    let corpus = generate_corpus(&run.cfg.corpus)?;
    let dir = run.path("corpus");
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    let m = corpus.write(&dir)?;
    println!("wrote {} clips to {}", m.clips.len(), dir.display());
    run.record("synth", &["config.toml"], &["corpus"])
}

fn calibrate(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let r: CalibrationReport = run_calibration(&corpus, &run.cfg.curation)?;
    let p = run.path("calibration.json");
    r.write(&p)?;
    println!(
        "noise scale {:.2} (bands satisfied: {}, same-identity floor {:.3})",
        r.noise_scale, r.satisfied, r.same_floor
    );
    run.record("calibrate", &["corpus/manifest.json"], &["calibration.json"])
}

fn curate_cmd(run: &Run, noise: Option<f64>) -> Result<()> {
    let corpus = run.corpus()?;
    let cal = run.path("calibration.json");
    let noise = match noise {
        Some(s) => Some(s),
        None if cal.exists() => Some(CalibrationReport::read(&cal)?.noise_scale),
        None => None,
    };
    let c = curate(&corpus, &run.cfg.curation, noise)?;
    let dir = run.path("curation");
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    c.write(&dir)?;
    println!("kept {} of {} clips; pairs {:?}", c.summary.kept.len(), corpus.clips.len(), c.summary.counts);
    run.record("curate", &["corpus/manifest.json"], &["curation"])
}

fn store(run: &Run) -> Result<(Corpus, Curation, LatentStore)> {
    let corpus = run.corpus()?;
    let curation = run.curation()?;
    let store = LatentStore::build(&corpus, &curation, &run.codec(), run.cfg.regimen.model.text_len)?;
    Ok((corpus, curation, store))
}

fn train(run: &Run) -> Result<()> {
    let (_, curation, store) = store(run)?;
    let dir = run.path("train");
    if dir.join("metrics.jsonl").exists() {
        fs::remove_file(dir.join("metrics.jsonl"))?;
    }
    let out = run_regimen(&run.cfg.regimen, &store, &curation.pairs, run.cfg.patch, Some(&dir), None, &mut |_, _| Ok(None))?;
    for p in &out.checkpoints {
        println!("wrote {}", p.display());
    }
    run.record("train", &["config.toml", "curation/pairs.tsv"], &["train"])
}

fn load_model(path: &Path) -> Result<Denoiser> {
    Ok(Checkpoint::read(path)?.into_model()?)
}

/// Frames side by side as a binary PPM.
fn write_strip(path: &Path, video: ArrayView4<f64>) -> Result<()> {
    let (t, h, w, _) = video.dim();
    let mut out = format!("P6\n{} {}\n255\n", t * w, h).into_bytes();
    for y in 0..h {
        for f in 0..t {
            for x in 0..w {
                for c in 0..3 {
                    out.push((video[[f, y, x, c]].clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct SampleInfo<'a> {
    checkpoint: String,
    caption: &'a str,
    refs: Vec<String>,
    sampler: SamplerConfig,
}

fn sample_cmd(run: &Run, a: &SampleArgs) -> Result<()> {
    let ckpt = match &a.checkpoint {
        Some(p) => p.clone(),
        None => run.default_checkpoint()?,
    };
    let model = load_model(&ckpt)?;
    let mut sc = run.cfg.sampler;
    sc.steps = a.steps.unwrap_or(sc.steps);
    sc.guidance_text = a.guidance_text.unwrap_or(sc.guidance_text);
    sc.guidance_image = a.guidance_image.unwrap_or(sc.guidance_image);
    let (refs, caption, labels) = if a.ref_ids.is_empty() {
        let pc = ProbeConfig { n_subjects: if a.two_subjects { 2 } else { 1 }, ..run.cfg.probes.clone() };
        let probes = build_probes(&pc)?;
        let n = probes.len();
        let p = probes
            .into_iter()
            .nth(a.probe)
            .ok_or_else(|| Error::Config(format!("probe {} out of range ({n} probes)", a.probe)))?;
        (p.refs, p.caption, vec![p.probe_id])
    } else {
        let cur = run.curation()?;
        let mut refs = Vec::new();
        let mut caption = String::new();
        for id in &a.ref_ids {
            let r = cur
                .ref_by_id(id)
                .ok_or_else(|| Error::Config(format!("no curated reference `{id}`")))?;
            if caption.is_empty() {
                let mp = run.path(&format!("corpus/clips/{}.json", r.record.clip_id));
                let meta: ClipMeta = serde_json::from_slice(
                    &fs::read(&mp).map_err(|e| Error::MissingInput { what: format!("clip metadata ({e})"), path: mp.clone() })?,
                )?;
                caption = meta.caption;
            }
            refs.push((r.image.clone(), r.mask.clone()));
        }
        (refs, caption, a.ref_ids.clone())
    };
    let caption = a.caption.clone().unwrap_or(caption);
    let views: Vec<_> = refs.iter().map(|(i, m)| (i.view(), m.view())).collect();
    let video = sample(&model, &run.codec(), &views, &caption, &sc)?;
    let dir = run.path("samples");
    fs::create_dir_all(&dir)?;
    let bin = dir.join(format!("{}.bin", a.name));
    tensorio::write(&bin, &video.clone().into_dyn(), DType::F32)?;
    write_strip(&dir.join(format!("{}.ppm", a.name)), video.view())?;
    let info = SampleInfo { checkpoint: ckpt.display().to_string(), caption: &caption, refs: labels, sampler: sc };
    fs::write(dir.join(format!("{}.json", a.name)), serde_json::to_vec_pretty(&info)?)?;
    println!("\"{caption}\" -> {}", bin.display());
    run.record("sample", &[], &[&format!("samples/{}.bin", a.name)])
}

fn eval_cmd(run: &Run, a: &EvalArgs) -> Result<()> {
    let ckpt = match &a.checkpoint {
        Some(p) => p.clone(),
        None => run.default_checkpoint()?,
    };
    let model = load_model(&ckpt)?;
    let settings = EvalSettings { sampler: run.cfg.sampler, noise_scale: run.noise_scale(a.noise_scale)? };
    let pc = ProbeConfig { n_subjects: if a.probes == ProbeKind::Multi { 2 } else { 1 }, ..run.cfg.probes.clone() };
    let probes = build_probes(&pc)?;
    let (row, scores) = evaluate(&a.tag, &model, &run.codec(), &probes, &settings)?;
    let dir = run.path(&format!("eval/{}", a.tag));
    let report = make_report(vec![row])?;
    report.write(&dir)?;
    fs::write(dir.join("scores.json"), serde_json::to_vec_pretty(&scores)?)?;
    print!("{}", report.to_table());
    run.record("eval", &[], &[&format!("eval/{}", a.tag)])
}

fn report_dirs(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if !root.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<_> = fs::read_dir(root)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            if p.join("report.json").exists() {
                out.push(p.clone());
            }
            report_dirs(&p, out)?;
        }
    }
    Ok(())
}

fn report(run: &Run) -> Result<()> {
    let mut dirs = Vec::new();
    report_dirs(&run.path("eval"), &mut dirs)?;
    report_dirs(&run.path("repro"), &mut dirs)?;
    if dirs.is_empty() {
        return Err(Error::MissingInput { what: "evaluation reports (run `eval` or `repro` first)".into(), path: run.dir.clone() }.into());
    }
    let mut rows = Vec::new();
    for d in &dirs {
        rows.extend(EvalReport::read(d)?.rows);
    }
    let merged = make_report(rows)?;
    let out = run.path("report");
    merged.write(&out)?;
    print!("{}", merged.to_table());
    run.record("report", &[], &["report"])
}

fn print_checks(title: &str, checks: &[Check], dir: &Path) -> Result<()> {
    println!("{title}");
    for c in checks {
        println!("  {} {:<18} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    fs::write(dir.join("checks.json"), serde_json::to_vec_pretty(checks)?)?;
    Ok(())
}

fn need(p: PathBuf, what: &str) -> Result<PathBuf> {
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::MissingInput { what: what.into(), path: p }.into())
    }
}

fn parse_scales(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let (t, i) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("scale `{pair}` must look like text:image")))?;
            let parse = |x: &str| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad scale `{x}`")));
            Ok((parse(t)?, parse(i)?))
        })
        .collect()
}

fn repro_cmd(run: &Run, a: &ReproArgs) -> Result<()> {
    let cfg = &run.cfg;
    let stage_dir = run.path("repro/stage-ordering");
    let final_ckpt = || {
        let last = cfg.regimen.plans.last().map(|p| p.name.clone()).unwrap_or_default();
        need(stage_dir.join(format!("{last}.ckpt")), "single-identity model (run `repro stage-ordering` first)")
    };
    match a.experiment {
        Experiment::StageOrdering => {
            let ws = Workspace::prepare(cfg)?;
            if stage_dir.exists() {
                fs::remove_dir_all(&stage_dir)?;
            }
            let out = repro::stage_ordering(cfg, &ws, Some(&stage_dir))?;
            print!("{}", out.report.to_table());
            let tags: Vec<&str> = cfg.regimen.plans.iter().map(|p| p.name.as_str()).collect();
            if tags.len() != 3 {
                bail!("stage ordering checks need exactly three plans, config has {}", tags.len());
            }
            let checks = repro::stage_ordering_checks(&out.report, [tags[0], tags[1], tags[2]], 0.02)?;
            print_checks("stage ordering", &checks, &stage_dir)?;
            run.record("repro stage-ordering", &["config.toml"], &["repro/stage-ordering"])
        }
        Experiment::Transfer => {
            let single = load_model(&final_ckpt()?)?;
            let ws = Workspace::prepare(cfg)?;
            let dir = run.path("repro/transfer");
            let out = repro::transfer(cfg, &ws, &single, Some(&dir))?;
            print!("{}", out.report.to_table());
            print_checks("transfer", &repro::transfer_checks(&out.report, 0.02)?, &dir)?;
            run.record("repro transfer", &["repro/stage-ordering"], &["repro/transfer"])
        }
        Experiment::Order => {
            let p = need(
                run.path(&format!("repro/transfer/{0}/{0}.ckpt", repro::FROM_SINGLE)),
                "two-identity model (run `repro transfer` first)",
            )?;
            let o = repro::order_control(cfg, &load_model(&p)?, &run.codec())?;
            let dir = run.path("repro/order");
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("order.json"), serde_json::to_vec_pretty(&o)?)?;
            println!(
                "order control: {}/{} scenes flipped ({:.0}%), {} decided",
                o.flipped,
                o.scenes,
                100.0 * o.fraction(),
                o.decided
            );
            run.record("repro order", &["repro/transfer"], &["repro/order"])
        }
        Experiment::Overfit => {
            let o = repro::overfit(cfg)?;
            let dir = run.path("repro/overfit");
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("overfit.json"), serde_json::to_vec_pretty(&o)?)?;
            println!(
                "overfit: loss {:.4} -> {:.4} ({:.1}x), idsim own {:?} other {:?}",
                o.initial_loss,
                o.final_loss,
                o.loss_ratio(),
                o.idsim_same,
                o.idsim_other
            );
            run.record("repro overfit", &["config.toml"], &["repro/overfit"])
        }
        Experiment::Guidance => {
            let model = load_model(&final_ckpt()?)?;
            let ws = Workspace::prepare(cfg)?;
            let rep = repro::guidance_sweep(cfg, &ws, &model, &parse_scales(&a.scales)?)?;
            let dir = run.path("repro/guidance");
            rep.write(&dir)?;
            print!("{}", rep.to_table());
            run.record("repro guidance", &["repro/stage-ordering"], &["repro/guidance"])
        }
    }
}
