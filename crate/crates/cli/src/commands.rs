use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use crseg_core::blackbox::{cr_pbgd, pbgd, BlackBoxAttackConfig, BlackBoxRun};
use crseg_core::ftz::save_tensor;
use crseg_core::regretlab::{
    estimator_diagnostics, lab_report_csv, lab_report_rows, regret_sweep, ConvexTestbed, StepSchedule,
};
use crseg_core::results::{iter_trace_csv, mean_std, summarize, write_attack_result, AttackSummary};
use crseg_core::smoothing::{certify, SmoothingConfig};
use crseg_core::toymodel::{
    fast_adt, gen_synthetic_dataset, load_dataset, save_dataset, train, FastAdtConfig, ModelConfig, Sample,
    ShapeKind, SynthDatasetSpec, ToySegModel, TrainConfig,
};
use crseg_core::whitebox::{cr_fgsm, cr_pgd, dag, fgsm, pgd, DagConfig, WhiteBoxAttackConfig, WhiteBoxRun};
use crseg_core::{Error, NormKind, Perturbation, RandomSource};

use crate::config::{ExperimentConfig, KeySpec};

pub const GEN_DATA_KEYS: &[KeySpec] = &[
    ("seed", "0", "dataset seed"),
    ("count", "64", "number of images"),
    ("height", "32", "image height"),
    ("width", "32", "image width"),
    ("channels", "3", "image channels"),
    ("classes", "4", "classes including background"),
    ("contrast", "0.1", "shape colour distance from the background grey"),
    ("texture_std", "0.05", "per-value Gaussian texture"),
    ("shapes", "rectangle,disk", "shape palette"),
];

const MODEL_KEYS: &[KeySpec] = &[
    ("seed", "0", "initialisation and shuffling seed"),
    ("data", "", "training dataset directory"),
    ("hidden", "32", "hidden units"),
    ("patch_radius", "2", "context pixels on each side"),
    ("epochs", "60", "training epochs"),
    ("lr", "0.05", "learning rate"),
    ("batch_size", "8", "mini-batch size"),
    ("momentum", "0.9", "SGD momentum"),
];

const SMOOTHING_KEYS: &[KeySpec] = &[
    ("sigma", "0.001", "smoothing noise std"),
    ("samples", "8", "Monte-Carlo samples M"),
    ("a", "2", "weight slope"),
    ("b", "-4", "weight offset"),
    ("interval", "auto", "weight refresh interval (M white-box, 2M black-box)"),
];

const DEFEND_KEYS: &[KeySpec] = &[
    ("method", "fastadt", "fastadt or cr_fastadt"),
    ("eps", "0.03", "linf training budget"),
    ("alpha", "auto", "signed step size (0.5 eps)"),
    ("inner_steps", "5", "guided PGD iterations for cr_fastadt"),
];

const CERTIFY_KEYS: &[KeySpec] = &[
    ("seed", "0", "noise seed"),
    ("model", "", "checkpoint directory"),
    ("data", "", "dataset directory"),
    ("images", "0", "first n images (0 = all)"),
    ("threads", "0", "worker threads (0 = all cores)"),
];

const ATTACK_KEYS: &[KeySpec] = &[
    ("seed", "0", "attack seed"),
    ("model", "", "checkpoint directory"),
    ("data", "", "dataset directory"),
    ("images", "0", "first n images (0 = all)"),
    ("threads", "0", "worker threads (0 = all cores)"),
    ("attack", "pgd", "fgsm, cr_fgsm, pgd, cr_pgd, dag, pbgd or cr_pbgd"),
    ("norm", "linf", "l1, l2 or linf"),
    ("eps", "0.03", "perturbation budget"),
    ("steps", "20", "iterations T"),
    ("alpha", "auto", "step size"),
    ("gamma", "0.01", "bandit finite-difference radius"),
    ("query_limit", "0", "per-image query cap (0 = none)"),
    ("bookkeeping", "0", "evaluate L(delta) every n bandit rounds (0 = off)"),
    ("dag_step", "0.00196078431372549", "DAG linf step"),
    ("record_wall_time", "false", "add wall_ms to summaries"),
];

pub const REGRET_KEYS: &[KeySpec] = &[
    ("seed", "0", "lab seed"),
    ("objective", "quadratic", "quadratic or piecewise_linear"),
    ("optimum", "0.3,-0.2", "location of the minimiser"),
    ("radius", "1", "domain ball radius"),
    ("shift", "0", "constant added to the objective"),
    ("horizons", "1000,10000,100000", "regret horizons T"),
    ("schedule", "theoretical", "theoretical or fixed"),
    ("alpha", "", "step size, required when schedule = fixed"),
    ("gamma", "", "smoothing radius, required when schedule = fixed"),
    ("diag_point", "", "diagnostics point (default: midway to the optimum)"),
    ("diag_gammas", "0.1,0.01,0.001,0.0001", "diagnostics radii"),
    ("diag_samples", "10000", "diagnostics samples per radius"),
];

pub const REPORT_KEYS: &[KeySpec] = &[("seed", "0", "unused"), ("runs", "", "attack output directories")];

fn merge(parts: &[&'static [KeySpec]]) -> Vec<KeySpec> {
    let mut keys: Vec<KeySpec> = Vec::new();
    for part in parts {
        for k in part.iter() {
            if !keys.iter().any(|e| e.0 == k.0) {
                keys.push(*k);
            }
        }
    }
    keys
}

pub fn train_schema() -> Vec<KeySpec> {
    merge(&[MODEL_KEYS])
}

pub fn defend_schema() -> Vec<KeySpec> {
    merge(&[MODEL_KEYS, DEFEND_KEYS, SMOOTHING_KEYS])
}

pub fn certify_schema() -> Vec<KeySpec> {
    merge(&[CERTIFY_KEYS, SMOOTHING_KEYS])
}

pub fn attack_schema() -> Vec<KeySpec> {
    merge(&[ATTACK_KEYS, SMOOTHING_KEYS])
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Creates `out` and records the resolved config, seed and source version.
pub fn prepare_out(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("resolved.cfg"), cfg.to_text())?;
    fs::write(
        out.join("provenance.txt"),
        format!("git_describe = {}\nseed = {}\n", git_describe(), cfg.raw("seed")),
    )?;
    Ok(())
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    let threads: usize = cfg.get("threads")?;
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn load_images(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    let dir: PathBuf = cfg.get("data")?;
    let mut data = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let n: usize = cfg.get("images")?;
    if n > 0 {
        data.truncate(n);
    }
    if data.is_empty() {
        bail!("dataset {} has no images", dir.display());
    }
    Ok(data)
}

fn load_model(cfg: &ExperimentConfig) -> Result<ToySegModel> {
    let dir: PathBuf = cfg.get("model")?;
    ToySegModel::load(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn smoothing(cfg: &ExperimentConfig, default_interval: impl Fn(usize) -> usize) -> Result<SmoothingConfig> {
    let samples: usize = cfg.get("samples")?;
    let s = SmoothingConfig {
        sigma: cfg.get("sigma")?,
        samples,
        a: cfg.get("a")?,
        b: cfg.get("b")?,
        interval: cfg.get_opt("interval")?.unwrap_or_else(|| default_interval(samples)),
    };
    s.validate()?;
    Ok(s)
}

fn parse_shape(s: &str) -> Result<ShapeKind> {
    match s {
        "rectangle" | "rect" => Ok(ShapeKind::Rectangle),
        "disk" | "circle" => Ok(ShapeKind::Disk),
        _ => bail!("unknown shape {s:?}; expected rectangle or disk"),
    }
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let spec = SynthDatasetSpec {
        count: cfg.get("count")?,
        height: cfg.get("height")?,
        width: cfg.get("width")?,
        channels: cfg.get("channels")?,
        num_classes: cfg.get("classes")?,
        shapes: cfg
            .get_list::<String>("shapes")?
            .iter()
            .map(|s| parse_shape(s))
            .collect::<Result<_>>()?,
        texture_std: cfg.get("texture_std")?,
        contrast: cfg.get("contrast")?,
        seed: cfg.get("seed")?,
    };
    let data = gen_synthetic_dataset(&spec)?;
    save_dataset(out, &data, spec.num_classes)?;
    println!("wrote {} images to {}", data.len(), out.display());
    Ok(())
}

fn new_model(cfg: &ExperimentConfig, data: &[Sample]) -> Result<(ToySegModel, TrainConfig)> {
    let first = data.first().context("empty training set")?;
    let shape = first.image.shape();
    let num_classes = data.iter().map(|s| s.labels.max_label()).max().unwrap_or(0) as usize + 1;
    let mcfg = ModelConfig {
        height: shape.height,
        width: shape.width,
        channels: shape.channels,
        num_classes: num_classes.max(2),
        patch_radius: cfg.get("patch_radius")?,
        hidden: cfg.get("hidden")?,
    };
    let seed: u64 = cfg.get("seed")?;
    let model = ToySegModel::new(mcfg, &RandomSource::new(seed).derive("init"))?;
    let tc = TrainConfig {
        epochs: cfg.get("epochs")?,
        lr: cfg.get("lr")?,
        batch_size: cfg.get("batch_size")?,
        momentum: cfg.get("momentum")?,
    };
    Ok((model, tc))
}

fn write_losses(out: &Path, losses: &[f64]) -> Result<()> {
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, l));
    }
    fs::write(out.join("train_loss.csv"), csv)?;
    Ok(())
}

pub fn train_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dir: PathBuf = cfg.get("data")?;
    let data = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let (mut model, tc) = new_model(cfg, &data)?;
    let seed: u64 = cfg.get("seed")?;
    let report = train(&mut model, &data, &tc, &RandomSource::new(seed).derive("train"))?;
    model.save(out.join("model"))?;
    write_losses(out, &report.epoch_losses)?;
    println!(
        "trained {} epochs, final loss {:.4}",
        report.epoch_losses.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn defend_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dir: PathBuf = cfg.get("data")?;
    let data = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let (mut model, tc) = new_model(cfg, &data)?;
    let eps: f64 = cfg.get("eps")?;
    let mut adt = FastAdtConfig::new(eps, tc);
    if let Some(alpha) = cfg.get_opt("alpha")? {
        adt.alpha = alpha;
    }
    adt.inner_steps = cfg.get("inner_steps")?;
    adt.cr_flag = match cfg.raw("method") {
        "fastadt" => false,
        "cr_fastadt" => true,
        m => bail!("unknown defense {m:?}; expected fastadt or cr_fastadt"),
    };
    adt.smoothing = smoothing(cfg, |_| adt.inner_steps.max(1))?;
    let seed: u64 = cfg.get("seed")?;
    let report = fast_adt(&mut model, &data, &adt, &RandomSource::new(seed).derive("train"))?;
    model.save(out.join("model"))?;
    write_losses(out, &report.epoch_losses)?;
    println!("{} trained {} epochs", cfg.raw("method"), report.epoch_losses.len());
    Ok(())
}

pub fn certify_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg)?;
    let data = load_images(cfg)?;
    let sm = smoothing(cfg, |m| m)?;
    let root = RandomSource::new(cfg.get("seed")?).derive("certify");
    pool(cfg)?.install(|| {
        data.par_iter().enumerate().try_for_each(|(i, s)| -> Result<()> {
            let (cr, w) = certify(&model, &s.image, &sm, &root.split(i as u64))?;
            save_tensor(out.join(format!("cr_{i:04}.ftz")), &cr.to_raw()?)?;
            save_tensor(out.join(format!("w_{i:04}.ftz")), &w.to_raw()?)?;
            Ok(())
        })
    })?;
    println!("certified {} images", data.len());
    Ok(())
}

struct ImageOutcome {
    summary: AttackSummary,
    exhausted: bool,
}

fn bandit_csv(run: &BlackBoxRun) -> String {
    run.trace.to_csv()
}

fn white_csv(run: &WhiteBoxRun) -> String {
    iter_trace_csv(&run.trace)
}

fn white_queries(run: &WhiteBoxRun) -> u64 {
    run.trace.last().map_or(0, |r| r.queries)
}

pub fn attack_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg)?;
    let data = load_images(cfg)?;
    let attack = cfg.raw("attack").to_string();
    let norm: NormKind = cfg.get("norm")?;
    let eps: f64 = cfg.get("eps")?;
    let steps: usize = cfg.get("steps")?;
    let alpha: Option<f64> = cfg.get_opt("alpha")?;
    let record_wall = cfg.get_bool("record_wall_time")?;
    let black = matches!(attack.as_str(), "pbgd" | "cr_pbgd");
    let sm = smoothing(cfg, |m| if black { 2 * m } else { m })?;
    let mut wcfg = WhiteBoxAttackConfig::new(norm, eps, steps);
    if let Some(a) = alpha {
        wcfg.alpha = a;
    }
    let wcfg = wcfg.with_cr(sm);
    let limit: u64 = cfg.get("query_limit")?;
    let bookkeeping: usize = cfg.get("bookkeeping")?;
    let bcfg = BlackBoxAttackConfig {
        gamma: cfg.get("gamma")?,
        query_limit: (limit > 0).then_some(limit),
        bookkeeping: (bookkeeping > 0).then_some(bookkeeping),
        ..BlackBoxAttackConfig::new(norm, eps, steps, alpha.unwrap_or(5e-4)).with_cr(sm)
    };
    let dag_cfg = DagConfig {
        step_size: cfg.get("dag_step")?,
        ..DagConfig::new(eps, steps)
    };
    if attack == "dag" && norm != NormKind::Linf {
        bail!("dag is an linf attack; set norm = linf");
    }
    let root = RandomSource::new(cfg.get("seed")?).derive("attack");

    let run_one = |i: usize, s: &Sample| -> Result<ImageOutcome> {
        let rng = root.split(i as u64);
        let start = Instant::now();
        let (delta, csv, queries, exhausted): (Perturbation, String, u64, bool) = match attack.as_str() {
            "fgsm" => {
                let r = fgsm(&model, &s.image, &s.labels, norm, eps)?;
                (r.perturbation.clone(), white_csv(&r), 0, false)
            }
            "cr_fgsm" => {
                let r = cr_fgsm(&model, &s.image, &s.labels, norm, eps, &sm, &rng)?;
                let q = white_queries(&r);
                (r.perturbation.clone(), white_csv(&r), q, false)
            }
            "pgd" => {
                let r = pgd(&model, &s.image, &s.labels, &wcfg)?;
                (r.perturbation.clone(), white_csv(&r), 0, false)
            }
            "cr_pgd" => {
                let r = cr_pgd(&model, &s.image, &s.labels, &wcfg, &rng)?;
                let q = white_queries(&r);
                (r.perturbation.clone(), white_csv(&r), q, false)
            }
            "dag" => {
                let r = dag(&model, &s.image, &s.labels, &dag_cfg)?;
                (r.perturbation.clone(), white_csv(&r), 0, false)
            }
            "pbgd" => {
                let r = pbgd(&model, &s.image, &s.labels, &bcfg, &rng)?;
                (r.perturbation.clone(), bandit_csv(&r), r.queries, r.exhausted)
            }
            "cr_pbgd" => {
                let r = cr_pbgd(&model, &s.image, &s.labels, &bcfg, &rng)?;
                (r.perturbation.clone(), bandit_csv(&r), r.queries, r.exhausted)
            }
            other => bail!("unknown attack {other:?}"),
        };
        let mut summary = summarize(&model, &attack, &s.image, &s.labels, &delta)?;
        summary.queries = queries;
        if record_wall {
            summary.wall_ms = Some(start.elapsed().as_millis() as u64);
        }
        write_attack_result(out, &format!("img_{i:04}"), &delta, s.image.shape(), &csv, &summary)?;
        Ok(ImageOutcome { summary, exhausted })
    };

    let outcomes: Vec<ImageOutcome> = pool(cfg)?.install(|| {
        data.par_iter()
            .enumerate()
            .map(|(i, s)| run_one(i, s).with_context(|| format!("image {i}")))
            .collect::<Result<_>>()
    })?;
    let summaries: Vec<&AttackSummary> = outcomes.iter().map(|o| &o.summary).collect();
    let aggregate = aggregate_json(&attack, norm, eps, &summaries);
    fs::write(out.join("aggregate.json"), format!("{}\n", serde_json::to_string_pretty(&aggregate)?))?;
    let table = aggregate_table(&aggregate);
    fs::write(out.join("aggregate.txt"), &table)?;
    print!("{table}");
    let exhausted = outcomes.iter().filter(|o| o.exhausted).count();
    if exhausted > 0 {
        let limit = bcfg.query_limit.unwrap_or(0);
        return Err(Error::BudgetExhausted { limit })
            .with_context(|| format!("{exhausted} of {} images ran out of queries", outcomes.len()));
    }
    Ok(())
}

fn aggregate_json(attack: &str, norm: NormKind, eps: f64, rows: &[&AttackSummary]) -> serde_json::Value {
    let col = |f: fn(&AttackSummary) -> f64| {
        let values: Vec<f64> = rows.iter().map(|r| f(r)).collect();
        let m = mean_std(&values);
        json!({"mean": m.mean, "std": m.std})
    };
    json!({
        "attack": attack,
        "norm": norm,
        "eps": eps,
        "images": rows.len(),
        "pixacc_clean": col(|r| r.pixacc_clean),
        "pixacc_attacked": col(|r| r.pixacc_attacked),
        "miou_clean": col(|r| r.miou_clean),
        "miou_attacked": col(|r| r.miou_attacked),
        "queries": col(|r| r.queries as f64),
    })
}

fn stat(v: &serde_json::Value, key: &str) -> (f64, f64) {
    (
        v[key]["mean"].as_f64().unwrap_or(f64::NAN),
        v[key]["std"].as_f64().unwrap_or(f64::NAN),
    )
}

fn aggregate_table(v: &serde_json::Value) -> String {
    let mut out = format!(
        "attack {} norm {} eps {} over {} images\n",
        v["attack"].as_str().unwrap_or("?"),
        v["norm"].as_str().unwrap_or("?"),
        v["eps"],
        v["images"]
    );
    out.push_str(&format!("{:<10}{:>18}{:>18}\n", "metric", "clean", "attacked"));
    for (name, clean, attacked) in [
        ("PixAcc", "pixacc_clean", "pixacc_attacked"),
        ("MIoU", "miou_clean", "miou_attacked"),
    ] {
        let (cm, cs) = stat(v, clean);
        let (am, as_) = stat(v, attacked);
        out.push_str(&format!(
            "{name:<10}{:>18}{:>18}\n",
            format!("{cm:.4} ± {cs:.4}"),
            format!("{am:.4} ± {as_:.4}")
        ));
    }
    let (qm, _) = stat(v, "queries");
    out.push_str(&format!("{:<10}{:>36.1}\n", "queries", qm));
    out
}

pub fn regret_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let optimum: Vec<f64> = cfg.get_list("optimum")?;
    let radius: f64 = cfg.get("radius")?;
    let testbed = match cfg.raw("objective") {
        "quadratic" => ConvexTestbed::quadratic(optimum.clone(), radius)?,
        "piecewise_linear" => ConvexTestbed::piecewise_linear(optimum.clone(), radius)?,
        o => bail!("unknown objective {o:?}; expected quadratic or piecewise_linear"),
    }
    .with_shift(cfg.get("shift")?);
    let schedule = match cfg.raw("schedule") {
        "theoretical" => StepSchedule::Theoretical,
        "fixed" => StepSchedule::Fixed {
            alpha: cfg.get("alpha")?,
            gamma: cfg.get("gamma")?,
        },
        s => bail!("unknown schedule {s:?}; expected theoretical or fixed"),
    };
    let root = RandomSource::new(cfg.get("seed")?);
    let horizons: Vec<usize> = cfg.get_list("horizons")?;
    let sweep = if horizons.len() >= 2 {
        Some(regret_sweep(&testbed, &horizons, schedule, &root.derive("regret"))?)
    } else {
        None
    };
    let gammas: Vec<f64> = cfg.get_list("diag_gammas")?;
    let diags = if gammas.is_empty() {
        Vec::new()
    } else {
        let point: Vec<f64> = match cfg.get_list::<f64>("diag_point")? {
            p if p.is_empty() => optimum.iter().map(|v| 0.5 * v).collect(),
            p => p,
        };
        estimator_diagnostics(&testbed, &point, &gammas, cfg.get("diag_samples")?, &root.derive("diagnostics"))?
    };
    let rows = lab_report_rows(testbed.dim(), sweep.as_ref(), &diags);
    let csv = lab_report_csv(&rows);
    fs::write(out.join("report.csv"), &csv)?;
    print!("{csv}");
    if let Some(s) = &sweep {
        println!(
            "slope {:.3}; average regret decreasing: {}",
            s.slope,
            s.average_regret_decreasing()
        );
    }
    Ok(())
}

pub fn report_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let runs: Vec<PathBuf> = cfg.get_list("runs")?;
    if runs.is_empty() {
        bail!("report needs at least one run directory in \"runs\"");
    }
    let mut rows = Vec::new();
    for dir in &runs {
        let path = dir.join("aggregate.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        rows.push(v);
    }
    let mut csv = String::from("attack,norm,eps,pixacc,miou,pixacc_clean,miou_clean,queries\n");
    let mut table = format!(
        "{:<10}{:<6}{:>10}{:>10}{:>10}{:>12}\n",
        "attack", "norm", "eps", "PixAcc", "MIoU", "queries"
    );
    for v in &rows {
        let attack = v["attack"].as_str().unwrap_or("?");
        let norm = v["norm"].as_str().unwrap_or("?");
        let eps = v["eps"].as_f64().unwrap_or(f64::NAN);
        let (pa, _) = stat(v, "pixacc_attacked");
        let (mi, _) = stat(v, "miou_attacked");
        let (pc, _) = stat(v, "pixacc_clean");
        let (mc, _) = stat(v, "miou_clean");
        let (q, _) = stat(v, "queries");
        csv.push_str(&format!("{attack},{norm},{eps},{pa},{mi},{pc},{mc},{q}\n"));
        table.push_str(&format!(
            "{attack:<10}{norm:<6}{eps:>10}{pa:>10.4}{mi:>10.4}{q:>12.1}\n"
        ));
    }
    fs::write(out.join("report.csv"), &csv)?;
    fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
