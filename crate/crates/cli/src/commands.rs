use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use acclick::eval::{logloss_lift, DwellAccumulator, EvalReport, SliceKey};
use acclick::eventlog::{EventLogReader, EventLogWriter};
use acclick::pipeline::{
    evaluate_many, run_experiment, threshold_sweep, train_ac_model, train_modes, AcSupply,
    FileSource, SimSource,
};
use acclick::sim::{log_schema, simulate_serving, AuctionScorer, GroundTruthWorld, OracleScorer};
use acclick::{AcCounters, ClickCounters, ClickMode, LatentFactorModel, ModelSnapshot, Scorer};
use anyhow::{bail, Context, Result};
use clap::Args;
use log::info;
use serde::Serialize;

use crate::rundir::RunDir;
use crate::{apply_filter, Common, TrainingFlags};

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Training events (overrides `data.n_train`).
    #[arg(long)]
    n_train: Option<u64>,
    /// Holdout events (overrides `data.n_holdout`).
    #[arg(long)]
    n_holdout: Option<u64>,
}

#[derive(Serialize)]
struct SimulateSummary {
    world_ac_share: f64,
    n_train: u64,
    n_holdout: u64,
    train_clicks: u64,
    holdout_clicks: u64,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(n) = a.n_train {
        cfg.data.n_train = n;
    }
    if let Some(n) = a.n_holdout {
        cfg.data.n_holdout = n;
    }
    cfg.validate()?;
    let dir = RunDir::acquire(&a.common.out_dir(&cfg), "simulate")?;
    dir.archive_config(&cfg, "simulate")?;

    let world = GroundTruthWorld::build(&cfg.world)?;
    world.save(dir.file("world.json"))?;
    let mut clicks = [0u64; 2];
    for (k, (name, seed, n)) in [
        ("train.jsonl", cfg.data.train_seed, cfg.data.n_train),
        ("holdout.jsonl", cfg.data.holdout_seed, cfg.data.n_holdout),
    ]
    .into_iter()
    .enumerate()
    {
        let path = dir.file(name);
        let mut w = EventLogWriter::create(&path, &log_schema())?;
        for se in SimSource::new(&world, seed, 0..n).sampler() {
            clicks[k] += u64::from(se.event.clicked);
            w.write(&se.event)?;
        }
        w.finish()?;
        info!("wrote {n} events to {}", path.display());
    }
    dir.write_json(
        "simulate.json",
        &SimulateSummary {
            world_ac_share: world.expected_ac_shares().1,
            n_train: cfg.data.n_train,
            n_holdout: cfg.data.n_holdout,
            train_clicks: clicks[0],
            holdout_clicks: clicks[1],
        },
    )?;
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    training: TrainingFlags,
    /// Event log to train on.
    #[arg(long)]
    log: PathBuf,
    /// Modes to train: ac, agnostic, filtered, filtered-drop, unbiased.
    #[arg(long, value_delimiter = ',', default_value = "unbiased")]
    mode: Vec<String>,
    /// Trained AC model for the unbiased mode; trained inline when omitted.
    #[arg(long)]
    ac_model: Option<PathBuf>,
    /// Continue training from this click model instead of a fresh one.
    #[arg(long)]
    seed_model: Option<PathBuf>,
}

#[derive(Serialize)]
struct ClickTrainReport<'a> {
    mode: ClickMode,
    log: &'a Path,
    model_file: PathBuf,
    counters: ClickCounters,
    n_trained: u64,
    label_mass: f64,
    mean_train_loss: f64,
    tau_ac_s: f64,
    downsample_r: f64,
    period: Option<u64>,
}

#[derive(Serialize)]
struct AcTrainReport<'a> {
    log: &'a Path,
    model_file: PathBuf,
    counters: AcCounters,
    tau_ac_s: f64,
    downsample_r: f64,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    a.training.apply(&mut cfg);
    let mut want_ac = false;
    let mut modes = Vec::new();
    for m in &a.mode {
        if m == "ac" {
            want_ac = true;
        } else {
            let mode: ClickMode = m.parse()?;
            if !modes.contains(&mode) {
                modes.push(mode);
            }
        }
    }
    let unbiased = modes.contains(&ClickMode::Unbiased);
    if a.ac_model.is_some() && !unbiased {
        bail!("--ac-model is only used by the unbiased mode");
    }
    if a.ac_model.is_some() && want_ac {
        bail!("--ac-model and --mode ac are mutually exclusive");
    }
    cfg.click.modes = modes.clone();
    cfg.validate()?;
    let dir = RunDir::acquire(&a.common.out_dir(&cfg), "train")?;
    dir.archive_config(&cfg, "train")?;

    let source =
        FileSource::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let seed_model = a
        .seed_model
        .as_ref()
        .map(|p| LatentFactorModel::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let supply = match &a.ac_model {
        Some(p) => AcSupply::Fixed(
            ModelSnapshot::load(p).with_context(|| format!("loading {}", p.display()))?,
        ),
        None => AcSupply::Inline(None),
    };

    let mut trained = if modes.is_empty() {
        Default::default()
    } else {
        train_modes(&source, &modes, &cfg, supply, seed_model.as_ref())?
    };
    if want_ac && trained.ac.is_none() {
        trained.ac = Some(train_ac_model(&source, &cfg, None)?);
    }

    for t in &trained.click {
        let model_file = dir.file(&format!("model.{}.bin", t.mode));
        t.model.save(&model_file)?;
        info!("{}: trained on {} events", t.mode, t.counters.n_trained());
        dir.write_json(
            &format!("train.{}.json", t.mode),
            &ClickTrainReport {
                mode: t.mode,
                log: &a.log,
                model_file,
                counters: t.counters,
                n_trained: t.counters.n_trained(),
                label_mass: t.counters.label_mass,
                mean_train_loss: t.counters.mean_train_loss(),
                tau_ac_s: cfg.training.tau_ac_s,
                downsample_r: cfg.training.downsample_r,
                period: cfg.training.period,
            },
        )?;
    }
    if let Some(ac) = &trained.ac {
        let model_file = dir.file("model.ac.bin");
        ac.model.save(&model_file)?;
        dir.write_json(
            "train.ac.json",
            &AcTrainReport {
                log: &a.log,
                model_file,
                counters: ac.counters,
                tau_ac_s: cfg.training.tau_ac_s,
                downsample_r: cfg.training.downsample_r,
            },
        )?;
    }
    Ok(())
}

/// `model.unbiased.bin` → `unbiased`.
fn model_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.strip_prefix("model.")
        .map(str::to_owned)
        .unwrap_or(stem)
}

/// `name=path` or a bare path named by [`model_name`].
fn named_model(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_owned(), PathBuf::from(path)),
        _ => (model_name(Path::new(spec)), PathBuf::from(spec)),
    }
}

fn load_snapshots(specs: &[String], downsample_r: f64) -> Result<BTreeMap<String, ModelSnapshot>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let (name, path) = named_model(spec);
        let snap =
            ModelSnapshot::load(&path).with_context(|| format!("loading {}", path.display()))?;
        let snap = if downsample_r == 1.0 {
            snap
        } else {
            snap.corrected(downsample_r)?
        };
        if out.insert(name.clone(), snap).is_some() {
            bail!("two models are named {name:?}; use name=path");
        }
    }
    Ok(out)
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Holdout event log.
    #[arg(long)]
    log: PathBuf,
    /// Model files, optionally `name=path`. Lifts are relative to the first.
    #[arg(long, required = true, num_args = 1..)]
    model: Vec<String>,
    /// Event filter: all, dwell_logged=BOOL or segment=A,B.
    #[arg(long)]
    filter: Option<String>,
    /// Down-sampling factor the models were trained with.
    #[arg(long)]
    downsample: Option<f64>,
}

#[derive(Serialize)]
struct EvaluateOutput {
    filter: String,
    baseline: String,
    reports: BTreeMap<String, EvalReport>,
    logloss_lift_vs_baseline: BTreeMap<String, f64>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    apply_filter(&mut cfg, &a.filter)?;
    if let Some(r) = a.downsample {
        cfg.training.downsample_r = r;
    }
    cfg.validate()?;
    let baseline = named_model(&a.model[0]).0;
    let snaps = load_snapshots(&a.model, cfg.training.downsample_r)?;
    let dir = RunDir::acquire(&a.common.out_dir(&cfg), "evaluate")?;
    dir.archive_config(&cfg, "evaluate")?;

    let source =
        FileSource::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let scorers: Vec<&dyn Scorer> = snaps.values().map(|s| s as &dyn Scorer).collect();
    let reports = evaluate_many(&scorers, &source, std::slice::from_ref(&cfg.eval.filter))?;
    let reports: BTreeMap<String, EvalReport> = snaps
        .keys()
        .cloned()
        .zip(reports.into_iter().map(|mut r| r.remove(0)))
        .collect();
    let base = &reports[&baseline];
    let mut lifts = BTreeMap::new();
    for (name, r) in &reports {
        lifts.insert(name.clone(), logloss_lift(r, base)?);
        dir.write_with(&format!("evaluate.{name}.csv"), |w| r.write_csv(w))?;
    }
    dir.write_json(
        "evaluate.json",
        &EvaluateOutput {
            filter: cfg.eval.filter.to_string(),
            baseline,
            reports,
            logloss_lift_vs_baseline: lifts,
        },
    )?;
    Ok(())
}

#[derive(Args)]
pub struct DwellArgs {
    #[command(flatten)]
    common: Common,
    /// Event log.
    #[arg(long)]
    log: PathBuf,
    /// Slice keys: segment, dwell_logged, a feature name, or name:prefix.
    #[arg(long, value_delimiter = ',')]
    slice: Vec<String>,
}

pub fn dwell(a: DwellArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if !a.slice.is_empty() {
        cfg.eval.dwell.slices = a
            .slice
            .iter()
            .map(|s| s.parse::<SliceKey>())
            .collect::<acclick::Result<_>>()?;
    }
    cfg.validate()?;
    let dir = RunDir::acquire(&a.common.out_dir(&cfg), "dwell")?;
    dir.archive_config(&cfg, "dwell")?;

    let reader =
        EventLogReader::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let mut acc = DwellAccumulator::new(&reader.schema().clone(), &cfg.eval.dwell)?;
    for e in reader {
        acc.add(&e?);
    }
    let report = acc.finish()?;
    dir.write_json("dwell.json", &report)?;
    dir.write_with("dwell_pmf.csv", |w| report.write_pmf_csv(w))?;
    dir.write_with("dwell_ac_share.csv", |w| report.write_ac_share_csv(w))?;
    Ok(())
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    training: TrainingFlags,
    /// Training event log.
    #[arg(long)]
    log: PathBuf,
    /// Holdout event log.
    #[arg(long)]
    holdout: PathBuf,
    /// Thresholds in seconds (overrides `eval.sweep_grid`).
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[arg(long)]
    filter: Option<String>,
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    a.training.apply(&mut cfg);
    apply_filter(&mut cfg, &a.filter)?;
    if !a.grid.is_empty() {
        cfg.eval.sweep_grid = a.grid.clone();
    }
    cfg.validate()?;
    let dir = RunDir::acquire(&a.common.out_dir(&cfg), "sweep")?;
    dir.archive_config(&cfg, "sweep")?;

    let train = FileSource::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let holdout =
        FileSource::open(&a.holdout).with_context(|| format!("opening {}", a.holdout.display()))?;
    let report = threshold_sweep(&train, &holdout, &cfg.eval.sweep_grid, &cfg)?;
    if let Some(best) = report.best() {
        info!(
            "best threshold {} s (lift {:.4}%)",
            best.tau_s, best.logloss_lift
        );
    }
    dir.write_json("sweep.json", &report)?;
    dir.write_with("sweep.csv", |w| report.write_csv(w))?;
    Ok(())
}

#[derive(Args)]
pub struct ServeSimArgs {
    #[command(flatten)]
    common: Common,
    /// World file written by `simulate`; rebuilt from the config when omitted.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Model files, optionally `name=path`.
    #[arg(long, num_args = 1..)]
    model: Vec<String>,
    /// Also replay the ground-truth total CTR as mode `oracle`.
    #[arg(long)]
    oracle: bool,
    /// Number of auctions (overrides `serving.n_auctions`).
    #[arg(long)]
    auctions: Option<u64>,
    /// Down-sampling factor the models were trained with.
    #[arg(long)]
    downsample: Option<f64>,
}

pub fn serve_sim(a: ServeSimArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if let Some(n) = a.auctions {
        cfg.serving.n_auctions = n;
    }
    if let Some(r) = a.downsample {
        cfg.training.downsample_r = r;
    }
    cfg.validate()?;
    let snaps = load_snapshots(&a.model, cfg.training.downsample_r)?;
    if snaps.is_empty() && !a.oracle {
        bail!("nothing to replay: pass --model and/or --oracle");
    }
    let world = match &a.world {
        Some(p) => GroundTruthWorld::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => GroundTruthWorld::build(&cfg.world)?,
    };
    let dir = RunDir::acquire(&a.common.out_dir(&cfg), "serve-sim")?;
    dir.archive_config(&cfg, "serve-sim")?;

    let mut scorers: BTreeMap<String, &dyn AuctionScorer> = snaps
        .iter()
        .map(|(k, s)| (k.clone(), s as &dyn AuctionScorer))
        .collect();
    if a.oracle && scorers.insert("oracle".into(), &OracleScorer).is_some() {
        bail!("a model is already named \"oracle\"");
    }
    let report = simulate_serving(&world, &scorers, &cfg.serving)?;
    dir.write_json("serving.json", &report)?;
    dir.write_with("serving.csv", |w| report.write_csv(w))?;
    Ok(())
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    training: TrainingFlags,
    /// Click modes to train (overrides `click.modes`).
    #[arg(long, value_delimiter = ',')]
    mode: Vec<ClickMode>,
    #[arg(long)]
    filter: Option<String>,
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    a.training.apply(&mut cfg);
    apply_filter(&mut cfg, &a.filter)?;
    if !a.mode.is_empty() {
        cfg.click.modes = a.mode.clone();
    }
    cfg.validate()?;
    let dir = RunDir::acquire(&a.common.out_dir(&cfg), "experiment")?;
    dir.archive_config(&cfg, "experiment")?;

    let exp = run_experiment(&cfg)?;
    exp.world.save(dir.file("world.json"))?;
    for t in &exp.trained.click {
        t.model.save(dir.file(&format!("model.{}.bin", t.mode)))?;
    }
    if let Some(ac) = &exp.trained.ac {
        ac.model.save(dir.file("model.ac.bin"))?;
    }
    let r = &exp.report;
    for (mode, m) in &r.modes {
        info!(
            "{mode}: calibration {:.4}, filtered LogLoss {:.5}, lift {:+.4}%, CPM {:.2}",
            m.eval_all.overall.calibration_ratio,
            m.eval_filtered.overall.logloss_mean,
            m.lift_vs_agnostic.unwrap_or(f64::NAN),
            r.serving.modes[mode.as_str()].cpm
        );
    }
    dir.write_json("experiment.json", r)?;
    dir.write_with("serving.csv", |w| r.serving.write_csv(w))?;
    for (mode, m) in &r.modes {
        dir.write_with(&format!("evaluate.{mode}.csv"), |w| {
            m.eval_filtered.write_csv(w)
        })?;
    }
    Ok(())
}
