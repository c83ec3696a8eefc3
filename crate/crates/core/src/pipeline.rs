//! Training orchestration over re-readable event sources: the two-block
//! AC-then-click procedure, multi-mode passes, threshold sweeps and the
//! end-to-end simulated experiment.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ac::{AcCounters, AcLabeler, AcTrainer};
use crate::click::{serve_snapshot, ClickCounters, ClickMode, ClickTrainer};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{logloss_lift, EvalAccumulator, EvalFilter, EvalReport};
use crate::event::Event;
use crate::eventlog::EventLogReader;
use crate::model::{LatentFactorModel, ModelSnapshot, Scorer};
use crate::schema::FeatureSchema;
use crate::sim::{
    log_schema, simulate_serving, AuctionScorer, EventSampler, GroundTruthWorld, OracleScorer,
    ServingReport,
};

pub type EventIter<'a> = Box<dyn Iterator<Item = Result<Event>> + 'a>;

/// A stream of events that can be replayed from the start.
pub trait EventSource {
    fn schema(&self) -> &FeatureSchema;
    fn events(&self) -> Result<EventIter<'_>>;
}

/// Events in memory.
pub struct MemorySource<'a> {
    pub schema: FeatureSchema,
    pub events: &'a [Event],
}

impl EventSource for MemorySource<'_> {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn events(&self) -> Result<EventIter<'_>> {
        Ok(Box::new(self.events.iter().cloned().map(Ok)))
    }
}

/// An event-log file, re-opened for every pass.
pub struct FileSource {
    path: PathBuf,
    schema: FeatureSchema,
}

impl FileSource {
    pub fn open(path: &Path) -> Result<Self> {
        let schema = EventLogReader::open(path)?.schema().clone();
        Ok(Self {
            path: path.to_path_buf(),
            schema,
        })
    }
}

impl EventSource for FileSource {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn events(&self) -> Result<EventIter<'_>> {
        let reader = EventLogReader::open(&self.path)?;
        if reader.schema() != &self.schema {
            return Err(Error::Format(format!(
                "{} changed between passes",
                self.path.display()
            )));
        }
        Ok(Box::new(reader))
    }
}

/// Simulated impressions `range` of stream `seed`.
pub struct SimSource<'w> {
    pub world: &'w GroundTruthWorld,
    pub seed: u64,
    pub range: Range<u64>,
    schema: FeatureSchema,
}

impl<'w> SimSource<'w> {
    pub fn new(world: &'w GroundTruthWorld, seed: u64, range: Range<u64>) -> Self {
        Self {
            world,
            seed,
            range,
            schema: log_schema(),
        }
    }

    pub fn sampler(&self) -> EventSampler<'w> {
        EventSampler::new(self.world, self.seed, self.range.clone())
    }
}

impl EventSource for SimSource<'_> {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn events(&self) -> Result<EventIter<'_>> {
        Ok(Box::new(self.sampler().map(|e| Ok(e.event))))
    }
}

/// Where the unbiased mode gets its soft labels from.
#[derive(Debug, Clone)]
pub enum AcSupply {
    /// Train an AC model from the same log (two blocks per period).
    Inline(Option<LatentFactorModel>),
    /// Use an already trained AC model.
    Fixed(ModelSnapshot),
}

#[derive(Debug, Clone)]
pub struct TrainedAc {
    pub model: LatentFactorModel,
    pub counters: AcCounters,
}

#[derive(Debug, Clone)]
pub struct TrainedClick {
    pub mode: ClickMode,
    pub model: LatentFactorModel,
    pub counters: ClickCounters,
}

#[derive(Debug, Clone, Default)]
pub struct TrainedModes {
    pub click: Vec<TrainedClick>,
    pub ac: Option<TrainedAc>,
}

impl TrainedModes {
    pub fn get(&self, mode: ClickMode) -> Option<&TrainedClick> {
        self.click.iter().find(|t| t.mode == mode)
    }
}

/// Trains an AC model alone over the whole source.
pub fn train_ac_model(
    source: &dyn EventSource,
    cfg: &RunConfig,
    init: Option<LatentFactorModel>,
) -> Result<TrainedAc> {
    let model = match init {
        Some(m) => m,
        None => cfg.new_ac_model()?,
    };
    let mut trainer = AcTrainer::new(model, source.schema(), cfg.ac_config())?;
    for e in source.events()? {
        trainer.observe(&e?)?;
    }
    let (model, counters) = trainer.finish();
    Ok(TrainedAc { model, counters })
}

struct ModeState {
    mode: ClickMode,
    model: LatentFactorModel,
    counters: ClickCounters,
}

impl ModeState {
    fn train(
        &mut self,
        labeler: Option<&AcLabeler>,
        cfg: &RunConfig,
        events: &[Event],
    ) -> Result<()> {
        let model = std::mem::replace(&mut self.model, placeholder()?);
        let mut trainer = ClickTrainer::new(model, labeler, cfg.click_config(self.mode))?;
        let mut failed = None;
        for e in events {
            if let Err(err) = trainer.observe(e) {
                failed = Some(err);
                break;
            }
        }
        let (model, counters) = trainer.finish();
        self.model = model;
        self.counters += counters;
        failed.map_or(Ok(()), Err)
    }
}

fn placeholder() -> Result<LatentFactorModel> {
    LatentFactorModel::new(crate::ac::ac_schema(), 1, Default::default(), 0)
}

const BATCH: usize = 4096;

/// Trains every mode in `modes` over `source` in as few passes as possible.
///
/// Modes without soft labels train in the first pass alongside the AC
/// model. With `training.period = None` the unbiased mode then takes a
/// second pass with the finished AC model; with a period, each chunk of
/// events is used first by the AC trainer and then, with the AC model as it
/// stands after that chunk, by the unbiased click trainer.
///
/// `init` seeds the click models from an existing model.
pub fn train_modes(
    source: &dyn EventSource,
    modes: &[ClickMode],
    cfg: &RunConfig,
    ac: AcSupply,
    init: Option<&LatentFactorModel>,
) -> Result<TrainedModes> {
    cfg.validate()?;
    let schema = source.schema();
    let new_model = || -> Result<LatentFactorModel> {
        match init {
            Some(m) => {
                crate::click::check_schema(m, schema)?;
                Ok(m.clone())
            }
            None => cfg.new_click_model(schema),
        }
    };
    let mut plain = Vec::new();
    let mut unbiased = None;
    for &mode in modes {
        let state = ModeState {
            mode,
            model: new_model()?,
            counters: ClickCounters::default(),
        };
        if mode == ClickMode::Unbiased {
            if unbiased.is_some() {
                return Err(Error::Config("unbiased mode listed twice".into()));
            }
            unbiased = Some(state);
        } else {
            if plain.iter().any(|s: &ModeState| s.mode == mode) {
                return Err(Error::Config(format!("{mode} mode listed twice")));
            }
            plain.push(state);
        }
    }

    let (fixed, mut ac_trainer) = match (&ac, unbiased.is_some()) {
        (AcSupply::Fixed(snap), _) => (Some(AcLabeler::new(snap.clone(), schema)?), None),
        (AcSupply::Inline(_), false) => (None, None),
        (AcSupply::Inline(init_ac), true) => {
            let model = match init_ac {
                Some(m) => m.clone(),
                None => cfg.new_ac_model()?,
            };
            (None, Some(AcTrainer::new(model, schema, cfg.ac_config())?))
        }
    };

    let whole_log_ac = ac_trainer.is_some() && cfg.training.period.is_none();
    let chunk = match (cfg.training.period, &ac_trainer) {
        (Some(p), Some(_)) => p as usize,
        _ => BATCH,
    };
    let mut buffer: Vec<Event> = Vec::with_capacity(chunk.min(BATCH));
    let mut events = source.events()?;
    loop {
        buffer.clear();
        for e in events.by_ref().take(chunk) {
            buffer.push(e?);
        }
        if buffer.is_empty() {
            break;
        }
        for s in plain.iter_mut() {
            s.train(None, cfg, &buffer)?;
        }
        if let Some(t) = ac_trainer.as_mut() {
            for e in &buffer {
                t.observe(e)?;
            }
        }
        if let Some(u) = unbiased.as_mut() {
            if let Some(l) = &fixed {
                u.train(Some(l), cfg, &buffer)?;
            } else if let (false, Some(t)) = (whole_log_ac, &ac_trainer) {
                let labeler = AcLabeler::new(t.model().snapshot(), schema)?;
                u.train(Some(&labeler), cfg, &buffer)?;
            }
        }
    }

    if let (true, Some(u), Some(t)) = (whole_log_ac, unbiased.as_mut(), &ac_trainer) {
        let labeler = AcLabeler::new(t.model().snapshot(), schema)?;
        let mut events = source.events()?;
        loop {
            buffer.clear();
            for e in events.by_ref().take(BATCH) {
                buffer.push(e?);
            }
            if buffer.is_empty() {
                break;
            }
            u.train(Some(&labeler), cfg, &buffer)?;
        }
    }

    let mut by_order: BTreeMap<usize, TrainedClick> = BTreeMap::new();
    for s in plain.into_iter().chain(unbiased) {
        let pos = modes.iter().position(|&m| m == s.mode).expect("listed");
        by_order.insert(
            pos,
            TrainedClick {
                mode: s.mode,
                model: s.model,
                counters: s.counters,
            },
        );
    }
    Ok(TrainedModes {
        click: by_order.into_values().collect(),
        ac: ac_trainer.map(|t| {
            let (model, counters) = t.finish();
            TrainedAc { model, counters }
        }),
    })
}

/// Trains one click mode.
pub fn train_click_model(
    source: &dyn EventSource,
    mode: ClickMode,
    cfg: &RunConfig,
    ac: AcSupply,
    init: Option<&LatentFactorModel>,
) -> Result<(TrainedClick, Option<TrainedAc>)> {
    let mut out = train_modes(source, &[mode], cfg, ac, init)?;
    Ok((out.click.pop().expect("one mode"), out.ac))
}

/// Evaluates several scorers under several filters in one pass.
/// `reports[i][j]` is scorer `i` under filter `j`.
pub fn evaluate_many(
    scorers: &[&dyn Scorer],
    source: &dyn EventSource,
    filters: &[EvalFilter],
) -> Result<Vec<Vec<EvalReport>>> {
    for s in scorers {
        crate::click::check_schema(*s, source.schema())?;
    }
    let mut acc: Vec<Vec<EvalAccumulator>> = scorers
        .iter()
        .map(|_| filters.iter().map(|_| EvalAccumulator::new(true)).collect())
        .collect();
    for e in source.events()? {
        let e = e?;
        let active: Vec<bool> = filters.iter().map(|f| f.matches(&e)).collect();
        if !active.iter().any(|&a| a) {
            continue;
        }
        for (s, accs) in scorers.iter().zip(&mut acc) {
            let p = s.predict(&e.user, &e.ad)?;
            for (a, _) in accs.iter_mut().zip(&active).filter(|(_, &on)| on) {
                a.add(&e.segment, p, e.clicked);
            }
        }
    }
    acc.into_iter()
        .map(|accs| accs.into_iter().map(EvalAccumulator::finish).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau_s: f64,
    /// LogLoss lift of unbiased over agnostic, in percent.
    pub logloss_lift: f64,
    pub calibration_ratio: f64,
    pub unbiased_logloss: f64,
    pub agnostic_logloss: f64,
    pub n_ac_trained: u64,
    pub argmax: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub filter: EvalFilter,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.argmax)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "tau_s",
            "logloss_lift",
            "calibration_ratio",
            "unbiased_logloss",
            "agnostic_logloss",
            "n_ac_trained",
            "argmax",
        ])?;
        for r in &self.rows {
            w.serialize((
                r.tau_s,
                r.logloss_lift,
                r.calibration_ratio,
                r.unbiased_logloss,
                r.agnostic_logloss,
                r.n_ac_trained,
                r.argmax,
            ))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// For each threshold, trains an AC model and an unbiased click model at
/// that threshold and compares the latter with one agnostic model on the
/// holdout under `cfg.eval.filter`. The first maximal lift is flagged.
pub fn threshold_sweep(
    train: &dyn EventSource,
    holdout: &dyn EventSource,
    grid: &[f64],
    cfg: &RunConfig,
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Config(format!("threshold {t} is not positive")));
    }
    let agnostic = train_click_model(
        train,
        ClickMode::Agnostic,
        cfg,
        AcSupply::Inline(None),
        None,
    )?
    .0;
    let mut unbiased = Vec::with_capacity(grid.len());
    for &tau in grid {
        let mut c = cfg.clone();
        c.training.tau_ac_s = tau;
        unbiased.push(
            train_click_model(train, ClickMode::Unbiased, &c, AcSupply::Inline(None), None)?.0,
        );
    }
    let r = cfg.training.downsample_r;
    let mut snaps = vec![serve_snapshot(&agnostic.model, r)?];
    for u in &unbiased {
        snaps.push(serve_snapshot(&u.model, r)?);
    }
    let scorers: Vec<&dyn Scorer> = snaps.iter().map(|s| s as &dyn Scorer).collect();
    let reports = evaluate_many(&scorers, holdout, std::slice::from_ref(&cfg.eval.filter))?;
    let base = &reports[0][0];
    let mut rows = Vec::with_capacity(grid.len());
    for ((&tau_s, u), rep) in grid.iter().zip(&unbiased).zip(&reports[1..]) {
        let rep = &rep[0];
        rows.push(SweepRow {
            tau_s,
            logloss_lift: logloss_lift(rep, base)?,
            calibration_ratio: rep.overall.calibration_ratio,
            unbiased_logloss: rep.overall.logloss_mean,
            agnostic_logloss: base.overall.logloss_mean,
            n_ac_trained: u.counters.n_ac,
            argmax: false,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, b)) if b >= r.logloss_lift => best,
            _ => Some((i, r.logloss_lift)),
        })
        .map(|(i, _)| i)
        .expect("non-empty grid");
    rows[best].argmax = true;
    Ok(SweepReport {
        filter: cfg.eval.filter.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub counters: ClickCounters,
    pub eval_all: EvalReport,
    pub eval_filtered: EvalReport,
    /// LogLoss lift over agnostic on the filtered holdout, in percent.
    pub lift_vs_agnostic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcReport {
    pub counters: AcCounters,
    /// Σ AC-model labels over the kept skips and ACs of the unbiased pass.
    pub label_mass: Option<f64>,
    pub n_ac: u64,
}

impl AcReport {
    pub fn self_calibration_ratio(&self) -> Option<f64> {
        self.label_mass.map(|m| m / self.n_ac as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub filter: EvalFilter,
    /// Expected AC share of clicks under uniform traffic.
    pub world_ac_share: f64,
    pub ac: Option<AcReport>,
    pub modes: BTreeMap<ClickMode, ModeReport>,
    pub oracle_all: EvalReport,
    pub oracle_filtered: EvalReport,
    pub serving: ServingReport,
}

pub struct Experiment {
    pub world: GroundTruthWorld,
    pub trained: TrainedModes,
    pub report: ExperimentReport,
}

/// World generation, training of `cfg.click.modes`, holdout evaluation
/// (whole holdout and `cfg.eval.filter`) and the serving comparison.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let world = GroundTruthWorld::build(&cfg.world)?;
    let trained = {
        let train = SimSource::new(&world, cfg.data.train_seed, 0..cfg.data.n_train);
        train_modes(&train, &cfg.click.modes, cfg, AcSupply::Inline(None), None)?
    };
    let report = experiment_report(cfg, &world, &trained)?;
    Ok(Experiment {
        world,
        trained,
        report,
    })
}

fn experiment_report(
    cfg: &RunConfig,
    world: &GroundTruthWorld,
    trained: &TrainedModes,
) -> Result<ExperimentReport> {
    let r = cfg.training.downsample_r;
    let snaps: Vec<(ClickMode, ModelSnapshot)> = trained
        .click
        .iter()
        .map(|t| Ok((t.mode, serve_snapshot(&t.model, r)?)))
        .collect::<Result<_>>()?;

    let holdout = SimSource::new(world, cfg.data.holdout_seed, 0..cfg.data.n_holdout);
    let filter = &cfg.eval.filter;
    let n = snaps.len() + 1;
    let mut all: Vec<EvalAccumulator> = (0..n).map(|_| EvalAccumulator::new(true)).collect();
    let mut filtered: Vec<EvalAccumulator> = (0..n).map(|_| EvalAccumulator::new(true)).collect();
    for se in holdout.sampler() {
        let e = &se.event;
        let in_filter = filter.matches(e);
        for (i, (_, s)) in snaps.iter().enumerate() {
            let p = s.predict(&e.user, &e.ad)?;
            all[i].add(&e.segment, p, e.clicked);
            if in_filter {
                filtered[i].add(&e.segment, p, e.clicked);
            }
        }
        all[n - 1].add(&e.segment, se.p_total(), e.clicked);
        if in_filter {
            filtered[n - 1].add(&e.segment, se.p_total(), e.clicked);
        }
    }
    let all: Vec<EvalReport> = all
        .into_iter()
        .map(EvalAccumulator::finish)
        .collect::<Result<_>>()?;
    let filtered: Vec<EvalReport> = filtered
        .into_iter()
        .map(EvalAccumulator::finish)
        .collect::<Result<_>>()?;

    let agnostic = snaps.iter().position(|(m, _)| *m == ClickMode::Agnostic);
    let mut modes = BTreeMap::new();
    for (i, t) in trained.click.iter().enumerate() {
        let lift = match agnostic {
            Some(a) if a != i => Some(logloss_lift(&filtered[i], &filtered[a])?),
            Some(_) => Some(0.0),
            None => None,
        };
        modes.insert(
            t.mode,
            ModeReport {
                counters: t.counters,
                eval_all: all[i].clone(),
                eval_filtered: filtered[i].clone(),
                lift_vs_agnostic: lift,
            },
        );
    }

    let ac = trained.ac.as_ref().map(|a| {
        let unb = trained.get(ClickMode::Unbiased);
        AcReport {
            counters: a.counters,
            label_mass: unb.map(|u| u.counters.label_mass - u.counters.n_ic as f64),
            n_ac: unb.map_or(a.counters.n_acs, |u| u.counters.n_ac),
        }
    });

    let mut scorers: BTreeMap<String, &dyn AuctionScorer> = BTreeMap::new();
    for (m, s) in &snaps {
        scorers.insert(m.to_string(), s as &dyn AuctionScorer);
    }
    scorers.insert("oracle".into(), &OracleScorer);
    let serving = simulate_serving(world, &scorers, &cfg.serving)?;

    Ok(ExperimentReport {
        seed: cfg.seed,
        filter: filter.clone(),
        world_ac_share: world.expected_ac_shares().1,
        ac,
        modes,
        oracle_all: all[n - 1].clone(),
        oracle_filtered: filtered[n - 1].clone(),
        serving,
    })
}
