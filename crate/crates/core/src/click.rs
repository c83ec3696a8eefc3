//! Main click-model trainer in its three comparable labelling modes.

use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ac::AcLabeler;
use crate::downsample::keep_skip;
use crate::error::{Error, Result};
use crate::event::{classify_click, ClickClass, Event};
use crate::model::{cross_entropy, LatentFactorModel, ModelSnapshot, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClickMode {
    /// Every click is a positive.
    Agnostic,
    /// ACs become hard negatives, kept regardless of down-sampling.
    Filtered,
    /// ACs are dropped from training altogether.
    FilteredDrop,
    /// ACs and skips take the AC model's prediction as a soft label.
    Unbiased,
}

impl ClickMode {
    pub const ALL: [ClickMode; 4] = [
        ClickMode::Agnostic,
        ClickMode::Filtered,
        ClickMode::FilteredDrop,
        ClickMode::Unbiased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClickMode::Agnostic => "agnostic",
            ClickMode::Filtered => "filtered",
            ClickMode::FilteredDrop => "filtered-drop",
            ClickMode::Unbiased => "unbiased",
        }
    }
}

impl fmt::Display for ClickMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClickMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClickMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClickTrainingConfig {
    pub mode: ClickMode,
    pub tau_ac_s: f64,
    pub downsample_r: f64,
    pub sampling_seed: u64,
}

impl Default for ClickTrainingConfig {
    fn default() -> Self {
        Self {
            mode: ClickMode::Agnostic,
            tau_ac_s: 3.0,
            downsample_r: 1.0,
            sampling_seed: 0,
        }
    }
}

impl ClickTrainingConfig {
    pub fn validate(&self, has_ac_model: bool) -> Result<()> {
        if !(self.tau_ac_s > 0.0 && self.tau_ac_s.is_finite()) {
            return Err(Error::Config(format!(
                "tau_ac_s must be > 0, got {}",
                self.tau_ac_s
            )));
        }
        if !(self.downsample_r >= 1.0 && self.downsample_r.is_finite()) {
            return Err(Error::Config(format!(
                "downsample_r must be >= 1, got {}",
                self.downsample_r
            )));
        }
        match (self.mode, has_ac_model) {
            (ClickMode::Unbiased, false) => {
                Err(Error::Config("unbiased mode requires an AC model".into()))
            }
            (ClickMode::Unbiased, true) | (_, false) => Ok(()),
            (mode, true) => Err(Error::Config(format!(
                "{mode} mode must not reference an AC model"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClickCounters {
    /// Events trained with label 1 (intentional clicks, unknown-dwell clicks,
    /// and in agnostic mode every click).
    pub n_ic: u64,
    /// AC events trained as negatives or soft labels.
    pub n_ac: u64,
    pub n_skips_kept: u64,
    pub n_skips_seen: u64,
    /// Unknown-dwell clicks; a subset of `n_ic`.
    pub n_unknown: u64,
    pub n_ac_dropped: u64,
    pub label_mass: f64,
    pub loss_sum: f64,
}

impl std::ops::AddAssign for ClickCounters {
    fn add_assign(&mut self, o: Self) {
        self.n_ic += o.n_ic;
        self.n_ac += o.n_ac;
        self.n_skips_kept += o.n_skips_kept;
        self.n_skips_seen += o.n_skips_seen;
        self.n_unknown += o.n_unknown;
        self.n_ac_dropped += o.n_ac_dropped;
        self.label_mass += o.label_mass;
        self.loss_sum += o.loss_sum;
    }
}

impl ClickCounters {
    pub fn n_trained(&self) -> u64 {
        self.n_ic + self.n_ac + self.n_skips_kept
    }

    /// Mean progressive (pre-update) training loss.
    pub fn mean_train_loss(&self) -> f64 {
        match self.n_trained() {
            0 => 0.0,
            n => self.loss_sum / n as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClickTrainer<'a> {
    model: LatentFactorModel,
    ac: Option<&'a AcLabeler>,
    cfg: ClickTrainingConfig,
    counters: ClickCounters,
}

impl<'a> ClickTrainer<'a> {
    pub fn new(
        model: LatentFactorModel,
        ac: Option<&'a AcLabeler>,
        cfg: ClickTrainingConfig,
    ) -> Result<Self> {
        cfg.validate(ac.is_some())?;
        Ok(Self {
            model,
            ac,
            cfg,
            counters: ClickCounters::default(),
        })
    }

    /// Replaces the AC labeler between training periods.
    pub fn set_labeler(&mut self, ac: &'a AcLabeler) -> Result<()> {
        if self.cfg.mode != ClickMode::Unbiased {
            return Err(Error::Config(format!(
                "{} mode must not reference an AC model",
                self.cfg.mode
            )));
        }
        self.ac = Some(ac);
        Ok(())
    }

    fn soft_label(&self, event: &Event) -> Result<f64> {
        match self.ac {
            Some(ac) => ac.predict_ac(event),
            None => Err(Error::Config("unbiased mode requires an AC model".into())),
        }
    }

    /// Training label for an event, or `None` if the event is not trained on.
    fn label(&mut self, event: &Event) -> Result<Option<f64>> {
        let mode = self.cfg.mode;
        if !event.clicked {
            self.counters.n_skips_seen += 1;
            if !keep_skip(
                self.cfg.sampling_seed,
                event.event_id,
                self.cfg.downsample_r,
            ) {
                return Ok(None);
            }
            self.counters.n_skips_kept += 1;
            return Ok(Some(if mode == ClickMode::Unbiased {
                self.soft_label(event)?
            } else {
                0.0
            }));
        }
        if mode == ClickMode::Agnostic {
            self.counters.n_ic += 1;
            return Ok(Some(1.0));
        }
        Ok(match classify_click(event, self.cfg.tau_ac_s)? {
            ClickClass::Intentional => {
                self.counters.n_ic += 1;
                Some(1.0)
            }
            ClickClass::Unknown => {
                self.counters.n_ic += 1;
                self.counters.n_unknown += 1;
                Some(1.0)
            }
            ClickClass::Accidental => match mode {
                ClickMode::FilteredDrop => {
                    self.counters.n_ac_dropped += 1;
                    None
                }
                ClickMode::Filtered => {
                    self.counters.n_ac += 1;
                    Some(0.0)
                }
                ClickMode::Unbiased => {
                    self.counters.n_ac += 1;
                    Some(self.soft_label(event)?)
                }
                ClickMode::Agnostic => unreachable!(),
            },
        })
    }

    pub fn observe(&mut self, event: &Event) -> Result<()> {
        if let Some(label) = self.label(event)? {
            let p = self.model.sgd_update(&event.user, &event.ad, label)?;
            self.counters.label_mass += label;
            self.counters.loss_sum += cross_entropy(p, label);
        }
        Ok(())
    }

    pub fn model(&self) -> &LatentFactorModel {
        &self.model
    }

    pub fn counters(&self) -> ClickCounters {
        self.counters
    }

    pub fn finish(self) -> (LatentFactorModel, ClickCounters) {
        (self.model, self.counters)
    }
}

pub fn train_click<I>(
    model: LatentFactorModel,
    ac: Option<&AcLabeler>,
    events: I,
    cfg: &ClickTrainingConfig,
) -> Result<(LatentFactorModel, ClickCounters)>
where
    I: IntoIterator,
    I::Item: Borrow<Event>,
{
    let mut trainer = ClickTrainer::new(model, ac, cfg.clone())?;
    for e in events {
        trainer.observe(e.borrow())?;
    }
    Ok(trainer.finish())
}

/// Scoring snapshot with the down-sampling correction applied.
pub fn serve_snapshot(model: &LatentFactorModel, downsample_r: f64) -> Result<ModelSnapshot> {
    if downsample_r == 1.0 {
        Ok(model.snapshot())
    } else {
        model.apply_downsampling_correction(downsample_r)
    }
}

/// Checks that a model's schema matches the schema of the log it is fed.
pub fn check_schema(
    model: &(impl Scorer + ?Sized),
    log_schema: &crate::schema::FeatureSchema,
) -> Result<()> {
    if model.schema() == log_schema {
        return Ok(());
    }
    let model_names: Vec<&str> = model
        .schema()
        .fields()
        .iter()
        .map(|f| f.name.as_str())
        .collect();
    let log_names: Vec<&str> = log_schema
        .fields()
        .iter()
        .map(|f| f.name.as_str())
        .collect();
    let missing: Vec<_> = model_names
        .iter()
        .filter(|n| !log_names.contains(n))
        .collect();
    let extra: Vec<_> = log_names
        .iter()
        .filter(|n| !model_names.contains(n))
        .collect();
    Err(Error::SchemaMismatch(format!(
        "model schema {} vs log schema {}; missing from log: {missing:?}; not in model: {extra:?}",
        &model.schema().digest_hex()[..12],
        &log_schema.digest_hex()[..12],
    )))
}
