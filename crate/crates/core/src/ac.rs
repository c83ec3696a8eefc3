//! Auxiliary accidental-click (AC) model.
//!
//! A thin latent-factor model over context features only. Skips are
//! negatives, clicks with dwell time below the threshold are positives, and
//! intentional clicks are left out entirely so that the model's predictions
//! over skips and ACs add up to the number of ACs.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::downsample::keep_skip;
use crate::error::{Error, Result};
use crate::event::{classify_click, ClickClass, Event};
use crate::model::{sigmoid, Hyper, LatentFactorModel, ModelSnapshot, Scorer};
use crate::schema::{FeatureField, FeatureProjection, FeatureSchema, Side};

pub const INVOLVEMENT: &str = "involvement";
pub const TECH: &str = "tech";
pub const SITE_POSITION: &str = "site_position";

/// User involvement and tech play the "user" role, site-and-position the
/// "ad" role.
pub fn ac_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureField::single(INVOLVEMENT, Side::User),
        FeatureField::multi(TECH, Side::User),
        FeatureField::single(SITE_POSITION, Side::Ad),
    ])
    .expect("static schema is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcTrainingConfig {
    pub tau_ac_s: f64,
    pub downsample_r: f64,
    pub dim: usize,
    pub hyper: Hyper,
    pub model_seed: u64,
    pub sampling_seed: u64,
}

impl Default for AcTrainingConfig {
    fn default() -> Self {
        Self {
            tau_ac_s: 3.0,
            downsample_r: 1.0,
            dim: 4,
            hyper: Hyper::default(),
            model_seed: 1,
            sampling_seed: 0,
        }
    }
}

impl AcTrainingConfig {
    pub fn validate(&self) -> Result<()> {
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
        self.hyper.validate()
    }

    pub fn new_model(&self) -> Result<LatentFactorModel> {
        LatentFactorModel::new(ac_schema(), self.dim, self.hyper, self.model_seed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcCounters {
    pub n_skips_seen: u64,
    pub n_skips_kept: u64,
    pub n_acs: u64,
    pub n_ics_excluded: u64,
    pub n_unknown_excluded: u64,
}

/// Incremental AC trainer; feed events in stream order.
#[derive(Debug, Clone)]
pub struct AcTrainer {
    model: LatentFactorModel,
    projection: FeatureProjection,
    cfg: AcTrainingConfig,
    counters: AcCounters,
}

impl AcTrainer {
    pub fn new(
        model: LatentFactorModel,
        log_schema: &FeatureSchema,
        cfg: AcTrainingConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let projection = FeatureProjection::new(log_schema, model.schema())?;
        Ok(Self {
            model,
            projection,
            cfg,
            counters: AcCounters::default(),
        })
    }

    pub fn observe(&mut self, event: &Event) -> Result<()> {
        let label = if event.clicked {
            match classify_click(event, self.cfg.tau_ac_s)? {
                ClickClass::Accidental => {
                    self.counters.n_acs += 1;
                    1.0
                }
                ClickClass::Intentional => {
                    self.counters.n_ics_excluded += 1;
                    return Ok(());
                }
                ClickClass::Unknown => {
                    self.counters.n_unknown_excluded += 1;
                    return Ok(());
                }
            }
        } else {
            self.counters.n_skips_seen += 1;
            if !keep_skip(
                self.cfg.sampling_seed,
                event.event_id,
                self.cfg.downsample_r,
            ) {
                return Ok(());
            }
            self.counters.n_skips_kept += 1;
            0.0
        };
        let (user, ad) = self.projection.project(&event.user, &event.ad);
        self.model.sgd_update(&user, &ad, label)?;
        Ok(())
    }

    pub fn model(&self) -> &LatentFactorModel {
        &self.model
    }

    pub fn counters(&self) -> AcCounters {
        self.counters
    }

    pub fn finish(self) -> (LatentFactorModel, AcCounters) {
        (self.model, self.counters)
    }
}

pub fn train_ac<I>(
    model: LatentFactorModel,
    log_schema: &FeatureSchema,
    events: I,
    cfg: &AcTrainingConfig,
) -> Result<(LatentFactorModel, AcCounters)>
where
    I: IntoIterator,
    I::Item: Borrow<Event>,
{
    let mut trainer = AcTrainer::new(model, log_schema, cfg.clone())?;
    for e in events {
        trainer.observe(e.borrow())?;
    }
    Ok(trainer.finish())
}

/// Serves AC-model predictions as soft labels for events in the log schema.
#[derive(Debug, Clone)]
pub struct AcLabeler {
    snapshot: ModelSnapshot,
    projection: FeatureProjection,
}

impl AcLabeler {
    pub fn new(snapshot: ModelSnapshot, log_schema: &FeatureSchema) -> Result<Self> {
        let projection = FeatureProjection::new(log_schema, snapshot.schema())?;
        Ok(Self {
            snapshot,
            projection,
        })
    }

    pub fn snapshot(&self) -> &ModelSnapshot {
        &self.snapshot
    }

    /// Raw prediction, without down-sampling correction. This is the label a
    /// click trainer running at the same rate must consume.
    pub fn predict_ac(&self, event: &Event) -> Result<f64> {
        let (user, ad) = self.projection.project(&event.user, &event.ad);
        self.snapshot.predict(&user, &ad)
    }

    /// Absolute AC-rate estimate for a model trained with skips kept at `1/r`.
    pub fn predict_ac_corrected(&self, event: &Event, r: f64) -> Result<f64> {
        let (user, ad) = self.projection.project(&event.user, &event.ad);
        let s = self.snapshot.score(&user, &ad)?;
        Ok(if r > 1.0 {
            sigmoid(s - r.ln())
        } else {
            sigmoid(s)
        })
    }
}

/// Σ of AC-model labels over the kept skips and the ACs of a stream, along
/// with the number of ACs. At calibration the two agree.
pub fn ac_label_mass<I>(
    labeler: &AcLabeler,
    events: I,
    cfg: &AcTrainingConfig,
) -> Result<(f64, u64)>
where
    I: IntoIterator,
    I::Item: Borrow<Event>,
{
    let mut mass = 0.0;
    let mut n_ac = 0;
    for e in events {
        let e = e.borrow();
        let counted = if e.clicked {
            let is_ac = classify_click(e, cfg.tau_ac_s)? == ClickClass::Accidental;
            n_ac += u64::from(is_ac);
            is_ac
        } else {
            keep_skip(cfg.sampling_seed, e.event_id, cfg.downsample_r)
        };
        if counted {
            mass += labeler.predict_ac(e)?;
        }
    }
    Ok((mass, n_ac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureValue;

    fn log_schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureField::single(INVOLVEMENT, Side::User),
            FeatureField::multi(TECH, Side::User),
            FeatureField::single(SITE_POSITION, Side::User),
            FeatureField::single("ad_id", Side::Ad),
        ])
        .unwrap()
    }

    fn event(id: u64, clicked: bool, dwell: Option<f64>, ad: i64) -> Event {
        Event {
            event_id: id,
            user: vec![
                FeatureValue::new(0, "0-10"),
                FeatureValue::new(1, "device:phone"),
                FeatureValue::new(1, "os:android"),
                FeatureValue::new(2, "s1"),
            ],
            ad: vec![FeatureValue::new(3, ad)],
            segment: "s1".into(),
            clicked,
            dwell_s: dwell,
            dwell_logged: dwell.is_some() || !clicked,
        }
    }

    #[test]
    fn counters_bookkeeping() {
        let mut events = Vec::new();
        for i in 0..100 {
            events.push(event(i, false, None, 1));
        }
        for i in 0..5 {
            events.push(event(100 + i, true, Some(0.5), 1));
        }
        for i in 0..10 {
            events.push(event(200 + i, true, Some(30.0), 1));
        }
        events.push(event(300, true, None, 1));
        let cfg = AcTrainingConfig::default();
        let (_, c) = train_ac(cfg.new_model().unwrap(), &log_schema(), &events, &cfg).unwrap();
        assert_eq!((c.n_skips_kept, c.n_acs, c.n_ics_excluded), (100, 5, 10));
        assert_eq!(c.n_unknown_excluded, 1);
    }

    #[test]
    fn empty_stream_leaves_model_unchanged() {
        let cfg = AcTrainingConfig::default();
        let m = cfg.new_model().unwrap();
        let (out, c) = train_ac(m.clone(), &log_schema(), Vec::<Event>::new(), &cfg).unwrap();
        assert_eq!(out, m);
        assert_eq!(c, AcCounters::default());
    }

    #[test]
    fn intentional_clicks_do_not_touch_parameters() {
        let cfg = AcTrainingConfig::default();
        let mut t = AcTrainer::new(cfg.new_model().unwrap(), &log_schema(), cfg).unwrap();
        t.observe(&event(1, false, None, 1)).unwrap();
        t.observe(&event(2, true, Some(1.0), 1)).unwrap();
        let before = t.model().to_bytes();
        t.observe(&event(3, true, Some(10.0), 1)).unwrap();
        t.observe(&event(4, true, None, 1)).unwrap();
        assert_eq!(t.model().to_bytes(), before);
    }

    #[test]
    fn skips_only_drive_prediction_down() {
        let cfg = AcTrainingConfig::default();
        let events: Vec<_> = (0..5_000).map(|i| event(i, false, None, 1)).collect();
        let (m, _) = train_ac(cfg.new_model().unwrap(), &log_schema(), &events, &cfg).unwrap();
        let labeler = AcLabeler::new(m.snapshot(), &log_schema()).unwrap();
        assert!(labeler.predict_ac(&events[0]).unwrap() < 0.01);
    }

    #[test]
    fn untrained_prediction_is_half_and_ad_invariant() {
        let cfg = AcTrainingConfig {
            hyper: Hyper {
                init_sigma: 0.0,
                ..Hyper::default()
            },
            ..Default::default()
        };
        let labeler = AcLabeler::new(cfg.new_model().unwrap().snapshot(), &log_schema()).unwrap();
        assert_eq!(labeler.predict_ac(&event(1, false, None, 1)).unwrap(), 0.5);

        let cfg = AcTrainingConfig::default();
        let events: Vec<_> = (0..300)
            .map(|i| event(i, i % 7 == 0, (i % 7 == 0).then_some(1.0), 1))
            .collect();
        let (m, _) = train_ac(cfg.new_model().unwrap(), &log_schema(), &events, &cfg).unwrap();
        let labeler = AcLabeler::new(m.snapshot(), &log_schema()).unwrap();
        let a = labeler.predict_ac(&event(9, false, None, 1)).unwrap();
        let b = labeler.predict_ac(&event(9, false, None, 12345)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrected_prediction_subtracts_log_r() {
        let cfg = AcTrainingConfig {
            hyper: Hyper {
                init_sigma: 0.0,
                ..Hyper::default()
            },
            ..Default::default()
        };
        let labeler = AcLabeler::new(cfg.new_model().unwrap().snapshot(), &log_schema()).unwrap();
        let e = event(1, false, None, 1);
        let p = labeler.predict_ac_corrected(&e, 10.0).unwrap();
        assert!((p - 1.0 / 11.0).abs() < 1e-15);
        assert_eq!(labeler.predict_ac_corrected(&e, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn invalid_config() {
        let bad = AcTrainingConfig {
            tau_ac_s: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AcTrainingConfig {
            downsample_r: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
