//! Offline metrics: LogLoss, calibration, lifts and dwell-time analyses.

mod dwell;
mod filter;

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::click::check_schema;
use crate::error::{Error, Result};
use crate::event::Event;
use crate::model::{logloss, Scorer};
use crate::schema::FeatureSchema;

pub use dwell::{dwell_analysis, AcShare, DwellAccumulator, DwellConfig, DwellReport, SliceKey};
pub use filter::EvalFilter;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_events: u64,
    pub logloss_mean: f64,
    pub sum_pred: f64,
    pub sum_label: f64,
    /// `sum_pred / sum_label`; 0 when there are no positives.
    pub calibration_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: Metrics,
    /// Advisory only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    pub per_segment: BTreeMap<String, Metrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row for the whole stream (`segment = "*"`) then one per segment.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "segment",
            "n_events",
            "logloss_mean",
            "sum_pred",
            "sum_label",
            "calibration_ratio",
        ])?;
        let rows = std::iter::once(("*", &self.overall))
            .chain(self.per_segment.iter().map(|(k, v)| (k.as_str(), v)));
        for (seg, m) in rows {
            w.serialize((
                seg,
                m.n_events,
                m.logloss_mean,
                m.sum_pred,
                m.sum_label,
                m.calibration_ratio,
            ))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: u64,
    loss: f64,
    pred: f64,
    label: f64,
}

impl Sums {
    fn add(&mut self, p: f64, clicked: bool) {
        self.n += 1;
        self.loss += logloss(p, clicked);
        self.pred += p;
        self.label += f64::from(u8::from(clicked));
    }

    fn metrics(&self) -> Metrics {
        Metrics {
            n_events: self.n,
            logloss_mean: if self.n > 0 {
                self.loss / self.n as f64
            } else {
                0.0
            },
            sum_pred: self.pred,
            sum_label: self.label,
            calibration_ratio: if self.label > 0.0 {
                self.pred / self.label
            } else {
                0.0
            },
        }
    }
}

/// Streaming evaluation state, fed one `(segment, prediction, click)` at a time.
#[derive(Debug, Clone, Default)]
pub struct EvalAccumulator {
    total: Sums,
    segments: BTreeMap<String, Sums>,
    scored: Option<Vec<(f64, bool)>>,
}

impl EvalAccumulator {
    pub fn new(with_auc: bool) -> Self {
        Self {
            scored: with_auc.then(Vec::new),
            ..Default::default()
        }
    }

    pub fn add(&mut self, segment: &str, p: f64, clicked: bool) {
        self.total.add(p, clicked);
        match self.segments.get_mut(segment) {
            Some(s) => s.add(p, clicked),
            None => {
                let mut s = Sums::default();
                s.add(p, clicked);
                self.segments.insert(segment.to_string(), s);
            }
        }
        if let Some(v) = &mut self.scored {
            v.push((p, clicked));
        }
    }

    pub fn n_events(&self) -> u64 {
        self.total.n
    }

    pub fn finish(self) -> Result<EvalReport> {
        if self.total.n == 0 {
            return Err(Error::NoEvents);
        }
        Ok(EvalReport {
            overall: self.total.metrics(),
            auc: self.scored.and_then(auc),
            per_segment: self
                .segments
                .iter()
                .map(|(k, s)| (k.clone(), s.metrics()))
                .collect(),
        })
    }
}

/// Area under the ROC curve with tied scores sharing ranks. `None` when
/// only one class is present.
pub fn auc(mut scored: Vec<(f64, bool)>) -> Option<f64> {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = scored.iter().filter(|s| s.1).count() as f64;
    let n_neg = scored.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mean_rank * scored[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Scores every event passing `filter` against its raw click label.
pub fn evaluate<S, I>(
    scorer: &S,
    log_schema: &FeatureSchema,
    events: I,
    filter: &EvalFilter,
) -> Result<EvalReport>
where
    S: Scorer + ?Sized,
    I: IntoIterator,
    I::Item: Borrow<Event>,
{
    check_schema(scorer, log_schema)?;
    let mut acc = EvalAccumulator::new(true);
    for e in events {
        let e = e.borrow();
        if filter.matches(e) {
            acc.add(&e.segment, scorer.predict(&e.user, &e.ad)?, e.clicked);
        }
    }
    acc.finish()
}

/// `(1 − LL_model / LL_baseline) · 100`.
pub fn logloss_lift(model: &EvalReport, baseline: &EvalReport) -> Result<f64> {
    let (m, b) = (&model.overall, &baseline.overall);
    if m.n_events != b.n_events || m.sum_label != b.sum_label {
        return Err(Error::ReportMismatch(format!(
            "{} events / {} clicks vs {} events / {} clicks",
            m.n_events, m.sum_label, b.n_events, b.sum_label
        )));
    }
    if b.logloss_mean == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((1.0 - m.logloss_mean / b.logloss_mean) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyper, LatentFactorModel};
    use crate::schema::{FeatureField, FeatureValue, Side};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureField::single("u", Side::User),
            FeatureField::single("a", Side::Ad),
        ])
        .unwrap()
    }

    fn ev(id: u64, clicked: bool, segment: &str) -> Event {
        Event {
            event_id: id,
            user: vec![FeatureValue::new(0, "x")],
            ad: vec![FeatureValue::new(1, 1i64)],
            segment: segment.into(),
            clicked,
            dwell_s: None,
            dwell_logged: false,
        }
    }

    fn bias_only(p: f64) -> LatentFactorModel {
        let mut m = LatentFactorModel::new(
            schema(),
            2,
            Hyper {
                init_sigma: 0.0,
                ..Hyper::default()
            },
            1,
        )
        .unwrap();
        m.set_bias((p / (1.0 - p)).ln());
        m
    }

    #[test]
    fn matched_constant_prediction() {
        let events: Vec<Event> = (0..10).map(|i| ev(i, i < 2, "s")).collect();
        let r = evaluate(&bias_only(0.2), &schema(), &events, &EvalFilter::All).unwrap();
        let h = -(0.2f64 * 0.2f64.ln() + 0.8 * 0.8f64.ln());
        assert!((r.overall.logloss_mean - h).abs() < 1e-12);
        assert!((r.overall.calibration_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_prediction_costs_ln2() {
        let events: Vec<Event> = (0..7).map(|i| ev(i, i % 3 == 0, "s")).collect();
        let r = evaluate(&bias_only(0.5), &schema(), &events, &EvalFilter::All).unwrap();
        assert!((r.overall.logloss_mean - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn three_event_fixture() {
        // hand evaluation: -(ln 0.8 + ln 0.7 + ln 0.4) / 3
        let mut acc = EvalAccumulator::new(true);
        acc.add("a", 0.8, true);
        acc.add("a", 0.3, false);
        acc.add("b", 0.4, true);
        let r = acc.finish().unwrap();
        let expected = 0.49870307570903244;
        assert!((r.overall.logloss_mean - expected).abs() < 1e-15);
        assert!((r.overall.sum_pred - 1.5).abs() < 1e-15);
        assert_eq!(r.overall.sum_label, 2.0);
        assert!((r.overall.calibration_ratio - 0.75).abs() < 1e-15);
        assert_eq!(r.per_segment["a"].n_events, 2);
        assert_eq!(r.per_segment["b"].sum_label, 1.0);
        assert_eq!(r.auc, Some(1.0));
    }

    #[test]
    fn empty_stream_is_an_error() {
        let events = [ev(0, true, "s")];
        let err = evaluate(
            &bias_only(0.5),
            &schema(),
            &events,
            &EvalFilter::DwellLogged(true),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "no events to evaluate");
    }

    #[test]
    fn filter_restricts_stream() {
        let mut events: Vec<Event> = (0..6).map(|i| ev(i, i == 0, "s")).collect();
        events[0].dwell_logged = true;
        events[0].dwell_s = Some(10.0);
        let r = evaluate(
            &bias_only(0.5),
            &schema(),
            &events,
            &EvalFilter::DwellLogged(false),
        )
        .unwrap();
        assert_eq!(r.overall.n_events, 5);
        assert_eq!(r.overall.sum_label, 0.0);
        assert_eq!(r.overall.calibration_ratio, 0.0);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let other = FeatureSchema::new(vec![
            FeatureField::single("u", Side::User),
            FeatureField::single("b", Side::Ad),
        ])
        .unwrap();
        let err = evaluate(
            &bias_only(0.5),
            &other,
            &[ev(0, true, "s")],
            &EvalFilter::All,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(_)));
    }

    #[test]
    fn lift_examples() {
        let report = |ll: f64| EvalReport {
            overall: Metrics {
                n_events: 10,
                logloss_mean: ll,
                sum_label: 2.0,
                ..Metrics::default()
            },
            ..Default::default()
        };
        assert_eq!(logloss_lift(&report(0.3), &report(0.3)).unwrap(), 0.0);
        assert!((logloss_lift(&report(0.99), &report(1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            logloss_lift(&report(0.1), &report(0.0)),
            Err(Error::ZeroBaseline)
        ));
        let mut other = report(0.3);
        other.overall.n_events = 11;
        assert!(matches!(
            logloss_lift(&report(0.3), &other),
            Err(Error::ReportMismatch(_))
        ));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(vec![(0.1, false), (0.9, true)]), Some(1.0));
        assert_eq!(auc(vec![(0.9, false), (0.1, true)]), Some(0.0));
        assert_eq!(auc(vec![(0.5, false), (0.5, true)]), Some(0.5));
        assert_eq!(auc(vec![(0.5, true)]), None);
    }

    #[test]
    fn csv_has_overall_and_segment_rows() {
        let mut acc = EvalAccumulator::new(false);
        acc.add("a", 0.5, true);
        acc.add("b", 0.5, false);
        let mut buf = Vec::new();
        acc.finish().unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("*,2,"));
        assert!(lines[2].starts_with("a,1,"));
    }
}
