use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Event;
use crate::schema::FeatureSchema;

/// How clicks are grouped for sliced PMFs.
///
/// Text form: `segment`, `dwell_logged`, a feature name such as
/// `involvement`, or `field:prefix` to keep only the values of a
/// (multi-value) field that start with `prefix`, e.g. `tech:device:`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SliceKey {
    Segment,
    DwellLogged,
    Field {
        name: String,
        prefix: Option<String>,
    },
}

impl FromStr for SliceKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" => Err(Error::Config("empty slice key".into())),
            "segment" => Ok(SliceKey::Segment),
            "dwell_logged" => Ok(SliceKey::DwellLogged),
            other => Ok(match other.split_once(':') {
                Some((name, prefix)) => SliceKey::Field {
                    name: name.into(),
                    prefix: Some(prefix.into()),
                },
                None => SliceKey::Field {
                    name: other.into(),
                    prefix: None,
                },
            }),
        }
    }
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SliceKey::Segment => f.write_str("segment"),
            SliceKey::DwellLogged => f.write_str("dwell_logged"),
            SliceKey::Field { name, prefix: None } => f.write_str(name),
            SliceKey::Field {
                name,
                prefix: Some(p),
            } => write!(f, "{name}:{p}"),
        }
    }
}

impl TryFrom<String> for SliceKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SliceKey> for String {
    fn from(k: SliceKey) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DwellConfig {
    /// Increasing finite edges starting at 0. Dwell at or beyond the last
    /// edge goes to an overflow bin; unlogged clicks to a terminal bin.
    pub bin_edges: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub slices: Vec<SliceKey>,
}

impl Default for DwellConfig {
    fn default() -> Self {
        Self {
            bin_edges: (0..=60).map(|i| f64::from(i) * 0.5).collect(),
            thresholds: vec![1.0, 2.0, 3.0, 5.0, 8.0],
            slices: Vec::new(),
        }
    }
}

impl DwellConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_edges.first() != Some(&0.0) {
            return Err(Error::Config("dwell bin edges must start at 0".into()));
        }
        if self
            .bin_edges
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
            || self.bin_edges.iter().any(|e| !e.is_finite())
        {
            return Err(Error::Config(
                "dwell bin edges must be finite and strictly increasing".into(),
            ));
        }
        if self
            .thresholds
            .iter()
            .any(|t| !(t.is_finite() && *t >= 0.0))
        {
            return Err(Error::Config(
                "dwell thresholds must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn n_bins(&self) -> usize {
        self.bin_edges.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcShare {
    pub tau_s: f64,
    /// Clicks with dwell below `tau_s`, as a percentage of all clicks.
    pub percent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DwellReport {
    pub n_clicks: u64,
    pub n_unlogged: u64,
    pub bin_edges: Vec<f64>,
    /// Finite bins, then `[last edge, ∞)`, then unlogged clicks.
    pub counts: Vec<u64>,
    pub pmf: Vec<f64>,
    pub ac_share_at: Vec<AcShare>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub slices: BTreeMap<String, BTreeMap<String, DwellReport>>,
}

impl DwellReport {
    pub fn ac_share_at(&self, tau_s: f64) -> Option<f64> {
        self.ac_share_at
            .iter()
            .find(|s| s.tau_s == tau_s)
            .map(|s| s.percent)
    }

    /// PMF divided by its largest entry, for shape comparisons across slices.
    pub fn normalized_pmf(&self) -> Vec<f64> {
        let max = self.pmf.iter().copied().fold(0.0, f64::max);
        self.pmf
            .iter()
            .map(|p| if max > 0.0 { p / max } else { 0.0 })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn rows(&self) -> Vec<(&str, &str, &DwellReport)> {
        let mut out = vec![("*", "*", self)];
        for (key, values) in &self.slices {
            for (value, r) in values {
                out.push((key.as_str(), value.as_str(), r));
            }
        }
        out
    }

    /// One row per bin per slice; the unfiltered report has slice `*`.
    pub fn write_pmf_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "slice_key",
            "slice_value",
            "bin",
            "lo_s",
            "hi_s",
            "count",
            "pmf",
            "normalized",
        ])?;
        for (key, value, r) in self.rows() {
            let norm = r.normalized_pmf();
            let n_finite = r.bin_edges.len() - 1;
            for (i, (&count, &p)) in r.counts.iter().zip(&r.pmf).enumerate() {
                let (bin, lo, hi) = match i {
                    i if i < n_finite => ("finite", Some(r.bin_edges[i]), Some(r.bin_edges[i + 1])),
                    i if i == n_finite => ("overflow", r.bin_edges.last().copied(), None),
                    _ => ("unlogged", None, None),
                };
                w.serialize((key, value, bin, lo, hi, count, p, norm[i]))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per threshold per slice.
    pub fn write_ac_share_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "slice_key",
            "slice_value",
            "n_clicks",
            "tau_s",
            "ac_percent",
        ])?;
        for (key, value, r) in self.rows() {
            for s in &r.ac_share_at {
                w.serialize((key, value, r.n_clicks, s.tau_s, s.percent))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Counts {
    bins: Vec<u64>,
    below: Vec<u64>,
    n: u64,
}

impl Counts {
    fn new(cfg: &DwellConfig) -> Self {
        Self {
            bins: vec![0; cfg.n_bins()],
            below: vec![0; cfg.thresholds.len()],
            n: 0,
        }
    }

    fn add(&mut self, bin: usize, dwell: Option<f64>, thresholds: &[f64]) {
        self.n += 1;
        self.bins[bin] += 1;
        if let Some(d) = dwell {
            for (c, t) in self.below.iter_mut().zip(thresholds) {
                *c += u64::from(d < *t);
            }
        }
    }

    fn merge(&mut self, other: &Counts) {
        self.n += other.n;
        self.bins
            .iter_mut()
            .zip(&other.bins)
            .for_each(|(a, b)| *a += b);
        self.below
            .iter_mut()
            .zip(&other.below)
            .for_each(|(a, b)| *a += b);
    }

    fn report(&self, cfg: &DwellConfig) -> DwellReport {
        let n = self.n as f64;
        DwellReport {
            n_clicks: self.n,
            n_unlogged: *self.bins.last().unwrap_or(&0),
            bin_edges: cfg.bin_edges.clone(),
            counts: self.bins.clone(),
            pmf: self.bins.iter().map(|&c| c as f64 / n).collect(),
            ac_share_at: cfg
                .thresholds
                .iter()
                .zip(&self.below)
                .map(|(&tau_s, &c)| AcShare {
                    tau_s,
                    percent: 100.0 * c as f64 / n,
                })
                .collect(),
            slices: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
enum Resolved {
    Segment,
    DwellLogged,
    Field {
        index: usize,
        prefix: Option<String>,
    },
}

const NO_VALUE: &str = "(none)";

/// Mergeable dwell-time histogram state. Counts are integers, so the result
/// does not depend on event order or on how the stream was sharded.
#[derive(Debug, Clone)]
pub struct DwellAccumulator {
    cfg: DwellConfig,
    resolved: Vec<Resolved>,
    total: Counts,
    slices: Vec<BTreeMap<String, Counts>>,
}

impl DwellAccumulator {
    pub fn new(schema: &FeatureSchema, cfg: &DwellConfig) -> Result<Self> {
        cfg.validate()?;
        let resolved = cfg
            .slices
            .iter()
            .map(|k| match k {
                SliceKey::Segment => Ok(Resolved::Segment),
                SliceKey::DwellLogged => Ok(Resolved::DwellLogged),
                SliceKey::Field { name, prefix } => schema
                    .index_of(name)
                    .map(|index| Resolved::Field {
                        index,
                        prefix: prefix.clone(),
                    })
                    .ok_or_else(|| Error::Config(format!("unknown slice field {name:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            total: Counts::new(cfg),
            slices: vec![BTreeMap::new(); resolved.len()],
            resolved,
            cfg: cfg.clone(),
        })
    }

    fn bin(&self, dwell: Option<f64>) -> usize {
        let edges = &self.cfg.bin_edges;
        match dwell {
            None => edges.len(),
            Some(d) => edges.partition_point(|&e| e <= d).max(1) - 1,
        }
    }

    fn slice_values(r: &Resolved, e: &Event) -> Vec<String> {
        let mut values: Vec<String> = match r {
            Resolved::Segment => vec![e.segment.clone()],
            Resolved::DwellLogged => vec![e.dwell_logged.to_string()],
            Resolved::Field { index, prefix } => e
                .user
                .iter()
                .chain(&e.ad)
                .filter(|f| f.field == *index)
                .map(|f| f.value.to_string())
                .filter(|v| prefix.as_ref().is_none_or(|p| v.starts_with(p.as_str())))
                .collect(),
        };
        values.sort();
        values.dedup();
        if values.is_empty() {
            values.push(NO_VALUE.into());
        }
        values
    }

    /// Skips are ignored.
    pub fn add(&mut self, e: &Event) {
        if !e.clicked {
            return;
        }
        let dwell = e.dwell_s.filter(|_| e.dwell_logged);
        let bin = self.bin(dwell);
        self.total.add(bin, dwell, &self.cfg.thresholds);
        for (r, slice) in self.resolved.iter().zip(&mut self.slices) {
            for v in Self::slice_values(r, e) {
                slice
                    .entry(v)
                    .or_insert_with(|| Counts::new(&self.cfg))
                    .add(bin, dwell, &self.cfg.thresholds);
            }
        }
    }

    pub fn merge(&mut self, other: &DwellAccumulator) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::Config(
                "cannot merge dwell accumulators with different configs".into(),
            ));
        }
        self.total.merge(&other.total);
        for (mine, theirs) in self.slices.iter_mut().zip(&other.slices) {
            for (k, c) in theirs {
                mine.entry(k.clone())
                    .or_insert_with(|| Counts::new(&self.cfg))
                    .merge(c);
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<DwellReport> {
        if self.total.n == 0 {
            return Err(Error::NoClicks);
        }
        let mut report = self.total.report(&self.cfg);
        for (key, slice) in self.cfg.slices.iter().zip(&self.slices) {
            let nested = slice
                .iter()
                .map(|(v, c)| (v.clone(), c.report(&self.cfg)))
                .collect();
            report.slices.insert(key.to_string(), nested);
        }
        Ok(report)
    }
}

/// Dwell-time PMFs and AC shares over the clicks of `events`.
pub fn dwell_analysis<I>(
    schema: &FeatureSchema,
    events: I,
    cfg: &DwellConfig,
) -> Result<DwellReport>
where
    I: IntoIterator,
    I::Item: Borrow<Event>,
{
    let mut acc = DwellAccumulator::new(schema, cfg)?;
    for e in events {
        acc.add(e.borrow());
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{FeatureField, FeatureValue, Side};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureField::single("involvement", Side::User),
            FeatureField::multi("tech", Side::User),
            FeatureField::single("ad_id", Side::Ad),
        ])
        .unwrap()
    }

    fn click(id: u64, dwell: Option<f64>, bin: &str, device: &str) -> Event {
        Event {
            event_id: id,
            user: vec![
                FeatureValue::new(0, bin),
                FeatureValue::new(1, format!("device:{device}")),
                FeatureValue::new(1, "os:x"),
            ],
            ad: vec![FeatureValue::new(2, 1i64)],
            segment: "s".into(),
            clicked: true,
            dwell_s: dwell,
            dwell_logged: dwell.is_some(),
        }
    }

    fn cfg() -> DwellConfig {
        DwellConfig {
            bin_edges: vec![0.0, 1.0, 2.0, 4.0],
            thresholds: vec![0.0, 1.0, 3.0],
            slices: vec![
                "involvement".parse().unwrap(),
                "tech:device:".parse().unwrap(),
            ],
        }
    }

    #[test]
    fn default_bins() {
        let c = DwellConfig::default();
        assert_eq!(c.bin_edges.len(), 61);
        assert_eq!(c.bin_edges[1], 0.5);
        assert_eq!(*c.bin_edges.last().unwrap(), 30.0);
        assert_eq!(c.n_bins(), 62);
    }

    #[test]
    fn binning_and_shares() {
        let events = vec![
            click(0, Some(0.0), "a", "phone"),
            click(1, Some(1.0), "a", "phone"),
            click(2, Some(3.9), "b", "desktop"),
            click(3, Some(4.0), "b", "phone"),
            click(4, None, "b", "phone"),
        ];
        let r = dwell_analysis(&schema(), &events, &cfg()).unwrap();
        assert_eq!(r.counts, vec![1, 1, 1, 1, 1]);
        assert_eq!(r.n_unlogged, 1);
        assert!((r.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r.ac_share_at(0.0), Some(0.0));
        assert_eq!(r.ac_share_at(1.0), Some(20.0));
        assert_eq!(r.ac_share_at(3.0), Some(40.0));
        assert_eq!(r.ac_share_at(7.0), None);
        let inv = &r.slices["involvement"];
        assert_eq!(inv["a"].n_clicks, 2);
        assert_eq!(inv["a"].ac_share_at(3.0), Some(100.0));
        assert_eq!(inv["b"].ac_share_at(3.0), Some(0.0));
        let dev = &r.slices["tech:device:"];
        assert_eq!(
            dev.keys().collect::<Vec<_>>(),
            ["device:desktop", "device:phone"]
        );
        assert_eq!(dev["device:phone"].n_clicks, 4);
    }

    #[test]
    fn long_dwell_lands_in_terminal_bins() {
        let events: Vec<Event> = (0..10)
            .map(|i| {
                click(
                    i,
                    if i % 2 == 0 {
                        Some(4.0 + i as f64)
                    } else {
                        None
                    },
                    "a",
                    "phone",
                )
            })
            .collect();
        let r = dwell_analysis(&schema(), &events, &cfg()).unwrap();
        assert_eq!(&r.pmf[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&r.pmf[3..], &[0.5, 0.5]);
    }

    #[test]
    fn skips_are_ignored_and_no_clicks_is_an_error() {
        let mut e = click(0, None, "a", "phone");
        e.clicked = false;
        assert!(matches!(
            dwell_analysis(&schema(), [&e], &cfg()),
            Err(Error::NoClicks)
        ));
    }

    #[test]
    fn merge_equals_single_pass() {
        let events: Vec<Event> = (0..50)
            .map(|i| click(i, (i % 7 != 0).then_some(i as f64 * 0.13), "a", "phone"))
            .collect();
        let whole = dwell_analysis(&schema(), &events, &cfg()).unwrap();
        let mut a = DwellAccumulator::new(&schema(), &cfg()).unwrap();
        let mut b = DwellAccumulator::new(&schema(), &cfg()).unwrap();
        for e in events.iter().rev() {
            if e.event_id % 2 == 0 {
                a.add(e);
            } else {
                b.add(e);
            }
        }
        a.merge(&b).unwrap();
        assert_eq!(a.finish().unwrap(), whole);
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg();
        c.bin_edges = vec![1.0, 2.0];
        assert!(c.validate().is_err());
        c.bin_edges = vec![0.0, 2.0, 2.0];
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.slices = vec!["nope".parse().unwrap()];
        assert!(DwellAccumulator::new(&schema(), &c).is_err());
    }

    #[test]
    fn csv_tables() {
        let events = vec![
            click(0, Some(0.5), "a", "phone"),
            click(1, None, "b", "phone"),
        ];
        let r = dwell_analysis(&schema(), &events, &cfg()).unwrap();
        let mut buf = Vec::new();
        r.write_pmf_csv(&mut buf).unwrap();
        // 1 overall + 2 involvement + 1 device slices, 5 bins each
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 4 * 5);
        let mut buf = Vec::new();
        r.write_ac_share_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 4 * 3);
    }
}
