use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Event;

/// Event subset an evaluation runs over.
///
/// Text form: `all`, `dwell_logged=true|false`, `segment=a,b,...`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EvalFilter {
    #[default]
    All,
    DwellLogged(bool),
    Segments(BTreeSet<String>),
}

impl EvalFilter {
    pub fn matches(&self, e: &Event) -> bool {
        match self {
            EvalFilter::All => true,
            EvalFilter::DwellLogged(v) => e.dwell_logged == *v,
            EvalFilter::Segments(s) => s.contains(&e.segment),
        }
    }
}

impl FromStr for EvalFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(EvalFilter::All);
        }
        let bad = || Error::Config(format!("cannot parse filter {s:?}"));
        let (key, value) = s.split_once('=').ok_or_else(bad)?;
        match key.trim() {
            "dwell_logged" => value
                .trim()
                .parse()
                .map(EvalFilter::DwellLogged)
                .map_err(|_| bad()),
            "segment" => {
                let set: BTreeSet<String> = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(String::from)
                    .collect();
                if set.is_empty() {
                    return Err(bad());
                }
                Ok(EvalFilter::Segments(set))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for EvalFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalFilter::All => f.write_str("all"),
            EvalFilter::DwellLogged(v) => write!(f, "dwell_logged={v}"),
            EvalFilter::Segments(s) => {
                write!(
                    f,
                    "segment={}",
                    s.iter().map(String::as_str).collect::<Vec<_>>().join(",")
                )
            }
        }
    }
}

impl TryFrom<String> for EvalFilter {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EvalFilter> for String {
    fn from(f: EvalFilter) -> String {
        f.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        for text in [
            "all",
            "dwell_logged=false",
            "dwell_logged=true",
            "segment=s001,s002",
        ] {
            let f: EvalFilter = text.parse().unwrap();
            assert_eq!(f.to_string(), text);
        }
        assert_eq!("".parse::<EvalFilter>().unwrap(), EvalFilter::All);
        assert_eq!(
            " segment = b , a "
                .parse::<EvalFilter>()
                .unwrap()
                .to_string(),
            "segment=a,b"
        );
    }

    #[test]
    fn rejects_garbage() {
        for text in [
            "dwell_logged",
            "dwell_logged=maybe",
            "segment=",
            "clicked=true",
        ] {
            assert!(text.parse::<EvalFilter>().is_err(), "{text}");
        }
    }

    #[test]
    fn matches_events() {
        let e = Event {
            event_id: 0,
            user: vec![],
            ad: vec![],
            segment: "s1".into(),
            clicked: false,
            dwell_s: None,
            dwell_logged: false,
        };
        assert!(EvalFilter::All.matches(&e));
        assert!(EvalFilter::DwellLogged(false).matches(&e));
        assert!(!EvalFilter::DwellLogged(true).matches(&e));
        assert!("segment=s1".parse::<EvalFilter>().unwrap().matches(&e));
        assert!(!"segment=s2".parse::<EvalFilter>().unwrap().matches(&e));
    }
}
