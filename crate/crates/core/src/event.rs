use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{FeatureSchema, FeatureValue, Side};

/// One impression record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u64,
    pub user: Vec<FeatureValue>,
    pub ad: Vec<FeatureValue>,
    pub segment: String,
    pub clicked: bool,
    pub dwell_s: Option<f64>,
    pub dwell_logged: bool,
}

impl Event {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        let fail = |reason: String| Error::Event {
            event_id: self.event_id,
            reason,
        };
        if let Some(d) = self.dwell_s {
            if !self.clicked {
                return Err(fail("dwell time on a skip".into()));
            }
            if !self.dwell_logged {
                return Err(fail("dwell time on a segment that does not log it".into()));
            }
            if !(d.is_finite() && d >= 0.0) {
                return Err(fail(format!("dwell time {d} is not a non-negative number")));
            }
        }
        schema.check_side(&self.user, Side::User).map_err(fail)?;
        schema.check_side(&self.ad, Side::Ad).map_err(fail)?;
        Ok(())
    }
}

/// Hindsight classification of a click by its dwell time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClickClass {
    Accidental,
    Intentional,
    Unknown,
}

/// Dwell strictly below `tau_s` is accidental; the boundary itself counts as
/// intentional.
pub fn classify_click(event: &Event, tau_s: f64) -> Result<ClickClass> {
    if !event.clicked {
        return Err(Error::NotAClick);
    }
    Ok(match event.dwell_s {
        Some(d) if d < tau_s => ClickClass::Accidental,
        Some(_) => ClickClass::Intentional,
        None => ClickClass::Unknown,
    })
}
