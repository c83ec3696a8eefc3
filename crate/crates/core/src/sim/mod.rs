//! Deterministic synthetic marketplace: ground truth, impression streams and
//! auction replay.

mod events;
mod serving;
mod world;

pub use events::{sample_events, EventSampler, Outcome, SimEvent};
pub use serving::{
    cpm_lift, simulate_serving, AuctionScorer, ModeRevenue, OracleScorer, ScaledScorer,
    ServingConfig, ServingReport,
};
pub use world::{
    log_schema, Ad, CellRate, DeviceType, GroundTruthWorld, InvolvementBin, LogNormalParams, User,
    WorldConfig, AD_ID, CAMPAIGN_ID, CATEGORY, DEMOGRAPHIC, INVOLVEMENT_AC_SHARES,
    WORLD_FORMAT_VERSION,
};
