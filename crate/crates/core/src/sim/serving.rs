//! Rank-by-expected-revenue auction replay over competing scoring snapshots.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::{log_schema, GroundTruthWorld};
use crate::click::check_schema;
use crate::error::{Error, Result};
use crate::hashing::{rng_for, stream};
use crate::model::{sigmoid, ModelSnapshot};
use crate::schema::Side;

/// Anything that can put a pCTR on each candidate ad of an auction.
pub trait AuctionScorer: Send + Sync {
    fn check(&self, _world: &GroundTruthWorld) -> Result<()> {
        Ok(())
    }

    fn candidate_ctrs(
        &self,
        world: &GroundTruthWorld,
        user: usize,
        segment: usize,
        ads: &[usize],
    ) -> Result<Vec<f64>>;
}

impl AuctionScorer for ModelSnapshot {
    fn check(&self, _world: &GroundTruthWorld) -> Result<()> {
        check_schema(self, &log_schema())
    }

    fn candidate_ctrs(
        &self,
        world: &GroundTruthWorld,
        user: usize,
        segment: usize,
        ads: &[usize],
    ) -> Result<Vec<f64>> {
        let u = self.entity_vector(&world.user_features(user, segment), Side::User)?;
        ads.iter()
            .map(|&a| {
                let v = self.entity_vector(&world.ad_features(a), Side::Ad)?;
                Ok(sigmoid(self.score_vectors(&u, &v)))
            })
            .collect()
    }
}

/// Ground-truth total click probability.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleScorer;

impl AuctionScorer for OracleScorer {
    fn candidate_ctrs(
        &self,
        world: &GroundTruthWorld,
        user: usize,
        segment: usize,
        ads: &[usize],
    ) -> Result<Vec<f64>> {
        Ok(ads
            .iter()
            .map(|&a| world.p_total(user, a, segment))
            .collect())
    }
}

/// Another scorer with every prediction multiplied by a constant.
#[derive(Debug, Clone)]
pub struct ScaledScorer<S> {
    pub inner: S,
    pub factor: f64,
}

impl<S: AuctionScorer> AuctionScorer for ScaledScorer<S> {
    fn check(&self, world: &GroundTruthWorld) -> Result<()> {
        self.inner.check(world)
    }

    fn candidate_ctrs(
        &self,
        world: &GroundTruthWorld,
        user: usize,
        segment: usize,
        ads: &[usize],
    ) -> Result<Vec<f64>> {
        Ok(self
            .inner
            .candidate_ctrs(world, user, segment, ads)?
            .into_iter()
            .map(|p| p * self.factor)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServingConfig {
    pub n_auctions: u64,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for ServingConfig {
    fn default() -> Self {
        Self {
            n_auctions: 200_000,
            candidates: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeRevenue {
    pub n_auctions: u64,
    pub clicks: u64,
    pub revenue: f64,
    /// Revenue per thousand auctions.
    pub cpm: f64,
    /// Σ bid × true click probability of the chosen ads.
    pub expected_revenue: f64,
    pub expected_cpm: f64,
    /// Σ predicted pCTR of the chosen ads over Σ their true click probability.
    pub chosen_calibration: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServingReport {
    pub config: ServingConfig,
    pub modes: BTreeMap<String, ModeRevenue>,
    /// `"a_vs_b"` → `(CPM_a / CPM_b - 1) · 100`.
    pub cpm_lifts: BTreeMap<String, f64>,
    /// `"a_vs_b"` → fraction of auctions where both picked the same ad.
    pub choice_agreement: BTreeMap<String, f64>,
}

impl ServingReport {
    /// One row per mode.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "mode",
            "n_auctions",
            "clicks",
            "revenue",
            "cpm",
            "expected_cpm",
            "chosen_calibration",
        ])?;
        for (name, m) in &self.modes {
            w.serialize((
                name,
                m.n_auctions,
                m.clicks,
                m.revenue,
                m.cpm,
                m.expected_cpm,
                m.chosen_calibration,
            ))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn cpm_lift(cpm: f64, baseline_cpm: f64) -> f64 {
    (cpm / baseline_cpm - 1.0) * 100.0
}

/// Replays `cfg.n_auctions` auctions. Each mode ranks the same candidates
/// by `bid × pCTR`; the winner's click is drawn from the ground truth with
/// one uniform per auction shared by all modes.
pub fn simulate_serving(
    world: &GroundTruthWorld,
    scorers: &BTreeMap<String, &dyn AuctionScorer>,
    cfg: &ServingConfig,
) -> Result<ServingReport> {
    if scorers.is_empty() {
        return Err(Error::Config("empty snapshot map".into()));
    }
    if cfg.candidates == 0 {
        return Err(Error::Config("candidate set size must be positive".into()));
    }
    for s in scorers.values() {
        s.check(world)?;
    }
    let names: Vec<&String> = scorers.keys().collect();
    let k = cfg.candidates.min(world.ads.len());
    let mut modes: Vec<ModeRevenue> = vec![ModeRevenue::default(); names.len()];
    let mut pred_sum = vec![0.0; names.len()];
    let mut agree = vec![vec![0u64; names.len()]; names.len()];
    let mut choice = vec![0usize; names.len()];

    for auction in 0..cfg.n_auctions {
        let mut rng = rng_for(cfg.seed, stream::AUCTION, auction);
        let user = rng.random_range(0..world.users.len());
        let segment = rng.random_range(0..world.config.n_segments);
        let ads: Vec<usize> = sample(&mut rng, world.ads.len(), k).into_vec();
        let u_click: f64 = rng.random();

        for (m, name) in names.iter().enumerate() {
            let ctrs = scorers[*name].candidate_ctrs(world, user, segment, &ads)?;
            let mut best = 0;
            let mut best_value = f64::NEG_INFINITY;
            for (i, (&a, &p)) in ads.iter().zip(&ctrs).enumerate() {
                let value = world.ads[a].bid * p;
                if value > best_value {
                    best = i;
                    best_value = value;
                }
            }
            let ad = ads[best];
            choice[m] = ad;
            let bid = world.ads[ad].bid;
            let p_true = world.p_total(user, ad, segment);
            let rev = &mut modes[m];
            rev.n_auctions += 1;
            rev.expected_revenue += bid * p_true;
            pred_sum[m] += ctrs[best];
            rev.chosen_calibration += p_true;
            if u_click < p_true {
                rev.clicks += 1;
                rev.revenue += bid;
            }
        }
        for i in 0..names.len() {
            for j in 0..names.len() {
                agree[i][j] += u64::from(choice[i] == choice[j]);
            }
        }
    }

    let n = cfg.n_auctions.max(1) as f64;
    for (m, rev) in modes.iter_mut().enumerate() {
        rev.cpm = rev.revenue / n * 1000.0;
        rev.expected_cpm = rev.expected_revenue / n * 1000.0;
        rev.chosen_calibration = if rev.chosen_calibration > 0.0 {
            pred_sum[m] / rev.chosen_calibration
        } else {
            0.0
        };
    }
    let mut report = ServingReport {
        config: *cfg,
        ..Default::default()
    };
    for (i, a) in names.iter().enumerate() {
        for (j, b) in names.iter().enumerate() {
            if i != j {
                let key = format!("{a}_vs_{b}");
                report
                    .cpm_lifts
                    .insert(key.clone(), cpm_lift(modes[i].cpm, modes[j].cpm));
                report.choice_agreement.insert(key, agree[i][j] as f64 / n);
            }
        }
    }
    report.modes = names.into_iter().cloned().zip(modes).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyper, LatentFactorModel};
    use crate::sim::world::WorldConfig;

    fn world() -> GroundTruthWorld {
        GroundTruthWorld::build(&WorldConfig {
            n_users: 300,
            n_ads: 60,
            n_campaigns: 6,
            n_segments: 4,
            ac_share_global: Some(0.2),
            ..Default::default()
        })
        .unwrap()
    }

    fn cfg() -> ServingConfig {
        ServingConfig {
            n_auctions: 5_000,
            candidates: 10,
            seed: 3,
        }
    }

    #[test]
    fn empty_map_is_an_error() {
        let w = world();
        assert!(simulate_serving(&w, &BTreeMap::new(), &cfg()).is_err());
    }

    #[test]
    fn single_mode_has_no_lifts() {
        let w = world();
        let scorers: BTreeMap<String, &dyn AuctionScorer> =
            [("oracle".to_string(), &OracleScorer as _)].into();
        let r = simulate_serving(&w, &scorers, &cfg()).unwrap();
        assert_eq!(r.modes.len(), 1);
        assert!(r.cpm_lifts.is_empty());
        assert!((r.modes["oracle"].chosen_calibration - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_scaled_scorers_choose_identically() {
        let w = world();
        let half = ScaledScorer {
            inner: OracleScorer,
            factor: 0.5,
        };
        let scorers: BTreeMap<String, &dyn AuctionScorer> = [
            ("a".to_string(), &OracleScorer as &dyn AuctionScorer),
            ("b".to_string(), &OracleScorer as _),
            ("half".to_string(), &half as _),
        ]
        .into();
        let r = simulate_serving(&w, &scorers, &cfg()).unwrap();
        assert_eq!(r.modes["a"].revenue, r.modes["b"].revenue);
        assert_eq!(r.modes["a"].revenue, r.modes["half"].revenue);
        assert_eq!(r.choice_agreement["a_vs_half"], 1.0);
        assert_eq!(r.cpm_lifts["a_vs_b"], 0.0);
    }

    #[test]
    fn oracle_maximises_expected_revenue_per_auction() {
        let w = world();
        let m = LatentFactorModel::new(log_schema(), 4, Hyper::default(), 1).unwrap();
        let snap = m.snapshot();
        let scorers: BTreeMap<String, &dyn AuctionScorer> = [
            ("oracle".to_string(), &OracleScorer as &dyn AuctionScorer),
            ("model".to_string(), &snap as _),
        ]
        .into();
        let r = simulate_serving(&w, &scorers, &cfg()).unwrap();
        assert!(r.modes["oracle"].expected_revenue >= r.modes["model"].expected_revenue);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let w = world();
        let m = LatentFactorModel::new(crate::ac::ac_schema(), 2, Hyper::default(), 1)
            .unwrap()
            .snapshot();
        let scorers: BTreeMap<String, &dyn AuctionScorer> =
            [("m".to_string(), &m as &dyn AuctionScorer)].into();
        assert!(matches!(
            simulate_serving(&w, &scorers, &cfg()),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn lift_formula() {
        assert_eq!(cpm_lift(10.0, 10.0), 0.0);
        assert!((cpm_lift(10.118, 10.0) - 1.18).abs() < 1e-9);
    }
}
