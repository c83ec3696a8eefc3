use std::borrow::Borrow;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::world::GroundTruthWorld;
use crate::event::Event;
use crate::hashing::{rng_for, stream};

/// Generative outcome of an impression; never written to event logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Skip,
    Accidental,
    Intentional,
}

/// A public event plus the private ground truth it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub event: Event,
    pub outcome: Outcome,
    pub user: usize,
    pub ad: usize,
    pub segment: usize,
    pub p_ac: f64,
    pub p_ic: f64,
}

impl SimEvent {
    pub fn p_total(&self) -> f64 {
        self.p_ac + (1.0 - self.p_ac) * self.p_ic
    }
}

impl Borrow<Event> for SimEvent {
    fn borrow(&self) -> &Event {
        &self.event
    }
}

/// Deterministic impression stream. Event `i` depends only on
/// `(stream seed, i)`, so any index range can be generated independently.
#[derive(Debug, Clone)]
pub struct EventSampler<'w> {
    world: &'w GroundTruthWorld,
    seed: u64,
    range: Range<u64>,
    ic_dwell: LogNormal<f64>,
}

impl<'w> EventSampler<'w> {
    pub fn new(world: &'w GroundTruthWorld, seed: u64, range: Range<u64>) -> Self {
        let p = world.config.dwell_ic;
        Self {
            world,
            seed,
            range,
            ic_dwell: LogNormal::new(p.mu, p.sigma).expect("validated sigma"),
        }
    }

    pub fn event(&self, index: u64) -> SimEvent {
        let w = self.world;
        let cfg = &w.config;
        let mut rng = rng_for(self.seed, stream::EVENT, index);
        let user = rng.random_range(0..w.users.len());
        let segment = rng.random_range(0..cfg.n_segments);
        let ad = rng.random_range(0..w.ads.len());
        let p_ac = w.p_ac(user, segment);
        let p_ic = w.p_ic(user, ad, segment);
        let (u_ac, u_ic, u_dwell): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let outcome = if u_ac < p_ac {
            Outcome::Accidental
        } else if u_ic < p_ic {
            Outcome::Intentional
        } else {
            Outcome::Skip
        };
        let logged = w.is_dwell_logged(segment);
        let dwell_s = match outcome {
            _ if !logged => None,
            Outcome::Skip => None,
            Outcome::Accidental => Some(u_dwell * (cfg.tau_gen_s + cfg.dwell_blur_s)),
            Outcome::Intentional => {
                Some(cfg.tau_gen_s - cfg.dwell_blur_s + self.ic_dwell.sample(&mut rng))
            }
        };
        SimEvent {
            event: Event {
                event_id: index,
                user: w.user_features(user, segment),
                ad: w.ad_features(ad),
                segment: GroundTruthWorld::segment_name(segment),
                clicked: outcome != Outcome::Skip,
                dwell_s,
                dwell_logged: logged,
            },
            outcome,
            user,
            ad,
            segment,
            p_ac,
            p_ic,
        }
    }

    /// Splits the remaining range into `n` contiguous shards.
    pub fn shards(&self, n: usize) -> Vec<EventSampler<'w>> {
        let n = n.max(1) as u64;
        let len = self.range.end - self.range.start;
        (0..n)
            .map(|i| {
                let start = self.range.start + len * i / n;
                let end = self.range.start + len * (i + 1) / n;
                EventSampler {
                    range: start..end,
                    ..self.clone()
                }
            })
            .collect()
    }
}

impl Iterator for EventSampler<'_> {
    type Item = SimEvent;

    fn next(&mut self) -> Option<SimEvent> {
        let i = self.range.next()?;
        Some(self.event(i))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.range.size_hint()
    }
}

impl ExactSizeIterator for EventSampler<'_> {}

/// `n` impressions with ids `0..n`.
pub fn sample_events(world: &GroundTruthWorld, n: u64, seed: u64) -> EventSampler<'_> {
    EventSampler::new(world, seed, 0..n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{classify_click, ClickClass};
    use crate::sim::world::{log_schema, WorldConfig};

    fn world(cfg: WorldConfig) -> GroundTruthWorld {
        GroundTruthWorld::build(&WorldConfig {
            n_users: 400,
            n_ads: 40,
            n_campaigns: 8,
            n_segments: 6,
            ..cfg
        })
        .unwrap()
    }

    #[test]
    fn events_validate_against_schema() {
        let w = world(WorldConfig {
            dwell_logged_fraction: 0.5,
            ..Default::default()
        });
        let schema = log_schema();
        for e in sample_events(&w, 2_000, 3) {
            e.event.validate(&schema).unwrap();
            assert_eq!(e.event.dwell_logged, w.is_dwell_logged(e.segment));
            assert_eq!(e.event.clicked, e.outcome != Outcome::Skip);
        }
    }

    #[test]
    fn sharding_reproduces_the_stream() {
        let w = world(WorldConfig::default());
        let whole: Vec<_> = sample_events(&w, 1_000, 5).collect();
        let sharded: Vec<_> = sample_events(&w, 1_000, 5)
            .shards(7)
            .into_iter()
            .flatten()
            .collect();
        assert_eq!(whole, sharded);
        let other: Vec<_> = sample_events(&w, 1_000, 6).collect();
        assert_ne!(whole, other);
    }

    #[test]
    fn no_accidental_clicks_means_no_short_dwell() {
        let mut cfg = WorldConfig {
            dwell_logged_fraction: 1.0,
            ..Default::default()
        };
        for b in &mut cfg.involvement_bins {
            b.ac_share = 0.0;
        }
        let w = world(cfg);
        let short = sample_events(&w, 50_000, 1)
            .filter(|e| e.event.dwell_s.is_some_and(|d| d < w.config.tau_gen_s))
            .count();
        assert_eq!(short, 0);
    }

    #[test]
    fn dwell_separates_outcomes_at_generative_threshold() {
        let w = world(WorldConfig {
            dwell_logged_fraction: 1.0,
            ac_share_global: Some(0.2),
            ..Default::default()
        });
        let mut n_clicks = 0;
        for e in sample_events(&w, 50_000, 2).filter(|e| e.event.clicked) {
            n_clicks += 1;
            let class = classify_click(&e.event, w.config.tau_gen_s).unwrap();
            let expected = match e.outcome {
                Outcome::Accidental => ClickClass::Accidental,
                Outcome::Intentional => ClickClass::Intentional,
                Outcome::Skip => unreachable!(),
            };
            assert_eq!(class, expected);
        }
        assert!(n_clicks > 1_000);
    }

    #[test]
    fn outcome_frequencies_match_probabilities() {
        // counts within 3σ of the summed per-event Bernoulli means
        let w = world(WorldConfig {
            ac_share_global: Some(0.3),
            ..Default::default()
        });
        let (mut n_ac, mut n_ic) = (0.0f64, 0.0f64);
        let (mut m_ac, mut v_ac, mut m_ic, mut v_ic) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for e in sample_events(&w, 200_000, 4) {
            let q_ic = (1.0 - e.p_ac) * e.p_ic;
            m_ac += e.p_ac;
            v_ac += e.p_ac * (1.0 - e.p_ac);
            m_ic += q_ic;
            v_ic += q_ic * (1.0 - q_ic);
            match e.outcome {
                Outcome::Accidental => n_ac += 1.0,
                Outcome::Intentional => n_ic += 1.0,
                Outcome::Skip => {}
            }
        }
        assert!(
            (n_ac - m_ac).abs() <= 3.0 * f64::sqrt(v_ac),
            "{n_ac} vs {m_ac}"
        );
        assert!(
            (n_ic - m_ic).abs() <= 3.0 * f64::sqrt(v_ic),
            "{n_ic} vs {m_ic}"
        );
    }
}
