use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ac::{INVOLVEMENT, SITE_POSITION, TECH};
use crate::error::{Error, Result};
use crate::hashing::{rng_for, stream};
use crate::model::{dot, sigmoid};
use crate::schema::{FeatureField, FeatureSchema, FeatureValue, Side};

pub const DEMOGRAPHIC: &str = "demographic";
pub const AD_ID: &str = "ad_id";
pub const CAMPAIGN_ID: &str = "campaign_id";
pub const CATEGORY: &str = "category";

// field indices of the log schema
pub(crate) const F_INVOLVEMENT: usize = 0;
pub(crate) const F_TECH: usize = 1;
pub(crate) const F_DEMOGRAPHIC: usize = 2;
pub(crate) const F_SITE_POSITION: usize = 3;
pub(crate) const F_AD_ID: usize = 4;
pub(crate) const F_CAMPAIGN: usize = 5;
pub(crate) const F_CATEGORY: usize = 6;

const OS_BY_DEVICE: [[&str; 2]; 3] = [
    ["ios", "android"],
    ["ipados", "android"],
    ["windows", "macos"],
];
const BROWSERS: [&str; 4] = ["chrome", "safari", "firefox", "edge"];
const GENDERS: [&str; 2] = ["f", "m"];
const AGES: [&str; 4] = ["18-24", "25-34", "35-54", "55+"];
const CELL_PROBES: usize = 2_000;
const BIAS_PROBES: usize = 100_000;

/// Schema of every simulated event log. Site-and-position is a user-side
/// context feature for the click model.
pub fn log_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureField::single(INVOLVEMENT, Side::User),
        FeatureField::multi(TECH, Side::User),
        FeatureField::single(DEMOGRAPHIC, Side::User),
        FeatureField::single(SITE_POSITION, Side::User),
        FeatureField::single(AD_ID, Side::Ad),
        FeatureField::single(CAMPAIGN_ID, Side::Ad),
        FeatureField::single(CATEGORY, Side::Ad),
    ])
    .expect("static schema is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvolvementBin {
    pub label: String,
    /// Share of users in the bin.
    pub weight: f64,
    /// Target share of this bin's clicks that are accidental.
    pub ac_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceType {
    pub name: String,
    pub weight: f64,
    /// Relative AC propensity; bins are rescaled to hit their share targets.
    pub ac_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRate {
    pub segment: usize,
    pub involvement: String,
    pub device: String,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_ads: usize,
    pub n_campaigns: usize,
    pub n_categories: usize,
    pub n_segments: usize,
    pub latent_dim_true: usize,
    /// Mean intentional CTR over uniformly drawn impressions.
    pub base_ic_rate: f64,
    pub involvement_bins: Vec<InvolvementBin>,
    pub devices: Vec<DeviceType>,
    /// If set, bin shares are rescaled together so the overall AC share of
    /// clicks equals this value.
    pub ac_share_global: Option<f64>,
    /// Log-normal spread of per-segment AC propensity.
    pub segment_ac_spread: f64,
    /// Explicit per-cell AC rates, applied after share calibration.
    pub ac_rate_by_cell: Vec<CellRate>,
    pub dwell_logged_fraction: f64,
    pub dwell_logged_segments: Option<Vec<usize>>,
    /// Generative AC/IC dwell boundary.
    pub tau_gen_s: f64,
    /// IC dwell is `tau_gen_s - blur + LogNormal`; AC dwell is uniform on
    /// `[0, tau_gen_s + blur)`. Zero keeps the supports separated.
    pub dwell_blur_s: f64,
    pub dwell_ic: LogNormalParams,
    pub bid: LogNormalParams,
    /// Scale of shared attribute vectors in the true model.
    pub attribute_scale: f64,
    /// Scale of per-user and per-ad idiosyncratic vectors.
    pub idiosyncratic_scale: f64,
    pub segment_ic_spread: f64,
    pub seed: u64,
}

/// Reference AC share of clicks per involvement bin at 3 s.
pub const INVOLVEMENT_AC_SHARES: [(&str, f64); 8] = [
    ("0-10", 0.0637),
    ("11-20", 0.0370),
    ("21-50", 0.0337),
    ("51-100", 0.0336),
    ("101-200", 0.0276),
    ("201-500", 0.0205),
    ("501-1000", 0.0174),
    ("1001-5000", 0.0158),
];

const BIN_WEIGHTS: [f64; 8] = [0.20, 0.10, 0.15, 0.12, 0.12, 0.13, 0.10, 0.08];

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_users: 5_000,
            n_ads: 400,
            n_campaigns: 40,
            n_categories: 8,
            n_segments: 20,
            latent_dim_true: 4,
            base_ic_rate: 0.05,
            involvement_bins: INVOLVEMENT_AC_SHARES
                .iter()
                .zip(BIN_WEIGHTS)
                .map(|(&(label, ac_share), weight)| InvolvementBin {
                    label: label.into(),
                    weight,
                    ac_share,
                })
                .collect(),
            devices: vec![
                DeviceType {
                    name: "phone".into(),
                    weight: 0.55,
                    ac_multiplier: 1.3,
                },
                DeviceType {
                    name: "tablet".into(),
                    weight: 0.20,
                    ac_multiplier: 1.0,
                },
                DeviceType {
                    name: "desktop".into(),
                    weight: 0.25,
                    ac_multiplier: 0.5,
                },
            ],
            ac_share_global: None,
            segment_ac_spread: 0.3,
            ac_rate_by_cell: Vec::new(),
            dwell_logged_fraction: 0.13,
            dwell_logged_segments: None,
            tau_gen_s: 3.0,
            dwell_blur_s: 0.0,
            dwell_ic: LogNormalParams {
                mu: 20f64.ln(),
                sigma: 1.0,
            },
            bid: LogNormalParams {
                mu: 0.0,
                sigma: 0.5,
            },
            attribute_scale: 0.8,
            idiosyncratic_scale: 0.3,
            segment_ic_spread: 0.2,
            seed: 1,
        }
    }
}

impl WorldConfig {
    /// Reference bin shares unchanged, device and segment
    /// propensities flat, dwell logged everywhere.
    pub fn involvement_reference() -> Self {
        Self {
            devices: vec![
                DeviceType {
                    name: "phone".into(),
                    weight: 0.6,
                    ac_multiplier: 1.0,
                },
                DeviceType {
                    name: "tablet".into(),
                    weight: 0.4,
                    ac_multiplier: 1.0,
                },
            ],
            segment_ac_spread: 0.0,
            dwell_logged_fraction: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_users == 0 || self.n_ads == 0 || self.n_campaigns == 0 || self.n_categories == 0 {
            return bad("n_users, n_ads, n_campaigns and n_categories must be positive".into());
        }
        if self.n_segments == 0 {
            return bad("n_segments must be positive".into());
        }
        if self.involvement_bins.is_empty() || self.devices.is_empty() {
            return bad("at least one involvement bin and one device type are required".into());
        }
        if !prob(self.base_ic_rate) || !prob(self.dwell_logged_fraction) {
            return bad("rates must lie in [0, 1]".into());
        }
        for b in &self.involvement_bins {
            if !prob(b.ac_share) || b.weight.is_nan() || b.weight < 0.0 {
                return bad(format!("invalid involvement bin {b:?}"));
            }
        }
        if self.involvement_bins.iter().map(|b| b.weight).sum::<f64>() <= 0.0 {
            return bad("involvement bin weights sum to zero".into());
        }
        for d in &self.devices {
            if !(d.weight >= 0.0 && d.ac_multiplier >= 0.0) {
                return bad(format!("invalid device {d:?}"));
            }
        }
        if self.devices.iter().map(|d| d.weight).sum::<f64>() <= 0.0 {
            return bad("device weights sum to zero".into());
        }
        if let Some(a) = self.ac_share_global {
            if !(0.0..1.0).contains(&a) {
                return bad(format!("ac_share_global {a} must lie in [0, 1)"));
            }
        }
        for c in &self.ac_rate_by_cell {
            if !prob(c.rate) || c.segment >= self.n_segments {
                return bad(format!("invalid cell rate {c:?}"));
            }
        }
        if let Some(segs) = &self.dwell_logged_segments {
            if segs.iter().any(|&s| s >= self.n_segments) {
                return bad("dwell_logged_segments out of range".into());
            }
        }
        if self.tau_gen_s.is_nan()
            || self.tau_gen_s <= 0.0
            || self.dwell_blur_s.is_nan()
            || self.dwell_blur_s < 0.0
            || self.dwell_blur_s >= self.tau_gen_s
        {
            return bad("need tau_gen_s > 0 and 0 <= dwell_blur_s < tau_gen_s".into());
        }
        if !(self.dwell_ic.sigma > 0.0 && self.bid.sigma >= 0.0) {
            return bad("log-normal sigmas must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub involvement: usize,
    pub device: usize,
    pub os: usize,
    pub browser: usize,
    pub demographic: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ad {
    pub campaign: usize,
    pub category: usize,
    pub bid: f64,
    pub vector: Vec<f64>,
}

/// Full generative ground truth of a simulated marketplace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthWorld {
    pub format_version: u32,
    pub config: WorldConfig,
    pub ic_bias: f64,
    pub users: Vec<User>,
    pub ads: Vec<Ad>,
    pub segment_ic_offset: Vec<f64>,
    pub segment_ac_multiplier: Vec<f64>,
    /// Indexed by [`GroundTruthWorld::cell`].
    pub ac_rate: Vec<f64>,
    /// Monte-Carlo mean intentional CTR per cell.
    pub cell_ic_mean: Vec<f64>,
    /// Mean of users' shares over cells, used to weight expected shares.
    pub cell_weight: Vec<f64>,
    pub dwell_logged: Vec<bool>,
}

pub const WORLD_FORMAT_VERSION: u32 = 1;

fn normal_vec(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn weighted_index(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl GroundTruthWorld {
    pub fn build(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.base_ic_rate <= 0.0 || cfg.base_ic_rate >= 1.0 {
            return Err(Error::InfeasibleWorld(format!(
                "base_ic_rate {} leaves no room for intentional clicks and skips",
                cfg.base_ic_rate
            )));
        }
        let d = cfg.latent_dim_true;
        let comp_scale = if d == 0 { 0.0 } else { (d as f64).powf(-0.25) };
        let mut rng = rng_for(cfg.seed, stream::WORLD, 0);

        let n_bins = cfg.involvement_bins.len();
        let n_dev = cfg.devices.len();
        let n_demo = GENDERS.len() * AGES.len();
        let attr = cfg.attribute_scale * comp_scale;
        let idio = cfg.idiosyncratic_scale * comp_scale;
        let demo_vecs: Vec<_> = (0..n_demo).map(|_| normal_vec(&mut rng, d, attr)).collect();
        let bin_vecs: Vec<_> = (0..n_bins).map(|_| normal_vec(&mut rng, d, attr)).collect();
        let dev_vecs: Vec<_> = (0..n_dev)
            .map(|_| normal_vec(&mut rng, d, attr * 0.5))
            .collect();
        let cat_vecs: Vec<_> = (0..cfg.n_categories)
            .map(|_| normal_vec(&mut rng, d, attr))
            .collect();
        let camp_vecs: Vec<_> = (0..cfg.n_campaigns)
            .map(|_| normal_vec(&mut rng, d, attr * 0.7))
            .collect();

        let bin_weights: Vec<f64> = cfg.involvement_bins.iter().map(|b| b.weight).collect();
        let dev_weights: Vec<f64> = cfg.devices.iter().map(|d| d.weight).collect();
        let users: Vec<User> = (0..cfg.n_users)
            .map(|_| {
                let involvement = weighted_index(&mut rng, &bin_weights);
                let device = weighted_index(&mut rng, &dev_weights);
                let os = rng.random_range(0..2);
                let browser = rng.random_range(0..BROWSERS.len());
                let demographic = rng.random_range(0..n_demo);
                let noise = normal_vec(&mut rng, d, idio);
                let vector = (0..d)
                    .map(|k| {
                        demo_vecs[demographic][k]
                            + bin_vecs[involvement][k]
                            + dev_vecs[device % n_dev][k]
                            + noise[k]
                    })
                    .collect();
                User {
                    involvement,
                    device,
                    os,
                    browser,
                    demographic,
                    vector,
                }
            })
            .collect();

        let bid_dist = LogNormal::new(cfg.bid.mu, cfg.bid.sigma)
            .map_err(|e| Error::Config(format!("bid distribution: {e}")))?;
        let ads: Vec<Ad> = (0..cfg.n_ads)
            .map(|i| {
                let campaign = i % cfg.n_campaigns;
                let category = campaign % cfg.n_categories;
                let noise = normal_vec(&mut rng, d, idio);
                let vector = (0..d)
                    .map(|k| cat_vecs[category][k] + camp_vecs[campaign][k] + noise[k])
                    .collect();
                Ad {
                    campaign,
                    category,
                    bid: bid_dist.sample(&mut rng),
                    vector,
                }
            })
            .collect();

        let segment_ic_offset: Vec<f64> = (0..cfg.n_segments)
            .map(|_| cfg.segment_ic_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let segment_ac_multiplier: Vec<f64> = {
            let raw: Vec<f64> = (0..cfg.n_segments)
                .map(|_| (cfg.segment_ac_spread * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            raw.into_iter().map(|m| m / mean).collect()
        };

        // intentional bias: match the probe mean to base_ic_rate
        let probe: Vec<f64> = (0..BIAS_PROBES)
            .map(|_| {
                let u = &users[rng.random_range(0..users.len())];
                let a = &ads[rng.random_range(0..ads.len())];
                dot(&u.vector, &a.vector) + segment_ic_offset[rng.random_range(0..cfg.n_segments)]
            })
            .collect();
        let mean_ctr =
            |b: f64| probe.iter().map(|x| sigmoid(b + x)).sum::<f64>() / probe.len() as f64;
        let ic_bias = bisect(-40.0, 40.0, cfg.base_ic_rate, mean_ctr);

        let dwell_logged = match &cfg.dwell_logged_segments {
            Some(list) => (0..cfg.n_segments).map(|s| list.contains(&s)).collect(),
            None => {
                let k = (cfg.dwell_logged_fraction * cfg.n_segments as f64).round() as usize;
                (0..cfg.n_segments).map(|s| s < k).collect()
            }
        };

        let mut world = GroundTruthWorld {
            format_version: WORLD_FORMAT_VERSION,
            config: cfg.clone(),
            ic_bias,
            users,
            ads,
            segment_ic_offset,
            segment_ac_multiplier,
            ac_rate: Vec::new(),
            cell_ic_mean: Vec::new(),
            cell_weight: Vec::new(),
            dwell_logged,
        };
        world.estimate_cells(&mut rng);
        world.calibrate_ac_rates()?;
        Ok(world)
    }

    pub fn n_bins(&self) -> usize {
        self.config.involvement_bins.len()
    }

    pub fn n_devices(&self) -> usize {
        self.config.devices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.config.n_segments * self.n_bins() * self.n_devices()
    }

    #[inline]
    pub fn cell(&self, segment: usize, involvement: usize, device: usize) -> usize {
        (segment * self.n_bins() + involvement) * self.n_devices() + device
    }

    fn estimate_cells(&mut self, rng: &mut impl Rng) {
        let n_bins = self.n_bins();
        let n_dev = self.n_devices();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_bins * n_dev];
        for (i, u) in self.users.iter().enumerate() {
            groups[u.involvement * n_dev + u.device].push(i);
        }
        let n_seg = self.config.n_segments;
        let mut ic = vec![0.0; self.n_cells()];
        let mut weight = vec![0.0; self.n_cells()];
        for seg in 0..n_seg {
            for bin in 0..n_bins {
                for dev in 0..n_dev {
                    let members = &groups[bin * n_dev + dev];
                    let c = self.cell(seg, bin, dev);
                    weight[c] = members.len() as f64 / self.users.len() as f64 / n_seg as f64;
                    if members.is_empty() {
                        continue;
                    }
                    let mut sum = 0.0;
                    for _ in 0..CELL_PROBES {
                        let u = members[rng.random_range(0..members.len())];
                        let a = rng.random_range(0..self.ads.len());
                        sum += self.p_ic(u, a, seg);
                    }
                    ic[c] = sum / CELL_PROBES as f64;
                }
            }
        }
        self.cell_ic_mean = ic;
        self.cell_weight = weight;
    }

    /// Expected (AC, click) mass of one involvement bin for AC scale `k`.
    fn bin_mass(&self, bin: usize, k: f64) -> (f64, f64) {
        let mut ac = 0.0;
        let mut clicks = 0.0;
        for seg in 0..self.config.n_segments {
            for dev in 0..self.n_devices() {
                let c = self.cell(seg, bin, dev);
                let p = self.base_propensity(seg, dev) * k;
                let p = p.min(0.999);
                ac += self.cell_weight[c] * p;
                clicks += self.cell_weight[c] * (p + (1.0 - p) * self.cell_ic_mean[c]);
            }
        }
        (ac, clicks)
    }

    fn base_propensity(&self, seg: usize, dev: usize) -> f64 {
        self.segment_ac_multiplier[seg] * self.config.devices[dev].ac_multiplier
    }

    fn bin_scale_for_share(&self, bin: usize, share: f64) -> Result<f64> {
        if share == 0.0 {
            return Ok(0.0);
        }
        let max_share = {
            let (a, c) = self.bin_mass(bin, 1e6);
            if c > 0.0 {
                a / c
            } else {
                0.0
            }
        };
        if share >= max_share {
            return Err(Error::InfeasibleWorld(format!(
                "AC share {share} unreachable for involvement bin {}",
                self.config.involvement_bins[bin].label
            )));
        }
        Ok(bisect(0.0, 1e6, share, |k| {
            let (a, c) = self.bin_mass(bin, k);
            if c > 0.0 {
                a / c
            } else {
                0.0
            }
        }))
    }

    fn calibrate_ac_rates(&mut self) -> Result<()> {
        let n_bins = self.n_bins();
        let shares: Vec<f64> = self
            .config
            .involvement_bins
            .iter()
            .map(|b| b.ac_share)
            .collect();
        let scales_for = |factor: f64| -> Result<Vec<f64>> {
            (0..n_bins)
                .map(|b| self.bin_scale_for_share(b, shares[b] * factor))
                .collect()
        };
        let scales = match self.config.ac_share_global {
            None => scales_for(1.0)?,
            Some(target) => {
                let overall = |factor: f64| -> Option<f64> {
                    let scales = scales_for(factor).ok()?;
                    let (mut a, mut c) = (0.0, 0.0);
                    for (b, k) in scales.iter().enumerate() {
                        let (ab, cb) = self.bin_mass(b, *k);
                        a += ab;
                        c += cb;
                    }
                    Some(a / c)
                };
                let max_share = shares.iter().cloned().fold(0.0, f64::max);
                if target == 0.0 || max_share == 0.0 {
                    if target > 0.0 {
                        return Err(Error::InfeasibleWorld("all bin AC shares are zero".into()));
                    }
                    vec![0.0; n_bins]
                } else {
                    // largest factor keeping every bin share below one
                    let hi = 0.999 / max_share;
                    if overall(hi).is_none_or(|s| s < target) {
                        return Err(Error::InfeasibleWorld(format!(
                            "global AC share {target} unreachable"
                        )));
                    }
                    let f = bisect(0.0, hi, target, |f| overall(f).unwrap_or(f64::INFINITY));
                    scales_for(f)?
                }
            }
        };
        let mut rates = vec![0.0; self.n_cells()];
        for seg in 0..self.config.n_segments {
            for (bin, k) in scales.iter().enumerate() {
                for dev in 0..self.n_devices() {
                    rates[self.cell(seg, bin, dev)] =
                        (self.base_propensity(seg, dev) * k).min(0.999);
                }
            }
        }
        for over in &self.config.ac_rate_by_cell {
            let bin = self
                .config
                .involvement_bins
                .iter()
                .position(|b| b.label == over.involvement);
            let dev = self
                .config
                .devices
                .iter()
                .position(|d| d.name == over.device);
            match (bin, dev) {
                (Some(b), Some(d)) => rates[self.cell(over.segment, b, d)] = over.rate,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown cell in ac_rate_by_cell: {over:?}"
                    )))
                }
            }
        }
        self.ac_rate = rates;
        Ok(())
    }

    /// True intentional click probability.
    #[inline]
    pub fn p_ic(&self, user: usize, ad: usize, segment: usize) -> f64 {
        let u = &self.users[user];
        let a = &self.ads[ad];
        sigmoid(self.ic_bias + dot(&u.vector, &a.vector) + self.segment_ic_offset[segment])
    }

    /// True accidental click probability; independent of the ad.
    #[inline]
    pub fn p_ac(&self, user: usize, segment: usize) -> f64 {
        let u = &self.users[user];
        self.ac_rate[self.cell(segment, u.involvement, u.device)]
    }

    /// `p_ac + (1 - p_ac) p_ic`: AC drawn first, outcomes exclusive.
    #[inline]
    pub fn p_total(&self, user: usize, ad: usize, segment: usize) -> f64 {
        let ac = self.p_ac(user, segment);
        ac + (1.0 - ac) * self.p_ic(user, ad, segment)
    }

    /// Expected AC share of clicks per involvement bin and overall, under
    /// uniform user/ad/segment draws.
    pub fn expected_ac_shares(&self) -> (Vec<f64>, f64) {
        let mut per_bin = Vec::new();
        let (mut a, mut c) = (0.0, 0.0);
        for bin in 0..self.n_bins() {
            let (mut ab, mut cb) = (0.0, 0.0);
            for seg in 0..self.config.n_segments {
                for dev in 0..self.n_devices() {
                    let cell = self.cell(seg, bin, dev);
                    let p = self.ac_rate[cell];
                    ab += self.cell_weight[cell] * p;
                    cb += self.cell_weight[cell] * (p + (1.0 - p) * self.cell_ic_mean[cell]);
                }
            }
            per_bin.push(if cb > 0.0 { ab / cb } else { 0.0 });
            a += ab;
            c += cb;
        }
        (per_bin, if c > 0.0 { a / c } else { 0.0 })
    }

    pub fn segment_name(segment: usize) -> String {
        format!("s{segment:03}")
    }

    pub fn is_dwell_logged(&self, segment: usize) -> bool {
        self.dwell_logged[segment]
    }

    pub fn user_features(&self, user: usize, segment: usize) -> Vec<FeatureValue> {
        let u = &self.users[user];
        let cfg = &self.config;
        let device = &cfg.devices[u.device].name;
        let os = OS_BY_DEVICE[u.device % OS_BY_DEVICE.len()][u.os];
        vec![
            FeatureValue::new(
                F_INVOLVEMENT,
                cfg.involvement_bins[u.involvement].label.as_str(),
            ),
            FeatureValue::new(F_TECH, format!("device:{device}")),
            FeatureValue::new(F_TECH, format!("os:{os}")),
            FeatureValue::new(F_TECH, format!("browser:{}", BROWSERS[u.browser])),
            FeatureValue::new(
                F_DEMOGRAPHIC,
                format!(
                    "{}:{}",
                    GENDERS[u.demographic / AGES.len()],
                    AGES[u.demographic % AGES.len()]
                ),
            ),
            FeatureValue::new(F_SITE_POSITION, Self::segment_name(segment)),
        ]
    }

    pub fn ad_features(&self, ad: usize) -> Vec<FeatureValue> {
        let a = &self.ads[ad];
        vec![
            FeatureValue::new(F_AD_ID, ad as i64),
            FeatureValue::new(F_CAMPAIGN, a.campaign as i64),
            FeatureValue::new(F_CATEGORY, a.category as i64),
        ]
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("world serialises")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let world: GroundTruthWorld = serde_json::from_slice(&std::fs::read(path)?)?;
        if world.format_version != WORLD_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported world format version {}",
                world.format_version
            )));
        }
        Ok(world)
    }
}
