use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, sigmoid, LossValue};
use crate::error::{Error, Result};
use crate::hashing::{combine, rng_for, stream};
use crate::schema::{FeatureSchema, FeatureValue, Side, ValueId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub step_size: f64,
    pub adagrad_epsilon: f64,
    pub l2_lambda: f64,
    /// Standard deviation of lazily initialised vector components. Zero pins
    /// every vector at the origin, which is a fixed point of the updates and
    /// leaves a bias-only model.
    pub init_sigma: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            adagrad_epsilon: 1e-8,
            l2_lambda: 1e-6,
            init_sigma: 0.01,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.adagrad_epsilon > 0.0
            && self.l2_lambda >= 0.0
            && self.init_sigma >= 0.0
            && [
                self.step_size,
                self.adagrad_epsilon,
                self.l2_lambda,
                self.init_sigma,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid hyper-parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Slot {
    pub(crate) vector: Vec<f64>,
    /// AdaGrad squared-gradient sums; empty in scoring snapshots.
    pub(crate) accum: Vec<f64>,
}

/// Identifies one scalar parameter of a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Bias,
    Vector {
        field: usize,
        value: ValueId,
        component: usize,
    },
}

/// Scoring interface shared by trainable models and read-only snapshots.
pub trait Scorer: Send + Sync {
    fn schema(&self) -> &FeatureSchema;

    fn score(&self, user: &[FeatureValue], ad: &[FeatureValue]) -> Result<f64>;

    fn predict(&self, user: &[FeatureValue], ad: &[FeatureValue]) -> Result<f64> {
        Ok(sigmoid(self.score(user, ad)?))
    }
}

/// Bias plus one lazily created latent vector per `(field, value)`.
///
/// `s = b + ν_u · ν_a`, where each entity vector sums its single-value
/// feature vectors and averages the vectors within a multi-value field.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactorModel {
    pub(crate) schema: Arc<FeatureSchema>,
    pub(crate) dim: usize,
    pub(crate) hyper: Hyper,
    pub(crate) seed: u64,
    pub(crate) bias: f64,
    pub(crate) bias_accum: f64,
    pub(crate) tables: Vec<HashMap<ValueId, Slot>>,
}

/// Combiner weight of every distinct feature value on one side, sorted by
/// `(field, value)` so sums do not depend on entry order.
type Terms<'a> = Vec<(usize, &'a ValueId, f64)>;

impl LatentFactorModel {
    pub fn new(schema: FeatureSchema, dim: usize, hyper: Hyper, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("latent dimension must be >= 1".into()));
        }
        hyper.validate()?;
        let n = schema.len();
        Ok(Self {
            schema: Arc::new(schema),
            dim,
            hyper,
            seed,
            bias: 0.0,
            bias_accum: 0.0,
            tables: (0..n).map(|_| HashMap::new()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn set_hyper(&mut self, hyper: Hyper) -> Result<()> {
        hyper.validate()?;
        self.hyper = hyper;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }

    pub fn bias_accum(&self) -> f64 {
        self.bias_accum
    }

    pub fn n_vectors(&self) -> usize {
        self.tables.iter().map(HashMap::len).sum()
    }

    pub fn vector(&self, field: usize, value: &ValueId) -> Option<&[f64]> {
        self.tables
            .get(field)?
            .get(value)
            .map(|s| s.vector.as_slice())
    }

    pub fn accumulator(&self, field: usize, value: &ValueId) -> Option<&[f64]> {
        self.tables
            .get(field)?
            .get(value)
            .map(|s| s.accum.as_slice())
    }

    /// Overwrites (creating if needed) the vector of one feature value.
    pub fn set_vector(&mut self, field: usize, value: ValueId, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Config(format!(
                "vector length {} != dimension {}",
                vector.len(),
                self.dim
            )));
        }
        let dim = self.dim;
        let table = self
            .tables
            .get_mut(field)
            .ok_or_else(|| Error::Config(format!("field index {field} out of bounds")))?;
        table
            .entry(value)
            .and_modify(|s| s.vector.clone_from(&vector))
            .or_insert_with(|| Slot {
                vector: vector.clone(),
                accum: vec![0.0; dim],
            });
        Ok(())
    }

    /// Visits all stored vectors in `(field, value)` order.
    pub fn for_each_vector(&self, mut f: impl FnMut(usize, &ValueId, &[f64])) {
        for (field, table) in self.tables.iter().enumerate() {
            let mut keys: Vec<_> = table.keys().collect();
            keys.sort();
            for k in keys {
                f(field, k, &table[k].vector);
            }
        }
    }

    /// Deterministic initial vector of a feature value.
    pub fn init_vector(&self, field: usize, value: &ValueId) -> Vec<f64> {
        init_vector(self.seed, self.dim, self.hyper.init_sigma, field, value)
    }

    fn terms<'a>(&self, values: &'a [FeatureValue], side: Side) -> Result<Terms<'a>> {
        if values.is_empty() {
            return Err(Error::NoFeaturesForSide(side));
        }
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for fv in values {
            let field = self.schema.field(fv.field).ok_or_else(|| {
                Error::SchemaMismatch(format!("field index {} out of bounds", fv.field))
            })?;
            if field.side != side {
                return Err(Error::SchemaMismatch(format!(
                    "feature {:?} is {}-side, not {side}",
                    field.name, field.side
                )));
            }
            match counts.iter_mut().find(|(f, _)| *f == fv.field) {
                Some((_, c)) => *c += 1,
                None => counts.push((fv.field, 1)),
            }
        }
        let mut terms: Terms<'a> = values
            .iter()
            .map(|fv| {
                let w = if self.schema.fields()[fv.field].multi_value {
                    let m = counts
                        .iter()
                        .find(|(f, _)| *f == fv.field)
                        .map_or(1, |(_, c)| *c);
                    1.0 / m as f64
                } else {
                    1.0
                };
                (fv.field, &fv.value, w)
            })
            .collect();
        terms.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        // merge repeated values of a multi-value field
        terms.dedup_by(|later, kept| {
            if later.0 == kept.0 && later.1 == kept.1 {
                kept.2 += later.2;
                true
            } else {
                false
            }
        });
        Ok(terms)
    }

    fn combine_terms(&self, terms: &Terms<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(field, value, w) in terms {
            match self.tables[field].get(value) {
                Some(slot) => axpy(&mut out, w, &slot.vector),
                None => axpy(&mut out, w, &self.init_vector(field, value)),
            }
        }
        out
    }

    /// Entity vector of one side; missing vectors take their deterministic
    /// initial value without being stored.
    pub fn entity_vector(&self, values: &[FeatureValue], side: Side) -> Result<Vec<f64>> {
        let terms = self.terms(values, side)?;
        Ok(self.combine_terms(&terms))
    }

    /// Score from precomputed entity vectors.
    pub fn score_vectors(&self, user_vec: &[f64], ad_vec: &[f64]) -> f64 {
        self.bias + dot(user_vec, ad_vec)
    }

    /// Analytic gradient of the regularised loss
    /// `L'(σ(s), ℓ) + λ/2 Σ θ²` (vectors only) w.r.t. every parameter the
    /// event touches. Returns the loss at the current parameters.
    pub fn gradient(
        &self,
        user: &[FeatureValue],
        ad: &[FeatureValue],
        label: f64,
    ) -> Result<(LossValue, Vec<(ParamId, f64)>)> {
        let tu = self.terms(user, Side::User)?;
        let ta = self.terms(ad, Side::Ad)?;
        let u = self.combine_terms(&tu);
        let a = self.combine_terms(&ta);
        let loss = LossValue::cross_entropy_at_score(self.score_vectors(&u, &a), label);
        let g = loss.gradient_wrt_score;
        let lambda = self.hyper.l2_lambda;
        let mut out = vec![(ParamId::Bias, g)];
        for (terms, other) in [(&tu, &a), (&ta, &u)] {
            for &(field, value, w) in terms.iter() {
                let current = self.tables[field]
                    .get(value)
                    .map_or_else(|| self.init_vector(field, value), |s| s.vector.clone());
                for k in 0..self.dim {
                    out.push((
                        ParamId::Vector {
                            field,
                            value: value.clone(),
                            component: k,
                        },
                        g * w * other[k] + lambda * current[k],
                    ));
                }
            }
        }
        Ok((loss, out))
    }

    /// Regularised training objective at the current parameters, computed
    /// directly from the loss definition.
    pub fn objective(&self, user: &[FeatureValue], ad: &[FeatureValue], label: f64) -> Result<f64> {
        let p = self.predict(user, ad)?;
        let mut reg = 0.0;
        for (values, side) in [(user, Side::User), (ad, Side::Ad)] {
            for &(field, value, _) in &self.terms(values, side)? {
                let v = self.tables[field]
                    .get(value)
                    .map_or_else(|| self.init_vector(field, value), |s| s.vector.clone());
                reg += v.iter().map(|x| x * x).sum::<f64>();
            }
        }
        Ok(cross_entropy(p, label) + 0.5 * self.hyper.l2_lambda * reg)
    }

    pub fn param(&self, id: &ParamId) -> Option<f64> {
        match id {
            ParamId::Bias => Some(self.bias),
            ParamId::Vector {
                field,
                value,
                component,
            } => self
                .vector(*field, value)
                .and_then(|v| v.get(*component).copied()),
        }
    }

    /// Sets a parameter, materialising its vector from the lazy initial value
    /// if it does not exist yet.
    pub fn set_param(&mut self, id: &ParamId, x: f64) -> Result<()> {
        match id {
            ParamId::Bias => self.bias = x,
            ParamId::Vector {
                field,
                value,
                component,
            } => {
                let mut v = self
                    .vector(*field, value)
                    .map_or_else(|| self.init_vector(*field, value), <[f64]>::to_vec);
                *v.get_mut(*component)
                    .ok_or_else(|| Error::Config("component out of range".into()))? = x;
                self.set_vector(*field, value.clone(), v)?;
            }
        }
        Ok(())
    }

    /// One sparse AdaGrad step on the cross-entropy loss with label `label`.
    /// Returns the prediction before the update.
    pub fn sgd_update(
        &mut self,
        user: &[FeatureValue],
        ad: &[FeatureValue],
        label: f64,
    ) -> Result<f64> {
        debug_assert!((0.0..=1.0).contains(&label), "label {label} outside [0,1]");
        let tu = self.terms(user, Side::User)?;
        let ta = self.terms(ad, Side::Ad)?;
        for &(field, value, _) in tu.iter().chain(&ta) {
            if !self.tables[field].contains_key(value) {
                let vector = self.init_vector(field, value);
                self.tables[field].insert(
                    value.clone(),
                    Slot {
                        vector,
                        accum: vec![0.0; self.dim],
                    },
                );
            }
        }
        let u = self.combine_terms(&tu);
        let a = self.combine_terms(&ta);
        let p = sigmoid(self.score_vectors(&u, &a));
        let g = p - label;

        let Hyper {
            step_size: eta,
            adagrad_epsilon: eps,
            l2_lambda: lambda,
            ..
        } = self.hyper;
        self.bias_accum += g * g;
        self.bias -= eta * g / (self.bias_accum + eps).sqrt();

        for (terms, other) in [(&tu, &a), (&ta, &u)] {
            for &(field, value, w) in terms.iter() {
                let slot = self.tables[field]
                    .get_mut(value)
                    .expect("slot inserted above");
                if slot.accum.len() != slot.vector.len() {
                    slot.accum = vec![0.0; slot.vector.len()];
                }
                for ((theta, acc), o) in
                    slot.vector.iter_mut().zip(slot.accum.iter_mut()).zip(other)
                {
                    let grad = g * w * o + lambda * *theta;
                    *acc += grad * grad;
                    *theta -= eta * grad / (*acc + eps).sqrt();
                }
            }
        }
        Ok(p)
    }

    /// Read-only copy for scoring; accumulators are dropped.
    pub fn snapshot(&self) -> ModelSnapshot {
        let mut inner = self.clone();
        inner.bias_accum = 0.0;
        for table in &mut inner.tables {
            for slot in table.values_mut() {
                slot.accum = Vec::new();
            }
        }
        ModelSnapshot {
            inner: Arc::new(inner),
        }
    }

    /// Snapshot with `ln R` subtracted from the bias, undoing skip
    /// down-sampling at rate `1/R`.
    pub fn apply_downsampling_correction(&self, r: f64) -> Result<ModelSnapshot> {
        if !(r > 1.0 && r.is_finite()) {
            return Err(Error::InvalidDownsampling(r));
        }
        let snap = self.snapshot();
        let mut inner = Arc::try_unwrap(snap.inner).expect("fresh snapshot is unshared");
        inner.bias -= r.ln();
        Ok(ModelSnapshot {
            inner: Arc::new(inner),
        })
    }
}

impl Scorer for LatentFactorModel {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn score(&self, user: &[FeatureValue], ad: &[FeatureValue]) -> Result<f64> {
        let u = self.entity_vector(user, Side::User)?;
        let a = self.entity_vector(ad, Side::Ad)?;
        Ok(self.score_vectors(&u, &a))
    }
}

/// Immutable, cheaply cloneable scoring view of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub(crate) inner: Arc<LatentFactorModel>,
}

impl ModelSnapshot {
    pub fn bias(&self) -> f64 {
        self.inner.bias
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn model(&self) -> &LatentFactorModel {
        &self.inner
    }

    pub fn entity_vector(&self, values: &[FeatureValue], side: Side) -> Result<Vec<f64>> {
        self.inner.entity_vector(values, side)
    }

    pub fn score_vectors(&self, user_vec: &[f64], ad_vec: &[f64]) -> f64 {
        self.inner.score_vectors(user_vec, ad_vec)
    }

    /// Same snapshot with `ln R` subtracted from the bias.
    pub fn corrected(&self, r: f64) -> Result<ModelSnapshot> {
        if !(r > 1.0 && r.is_finite()) {
            return Err(Error::InvalidDownsampling(r));
        }
        let mut inner = (*self.inner).clone();
        inner.bias -= r.ln();
        Ok(ModelSnapshot {
            inner: Arc::new(inner),
        })
    }
}

impl Scorer for ModelSnapshot {
    fn schema(&self) -> &FeatureSchema {
        &self.inner.schema
    }

    fn score(&self, user: &[FeatureValue], ad: &[FeatureValue]) -> Result<f64> {
        self.inner.score(user, ad)
    }
}

pub(crate) fn init_vector(
    seed: u64,
    dim: usize,
    sigma: f64,
    field: usize,
    value: &ValueId,
) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    let mut rng = rng_for(
        seed,
        stream::LAZY_INIT,
        combine(field as u64, value.stable_hash()),
    );
    (0..dim)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[inline]
fn axpy(out: &mut [f64], w: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += w * v;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
