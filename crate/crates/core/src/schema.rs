use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hashing::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Ad,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::User => f.write_str("user"),
            Side::Ad => f.write_str("ad"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureField {
    pub name: String,
    pub side: Side,
    #[serde(default)]
    pub multi_value: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary_hint: Option<u64>,
}

impl FeatureField {
    pub fn single(name: &str, side: Side) -> Self {
        Self {
            name: name.to_owned(),
            side,
            multi_value: false,
            vocabulary_hint: None,
        }
    }

    pub fn multi(name: &str, side: Side) -> Self {
        Self {
            name: name.to_owned(),
            side,
            multi_value: true,
            vocabulary_hint: None,
        }
    }
}

/// Opaque categorical identifier of a feature value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueId {
    Int(i64),
    Str(String),
}

impl ValueId {
    pub(crate) fn stable_hash(&self) -> u64 {
        match self {
            ValueId::Int(i) => fnv1a(&[&[0u8][..], &i.to_le_bytes()].concat()),
            ValueId::Str(s) => fnv1a(&[&[1u8][..], s.as_bytes()].concat()),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ValueId::Str(s) => Some(s),
            ValueId::Int(_) => None,
        }
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueId::Int(i) => write!(f, "{i}"),
            ValueId::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for ValueId {
    fn from(s: &str) -> Self {
        ValueId::Str(s.to_owned())
    }
}

impl From<String> for ValueId {
    fn from(s: String) -> Self {
        ValueId::Str(s)
    }
}

impl From<i64> for ValueId {
    fn from(i: i64) -> Self {
        ValueId::Int(i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureValue {
    pub field: usize,
    pub value: ValueId,
}

impl FeatureValue {
    pub fn new(field: usize, value: impl Into<ValueId>) -> Self {
        Self {
            field,
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureField>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureField>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &features {
            if f.name.is_empty() {
                return Err(Error::Schema("empty feature name".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
        }
        for side in [Side::User, Side::Ad] {
            if !features.iter().any(|f| f.side == side) {
                return Err(Error::Schema(format!("no {side}-side feature")));
            }
        }
        Ok(Self { features })
    }

    pub fn fields(&self) -> &[FeatureField] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn field(&self, index: usize) -> Option<&FeatureField> {
        self.features.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(self).expect("schema serialises");
        Sha256::digest(&canonical).into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    /// Checks that `values` only reference `side` fields and that single-value
    /// fields appear at most once.
    pub fn check_side(
        &self,
        values: &[FeatureValue],
        side: Side,
    ) -> std::result::Result<(), String> {
        let mut single_seen = HashSet::new();
        for fv in values {
            let field = self
                .field(fv.field)
                .ok_or_else(|| format!("field index {} out of bounds", fv.field))?;
            if field.side != side {
                return Err(format!(
                    "feature {:?} is {}-side but listed under {side}",
                    field.name, field.side
                ));
            }
            if !field.multi_value && !single_seen.insert(fv.field) {
                return Err(format!(
                    "single-value feature {:?} given more than once",
                    field.name
                ));
            }
        }
        Ok(())
    }
}

/// Re-maps features of a source schema onto a (usually smaller) target
/// schema by name. Sides follow the target, which is how the accidental-click
/// model moves the site-and-position context onto its "ad" role.
#[derive(Debug, Clone)]
pub struct FeatureProjection {
    // source field index -> target field index
    mapping: Vec<Option<usize>>,
    target_sides: Vec<Side>,
}

impl FeatureProjection {
    pub fn new(source: &FeatureSchema, target: &FeatureSchema) -> Result<Self> {
        let mut mapping = vec![None; source.len()];
        for (ti, tf) in target.fields().iter().enumerate() {
            let si = source.index_of(&tf.name).ok_or_else(|| {
                Error::SchemaMismatch(format!(
                    "target feature {:?} missing from source schema",
                    tf.name
                ))
            })?;
            if source.fields()[si].multi_value != tf.multi_value {
                return Err(Error::SchemaMismatch(format!(
                    "feature {:?} multi_value differs between schemas",
                    tf.name
                )));
            }
            mapping[si] = Some(ti);
        }
        Ok(Self {
            mapping,
            target_sides: target.fields().iter().map(|f| f.side).collect(),
        })
    }

    pub fn project(
        &self,
        user: &[FeatureValue],
        ad: &[FeatureValue],
    ) -> (Vec<FeatureValue>, Vec<FeatureValue>) {
        let mut out_user = Vec::new();
        let mut out_ad = Vec::new();
        for fv in user.iter().chain(ad) {
            if let Some(Some(ti)) = self.mapping.get(fv.field) {
                let projected = FeatureValue {
                    field: *ti,
                    value: fv.value.clone(),
                };
                match self.target_sides[*ti] {
                    Side::User => out_user.push(projected),
                    Side::Ad => out_ad.push(projected),
                }
            }
        }
        (out_user, out_ad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureField::single("involvement", Side::User),
            FeatureField::multi("tech", Side::User),
            FeatureField::single("site_position", Side::User),
            FeatureField::single("ad_id", Side::Ad),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = FeatureSchema::new(vec![
            FeatureField::single("a", Side::User),
            FeatureField::single("a", Side::Ad),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn requires_both_sides() {
        assert!(FeatureSchema::new(vec![FeatureField::single("a", Side::User)]).is_err());
        assert!(FeatureSchema::new(vec![FeatureField::single("a", Side::Ad)]).is_err());
    }

    #[test]
    fn digest_depends_on_content() {
        let a = schema();
        let mut fields = a.fields().to_vec();
        fields[0].multi_value = true;
        let b = FeatureSchema::new(fields).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), schema().digest());
    }

    #[test]
    fn side_check() {
        let s = schema();
        assert!(s
            .check_side(&[FeatureValue::new(0, "a")], Side::User)
            .is_ok());
        assert!(s
            .check_side(&[FeatureValue::new(3, "a")], Side::User)
            .is_err());
        assert!(s
            .check_side(&[FeatureValue::new(9, "a")], Side::User)
            .is_err());
        let twice = [FeatureValue::new(0, "a"), FeatureValue::new(0, "b")];
        assert!(s.check_side(&twice, Side::User).is_err());
        let multi = [FeatureValue::new(1, "a"), FeatureValue::new(1, "b")];
        assert!(s.check_side(&multi, Side::User).is_ok());
    }

    #[test]
    fn projection_moves_context_to_ad_role() {
        let src = schema();
        let target = FeatureSchema::new(vec![
            FeatureField::single("involvement", Side::User),
            FeatureField::multi("tech", Side::User),
            FeatureField::single("site_position", Side::Ad),
        ])
        .unwrap();
        let proj = FeatureProjection::new(&src, &target).unwrap();
        let user = vec![
            FeatureValue::new(0, "0-10"),
            FeatureValue::new(1, "device:phone"),
            FeatureValue::new(2, "s1"),
        ];
        let ad = vec![FeatureValue::new(3, 17)];
        let (u, a) = proj.project(&user, &ad);
        assert_eq!(
            u,
            vec![
                FeatureValue::new(0, "0-10"),
                FeatureValue::new(1, "device:phone")
            ]
        );
        assert_eq!(a, vec![FeatureValue::new(2, "s1")]);
    }

    #[test]
    fn value_id_json_is_untagged() {
        let v: Vec<ValueId> = serde_json::from_str(r#"[3, "x"]"#).unwrap();
        assert_eq!(v, vec![ValueId::Int(3), ValueId::Str("x".into())]);
        assert_ne!(
            ValueId::Int(3).stable_hash(),
            ValueId::from("3").stable_hash()
        );
    }
}
