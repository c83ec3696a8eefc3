//! Versioned binary model files.
//!
//! Layout (little endian):
//!
//! ```text
//! magic        8 bytes  "ACLKMDL\0"
//! version      u32
//! kind         u8       0 = trainable model, 1 = scoring snapshot
//! digest       32 bytes SHA-256 of the schema's canonical JSON
//! schema       u32 length + JSON bytes
//! dim          u32
//! seed         u64
//! hyper        4 × f64  step_size, adagrad_epsilon, l2_lambda, init_sigma
//! bias         f64
//! bias_accum   f64
//! per field:   u64 count, then entries sorted by value id:
//!                tag u8 (0 int, 1 string), i64 | u32 length + UTF-8,
//!                dim × f64 vector, dim × f64 accumulators (kind 0 only)
//! checksum     32 bytes SHA-256 of everything above
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::lfm::{Hyper, LatentFactorModel, ModelSnapshot, Slot};
use crate::error::{Error, Result};
use crate::schema::{FeatureSchema, ValueId};

pub const MAGIC: &[u8; 8] = b"ACLKMDL\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_MODEL: u8 = 0;
const KIND_SNAPSHOT: u8 = 1;

fn encode(model: &LatentFactorModel, kind: u8) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LE>(FORMAT_VERSION).unwrap();
    buf.write_u8(kind).unwrap();
    buf.extend_from_slice(&model.schema.digest());
    let schema_json = serde_json::to_vec(&*model.schema).expect("schema serialises");
    buf.write_u32::<LE>(schema_json.len() as u32).unwrap();
    buf.extend_from_slice(&schema_json);
    buf.write_u32::<LE>(model.dim as u32).unwrap();
    buf.write_u64::<LE>(model.seed).unwrap();
    let h = model.hyper;
    for v in [
        h.step_size,
        h.adagrad_epsilon,
        h.l2_lambda,
        h.init_sigma,
        model.bias,
        model.bias_accum,
    ] {
        buf.write_f64::<LE>(v).unwrap();
    }
    for table in &model.tables {
        let mut keys: Vec<&ValueId> = table.keys().collect();
        keys.sort();
        buf.write_u64::<LE>(keys.len() as u64).unwrap();
        for key in keys {
            match key {
                ValueId::Int(i) => {
                    buf.write_u8(0).unwrap();
                    buf.write_i64::<LE>(*i).unwrap();
                }
                ValueId::Str(s) => {
                    buf.write_u8(1).unwrap();
                    buf.write_u32::<LE>(s.len() as u32).unwrap();
                    buf.extend_from_slice(s.as_bytes());
                }
            }
            let slot = &table[key];
            for v in &slot.vector {
                buf.write_f64::<LE>(*v).unwrap();
            }
            if kind == KIND_MODEL {
                for i in 0..model.dim {
                    buf.write_f64::<LE>(slot.accum.get(i).copied().unwrap_or(0.0))
                        .unwrap();
                }
            }
        }
    }
    let checksum = Sha256::digest(&buf);
    buf.extend_from_slice(&checksum);
    buf
}

fn decode(bytes: &[u8]) -> Result<(LatentFactorModel, u8)> {
    let fmt = |m: &str| Error::Format(m.to_owned());
    if bytes.len() < MAGIC.len() + 32 {
        return Err(fmt("file too short"));
    }
    if &bytes[..8] != MAGIC {
        return Err(fmt("bad magic bytes"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(fmt("checksum mismatch"));
    }
    let mut r = &body[8..];
    let eof = |_| fmt("truncated model file");
    let version = r.read_u32::<LE>().map_err(eof)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let kind = r.read_u8().map_err(eof)?;
    if kind != KIND_MODEL && kind != KIND_SNAPSHOT {
        return Err(Error::Format(format!("unknown model kind {kind}")));
    }
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest).map_err(eof)?;
    let len = r.read_u32::<LE>().map_err(eof)? as usize;
    if r.len() < len {
        return Err(fmt("truncated schema"));
    }
    let schema: FeatureSchema = serde_json::from_slice(&r[..len])?;
    r = &r[len..];
    let schema = FeatureSchema::new(schema.fields().to_vec())?;
    if schema.digest() != digest {
        return Err(Error::SchemaMismatch(
            "stored schema digest does not match stored schema".into(),
        ));
    }
    let dim = r.read_u32::<LE>().map_err(eof)? as usize;
    let seed = r.read_u64::<LE>().map_err(eof)?;
    let mut f = [0.0; 6];
    for v in &mut f {
        *v = r.read_f64::<LE>().map_err(eof)?;
    }
    let hyper = Hyper {
        step_size: f[0],
        adagrad_epsilon: f[1],
        l2_lambda: f[2],
        init_sigma: f[3],
    };
    let mut model = LatentFactorModel::new(schema, dim, hyper, seed)?;
    model.bias = f[4];
    model.bias_accum = f[5];
    for field in 0..model.schema.len() {
        let n = r.read_u64::<LE>().map_err(eof)? as usize;
        let mut table = HashMap::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let key = match r.read_u8().map_err(eof)? {
                0 => ValueId::Int(r.read_i64::<LE>().map_err(eof)?),
                1 => {
                    let l = r.read_u32::<LE>().map_err(eof)? as usize;
                    if r.len() < l {
                        return Err(fmt("truncated value id"));
                    }
                    let s =
                        std::str::from_utf8(&r[..l]).map_err(|_| fmt("value id is not UTF-8"))?;
                    r = &r[l..];
                    ValueId::Str(s.to_owned())
                }
                t => return Err(Error::Format(format!("unknown value tag {t}"))),
            };
            let mut vector = vec![0.0; dim];
            r.read_f64_into::<LE>(&mut vector).map_err(eof)?;
            let accum = if kind == KIND_MODEL {
                let mut a = vec![0.0; dim];
                r.read_f64_into::<LE>(&mut a).map_err(eof)?;
                a
            } else {
                Vec::new()
            };
            table.insert(key, Slot { vector, accum });
        }
        model.tables[field] = table;
    }
    if !r.is_empty() {
        return Err(fmt("trailing bytes"));
    }
    Ok((model, kind))
}

impl LatentFactorModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self, KIND_MODEL)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match decode(bytes)? {
            (m, KIND_MODEL) => Ok(m),
            _ => Err(Error::Format(
                "file holds a scoring snapshot, not a trainable model".into(),
            )),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

impl ModelSnapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.inner, KIND_SNAPSHOT)
    }

    /// Accepts snapshot files and full model files (whose accumulators are
    /// then discarded).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (model, kind) = decode(bytes)?;
        Ok(if kind == KIND_MODEL {
            model.snapshot()
        } else {
            ModelSnapshot {
                inner: Arc::new(model),
            }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Scorer;
    use crate::schema::{FeatureField, FeatureValue, Side};

    fn trained() -> LatentFactorModel {
        let schema = FeatureSchema::new(vec![
            FeatureField::single("u", Side::User),
            FeatureField::multi("tech", Side::User),
            FeatureField::single("a", Side::Ad),
        ])
        .unwrap();
        let mut m = LatentFactorModel::new(schema, 3, Hyper::default(), 9).unwrap();
        for i in 0..50i64 {
            let user = vec![
                FeatureValue::new(0, format!("u{}", i % 7)),
                FeatureValue::new(1, "os:x"),
                FeatureValue::new(1, i % 3),
            ];
            let ad = vec![FeatureValue::new(2, i % 5)];
            m.sgd_update(&user, &ad, (i % 2) as f64 * 0.9).unwrap();
        }
        m
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = trained();
        let bytes = m.to_bytes();
        let back = LatentFactorModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn snapshot_round_trip() {
        let snap = trained().apply_downsampling_correction(4.0).unwrap();
        let back = ModelSnapshot::from_bytes(&snap.to_bytes()).unwrap();
        assert_eq!(back, snap);
        assert!(LatentFactorModel::from_bytes(&snap.to_bytes()).is_err());
        let user = [FeatureValue::new(0, "u1"), FeatureValue::new(1, 2i64)];
        let ad = [FeatureValue::new(2, 3i64)];
        assert_eq!(
            back.predict(&user, &ad).unwrap(),
            snap.predict(&user, &ad).unwrap()
        );
    }

    #[test]
    fn model_file_loads_as_snapshot() {
        let m = trained();
        let snap = ModelSnapshot::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(snap, m.snapshot());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = trained().to_bytes();
        let n = bytes.len();
        bytes[n / 2] ^= 1;
        assert!(matches!(
            LatentFactorModel::from_bytes(&bytes),
            Err(Error::Format(_))
        ));

        let mut bad_magic = trained().to_bytes();
        bad_magic[0] = b'X';
        assert!(LatentFactorModel::from_bytes(&bad_magic).is_err());
        assert!(LatentFactorModel::from_bytes(&[1, 2, 3]).is_err());
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = trained().to_bytes();
        bytes[8] = 99;
        let n = bytes.len();
        let sum = Sha256::digest(&bytes[..n - 32]);
        bytes[n - 32..].copy_from_slice(&sum);
        let err = LatentFactorModel::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = trained();
        m.save(&path).unwrap();
        assert_eq!(LatentFactorModel::load(&path).unwrap(), m);
    }
}
