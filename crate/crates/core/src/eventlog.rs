//! Line-delimited JSON event logs.
//!
//! The first line is a header carrying the feature schema:
//!
//! ```text
//! {"header":{"format":"acclick-events","version":1,"schema":{...},"schema_digest":"..."}}
//! ```
//!
//! Every following line is one event. Features are keyed by name; single-value
//! fields map to a scalar and multi-value fields to a list. `dwell_s` is
//! omitted when no dwell time was logged.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::event::Event;
use crate::schema::{FeatureSchema, FeatureValue, Side, ValueId};

pub const LOG_FORMAT: &str = "acclick-events";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub schema: FeatureSchema,
    pub schema_digest: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: LogHeader,
}

struct WireFeatures<'a> {
    schema: &'a FeatureSchema,
    side: Side,
    values: &'a [FeatureValue],
}

impl Serialize for WireFeatures<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(None)?;
        for (index, field) in self
            .schema
            .fields()
            .iter()
            .enumerate()
            .filter(|(_, f)| f.side == self.side)
        {
            let mut values = self
                .values
                .iter()
                .filter(|v| v.field == index)
                .map(|v| &v.value)
                .peekable();
            if values.peek().is_none() {
                continue;
            }
            if field.multi_value {
                map.serialize_entry(&field.name, &values.collect::<Vec<_>>())?;
            } else {
                map.serialize_entry(&field.name, values.next().expect("peeked"))?;
            }
        }
        map.end()
    }
}

#[derive(Serialize)]
struct WireEventOut<'a> {
    event_id: u64,
    segment: &'a str,
    user: WireFeatures<'a>,
    ad: WireFeatures<'a>,
    clicked: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    dwell_s: Option<f64>,
    dwell_logged: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireValue {
    One(ValueId),
    Many(Vec<ValueId>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEventIn {
    event_id: u64,
    segment: String,
    user: BTreeMap<String, WireValue>,
    ad: BTreeMap<String, WireValue>,
    clicked: bool,
    dwell_s: Option<f64>,
    dwell_logged: bool,
}

fn features_from_wire(
    schema: &FeatureSchema,
    side: Side,
    mut wire: BTreeMap<String, WireValue>,
    event_id: u64,
) -> Result<Vec<FeatureValue>> {
    let fail = |reason: String| Error::Event { event_id, reason };
    let mut out = Vec::new();
    for (index, field) in schema
        .fields()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.side == side)
    {
        match (wire.remove(&field.name), field.multi_value) {
            (None, _) => {}
            (Some(WireValue::One(v)), false) => out.push(FeatureValue {
                field: index,
                value: v,
            }),
            (Some(WireValue::Many(vs)), true) => {
                out.extend(vs.into_iter().map(|value| FeatureValue {
                    field: index,
                    value,
                }))
            }
            (Some(_), multi) => {
                let expected = if multi { "a list" } else { "a single value" };
                return Err(fail(format!("feature {:?} must be {expected}", field.name)));
            }
        }
    }
    if let Some(name) = wire.keys().next() {
        return Err(fail(format!(
            "feature {name:?} is not a {side}-side field of the schema"
        )));
    }
    Ok(out)
}

/// Streams events to a writer after a schema header.
pub struct EventLogWriter<W: Write> {
    out: W,
    schema: FeatureSchema,
    n_written: u64,
}

impl EventLogWriter<BufWriter<File>> {
    pub fn create(path: &Path, schema: &FeatureSchema) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), schema)
    }
}

impl<W: Write> EventLogWriter<W> {
    pub fn new(mut out: W, schema: &FeatureSchema) -> Result<Self> {
        let header = HeaderLine {
            header: LogHeader {
                format: LOG_FORMAT.into(),
                version: LOG_VERSION,
                schema: schema.clone(),
                schema_digest: schema.digest_hex(),
            },
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        Ok(Self {
            out,
            schema: schema.clone(),
            n_written: 0,
        })
    }

    /// Features are written grouped by schema field, so an event whose
    /// features are already in field order reads back identical.
    pub fn write(&mut self, e: &Event) -> Result<()> {
        e.validate(&self.schema)?;
        let wire = WireEventOut {
            event_id: e.event_id,
            segment: &e.segment,
            user: WireFeatures {
                schema: &self.schema,
                side: Side::User,
                values: &e.user,
            },
            ad: WireFeatures {
                schema: &self.schema,
                side: Side::Ad,
                values: &e.ad,
            },
            clicked: e.clicked,
            dwell_s: e.dwell_s,
            dwell_logged: e.dwell_logged,
        };
        serde_json::to_writer(&mut self.out, &wire)?;
        self.out.write_all(b"\n")?;
        self.n_written += 1;
        Ok(())
    }

    pub fn n_written(&self) -> u64 {
        self.n_written
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Iterates the events of a log, validating each against the header schema.
pub struct EventLogReader<R: BufRead> {
    input: R,
    header: LogHeader,
    line: usize,
    buf: String,
}

impl EventLogReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> EventLogReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut buf = String::new();
        if input.read_line(&mut buf)? == 0 {
            return Err(Error::Format(
                "event log is empty; expected a header line".into(),
            ));
        }
        let HeaderLine { header } = serde_json::from_str(buf.trim_end())
            .map_err(|source| Error::Parse { line: 1, source })?;
        if header.format != LOG_FORMAT {
            return Err(Error::Format(format!(
                "not an event log: format {:?}",
                header.format
            )));
        }
        if header.version != LOG_VERSION {
            return Err(Error::Format(format!(
                "unsupported event log version {}",
                header.version
            )));
        }
        let schema = FeatureSchema::new(header.schema.fields().to_vec())?;
        if schema.digest_hex() != header.schema_digest {
            return Err(Error::Format(
                "event log schema digest does not match its schema".into(),
            ));
        }
        Ok(Self {
            input,
            header,
            line: 1,
            buf,
        })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.header.schema
    }

    fn next_event(&mut self) -> Result<Option<Event>> {
        self.buf.clear();
        if self.input.read_line(&mut self.buf)? == 0 {
            return Ok(None);
        }
        self.line += 1;
        let line = self.line;
        let wire: WireEventIn = serde_json::from_str(self.buf.trim_end_matches('\n'))
            .map_err(|source| Error::Parse { line, source })?;
        let schema = &self.header.schema;
        let e = Event {
            event_id: wire.event_id,
            user: features_from_wire(schema, Side::User, wire.user, wire.event_id)?,
            ad: features_from_wire(schema, Side::Ad, wire.ad, wire.event_id)?,
            segment: wire.segment,
            clicked: wire.clicked,
            dwell_s: wire.dwell_s,
            dwell_logged: wire.dwell_logged,
        };
        e.validate(schema)?;
        Ok(Some(e))
    }
}

impl<R: BufRead> Iterator for EventLogReader<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Result<Event>> {
        self.next_event().transpose()
    }
}

/// Reads just the header of the log at `path`.
pub fn read_header(path: &Path) -> Result<LogHeader> {
    Ok(EventLogReader::open(path)?.header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureField;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureField::single("involvement", Side::User),
            FeatureField::multi("tech", Side::User),
            FeatureField::single("ad_id", Side::Ad),
        ])
        .unwrap()
    }

    fn events() -> Vec<Event> {
        vec![
            Event {
                event_id: 7,
                user: vec![
                    FeatureValue::new(0, "b1"),
                    FeatureValue::new(1, "device:phone"),
                    FeatureValue::new(1, "os:ios"),
                ],
                ad: vec![FeatureValue::new(2, 42i64)],
                segment: "s001".into(),
                clicked: true,
                dwell_s: Some(1.25),
                dwell_logged: true,
            },
            Event {
                event_id: 8,
                user: vec![FeatureValue::new(1, "device:tablet")],
                ad: vec![FeatureValue::new(2, "x")],
                segment: "s002".into(),
                clicked: false,
                dwell_s: None,
                dwell_logged: false,
            },
        ]
    }

    fn write(events: &[Event]) -> Vec<u8> {
        let mut w = EventLogWriter::new(Vec::new(), &schema()).unwrap();
        for e in events {
            w.write(e).unwrap();
        }
        w.finish().unwrap()
    }

    fn read(bytes: &[u8]) -> Result<Vec<Event>> {
        EventLogReader::new(bytes)?.collect()
    }

    #[test]
    fn wire_format() {
        let text = String::from_utf8(write(&events())).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(text.ends_with('\n'));
        assert!(lines[0].starts_with(r#"{"header":{"format":"acclick-events","version":1,"#));
        assert_eq!(
            lines[1],
            r#"{"event_id":7,"segment":"s001","user":{"involvement":"b1","tech":["device:phone","os:ios"]},"ad":{"ad_id":42},"clicked":true,"dwell_s":1.25,"dwell_logged":true}"#
        );
        assert_eq!(
            lines[2],
            r#"{"event_id":8,"segment":"s002","user":{"tech":["device:tablet"]},"ad":{"ad_id":"x"},"clicked":false,"dwell_logged":false}"#
        );
    }

    #[test]
    fn round_trip() {
        let evs = events();
        assert_eq!(read(&write(&evs)).unwrap(), evs);
    }

    #[test]
    fn empty_log_has_header() {
        let bytes = write(&[]);
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        let r = EventLogReader::new(bytes.as_slice()).unwrap();
        assert_eq!(r.schema(), &schema());
        assert_eq!(r.count(), 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read(b""), Err(Error::Format(_))));
        let good = String::from_utf8(write(&events())).unwrap();
        let header = good.lines().next().unwrap();

        let bad_line = format!("{header}\n{{\"event_id\":1}}\n");
        assert!(matches!(
            read(bad_line.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));

        let wrong_shape = format!(
            "{header}\n{}\n",
            r#"{"event_id":1,"segment":"s","user":{"involvement":["a"]},"ad":{"ad_id":1},"clicked":false,"dwell_logged":false}"#
        );
        assert!(matches!(
            read(wrong_shape.as_bytes()),
            Err(Error::Event { event_id: 1, .. })
        ));

        let unknown = format!(
            "{header}\n{}\n",
            r#"{"event_id":1,"segment":"s","user":{"nope":"a"},"ad":{"ad_id":1},"clicked":false,"dwell_logged":false}"#
        );
        assert!(matches!(read(unknown.as_bytes()), Err(Error::Event { .. })));

        let dwell_on_skip = format!(
            "{header}\n{}\n",
            r#"{"event_id":1,"segment":"s","user":{},"ad":{"ad_id":1},"clicked":false,"dwell_s":2.0,"dwell_logged":true}"#
        );
        assert!(read(dwell_on_skip.as_bytes()).is_err());

        let tampered = good.replacen("\"ad_id\",\"side\":\"ad\"", "\"ad_idx\",\"side\":\"ad\"", 1);
        assert_ne!(tampered, good);
        assert!(matches!(read(tampered.as_bytes()), Err(Error::Format(_))));
    }
}
