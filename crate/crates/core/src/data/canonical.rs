//! Canonical interchange CSV: one sample per row with header
//! `subject_id,placement_label,activity_label,x,y,z,sample_index`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RawRecording;
use crate::error::{Error, Result};

pub const HEADER: [&str; 7] = [
    "subject_id",
    "placement_label",
    "activity_label",
    "x",
    "y",
    "z",
    "sample_index",
];

/// Label vocabularies for one dataset. Ids are positions in these lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub activities: Vec<String>,
    pub placements: Vec<String>,
    #[serde(default)]
    pub sampling_rate: Option<f64>,
}

impl CsvSchema {
    fn lookup(names: &[String], what: &str, value: &str, path: &Path, line: usize) -> Result<usize> {
        names.iter().position(|n| n == value).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("unknown {what} label {value:?}; valid labels: {}", names.join(", ")),
        })
    }
}

/// Reads a canonical CSV. A new recording starts whenever subject or
/// placement changes or `sample_index` fails to increase.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<RawRecording>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("expected header {}", HEADER.join(",")),
        });
    }
    let source = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let mut out: Vec<RawRecording> = Vec::new();
    let mut last_index: Option<i64> = None;
    let mut session = 0usize;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        if row.len() != HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", HEADER.len(), row.len())));
        }
        let subject = row[0].trim();
        let placement = CsvSchema::lookup(&schema.placements, "placement", row[1].trim(), path, line)?;
        let activity = CsvSchema::lookup(&schema.activities, "activity", row[2].trim(), path, line)?;
        let mut xyz = [0f32; 3];
        for (a, v) in xyz.iter_mut().enumerate() {
            let f = &row[3 + a];
            *v = f
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad number {f:?} in column {}", HEADER[3 + a])))?;
        }
        let idx: i64 = row[6]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad sample_index {:?}", &row[6])))?;
        let continues = match (out.last(), last_index) {
            (Some(r), Some(prev)) => r.subject_id == subject && r.placement == placement && idx > prev,
            _ => false,
        };
        if !continues {
            session += 1;
            out.push(RawRecording {
                subject_id: subject.to_string(),
                source: format!("{source}#{session}"),
                placement,
                samples: Vec::new(),
                activity: Vec::new(),
                sampling_rate: schema.sampling_rate,
            });
        }
        let r = out.last_mut().unwrap();
        r.samples.push(xyz);
        r.activity.push(activity);
        last_index = Some(idx);
    }
    Ok(out)
}

/// Writes recordings in canonical form; `sample_index` restarts at 0 for
/// each recording.
pub fn write_canonical_csv(
    path: impl AsRef<Path>,
    recs: &[RawRecording],
    schema: &CsvSchema,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in recs {
        r.check()?;
        let place = schema
            .placements
            .get(r.placement)
            .ok_or_else(|| Error::Data(format!("placement id {} has no name", r.placement)))?;
        for (i, (s, &a)) in r.samples.iter().zip(&r.activity).enumerate() {
            let act = schema
                .activities
                .get(a)
                .ok_or_else(|| Error::Data(format!("activity id {a} has no name")))?;
            w.write_record([
                r.subject_id.as_str(),
                place,
                act,
                &s[0].to_string(),
                &s[1].to_string(),
                &s[2].to_string(),
                &i.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
