//! Converters from the published dataset layouts to canonical CSV.
//!
//! Output: one `<kind>_subject_<id>.csv` per subject plus `meta.json`
//! holding the label vocabularies and the native sampling rate.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::canonical::{ingest_csv, write_canonical_csv, CsvSchema};
use super::RawRecording;
use crate::error::{Error, Result};

const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mhealth,
    Wisdm,
    Sleep,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mhealth => "mhealth",
            DatasetKind::Wisdm => "wisdm",
            DatasetKind::Sleep => "sleep",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mhealth" => Ok(DatasetKind::Mhealth),
            "wisdm" => Ok(DatasetKind::Wisdm),
            "sleep" => Ok(DatasetKind::Sleep),
            _ => Err(Error::Config(format!(
                "unknown dataset kind {s:?} (mhealth, wisdm, sleep)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterOptions {
    /// WISDM only: drop the watch stream, leaving a single placement.
    #[serde(default)]
    pub phone_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSummary {
    pub files: Vec<PathBuf>,
    pub schema: CsvSchema,
}

const MHEALTH_ACTIVITIES: [&str; 13] = [
    "Null",
    "Standing still",
    "Sitting and relaxing",
    "Lying down",
    "Walking",
    "Climbing stairs",
    "Waist bends forward",
    "Frontal elevation of arms",
    "Knees bending (crouching)",
    "Cycling",
    "Jogging",
    "Running",
    "Jump front & back",
];

/// Zero-based first column of each accelerometer triple.
const MHEALTH_ACC: [(&str, usize); 3] = [("chest", 0), ("wrist", 14), ("ankle", 5)];

const WISDM_ACTIVITIES: [(char, &str); 18] = [
    ('A', "Walking"),
    ('B', "Jogging"),
    ('C', "Stairs"),
    ('D', "Sitting"),
    ('E', "Standing"),
    ('F', "Typing"),
    ('G', "Brushing Teeth"),
    ('H', "Eating Soup"),
    ('I', "Eating Chips"),
    ('J', "Eating Pasta"),
    ('K', "Drinking from Cup"),
    ('L', "Eating Sandwich"),
    ('M', "Kicking (Soccer Ball)"),
    ('O', "Playing Catch w/Tennis Ball"),
    ('P', "Dribbling (Basketball)"),
    ('Q', "Writing"),
    ('R', "Clapping"),
    ('S', "Folding Clothes"),
];

const WISDM_SUBJECTS: std::ops::RangeInclusive<u32> = 1600..=1650;

const SLEEP_POSTURES: [(&str, &str); 12] = [
    ("U", "Up (Supine)"),
    ("UR", "Up Right"),
    ("RU", "Right Up"),
    ("R", "Right (Lateral Right)"),
    ("RD", "Right Down"),
    ("DR", "Down Right"),
    ("D", "Down (Prone)"),
    ("DL", "Down Left"),
    ("LD", "Left Down"),
    ("L", "Left (Lateral Left)"),
    ("LU", "Left Up"),
    ("UL", "Up Left"),
];

const SLEEP_PLACEMENTS: [&str; 3] = ["chest", "neck", "abdomen"];

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Converts the dataset under `root` into canonical CSV files in `out`.
pub fn adapt_public_dataset(
    kind: DatasetKind,
    root: impl AsRef<Path>,
    out: impl AsRef<Path>,
    opts: AdapterOptions,
) -> Result<AdapterSummary> {
    let root = root.as_ref();
    let (schema, subjects) = match kind {
        DatasetKind::Mhealth => mhealth(root)?,
        DatasetKind::Wisdm => wisdm(root, opts)?,
        DatasetKind::Sleep => sleep(root)?,
    };
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for (id, recs) in &subjects {
        let path = out.join(format!("{}_subject_{id}.csv", kind.name()));
        write_canonical_csv(&path, recs, &schema)?;
        files.push(path);
    }
    fs::write(out.join("meta.json"), serde_json::to_vec_pretty(&schema)?)?;
    Ok(AdapterSummary { files, schema })
}

/// Reads a directory produced by [`adapt_public_dataset`].
pub fn read_prepared(dir: impl AsRef<Path>) -> Result<(CsvSchema, Vec<RawRecording>)> {
    let dir = dir.as_ref();
    let meta = dir.join("meta.json");
    if !meta.is_file() {
        return Err(Error::MissingFiles {
            root: dir.to_path_buf(),
            missing: vec!["meta.json".to_string()],
        });
    }
    let schema: CsvSchema = serde_json::from_slice(&fs::read(meta)?)?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    let mut recs = Vec::new();
    for f in files {
        recs.extend(ingest_csv(&f, &schema)?);
    }
    Ok((schema, recs))
}

type Subjects = Vec<(String, Vec<RawRecording>)>;

fn to_g(v: f64) -> f32 {
    (v / STANDARD_GRAVITY) as f32
}

fn mhealth(root: &Path) -> Result<(CsvSchema, Subjects)> {
    let base = if root.join("MHEALTHDATASET").is_dir() {
        root.join("MHEALTHDATASET")
    } else {
        root.to_path_buf()
    };
    let names: Vec<String> = (1..=10).map(|k| format!("mHealth_subject{k}.log")).collect();
    let missing: Vec<String> = names.iter().filter(|n| !base.join(n).is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles {
            root: base,
            missing,
        });
    }
    let schema = CsvSchema {
        activities: MHEALTH_ACTIVITIES.iter().map(|s| s.to_string()).collect(),
        placements: MHEALTH_ACC.iter().map(|(p, _)| p.to_string()).collect(),
        sampling_rate: Some(50.0),
    };
    let mut subjects = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let path = base.join(name);
        let text = fs::read_to_string(&path)?;
        let id = (k + 1).to_string();
        let mut recs: Vec<RawRecording> = MHEALTH_ACC
            .iter()
            .enumerate()
            .map(|(p, _)| RawRecording {
                subject_id: id.clone(),
                source: name.clone(),
                placement: p,
                samples: Vec::new(),
                activity: Vec::new(),
                sampling_rate: Some(50.0),
            })
            .collect();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(&path, ln + 1, e.to_string()))?;
            if cols.len() != 24 {
                return Err(parse_err(&path, ln + 1, format!("expected 24 columns, found {}", cols.len())));
            }
            let label = cols[23];
            if label.fract() != 0.0 || !(0.0..13.0).contains(&label) {
                return Err(parse_err(&path, ln + 1, format!("label {label} outside 0..=12")));
            }
            for (r, &(_, c)) in recs.iter_mut().zip(&MHEALTH_ACC) {
                r.samples.push([to_g(cols[c]), to_g(cols[c + 1]), to_g(cols[c + 2])]);
                r.activity.push(label as usize);
            }
        }
        subjects.push((id, recs));
    }
    Ok((schema, subjects))
}

fn wisdm(root: &Path, opts: AdapterOptions) -> Result<(CsvSchema, Subjects)> {
    let base = if root.join("wisdm-dataset").is_dir() {
        root.join("wisdm-dataset")
    } else {
        root.to_path_buf()
    };
    let devices: &[(&str, &str)] = if opts.phone_only {
        &[("phone", "phone-pocket")]
    } else {
        &[("phone", "phone-pocket"), ("watch", "watch-wrist")]
    };
    let rel = |id: u32, dev: &str| format!("raw/{dev}/accel/data_{id}_accel_{dev}.txt");
    let missing: Vec<String> = WISDM_SUBJECTS
        .flat_map(|id| devices.iter().map(move |(d, _)| rel(id, d)))
        .filter(|r| !base.join(r).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles {
            root: base,
            missing,
        });
    }
    let schema = CsvSchema {
        activities: WISDM_ACTIVITIES.iter().map(|(_, n)| n.to_string()).collect(),
        placements: devices.iter().map(|(_, p)| p.to_string()).collect(),
        sampling_rate: Some(20.0),
    };
    let mut subjects = Vec::new();
    for id in WISDM_SUBJECTS {
        let mut recs = Vec::new();
        for (p, (dev, _)) in devices.iter().enumerate() {
            let r = rel(id, dev);
            let path = base.join(&r);
            let text = fs::read_to_string(&path)?;
            for (ln, line) in text.lines().enumerate() {
                let line = line.trim().trim_end_matches(';');
                if line.is_empty() {
                    continue;
                }
                let f: Vec<&str> = line.split(',').map(str::trim).collect();
                if f.len() != 6 {
                    return Err(parse_err(&path, ln + 1, format!("expected 6 fields, found {}", f.len())));
                }
                let code = f[1].chars().next().unwrap_or('?');
                let act = WISDM_ACTIVITIES
                    .iter()
                    .position(|(c, _)| *c == code && f[1].len() == 1)
                    .ok_or_else(|| parse_err(&path, ln + 1, format!("unknown activity code {:?}", f[1])))?;
                let mut xyz = [0f32; 3];
                for (a, v) in xyz.iter_mut().enumerate() {
                    let raw: f64 = f[3 + a]
                        .parse()
                        .map_err(|_| parse_err(&path, ln + 1, format!("bad number {:?}", f[3 + a])))?;
                    *v = to_g(raw);
                }
                let start_new = match recs.last() {
                    Some(RawRecording { placement, activity, .. }) => {
                        *placement != p || activity.last() != Some(&act)
                    }
                    None => true,
                };
                if start_new {
                    recs.push(RawRecording {
                        subject_id: id.to_string(),
                        source: r.clone(),
                        placement: p,
                        samples: Vec::new(),
                        activity: Vec::new(),
                        sampling_rate: Some(20.0),
                    });
                }
                let rec = recs.last_mut().unwrap();
                rec.samples.push(xyz);
                rec.activity.push(act);
            }
        }
        subjects.push((id.to_string(), recs));
    }
    Ok((schema, subjects))
}

fn sleep(root: &Path) -> Result<(CsvSchema, Subjects)> {
    let missing: Vec<String> = SLEEP_PLACEMENTS
        .iter()
        .filter(|p| !root.join(p).is_dir())
        .map(|p| format!("{p}/"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles {
            root: root.to_path_buf(),
            missing,
        });
    }
    let schema = CsvSchema {
        activities: SLEEP_POSTURES.iter().map(|(_, n)| n.to_string()).collect(),
        placements: SLEEP_PLACEMENTS.iter().map(|p| p.to_string()).collect(),
        sampling_rate: Some(50.0),
    };
    let mut by_subject: std::collections::BTreeMap<String, Vec<RawRecording>> = Default::default();
    for (p, place) in SLEEP_PLACEMENTS.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(root.join(place))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        for path in files {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            let (subject, abbr) = stem
                .rsplit_once('_')
                .ok_or_else(|| parse_err(&path, 0, "file name must be <subject>_<posture>.csv"))?;
            let posture = SLEEP_POSTURES
                .iter()
                .position(|(a, _)| a.eq_ignore_ascii_case(abbr))
                .ok_or_else(|| parse_err(&path, 0, format!("unknown posture {abbr:?}")))?;
            let mut rdr = csv::Reader::from_path(&path)?;
            let mut samples = Vec::new();
            for row in rdr.records() {
                let row = row?;
                let line = row.position().map_or(0, |p| p.line() as usize);
                if row.len() < 3 {
                    return Err(parse_err(&path, line, "expected x,y,z columns"));
                }
                let mut xyz = [0f32; 3];
                for (a, v) in xyz.iter_mut().enumerate() {
                    *v = row[a]
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(&path, line, format!("bad number {:?}", &row[a])))?;
                }
                samples.push(xyz);
            }
            let n = samples.len();
            by_subject.entry(subject.to_string()).or_default().push(RawRecording {
                subject_id: subject.to_string(),
                source: format!("{place}/{stem}.csv"),
                placement: p,
                samples,
                activity: vec![posture; n],
                sampling_rate: Some(50.0),
            });
        }
    }
    Ok((schema, by_subject.into_iter().collect()))
}
