//! CSV clip/plate files and the JSON dataset manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, ForcePlateRecord, MotionClip, Vec3, ROOT_FEATURES};

/// Tolerance on timestamp spacing, seconds.
const TIME_SPACING_TOL: f64 = 1e-6;

const PLATE_HEADER: [&str; 13] = [
    "t", "L_fx", "L_fy", "L_fz", "L_copx", "L_copy", "L_contact", "R_fx", "R_fy", "R_fz", "R_copx",
    "R_copy", "R_contact",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceUnit {
    Newton,
    Bodyweight,
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, DataError> {
    File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(e: csv::Error) -> DataError {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    DataError::Parse {
        row,
        message: e.to_string(),
    }
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64, DataError> {
    field.trim().parse::<f64>().map_err(|_| DataError::Parse {
        row,
        message: format!("column {column}: cannot parse {field:?} as a number"),
    })
}

fn parse_bool(field: &str, row: usize, column: &str) -> Result<bool, DataError> {
    match field.trim() {
        "1" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "false" | "False" | "FALSE" | "" => Ok(false),
        other => Err(DataError::Parse {
            row,
            message: format!("column {column}: cannot parse {other:?} as a contact flag"),
        }),
    }
}

/// Checks strictly increasing, uniformly spaced timestamps and returns the
/// implied frame rate (`None` for a single frame).
fn frame_rate_from_times(times: &[f64]) -> Result<Option<f64>, DataError> {
    if times.len() < 2 {
        return Ok(None);
    }
    let span = times[times.len() - 1] - times[0];
    let step = span / (times.len() - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        let d = w[1] - w[0];
        if d <= 0.0 {
            return Err(DataError::validation(i + 1, "t", "timestamps must be strictly increasing"));
        }
        if (d - step).abs() > TIME_SPACING_TOL {
            return Err(DataError::validation(
                i + 1,
                "t",
                format!("non-uniform spacing {d} vs {step}"),
            ));
        }
    }
    if step <= 0.0 {
        return Err(DataError::Unit("frame interval must be positive".into()));
    }
    Ok(Some(1.0 / step))
}

/// Metadata that the clip CSV does not carry.
#[derive(Debug, Clone)]
pub struct ClipMeta {
    pub subject_id: String,
    pub motion_label: String,
    pub mass: f64,
    /// Required for single-frame files; otherwise derived from timestamps.
    pub frame_rate: Option<f64>,
}

impl ClipMeta {
    pub fn new(subject_id: impl Into<String>, motion_label: impl Into<String>, mass: f64) -> Self {
        Self {
            subject_id: subject_id.into(),
            motion_label: motion_label.into(),
            mass,
            frame_rate: None,
        }
    }
}

pub fn read_clip_csv<R: Read>(reader: R, meta: &ClipMeta) -> Result<MotionClip, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 4 || names[..4] != ["t", "px", "py", "pz"] {
        return Err(DataError::Parse {
            row: 0,
            message: format!("clip header must start with t,px,py,pz; got {}", names.join(",")),
        });
    }
    let extra = names.len() - 4;
    for (i, name) in names[4..].iter().enumerate() {
        if *name != format!("f{i}") {
            return Err(DataError::Parse {
                row: 0,
                message: format!("expected feature column f{i}, got {name}"),
            });
        }
    }

    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut features = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_err)?;
        if rec.len() != names.len() {
            return Err(DataError::Parse {
                row,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (field, name) in rec.iter().zip(&names) {
            vals.push(parse_f64(field, row, name)?);
        }
        for (v, name) in vals.iter().zip(&names).take(4) {
            if !v.is_finite() {
                return Err(DataError::validation(row, *name, format!("non-finite value {v}")));
            }
        }
        times.push(vals[0]);
        positions.push(Vec3::new(vals[1], vals[2], vals[3]));
        features.push(vals[4..4 + extra].to_vec());
    }
    if positions.is_empty() {
        return Err(DataError::Parse {
            row: 1,
            message: "clip file has no frames".into(),
        });
    }
    let rate = match (frame_rate_from_times(&times)?, meta.frame_rate) {
        (Some(r), _) => r,
        (None, Some(r)) => r,
        (None, None) => {
            return Err(DataError::Unit(
                "single-frame clip needs an explicit frame rate".into(),
            ))
        }
    };
    MotionClip::new(
        meta.subject_id.clone(),
        meta.motion_label.clone(),
        rate,
        meta.mass,
        positions,
        features,
    )
}

pub fn load_clip_csv(path: &Path, meta: &ClipMeta) -> Result<MotionClip, DataError> {
    read_clip_csv(open(path)?, meta)
}

fn fmt(v: f64) -> String {
    // Display for f64 is the shortest representation that round-trips.
    format!("{v}")
}

pub fn write_clip<W: Write>(writer: W, clip: &MotionClip) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let extra = clip.feature_width() - ROOT_FEATURES;
    let mut header = vec!["t".to_string(), "px".into(), "py".into(), "pz".into()];
    header.extend((0..extra).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (t, p) in clip.root_positions().iter().enumerate() {
        let mut row = vec![fmt(clip.time(t)), fmt(p.x), fmt(p.y), fmt(p.z)];
        row.extend(clip.extra_feature_row(t).iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::Parse {
        row: 0,
        message: e.to_string(),
    })
}

pub fn write_clip_csv(path: &Path, clip: &MotionClip) -> Result<(), DataError> {
    write_clip(create(path)?, clip)
}

pub fn read_force_plate<R: Read>(reader: R) -> Result<ForcePlateRecord, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut index = BTreeMap::new();
    for (i, name) in header.iter().enumerate() {
        index.insert(name.to_string(), i);
    }
    let col = |name: &str| -> Result<usize, DataError> {
        index.get(name).copied().ok_or_else(|| DataError::Parse {
            row: 0,
            message: format!("plate header is missing column {name}"),
        })
    };
    let cols: Vec<usize> = PLATE_HEADER.iter().map(|n| col(n)).collect::<Result<_, _>>()?;

    let mut times = Vec::new();
    let mut force = [Vec::new(), Vec::new()];
    let mut cop = [Vec::new(), Vec::new()];
    let mut contact = [Vec::new(), Vec::new()];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_err)?;
        let get = |k: usize| -> Result<&str, DataError> {
            rec.get(cols[k]).ok_or_else(|| DataError::Parse {
                row,
                message: format!("missing field {}", PLATE_HEADER[k]),
            })
        };
        times.push(parse_f64(get(0)?, row, "t")?);
        for foot in 0..2 {
            let base = 1 + foot * 6;
            let mut v = [0.0; 5];
            for (j, slot) in v.iter_mut().enumerate() {
                *slot = parse_f64(get(base + j)?, row, PLATE_HEADER[base + j])?;
            }
            force[foot].push(Vec3::new(v[0], v[1], v[2]));
            cop[foot].push([v[3], v[4]]);
            contact[foot].push(parse_bool(get(base + 5)?, row, PLATE_HEADER[base + 5])?);
        }
    }
    frame_rate_from_times(&times)?;
    ForcePlateRecord::new(force, cop, contact)
}

/// Loads a plate file as stored (no unit conversion).
pub fn load_force_plate(path: &Path) -> Result<ForcePlateRecord, DataError> {
    read_force_plate(open(path)?)
}

/// Loads a plate file and converts forces to body weights.
pub fn load_force_plate_with_unit(
    path: &Path,
    unit: ForceUnit,
    mass: f64,
    g: f64,
) -> Result<ForcePlateRecord, DataError> {
    let rec = load_force_plate(path)?;
    Ok(match unit {
        ForceUnit::Bodyweight => rec,
        ForceUnit::Newton => rec.scaled(mass * g),
    })
}

pub fn write_plate<W: Write>(writer: W, plate: &ForcePlateRecord, frame_rate: f64) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PLATE_HEADER).map_err(csv_err)?;
    for t in 0..plate.len() {
        let mut row = vec![fmt(t as f64 / frame_rate)];
        for foot in super::Foot::BOTH {
            let f = plate.force(foot)[t];
            let c = plate.cop(foot)[t];
            row.extend([fmt(f.x), fmt(f.y), fmt(f.z), fmt(c[0]), fmt(c[1])]);
            row.push(if plate.contact(foot)[t] { "1" } else { "0" }.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::Parse {
        row: 0,
        message: e.to_string(),
    })
}

pub fn write_plate_csv(path: &Path, plate: &ForcePlateRecord, frame_rate: f64) -> Result<(), DataError> {
    write_plate(create(path)?, plate, frame_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClip {
    pub motion_label: String,
    pub clip_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plate_path: Option<String>,
    #[serde(default = "default_unit")]
    pub force_unit: ForceUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_rate: Option<f64>,
}

fn default_unit() -> ForceUnit {
    ForceUnit::Bodyweight
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    pub id: String,
    pub mass_kg: f64,
    pub clips: Vec<ManifestClip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subjects: Vec<ManifestSubject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    /// Stable identifier derived from the clip file name; used to name
    /// per-clip output artifacts.
    pub key: String,
    pub clip: MotionClip,
    pub plate: Option<ForcePlateRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn load_manifest(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, base, super::GravitySpec::STANDARD_Z)
    }

    /// Resolves manifest paths relative to `base`. Newton plates are converted
    /// with `g_norm` (the fixed 9.81 normalization constant by default).
    pub fn from_manifest(manifest: &Manifest, base: &Path, g_norm: f64) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for subject in &manifest.subjects {
            if !(subject.mass_kg.is_finite() && subject.mass_kg > 0.0) {
                return Err(DataError::Unit(format!(
                    "subject {} has non-positive mass {}",
                    subject.id, subject.mass_kg
                )));
            }
            for c in &subject.clips {
                let clip_path = base.join(&c.clip_path);
                let meta = ClipMeta {
                    subject_id: subject.id.clone(),
                    motion_label: c.motion_label.clone(),
                    mass: subject.mass_kg,
                    frame_rate: c.frame_rate,
                };
                let clip = load_clip_csv(&clip_path, &meta)?;
                let plate = match &c.plate_path {
                    Some(p) => {
                        let rec = load_force_plate_with_unit(
                            &base.join(p),
                            c.force_unit,
                            subject.mass_kg,
                            g_norm,
                        )?;
                        rec.check_attach(clip.len())?;
                        Some(rec)
                    }
                    None => None,
                };
                let key = clip_key(&clip_path);
                if !seen.insert(key.clone()) {
                    return Err(DataError::Manifest(format!("duplicate clip key {key}")));
                }
                entries.push(DatasetEntry { key, clip, plate });
            }
        }
        if entries.is_empty() {
            return Err(DataError::Manifest("manifest lists no clips".into()));
        }
        Ok(Self { entries })
    }

    /// Writes `<key>.clip.csv` / `<key>.plate.csv` per entry and a manifest
    /// with relative paths. Returns every path written, manifest last.
    pub fn write(&self, dir: &Path, manifest_name: &str) -> Result<Vec<PathBuf>, DataError> {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut written = Vec::new();
        let mut subjects: Vec<ManifestSubject> = Vec::new();
        for e in &self.entries {
            let clip_name = format!("{}.clip.csv", e.key);
            write_clip_csv(&dir.join(&clip_name), &e.clip)?;
            written.push(dir.join(&clip_name));
            let plate_path = match &e.plate {
                Some(p) => {
                    let name = format!("{}.plate.csv", e.key);
                    write_plate_csv(&dir.join(&name), p, e.clip.frame_rate())?;
                    written.push(dir.join(&name));
                    Some(name)
                }
                None => None,
            };
            let entry = ManifestClip {
                motion_label: e.clip.motion_label().to_string(),
                clip_path: clip_name,
                plate_path,
                force_unit: ForceUnit::Bodyweight,
                frame_rate: (e.clip.len() == 1).then(|| e.clip.frame_rate()),
            };
            match subjects.iter_mut().find(|s| s.id == e.clip.subject_id()) {
                Some(s) => s.clips.push(entry),
                None => subjects.push(ManifestSubject {
                    id: e.clip.subject_id().to_string(),
                    mass_kg: e.clip.mass(),
                    clips: vec![entry],
                }),
            }
        }
        let manifest = Manifest { subjects };
        let path = dir.join(manifest_name);
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| DataError::Manifest(e.to_string()))?;
        std::fs::write(&path, json + "\n").map_err(|source| DataError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
        Ok(written)
    }

    pub fn subjects(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            self.entries.iter().map(|e| e.clip.subject_id()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn by_subject(&self) -> BTreeMap<String, Vec<&DatasetEntry>> {
        let mut map: BTreeMap<String, Vec<&DatasetEntry>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(e.clip.subject_id().to_string()).or_default().push(e);
        }
        map
    }

    pub fn clips(&self) -> Vec<MotionClip> {
        self.entries.iter().map(|e| e.clip.clone()).collect()
    }

    pub fn for_subjects<'a>(&'a self, subjects: &'a [String]) -> impl Iterator<Item = &'a DatasetEntry> {
        self.entries
            .iter()
            .filter(move |e| subjects.iter().any(|s| s == e.clip.subject_id()))
    }
}

fn clip_key(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.trim_end_matches(".csv")
        .trim_end_matches(".clip")
        .to_string()
}
