//! Motion clips, force-plate records and the gravity model.

mod io;
mod synth;

use std::path::PathBuf;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    load_clip_csv, load_force_plate, load_force_plate_with_unit, read_clip_csv, read_force_plate,
    write_clip, write_clip_csv, write_plate, write_plate_csv, ClipMeta, Dataset, DatasetEntry,
    ForceUnit, Manifest, ManifestClip, ManifestSubject,
};
pub use synth::{gen_synthetic, synthetic_dataset, DatasetSpec, SynthKind, SynthParams};

pub type Vec3 = Vector3<f64>;

/// Number of root-position columns that lead every feature vector.
pub const ROOT_FEATURES: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("validation error at row {row}, column {column}: {message}")]
    Validation {
        row: usize,
        column: String,
        message: String,
    },
    #[error("unit error: {0}")]
    Unit(String),
    #[error("length mismatch: {what} has {got} frames, expected {expected}")]
    LengthMismatch {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl DataError {
    fn validation(row: usize, column: impl Into<String>, message: impl Into<String>) -> Self {
        DataError::Validation {
            row,
            column: column.into(),
            message: message.into(),
        }
    }
}

/// Gravitational acceleration. Stored as a positive-z magnitude and
/// subtracted from the upward reaction force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravitySpec {
    g_accel: Vec3,
}

impl GravitySpec {
    pub const STANDARD_Z: f64 = 9.81;

    pub fn new(g_accel: Vec3) -> Result<Self, DataError> {
        let norm = g_accel.norm();
        if !(norm > 0.0 && norm < 20.0) {
            return Err(DataError::Unit(format!(
                "gravity magnitude {norm} outside (0, 20) m/s^2"
            )));
        }
        Ok(Self { g_accel })
    }

    pub fn vertical(gz: f64) -> Result<Self, DataError> {
        Self::new(Vec3::new(0.0, 0.0, gz))
    }

    pub fn g_accel(&self) -> Vec3 {
        self.g_accel
    }

    pub fn magnitude(&self) -> f64 {
        self.g_accel.norm()
    }
}

impl Default for GravitySpec {
    fn default() -> Self {
        Self {
            g_accel: Vec3::new(0.0, 0.0, Self::STANDARD_Z),
        }
    }
}

/// A root trajectory with per-frame model features.
///
/// The feature vector of frame `t` is the root position followed by
/// `feature_width() - 3` additional channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    subject_id: String,
    motion_label: String,
    frame_rate: f64,
    mass: f64,
    root_positions: Vec<Vec3>,
    extra_width: usize,
    extra_features: Vec<f64>,
}

impl MotionClip {
    /// Builds a validated clip. `extra_features` holds one row per frame; all
    /// rows must share the same width (possibly zero).
    pub fn new(
        subject_id: impl Into<String>,
        motion_label: impl Into<String>,
        frame_rate: f64,
        mass: f64,
        root_positions: Vec<Vec3>,
        extra_features: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(DataError::Unit(format!("frame_rate must be > 0, got {frame_rate}")));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(DataError::Unit(format!("mass must be > 0, got {mass}")));
        }
        if root_positions.is_empty() {
            return Err(DataError::validation(0, "t", "clip has no frames"));
        }
        if extra_features.len() != root_positions.len() {
            return Err(DataError::LengthMismatch {
                what: "features".into(),
                got: extra_features.len(),
                expected: root_positions.len(),
            });
        }
        for (row, p) in root_positions.iter().enumerate() {
            for (axis, name) in ["px", "py", "pz"].iter().enumerate() {
                if !p[axis].is_finite() {
                    return Err(DataError::validation(row, *name, "non-finite root position"));
                }
            }
        }
        let extra_width = extra_features[0].len();
        let mut flat = Vec::with_capacity(extra_width * extra_features.len());
        for (row, f) in extra_features.into_iter().enumerate() {
            if f.len() != extra_width {
                return Err(DataError::validation(
                    row,
                    "f*",
                    format!("feature width {} differs from {}", f.len(), extra_width),
                ));
            }
            flat.extend(f);
        }
        Ok(Self {
            subject_id: subject_id.into(),
            motion_label: motion_label.into(),
            frame_rate,
            mass,
            root_positions,
            extra_width,
            extra_features: flat,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn motion_label(&self) -> &str {
        &self.motion_label
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.root_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.root_positions.is_empty()
    }

    pub fn root_positions(&self) -> &[Vec3] {
        &self.root_positions
    }

    /// Model input width `D` (root position plus extra channels).
    pub fn feature_width(&self) -> usize {
        ROOT_FEATURES + self.extra_width
    }

    pub fn extra_feature_row(&self, t: usize) -> &[f64] {
        &self.extra_features[t * self.extra_width..(t + 1) * self.extra_width]
    }

    /// Row-major `T × D` feature matrix.
    pub fn features(&self) -> Vec<f64> {
        let d = self.feature_width();
        let mut out = Vec::with_capacity(self.len() * d);
        for t in 0..self.len() {
            out.extend(self.root_positions[t].iter());
            out.extend_from_slice(self.extra_feature_row(t));
        }
        out
    }

    /// Timestamp of frame `t` under uniform sampling.
    pub fn time(&self, t: usize) -> f64 {
        t as f64 / self.frame_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Foot {
    Left,
    Right,
}

impl Foot {
    pub const BOTH: [Foot; 2] = [Foot::Left, Foot::Right];

    pub fn index(self) -> usize {
        match self {
            Foot::Left => 0,
            Foot::Right => 1,
        }
    }
}

/// Per-foot measured ground reaction forces in body weights.
///
/// Frames whose force contains any non-finite component are marked invalid
/// and must be ignored by every consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcePlateRecord {
    force: [Vec<Vec3>; 2],
    cop: [Vec<[f64; 2]>; 2],
    contact: [Vec<bool>; 2],
    valid_mask: Vec<bool>,
}

impl ForcePlateRecord {
    pub fn new(
        force: [Vec<Vec3>; 2],
        cop: [Vec<[f64; 2]>; 2],
        contact: [Vec<bool>; 2],
    ) -> Result<Self, DataError> {
        let len = force[0].len();
        let lens = [
            ("right force", force[1].len()),
            ("left cop", cop[0].len()),
            ("right cop", cop[1].len()),
            ("left contact", contact[0].len()),
            ("right contact", contact[1].len()),
        ];
        for (what, got) in lens {
            if got != len {
                return Err(DataError::LengthMismatch {
                    what: what.into(),
                    got,
                    expected: len,
                });
            }
        }
        let valid_mask = (0..len)
            .map(|t| force[0][t].iter().chain(force[1][t].iter()).all(|v| v.is_finite()))
            .collect();
        Ok(Self {
            force,
            cop,
            contact,
            valid_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.valid_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_mask.is_empty()
    }

    pub fn force(&self, foot: Foot) -> &[Vec3] {
        &self.force[foot.index()]
    }

    pub fn cop(&self, foot: Foot) -> &[[f64; 2]] {
        &self.cop[foot.index()]
    }

    pub fn contact(&self, foot: Foot) -> &[bool] {
        &self.contact[foot.index()]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid_mask
    }

    pub fn is_valid(&self, t: usize) -> bool {
        self.valid_mask[t]
    }

    /// Both feet at frame `t`, or `None` when the frame is masked.
    pub fn frame(&self, t: usize) -> Option<[Vec3; 2]> {
        self.valid_mask[t].then(|| [self.force[0][t], self.force[1][t]])
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }

    /// Errors unless the record has exactly `clip_len` frames.
    pub fn check_attach(&self, clip_len: usize) -> Result<(), DataError> {
        if self.len() != clip_len {
            return Err(DataError::LengthMismatch {
                what: "force plate".into(),
                got: self.len(),
                expected: clip_len,
            });
        }
        Ok(())
    }

    /// Returns a copy whose forces are divided by `scale` (e.g. `m·g` for Newton input).
    pub(crate) fn scaled(mut self, scale: f64) -> Self {
        for foot in &mut self.force {
            for f in foot.iter_mut() {
                *f /= scale;
            }
        }
        self
    }

    /// Mutable access for corruption experiments on masked frames. Validity is
    /// recomputed from the new values so the mask always matches the data.
    pub fn with_force(mut self, foot: Foot, t: usize, value: Vec3) -> Self {
        self.force[foot.index()][t] = value;
        self.valid_mask[t] = self.force[0][t]
            .iter()
            .chain(self.force[1][t].iter())
            .all(|v| v.is_finite());
        self
    }
}

/// Backward-difference root velocity, with zero velocity on the first frame.
pub fn finite_diff_velocity(clip: &MotionClip) -> Vec<Vec3> {
    let x = clip.root_positions();
    let rate = clip.frame_rate();
    std::iter::once(Vec3::zeros())
        .chain(x.windows(2).map(|w| (w[1] - w[0]) * rate))
        .collect()
}
