//! Temporal-convolution ground reaction force predictor.
//!
//! Four same-length 1D convolutions (kernel 7) followed by three frame-wise
//! dense layers, ELU after every convolution and after the first two dense
//! layers. The network maps `T × D` features to `T × 6` forces (left and
//! right foot, body weights). Gradients are written out by hand and checked
//! against finite differences in the tests.

mod checkpoint;
mod loss;
mod net;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::metrics::MetricsError;
use crate::motion_data::{DataError, Vec3};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use loss::{backward, composite_loss, gradient_check, sample_loss, GradientCheck, LossTerms, Sample};
pub use net::{Conv1d, Dense, TemporalConvNet, KERNEL_WIDTH, OUTPUT_WIDTH};
pub use train::{
    predict_clip, prepare, train, Adam, EpochLog, PreparedClip, TrainingLog, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPS,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature width mismatch: network expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("input has no frames")]
    EmptyInput,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("incompatible checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Exponential linear unit with α = 1.
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`] at `x`.
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Layer widths. The number of layers and the kernel width are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_width: usize,
    pub conv_width: usize,
    pub fc_hidden: [usize; 2],
}

impl NetShape {
    /// Default widths: 128-channel convolutions, 64 → 32 → 6 head.
    pub fn standard(input_width: usize) -> Self {
        Self {
            input_width,
            conv_width: 128,
            fc_hidden: [64, 32],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_width == 0 || self.conv_width == 0 || self.fc_hidden.contains(&0) {
            return Err(ModelError::InvalidConfig(format!("zero layer width in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight of the force-plate term.
    pub lambda1: f64,
    /// Weight of the physics term.
    pub lambda2: f64,
    /// Training window length, frames.
    pub window_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 11,
            batch_size: 64,
            learning_rate: 3e-5,
            seed: 42,
            lambda1: 0.002,
            lambda2: 0.005,
            window_len: 240,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.window_len == 0 {
            return bad("window length must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0)
            || !(self.lambda2.is_finite() && self.lambda2 >= 0.0)
        {
            return bad("loss weights must be >= 0");
        }
        Ok(())
    }
}

/// Per-frame per-foot predicted forces, body weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub forces: Vec<[Vec3; 2]>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.forces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forces.is_empty()
    }

    /// Sum over both feet for every frame.
    pub fn total(&self) -> Vec<Vec3> {
        self.forces.iter().map(|[l, r]| l + r).collect()
    }

    /// CSV: `t,L_fx,L_fy,L_fz,R_fx,R_fy,R_fz`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, frame_rate: f64) -> std::io::Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "t,L_fx,L_fy,L_fz,R_fx,R_fy,R_fz")?;
        for (t, [l, r]) in self.forces.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                t as f64 / frame_rate,
                l.x,
                l.y,
                l.z,
                r.x,
                r.y,
                r.z
            )?;
        }
        w.flush()
    }

    /// Reads the columns written by [`Prediction::write_csv`]. Extra columns
    /// (such as a plate file's CoP fields) are ignored.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self, ModelError> {
        let err = |m: String| ModelError::Data(DataError::Parse { row: 0, message: m });
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        let names = ["L_fx", "L_fy", "L_fz", "R_fx", "R_fy", "R_fz"];
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                header
                    .iter()
                    .position(|h| h == *n)
                    .ok_or_else(|| err(format!("prediction header is missing {n}")))
            })
            .collect::<Result<_, _>>()?;
        let mut forces = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let mut v = [0.0; 6];
            for (slot, &i) in v.iter_mut().zip(&idx) {
                let field = rec.get(i).unwrap_or("");
                *slot = field.parse().map_err(|_| {
                    ModelError::Data(DataError::Parse {
                        row: row + 1,
                        message: format!("cannot parse {field:?}"),
                    })
                })?;
            }
            forces.push([Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])]);
        }
        Ok(Self { forces })
    }
}
