//! Physics-based ground reaction forces from motion-capture root trajectories.
//!
//! The crate is organised bottom-up:
//!
//! - [`motion_data`]: clips, force-plate records, file formats and synthetic generators.
//! - [`dynamics`]: the PD force estimator and the semi-implicit Euler root simulation.
//! - [`calibration`]: grid search over PD gains scored by vertical root position error.
//! - [`metrics`]: vGRF / vRPE evaluation, table aggregation and leave-one-subject-out splits.
//! - [`grf_model`]: a temporal-convolution force predictor trained with a composite
//!   force-plate + physics loss, with hand-written backpropagation.
//!
//! All forces inside the crate are normalized: the dynamics work on `F / m`
//! (an acceleration, m/s²) while force-plate and predicted forces are expressed
//! in body weights (`F / (m·|g|)`).

pub mod calibration;
pub mod dynamics;
pub mod grf_model;
pub mod metrics;
pub mod motion_data;

pub use calibration::{calibrate, CalibrationError, CalibrationReport, CellScore, GainGrid};
pub use dynamics::{
    euler_step, pd_force, physics_force_series, rollout_forces, simulate, DynamicsError, PDGains,
    SimMode, SimResult,
};
pub use grf_model::{
    backward, composite_loss, train, Checkpoint, LossTerms, ModelError, NetShape, Prediction,
    PreparedClip, Sample, TemporalConvNet, TrainConfig, TrainingLog,
};
pub use motion_data::{
    finite_diff_velocity, gen_synthetic, synthetic_dataset, DataError, DatasetSpec, Dataset, DatasetEntry, Foot, ForcePlateRecord,
    ForceUnit, GravitySpec, MotionClip, SynthKind, SynthParams, Vec3,
};
pub use metrics::{
    aggregate, evaluate, loso_splits, vgrf_mse, vrpe, vrpe_from_prediction, ClipScore, Evaluation,
    MetricTable, MetricsError, Split,
};
