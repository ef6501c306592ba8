use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{backward, Sample};
use super::net::TemporalConvNet;
use super::{ModelError, NetShape, Prediction, TrainConfig};
use crate::dynamics::{physics_force_series, PDGains, SimMode};
use crate::metrics::evaluate;
use crate::motion_data::{Dataset, ForcePlateRecord, GravitySpec, MotionClip, Vec3};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&mut self, net: &mut TemporalConvNet, grad: &TemporalConvNet) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (((p, g), m), v) in net.params_mut().zip(grad.params()).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }

    pub fn describe() -> String {
        format!("adam(beta1={ADAM_BETA1},beta2={ADAM_BETA2},eps={ADAM_EPS})")
    }
}

/// A clip with its physics supervision precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip {
    pub key: String,
    pub clip: MotionClip,
    pub plate: Option<ForcePlateRecord>,
    /// Physics force in body weights, one entry per frame.
    pub phys_bw: Vec<Vec3>,
}

impl PreparedClip {
    pub fn new(
        key: impl Into<String>,
        clip: MotionClip,
        plate: Option<ForcePlateRecord>,
        gains: PDGains,
        gravity: &GravitySpec,
        mode: SimMode,
    ) -> Result<Self, ModelError> {
        if let Some(p) = &plate {
            p.check_attach(clip.len())?;
        }
        let g = gravity.magnitude();
        let phys_bw = physics_force_series(&clip, gains, gravity, mode)?
            .into_iter()
            .map(|f| f / g)
            .collect();
        Ok(Self {
            key: key.into(),
            clip,
            plate,
            phys_bw,
        })
    }

    fn window(&self, offset: usize, len: usize) -> Sample {
        let d = self.clip.feature_width();
        let features = self.clip.features()[offset * d..(offset + len) * d].to_vec();
        let plate = Sample::plate_targets(self.plate.as_ref(), self.clip.len())[offset..offset + len].to_vec();
        let phys = self.phys_bw[offset..offset + len].to_vec();
        Sample {
            features,
            len,
            plate,
            phys,
        }
    }
}

/// Computes the physics force for every clip of a dataset.
pub fn prepare(
    dataset: &Dataset,
    gains: PDGains,
    gravity: &GravitySpec,
    mode: SimMode,
) -> Result<Vec<PreparedClip>, ModelError> {
    dataset
        .entries
        .iter()
        .map(|e| PreparedClip::new(&e.key, e.clip.clone(), e.plate.clone(), gains, gravity, mode))
        .collect()
}

pub fn predict_clip(net: &TemporalConvNet, clip: &MotionClip) -> Result<Prediction, ModelError> {
    net.forward(&clip.features(), clip.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub term1: f64,
    pub term2: f64,
    pub test_vgrf_l: f64,
    pub test_vgrf_r: f64,
    pub test_vrpe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub optimizer: String,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "epoch,train_loss,term1,term2,test_vgrf_l,test_vgrf_r,test_vrpe")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.epoch, e.train_loss, e.term1, e.term2, e.test_vgrf_l, e.test_vgrf_r, e.test_vrpe
            )?;
        }
        w.flush()
    }
}

fn test_metrics(
    net: &TemporalConvNet,
    test_set: &[&PreparedClip],
    gravity: &GravitySpec,
) -> Result<(f64, f64, f64), ModelError> {
    if test_set.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let preds: Vec<Prediction> = test_set
        .iter()
        .map(|p| predict_clip(net, &p.clip))
        .collect::<Result<_, _>>()?;
    let items: Vec<_> = test_set
        .iter()
        .zip(&preds)
        .map(|(p, pred)| (&p.clip, p.plate.as_ref(), pred.forces.as_slice()))
        .collect();
    let eval = evaluate(&items, gravity)?;
    let (l, r) = eval.vgrf.map_or((f64::NAN, f64::NAN), |t| t.average);
    Ok((l, r, eval.vrpe.average.0))
}

/// Random windows for one epoch: `max(1, T / L)` per clip, whole clip when
/// it is not longer than the window.
fn epoch_windows(train_set: &[&PreparedClip], window_len: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    let mut windows = Vec::new();
    for (i, p) in train_set.iter().enumerate() {
        let n = p.clip.len();
        if n <= window_len {
            windows.push((i, 0, n));
        } else {
            for _ in 0..n / window_len {
                windows.push((i, rng.random_range(0..=n - window_len), window_len));
            }
        }
    }
    windows.shuffle(rng);
    windows
}

/// Trains a freshly initialized network with Adam. Every epoch is evaluated on
/// `test_set` with the same metric code used for reported tables.
///
/// The result is a pure function of the inputs and `cfg.seed`.
pub fn train(
    train_set: &[&PreparedClip],
    test_set: &[&PreparedClip],
    shape: &NetShape,
    cfg: &TrainConfig,
    gravity: &GravitySpec,
) -> Result<(TemporalConvNet, TrainingLog), ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    for p in train_set.iter().chain(test_set) {
        if p.clip.feature_width() != shape.input_width {
            return Err(ModelError::WidthMismatch {
                expected: shape.input_width,
                got: p.clip.feature_width(),
            });
        }
    }
    let mut net = TemporalConvNet::new(shape, cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate, net.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = TrainingLog {
        optimizer: Adam::describe(),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        let windows = epoch_windows(train_set, cfg.window_len, &mut rng);
        let (mut total, mut term1, mut term2) = (0.0, 0.0, 0.0);
        for chunk in windows.chunks(cfg.batch_size) {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&(i, off, len)| train_set[i].window(off, len))
                .collect();
            let refs: Vec<&Sample> = samples.iter().collect();
            let (terms, grad) = backward(&net, &refs, cfg.lambda1, cfg.lambda2)?;
            adam.step(&mut net, &grad);
            let w = chunk.len() as f64;
            total += terms.total * w;
            term1 += terms.term1 * w;
            term2 += terms.term2 * w;
        }
        let n = windows.len() as f64;
        let (test_vgrf_l, test_vgrf_r, test_vrpe) = test_metrics(&net, test_set, gravity)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: total / n,
            term1: term1 / n,
            term2: term2 / n,
            test_vgrf_l,
            test_vgrf_r,
            test_vrpe,
        });
    }
    Ok((net, log))
}
