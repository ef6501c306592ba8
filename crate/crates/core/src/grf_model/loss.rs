use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{TemporalConvNet, OUTPUT_WIDTH};
use super::{ModelError, Prediction};
use crate::motion_data::{DataError, ForcePlateRecord, Vec3};

/// One training example: a window of features with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major `len × D`.
    pub features: Vec<f64>,
    pub len: usize,
    /// Per-frame plate forces for both feet, `None` where masked.
    pub plate: Vec<Option<[Vec3; 2]>>,
    /// Physics force in body weights.
    pub phys: Vec<Vec3>,
}

impl Sample {
    pub fn new(
        features: Vec<f64>,
        len: usize,
        plate: Vec<Option<[Vec3; 2]>>,
        phys: Vec<Vec3>,
    ) -> Result<Self, ModelError> {
        if len == 0 {
            return Err(ModelError::EmptyInput);
        }
        if !features.len().is_multiple_of(len) {
            return Err(DataError::LengthMismatch {
                what: "features".into(),
                got: features.len(),
                expected: len,
            }
            .into());
        }
        for (what, got) in [("plate frames", plate.len()), ("physics force", phys.len())] {
            if got != len {
                return Err(DataError::LengthMismatch {
                    what: what.into(),
                    got,
                    expected: len,
                }
                .into());
            }
        }
        Ok(Self {
            features,
            len,
            plate,
            phys,
        })
    }

    /// Plate targets taken from a record; masked frames become `None`.
    pub fn plate_targets(plate: Option<&ForcePlateRecord>, len: usize) -> Vec<Option<[Vec3; 2]>> {
        match plate {
            Some(p) => (0..len).map(|t| p.frame(t)).collect(),
            None => vec![None; len],
        }
    }
}

/// Weighted loss terms; `total = term1 + term2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// λ1 × mean over valid frames of the per-foot plate error.
    pub term1: f64,
    /// λ2 × mean over all frames of the summed-force physics error.
    pub term2: f64,
}

impl LossTerms {
    fn add(&mut self, other: &Self) {
        self.total += other.total;
        self.term1 += other.term1;
        self.term2 += other.term2;
    }

    fn scaled(self, s: f64) -> Self {
        Self {
            total: self.total * s,
            term1: self.term1 * s,
            term2: self.term2 * s,
        }
    }
}

fn foot(out: &[f64], t: usize, f: usize) -> Vec3 {
    let b = t * OUTPUT_WIDTH + 3 * f;
    Vec3::new(out[b], out[b + 1], out[b + 2])
}

/// Loss on a flat `T × 6` output and, when asked, its gradient.
fn loss_on_output(
    out: &[f64],
    plate: &[Option<[Vec3; 2]>],
    phys: &[Vec3],
    lambda1: f64,
    lambda2: f64,
    want_grad: bool,
) -> (LossTerms, Vec<f64>) {
    let len = phys.len();
    let mut grad = if want_grad { vec![0.0; out.len()] } else { Vec::new() };
    let n_valid = plate.iter().filter(|p| p.is_some()).count();

    let mut s1 = 0.0;
    if n_valid > 0 {
        let c = 2.0 * lambda1 / n_valid as f64;
        for (t, target) in plate.iter().enumerate() {
            let Some(target) = target else { continue };
            for (f, p) in target.iter().enumerate() {
                let r = foot(out, t, f) - p;
                s1 += r.norm_squared();
                if want_grad {
                    let b = t * OUTPUT_WIDTH + 3 * f;
                    for k in 0..3 {
                        grad[b + k] += c * r[k];
                    }
                }
            }
        }
        s1 /= n_valid as f64;
    }

    let mut s2 = 0.0;
    let c = 2.0 * lambda2 / len as f64;
    for (t, target) in phys.iter().enumerate() {
        let r = foot(out, t, 0) + foot(out, t, 1) - target;
        s2 += r.norm_squared();
        if want_grad {
            let b = t * OUTPUT_WIDTH;
            for k in 0..3 {
                grad[b + k] += c * r[k];
                grad[b + 3 + k] += c * r[k];
            }
        }
    }
    s2 /= len as f64;

    let term1 = lambda1 * s1;
    let term2 = lambda2 * s2;
    (
        LossTerms {
            total: term1 + term2,
            term1,
            term2,
        },
        grad,
    )
}

/// Composite loss of a prediction against plate targets and the physics force
/// (both in body weights). Masked plate frames are skipped and the plate term
/// is averaged over the remaining frames only.
pub fn composite_loss(
    pred: &Prediction,
    plate: &[Option<[Vec3; 2]>],
    phys_bw: &[Vec3],
    lambda1: f64,
    lambda2: f64,
) -> Result<LossTerms, ModelError> {
    let len = pred.len();
    if len == 0 {
        return Err(ModelError::EmptyInput);
    }
    for (what, got) in [("plate frames", plate.len()), ("physics force", phys_bw.len())] {
        if got != len {
            return Err(DataError::LengthMismatch {
                what: what.into(),
                got,
                expected: len,
            }
            .into());
        }
    }
    let out: Vec<f64> = pred
        .forces
        .iter()
        .flat_map(|[l, r]| [l.x, l.y, l.z, r.x, r.y, r.z])
        .collect();
    Ok(loss_on_output(&out, plate, phys_bw, lambda1, lambda2, false).0)
}

/// Forward pass and loss for a single sample.
pub fn sample_loss(
    net: &TemporalConvNet,
    sample: &Sample,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossTerms, ModelError> {
    let cache = net.forward_cached(&sample.features, sample.len)?;
    Ok(loss_on_output(cache.output(), &sample.plate, &sample.phys, lambda1, lambda2, false).0)
}

/// Mean loss over the batch and its gradient with respect to every parameter.
///
/// Per-sample gradients run in parallel and are reduced in batch order, so the
/// result is independent of the thread count.
pub fn backward(
    net: &TemporalConvNet,
    batch: &[&Sample],
    lambda1: f64,
    lambda2: f64,
) -> Result<(LossTerms, TemporalConvNet), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let parts: Vec<(LossTerms, TemporalConvNet)> = batch
        .par_iter()
        .map(|s| {
            let cache = net.forward_cached(&s.features, s.len)?;
            let (terms, d_out) = loss_on_output(cache.output(), &s.plate, &s.phys, lambda1, lambda2, true);
            Ok((terms, net.backward(&cache, &d_out)))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut terms = LossTerms::default();
    let mut grad = net.zeros_like();
    for (t, g) in &parts {
        terms.add(t);
        grad.add_assign(g);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.scale(inv);
    Ok((terms.scaled(inv), grad))
}

/// Analytic gradient compared against central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub loss: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradientCheck {
    /// `|a − n| / max(|a|, |n|, 1e-5·|L|)`. The floor is the smallest gradient
    /// a central difference with `h = 1e-6` resolves to 1e-4, since its
    /// round-off is of order `1e-16·|L| / h`.
    pub fn relative_errors(&self) -> Vec<f64> {
        let floor = (1e-5 * self.loss.abs()).max(f64::MIN_POSITIVE);
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .collect()
    }

    pub fn fraction_within(&self, tol: f64) -> f64 {
        let errs = self.relative_errors();
        errs.iter().filter(|&&e| e <= tol).count() as f64 / errs.len() as f64
    }

    pub fn worst(&self) -> f64 {
        self.relative_errors().into_iter().fold(0.0, f64::max)
    }
}

fn batch_loss(net: &TemporalConvNet, batch: &[&Sample], lambda1: f64, lambda2: f64) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    for s in batch {
        sum += sample_loss(net, s, lambda1, lambda2)?.total;
    }
    Ok(sum / batch.len() as f64)
}

/// Checks [`backward`] against central differences with step `h` on every
/// parameter.
pub fn gradient_check(
    net: &TemporalConvNet,
    batch: &[&Sample],
    lambda1: f64,
    lambda2: f64,
    h: f64,
) -> Result<GradientCheck, ModelError> {
    let (terms, grad) = backward(net, batch, lambda1, lambda2)?;
    let analytic: Vec<f64> = grad.params().copied().collect();
    let mut probe = net.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let orig = *probe.params().nth(i).expect("index in range");
        *probe.params_mut().nth(i).expect("index in range") = orig + h;
        let plus = batch_loss(&probe, batch, lambda1, lambda2)?;
        *probe.params_mut().nth(i).expect("index in range") = orig - h;
        let minus = batch_loss(&probe, batch, lambda1, lambda2)?;
        *probe.params_mut().nth(i).expect("index in range") = orig;
        numeric.push((plus - minus) / (2.0 * h));
    }
    Ok(GradientCheck {
        loss: terms.total,
        analytic,
        numeric,
    })
}
