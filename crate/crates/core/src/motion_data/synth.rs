//! Deterministic synthetic clips with matching force-plate records.
//!
//! Plate forces are derived from the generated trajectory itself (discrete
//! second differences, or the PD simulation for `spring_tracked`) so they are
//! consistent with the dynamics module.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetEntry, ForcePlateRecord, GravitySpec, MotionClip, Vec3};
use crate::dynamics::{simulate, PDGains, SimMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Stationary hopping: sinusoidal stance compression and ballistic flight.
    Hop,
    /// Forward walking with vertical bobbing and alternating foot support.
    Walk,
    /// Free fall from `x0` with initial velocity `v0`.
    Ballistic,
    /// Trajectory that closed-loop PD simulation with `gains` reproduces exactly.
    SpringTracked,
}

impl SynthKind {
    pub fn default_label(self) -> &'static str {
        match self {
            SynthKind::Hop => "stationary_hopping",
            SynthKind::Walk => "walk",
            SynthKind::Ballistic => "ballistic",
            SynthKind::SpringTracked => "spring_tracked",
        }
    }
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hop" => Ok(SynthKind::Hop),
            "walk" => Ok(SynthKind::Walk),
            "ballistic" => Ok(SynthKind::Ballistic),
            "spring_tracked" => Ok(SynthKind::SpringTracked),
            other => Err(format!(
                "unknown kind {other:?} (hop|walk|ballistic|spring_tracked)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub subject_id: String,
    /// Defaults to the kind's label.
    pub motion_label: Option<String>,
    pub frame_rate: f64,
    /// Seconds; the clip has `round(duration·rate) + 1` frames.
    pub duration: f64,
    pub mass: f64,
    /// Feature channels after the root position.
    pub extra_features: usize,
    pub hop_freq: f64,
    /// Apex height of the flight phase above standing height, m.
    pub hop_amplitude: f64,
    pub walk_speed: f64,
    pub stride_freq: f64,
    pub bob_amplitude: f64,
    /// Frames whose root x lies outside this range have no plate data.
    pub plate_x_range: Option<(f64, f64)>,
    pub x0: Vec3,
    pub v0: Vec3,
    pub gains: PDGains,
    /// Fraction of leading frames with missing plate data.
    pub plate_dropout: f64,
    /// Standard deviation of additive plate noise, body weights.
    pub plate_noise: f64,
    pub gravity: GravitySpec,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            subject_id: "S1".into(),
            motion_label: None,
            frame_rate: 100.0,
            duration: 3.0,
            mass: 70.0,
            extra_features: 4,
            hop_freq: 2.0,
            hop_amplitude: 0.05,
            walk_speed: 1.2,
            stride_freq: 0.9,
            bob_amplitude: 0.02,
            plate_x_range: None,
            x0: Vec3::new(0.0, 0.0, 2.0),
            v0: Vec3::zeros(),
            gains: PDGains { kp: 50.0, kd: 6.0 },
            plate_dropout: 0.0,
            plate_noise: 0.0,
            gravity: GravitySpec::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> DataError {
    DataError::InvalidParams(msg.into())
}

impl SynthParams {
    pub fn validate(&self, kind: SynthKind) -> Result<(), DataError> {
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(invalid(format!("frame rate must be > 0, got {}", self.frame_rate)));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(invalid(format!("duration must be >= 0, got {}", self.duration)));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(invalid(format!("mass must be > 0, got {}", self.mass)));
        }
        if !(0.0..=1.0).contains(&self.plate_dropout) {
            return Err(invalid("plate dropout must lie in [0, 1]"));
        }
        if !(self.plate_noise.is_finite() && self.plate_noise >= 0.0) {
            return Err(invalid("plate noise must be >= 0"));
        }
        match kind {
            SynthKind::Hop => {
                if !(self.hop_freq.is_finite() && self.hop_freq > 0.0) {
                    return Err(invalid(format!("hop frequency must be > 0, got {}", self.hop_freq)));
                }
                if !(self.hop_amplitude.is_finite() && self.hop_amplitude >= 0.0) {
                    return Err(invalid("hop amplitude must be >= 0"));
                }
                let (_, flight) = hop_takeoff(self);
                if flight >= 1.0 / self.hop_freq {
                    return Err(invalid(format!(
                        "flight time {flight:.3} s does not fit in a hop period of {:.3} s",
                        1.0 / self.hop_freq
                    )));
                }
            }
            SynthKind::Walk => {
                if !(self.stride_freq.is_finite() && self.stride_freq > 0.0) {
                    return Err(invalid("stride frequency must be > 0"));
                }
                if !(self.walk_speed.is_finite() && self.walk_speed >= 0.0) {
                    return Err(invalid("walk speed must be >= 0"));
                }
                if !(self.bob_amplitude.is_finite() && self.bob_amplitude >= 0.0) {
                    return Err(invalid("bob amplitude must be >= 0"));
                }
            }
            SynthKind::Ballistic => {
                if !(self.x0.iter().chain(self.v0.iter()).all(|v| v.is_finite())) {
                    return Err(invalid("ballistic x0/v0 must be finite"));
                }
            }
            SynthKind::SpringTracked => {
                PDGains::new(self.gains.kp, self.gains.kd)
                    .map_err(|e| invalid(e.to_string()))?;
                let dt = 1.0 / self.frame_rate;
                if 1.0 - dt * dt * self.gains.kp <= 0.0 {
                    return Err(invalid("kp·dt² must be < 1 for spring_tracked"));
                }
            }
        }
        Ok(())
    }

    fn frames(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize + 1
    }
}

/// Takeoff speed and flight time for the requested apex height.
fn hop_takeoff(p: &SynthParams) -> (f64, f64) {
    let g = p.gravity.magnitude();
    let v = (2.0 * g * p.hop_amplitude).sqrt();
    (v, 2.0 * v / g)
}

struct Trajectory {
    positions: Vec<Vec3>,
    extras: Vec<Vec<f64>>,
    /// Share of the total force carried by the left foot, or `None` in flight.
    left_share: Vec<Option<f64>>,
}

/// Generates a clip and its force-plate record. Pure in `(kind, params, seed)`.
pub fn gen_synthetic(
    kind: SynthKind,
    params: &SynthParams,
    seed: u64,
) -> Result<(MotionClip, ForcePlateRecord), DataError> {
    params.validate(kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = match kind {
        SynthKind::Hop => hop(params, &mut rng),
        SynthKind::Walk => walk(params, &mut rng),
        SynthKind::Ballistic => ballistic(params),
        SynthKind::SpringTracked => spring_tracked(params, &mut rng),
    };
    let label = params
        .motion_label
        .clone()
        .unwrap_or_else(|| kind.default_label().to_string());
    let n = traj.positions.len();
    let mut extras = traj.extras;
    let noise = Normal::new(0.0, 0.01).expect("valid normal");
    for row in extras.iter_mut() {
        row.resize(params.extra_features.max(row.len()), 0.0);
        row.truncate(params.extra_features);
    }
    // Channels past the informative ones carry sensor-like noise.
    for row in extras.iter_mut() {
        for v in row.iter_mut().skip(3) {
            *v += noise.sample(&mut rng);
        }
    }
    let clip = MotionClip::new(
        params.subject_id.clone(),
        label,
        params.frame_rate,
        params.mass,
        traj.positions,
        extras,
    )?;

    let total = match kind {
        SynthKind::SpringTracked => {
            let sim = simulate(&clip, params.gains, &params.gravity, SimMode::ClosedLoop)
                .map_err(|e| invalid(e.to_string()))?;
            let g = params.gravity.magnitude();
            sim.padded_force().into_iter().map(|f| f / g).collect()
        }
        SynthKind::Ballistic => vec![Vec3::zeros(); n],
        _ => total_force_from_positions(clip.root_positions(), clip.dt(), &params.gravity),
    };

    let plate = build_plate(&clip, &total, &traj.left_share, params, &mut rng)?;
    Ok((clip, plate))
}

/// Body-weight total force implied by discrete accelerations of `x`.
fn total_force_from_positions(x: &[Vec3], dt: f64, gravity: &GravitySpec) -> Vec<Vec3> {
    let n = x.len();
    if n < 3 {
        return vec![gravity.g_accel() / gravity.magnitude(); n];
    }
    let mut acc: Vec<Vec3> = (1..n - 1)
        .map(|t| (x[t + 1] - x[t] * 2.0 + x[t - 1]) / (dt * dt))
        .collect();
    acc.insert(0, acc[0]);
    acc.push(acc[acc.len() - 1]);
    let g = gravity.magnitude();
    acc.into_iter().map(|a| (a + gravity.g_accel()) / g).collect()
}

fn build_plate(
    clip: &MotionClip,
    total: &[Vec3],
    left_share: &[Option<f64>],
    p: &SynthParams,
    rng: &mut ChaCha8Rng,
) -> Result<ForcePlateRecord, DataError> {
    let n = clip.len();
    let dropout = (p.plate_dropout * n as f64).round() as usize;
    let noise = Normal::new(0.0, p.plate_noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut force = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut cop = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut contact = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for t in 0..n {
        let root = clip.root_positions()[t];
        let mut f = total[t];
        f.z = f.z.max(0.0);
        let share = left_share[t];
        let split = match share {
            Some(s) => [f * s, f * (1.0 - s)],
            None => [Vec3::zeros(), Vec3::zeros()],
        };
        let on_plate = p
            .plate_x_range
            .is_none_or(|(lo, hi)| root.x >= lo && root.x <= hi);
        let missing = t < dropout || !on_plate;
        for foot in 0..2 {
            let lateral = if foot == 0 { 0.1 } else { -0.1 };
            let in_contact = share.is_some_and(|s| if foot == 0 { s > 0.02 } else { s < 0.98 });
            let mut v = split[foot];
            if p.plate_noise > 0.0 {
                for c in v.iter_mut() {
                    *c += noise.sample(rng);
                }
            }
            if missing {
                v = Vec3::repeat(f64::NAN);
            }
            force[foot].push(v);
            cop[foot].push(if in_contact { [root.x, root.y + lateral] } else { [0.0, 0.0] });
            contact[foot].push(in_contact);
        }
    }
    ForcePlateRecord::new(force, cop, contact)
}

fn hop(p: &SynthParams, rng: &mut ChaCha8Rng) -> Trajectory {
    let n = p.frames();
    let g = p.gravity.magnitude();
    let period = 1.0 / p.hop_freq;
    let (v_to, flight) = hop_takeoff(p);
    let stance = period - flight;
    let depth = v_to * stance / PI;
    let stand = 0.9 + 0.1 * rng.random::<f64>();
    let base_x = rng.random_range(-0.2..0.2);
    let base_y = rng.random_range(-0.2..0.2);

    let mut traj = Trajectory {
        positions: Vec::with_capacity(n),
        extras: Vec::with_capacity(n),
        left_share: Vec::with_capacity(n),
    };
    for i in 0..n {
        // Start at the bottom of a stance phase, where the root is at rest.
        let c = (i as f64 / p.frame_rate + stance / 2.0).rem_euclid(period);
        let (z, compression, share) = if c < stance {
            let s = (PI * c / stance).sin();
            (stand - depth * s, s, Some(0.5))
        } else {
            let tf = c - stance;
            (stand + v_to * tf - 0.5 * g * tf * tf, 0.0, None)
        };
        let phase = 2.0 * PI * c / period;
        traj.positions.push(Vec3::new(base_x, base_y, z));
        traj.extras.push(vec![phase.sin(), phase.cos(), compression]);
        traj.left_share.push(share);
    }
    traj
}

fn walk(p: &SynthParams, rng: &mut ChaCha8Rng) -> Trajectory {
    let n = p.frames();
    let stand = 0.9 + 0.1 * rng.random::<f64>();
    let start_x = p.x0.x - 0.3 * rng.random::<f64>();
    let base_y = rng.random_range(-0.1..0.1);
    let w = 2.0 * PI * p.stride_freq;
    let mut traj = Trajectory {
        positions: Vec::with_capacity(n),
        extras: Vec::with_capacity(n),
        left_share: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t = i as f64 / p.frame_rate;
        let x = start_x + p.walk_speed * t;
        let y = base_y + 0.03 * (w * t).sin();
        let z = stand + p.bob_amplitude * (2.0 * w * t).cos();
        let left = 0.5 + 0.5 * (3.0 * (w * t).sin()).tanh();
        traj.positions.push(Vec3::new(x, y, z));
        traj.extras.push(vec![(w * t).sin(), (w * t).cos(), left]);
        traj.left_share.push(Some(left));
    }
    traj
}

fn ballistic(p: &SynthParams) -> Trajectory {
    let n = p.frames();
    let g = p.gravity.g_accel();
    let positions = (0..n)
        .map(|i| {
            let t = i as f64 / p.frame_rate;
            p.x0 + p.v0 * t - g * (0.5 * t * t)
        })
        .collect();
    Trajectory {
        positions,
        extras: vec![Vec::new(); n],
        left_share: vec![None; n],
    }
}

fn spring_tracked(p: &SynthParams, rng: &mut ChaCha8Rng) -> Trajectory {
    let n = p.frames();
    let dt = 1.0 / p.frame_rate;
    let g = p.gravity.g_accel();
    let PDGains { kp, kd } = p.gains;
    let start = p.x0
        + Vec3::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            0.1 * rng.random::<f64>(),
        );
    // Fixed point of closed-loop tracking: x̂ = x when
    // x[t+1] = x[t] + (dt·v[t]·(1 − dt·kd) − dt²·g) / (1 − dt²·kp).
    let denom = 1.0 - dt * dt * kp;
    let mut positions = Vec::with_capacity(n);
    let mut x = start;
    let mut v = Vec3::zeros();
    positions.push(x);
    for _ in 1..n {
        let next = x + (v * (dt * (1.0 - dt * kd)) - g * (dt * dt)) / denom;
        v = (next - x) / dt;
        x = next;
        positions.push(x);
    }
    Trajectory {
        positions,
        extras: vec![Vec::new(); n],
        left_share: vec![Some(0.5); n],
    }
}

/// Layout of a multi-subject synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kinds: Vec<SynthKind>,
    pub subjects: usize,
    pub clips_per_kind: usize,
    /// Parameters shared by every clip before per-subject variation.
    pub base: SynthParams,
    /// Draw per-subject mass, tempo and amplitude around `base`.
    pub vary_subjects: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kinds: vec![SynthKind::Hop],
            subjects: 1,
            clips_per_kind: 1,
            base: SynthParams::default(),
            vary_subjects: false,
        }
    }
}

fn subject_params(base: &SynthParams, id: String, vary: bool, rng: &mut ChaCha8Rng) -> SynthParams {
    let mut p = SynthParams {
        subject_id: id,
        ..base.clone()
    };
    if vary {
        let mut scale = |lo: f64, hi: f64| rng.random_range(lo..hi);
        p.mass = scale(55.0, 95.0);
        p.hop_freq *= scale(0.85, 1.15);
        p.hop_amplitude *= scale(0.7, 1.3);
        p.walk_speed *= scale(0.8, 1.2);
        p.stride_freq *= scale(0.9, 1.1);
        p.bob_amplitude *= scale(0.7, 1.3);
    }
    p
}

/// Subjects `S1..Sn`, each with `clips_per_kind` clips of every kind. Clip
/// keys are `<subject>_<label>_<index>`. Pure in `(spec, seed)`.
pub fn synthetic_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, DataError> {
    if spec.subjects == 0 || spec.clips_per_kind == 0 || spec.kinds.is_empty() {
        return Err(invalid("dataset needs at least one subject, kind and clip"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for s in 1..=spec.subjects {
        let params = subject_params(&spec.base, format!("S{s}"), spec.vary_subjects, &mut rng);
        for &kind in &spec.kinds {
            for k in 0..spec.clips_per_kind {
                let (clip, plate) = gen_synthetic(kind, &params, rng.random())?;
                entries.push(DatasetEntry {
                    key: format!("{}_{}_{k:02}", params.subject_id, clip.motion_label()),
                    clip,
                    plate: Some(plate),
                });
            }
        }
    }
    Ok(Dataset { entries })
}
