//! Root translation dynamics driven by a PD estimate of the total ground
//! reaction force, integrated with semi-implicit Euler.
//!
//! Everything here is mass-normalized: a "force" is `F / m` in m/s², and the
//! equation of motion reads `ẍ = f − g` with `g = (0, 0, 9.81)` by default.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion_data::{finite_diff_velocity, GravitySpec, MotionClip, Vec3};

/// Positions beyond this magnitude (m) are treated as a diverged simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("simulation diverged at frame {frame}")]
    Diverged { frame: usize },
    #[error("invalid gains kp={kp}, kd={kd}: both must be finite and >= 0")]
    InvalidGains { kp: f64, kd: f64 },
    #[error("force series has {got} frames, need at least {need}")]
    ForceLength { got: usize, need: usize },
}

/// Proportional (1/s²) and derivative (1/s) gains of the root controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PDGains {
    pub kp: f64,
    pub kd: f64,
}

impl PDGains {
    pub fn new(kp: f64, kd: f64) -> Result<Self, DynamicsError> {
        if !(kp.is_finite() && kd.is_finite() && kp >= 0.0 && kd >= 0.0) {
            return Err(DynamicsError::InvalidGains { kp, kd });
        }
        Ok(Self { kp, kd })
    }

    pub const fn zero() -> Self {
        Self { kp: 0.0, kd: 0.0 }
    }
}

impl Default for PDGains {
    fn default() -> Self {
        Self { kp: 70.0, kd: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Target from the reference trajectory, state from the simulation.
    #[default]
    ClosedLoop,
    /// Force replayed on the captured positions and finite-difference velocities.
    OpenLoop,
}

impl SimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::ClosedLoop => "closed_loop",
            SimMode::OpenLoop => "open_loop",
        }
    }
}

impl FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closed_loop" => Ok(SimMode::ClosedLoop),
            "open_loop" => Ok(SimMode::OpenLoop),
            other => Err(format!("unknown mode {other:?} (closed_loop|open_loop)")),
        }
    }
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Simulated root trajectory.
///
/// `positions` and `velocities` have one entry per frame; `total_force` holds
/// the `T − 1` forces that drove each step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub total_force: Vec<Vec3>,
    pub dt: f64,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Forces extended to one per frame by repeating the last one (zero when
    /// no step was taken).
    pub fn padded_force(&self) -> Vec<Vec3> {
        pad_to(&self.total_force, self.positions.len())
    }

    /// CSV with columns `t,px,py,pz,vx,vy,vz,fx,fy,fz`.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "t,px,py,pz,vx,vy,vz,fx,fy,fz")?;
        let force = self.padded_force();
        for (t, ((p, v), f)) in self
            .positions
            .iter()
            .zip(&self.velocities)
            .zip(&force)
            .enumerate()
        {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                t as f64 * self.dt,
                p.x,
                p.y,
                p.z,
                v.x,
                v.y,
                v.z,
                f.x,
                f.y,
                f.z
            )?;
        }
        w.flush()
    }
}

fn pad_to(force: &[Vec3], len: usize) -> Vec<Vec3> {
    let fill = force.last().copied().unwrap_or_else(Vec3::zeros);
    let mut out: Vec<Vec3> = force.iter().take(len).copied().collect();
    out.resize(len, fill);
    out
}

/// PD estimate of the mass-normalized total reaction force.
pub fn pd_force(target_next: Vec3, current_pos: Vec3, current_vel: Vec3, gains: PDGains) -> Vec3 {
    (target_next - current_pos) * gains.kp - current_vel * gains.kd
}

/// One semi-implicit Euler step: velocity first, then position with the new velocity.
pub fn euler_step(
    pos: Vec3,
    vel: Vec3,
    normalized_force: Vec3,
    gravity: &GravitySpec,
    dt: f64,
) -> (Vec3, Vec3) {
    let acc = normalized_force - gravity.g_accel();
    let vel_next = vel + acc * dt;
    let pos_next = pos + vel_next * dt;
    (pos_next, vel_next)
}

fn diverged(p: &Vec3) -> bool {
    p.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// Simulates the root from the clip's first frame at rest, tracking the clip
/// with the PD controller.
pub fn simulate(
    clip: &MotionClip,
    gains: PDGains,
    gravity: &GravitySpec,
    mode: SimMode,
) -> Result<SimResult, DynamicsError> {
    let x = clip.root_positions();
    let dt = clip.dt();
    let n = x.len();
    let mocap_vel = match mode {
        SimMode::OpenLoop => finite_diff_velocity(clip),
        SimMode::ClosedLoop => Vec::new(),
    };

    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    let mut total_force = Vec::with_capacity(n.saturating_sub(1));
    let mut pos = x[0];
    let mut vel = Vec3::zeros();
    positions.push(pos);
    velocities.push(vel);
    for t in 0..n.saturating_sub(1) {
        let f = match mode {
            SimMode::ClosedLoop => pd_force(x[t + 1], pos, vel, gains),
            SimMode::OpenLoop => pd_force(x[t + 1], x[t], mocap_vel[t], gains),
        };
        (pos, vel) = euler_step(pos, vel, f, gravity, dt);
        if diverged(&pos) || diverged(&vel) {
            return Err(DynamicsError::Diverged { frame: t + 1 });
        }
        total_force.push(f);
        positions.push(pos);
        velocities.push(vel);
    }
    Ok(SimResult {
        positions,
        velocities,
        total_force,
        dt,
    })
}

/// Per-frame physics force (`T` entries, last one repeated).
pub fn physics_force_series(
    clip: &MotionClip,
    gains: PDGains,
    gravity: &GravitySpec,
    mode: SimMode,
) -> Result<Vec<Vec3>, DynamicsError> {
    Ok(simulate(clip, gains, gravity, mode)?.padded_force())
}

/// Integrates a given mass-normalized force series from the clip's first frame
/// at rest. Uses `forces[0..T-1]`.
pub fn rollout_forces(
    clip: &MotionClip,
    forces: &[Vec3],
    gravity: &GravitySpec,
) -> Result<SimResult, DynamicsError> {
    let n = clip.len();
    let steps = n.saturating_sub(1);
    if forces.len() < steps {
        return Err(DynamicsError::ForceLength {
            got: forces.len(),
            need: steps,
        });
    }
    let dt = clip.dt();
    let mut pos = clip.root_positions()[0];
    let mut vel = Vec3::zeros();
    let mut positions = vec![pos];
    let mut velocities = vec![vel];
    for (t, f) in forces.iter().take(steps).enumerate() {
        (pos, vel) = euler_step(pos, vel, *f, gravity, dt);
        if diverged(&pos) || diverged(&vel) {
            return Err(DynamicsError::Diverged { frame: t + 1 });
        }
        positions.push(pos);
        velocities.push(vel);
    }
    Ok(SimResult {
        positions,
        velocities,
        total_force: forces[..steps].to_vec(),
        dt,
    })
}
