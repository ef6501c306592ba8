//! Exhaustive PD gain search scored by vertical root position error.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{simulate, PDGains, SimMode};
use crate::metrics::{mean, sample_std, vrpe};
use crate::motion_data::{GravitySpec, MotionClip};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("gain grid is empty")]
    EmptyGrid,
    #[error("invalid grid cell kp={kp}, kd={kd}")]
    InvalidCell { kp: f64, kd: f64 },
    #[error("duplicate grid cell kp={kp}, kd={kd}")]
    DuplicateCell { kp: f64, kd: f64 },
    #[error("no clips to calibrate on")]
    NoClips,
    #[error("every grid cell diverged")]
    AllDiverged,
}

/// Set of gain pairs to evaluate, kept sorted by `(kp, kd)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainGrid {
    cells: Vec<PDGains>,
}

impl GainGrid {
    pub fn new(mut cells: Vec<PDGains>) -> Result<Self, CalibrationError> {
        if cells.is_empty() {
            return Err(CalibrationError::EmptyGrid);
        }
        for c in &cells {
            if PDGains::new(c.kp, c.kd).is_err() {
                return Err(CalibrationError::InvalidCell { kp: c.kp, kd: c.kd });
            }
        }
        cells.sort_by(|a, b| a.kp.total_cmp(&b.kp).then(a.kd.total_cmp(&b.kd)));
        for w in cells.windows(2) {
            if w[0] == w[1] {
                return Err(CalibrationError::DuplicateCell { kp: w[0].kp, kd: w[0].kd });
            }
        }
        Ok(Self { cells })
    }

    /// The explored set of the reference ablation: kp ∈ {10, 30, 50, 70, 90}
    /// with kd = 0, and kd ∈ {3, 6, 9, 12, 15} at kp = 70.
    pub fn reference() -> Self {
        let mut cells: Vec<PDGains> = [10.0, 30.0, 50.0, 70.0, 90.0]
            .iter()
            .map(|&kp| PDGains { kp, kd: 0.0 })
            .collect();
        cells.extend([3.0, 6.0, 9.0, 12.0, 15.0].iter().map(|&kd| PDGains { kp: 70.0, kd }));
        Self::new(cells).expect("reference grid is valid")
    }

    /// Full product of the reference kp and kd values.
    pub fn dense() -> Self {
        Self::rectangular(&[10.0, 30.0, 50.0, 70.0, 90.0], &[0.0, 3.0, 6.0, 9.0, 12.0, 15.0])
            .expect("dense grid is valid")
    }

    pub fn rectangular(kp: &[f64], kd: &[f64]) -> Result<Self, CalibrationError> {
        let cells = kp
            .iter()
            .flat_map(|&p| kd.iter().map(move |&d| PDGains { kp: p, kd: d }))
            .collect();
        Self::new(cells)
    }

    /// Adds a cell unless it is already present.
    pub fn with_cell(self, cell: PDGains) -> Result<Self, CalibrationError> {
        let mut cells = self.cells;
        if !cells.contains(&cell) {
            cells.push(cell);
        }
        Self::new(cells)
    }

    pub fn cells(&self) -> &[PDGains] {
        &self.cells
    }
}

/// Score of one grid cell. `mean`/`std` are over subjects; each subject's
/// value is the mean vRPE of its clips. Diverged cells score +∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub gains: PDGains,
    pub mean: f64,
    pub std: f64,
    pub per_subject: BTreeMap<String, f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mode: SimMode,
    pub subjects: Vec<String>,
    /// One entry per grid cell, in grid order.
    pub cells: Vec<CellScore>,
    pub best: PDGains,
}

impl CalibrationReport {
    pub fn cell(&self, gains: PDGains) -> Option<&CellScore> {
        self.cells.iter().find(|c| c.gains == gains)
    }

    pub fn best_score(&self) -> &CellScore {
        self.cell(self.best).expect("best cell is in the report")
    }

    /// Table layout: `kp,kd,<subjects...>,avg,std`, vRPE in m² × 10³.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        write!(w, "kp,kd")?;
        for s in &self.subjects {
            write!(w, ",{s}")?;
        }
        writeln!(w, ",avg,std")?;
        for c in &self.cells {
            write!(w, "{},{}", c.gains.kp, c.gains.kd)?;
            for s in &self.subjects {
                write!(w, ",{}", c.per_subject.get(s).copied().unwrap_or(f64::INFINITY))?;
            }
            writeln!(w, ",{},{}", c.mean, c.std)?;
        }
        w.flush()
    }
}

fn score_cell(
    by_subject: &BTreeMap<&str, Vec<&MotionClip>>,
    gains: PDGains,
    gravity: &GravitySpec,
    mode: SimMode,
) -> CellScore {
    let mut per_subject = BTreeMap::new();
    let mut diverged = false;
    for (subject, clips) in by_subject {
        let mut values = Vec::with_capacity(clips.len());
        for clip in clips {
            let v = simulate(clip, gains, gravity, mode)
                .ok()
                .and_then(|sim| vrpe(&sim, clip).ok());
            match v {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    diverged = true;
                    values.push(f64::INFINITY);
                }
            }
        }
        per_subject.insert(subject.to_string(), mean(&values));
    }
    let subject_means: Vec<f64> = per_subject.values().copied().collect();
    let (mean_v, std_v) = if diverged {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (mean(&subject_means), sample_std(&subject_means))
    };
    CellScore {
        gains,
        mean: mean_v,
        std: std_v,
        per_subject,
        diverged,
    }
}

/// Simulates every clip under every grid cell and picks the cell with the
/// lowest subject-averaged vRPE; ties go to the smaller kp, then smaller kd.
///
/// Cells are scored in parallel; the result does not depend on thread count
/// or on the order of `clips`.
pub fn calibrate(
    clips: &[MotionClip],
    grid: &GainGrid,
    gravity: &GravitySpec,
    mode: SimMode,
) -> Result<CalibrationReport, CalibrationError> {
    if clips.is_empty() {
        return Err(CalibrationError::NoClips);
    }
    let mut by_subject: BTreeMap<&str, Vec<&MotionClip>> = BTreeMap::new();
    for c in clips {
        by_subject.entry(c.subject_id()).or_default().push(c);
    }
    let cells: Vec<CellScore> = grid
        .cells()
        .par_iter()
        .map(|&g| score_cell(&by_subject, g, gravity, mode))
        .collect();

    let mut best: Option<&CellScore> = None;
    for c in cells.iter().filter(|c| !c.diverged) {
        if best.is_none_or(|b| c.mean < b.mean) {
            best = Some(c);
        }
    }
    let best = best.ok_or(CalibrationError::AllDiverged)?.gains;
    let subjects: BTreeSet<&str> = by_subject.keys().copied().collect();
    Ok(CalibrationReport {
        mode,
        subjects: subjects.into_iter().map(str::to_string).collect(),
        cells,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_data::{gen_synthetic, SynthKind, SynthParams};

    fn spring_clips(gains: PDGains, n: usize) -> Vec<MotionClip> {
        (0..n)
            .map(|i| {
                let p = SynthParams {
                    subject_id: format!("S{}", i % 3 + 1),
                    duration: 2.0,
                    gains,
                    ..Default::default()
                };
                gen_synthetic(SynthKind::SpringTracked, &p, i as u64).unwrap().0
            })
            .collect()
    }

    #[test]
    fn grid_validation() {
        assert_eq!(GainGrid::new(vec![]), Err(CalibrationError::EmptyGrid));
        let c = PDGains { kp: 1.0, kd: 1.0 };
        assert!(matches!(
            GainGrid::new(vec![c, c]),
            Err(CalibrationError::DuplicateCell { .. })
        ));
        assert!(GainGrid::new(vec![PDGains { kp: -1.0, kd: 0.0 }]).is_err());
        assert_eq!(GainGrid::reference().cells().len(), 10);
        assert_eq!(GainGrid::dense().cells().len(), 30);
        let g = GainGrid::reference().with_cell(PDGains { kp: 70.0, kd: 3.0 }).unwrap();
        assert_eq!(g.cells().len(), 10);
    }

    #[test]
    fn singleton_grid_picks_its_cell() {
        let clips = spring_clips(PDGains { kp: 50.0, kd: 6.0 }, 2);
        let grid = GainGrid::new(vec![PDGains { kp: 70.0, kd: 3.0 }]).unwrap();
        let r = calibrate(&clips, &grid, &GravitySpec::default(), SimMode::ClosedLoop).unwrap();
        assert_eq!(r.best, PDGains { kp: 70.0, kd: 3.0 });
    }

    #[test]
    fn recovers_generating_gains() {
        let truth = PDGains { kp: 50.0, kd: 6.0 };
        let clips = spring_clips(truth, 5);
        let grid = GainGrid::reference().with_cell(truth).unwrap();
        let r = calibrate(&clips, &grid, &GravitySpec::default(), SimMode::ClosedLoop).unwrap();
        assert_eq!(r.best, truth);
        assert!(r.best_score().mean < 1e-6);
    }

    #[test]
    fn ties_prefer_gentler_gains() {
        // A single static frame scores zero everywhere.
        let clip = MotionClip::new(
            "S1",
            "still",
            100.0,
            60.0,
            vec![crate::Vec3::new(0.0, 0.0, 1.0)],
            vec![vec![]],
        )
        .unwrap();
        let grid = GainGrid::rectangular(&[90.0, 10.0], &[3.0, 0.0]).unwrap();
        let r = calibrate(&[clip], &grid, &GravitySpec::default(), SimMode::ClosedLoop).unwrap();
        assert_eq!(r.best, PDGains { kp: 10.0, kd: 0.0 });
    }

    #[test]
    fn diverged_cells_are_excluded() {
        let clips: Vec<MotionClip> = spring_clips(PDGains { kp: 50.0, kd: 6.0 }, 1);
        let grid = GainGrid::new(vec![
            PDGains { kp: 50.0, kd: 6.0 },
            PDGains { kp: 1e6, kd: 0.0 },
        ])
        .unwrap();
        let r = calibrate(&clips, &grid, &GravitySpec::default(), SimMode::ClosedLoop).unwrap();
        let bad = r.cell(PDGains { kp: 1e6, kd: 0.0 }).unwrap();
        assert!(bad.diverged && bad.mean.is_infinite());
        assert_eq!(r.best, PDGains { kp: 50.0, kd: 6.0 });

        let only_bad = GainGrid::new(vec![PDGains { kp: 1e6, kd: 0.0 }]).unwrap();
        assert_eq!(
            calibrate(&clips, &only_bad, &GravitySpec::default(), SimMode::ClosedLoop),
            Err(CalibrationError::AllDiverged)
        );
    }

    #[test]
    fn csv_has_subject_columns() {
        let clips = spring_clips(PDGains { kp: 50.0, kd: 6.0 }, 3);
        let r = calibrate(&clips, &GainGrid::reference(), &GravitySpec::default(), SimMode::ClosedLoop)
            .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "kp,kd,S1,S2,S3,avg,std");
        assert_eq!(text.lines().count(), 11);
    }
}
