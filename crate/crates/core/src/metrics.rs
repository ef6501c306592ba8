//! Vertical GRF error, vertical root position error, table aggregation and
//! leave-one-subject-out splits.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rollout_forces, DynamicsError, SimResult};
use crate::motion_data::{ForcePlateRecord, GravitySpec, MotionClip, Vec3};

/// vRPE is reported in m² scaled by this factor.
pub const VRPE_SCALE: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no valid force-plate frames to score")]
    NoValidFrames,
    #[error("length mismatch: {what} has {got} frames, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("need at least 2 subjects for leave-one-subject-out, got {0}")]
    TooFewSubjects(usize),
    #[error("nothing to aggregate")]
    Empty,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Per-foot mean squared vertical force error over valid plate frames.
pub fn vgrf_mse(pred: &[[Vec3; 2]], plate: &ForcePlateRecord) -> Result<(f64, f64), MetricsError> {
    if pred.len() != plate.len() {
        return Err(MetricsError::LengthMismatch {
            what: "prediction",
            got: pred.len(),
            expected: plate.len(),
        });
    }
    let mut sum = [0.0; 2];
    let mut count = 0usize;
    for (t, p) in pred.iter().enumerate() {
        let Some(measured) = plate.frame(t) else {
            continue;
        };
        for foot in 0..2 {
            let e = p[foot].z - measured[foot].z;
            sum[foot] += e * e;
        }
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::NoValidFrames);
    }
    Ok((sum[0] / count as f64, sum[1] / count as f64))
}

/// Mean squared vertical root error over all frames, m² × 10³.
pub fn vrpe(sim: &SimResult, clip: &MotionClip) -> Result<f64, MetricsError> {
    if sim.len() != clip.len() {
        return Err(MetricsError::LengthMismatch {
            what: "simulation",
            got: sim.len(),
            expected: clip.len(),
        });
    }
    let sum: f64 = sim
        .positions
        .iter()
        .zip(clip.root_positions())
        .map(|(a, b)| (a.z - b.z).powi(2))
        .sum();
    Ok(sum / clip.len() as f64 * VRPE_SCALE)
}

/// Rolls out the summed per-foot prediction (body weights) through the root
/// dynamics and scores the trajectory.
pub fn vrpe_from_prediction(
    pred: &[[Vec3; 2]],
    clip: &MotionClip,
    gravity: &GravitySpec,
) -> Result<f64, MetricsError> {
    if pred.len() != clip.len() {
        return Err(MetricsError::LengthMismatch {
            what: "prediction",
            got: pred.len(),
            expected: clip.len(),
        });
    }
    let g = gravity.magnitude();
    let forces: Vec<Vec3> = pred.iter().map(|[l, r]| (l + r) * g).collect();
    let sim = rollout_forces(clip, &forces, gravity)?;
    vrpe(&sim, clip)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// Rows are `(left, right)` vGRF MSE.
    Vgrf,
    /// Rows are `(mean, std)` vRPE.
    Vrpe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub values: (f64, f64),
}

/// Per-motion rows in label order plus an average row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub kind: TableKind,
    pub rows: Vec<MetricRow>,
    pub average: (f64, f64),
}

/// One scored clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub subject: String,
    pub motion: String,
    pub value: f64,
}

/// Sum of values independent of their order.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    ordered_sum(&mut v) / v.len() as f64
}

/// Sample standard deviation (n − 1); zero for a single value.
pub(crate) fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let mut sq: Vec<f64> = values.iter().map(|v| (v - m).powi(2)).collect();
    (ordered_sum(&mut sq) / (values.len() - 1) as f64).sqrt()
}

fn group(scores: &[ClipScore]) -> BTreeMap<&str, Vec<f64>> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.motion.as_str()).or_default().push(s.value);
    }
    groups
}

/// Groups clip scores by motion into `(mean, std)` rows, every clip weighted
/// equally. The average row is the mean and std of the row means.
pub fn aggregate(scores: &[ClipScore]) -> Result<MetricTable, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let rows: Vec<MetricRow> = group(scores)
        .into_iter()
        .map(|(label, v)| MetricRow {
            label: label.to_string(),
            values: (mean(&v), sample_std(&v)),
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.values.0).collect();
    Ok(MetricTable {
        kind: TableKind::Vrpe,
        average: (mean(&means), sample_std(&means)),
        rows,
    })
}

/// Left/right table from two score lists over the same clips.
pub fn aggregate_feet(left: &[ClipScore], right: &[ClipScore]) -> Result<MetricTable, MetricsError> {
    let l = aggregate(left)?;
    let r = aggregate(right)?;
    let rows: Vec<MetricRow> = l
        .rows
        .iter()
        .zip(&r.rows)
        .map(|(a, b)| MetricRow {
            label: a.label.clone(),
            values: (a.values.0, b.values.0),
        })
        .collect();
    Ok(MetricTable {
        kind: TableKind::Vgrf,
        average: (l.average.0, r.average.0),
        rows,
    })
}

impl MetricTable {
    /// CSV: `motion,left,right` for vGRF and `motion,mean,std` for vRPE, with
    /// a final `Average` row.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        match self.kind {
            TableKind::Vgrf => writeln!(w, "motion,left,right")?,
            TableKind::Vrpe => writeln!(w, "motion,mean,std")?,
        }
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.label, r.values.0, r.values.1)?;
        }
        writeln!(w, "Average,{},{}", self.average.0, self.average.1)?;
        w.flush()
    }
}

/// Evaluation of predicted per-foot forces on a set of clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `None` when no clip has a valid plate frame.
    pub vgrf: Option<MetricTable>,
    pub vrpe: MetricTable,
}

/// A clip, its plate record if any, and per-foot predicted forces.
pub type EvalItem<'a> = (&'a MotionClip, Option<&'a ForcePlateRecord>, &'a [[Vec3; 2]]);

/// Scores each `(clip, plate, prediction)`; clips without valid plate frames
/// only contribute to vRPE.
pub fn evaluate(
    items: &[EvalItem],
    gravity: &GravitySpec,
) -> Result<Evaluation, MetricsError> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut rpe = Vec::new();
    for (clip, plate, pred) in items {
        let score = |value| ClipScore {
            subject: clip.subject_id().to_string(),
            motion: clip.motion_label().to_string(),
            value,
        };
        if let Some(plate) = plate {
            match vgrf_mse(pred, plate) {
                Ok((l, r)) => {
                    left.push(score(l));
                    right.push(score(r));
                }
                Err(MetricsError::NoValidFrames) => {}
                Err(e) => return Err(e),
            }
        }
        rpe.push(score(vrpe_from_prediction(pred, clip, gravity)?));
    }
    let vgrf = if left.is_empty() {
        None
    } else {
        Some(aggregate_feet(&left, &right)?)
    };
    Ok(Evaluation {
        vgrf,
        vrpe: aggregate(&rpe)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: String,
}

/// One split per subject (sorted), holding that subject out.
pub fn loso_splits(subjects: &[String]) -> Result<Vec<Split>, MetricsError> {
    let set: std::collections::BTreeSet<&String> = subjects.iter().collect();
    if set.len() < 2 {
        return Err(MetricsError::TooFewSubjects(set.len()));
    }
    Ok(set
        .iter()
        .map(|test| Split {
            train: set.iter().filter(|s| *s != test).map(|s| s.to_string()).collect(),
            test: test.to_string(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plate(fz: &[(f64, f64)]) -> ForcePlateRecord {
        let n = fz.len();
        ForcePlateRecord::new(
            [
                fz.iter().map(|f| Vec3::new(0.0, 0.0, f.0)).collect(),
                fz.iter().map(|f| Vec3::new(0.0, 0.0, f.1)).collect(),
            ],
            [vec![[0.0; 2]; n], vec![[0.0; 2]; n]],
            [vec![true; n], vec![true; n]],
        )
        .unwrap()
    }

    fn pred(fz: &[(f64, f64)]) -> Vec<[Vec3; 2]> {
        fz.iter()
            .map(|f| [Vec3::new(0.0, 0.0, f.0), Vec3::new(0.0, 0.0, f.1)])
            .collect()
    }

    fn score(subject: &str, motion: &str, value: f64) -> ClipScore {
        ClipScore {
            subject: subject.into(),
            motion: motion.into(),
            value,
        }
    }

    #[test]
    fn vgrf_exact_match_is_zero() {
        let f = [(0.5, 0.5), (0.7, 0.2), (0.0, 1.1)];
        assert_eq!(vgrf_mse(&pred(&f), &plate(&f)).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn vgrf_constant_left_error() {
        let f = [(0.5, 0.5); 10];
        let p: Vec<(f64, f64)> = f.iter().map(|(l, r)| (l + 0.1, *r)).collect();
        let (l, r) = vgrf_mse(&pred(&p), &plate(&f)).unwrap();
        assert!((l - 0.01).abs() < 1e-15);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn vgrf_skips_masked_and_errors_when_empty() {
        let f = [(0.5, 0.5), (f64::NAN, 0.5)];
        let p = [(0.5, 0.5), (100.0, 100.0)];
        assert_eq!(vgrf_mse(&pred(&p), &plate(&f)).unwrap(), (0.0, 0.0));
        let all_nan = [(f64::NAN, 0.5)];
        assert_eq!(
            vgrf_mse(&pred(&[(0.0, 0.0)]), &plate(&all_nan)),
            Err(MetricsError::NoValidFrames)
        );
        assert!(vgrf_mse(&pred(&p[..1]), &plate(&f)).is_err());
    }

    fn clip(z: &[f64]) -> MotionClip {
        MotionClip::new(
            "S1",
            "m",
            100.0,
            60.0,
            z.iter().map(|z| Vec3::new(0.0, 0.0, *z)).collect(),
            vec![vec![]; z.len()],
        )
        .unwrap()
    }

    fn sim(z: &[f64]) -> SimResult {
        SimResult {
            positions: z.iter().map(|z| Vec3::new(0.0, 0.0, *z)).collect(),
            velocities: vec![Vec3::zeros(); z.len()],
            total_force: vec![Vec3::zeros(); z.len().saturating_sub(1)],
            dt: 0.01,
        }
    }

    #[test]
    fn vrpe_examples() {
        let z = [1.0, 1.1, 0.9, 1.0];
        assert_eq!(vrpe(&sim(&z), &clip(&z)).unwrap(), 0.0);
        let off: Vec<f64> = z.iter().map(|v| v + 0.01).collect();
        assert!((vrpe(&sim(&off), &clip(&z)).unwrap() - 0.1).abs() < 1e-12);
        let off2: Vec<f64> = z.iter().map(|v| v + 0.02).collect();
        assert!((vrpe(&sim(&off2), &clip(&z)).unwrap() - 0.4).abs() < 1e-12);
        assert!(vrpe(&sim(&z[..2]), &clip(&z)).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let t = aggregate(&[score("S1", "hop", 2.5)]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].values, (2.5, 0.0));
        assert_eq!(t.average, (2.5, 0.0));

        let t = aggregate(&[score("S1", "a", 1.0), score("S1", "b", 3.0)]).unwrap();
        assert_eq!(t.average.0, 2.0);

        let scores = vec![
            score("S1", "walk", 0.3),
            score("S2", "hop", 1.7),
            score("S2", "walk", 0.1),
            score("S3", "hop", 0.9),
        ];
        let mut rev = scores.clone();
        rev.reverse();
        assert_eq!(aggregate(&scores).unwrap(), aggregate(&rev).unwrap());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn sample_std_matches_hand_value() {
        // mean 2, squared deviations 1 + 0 + 1, n - 1 = 2.
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loso_examples() {
        let s: Vec<String> = (1..=7).map(|i| format!("S{i}")).collect();
        let splits = loso_splits(&s).unwrap();
        assert_eq!(splits.len(), 7);
        assert!(splits.iter().all(|sp| sp.train.len() == 6));

        let splits = loso_splits(&["B".into(), "A".into()]).unwrap();
        assert_eq!(
            splits,
            vec![
                Split { train: vec!["B".into()], test: "A".into() },
                Split { train: vec!["A".into()], test: "B".into() },
            ]
        );
        assert_eq!(
            loso_splits(&["A".into()]),
            Err(MetricsError::TooFewSubjects(1))
        );
    }

    #[test]
    fn table_csv_layout() {
        let t = aggregate_feet(&[score("S1", "hop", 0.1)], &[score("S1", "hop", 0.2)]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "motion,left,right\nhop,0.1,0.2\nAverage,0.1,0.2\n"
        );
    }
}
