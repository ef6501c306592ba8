//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use physgrd_core::grf_model::{gradient_check, predict_clip, prepare, PreparedClip, Sample};
use physgrd_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn g() -> GravitySpec {
    GravitySpec::default()
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn ballistic_error(rate: f64) -> (f64, f64) {
    let params = SynthParams {
        frame_rate: rate,
        duration: 1.0,
        ..Default::default()
    };
    let (clip, _) = gen_synthetic(SynthKind::Ballistic, &params, 0).unwrap();
    let sim = simulate(&clip, PDGains::zero(), &g(), SimMode::ClosedLoop).unwrap();
    let (x0, v0) = (params.x0.z, params.v0.z);
    let err = sim
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = i as f64 / rate;
            (p.z - (x0 + v0 * t - 0.5 * 9.81 * t * t)).abs()
        })
        .fold(0.0, f64::max);
    (err, 9.81 / rate * params.duration)
}

fn c1_ballistic() -> Outcome {
    let start = Instant::now();
    let (e100, bound100) = ballistic_error(100.0);
    let (e1000, _) = ballistic_error(1000.0);
    let elapsed = start.elapsed();
    outcome(
        e100 <= bound100 && e1000 <= 0.01 && within(elapsed, 1.0),
        format!("max |dz| 100 Hz = {e100:.6} (<= {bound100:.4}), 1000 Hz = {e1000:.6} (<= 0.01), {elapsed:.2?} (< 1 s)"),
    )
}

fn c2_equilibrium() -> Outcome {
    let (rate, seconds, z_ref) = (100.0, 40.0, 1.0);
    let n = (rate * seconds) as usize + 1;
    let pos = vec![Vec3::new(0.0, 0.0, z_ref); n];
    let clip = MotionClip::new("S1", "still", rate, 70.0, pos, vec![vec![]; n]).unwrap();
    let sim = simulate(&clip, PDGains { kp: 70.0, kd: 3.0 }, &g(), SimMode::ClosedLoop).unwrap();
    let offset = z_ref - sim.positions[n - 1].z;
    let force = sim.total_force[n - 2];
    let off_err = (offset - 9.81 / 70.0).abs();
    let force_err = (force - Vec3::new(0.0, 0.0, 9.81)).norm();
    outcome(
        off_err <= 1e-6 && force_err <= 1e-6,
        format!("offset = {offset:.9} m (err {off_err:.1e} <= 1e-6), |F - (0,0,9.81)| = {force_err:.1e} (<= 1e-6)"),
    )
}

fn c3_recovery() -> Outcome {
    let start = Instant::now();
    let truth = PDGains { kp: 50.0, kd: 6.0 };
    let spec = DatasetSpec {
        kinds: vec![SynthKind::SpringTracked],
        subjects: 5,
        clips_per_kind: 1,
        base: SynthParams {
            gains: truth,
            ..Default::default()
        },
        vary_subjects: false,
    };
    let ds = synthetic_dataset(&spec, 42).unwrap();
    let grid = GainGrid::reference().with_cell(truth).unwrap();
    let report = calibrate(&ds.clips(), &grid, &g(), SimMode::ClosedLoop).unwrap();
    let best = report.best_score();
    let elapsed = start.elapsed();
    outcome(
        ds.entries.len() == 5 && report.best == truth && best.mean < 1e-6 && within(elapsed, 10.0),
        format!(
            "best = ({}, {}), vRPE = {:.2e} (< 1e-6), {elapsed:.2?} (< 10 s)",
            report.best.kp, report.best.kd, best.mean
        ),
    )
}

fn c4_damping() -> Outcome {
    let spec = DatasetSpec {
        kinds: vec![SynthKind::Hop],
        subjects: 3,
        clips_per_kind: 2,
        base: SynthParams::default(),
        vary_subjects: true,
    };
    let ds = synthetic_dataset(&spec, 42).unwrap();
    let report = calibrate(&ds.clips(), &GainGrid::reference(), &g(), SimMode::ClosedLoop).unwrap();
    let score = |kp, kd| report.cell(PDGains { kp, kd }).unwrap().mean;
    let (a, b, c) = (score(70.0, 3.0), score(70.0, 0.0), score(10.0, 0.0));
    outcome(
        a < b && b < c,
        format!("vRPE (70,3) = {a:.3} < (70,0) = {b:.3} < (10,0) = {c:.3}"),
    )
}

fn random_sample(rng: &mut ChaCha8Rng, width: usize) -> Sample {
    let len = rng.random_range(4..16);
    let features = (0..len * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v3 = |rng: &mut ChaCha8Rng| {
        Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.5))
    };
    let plate = (0..len)
        .map(|_| {
            let masked = rng.random_bool(0.25);
            let frame = [v3(rng), v3(rng)];
            (!masked).then_some(frame)
        })
        .collect();
    let phys = (0..len).map(|_| v3(rng)).collect();
    Sample::new(features, len, plate, phys).unwrap()
}

fn c5_gradient_check() -> Outcome {
    let start = Instant::now();
    let width = 5;
    let shape = NetShape {
        input_width: width,
        conv_width: 6,
        fc_hidden: [5, 4],
    };
    let mut worst_fraction: f64 = 1.0;
    let mut worst_error: f64 = 0.0;
    let mut params = 0;
    for seed in 0..10u64 {
        let net = TemporalConvNet::new(&shape, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let samples: Vec<Sample> = (0..2).map(|_| random_sample(&mut rng, width)).collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        let check = gradient_check(&net, &batch, 1.0, 1.0, 1e-6).unwrap();
        params = check.analytic.len();
        worst_fraction = worst_fraction.min(check.fraction_within(1e-4));
        worst_error = worst_error.max(check.worst());
    }
    let elapsed = start.elapsed();
    outcome(
        worst_fraction >= 0.999 && within(elapsed, 60.0),
        format!(
            "10 seeds x {params} params: min fraction within 1e-4 = {:.4} (>= 0.999), worst rel err = {worst_error:.1e}, {elapsed:.2?} (< 60 s)",
            worst_fraction
        ),
    )
}

fn c6_physics_benefit() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let spec = DatasetSpec {
            kinds: vec![SynthKind::Hop, SynthKind::Walk],
            subjects: 4,
            clips_per_kind: 2,
            base: SynthParams {
                plate_dropout: 0.3,
                plate_x_range: Some((0.0, 2.5)),
                ..Default::default()
            },
            vary_subjects: true,
        };
        let ds = synthetic_dataset(&spec, seed).unwrap();
        let split = loso_splits(&ds.subjects()).unwrap().remove(0);
        let train_clips: Vec<MotionClip> = ds
            .for_subjects(&split.train)
            .map(|e| e.clip.clone())
            .collect();
        let gains = calibrate(&train_clips, &GainGrid::reference(), &g(), SimMode::ClosedLoop)
            .unwrap()
            .best;
        let prepared = prepare(&ds, gains, &g(), SimMode::ClosedLoop).unwrap();
        let train_set: Vec<&PreparedClip> = prepared
            .iter()
            .filter(|p| split.train.iter().any(|s| s == p.clip.subject_id()))
            .collect();
        let test_set: Vec<&PreparedClip> = prepared.iter().filter(|p| p.clip.subject_id() == split.test).collect();
        let shape = NetShape {
            input_width: prepared[0].clip.feature_width(),
            conv_width: 16,
            fc_hidden: [16, 8],
        };
        let run = |lambda2| {
            let cfg = TrainConfig {
                epochs: 20,
                batch_size: 8,
                learning_rate: 1e-3,
                window_len: 100,
                seed,
                lambda2,
                ..Default::default()
            };
            let (_, log) = train(&train_set, &test_set, &shape, &cfg, &g()).unwrap();
            log.last().unwrap().test_vrpe
        };
        let (base, phys) = (run(0.0), run(0.005));
        if phys <= base {
            wins += 1;
        }
        lines.push(format!("seed {seed}: {phys:.1} vs {base:.1}"));
    }
    outcome(
        wins >= 4,
        format!("held-out vRPE with/without physics term, {wins}/5 seeds improved (>= 4): {}", lines.join("; ")),
    )
}

fn c7_metric_units() -> Outcome {
    let n = 50;
    let pos: Vec<Vec3> = (0..n).map(|i| Vec3::new(0.0, 0.0, 1.0 + 0.01 * (i as f64).sin())).collect();
    let clip = MotionClip::new("S1", "m", 100.0, 70.0, pos.clone(), vec![vec![]; n]).unwrap();
    let sim = SimResult {
        positions: pos.iter().map(|p| p + Vec3::new(0.0, 0.0, 0.01)).collect(),
        velocities: vec![Vec3::zeros(); n],
        total_force: vec![Vec3::zeros(); n - 1],
        dt: 0.01,
    };
    let rpe = vrpe(&sim, &clip).unwrap();

    let plate_force = Vec3::new(0.0, 0.0, 0.5);
    let plate = ForcePlateRecord::new(
        [vec![plate_force; n], vec![plate_force; n]],
        [vec![[0.0; 2]; n], vec![[0.0; 2]; n]],
        [vec![true; n], vec![true; n]],
    )
    .unwrap();
    let pred = vec![[plate_force + Vec3::new(0.0, 0.0, 0.1), plate_force]; n];
    let (l, r) = vgrf_mse(&pred, &plate).unwrap();
    outcome(
        (rpe - 0.1).abs() <= 1e-12 && (l - 0.01).abs() <= 1e-15 && r == 0.0,
        format!("vRPE(0.01 m) = {rpe} (0.1 +- 1e-12), vGRF(0.1 BW left) = ({l}, {r}) ((0.01 +- 1e-15, 0))"),
    )
}

fn physgrd(dir: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_physgrd"))
        .current_dir(dir)
        .env("PHYSGRD_THREADS", threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(dir: &Path, threads: &str) -> Result<(), String> {
    let steps: [&[&str]; 5] = [
        &["gen", "--seed", "42", "--kind", "hop,walk", "--subjects", "3", "--vary-subjects", "--duration", "2", "--plate-dropout", "0.2", "--out-dir", "data"],
        &["calibrate", "--seed", "42", "--manifest", "data/manifest.json", "--out-dir", "cal"],
        &[
            "train", "--seed", "42", "--manifest", "data/manifest.json", "--gains", "cal/best_gains.json", "--epochs", "3",
            "--lr", "1e-3", "--conv-width", "8", "--fc-hidden", "8,4", "--window", "100", "--batch-size", "4", "--out-dir", "model",
        ],
        &["predict", "--seed", "42", "--checkpoint", "model/model.json", "--manifest", "data/manifest.json", "--all", "--out-dir", "pred"],
        &["metrics", "--seed", "42", "--manifest", "data/manifest.json", "--pred-dir", "pred", "--out-dir", "metrics"],
    ];
    for step in steps {
        physgrd(dir, threads, step)?;
    }
    Ok(())
}

fn collect_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn c8_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = pipeline(a.path(), "1").and_then(|()| pipeline(b.path(), "4")) {
        return outcome(false, format!("pipeline failed: {e}"));
    }
    let (fa, fb) = (collect_files(a.path()), collect_files(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && !fa.is_empty(),
        format!(
            "gen -> calibrate -> train -> predict -> metrics twice (1 and 4 threads): {} files, {} differ",
            fa.len(),
            differing.len()
        ),
    )
}

fn c9_mask_invariance() -> Outcome {
    let params = SynthParams {
        plate_dropout: 0.3,
        extra_features: 2,
        ..Default::default()
    };
    let (clip, plate) = gen_synthetic(SynthKind::Hop, &params, 7).unwrap();
    let n = clip.len();
    let masked: Vec<usize> = (0..n).filter(|&t| !plate.is_valid(t)).collect();
    let shape = NetShape {
        input_width: clip.feature_width(),
        conv_width: 6,
        fc_hidden: [5, 4],
    };
    let net = TemporalConvNet::new(&shape, 3).unwrap();
    let pred = predict_clip(&net, &clip).unwrap();
    let phys: Vec<Vec3> = physics_force_series(&clip, PDGains::default(), &g(), SimMode::ClosedLoop)
        .unwrap()
        .iter()
        .map(|f| f / 9.81)
        .collect();

    let fingerprint = |plate: &ForcePlateRecord| -> Vec<u64> {
        let (l, r) = vgrf_mse(&pred.forces, plate).unwrap();
        let eval = evaluate(&[(&clip, Some(plate), pred.forces.as_slice())], &g()).unwrap();
        let vgrf = eval.vgrf.unwrap().average;
        let targets = Sample::plate_targets(Some(plate), n);
        let loss = composite_loss(&pred, &targets, &phys, 0.002, 0.005).unwrap();
        let sample = Sample::new(clip.features(), n, targets, phys.clone()).unwrap();
        let (terms, grad) = backward(&net, &[&sample], 0.002, 0.005).unwrap();
        let mut bits = vec![l, r, vgrf.0, vgrf.1, eval.vrpe.average.0, loss.total, terms.total];
        bits.extend(grad.params().copied());
        bits.into_iter().map(f64::to_bits).collect()
    };
    let reference = fingerprint(&plate);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let specials = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY];
    let mut changed = 0;
    for _ in 0..100 {
        let t = masked[rng.random_range(0..masked.len())];
        let foot = if rng.random_bool(0.5) { Foot::Left } else { Foot::Right };
        let mut v = Vec3::new(
            rng.random_range(-1e6..1e6),
            rng.random_range(-1e6..1e6),
            rng.random_range(-1e6..1e6),
        );
        v[rng.random_range(0..3)] = specials[rng.random_range(0..3)];
        let corrupted = plate.clone().with_force(foot, t, v);
        if corrupted.valid_mask() != plate.valid_mask() || fingerprint(&corrupted) != reference {
            changed += 1;
        }
    }
    outcome(
        changed == 0 && !masked.is_empty(),
        format!("100 random corruptions of {} masked frames: {changed} changed an output bit", masked.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("ballistic oracle", c1_ballistic),
        ("equilibrium offset", c2_equilibrium),
        ("calibration recovery", c3_recovery),
        ("damping trend", c4_damping),
        ("gradient check", c5_gradient_check),
        ("physics-loss benefit", c6_physics_benefit),
        ("metric unit checks", c7_metric_units),
        ("determinism", c8_determinism),
        ("missing-data invariance", c9_mask_invariance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!("[{tag}] {}. {name}: {}", i + 1, result.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
