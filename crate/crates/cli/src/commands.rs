use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use physgrd_core::grf_model::{predict_clip, prepare, Checkpoint, CheckpointMeta, PreparedClip};
use physgrd_core::metrics::{aggregate, aggregate_feet, MetricTable};
use physgrd_core::motion_data::{load_clip_csv, load_force_plate, ClipMeta};
use physgrd_core::{
    calibrate, evaluate, loso_splits, physics_force_series, simulate, synthetic_dataset, vgrf_mse,
    vrpe, vrpe_from_prediction, ClipScore, DataError, Dataset, DatasetEntry, DatasetSpec, GainGrid,
    GravitySpec, NetShape, PDGains, Prediction, SimMode, SynthParams, TrainConfig, Vec3,
};
use serde::{Deserialize, Serialize};

use crate::svg::{line_chart, sidecar_csv, Series};
use crate::{
    CalibrateArgs, Cli, Command, GainArgs, GenArgs, GlobalArgs, MetricsArgs, PlotArgs, PredictArgs,
    SimulateArgs, TrainArgs, UsageError,
};

struct Ctx {
    seed: u64,
    gravity: GravitySpec,
    mode: SimMode,
    out_dir: PathBuf,
}

impl Ctx {
    fn new(g: &GlobalArgs) -> Result<Self> {
        let gravity = GravitySpec::vertical(g.gravity_z).map_err(|e| UsageError(e.to_string()))?;
        Ok(Self {
            seed: g.seed,
            gravity,
            mode: g.mode,
            out_dir: g.out_dir.clone(),
        })
    }

    fn prepare_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create output directory {}", self.out_dir.display()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("missing input file {}", path.display());
    }
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("missing input directory {}", path.display());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(File) -> std::io::Result<()>,
{
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    f(file).with_context(|| format!("cannot write {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Contents of `best_gains.json`.
#[derive(Debug, Serialize, Deserialize)]
struct BestGains {
    kp: f64,
    kd: f64,
    mode: SimMode,
    mean_vrpe: f64,
    std_vrpe: f64,
}

impl GainArgs {
    fn check(&self) -> Result<()> {
        if let Some(p) = &self.gains {
            require_file(p)?;
        }
        Ok(())
    }

    fn resolve(&self) -> Result<PDGains> {
        if let Some(path) = &self.gains {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let best: BestGains =
                serde_json::from_str(&text).with_context(|| format!("parsing gains file {}", path.display()))?;
            return PDGains::new(best.kp, best.kd).map_err(|e| anyhow!("{}: {e}", path.display()));
        }
        match (self.kp, self.kd) {
            (Some(kp), Some(kd)) => PDGains::new(kp, kd).map_err(|e| usage(e.to_string())),
            _ => Ok(PDGains::default()),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Calibrate(a) => calibrate_cmd(&ctx, a),
        Command::Simulate(a) => simulate_cmd(&ctx, a),
        Command::Metrics(a) => metrics_cmd(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Predict(a) => predict_cmd(&ctx, a),
        Command::Plot(a) => plot_cmd(&ctx, a),
    }
}

fn gen(ctx: &Ctx, a: GenArgs) -> Result<()> {
    if a.subjects == 0 || a.clips_per_kind == 0 {
        return Err(usage("--subjects and --clips-per-kind must be positive"));
    }
    let mut base = SynthParams {
        frame_rate: a.rate,
        duration: a.duration,
        mass: a.mass,
        extra_features: a.extra_features,
        hop_freq: a.freq,
        hop_amplitude: a.amplitude,
        walk_speed: a.walk_speed,
        stride_freq: a.stride_freq,
        gains: PDGains { kp: a.gains.0, kd: a.gains.1 },
        plate_dropout: a.plate_dropout,
        plate_noise: a.plate_noise,
        plate_x_range: a.plate_x_range,
        gravity: ctx.gravity,
        ..Default::default()
    };
    if let Some(x0) = a.x0 {
        base.x0 = Vec3::from(x0);
    }
    if let Some(v0) = a.v0 {
        base.v0 = Vec3::from(v0);
    }
    for &kind in &a.kind {
        base.validate(kind).map_err(|e| usage(e.to_string()))?;
    }
    let spec = DatasetSpec {
        kinds: a.kind,
        subjects: a.subjects,
        clips_per_kind: a.clips_per_kind,
        base,
        vary_subjects: a.vary_subjects,
    };
    ctx.prepare_out_dir()?;
    let ds = match synthetic_dataset(&spec, ctx.seed) {
        Err(DataError::InvalidParams(m)) => return Err(usage(m)),
        other => other?,
    };
    for path in ds.write(&ctx.out_dir, &a.manifest_name)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn calibrate_cmd(ctx: &Ctx, a: CalibrateArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let mut grid = if a.dense {
        GainGrid::dense()
    } else if !a.kp.is_empty() {
        GainGrid::rectangular(&a.kp, &a.kd).map_err(|e| usage(e.to_string()))?
    } else {
        GainGrid::reference()
    };
    for (kp, kd) in a.extra_cell {
        grid = grid.with_cell(PDGains { kp, kd }).map_err(|e| usage(e.to_string()))?;
    }
    ctx.prepare_out_dir()?;
    let ds = load_dataset(&a.manifest)?;
    let report = calibrate(&ds.clips(), &grid, &ctx.gravity, ctx.mode)?;
    write_with(&ctx.path("calibration.csv"), |f| report.write_csv(f))?;
    write_json(&ctx.path("calibration.json"), &report)?;
    let best = report.best_score();
    write_json(
        &ctx.path("best_gains.json"),
        &BestGains {
            kp: best.gains.kp,
            kd: best.gains.kd,
            mode: ctx.mode,
            mean_vrpe: best.mean,
            std_vrpe: best.std,
        },
    )?;
    eprintln!(
        "best kp={} kd={} vRPE={:.6}±{:.6}",
        best.gains.kp, best.gains.kd, best.mean, best.std
    );
    Ok(())
}

fn simulate_cmd(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    require_file(&a.manifest)?;
    a.gains.check()?;
    ctx.prepare_out_dir()?;
    let gains = a.gains.resolve()?;
    let ds = load_dataset(&a.manifest)?;
    let mut scores = Vec::new();
    for e in &ds.entries {
        let sim = simulate(&e.clip, gains, &ctx.gravity, ctx.mode).with_context(|| format!("simulating {}", e.key))?;
        write_with(&ctx.path(&format!("{}.sim.csv", e.key)), |f| sim.write_csv(f))?;
        scores.push(ClipScore {
            subject: e.clip.subject_id().to_string(),
            motion: e.clip.motion_label().to_string(),
            value: vrpe(&sim, &e.clip)?,
        });
    }
    let table = aggregate(&scores)?;
    write_with(&ctx.path("sim_vrpe_table.csv"), |f| table.write_csv(f))
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    vgrf: Option<&'a MetricTable>,
    vrpe: Option<&'a MetricTable>,
}

fn write_tables(ctx: &Ctx, vgrf: Option<&MetricTable>, vrpe: Option<&MetricTable>) -> Result<()> {
    if let Some(t) = vgrf {
        write_with(&ctx.path("vgrf_table.csv"), |f| t.write_csv(f))?;
        eprintln!("vGRF average left={} right={}", t.average.0, t.average.1);
    }
    if let Some(t) = vrpe {
        write_with(&ctx.path("vrpe_table.csv"), |f| t.write_csv(f))?;
        eprintln!("vRPE average {}±{}", t.average.0, t.average.1);
    }
    write_json(&ctx.path("metrics.json"), &MetricsReport { vgrf, vrpe })
}

fn read_prediction(path: &Path) -> Result<Prediction> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Prediction::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

fn metrics_cmd(ctx: &Ctx, a: MetricsArgs) -> Result<()> {
    if let (Some(manifest), Some(pred_dir)) = (&a.manifest, &a.pred_dir) {
        require_file(manifest)?;
        require_dir(pred_dir)?;
        ctx.prepare_out_dir()?;
        let ds = load_dataset(manifest)?;
        let mut found: Vec<(&DatasetEntry, Prediction)> = Vec::new();
        for e in &ds.entries {
            let path = pred_dir.join(format!("{}.pred.csv", e.key));
            if path.is_file() {
                let pred = read_prediction(&path)?;
                if pred.len() != e.clip.len() {
                    bail!("{}: {} frames, clip has {}", path.display(), pred.len(), e.clip.len());
                }
                found.push((e, pred));
            }
        }
        if found.is_empty() {
            bail!("missing upstream artifact: no <key>.pred.csv in {} matches the manifest", pred_dir.display());
        }
        let items: Vec<_> = found
            .iter()
            .map(|(e, p)| (&e.clip, e.plate.as_ref(), p.forces.as_slice()))
            .collect();
        let eval = evaluate(&items, &ctx.gravity)?;
        return write_tables(ctx, eval.vgrf.as_ref(), Some(&eval.vrpe));
    }
    let (Some(pred_path), Some(plate_path)) = (&a.pred, &a.plate) else {
        return Err(usage("metrics needs --manifest with --pred-dir, or --pred with --plate"));
    };
    require_file(pred_path)?;
    require_file(plate_path)?;
    if let Some(c) = &a.clip {
        require_file(c)?;
    }
    ctx.prepare_out_dir()?;
    let pred = read_prediction(pred_path)?;
    let plate = load_force_plate(plate_path)?;
    let label = "clip".to_string();
    let score = |value| ClipScore {
        subject: String::new(),
        motion: label.clone(),
        value,
    };
    let (l, r) = vgrf_mse(&pred.forces, &plate)?;
    let vgrf = aggregate_feet(&[score(l)], &[score(r)])?;
    let vrpe_table = match &a.clip {
        Some(path) => {
            let clip = load_clip_csv(path, &ClipMeta::new("", label.clone(), a.mass))?;
            if clip.len() != pred.len() {
                bail!("{}: {} frames, prediction has {}", path.display(), clip.len(), pred.len());
            }
            Some(aggregate(&[score(vrpe_from_prediction(&pred.forces, &clip, &ctx.gravity)?)])?)
        }
        None => None,
    };
    write_tables(ctx, Some(&vgrf), vrpe_table.as_ref())
}

fn feature_width(ds: &Dataset) -> Result<usize> {
    let d = ds.entries[0].clip.feature_width();
    if let Some(e) = ds.entries.iter().find(|e| e.clip.feature_width() != d) {
        bail!("clip {} has {} features, expected {d}", e.key, e.clip.feature_width());
    }
    Ok(d)
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    require_file(&a.manifest)?;
    a.gains.check()?;
    let [h1, h2] = <[usize; 2]>::try_from(a.fc_hidden.as_slice())
        .map_err(|_| usage("--fc-hidden takes exactly two widths"))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: ctx.seed,
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        window_len: a.window,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    ctx.prepare_out_dir()?;
    let gains = a.gains.resolve()?;
    let ds = load_dataset(&a.manifest)?;
    let shape = NetShape {
        input_width: feature_width(&ds)?,
        conv_width: a.conv_width,
        fc_hidden: [h1, h2],
    };
    shape.validate().map_err(|e| usage(e.to_string()))?;
    let splits = loso_splits(&ds.subjects())?;
    let folds: Vec<_> = if a.all_folds {
        splits
    } else {
        let test = a.test_subject.clone().unwrap_or_else(|| splits[0].test.clone());
        let split = splits
            .into_iter()
            .find(|s| s.test == test)
            .ok_or_else(|| usage(format!("unknown test subject {test:?}")))?;
        vec![split]
    };
    let prepared = prepare(&ds, gains, &ctx.gravity, ctx.mode)?;

    let mut summary = String::from("test_subject,test_vgrf_l,test_vgrf_r,test_vrpe\n");
    for split in &folds {
        let train_set: Vec<&PreparedClip> = prepared
            .iter()
            .filter(|p| split.train.iter().any(|s| s == p.clip.subject_id()))
            .collect();
        let test_set: Vec<&PreparedClip> = prepared.iter().filter(|p| p.clip.subject_id() == split.test).collect();
        let (net, log) = physgrd_core::train(&train_set, &test_set, &shape, &cfg, &ctx.gravity)?;
        let suffix = if a.all_folds { format!("_{}", split.test) } else { String::new() };
        let mut notes = BTreeMap::new();
        notes.insert(
            "widths".into(),
            format!("conv {}, dense {h1},{h2}; chosen, not prescribed", shape.conv_width),
        );
        notes.insert("features".into(), "root position followed by clip feature columns".into());
        notes.insert("physics_force".into(), "body weights, PD acceleration divided by |g|".into());
        let ckpt = Checkpoint {
            net,
            config: cfg.clone(),
            meta: CheckpointMeta {
                gains,
                mode: ctx.mode,
                gravity_z: ctx.gravity.magnitude(),
                test_subject: Some(split.test.clone()),
                optimizer: log.optimizer.clone(),
                notes,
            },
        };
        let model_path = ctx.path(&format!("model{suffix}.json"));
        ckpt.save(&model_path)?;
        println!("{}", model_path.display());
        write_with(&ctx.path(&format!("train_log{suffix}.csv")), |f| log.write_csv(f))?;
        let last = log.last().expect("at least one epoch");
        eprintln!(
            "fold {}: loss={} test vGRF=({}, {}) vRPE={}",
            split.test, last.train_loss, last.test_vgrf_l, last.test_vgrf_r, last.test_vrpe
        );
        summary += &format!(
            "{},{},{},{}\n",
            split.test, last.test_vgrf_l, last.test_vgrf_r, last.test_vrpe
        );
    }
    if a.all_folds {
        write_text(&ctx.path("cv_summary.csv"), &summary)?;
    }
    Ok(())
}

fn predict_cmd(ctx: &Ctx, a: PredictArgs) -> Result<()> {
    require_file(&a.checkpoint)?;
    require_file(&a.manifest)?;
    ctx.prepare_out_dir()?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest)?;
    let entries: Vec<&DatasetEntry> = match (&ckpt.meta.test_subject, a.all) {
        (Some(test), false) => {
            let chosen: Vec<_> = ds.entries.iter().filter(|e| e.clip.subject_id() == test).collect();
            if chosen.is_empty() {
                bail!("manifest has no clips for held-out subject {test}");
            }
            chosen
        }
        _ => ds.entries.iter().collect(),
    };
    for e in entries {
        let pred = predict_clip(&ckpt.net, &e.clip).with_context(|| format!("predicting {}", e.key))?;
        write_with(&ctx.path(&format!("{}.pred.csv", e.key)), |f| {
            pred.write_csv(f, e.clip.frame_rate())
        })?;
    }
    Ok(())
}

fn plot_cmd(ctx: &Ctx, a: PlotArgs) -> Result<()> {
    require_file(&a.manifest)?;
    a.gains.check()?;
    let pred_path = a.pred_dir.as_ref().map(|d| d.join(format!("{}.pred.csv", a.key)));
    if let Some(p) = &pred_path {
        require_file(p)?;
    }
    ctx.prepare_out_dir()?;
    let gains = a.gains.resolve()?;
    let ds = load_dataset(&a.manifest)?;
    let entry = ds
        .entries
        .iter()
        .find(|e| e.key == a.key)
        .ok_or_else(|| usage(format!("no clip with key {:?} in manifest", a.key)))?;
    let clip = &entry.clip;
    let n = clip.len();
    let t: Vec<f64> = (0..n).map(|i| clip.time(i)).collect();
    let g = ctx.gravity.magnitude();

    let plate: Vec<f64> = (0..n)
        .map(|i| {
            entry
                .plate
                .as_ref()
                .and_then(|p| p.frame(i))
                .map_or(f64::NAN, |[l, r]| l.z + r.z)
        })
        .collect();
    let physics: Vec<f64> = physics_force_series(clip, gains, &ctx.gravity, ctx.mode)?
        .iter()
        .map(|f| f.z / g)
        .collect();
    let predicted: Option<Vec<f64>> = match &pred_path {
        Some(p) => Some(read_prediction(p)?.total().iter().map(|f| f.z).collect()),
        None => None,
    };
    let mut series = vec![
        Series { label: "plate", color: "#1f77b4", values: &plate },
        Series { label: "physics", color: "#ff7f0e", values: &physics },
    ];
    if let Some(p) = &predicted {
        series.push(Series { label: "predicted", color: "#2ca02c", values: p });
    }
    let title = format!("{} vertical GRF", a.key);
    let svg = line_chart(&title, "time (s)", "force (body weights)", &t, &series).map_err(|e| anyhow!(e))?;
    write_text(&ctx.path(&format!("{}.vgrf.svg", a.key)), &svg)?;
    write_text(&ctx.path(&format!("{}.vgrf.csv", a.key)), &sidecar_csv("t", &t, &series))?;

    let sim = simulate(clip, gains, &ctx.gravity, ctx.mode)?;
    let mocap: Vec<f64> = clip.root_positions().iter().map(|p| p.z).collect();
    let simulated: Vec<f64> = sim.positions.iter().map(|p| p.z).collect();
    let series = [
        Series { label: "mocap", color: "#1f77b4", values: &mocap },
        Series { label: "simulated", color: "#ff7f0e", values: &simulated },
    ];
    let title = format!("{} vertical root trajectory", a.key);
    let svg = line_chart(&title, "time (s)", "height (m)", &t, &series).map_err(|e| anyhow!(e))?;
    write_text(&ctx.path(&format!("{}.traj.svg", a.key)), &svg)?;
    write_text(&ctx.path(&format!("{}.traj.csv", a.key)), &sidecar_csv("t", &t, &series))
}
