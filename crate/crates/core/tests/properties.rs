use physgrd_core::grf_model::{composite_loss, Prediction};
use physgrd_core::metrics::vrpe;
use physgrd_core::motion_data::{read_clip_csv, write_clip, ClipMeta};
use physgrd_core::*;
use proptest::prelude::*;

fn g() -> GravitySpec {
    GravitySpec::default()
}

fn clip_from(z: &[f64], rate: f64, subject: &str) -> MotionClip {
    let pos = z.iter().map(|&z| Vec3::new(0.0, 0.0, z)).collect();
    MotionClip::new(subject, "m", rate, 70.0, pos, vec![vec![]; z.len()]).unwrap()
}

fn arb_clip() -> impl Strategy<Value = MotionClip> {
    (1usize..40, 0usize..4, prop::sample::select(vec![50.0, 100.0, 120.0, 1000.0])).prop_flat_map(
        |(n, d, rate)| {
            (
                prop::collection::vec(prop::array::uniform3(-1e3..1e3f64), n),
                prop::collection::vec(prop::collection::vec(-1e6..1e6f64, d), n),
            )
                .prop_map(move |(pos, feats)| {
                    let pos = pos.into_iter().map(Vec3::from).collect();
                    MotionClip::new("S1", "m", rate, 60.0, pos, feats).unwrap()
                })
        },
    )
}

fn arb_plate(n: usize) -> impl Strategy<Value = ForcePlateRecord> {
    (
        prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), n),
        prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), n),
        prop::collection::vec(prop::bool::weighted(0.3), n),
    )
        .prop_map(move |(l, r, masked)| {
            let mut left: Vec<Vec3> = l.into_iter().map(Vec3::from).collect();
            let right: Vec<Vec3> = r.into_iter().map(Vec3::from).collect();
            for (t, m) in masked.iter().enumerate() {
                if *m {
                    left[t].z = f64::NAN;
                }
            }
            ForcePlateRecord::new(
                [left, right],
                [vec![[0.0; 2]; n], vec![[0.0; 2]; n]],
                [vec![true; n], vec![true; n]],
            )
            .unwrap()
        })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clip_csv_round_trip(clip in arb_clip()) {
        let mut buf = Vec::new();
        write_clip(&mut buf, &clip).unwrap();
        let mut meta = ClipMeta::new("S1", "m", 60.0);
        meta.frame_rate = Some(clip.frame_rate());
        let back = read_clip_csv(buf.as_slice(), &meta).unwrap();
        prop_assert_eq!(back.len(), clip.len());
        prop_assert!(close(back.frame_rate(), clip.frame_rate(), 1e-9));
        for (a, b) in back.features().iter().zip(clip.features()) {
            prop_assert!(close(*a, b, 1e-9));
        }
    }

    #[test]
    fn masked_frames_never_affect_metrics_or_loss(
        (plate, pred, junk) in (2usize..30).prop_flat_map(|n| (
            arb_plate(n),
            prop::collection::vec(prop::array::uniform6(-2.0..2.0f64), n),
            prop::array::uniform3(prop::num::f64::ANY),
        ))
    ) {
        let pred: Vec<[Vec3; 2]> = pred
            .into_iter()
            .map(|v| [Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])])
            .collect();
        let n = pred.len();
        let masked: Vec<usize> = (0..n).filter(|&t| !plate.is_valid(t)).collect();
        prop_assume!(!masked.is_empty() && masked.len() < n);
        let mut corrupted = plate.clone();
        for &t in &masked {
            corrupted = corrupted.with_force(Foot::Left, t, Vec3::new(junk[0], junk[1], f64::NAN));
            corrupted = corrupted.with_force(Foot::Right, t, Vec3::from(junk));
        }
        prop_assert_eq!(corrupted.valid_mask(), plate.valid_mask());

        let a = vgrf_mse(&pred, &plate).unwrap();
        let b = vgrf_mse(&pred, &corrupted).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1.to_bits(), b.1.to_bits());

        let prediction = Prediction { forces: pred };
        let phys = vec![Vec3::new(0.0, 0.0, 1.0); n];
        let targets = |p: &ForcePlateRecord| (0..n).map(|t| p.frame(t)).collect::<Vec<_>>();
        let la = composite_loss(&prediction, &targets(&plate), &phys, 0.002, 0.005).unwrap();
        let lb = composite_loss(&prediction, &targets(&corrupted), &phys, 0.002, 0.005).unwrap();
        prop_assert_eq!(la.total.to_bits(), lb.total.to_bits());
    }

    #[test]
    fn valid_mask_tracks_non_finite_components(
        fz in prop::collection::vec(prop::sample::select(vec![0.0, 1.0, f64::NAN, f64::INFINITY]), 1..20)
    ) {
        let n = fz.len();
        let left: Vec<Vec3> = fz.iter().map(|&z| Vec3::new(0.0, 0.0, z)).collect();
        let plate = ForcePlateRecord::new(
            [left, vec![Vec3::zeros(); n]],
            [vec![[0.0; 2]; n], vec![[0.0; 2]; n]],
            [vec![true; n], vec![true; n]],
        )
        .unwrap();
        for (t, z) in fz.iter().enumerate() {
            prop_assert_eq!(plate.is_valid(t), z.is_finite());
        }
    }

    #[test]
    fn generators_are_pure(seed in any::<u64>(), kind in prop::sample::select(vec![
        SynthKind::Hop, SynthKind::Walk, SynthKind::Ballistic, SynthKind::SpringTracked,
    ])) {
        let p = SynthParams { duration: 0.5, plate_noise: 0.01, ..Default::default() };
        let a = gen_synthetic(kind, &p, seed).unwrap();
        let b = gen_synthetic(kind, &p, seed).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn spring_tracked_is_self_consistent(kp in 5.0..200.0f64, kd in 0.0..20.0f64, seed in any::<u64>()) {
        let gains = PDGains { kp, kd };
        let p = SynthParams { duration: 2.0, gains, ..Default::default() };
        let (clip, _) = gen_synthetic(SynthKind::SpringTracked, &p, seed).unwrap();
        let sim = simulate(&clip, gains, &g(), SimMode::ClosedLoop).unwrap();
        for (a, b) in sim.positions.iter().zip(clip.root_positions()) {
            prop_assert!((a - b).norm() <= 1e-9);
        }
    }

    #[test]
    fn ballistic_error_within_first_order_bound(
        rate in 50.0..1000.0f64,
        z0 in -5.0..5.0f64,
        vx in -3.0..3.0f64,
    ) {
        let p = SynthParams {
            frame_rate: rate,
            duration: 1.0,
            x0: Vec3::new(0.0, 0.0, z0),
            v0: Vec3::new(vx, 0.0, 0.0),
            ..Default::default()
        };
        let (clip, _) = gen_synthetic(SynthKind::Ballistic, &p, 0).unwrap();
        let sim = simulate(&clip, PDGains::zero(), &g(), SimMode::ClosedLoop).unwrap();
        let dt = clip.dt();
        for (t, (a, b)) in sim.positions.iter().zip(clip.root_positions()).enumerate() {
            prop_assert!((a.z - b.z).abs() <= 9.81 * dt * t as f64 * dt + 1e-12);
        }
    }

    #[test]
    fn vrpe_scales_quadratically(offset in 1e-4..1.0f64, n in 2usize..50) {
        let z: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
        let clip = clip_from(&z, 100.0, "S1");
        let shifted = |d: f64| SimResult {
            positions: clip.root_positions().iter().map(|p| p + Vec3::new(0.0, 0.0, d)).collect(),
            velocities: vec![Vec3::zeros(); n],
            total_force: vec![Vec3::zeros(); n - 1],
            dt: clip.dt(),
        };
        let one = vrpe(&shifted(offset), &clip).unwrap();
        let two = vrpe(&shifted(2.0 * offset), &clip).unwrap();
        prop_assert!(one >= 0.0);
        prop_assert!(close(two, 4.0 * one, 1e-9));
        prop_assert!(close(one, offset * offset * 1e3, 1e-9));
    }

    #[test]
    fn loso_covers_every_subject_once(ids in prop::collection::btree_set("[A-Z][0-9]", 2..8)) {
        let ids: Vec<String> = ids.into_iter().collect();
        let splits = loso_splits(&ids).unwrap();
        prop_assert_eq!(splits.len(), ids.len());
        for id in &ids {
            prop_assert_eq!(splits.iter().filter(|s| &s.test == id).count(), 1);
        }
        for s in &splits {
            prop_assert!(!s.train.contains(&s.test));
            prop_assert_eq!(s.train.len() + 1, ids.len());
        }
    }

    #[test]
    fn loss_is_nonnegative_and_linear_in_physics_weight(
        rows in prop::collection::vec((prop::array::uniform6(-2.0..2.0f64), prop::array::uniform3(-2.0..2.0f64)), 1..20),
        l1 in 0.0..1.0f64,
        l2 in 0.0..1.0f64,
    ) {
        let forces: Vec<[Vec3; 2]> = rows
            .iter()
            .map(|(v, _)| [Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])])
            .collect();
        let phys: Vec<Vec3> = rows.iter().map(|(_, p)| Vec3::from(*p)).collect();
        let plate: Vec<Option<[Vec3; 2]>> = forces.iter().map(|f| Some([f[0] * 0.5, f[1]])).collect();
        let pred = Prediction { forces };
        let base = composite_loss(&pred, &plate, &phys, l1, l2).unwrap();
        let doubled = composite_loss(&pred, &plate, &phys, l1, 2.0 * l2).unwrap();
        prop_assert!(base.total >= 0.0 && base.term1 >= 0.0 && base.term2 >= 0.0);
        prop_assert!(close(doubled.total - base.total, base.term2, 1e-12));
        let unit = composite_loss(&pred, &plate, &phys, l1, 1.0).unwrap();
        if unit.term2 > 0.0 {
            let more = composite_loss(&pred, &plate, &phys, l1, l2 + 0.5).unwrap();
            prop_assert!(more.total > base.total);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn constant_reference_settles_at_gravity_offset(
        rate in prop::sample::select(vec![100.0, 200.0, 400.0]),
        z in -2.0..2.0f64,
    ) {
        let n = (40.0 * rate) as usize;
        let clip = clip_from(&vec![z; n], rate, "S1");
        let sim = simulate(&clip, PDGains { kp: 70.0, kd: 3.0 }, &g(), SimMode::ClosedLoop).unwrap();
        let last = sim.positions[n - 1];
        prop_assert!(((z - last.z) - 9.81 / 70.0).abs() <= 1e-6);
        let f = sim.total_force[n - 2];
        prop_assert!((f - Vec3::new(0.0, 0.0, 9.81)).norm() <= 1e-6);
    }

    #[test]
    fn adding_a_cell_never_raises_the_best_score(kp in 5.0..120.0f64, kd in 0.0..20.0f64, seed in 0u64..4) {
        let p = SynthParams { duration: 1.0, ..Default::default() };
        let clips: Vec<MotionClip> = (0..2)
            .map(|i| gen_synthetic(SynthKind::Hop, &SynthParams { subject_id: format!("S{i}"), ..p.clone() }, seed + i).unwrap().0)
            .collect();
        let base = calibrate(&clips, &GainGrid::reference(), &g(), SimMode::ClosedLoop).unwrap();
        let grid = GainGrid::reference().with_cell(PDGains { kp, kd }).unwrap();
        let extended = calibrate(&clips, &grid, &g(), SimMode::ClosedLoop).unwrap();
        prop_assert!(extended.best_score().mean <= base.best_score().mean);
    }

    #[test]
    fn calibration_ignores_clip_order(seed in any::<u64>(), rotate in 1usize..5) {
        let mut clips: Vec<MotionClip> = (0..5u64)
            .map(|i| {
                let p = SynthParams { subject_id: format!("S{}", i % 3), duration: 1.0, hop_freq: 1.5 + 0.2 * i as f64, ..Default::default() };
                gen_synthetic(SynthKind::Hop, &p, seed.wrapping_add(i)).unwrap().0
            })
            .collect();
        let a = calibrate(&clips, &GainGrid::reference(), &g(), SimMode::ClosedLoop).unwrap();
        clips.rotate_left(rotate);
        clips.swap(0, 1);
        let b = calibrate(&clips, &GainGrid::reference(), &g(), SimMode::ClosedLoop).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
