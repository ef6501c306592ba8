//! Shared fixtures for the criterion benches.

use physgrd_core::{
    gen_synthetic, synthetic_dataset, DatasetSpec, MotionClip, NetShape, Sample, SynthKind,
    SynthParams, TemporalConvNet, Vec3,
};

/// One hop clip of `seconds` at 100 Hz.
pub fn hop_clip(seconds: f64) -> MotionClip {
    let params = SynthParams {
        duration: seconds,
        ..Default::default()
    };
    gen_synthetic(SynthKind::Hop, &params, 1).expect("valid params").0
}

/// Hop clips from `subjects` varied subjects.
pub fn hop_clips(subjects: usize, seconds: f64) -> Vec<MotionClip> {
    let spec = DatasetSpec {
        subjects,
        base: SynthParams {
            duration: seconds,
            ..Default::default()
        },
        vary_subjects: true,
        ..Default::default()
    };
    synthetic_dataset(&spec, 7).expect("valid spec").clips()
}

/// A network of the given widths with a matching input sample of `len` frames.
pub fn net_and_sample(conv_width: usize, fc_hidden: [usize; 2], len: usize) -> (TemporalConvNet, Sample) {
    let shape = NetShape {
        input_width: 7,
        conv_width,
        fc_hidden,
    };
    let net = TemporalConvNet::new(&shape, 3).expect("valid shape");
    let features = (0..len * shape.input_width).map(|i| ((i as f64) * 0.37).sin()).collect();
    let plate = (0..len)
        .map(|t| {
            let z = 0.5 + 0.4 * (t as f64 * 0.1).sin();
            Some([Vec3::new(0.0, 0.0, z), Vec3::new(0.0, 0.0, 1.0 - z)])
        })
        .collect();
    let phys = vec![Vec3::new(0.0, 0.0, 1.0); len];
    let sample = Sample::new(features, len, plate, phys).expect("consistent sample");
    (net, sample)
}
