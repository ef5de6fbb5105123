//! Hot-path timings: image synthesis, the perception stack, the arm
//! kinematics, and the end-to-end closed-loop step.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::{DVector, Vector3};
use sipservo_bench::short_scenario;
use sipservo_core::afm::{build_template, match_landmarks};
use sipservo_core::harness::run_trial;
use sipservo_core::kinematics::joint_velocities;
use sipservo_core::perception::{extract_instances, NoisyOracleSegmenter};
use sipservo_core::phantom::render_from_masks;
use sipservo_core::{
    ArmModel, Frame, FrameData, ImageSpec, JointState, PhantomModel, PhantomParams, Segmenter,
    Twist,
};

fn bench_phantom(c: &mut Criterion) {
    let phantom = PhantomModel::new(PhantomParams::default()).unwrap();
    let spec = ImageSpec::default();
    let pose = phantom.sip_pose().clone();
    let truth = phantom.ground_truth_masks(&pose, &spec, 0.0).unwrap();
    c.bench_function("ground_truth_masks_256", |b| {
        b.iter(|| phantom.ground_truth_masks(black_box(&pose), &spec, 0.0).unwrap())
    });
    c.bench_function("render_from_masks_256", |b| {
        b.iter(|| render_from_masks(black_box(&truth), 42))
    });
}

fn bench_perception(c: &mut Criterion) {
    let phantom = PhantomModel::new(PhantomParams::default()).unwrap();
    let spec = ImageSpec::default();
    let truth = phantom.ground_truth_masks(phantom.sip_pose(), &spec, 0.0).unwrap();
    let frame = FrameData { image: render_from_masks(&truth, 42), t: 0.0 };
    let segmenter = NoisyOracleSegmenter::default();
    let template = build_template(&truth, &spec, 20).unwrap();
    c.bench_function("segment_extract_match_256", |b| {
        b.iter(|| {
            let mask = segmenter.segment(black_box(&frame), &truth, 7);
            let instances = extract_instances(&mask, 20);
            match_landmarks(&template, &instances).unwrap()
        })
    });
}

fn bench_kinematics(c: &mut Criterion) {
    let arm = ArmModel::default_seven_dof();
    let state = JointState { q: DVector::from_row_slice(&[0.3, 0.4, -0.2, 0.9, 0.2, 0.7, 0.1]) };
    let twist = Twist {
        linear: Vector3::new(0.01, 0.0, 0.002),
        angular: Vector3::new(0.0, 0.02, 0.0),
        frame: Frame::Base,
    };
    c.bench_function("jacobian_and_damped_inverse_7dof", |b| {
        b.iter(|| {
            let j = arm.geometric_jacobian(black_box(&state));
            joint_velocities(&j, &twist, 1e-3).unwrap()
        })
    });
}

fn bench_closed_loop(c: &mut Criterion) {
    let scenario = short_scenario(40);
    c.bench_function("run_trial_40_steps", |b| {
        b.iter(|| run_trial(black_box(&scenario), 42, false).unwrap())
    });
}

criterion_group!(pipeline, bench_phantom, bench_perception, bench_kinematics);
criterion_group! {
    name = closed_loop;
    config = Criterion::default().sample_size(10);
    targets = bench_closed_loop
}
criterion_main!(pipeline, closed_loop);
