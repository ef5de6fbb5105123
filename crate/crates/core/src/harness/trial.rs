//! Closed-loop trial runner: captures the reference at the canonical plane,
//! applies the configured deviation, then runs the fixed-step control loop
//! (perception on a slower cadence with zero-order hold) until the duration
//! elapses or a safety abort fires. Deterministic for a fixed seed.

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afm::{build_template, match_landmarks, visual_error, AfmError, Template};
use crate::kinematics::{
    compose_pose, integrate_pose, joint_velocities, transform_twist, ArmModel, Frame, JointState,
    KinematicsError, Pose, Twist,
};
use crate::metrics::{mutual_information, ncc, pose_error, ssd, MetricsError, MI_BINS};
use crate::perception::{
    extract_instances, ClassicalSegmenter, LandmarkClass, NoisyOracleSegmenter, OracleSegmenter,
    Segmenter,
};
use crate::phantom::{render_from_masks, FrameData, PhantomError, PhantomModel, CONTACT_GAP_LIMIT};
use crate::raster::GrayImage;
use crate::servo::{
    fuse, ibvs_command, ForceRegulator, IbvsInput, IbvsOutcome, LaserReadings, NormalPd,
    ServoCommand, ServoError,
};

use super::scenario::{Axis, LaserRig, RigMode, Scenario, ScenarioError, SegmenterChoice};

/// A sensor fault persisting longer than this aborts the trial, s.
pub const SENSOR_FAULT_ABORT_S: f64 = 0.5;
/// Records at or after this time count as steady state for force statistics, s.
pub const STEADY_STATE_START_S: f64 = 1.0;

/// Joint posture from which the arm rig is mounted onto the start pose.
const ARM_NOMINAL_POSTURE: [f64; 7] = [0.3, 0.4, -0.2, 0.9, 0.2, 0.7, 0.1];

// Independent seed streams so reference render, per-frame render, segmenter
// noise, and respiration phase never share a generator.
const STREAM_REFERENCE: u64 = 0;
const STREAM_FRAME: u64 = 1;
const STREAM_SEGMENT: u64 = 2;
const STREAM_PHASE: u64 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Afm(#[from] AfmError),
    #[error(transparent)]
    Servo(#[from] ServoError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One control-step log entry. Perception-rate quantities hold their last
/// value between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub pose: Pose,
    pub err_mm: f64,
    pub err_deg: f64,
    pub force_n: f64,
    pub command: ServoCommand,
    pub pl_px: Option<f64>,
    pub rs_px: Option<f64>,
    pub ncc: f64,
    pub ssd: f64,
    /// Filled after the trial from the trial-wide SSD maximum.
    pub nssd: f64,
    pub mi: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AbortReason {
    /// The probe tip left the surface by more than the contact gap limit.
    LossOfContact { t: f64, gap_m: f64 },
    /// All four beams stayed out of range longer than the fault budget.
    SensorFault { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    /// The visual-servo termination latch fired; the loop kept regulating
    /// force and orientation until the duration elapsed.
    Converged { at_t: f64 },
    /// The duration elapsed without the latch firing.
    Completed,
    Aborted(AbortReason),
}

impl TrialStatus {
    pub fn converged_at(&self) -> Option<f64> {
        match self {
            TrialStatus::Converged { at_t } => Some(*at_t),
            _ => None,
        }
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self, TrialStatus::Aborted(_))
    }
}

/// Complete record of one trial.
#[derive(Debug, Clone)]
pub struct TrialLog {
    pub seed: u64,
    pub status: TrialStatus,
    pub records: Vec<StepRecord>,
    pub template: Template,
    pub reference_pose: Pose,
    /// Largest per-frame SSD observed; the NSSD normalizer.
    pub max_ssd: f64,
    /// (control step, image) pairs, captured only when frame dumping is on.
    pub frames: Vec<(usize, GrayImage)>,
}

/// Splitmix-style mix of (seed, stream, index) into an independent RNG seed.
fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Samples the four ring beams: each fires from its mount point along the
/// probe axis and reports the distance to the skin, or None out of range.
pub fn laser_readings(
    phantom: &PhantomModel,
    pose: &Pose,
    rig: &LaserRig,
    t: f64,
) -> LaserReadings {
    let (r, h) = (rig.ring_radius, rig.ring_height);
    // Beams 1/3 oppose along probe y, beams 2/4 along probe x.
    let mounts = [
        Vector3::new(0.0, -r, -h),
        Vector3::new(r, 0.0, -h),
        Vector3::new(0.0, r, -h),
        Vector3::new(-r, 0.0, -h),
    ];
    let direction = pose.rotation.column(2).into_owned();
    let mut d = [None; 4];
    for (i, m) in mounts.iter().enumerate() {
        let origin = pose.translation + pose.rotation * m;
        d[i] = phantom.ray_cast(&origin, &direction, t, rig.max_range);
    }
    LaserReadings { d, timestamp: t }
}

/// Twist execution backend; both variants cache the current probe pose.
enum Rig {
    Direct { pose: Pose },
    Arm { model: ArmModel, state: JointState, damping: f64, pose: Pose },
}

impl Rig {
    fn new(scenario: &Scenario, start: &Pose) -> Result<Self, HarnessError> {
        Ok(match scenario.rig {
            RigMode::Direct => Rig::Direct { pose: start.clone() },
            RigMode::Arm => {
                let mut model = ArmModel::default_seven_dof();
                let state = JointState { q: DVector::from_row_slice(&ARM_NOMINAL_POSTURE) };
                // Mount the base so the nominal posture lands on the start
                // pose exactly: mount = start ∘ fk_nominal⁻¹.
                let nominal = model.probe_pose(&state);
                let mount = compose_pose(&nominal.inverse(), start)?;
                model.mount_rotation = mount.rotation;
                model.mount_translation = mount.translation;
                let pose = model.probe_pose(&state);
                Rig::Arm { model, state, damping: scenario.arm_damping, pose }
            }
        })
    }

    fn pose(&self) -> &Pose {
        match self {
            Rig::Direct { pose } | Rig::Arm { pose, .. } => pose,
        }
    }

    fn step(&mut self, base_twist: &Twist, dt: f64) -> Result<(), HarnessError> {
        match self {
            Rig::Direct { pose } => *pose = integrate_pose(pose, base_twist, dt)?,
            Rig::Arm { model, state, damping, pose } => {
                let jacobian = model.geometric_jacobian(state);
                let qdot = joint_velocities(&jacobian, base_twist, *damping)?;
                state.q += qdot * dt;
                *pose = model.probe_pose(state);
            }
        }
        Ok(())
    }
}

fn make_segmenter(scenario: &Scenario) -> Box<dyn Segmenter> {
    match scenario.segmenter {
        SegmenterChoice::Oracle => Box::new(OracleSegmenter),
        SegmenterChoice::OracleNoise { flip_probability } => {
            Box::new(NoisyOracleSegmenter { flip_probability })
        }
        SegmenterChoice::Classical => Box::new(ClassicalSegmenter::new(&scenario.image)),
    }
}

/// Runs one closed-loop trial. `seed` fixes every stochastic element (frame
/// noise, segmenter damage, respiration phase); identical inputs produce
/// identical logs. Aborts are reported in the status, not as errors.
pub fn run_trial(
    scenario: &Scenario,
    seed: u64,
    dump_frames: bool,
) -> Result<TrialLog, HarnessError> {
    scenario.validate()?;
    let spec = scenario.image;
    let mut phantom = PhantomModel::new(scenario.phantom.clone())?;
    if scenario.respiration {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_PHASE, 0));
        phantom = phantom.with_respiration(rng.gen_range(0.0..std::f64::consts::TAU));
    }

    // Reference capture at the canonical plane.
    let reference_pose = phantom.sip_pose_at(0.0);
    let reference_truth = phantom.ground_truth_masks(&reference_pose, &spec, 0.0)?;
    let reference_image = render_from_masks(&reference_truth, derive_seed(seed, STREAM_REFERENCE, 0));
    let template = build_template(&reference_truth, &spec, scenario.min_instance_area)?;

    // Deviate from the plane, then navigate back.
    let mut start = reference_pose.clone();
    match scenario.offset.axis {
        Axis::X => start.translation.x += scenario.offset.meters,
        Axis::Y => start.translation.y += scenario.offset.meters,
        Axis::Z => start.translation.z += scenario.offset.meters,
    }
    let mut rig = Rig::new(scenario, &start)?;
    let segmenter = make_segmenter(scenario);
    let mut normal_pd = NormalPd::new(scenario.normal);
    let mut force_reg = ForceRegulator::new(scenario.force);

    let dt = 1.0 / scenario.control_rate_hz;
    let steps = (scenario.duration_s * scenario.control_rate_hz).round() as usize;
    let stride = ((scenario.control_rate_hz / scenario.perception_rate_hz).floor() as usize).max(1);

    let mut records: Vec<StepRecord> = Vec::with_capacity(steps);
    let mut frames = Vec::new();
    let mut held_ibvs = Twist::zero(Frame::Probe);
    let mut held_normal = (0.0, 0.0);
    let mut latest_px: (Option<f64>, Option<f64>) = (None, None);
    let mut similarity = (0.0, 0.0, 0.0);
    let mut converged_at: Option<f64> = None;
    let mut fault_since: Option<f64> = None;
    let mut abort: Option<AbortReason> = None;
    let mut frame_index = 0u64;

    for k in 0..steps {
        let t = k as f64 * dt;
        let pose = rig.pose().clone();

        // Contact watchdog.
        let gap = -phantom.penetration(&pose, t);
        if gap > CONTACT_GAP_LIMIT {
            abort = Some(AbortReason::LossOfContact { t, gap_m: gap });
            break;
        }
        let force = phantom.contact_force(&pose, t);

        // Perception cadence: render, segment, match, and re-evaluate the
        // visual servo; everything holds between updates.
        if k % stride == 0 {
            let truth = phantom.ground_truth_masks(&pose, &spec, t)?;
            let image = render_from_masks(&truth, derive_seed(seed, STREAM_FRAME, frame_index));
            let frame = FrameData { image, t };
            let mask = segmenter.segment(&frame, &truth, derive_seed(seed, STREAM_SEGMENT, frame_index));
            let instances = extract_instances(&mask, scenario.min_instance_area);
            let pairings = match_landmarks(&template, &instances)?;

            latest_px = (None, None);
            let mut inputs = Vec::with_capacity(pairings.len());
            for pairing in &pairings {
                let distance = pairing.pixel_distance();
                match pairing.class {
                    LandmarkClass::PleuralLine => latest_px.0 = Some(distance),
                    LandmarkClass::RibShadow => latest_px.1 = Some(distance),
                }
                inputs.push(IbvsInput { error: visual_error(pairing, &spec), pixel_distance: distance });
            }
            if scenario.enable_ibvs && converged_at.is_none() {
                match ibvs_command(&inputs, &scenario.ibvs) {
                    IbvsOutcome::Command(twist) => held_ibvs = twist,
                    // The latch is permanent: in-plane servoing stops.
                    IbvsOutcome::Converged => {
                        converged_at = Some(t);
                        held_ibvs = Twist::zero(Frame::Probe);
                    }
                    // Zero-order hold of the previous command.
                    IbvsOutcome::NoDetection => {}
                }
            }
            similarity = (
                ncc(&frame.image, &reference_image)?,
                ssd(&frame.image, &reference_image)?,
                mutual_information(&frame.image, &reference_image, MI_BINS)?,
            );
            if dump_frames {
                frames.push((k, frame.image.clone()));
            }
            frame_index += 1;
        }

        // Orientation and force loops run every control step.
        let mut normal = (0.0, 0.0);
        if scenario.enable_normal {
            match normal_pd.step(&laser_readings(&phantom, &pose, &scenario.laser, t), dt) {
                Ok(command) => {
                    held_normal = command;
                    fault_since = None;
                }
                Err(ServoError::SensorFault) => {
                    let since = *fault_since.get_or_insert(t);
                    if t - since > SENSOR_FAULT_ABORT_S {
                        abort = Some(AbortReason::SensorFault { t });
                        break;
                    }
                    // Hold the last orientation command through the dropout.
                }
                Err(e) => return Err(e.into()),
            }
            normal = held_normal;
        }
        let force_vz = if scenario.enable_force { force_reg.step(force) } else { 0.0 };
        let ibvs_twist =
            if scenario.enable_ibvs { held_ibvs.clone() } else { Twist::zero(Frame::Probe) };
        let command = fuse(normal.0, normal.1, &ibvs_twist, force_vz);

        let (err_mm, err_deg) = pose_error(&pose, &reference_pose)?;
        records.push(StepRecord {
            t,
            pose: pose.clone(),
            err_mm,
            err_deg,
            force_n: force,
            command: command.clone(),
            pl_px: latest_px.0,
            rs_px: latest_px.1,
            ncc: similarity.0,
            ssd: similarity.1,
            nssd: 0.0,
            mi: similarity.2,
            converged: converged_at.is_some(),
        });

        let base_twist = transform_twist(&command.fused, &pose)?;
        rig.step(&base_twist, dt)?;
    }

    // NSSD normalizes against the worst frame of this trial.
    let max_ssd = records.iter().map(|r| r.ssd).fold(0.0, f64::max);
    for record in &mut records {
        record.nssd = if max_ssd > 0.0 { 1.0 - record.ssd / max_ssd } else { 1.0 };
    }

    let status = match abort {
        Some(reason) => TrialStatus::Aborted(reason),
        None => match converged_at {
            Some(at_t) => TrialStatus::Converged { at_t },
            None => TrialStatus::Completed,
        },
    };
    Ok(TrialLog { seed, status, records, template, reference_pose, max_ssd, frames })
}

/// Mean and population standard deviation (zero for a single sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(Stat { mean, std: var.sqrt() })
}

/// First-to-last trend of one similarity measure, averaged over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTrend {
    pub initial_mean: f64,
    pub final_mean: f64,
    /// None when the initial mean is too close to zero to normalize.
    pub improvement_pct: Option<f64>,
}

fn trend(initial: &[f64], fin: &[f64]) -> Option<MetricTrend> {
    let initial_mean = stat(initial)?.mean;
    let final_mean = stat(fin)?.mean;
    let improvement_pct = (initial_mean.abs() > 1e-12)
        .then(|| (final_mean - initial_mean) / initial_mean.abs() * 100.0);
    Some(MetricTrend { initial_mean, final_mean, improvement_pct })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTrend {
    pub ncc: MetricTrend,
    pub nssd: MetricTrend,
    pub mi: MetricTrend,
}

/// One row per trial in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDigest {
    pub seed: u64,
    pub status: String,
    pub converged_at_s: Option<f64>,
    pub final_err_mm: Option<f64>,
    pub final_err_deg: Option<f64>,
    pub force_rms_n: Option<f64>,
}

/// Aggregate statistics over a sweep. Aborted trials appear in `trials` and
/// the abort counter but are excluded from every statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub repeats: usize,
    pub aborted: usize,
    pub converged: usize,
    pub final_err_mm: Option<Stat>,
    pub final_err_deg: Option<Stat>,
    /// RMS deviation from the force setpoint over the steady-state window.
    pub force_rms_n: Option<Stat>,
    pub time_to_convergence_s: Option<Stat>,
    pub similarity: Option<SimilarityTrend>,
    pub trials: Vec<TrialDigest>,
}

fn force_rms(log: &TrialLog, setpoint: f64) -> Option<f64> {
    let steady: Vec<f64> = log
        .records
        .iter()
        .filter(|r| r.t >= STEADY_STATE_START_S)
        .map(|r| (r.force_n - setpoint) * (r.force_n - setpoint))
        .collect();
    (!steady.is_empty()).then(|| (steady.iter().sum::<f64>() / steady.len() as f64).sqrt())
}

impl SummaryReport {
    pub fn from_trials(trials: &[TrialLog], scenario: &Scenario) -> Self {
        let kept: Vec<&TrialLog> =
            trials.iter().filter(|t| !t.status.is_aborted() && !t.records.is_empty()).collect();
        let finals: Vec<&StepRecord> = kept.iter().map(|t| t.records.last().unwrap()).collect();
        let firsts: Vec<&StepRecord> = kept.iter().map(|t| &t.records[0]).collect();
        let rms: Vec<f64> =
            kept.iter().filter_map(|t| force_rms(t, scenario.force.desired)).collect();
        let convergence: Vec<f64> =
            kept.iter().filter_map(|t| t.status.converged_at()).collect();

        let digests = trials
            .iter()
            .map(|log| {
                let final_record =
                    (!log.status.is_aborted()).then(|| log.records.last()).flatten();
                TrialDigest {
                    seed: log.seed,
                    status: match &log.status {
                        TrialStatus::Converged { .. } => "converged".into(),
                        TrialStatus::Completed => "completed".into(),
                        TrialStatus::Aborted(AbortReason::LossOfContact { .. }) => {
                            "aborted_loss_of_contact".into()
                        }
                        TrialStatus::Aborted(AbortReason::SensorFault { .. }) => {
                            "aborted_sensor_fault".into()
                        }
                    },
                    converged_at_s: log.status.converged_at(),
                    final_err_mm: final_record.map(|r| r.err_mm),
                    final_err_deg: final_record.map(|r| r.err_deg),
                    force_rms_n: (!log.status.is_aborted())
                        .then(|| force_rms(log, scenario.force.desired))
                        .flatten(),
                }
            })
            .collect();

        let collect = |f: &dyn Fn(&StepRecord) -> f64, set: &[&StepRecord]| -> Vec<f64> {
            set.iter().map(|r| f(r)).collect()
        };
        SummaryReport {
            repeats: trials.len(),
            aborted: trials.len() - kept.len(),
            converged: convergence.len(),
            final_err_mm: stat(&collect(&|r| r.err_mm, &finals)),
            final_err_deg: stat(&collect(&|r| r.err_deg, &finals)),
            force_rms_n: stat(&rms),
            time_to_convergence_s: stat(&convergence),
            similarity: (|| {
                Some(SimilarityTrend {
                    ncc: trend(&collect(&|r| r.ncc, &firsts), &collect(&|r| r.ncc, &finals))?,
                    nssd: trend(&collect(&|r| r.nssd, &firsts), &collect(&|r| r.nssd, &finals))?,
                    mi: trend(&collect(&|r| r.mi, &firsts), &collect(&|r| r.mi, &finals))?,
                })
            })(),
            trials: digests,
        }
    }
}

/// A sweep's raw logs plus their aggregate statistics.
pub struct SweepOutcome {
    pub trials: Vec<TrialLog>,
    pub summary: SummaryReport,
}

/// Runs `scenario.repeats` trials with seeds `seed + 0..repeats`, mirroring
/// repeated physical re-placement with seed-driven variation.
pub fn run_sweep(scenario: &Scenario, dump_frames: bool) -> Result<SweepOutcome, HarnessError> {
    scenario.validate()?;
    let mut trials = Vec::with_capacity(scenario.repeats);
    for i in 0..scenario.repeats {
        trials.push(run_trial(scenario, scenario.seed.wrapping_add(i as u64), dump_frames)?);
    }
    let summary = SummaryReport::from_trials(&trials, scenario);
    Ok(SweepOutcome { trials, summary })
}
