//! The four probe controllers and their fusion: image-based visual servoing
//! of landmark errors, laser-based surface-normal PD alignment, contact-force
//! regulation, and the fixed slot structure that merges them into one probe
//! twist.

use nalgebra::{Matrix3x6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afm::VisualError;
use crate::kinematics::{Frame, Twist};
use crate::perception::LandmarkClass;

#[derive(Debug, Error, PartialEq)]
pub enum ServoError {
    #[error("laser sensor returned no echo; orientation control must hold")]
    SensorFault,
    #[error("invalid gains: {0}")]
    InvalidGains(&'static str),
}

/// Which in-plane components the visual servo is allowed to drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InPlaneMask {
    pub vx: bool,
    pub vz: bool,
    pub wy: bool,
}

impl Default for InPlaneMask {
    fn default() -> Self {
        Self { vx: true, vz: true, wy: true }
    }
}

/// Visual-servo gains: one decay rate, per-class priority weights, and the
/// pixel threshold that declares the plane reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IbvsGains {
    /// Error decay rate, 1/s.
    pub lambda: f64,
    pub gamma_pl: f64,
    pub gamma_rs: f64,
    /// Descriptor distance below which servoing terminates, px.
    pub termination_threshold_px: f64,
    pub mask: InPlaneMask,
}

impl Default for IbvsGains {
    fn default() -> Self {
        Self {
            lambda: 1.5,
            gamma_pl: 0.7,
            gamma_rs: 0.3,
            termination_threshold_px: 2.0,
            mask: InPlaneMask::default(),
        }
    }
}

impl IbvsGains {
    pub fn validate(&self) -> Result<(), ServoError> {
        if !(self.lambda > 0.0) {
            return Err(ServoError::InvalidGains("lambda must be positive"));
        }
        // The pleural line is the primary diagnostic cue; it must dominate.
        if !(self.gamma_pl > self.gamma_rs && self.gamma_rs > 0.0) {
            return Err(ServoError::InvalidGains("need gamma_pl > gamma_rs > 0"));
        }
        if !(self.termination_threshold_px >= 0.0) {
            return Err(ServoError::InvalidGains("termination threshold must be ≥ 0"));
        }
        Ok(())
    }

    pub fn gamma(&self, class: LandmarkClass) -> f64 {
        match class {
            LandmarkClass::PleuralLine => self.gamma_pl,
            LandmarkClass::RibShadow => self.gamma_rs,
        }
    }
}

/// Surface-normal PD gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalPdGains {
    /// rad/s per meter of opposing-beam difference.
    pub kpn: f64,
    /// rad/s per meter/second of difference rate.
    pub kdn: f64,
    /// Exponential smoothing of the derivative term, 0 = raw backward
    /// difference.
    pub derivative_smoothing: f64,
}

impl Default for NormalPdGains {
    fn default() -> Self {
        Self { kpn: 25.0, kdn: 0.5, derivative_smoothing: 0.0 }
    }
}

impl NormalPdGains {
    pub fn validate(&self) -> Result<(), ServoError> {
        if !(self.kpn > 0.0) || !(self.kdn >= 0.0) {
            return Err(ServoError::InvalidGains("need kpn > 0 and kdn ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.derivative_smoothing) {
            return Err(ServoError::InvalidGains("derivative smoothing must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Contact-force regulator gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceGains {
    /// m/s per newton of force error.
    pub kpf: f64,
    /// Velocity smoothing weight in [0, 1]; 1 = no smoothing.
    pub w: f64,
    /// Force setpoint, N.
    pub desired: f64,
}

impl Default for ForceGains {
    fn default() -> Self {
        Self { kpf: 0.01, w: 0.5, desired: 3.5 }
    }
}

impl ForceGains {
    pub fn validate(&self) -> Result<(), ServoError> {
        if !(self.kpf > 0.0) {
            return Err(ServoError::InvalidGains("kpf must be positive"));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(ServoError::InvalidGains("smoothing weight must be in [0, 1]"));
        }
        if !(self.desired >= 0.0) {
            return Err(ServoError::InvalidGains("desired force must be ≥ 0"));
        }
        Ok(())
    }
}

/// One sample of the four-beam laser ring; `None` marks an out-of-range
/// sentinel. Beams 1/3 oppose along probe y, beams 2/4 along probe x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserReadings {
    pub d: [Option<f64>; 4],
    pub timestamp: f64,
}

impl LaserReadings {
    pub fn valid(&self) -> Option<[f64; 4]> {
        Some([self.d[0]?, self.d[1]?, self.d[2]?, self.d[3]?])
    }
}

/// The point-feature interaction matrix: maps a probe twist to the velocity
/// of an image feature located at `e` in the probe frame.
pub fn interaction_matrix(e: &Vector3<f64>) -> Matrix3x6<f64> {
    Matrix3x6::new(
        -1.0, 0.0, 0.0, 0.0, -e.z, e.y, //
        0.0, -1.0, 0.0, e.z, 0.0, -e.x, //
        0.0, 0.0, -1.0, -e.y, e.x, 0.0,
    )
}

/// Per-class visual error with its descriptor separation in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbvsInput {
    pub error: VisualError,
    pub pixel_distance: f64,
}

/// Outcome of one visual-servo evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum IbvsOutcome {
    Command(Twist),
    /// All class descriptors are within the termination threshold.
    Converged,
    /// No landmark class was detected; the caller should hold its last
    /// command.
    NoDetection,
}

/// Computes the in-plane servo twist: per class, the minimum-norm twist that
/// imposes exponential decay on that class error, combined with the priority
/// weights and masked to the in-plane components {v_x, v_z, ω_y}.
pub fn ibvs_command(inputs: &[IbvsInput], gains: &IbvsGains) -> IbvsOutcome {
    if inputs.is_empty() {
        return IbvsOutcome::NoDetection;
    }
    let worst = inputs.iter().map(|i| i.pixel_distance).fold(0.0, f64::max);
    if worst < gains.termination_threshold_px {
        return IbvsOutcome::Converged;
    }
    let mut u = Vector6::zeros();
    for input in inputs {
        let l = interaction_matrix(&input.error.e);
        // Minimum-norm solution of L·u = −λe; L has full row rank because
        // its first three columns are −I.
        let gram = (l * l.transpose()).try_inverse().expect("L·Lᵀ is positive definite");
        let ui = l.transpose() * (gram * (-gains.lambda * input.error.e));
        u += gains.gamma(input.error.class) * ui;
    }
    let keep = [gains.mask.vx, false, gains.mask.vz, false, gains.mask.wy, false];
    for (i, keep_i) in keep.iter().enumerate() {
        if !keep_i {
            u[i] = 0.0;
        }
    }
    IbvsOutcome::Command(Twist {
        linear: Vector3::new(u[0], u[1], u[2]),
        angular: Vector3::new(u[3], u[4], u[5]),
        frame: Frame::Probe,
    })
}

/// One normal-PD step on valid beam distances: opposing-beam differences
/// drive tilt rates about the in-image and out-of-image axes.
pub fn normal_pd(
    readings: &[f64; 4],
    prev: &[f64; 4],
    gains: &NormalPdGains,
    dt: f64,
) -> (f64, f64) {
    let e13 = readings[2] - readings[0];
    let e24 = readings[3] - readings[1];
    let de13 = (e13 - (prev[2] - prev[0])) / dt;
    let de24 = (e24 - (prev[3] - prev[1])) / dt;
    (gains.kpn * e13 + gains.kdn * de13, gains.kpn * e24 + gains.kdn * de24)
}

/// Stateful normal-PD controller holding one step of beam history and the
/// smoothed derivative.
#[derive(Debug, Clone)]
pub struct NormalPd {
    gains: NormalPdGains,
    prev: Option<[f64; 4]>,
    smoothed_de: (f64, f64),
}

impl NormalPd {
    pub fn new(gains: NormalPdGains) -> Self {
        Self { gains, prev: None, smoothed_de: (0.0, 0.0) }
    }

    /// Returns (ω_x, ω_y); a sentinel beam is a sensor fault and leaves the
    /// internal state untouched so control can resume after the dropout.
    pub fn step(&mut self, readings: &LaserReadings, dt: f64) -> Result<(f64, f64), ServoError> {
        let d = readings.valid().ok_or(ServoError::SensorFault)?;
        let prev = self.prev.unwrap_or(d);
        let e13 = d[2] - d[0];
        let e24 = d[3] - d[1];
        let raw = ((e13 - (prev[2] - prev[0])) / dt, (e24 - (prev[3] - prev[1])) / dt);
        let s = self.gains.derivative_smoothing;
        self.smoothed_de = (
            (1.0 - s) * raw.0 + s * self.smoothed_de.0,
            (1.0 - s) * raw.1 + s * self.smoothed_de.1,
        );
        self.prev = Some(d);
        Ok((
            self.gains.kpn * e13 + self.gains.kdn * self.smoothed_de.0,
            self.gains.kpn * e24 + self.gains.kdn * self.smoothed_de.1,
        ))
    }
}

/// One force-regulation step: proportional correction toward the setpoint,
/// exponentially smoothed against the previous command. Positive output
/// presses the probe toward the surface (+z).
pub fn force_control(f_z: f64, prev_v: f64, gains: &ForceGains) -> f64 {
    gains.w * gains.kpf * (gains.desired - f_z) + (1.0 - gains.w) * prev_v
}

/// Stateful force regulator carrying the previous velocity command.
#[derive(Debug, Clone)]
pub struct ForceRegulator {
    gains: ForceGains,
    v: f64,
}

impl ForceRegulator {
    pub fn new(gains: ForceGains) -> Self {
        Self { gains, v: 0.0 }
    }

    pub fn step(&mut self, f_z: f64) -> f64 {
        self.v = force_control(f_z, self.v, &self.gains);
        self.v
    }
}

/// Fused probe command with every contribution retained for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct ServoCommand {
    pub fused: Twist,
    pub ibvs: Twist,
    pub normal_wx: f64,
    pub normal_wy: f64,
    pub force_vz: f64,
}

/// Merges the controllers into their fixed twist slots: visual servoing
/// drives v_x and shares v_z with the force loop and ω_y with the normal
/// alignment; v_y and ω_z are never commanded.
pub fn fuse(normal_wx: f64, normal_wy: f64, ibvs: &Twist, force_vz: f64) -> ServoCommand {
    debug_assert_eq!(ibvs.frame, Frame::Probe);
    let fused = Twist {
        linear: Vector3::new(ibvs.linear.x, 0.0, ibvs.linear.z + force_vz),
        angular: Vector3::new(normal_wx, normal_wy + ibvs.angular.y, 0.0),
        frame: Frame::Probe,
    };
    ServoCommand { fused, ibvs: ibvs.clone(), normal_wx, normal_wy, force_vz }
}
