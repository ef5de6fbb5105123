//! Rigid-body poses, twists, and a serial revolute arm: frame-tagged pose
//! composition, probe→base twist transformation, fixed-step pose integration,
//! geometric Jacobian, and damped least-squares joint-velocity resolution.
//!
//! Conventions: a `Pose` maps point coordinates from its `from` frame into
//! its `to` frame (`x_to = R·x_from + t`). Twists stack `[linear; angular]`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

/// Maximum allowed integration step, s. Control loops here run at ≥ 100 Hz;
/// a larger step invalidates the first-order update.
pub const MAX_TIME_STEP: f64 = 0.01;

/// Rotation drift tolerance: beyond this, `compose` re-projects onto SO(3).
const ORTHONORMALITY_DRIFT: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("frame mismatch: expected {expected:?}, found {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },
    #[error("rotation matrix is not orthonormal (drift {0:.3e})")]
    NonOrthonormal(f64),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("time step {0} outside (0, {MAX_TIME_STEP}] s")]
    InvalidTimeStep(f64),
    #[error("J·Jᵀ is singular and damping is zero")]
    Singular,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
}

/// Coordinate frames tracked by the pose algebra.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// World/robot base frame (phantom frame in simulation).
    Base,
    /// Arm flange (tool mount) frame.
    Flange,
    /// Probe frame: x lateral (image u), z axial into tissue (image v).
    Probe,
}

/// Rigid transform with frame tags: `x_to = rotation·x_from + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    /// Origin of the `from` frame expressed in the `to` frame, m.
    pub translation: Vector3<f64>,
    pub from: Frame,
    pub to: Frame,
}

impl Pose {
    /// Validates orthonormality (within 1e-9) and a positive determinant.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        from: Frame,
        to: Frame,
    ) -> Result<Self, KinematicsError> {
        if !rotation.iter().all(|x| x.is_finite()) || !translation.iter().all(|x| x.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        let drift = orthonormality_drift(&rotation);
        if drift > ORTHONORMALITY_DRIFT || rotation.determinant() < 0.0 {
            return Err(KinematicsError::NonOrthonormal(drift));
        }
        Ok(Self { rotation, translation, from, to })
    }

    /// Identity transform between two aligned frames.
    pub fn identity(from: Frame, to: Frame) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), from, to }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -rt * self.translation, from: self.to, to: self.from }
    }

    /// Maps a point from the `from` frame into the `to` frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Spatial velocity `[linear; angular]` expressed in `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    /// m/s.
    pub linear: Vector3<f64>,
    /// rad/s.
    pub angular: Vector3<f64>,
    pub frame: Frame,
}

impl Twist {
    pub fn zero(frame: Frame) -> Self {
        Self { linear: Vector3::zeros(), angular: Vector3::zeros(), frame }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().all(|x| x.is_finite()) && self.angular.iter().all(|x| x.is_finite())
    }

    /// Stacked 6-vector `[v; ω]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x, self.linear.y, self.linear.z,
            self.angular.x, self.angular.y, self.angular.z,
        )
    }
}

/// Composes two transforms: apply `a` first, then `b`.
///
/// Requires `a.to == b.from`; the result maps `a.from` → `b.to`. The product
/// rotation is re-projected onto SO(3) if accumulated drift exceeds 1e-9.
pub fn compose_pose(a: &Pose, b: &Pose) -> Result<Pose, KinematicsError> {
    if a.to != b.from {
        return Err(KinematicsError::FrameMismatch { expected: a.to, found: b.from });
    }
    let mut rotation = b.rotation * a.rotation;
    if orthonormality_drift(&rotation) > ORTHONORMALITY_DRIFT {
        rotation = nearest_rotation(&rotation);
    }
    let translation = b.rotation * a.translation + b.translation;
    Ok(Pose { rotation, translation, from: a.from, to: b.to })
}

/// Re-expresses a twist through the pose `x` (typically probe → base):
/// `v' = R·v + p × ω`, `ω' = R·ω`.
pub fn transform_twist(t: &Twist, x: &Pose) -> Result<Twist, KinematicsError> {
    if t.frame != x.from {
        return Err(KinematicsError::FrameMismatch { expected: x.from, found: t.frame });
    }
    if !t.is_finite() {
        return Err(KinematicsError::NonFinite);
    }
    Ok(Twist {
        linear: x.rotation * t.linear + x.translation.cross(&t.angular),
        angular: x.rotation * t.angular,
        frame: x.to,
    })
}

/// First-order pose update under a twist expressed in the pose's `to` frame:
/// `p += v·dt`, rotation advanced by the small rotation `ω·dt` and
/// re-projected onto SO(3).
pub fn integrate_pose(pose: &Pose, t: &Twist, dt: f64) -> Result<Pose, KinematicsError> {
    if !(dt > 0.0 && dt <= MAX_TIME_STEP) {
        return Err(KinematicsError::InvalidTimeStep(dt));
    }
    if t.frame != pose.to {
        return Err(KinematicsError::FrameMismatch { expected: pose.to, found: t.frame });
    }
    if !t.is_finite() {
        return Err(KinematicsError::NonFinite);
    }
    let rotation = nearest_rotation(&(rotation_about(&(t.angular * dt)) * pose.rotation));
    Ok(Pose {
        rotation,
        translation: pose.translation + t.linear * dt,
        from: pose.from,
        to: pose.to,
    })
}

/// One revolute joint of a serial chain.
#[derive(Debug, Clone)]
pub struct RevoluteJoint {
    /// Joint origin, translation from the parent joint frame, m.
    pub origin: Vector3<f64>,
    /// Unit rotation axis in the local (parent-aligned) frame.
    pub axis: Vector3<f64>,
}

/// Serial revolute arm with a fixed flange-to-probe transform.
#[derive(Debug, Clone)]
pub struct ArmModel {
    pub joints: Vec<RevoluteJoint>,
    /// Flange origin, translation from the last joint frame, m.
    pub flange_offset: Vector3<f64>,
    /// Fixed probe mounting: rotation and translation of the probe frame in
    /// the flange frame.
    pub probe_rotation: Matrix3<f64>,
    /// m.
    pub probe_translation: Vector3<f64>,
    /// Placement of the chain root in the base frame (identity by default);
    /// lets a trial position the arm so a nominal posture reaches the scene.
    pub mount_rotation: Matrix3<f64>,
    pub mount_translation: Vector3<f64>,
}

/// Joint positions of a serial arm, rad.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
}

impl JointState {
    pub fn zeros(n: usize) -> Self {
        Self { q: DVector::zeros(n) }
    }
}

impl ArmModel {
    /// Seven-joint z/y alternating chain with a 10 cm probe standoff;
    /// desk-scale reach (~1 m).
    pub fn default_seven_dof() -> Self {
        let z = Vector3::z();
        let y = Vector3::y();
        let joint = |origin: Vector3<f64>, axis: Vector3<f64>| RevoluteJoint { origin, axis };
        Self {
            joints: vec![
                joint(Vector3::new(0.0, 0.0, 0.30), z),
                joint(Vector3::new(0.0, 0.0, 0.06), y),
                joint(Vector3::new(0.0, 0.0, 0.26), z),
                joint(Vector3::new(0.0, 0.0, 0.06), y),
                joint(Vector3::new(0.0, 0.0, 0.26), z),
                joint(Vector3::new(0.0, 0.0, 0.05), y),
                joint(Vector3::new(0.0, 0.0, 0.06), z),
            ],
            flange_offset: Vector3::new(0.0, 0.0, 0.04),
            probe_rotation: Matrix3::identity(),
            probe_translation: Vector3::new(0.0, 0.0, 0.10),
            mount_rotation: Matrix3::identity(),
            mount_translation: Vector3::zeros(),
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Base-frame joint axes `z_i`, joint origins `p_i`, and the probe frame.
    fn chain(&self, state: &JointState) -> (Vec<(Vector3<f64>, Vector3<f64>)>, Matrix3<f64>, Vector3<f64>) {
        assert_eq!(state.q.len(), self.joints.len(), "joint count mismatch");
        let mut r = self.mount_rotation;
        let mut p = self.mount_translation;
        let mut frames = Vec::with_capacity(self.joints.len());
        for (joint, &qi) in self.joints.iter().zip(state.q.iter()) {
            p += r * joint.origin;
            frames.push((r * joint.axis, p));
            r *= rotation_about(&(joint.axis * qi));
        }
        let flange_p = p + r * self.flange_offset;
        let probe_r = r * self.probe_rotation;
        let probe_p = flange_p + r * self.probe_translation;
        (frames, probe_r, probe_p)
    }

    /// Probe pose in the base frame.
    pub fn probe_pose(&self, state: &JointState) -> Pose {
        let (_, r, p) = self.chain(state);
        Pose { rotation: nearest_rotation(&r), translation: p, from: Frame::Probe, to: Frame::Base }
    }

    /// Geometric Jacobian at the probe point, base frame: column i is
    /// `[z_i × (p_probe − p_i); z_i]`.
    pub fn geometric_jacobian(&self, state: &JointState) -> DMatrix<f64> {
        let (frames, _, p_probe) = self.chain(state);
        let mut j = DMatrix::zeros(6, frames.len());
        for (i, (z, p)) in frames.iter().enumerate() {
            let lin = z.cross(&(p_probe - p));
            for k in 0..3 {
                j[(k, i)] = lin[k];
                j[(k + 3, i)] = z[k];
            }
        }
        j
    }
}

/// Damped least-squares joint velocities: `q̇ = Jᵀ(J·Jᵀ + damping²·I)⁻¹·t`.
///
/// With `damping = 0` this is the Moore–Penrose solution (minimum-norm for a
/// full-row-rank J); a singular `J·Jᵀ` then yields an error.
pub fn joint_velocities(
    j: &DMatrix<f64>,
    t: &Twist,
    damping: f64,
) -> Result<DVector<f64>, KinematicsError> {
    if j.nrows() != 6 {
        return Err(KinematicsError::DimensionMismatch("Jacobian must have 6 rows"));
    }
    if !t.is_finite() || !damping.is_finite() || damping < 0.0 {
        return Err(KinematicsError::NonFinite);
    }
    let mut a = j * j.transpose();
    for k in 0..6 {
        a[(k, k)] += damping * damping;
    }
    let a = Matrix6::from_iterator(a.iter().copied());
    let inv = a.try_inverse().ok_or(KinematicsError::Singular)?;
    let rhs = inv * t.to_vector();
    Ok(j.transpose() * DVector::from_iterator(6, rhs.iter().copied()))
}

/// Rotation matrix for the rotation vector `w` (axis × angle), exact for any
/// magnitude, first-order near zero.
pub(crate) fn rotation_about(w: &Vector3<f64>) -> Matrix3<f64> {
    let angle = w.norm();
    if angle < 1e-12 {
        return Matrix3::identity() + skew(w);
    }
    let k = skew(&(w / angle));
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn orthonormality_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

/// Nearest rotation matrix (Frobenius sense) via SVD, determinant forced +1.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd"), svd.v_t.expect("svd"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}
