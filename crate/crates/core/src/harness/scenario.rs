//! Scenario configuration: one JSON document pins every parameter of a
//! closed-loop trial. Unknown keys are rejected so typos fail fast.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phantom::{ImageSpec, PhantomModel, PhantomParams};
use crate::servo::{ForceGains, IbvsGains, NormalPdGains};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// How commanded twists are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigMode {
    /// The probe pose integrates the twist directly (ideal Cartesian stage).
    Direct,
    /// A seven-joint serial arm tracks the twist through damped least squares.
    Arm,
}

/// World axis of the initial deviation from the canonical plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Deviation applied to the probe after the reference capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialOffset {
    pub axis: Axis,
    pub meters: f64,
}

impl Default for InitialOffset {
    fn default() -> Self {
        // Half the rib spacing: the hardest lateral start that is still
        // attributable to the nearest canonical plane.
        Self { axis: Axis::X, meters: 0.0175 }
    }
}

/// Which segmenter produces the per-frame landmark masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterChoice {
    /// Ground-truth masks, unperturbed.
    Oracle,
    /// Ground truth with seeded boundary damage.
    OracleNoise {
        #[serde(default = "default_flip_probability")]
        flip_probability: f64,
    },
    /// Intensity thresholds on the rendered image.
    Classical,
}

fn default_flip_probability() -> f64 {
    0.05
}

impl Default for SegmenterChoice {
    fn default() -> Self {
        Self::OracleNoise { flip_probability: default_flip_probability() }
    }
}

/// Geometry of the four-beam distance-sensor ring on the probe shaft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaserRig {
    /// Ring radius around the probe axis, m.
    pub ring_radius: f64,
    /// Height of the ring above the probe tip along the shaft, m.
    pub ring_height: f64,
    /// Beam range beyond which a reading is a fault sentinel, m.
    pub max_range: f64,
}

impl Default for LaserRig {
    fn default() -> Self {
        Self { ring_radius: 0.04, ring_height: 0.06, max_range: 0.3 }
    }
}

/// Complete description of one closed-loop navigation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub phantom: PhantomParams,
    pub image: ImageSpec,
    pub rig: RigMode,
    /// Damped-least-squares factor for the arm rig.
    pub arm_damping: f64,
    pub offset: InitialOffset,
    /// Trial length, s.
    pub duration_s: f64,
    pub control_rate_hz: f64,
    pub perception_rate_hz: f64,
    pub ibvs: IbvsGains,
    pub normal: NormalPdGains,
    pub force: ForceGains,
    pub enable_ibvs: bool,
    pub enable_normal: bool,
    pub enable_force: bool,
    pub segmenter: SegmenterChoice,
    /// Sinusoidal surface motion with a seeded phase.
    pub respiration: bool,
    pub laser: LaserRig,
    /// Connected components smaller than this are discarded, px.
    pub min_instance_area: usize,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            phantom: PhantomParams::default(),
            image: ImageSpec::default(),
            rig: RigMode::Direct,
            arm_damping: 1e-3,
            offset: InitialOffset::default(),
            duration_s: 5.0,
            control_rate_hz: 1000.0,
            perception_rate_hz: 30.0,
            ibvs: IbvsGains::default(),
            normal: NormalPdGains::default(),
            force: ForceGains::default(),
            enable_ibvs: true,
            enable_normal: true,
            enable_force: true,
            segmenter: SegmenterChoice::default(),
            respiration: false,
            laser: LaserRig::default(),
            min_instance_area: 20,
            seed: 42,
            repeats: 5,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks hard invariants and returns soft warnings. A lateral offset
    /// beyond half the rib spacing is legal — it converges to a neighboring
    /// plane — but quantitative comparisons against the original plane are
    /// then meaningless, hence a warning instead of an error.
    pub fn validate(&self) -> Result<Vec<String>, ScenarioError> {
        let invalid = |msg: String| ScenarioError::Invalid(msg);
        if !(self.control_rate_hz >= 1.0) || !(self.perception_rate_hz >= 1.0) {
            return Err(invalid("control and perception rates must be ≥ 1 Hz".into()));
        }
        if self.perception_rate_hz > self.control_rate_hz {
            return Err(invalid("perception rate must not exceed the control rate".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(invalid("duration must be positive".into()));
        }
        if self.repeats < 1 {
            return Err(invalid("repeat count must be ≥ 1".into()));
        }
        if !(self.arm_damping >= 0.0) || !self.arm_damping.is_finite() {
            return Err(invalid("arm damping must be finite and ≥ 0".into()));
        }
        if !(self.laser.ring_radius > 0.0)
            || !(self.laser.ring_height > 0.0)
            || !(self.laser.max_range > 0.0)
        {
            return Err(invalid("laser ring dimensions must be positive".into()));
        }
        if self.min_instance_area == 0 {
            return Err(invalid("minimum instance area must be ≥ 1 px".into()));
        }
        if !self.offset.meters.is_finite() {
            return Err(invalid("offset must be finite".into()));
        }
        if let SegmenterChoice::OracleNoise { flip_probability } = self.segmenter {
            if !(0.0..=1.0).contains(&flip_probability) {
                return Err(invalid("flip probability must be in [0, 1]".into()));
            }
        }
        self.ibvs.validate().map_err(|e| invalid(e.to_string()))?;
        self.normal.validate().map_err(|e| invalid(e.to_string()))?;
        self.force.validate().map_err(|e| invalid(e.to_string()))?;
        self.image.validate().map_err(|e| invalid(e.to_string()))?;
        PhantomModel::new(self.phantom.clone()).map_err(|e| invalid(e.to_string()))?;

        let mut warnings = Vec::new();
        if self.offset.axis == Axis::X && self.offset.meters.abs() > self.phantom.rib_spacing / 2.0
        {
            warnings.push(format!(
                "lateral offset {:.4} m exceeds half the rib spacing {:.4} m; \
                 the trial will converge to a neighboring plane",
                self.offset.meters,
                self.phantom.rib_spacing / 2.0
            ));
        }
        Ok(warnings)
    }
}
