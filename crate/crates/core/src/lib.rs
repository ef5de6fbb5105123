//! Closed-loop simulator and control library for navigating an ultrasound
//! probe to a standardized imaging plane over a rib phantom: landmark
//! extraction, template matching, image-based visual servoing, surface-normal
//! alignment, contact-force regulation, and joint-space execution, with a
//! deterministic trial harness.

pub mod afm;
pub mod harness;
pub mod kinematics;
pub mod metrics;
pub mod perception;
pub mod phantom;
pub mod raster;
pub mod servo;

pub use afm::{Pairing, Template, VisualError};
pub use harness::{Scenario, SummaryReport, TrialLog};
pub use kinematics::{ArmModel, Frame, JointState, Pose, Twist};
pub use metrics::{SimilarityReport, TrackingReport};
pub use perception::{Instance, LandmarkClass, Segmenter, SemanticMask};
pub use phantom::{FrameData, GroundTruth, ImageSpec, PhantomModel, PhantomParams, Surface};
pub use raster::{GrayImage, Grid, Mask, ProbImage};
pub use servo::{ForceGains, IbvsGains, LaserReadings, NormalPdGains, ServoCommand};
