//! Evaluation math: image-similarity measures (NCC, NSSD, mutual
//! information), segmentation losses (cross-entropy, Dice, and their convex
//! combination), pose error, and paired-landmark pixel distance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afm::Pairing;
use crate::kinematics::{Frame, Pose};
use crate::raster::{GrayImage, Mask, ProbImage};

/// Probabilities are clamped to [ε, 1−ε] before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Histogram bins for mutual information, equal width over [0, 255].
pub const MI_BINS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("images have different dimensions")]
    DimensionMismatch,
    #[error("correlation is undefined for constant images")]
    UndefinedCorrelation,
    #[error("max_ssd {max_ssd} is smaller than the observed ssd {ssd}")]
    InvalidMaxSsd { ssd: f64, max_ssd: f64 },
    #[error("mutual information needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("loss weight alpha must be in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("poses are expressed in different frames: {0:?} vs {1:?}")]
    FrameMismatch(Frame, Frame),
}

/// Image-similarity summary of one frame against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub ncc: f64,
    pub nssd: f64,
    pub mi: f64,
    pub timestamp: f64,
}

/// Final tracking accuracy of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub translational_mm: f64,
    pub rotational_deg: f64,
    /// Descriptor distances at the final perception step; absent when the
    /// class was not detected there.
    pub pleura_px: Option<f64>,
    pub shadow_px: Option<f64>,
    /// RMS deviation from the force setpoint over the steady window, N.
    pub force_rms_n: f64,
}

/// Normalized cross-correlation of two images: zero-mean, unit-variance
/// correlation over all pixels, in [−1, 1]. Constant images have no defined
/// correlation.
pub fn ncc(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    if !a.same_dims(b) {
        return Err(MetricsError::DimensionMismatch);
    }
    let n = a.len() as f64;
    let mean = |img: &GrayImage| img.cells().iter().map(|&p| p as f64).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut cross, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (pa, pb) in a.cells().iter().zip(b.cells().iter()) {
        let da = *pa as f64 - ma;
        let db = *pb as f64 - mb;
        cross += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(MetricsError::UndefinedCorrelation);
    }
    Ok(cross / (va.sqrt() * vb.sqrt()))
}

/// Sum of squared pixel differences.
pub fn ssd(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    if !a.same_dims(b) {
        return Err(MetricsError::DimensionMismatch);
    }
    Ok(a.cells()
        .iter()
        .zip(b.cells().iter())
        .map(|(pa, pb)| {
            let d = *pa as f64 - *pb as f64;
            d * d
        })
        .sum())
}

/// Normalized SSD: 1 − SSD/max_ssd, so 1 is identical and 0 is the worst
/// frame of the trial that produced `max_ssd`. A trial where every frame is
/// identical (max_ssd = 0) scores 1.
pub fn nssd(a: &GrayImage, b: &GrayImage, max_ssd: f64) -> Result<f64, MetricsError> {
    let ssd = ssd(a, b)?;
    if max_ssd == 0.0 && ssd == 0.0 {
        return Ok(1.0);
    }
    if max_ssd < ssd {
        return Err(MetricsError::InvalidMaxSsd { ssd, max_ssd });
    }
    Ok(1.0 - ssd / max_ssd)
}

/// Mutual information of the two intensity distributions in nats, from a
/// joint histogram with `bins` equal-width bins over [0, 255].
pub fn mutual_information(a: &GrayImage, b: &GrayImage, bins: usize) -> Result<f64, MetricsError> {
    if !a.same_dims(b) {
        return Err(MetricsError::DimensionMismatch);
    }
    if bins < 2 {
        return Err(MetricsError::TooFewBins(bins));
    }
    let mut joint = vec![0u64; bins * bins];
    for (pa, pb) in a.cells().iter().zip(b.cells().iter()) {
        let ia = (*pa as usize * bins) / 256;
        let ib = (*pb as usize * bins) / 256;
        joint[ia * bins + ib] += 1;
    }
    let n = a.len() as f64;
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] as f64 / n;
            pa[i] += p;
            pb[j] += p;
        }
    }
    let term = |i: usize, j: usize| -> f64 {
        let p = joint[i * bins + j] as f64 / n;
        if p == 0.0 {
            0.0
        } else {
            p * (p / (pa[i] * pb[j])).ln()
        }
    };
    // Pairing (i,j) with (j,i) makes the accumulation bitwise symmetric in
    // the two images.
    let mut mi = 0.0;
    for i in 0..bins {
        mi += term(i, i);
        for j in (i + 1)..bins {
            mi += term(i, j) + term(j, i);
        }
    }
    Ok(mi)
}

/// Mean binary cross-entropy of per-pixel probabilities against a binary
/// mask; probabilities are clamped away from 0 and 1 before the logs.
pub fn bce_loss(pred: &ProbImage, truth: &Mask) -> Result<f64, MetricsError> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(MetricsError::DimensionMismatch);
    }
    let mut sum = 0.0;
    for (p, y) in pred.cells().iter().zip(truth.cells().iter()) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        sum -= if *y { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(sum / pred.len() as f64)
}

/// Smoothed Dice loss: 1 − (2·Σ y·ŷ + 1)/(Σ y² + Σ ŷ² + 1); zero for a
/// perfect prediction, including the all-background case.
pub fn dice_loss(pred: &ProbImage, truth: &Mask) -> Result<f64, MetricsError> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(MetricsError::DimensionMismatch);
    }
    let (mut inter, mut sq_pred, mut sq_truth) = (0.0, 0.0, 0.0);
    for (p, y) in pred.cells().iter().zip(truth.cells().iter()) {
        if *y {
            inter += p;
            sq_truth += 1.0;
        }
        sq_pred += p * p;
    }
    Ok(1.0 - (2.0 * inter + 1.0) / (sq_truth + sq_pred + 1.0))
}

/// Convex combination α·bce + (1−α)·dice of the two losses.
pub fn composite_loss(pred: &ProbImage, truth: &Mask, alpha: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MetricsError::InvalidAlpha(alpha));
    }
    Ok(alpha * bce_loss(pred, truth)? + (1.0 - alpha) * dice_loss(pred, truth)?)
}

/// Dice overlap of two binary masks in [0, 1]; two empty masks count as a
/// perfect match.
pub fn dice_index(a: &Mask, b: &Mask) -> f64 {
    let mut inter = 0usize;
    for (pa, pb) in a.cells().iter().zip(b.cells().iter()) {
        if *pa && *pb {
            inter += 1;
        }
    }
    let total = a.count() + b.count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Pose error against a reference: translation in millimeters and the
/// geodesic rotation angle in degrees.
pub fn pose_error(current: &Pose, reference: &Pose) -> Result<(f64, f64), MetricsError> {
    if current.from != reference.from || current.to != reference.to {
        return Err(MetricsError::FrameMismatch(current.from, reference.from));
    }
    let translational = (current.translation - reference.translation).norm() * 1000.0;
    let rel = current.rotation.transpose() * reference.rotation;
    let angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    Ok((translational, angle.to_degrees()))
}

/// Euclidean distance between the paired query and template descriptors of
/// one landmark class, px.
pub fn paired_pixel_distance(pairing: &Pairing) -> f64 {
    pairing.pixel_distance()
}
