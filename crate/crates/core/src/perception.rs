//! Landmark perception: semantic masks for the two ultrasound landmark
//! classes, 8-connected instance extraction with centroids, and pluggable
//! segmenters (exact oracle, boundary-noised oracle, classical thresholds).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::phantom::{FrameData, GroundTruth, ImageSpec};
use crate::raster::Mask;

/// Landmark classes visible in a lung ultrasound frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkClass {
    PleuralLine,
    RibShadow,
}

/// Per-class segmentation of one frame. Classes never overlap; when a
/// segmenter produces a conflict the pleural line wins.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMask {
    pub pleura: Mask,
    pub shadow: Mask,
}

impl SemanticMask {
    pub fn of_class(&self, class: LandmarkClass) -> &Mask {
        match class {
            LandmarkClass::PleuralLine => &self.pleura,
            LandmarkClass::RibShadow => &self.shadow,
        }
    }
}

/// One connected landmark instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub class: LandmarkClass,
    /// Component pixels as (u, v), in traversal order.
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    /// Mean pixel position (u, v).
    pub centroid: (f64, f64),
}

impl Instance {
    pub fn new(class: LandmarkClass, pixels: Vec<(usize, usize)>) -> Self {
        let area = pixels.len();
        let (mut su, mut sv) = (0.0, 0.0);
        for &(u, v) in &pixels {
            su += u as f64;
            sv += v as f64;
        }
        let n = area.max(1) as f64;
        Self { class, pixels, area, centroid: (su / n, sv / n) }
    }
}

/// Extracts all landmark instances from a semantic mask: 8-connected
/// components of at least `min_area` pixels, pleural-line instances first,
/// each class sorted by descending area (ties keep scan order).
pub fn extract_instances(mask: &SemanticMask, min_area: usize) -> Vec<Instance> {
    let mut out = components(&mask.pleura, LandmarkClass::PleuralLine, min_area);
    out.extend(components(&mask.shadow, LandmarkClass::RibShadow, min_area));
    out
}

fn components(mask: &Mask, class: LandmarkClass, min_area: usize) -> Vec<Instance> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = Mask::filled(w, h, false);
    let mut found = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if !mask.get(u, v) || seen.get(u, v) {
                continue;
            }
            let mut pixels = Vec::new();
            let mut queue = VecDeque::from([(u, v)]);
            seen.set(u, v, true);
            while let Some((cu, cv)) = queue.pop_front() {
                pixels.push((cu, cv));
                for (nu, nv) in neighbors8(cu, cv, w, h) {
                    if mask.get(nu, nv) && !seen.get(nu, nv) {
                        seen.set(nu, nv, true);
                        queue.push_back((nu, nv));
                    }
                }
            }
            if pixels.len() >= min_area {
                found.push(Instance::new(class, pixels));
            }
        }
    }
    // Stable sort keeps scan order among equal areas, so output is
    // deterministic for identical masks.
    found.sort_by(|a, b| b.area.cmp(&a.area));
    found
}

fn neighbors8(u: usize, v: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    const DELTAS: [(i64, i64); 8] =
        [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
    DELTAS.into_iter().filter_map(move |(du, dv)| {
        let nu = u as i64 + du;
        let nv = v as i64 + dv;
        (nu >= 0 && nv >= 0 && (nu as usize) < w && (nv as usize) < h)
            .then_some((nu as usize, nv as usize))
    })
}

/// Morphological dilation by one pixel (4-connected cross).
pub fn dilate4(mask: &Mask) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = mask.clone();
    for v in 0..h {
        for u in 0..w {
            if !mask.get(u, v) {
                continue;
            }
            for (nu, nv) in neighbors4(u, v, w, h) {
                out.set(nu, nv, true);
            }
        }
    }
    out
}

/// Morphological erosion by one pixel (4-connected cross); pixels outside
/// the image count as background.
pub fn erode4(mask: &Mask) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Mask::filled(w, h, false);
    for v in 0..h {
        for u in 0..w {
            if !mask.get(u, v) {
                continue;
            }
            let mut n = 0usize;
            for (nu, nv) in neighbors4(u, v, w, h) {
                if mask.get(nu, nv) {
                    n += 1;
                }
            }
            // Interior needs all four neighbors present and in-bounds.
            let border = u == 0 || v == 0 || u == w - 1 || v == h - 1;
            if n == 4 && !border {
                out.set(u, v, true);
            }
        }
    }
    out
}

fn neighbors4(u: usize, v: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    const DELTAS: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
    DELTAS.into_iter().filter_map(move |(du, dv)| {
        let nu = u as i64 + du;
        let nv = v as i64 + dv;
        (nu >= 0 && nv >= 0 && (nu as usize) < w && (nv as usize) < h)
            .then_some((nu as usize, nv as usize))
    })
}

/// Frame segmentation interface. Implementations may consult the rendered
/// image, the ground truth, or both; `seed` fixes any stochastic behavior.
pub trait Segmenter {
    fn segment(&self, frame: &FrameData, truth: &GroundTruth, seed: u64) -> SemanticMask;
}

/// Passes the ground-truth masks through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn segment(&self, _frame: &FrameData, truth: &GroundTruth, _seed: u64) -> SemanticMask {
        SemanticMask { pleura: truth.pleura.clone(), shadow: truth.shadow.clone() }
    }
}

/// Ground truth perturbed like an imperfect segmenter: per class, one of
/// {identity, 1-px erosion, 1-px dilation} chosen at random, then sparse
/// boundary-pixel flips. Every output pixel stays within two pixels of the
/// true boundary.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOracleSegmenter {
    /// Per-boundary-pixel flip probability.
    pub flip_probability: f64,
}

impl Default for NoisyOracleSegmenter {
    fn default() -> Self {
        Self { flip_probability: 0.05 }
    }
}

impl NoisyOracleSegmenter {
    fn perturb(&self, mask: &Mask, rng: &mut ChaCha8Rng) -> Mask {
        let mut out = match rng.gen_range(0..3u8) {
            0 => mask.clone(),
            1 => erode4(mask),
            _ => dilate4(mask),
        };
        // Flip isolated pixels on either side of the perturbed boundary,
        // scanning row-major so the noise stream is reproducible.
        let inner = erode4(&out);
        let outer = dilate4(&out);
        for v in 0..out.height() {
            for u in 0..out.width() {
                if outer.get(u, v) != inner.get(u, v) && rng.gen::<f64>() < self.flip_probability {
                    out.set(u, v, !out.get(u, v));
                }
            }
        }
        out
    }
}

impl Segmenter for NoisyOracleSegmenter {
    fn segment(&self, _frame: &FrameData, truth: &GroundTruth, seed: u64) -> SemanticMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pleura = self.perturb(&truth.pleura, &mut rng);
        let mut shadow = self.perturb(&truth.shadow, &mut rng);
        for ((u, v), p) in pleura.enumerate() {
            if p {
                shadow.set(u, v, false);
            }
        }
        SemanticMask { pleura, shadow }
    }
}

/// Intensity-based segmentation of the rendered frame: bright pixels are
/// pleural line; columns that stay dark below a depth cutoff are rib shadow.
#[derive(Debug, Clone, Copy)]
pub struct ClassicalSegmenter {
    /// Pixels at or above this gray level are pleural line.
    pub pleura_level: u8,
    /// Columns whose mean below `shadow_start_row` is at or below this are
    /// shadowed.
    pub shadow_mean_level: f64,
    /// First row of the shadow test window (10 mm depth by default).
    pub shadow_start_row: usize,
}

impl ClassicalSegmenter {
    pub fn new(spec: &ImageSpec) -> Self {
        Self {
            pleura_level: 180,
            shadow_mean_level: 30.0,
            shadow_start_row: (0.010 / spec.axial_pitch()).round() as usize,
        }
    }
}

impl Segmenter for ClassicalSegmenter {
    fn segment(&self, frame: &FrameData, _truth: &GroundTruth, _seed: u64) -> SemanticMask {
        let img = &frame.image;
        let (w, h) = (img.width(), img.height());
        let mut pleura = Mask::filled(w, h, false);
        let mut shadow = Mask::filled(w, h, false);
        for ((u, v), px) in img.enumerate() {
            if px >= self.pleura_level {
                pleura.set(u, v, true);
            }
        }
        let v0 = self.shadow_start_row.min(h);
        for u in 0..w {
            let mut sum = 0.0;
            for v in v0..h {
                sum += img.get(u, v) as f64;
            }
            let n = (h - v0).max(1) as f64;
            if sum / n <= self.shadow_mean_level {
                for v in v0..h {
                    shadow.set(u, v, !pleura.get(u, v));
                }
            }
        }
        SemanticMask { pleura, shadow }
    }
}
