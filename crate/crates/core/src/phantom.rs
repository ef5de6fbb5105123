//! Analytic rib-phantom world model: a cylindrical (or flat) skin surface
//! over periodic ribs and a pleura band, queried by ray casting from the
//! probe. Produces per-pixel ground-truth landmark masks, seeded ultrasound
//! renders, laser-rangeable surface geometry, and a spring contact force.
//!
//! World frame: `Base`, z up, skin apex at the origin. Ribs run along y with
//! centers at x = (k + ½)·rib_spacing, so the canonical imaging pose sits at
//! x = 0, midway between two ribs. The probe frame has x lateral (image u)
//! and z pointing into the tissue (image v).

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{Frame, Pose};
use crate::raster::{GrayImage, Mask};

/// Loss of contact farther than this gap invalidates imaging (and aborts a
/// trial), m.
pub const CONTACT_GAP_LIMIT: f64 = 0.005;

/// Gray levels used by the renderer (pleura bright, shadow dark, speckle
/// background) with additive Gaussian noise σ.
const PLEURA_MEAN: f64 = 220.0;
const SHADOW_MEAN: f64 = 15.0;
const BACKGROUND_MEAN: f64 = 60.0;
const NOISE_SIGMA: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("surface query ({x}, {y}) outside the modeled extent")]
    Domain { x: f64, y: f64 },
    #[error("probe is {gap_m:.4} m above the surface; imaging requires contact within {CONTACT_GAP_LIMIT} m")]
    NoContact { gap_m: f64 },
    #[error("invalid phantom parameters: {0}")]
    InvalidParams(&'static str),
    #[error("invalid image spec: {0}")]
    InvalidImageSpec(&'static str),
}

/// Skin surface geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surface {
    /// Plane z = 0 (plus respiration offset).
    Flat,
    /// Cylinder of the given radius, axis along y, apex line at z = 0.
    Cylinder { radius: f64 },
}

/// Phantom geometry and material parameters. All lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomParams {
    pub surface: Surface,
    /// Rib center-to-center spacing d_rib.
    pub rib_spacing: f64,
    pub rib_radius: f64,
    /// Depth of the rib top below the local skin surface.
    pub rib_top_depth: f64,
    /// Depth of the pleura (outer edge of the bright band) below the skin.
    pub pleura_depth: f64,
    pub pleura_band_thickness: f64,
    /// Linear contact spring, N/m.
    pub contact_stiffness: f64,
    /// Peak-to-nominal respiration surface excursion.
    pub respiration_amplitude: f64,
    pub respiration_frequency_hz: f64,
    /// Contact force at which the canonical imaging-plane pose is defined;
    /// fixes the tip penetration baked into `sip_pose`.
    pub sip_contact_force: f64,
    /// Modeled half-extent along x and y; queries beyond are domain errors.
    pub extent_x: f64,
    pub extent_y: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            surface: Surface::Cylinder { radius: 0.15 },
            rib_spacing: 0.035,
            rib_radius: 0.006,
            rib_top_depth: 0.010,
            pleura_depth: 0.025,
            pleura_band_thickness: 0.002,
            contact_stiffness: 500.0,
            respiration_amplitude: 0.002,
            respiration_frequency_hz: 0.25,
            sip_contact_force: 3.5,
            extent_x: 0.12,
            extent_y: 0.25,
        }
    }
}

/// Ultrasound image geometry: pixel grid plus physical field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSpec {
    pub width: usize,
    pub height: usize,
    /// Axial field of view (image top to bottom), m.
    pub depth: f64,
    /// Lateral field of view (image left to right), m.
    pub lateral_width: f64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        // ±20 mm lateral keeps exactly one inter-rib gap and the two
        // bounding rib shadows in view at the canonical pose.
        Self { width: 256, height: 256, depth: 0.10, lateral_width: 0.04 }
    }
}

impl ImageSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.width < 32 || self.height < 32 {
            return Err(PhantomError::InvalidImageSpec("width and height must be ≥ 32"));
        }
        if !(self.depth > 0.0) || !(self.lateral_width > 0.0) {
            return Err(PhantomError::InvalidImageSpec("depth and lateral_width must be > 0"));
        }
        Ok(())
    }

    /// Meters per pixel along the lateral (u) axis.
    pub fn lateral_pitch(&self) -> f64 {
        self.lateral_width / self.width as f64
    }

    /// Meters per pixel along the axial (v) axis.
    pub fn axial_pitch(&self) -> f64 {
        self.depth / self.height as f64
    }

    /// Lateral offset of a column center from the image center, m.
    pub fn column_offset(&self, u: usize) -> f64 {
        (u as f64 + 0.5 - self.width as f64 / 2.0) * self.lateral_pitch()
    }

    /// Depth of a row center below the probe tip, m.
    pub fn row_depth(&self, v: usize) -> f64 {
        (v as f64 + 0.5) * self.axial_pitch()
    }
}

/// Per-pixel ground-truth landmark masks (pleura band, rib shadows).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub pleura: Mask,
    pub shadow: Mask,
}

/// One rendered ultrasound frame plus its acquisition time.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub image: GrayImage,
    /// Simulation time of acquisition, s.
    pub t: f64,
}

/// Analytic phantom with a fixed canonical imaging pose.
#[derive(Debug, Clone)]
pub struct PhantomModel {
    params: PhantomParams,
    /// Canonical imaging-plane pose: probe normal to the apex, centered
    /// between two ribs, pressed to the contact-equilibrium penetration.
    sip_pose: Pose,
    respiration_enabled: bool,
    respiration_phase: f64,
}

impl PhantomModel {
    pub fn new(params: PhantomParams) -> Result<Self, PhantomError> {
        if let Surface::Cylinder { radius } = params.surface {
            if !(radius > params.pleura_depth + params.pleura_band_thickness) {
                return Err(PhantomError::InvalidParams("cylinder radius must exceed pleura depth"));
            }
            if !(params.extent_x < radius) {
                return Err(PhantomError::InvalidParams("extent_x must be smaller than the cylinder radius"));
            }
        }
        if !(params.rib_spacing > 2.0 * params.rib_radius) {
            return Err(PhantomError::InvalidParams("rib spacing must exceed the rib diameter"));
        }
        if !(params.pleura_depth > params.rib_top_depth) {
            return Err(PhantomError::InvalidParams("pleura must lie below the rib tops"));
        }
        if !(params.rib_radius > 0.0
            && params.rib_top_depth > 0.0
            && params.pleura_band_thickness > 0.0
            && params.contact_stiffness > 0.0
            && params.sip_contact_force >= 0.0
            && params.respiration_amplitude >= 0.0
            && params.respiration_frequency_hz >= 0.0
            && params.extent_x > 0.0
            && params.extent_y > 0.0)
        {
            return Err(PhantomError::InvalidParams("lengths, stiffness, and rates must be positive"));
        }
        // Probe x along world x, z into the tissue; tip pressed to the
        // contact-equilibrium penetration at the apex.
        let rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let penetration = params.sip_contact_force / params.contact_stiffness;
        let sip_pose = Pose::new(
            rotation,
            Vector3::new(0.0, 0.0, -penetration),
            Frame::Probe,
            Frame::Base,
        )
        .expect("canonical pose is orthonormal");
        Ok(Self { params, sip_pose, respiration_enabled: false, respiration_phase: 0.0 })
    }

    /// Enables the sinusoidal respiration offset with the given phase, rad.
    pub fn with_respiration(mut self, phase: f64) -> Self {
        self.respiration_enabled = true;
        self.respiration_phase = phase;
        self
    }

    pub fn params(&self) -> &PhantomParams {
        &self.params
    }

    /// Canonical imaging-plane pose with the skin at its nominal height.
    pub fn sip_pose(&self) -> &Pose {
        &self.sip_pose
    }

    /// Canonical pose riding the respiration offset at time `t`.
    pub fn sip_pose_at(&self, t: f64) -> Pose {
        let mut pose = self.sip_pose.clone();
        pose.translation.z += self.breath(t);
        pose
    }

    /// Vertical respiration offset of the whole anatomy at time `t`, m.
    pub fn breath(&self, t: f64) -> f64 {
        if !self.respiration_enabled {
            return 0.0;
        }
        let w = 2.0 * std::f64::consts::PI * self.params.respiration_frequency_hz;
        self.params.respiration_amplitude * (w * t + self.respiration_phase).sin()
    }

    /// Skin height above the apex plane at lateral position `x`, m.
    /// Caller must keep |x| within extent (and within the cylinder radius).
    fn skin_height(&self, x: f64, t: f64) -> f64 {
        let rise = match self.params.surface {
            Surface::Flat => 0.0,
            Surface::Cylinder { radius } => (radius * radius - x * x).sqrt() - radius,
        };
        rise + self.breath(t)
    }

    /// Skin surface point and outward unit normal at lateral coordinates
    /// (x, y) and time t.
    pub fn surface_point_and_normal(
        &self,
        x: f64,
        y: f64,
        t: f64,
    ) -> Result<(Vector3<f64>, Vector3<f64>), PhantomError> {
        if x.abs() > self.params.extent_x || y.abs() > self.params.extent_y {
            return Err(PhantomError::Domain { x, y });
        }
        let point = Vector3::new(x, y, self.skin_height(x, t));
        let normal = match self.params.surface {
            Surface::Flat => Vector3::z(),
            Surface::Cylinder { radius } => {
                Vector3::new(x / radius, 0.0, (radius * radius - x * x).sqrt() / radius)
            }
        };
        Ok((point, normal))
    }

    /// Distance along `direction` from `origin` to the skin surface, or None
    /// when there is no hit within `max_range`.
    pub fn ray_cast(
        &self,
        origin: &Vector3<f64>,
        direction: &Vector3<f64>,
        t: f64,
        max_range: f64,
    ) -> Option<f64> {
        let d = direction.normalize();
        let s = match self.params.surface {
            Surface::Flat => {
                let plane = self.breath(t);
                if d.z.abs() < 1e-12 {
                    return None;
                }
                let s = (plane - origin.z) / d.z;
                let x = origin.x + s * d.x;
                let y = origin.y + s * d.y;
                (s > 1e-9 && x.abs() <= self.params.extent_x && y.abs() <= self.params.extent_y)
                    .then_some(s)?
            }
            Surface::Cylinder { radius } => {
                let zc = self.breath(t) - radius;
                let (s1, s2) = ray_circle(origin.x, origin.z, d.x, d.z, 0.0, zc, radius)?;
                // First hit on the upper half of the cylinder within extent.
                [s1, s2].into_iter().find(|&s| {
                    if s <= 1e-9 {
                        return false;
                    }
                    let x = origin.x + s * d.x;
                    let y = origin.y + s * d.y;
                    let z = origin.z + s * d.z;
                    z - zc >= 0.0 && x.abs() <= self.params.extent_x && y.abs() <= self.params.extent_y
                })?
            }
        };
        (s <= max_range).then_some(s)
    }

    /// Signed penetration of the probe tip below the skin surface, m
    /// (positive pressed in, negative hovering).
    pub fn penetration(&self, probe_pose: &Pose, t: f64) -> f64 {
        let p = &probe_pose.translation;
        match self.params.surface {
            Surface::Flat => self.breath(t) - p.z,
            Surface::Cylinder { radius } => {
                let zc = self.breath(t) - radius;
                radius - (p.x * p.x + (p.z - zc) * (p.z - zc)).sqrt()
            }
        }
    }

    /// Spring contact force on the probe tip, N: stiffness × penetration,
    /// clamped at zero out of contact. Continuous at first touch.
    pub fn contact_force(&self, probe_pose: &Pose, t: f64) -> f64 {
        let p = &probe_pose.translation;
        if p.x.abs() > self.params.extent_x || p.y.abs() > self.params.extent_y {
            return 0.0;
        }
        self.params.contact_stiffness * self.penetration(probe_pose, t).max(0.0)
    }

    /// Per-column scan geometry shared by mask generation.
    fn column_ray(&self, probe_pose: &Pose, spec: &ImageSpec, u: usize) -> (Vector3<f64>, Vector3<f64>) {
        let x_axis = probe_pose.rotation.column(0).into_owned();
        let z_axis = probe_pose.rotation.column(2).into_owned();
        let origin = probe_pose.translation + x_axis * spec.column_offset(u);
        (origin, z_axis)
    }

    /// Ground-truth landmark masks for a probe pose: per column, a ray along
    /// the probe axis either enters a rib — marking rib shadow from the entry
    /// depth to the image bottom — or crosses the pleura, marking a bright
    /// band of constant thickness along the ray.
    ///
    /// Over a flat plate the rib pattern makes the masks exactly periodic in
    /// `rib_spacing`; on a curved body depths shift with the surface profile.
    pub fn ground_truth_masks(
        &self,
        probe_pose: &Pose,
        spec: &ImageSpec,
        t: f64,
    ) -> Result<GroundTruth, PhantomError> {
        spec.validate()?;
        let gap = -self.penetration(probe_pose, t);
        if gap > CONTACT_GAP_LIMIT {
            return Err(PhantomError::NoContact { gap_m: gap });
        }
        let p = &self.params;
        let mut pleura = Mask::filled(spec.width, spec.height, false);
        let mut shadow = Mask::filled(spec.width, spec.height, false);
        let ap = spec.axial_pitch();

        for u in 0..spec.width {
            let (o, d) = self.column_ray(probe_pose, spec, u);
            if o.x.abs() > p.extent_x || o.y.abs() > p.extent_y {
                continue;
            }
            // Nearest ribs to the ray origin; ±3 periods covers any
            // plausible probe tilt over the 10 cm imaging depth.
            let k_near = (o.x / p.rib_spacing - 0.5).round() as i64;
            let mut rib_entry: Option<f64> = None;
            for k in (k_near - 3)..=(k_near + 3) {
                let cx = (k as f64 + 0.5) * p.rib_spacing;
                if cx.abs() + p.rib_radius > p.extent_x {
                    continue;
                }
                let cz = self.skin_height(cx, t) - p.rib_top_depth - p.rib_radius;
                if let Some((s1, s2)) = ray_circle(o.x, o.z, d.x, d.z, cx, cz, p.rib_radius) {
                    let entry = if s1 > 1e-9 { s1 } else { s2 };
                    if entry > 1e-9 {
                        rib_entry = Some(rib_entry.map_or(entry, |e: f64| e.min(entry)));
                    }
                }
            }
            if let Some(entry) = rib_entry {
                // Acoustic shadow from the rib entry down.
                let v0 = ((entry / ap - 0.5).ceil().max(0.0)) as usize;
                for v in v0..spec.height {
                    shadow.set(u, v, true);
                }
            } else if let Some(top) = self.pleura_crossing(&o, &d, t) {
                // Bright band of constant thickness along the ray; constant
                // thickness keeps the band area slope-independent.
                let bottom = top + p.pleura_band_thickness;
                let v0 = ((top / ap - 0.5).floor().max(0.0)) as usize;
                for v in v0..spec.height {
                    let depth = spec.row_depth(v);
                    if depth >= bottom {
                        break;
                    }
                    if depth >= top {
                        pleura.set(u, v, true);
                    }
                }
            }
        }
        Ok(GroundTruth { pleura, shadow })
    }

    /// Ray distance to the outer pleura surface (skin offset inward by
    /// pleura_depth), if crossed.
    fn pleura_crossing(&self, o: &Vector3<f64>, d: &Vector3<f64>, t: f64) -> Option<f64> {
        match self.params.surface {
            Surface::Flat => {
                let plane = self.breath(t) - self.params.pleura_depth;
                if d.z.abs() < 1e-12 {
                    return None;
                }
                let s = (plane - o.z) / d.z;
                (s > 1e-9).then_some(s)
            }
            Surface::Cylinder { radius } => {
                let zc = self.breath(t) - radius;
                let shell = radius - self.params.pleura_depth;
                let (s1, s2) = ray_circle(o.x, o.z, d.x, d.z, 0.0, zc, shell)?;
                [s1, s2]
                    .into_iter()
                    .find(|&s| s > 1e-9 && o.z + s * d.z - zc >= 0.0)
            }
        }
    }

    /// Renders one frame: landmark masks drawn at their gray levels over a
    /// speckle background, with seeded additive Gaussian noise. Bit-identical
    /// for identical (pose, spec, t, seed).
    pub fn render_frame(
        &self,
        probe_pose: &Pose,
        spec: &ImageSpec,
        t: f64,
        seed: u64,
    ) -> Result<FrameData, PhantomError> {
        let gt = self.ground_truth_masks(probe_pose, spec, t)?;
        Ok(FrameData { image: render_from_masks(&gt, seed), t })
    }
}

/// Draws masks at their gray levels with seeded noise; row-major pixel order
/// fixes the noise stream.
pub fn render_from_masks(gt: &GroundTruth, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut image = GrayImage::filled(gt.pleura.width(), gt.pleura.height(), 0);
    for v in 0..image.height() {
        for u in 0..image.width() {
            let mean = if gt.pleura.get(u, v) {
                PLEURA_MEAN
            } else if gt.shadow.get(u, v) {
                SHADOW_MEAN
            } else {
                BACKGROUND_MEAN
            };
            let value = (mean + noise.sample(&mut rng)).round().clamp(0.0, 255.0);
            image.set(u, v, value as u8);
        }
    }
    image
}

/// Ascending intersection parameters of a 2-D ray with a circle in the x–z
/// plane (cylinder along y), or None when the ray misses it.
fn ray_circle(
    ox: f64,
    oz: f64,
    dx: f64,
    dz: f64,
    cx: f64,
    cz: f64,
    r: f64,
) -> Option<(f64, f64)> {
    let a = dx * dx + dz * dz;
    if a < 1e-18 {
        return None;
    }
    let bx = ox - cx;
    let bz = oz - cz;
    let b = 2.0 * (bx * dx + bz * dz);
    let c = bx * bx + bz * bz - r * r;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    Some(((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> PhantomModel {
        PhantomModel::new(PhantomParams::default()).unwrap()
    }

    fn flat_model() -> PhantomModel {
        let params = PhantomParams { surface: Surface::Flat, ..PhantomParams::default() };
        PhantomModel::new(params).unwrap()
    }

    /// Probe pose at lateral offset x from the canonical pose, same
    /// orientation and tip height.
    fn offset_pose(m: &PhantomModel, x: f64) -> Pose {
        let mut pose = m.sip_pose().clone();
        pose.translation.x += x;
        pose
    }

    #[test]
    fn flat_surface_normal_is_vertical() {
        let (p, n) = flat_model().surface_point_and_normal(0.02, 0.01, 0.0).unwrap();
        assert_eq!(n, Vector3::z());
        assert_eq!(p.z, 0.0);
    }

    #[test]
    fn cylinder_apex_normal_is_vertical() {
        let (_, n) = model().surface_point_and_normal(0.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(n, Vector3::z(), epsilon = 1e-12);
    }

    #[test]
    fn cylinder_normal_tilts_by_arcsin_of_lateral_offset() {
        // r = 0.15, x = 0.03 → tilt from vertical = asin(0.03/0.15).
        let (_, n) = model().surface_point_and_normal(0.03, 0.0, 0.0).unwrap();
        let tilt = n.z.clamp(-1.0, 1.0).acos();
        assert_relative_eq!(tilt, (0.03f64 / 0.15).asin(), epsilon = 1e-12);
        assert!(n.x > 0.0);
    }

    #[test]
    fn surface_query_outside_extent_is_domain_error() {
        assert!(matches!(
            model().surface_point_and_normal(0.2, 0.0, 0.0),
            Err(PhantomError::Domain { .. })
        ));
    }

    #[test]
    fn vertical_ray_measures_height_above_flat_plate() {
        let m = flat_model();
        let s = m.ray_cast(&Vector3::new(0.0, 0.0, 0.05), &-Vector3::z(), 0.0, 0.3);
        assert_eq!(s, Some(0.05));
    }

    #[test]
    fn ray_parallel_to_surface_misses() {
        let m = flat_model();
        assert_eq!(m.ray_cast(&Vector3::new(0.0, 0.0, 0.05), &Vector3::x(), 0.0, 0.3), None);
    }

    #[test]
    fn ray_beyond_max_range_misses() {
        let m = flat_model();
        assert_eq!(m.ray_cast(&Vector3::new(0.0, 0.0, 0.05), &-Vector3::z(), 0.0, 0.04), None);
    }

    #[test]
    fn tilted_ray_pair_differs_by_twice_radius_times_tangent() {
        // Probe tilted 10° over a flat plate: two sensors on opposite sides
        // of a ring of radius 0.04 m read distances differing by 2·r·tan(10°).
        let m = flat_model();
        let theta = 10f64.to_radians();
        let r = 0.04;
        let mut pose = m.sip_pose().clone();
        pose.translation = Vector3::new(0.0, 0.0, 0.05);
        pose.rotation = pose.rotation * crate::kinematics::rotation_about(&Vector3::new(theta, 0.0, 0.0));
        let dir = pose.rotation.column(2).into_owned();
        let y_axis = pose.rotation.column(1).into_owned();
        let d_pos = m.ray_cast(&(pose.translation + y_axis * r), &dir, 0.0, 0.3).unwrap();
        let d_neg = m.ray_cast(&(pose.translation - y_axis * r), &dir, 0.0, 0.3).unwrap();
        assert_relative_eq!((d_pos - d_neg).abs(), 2.0 * r * theta.tan(), epsilon = 1e-12);
    }

    #[test]
    fn contact_force_matches_spring_law() {
        let m = model();
        // sip pose is pressed to 3.5 N / 500 N/m = 7 mm.
        assert_relative_eq!(m.contact_force(m.sip_pose(), 0.0), 3.5, epsilon = 1e-9);
        let mut hovering = m.sip_pose().clone();
        hovering.translation.z = 0.01;
        assert_eq!(m.contact_force(&hovering, 0.0), 0.0);
        // Continuous through first touch.
        let mut grazing = m.sip_pose().clone();
        grazing.translation.z = -1e-9;
        assert!(m.contact_force(&grazing, 0.0) < 1e-5);
    }

    #[test]
    fn respiration_is_bounded_and_phased() {
        let m = model().with_respiration(0.0);
        let a = m.params().respiration_amplitude;
        for i in 0..100 {
            let t = i as f64 * 0.1;
            assert!(m.breath(t).abs() <= a + 1e-15);
        }
        // Quarter period of 0.25 Hz → peak.
        assert_relative_eq!(m.breath(1.0), a, epsilon = 1e-12);
    }

    #[test]
    fn masks_require_contact() {
        let m = model();
        let mut pose = m.sip_pose().clone();
        pose.translation.z = 0.01; // 10 mm above the skin
        let err = m.ground_truth_masks(&pose, &ImageSpec::default(), 0.0).unwrap_err();
        assert!(matches!(err, PhantomError::NoContact { .. }));
    }

    #[test]
    fn canonical_pose_sees_central_pleura_and_flanking_shadows() {
        let m = model();
        let spec = ImageSpec::default();
        let gt = m.ground_truth_masks(m.sip_pose(), &spec, 0.0).unwrap();
        assert!(gt.pleura.disjoint(&gt.shadow));

        // Center column: pleura band at ~pleura_depth − penetration below
        // the tip, no shadow.
        let u_mid = spec.width / 2;
        let expected_depth = m.params().pleura_depth - 0.007;
        let v_band = (expected_depth / spec.axial_pitch()) as usize;
        assert!((0..spec.height).any(|v| gt.pleura.get(u_mid, v)));
        assert!(gt.pleura.get(u_mid, v_band + 1) || gt.pleura.get(u_mid, v_band));
        assert!(!(0..spec.height).any(|v| gt.shadow.get(u_mid, v)));

        // Column over the rib at +17.5 mm: shadow, no pleura.
        let u_over = ((0.0175 / spec.lateral_pitch()) + spec.width as f64 / 2.0) as usize - 1;
        assert!((0..spec.height).any(|v| gt.shadow.get(u_over, v)));
        assert!(!(0..spec.height).any(|v| gt.pleura.get(u_over, v)));
    }

    #[test]
    fn masks_are_periodic_in_rib_spacing_over_flat_plate() {
        let m = flat_model();
        let spec = ImageSpec::default();
        let d_rib = m.params().rib_spacing;
        for start in [0.0, 0.004, -0.011] {
            let a = m.ground_truth_masks(&offset_pose(&m, start), &spec, 0.0).unwrap();
            let b = m
                .ground_truth_masks(&offset_pose(&m, start + d_rib), &spec, 0.0)
                .unwrap();
            assert_eq!(a, b, "masks must be pixel-identical one rib period apart");
        }
    }

    #[test]
    fn half_period_offsets_give_the_over_rib_layout_on_either_side() {
        let m = flat_model();
        let spec = ImageSpec::default();
        let half = m.params().rib_spacing / 2.0;
        let a = m.ground_truth_masks(&offset_pose(&m, half), &spec, 0.0).unwrap();
        let b = m.ground_truth_masks(&offset_pose(&m, -half), &spec, 0.0).unwrap();
        assert_eq!(a, b);
        // Over a rib: central shadow column, pleura split to the sides.
        let u_mid = spec.width / 2;
        assert!((0..spec.height).any(|v| a.shadow.get(u_mid, v)));
        assert!(!(0..spec.height).any(|v| a.pleura.get(u_mid, v)));
        assert!((0..spec.height).any(|v| a.pleura.get(10, v)));
    }

    #[test]
    fn masks_stay_disjoint_across_poses() {
        for m in [model(), flat_model()] {
            let spec = ImageSpec::default();
            for i in 0..10 {
                let pose = offset_pose(&m, -0.02 + 0.004 * i as f64);
                let gt = m.ground_truth_masks(&pose, &spec, 0.3 * i as f64).unwrap();
                assert!(gt.pleura.disjoint(&gt.shadow));
            }
        }
    }

    #[test]
    fn render_is_bit_identical_for_same_seed() {
        let m = model();
        let spec = ImageSpec::default();
        let a = m.render_frame(m.sip_pose(), &spec, 0.0, 7).unwrap();
        let b = m.render_frame(m.sip_pose(), &spec, 0.0, 7).unwrap();
        assert_eq!(a.image, b.image);
        let c = m.render_frame(m.sip_pose(), &spec, 0.0, 8).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn rendered_pleura_is_far_brighter_than_surroundings() {
        let m = model();
        let spec = ImageSpec::default();
        let gt = m.ground_truth_masks(m.sip_pose(), &spec, 0.0).unwrap();
        let frame = m.render_frame(m.sip_pose(), &spec, 0.0, 3).unwrap();
        let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for ((u, v), px) in frame.image.enumerate() {
            if gt.pleura.get(u, v) {
                sum_in += px as f64;
                n_in += 1;
            } else {
                sum_out += px as f64;
                n_out += 1;
            }
        }
        let contrast = sum_in / n_in as f64 - sum_out / n_out as f64;
        assert!(contrast >= 100.0, "pleura contrast {contrast}");
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let bad = PhantomParams { rib_spacing: 0.01, ..PhantomParams::default() };
        assert!(PhantomModel::new(bad).is_err());
        let bad = PhantomParams { pleura_depth: 0.005, ..PhantomParams::default() };
        assert!(PhantomModel::new(bad).is_err());
        let spec = ImageSpec { width: 8, ..ImageSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn pixel_pitch_examples() {
        // 0.08 m over 256 px → 0.3125 mm/px; 0.10 m over 256 px → 0.390625.
        let spec = ImageSpec { width: 256, height: 256, depth: 0.10, lateral_width: 0.08 };
        assert_relative_eq!(spec.lateral_pitch(), 0.0003125, epsilon = 1e-18);
        assert_relative_eq!(spec.axial_pitch(), 0.000390625, epsilon = 1e-18);
        assert_relative_eq!(25.6 * spec.lateral_pitch(), 0.008, epsilon = 1e-15);
        assert_relative_eq!(25.6 * spec.axial_pitch(), 0.01, epsilon = 1e-15);
    }
}
