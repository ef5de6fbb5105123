//! Anatomical feature map: a per-class template of landmark centroids at the
//! target imaging plane, brute-force assignment of query instances onto the
//! template, and the metric visual error that drives the servo loop.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{extract_instances, Instance, LandmarkClass, SemanticMask};
use crate::phantom::{GroundTruth, ImageSpec};

/// Template classes never hold more instances than this; a lung view shows
/// at most one pleural segment and a handful of rib shadows.
pub const MAX_TEMPLATE_INSTANCES: usize = 4;

/// Query areas within this fraction of the smallest are treated as tied
/// when dropping excess instances.
const AREA_TIE_FRACTION: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum AfmError {
    #[error("template holds no {0:?} centroids")]
    EmptyTemplateClass(LandmarkClass),
    #[error("no {0:?} instances in the query")]
    EmptyQueryClass(LandmarkClass),
    #[error("{class:?}: {query} query instances exceed {template} template slots; drop excess first")]
    ExcessInstances { class: LandmarkClass, query: usize, template: usize },
    #[error("{0} instances exceed the supported maximum of {MAX_TEMPLATE_INSTANCES}")]
    TooManyInstances(usize),
    #[error("a template requires at least one pleural-line instance")]
    MissingPleura,
}

/// Expected landmark centroids (px) at the target plane, with the image
/// geometry they were measured in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub image: ImageSpec,
    pub pleural_line: Vec<(f64, f64)>,
    pub rib_shadow: Vec<(f64, f64)>,
}

impl Template {
    pub fn of_class(&self, class: LandmarkClass) -> &[(f64, f64)] {
        match class {
            LandmarkClass::PleuralLine => &self.pleural_line,
            LandmarkClass::RibShadow => &self.rib_shadow,
        }
    }

    pub fn validate(&self) -> Result<(), AfmError> {
        if self.pleural_line.is_empty() {
            return Err(AfmError::MissingPleura);
        }
        for class in [LandmarkClass::PleuralLine, LandmarkClass::RibShadow] {
            let n = self.of_class(class).len();
            if n > MAX_TEMPLATE_INSTANCES {
                return Err(AfmError::TooManyInstances(n));
            }
        }
        Ok(())
    }
}

/// Result of matching one class: each query centroid is assigned a distinct
/// template centroid; descriptors are the geometric centers of the matched
/// sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub class: LandmarkClass,
    /// Selected template index for each query centroid.
    pub template_indices: Vec<usize>,
    /// Selected template centroids, in query order.
    pub matched_template: Vec<(f64, f64)>,
    pub query: Vec<(f64, f64)>,
    /// Sum of per-pair Euclidean distances, px.
    pub cost: f64,
    pub query_descriptor: (f64, f64),
    pub template_descriptor: (f64, f64),
}

impl Pairing {
    /// Descriptor separation in pixels; the servo convergence check runs on
    /// the maximum of this across classes.
    pub fn pixel_distance(&self) -> f64 {
        let du = self.query_descriptor.0 - self.template_descriptor.0;
        let dv = self.query_descriptor.1 - self.template_descriptor.1;
        (du * du + dv * dv).sqrt()
    }
}

/// Metric alignment error of one landmark class in the probe frame. The
/// image is planar, so the elevational component is always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualError {
    pub class: LandmarkClass,
    /// (e_x, 0, e_z), m: positive e_x means the feature sits on the +x side
    /// of its target.
    pub e: Vector3<f64>,
}

/// Matches `query` centroids onto `template` centroids of one class by
/// exhaustive enumeration of all ordered template selections, minimizing the
/// summed centroid distance. Ties pick the lexicographically smallest
/// template-index sequence.
pub fn match_class(
    template: &[(f64, f64)],
    query: &[(f64, f64)],
    class: LandmarkClass,
) -> Result<Pairing, AfmError> {
    if template.is_empty() {
        return Err(AfmError::EmptyTemplateClass(class));
    }
    if template.len() > MAX_TEMPLATE_INSTANCES {
        return Err(AfmError::TooManyInstances(template.len()));
    }
    if query.is_empty() {
        return Err(AfmError::EmptyQueryClass(class));
    }
    if query.len() > template.len() {
        return Err(AfmError::ExcessInstances {
            class,
            query: query.len(),
            template: template.len(),
        });
    }
    let (indices, cost, _) = best_selection(query, template);
    let matched: Vec<(f64, f64)> = indices.iter().map(|&i| template[i]).collect();
    Ok(Pairing {
        class,
        query_descriptor: mean_point(query),
        template_descriptor: mean_point(&matched),
        matched_template: matched,
        query: query.to_vec(),
        cost,
        template_indices: indices,
    })
}

/// Exhaustive search over ordered template selections; returns the best
/// index sequence, its cost, and the number of candidates visited
/// (N!/(N−n)!). Candidates are generated in lexicographic index order and
/// only a strictly lower cost replaces the incumbent, so ties resolve to the
/// lexicographically smallest sequence.
pub(crate) fn best_selection(
    query: &[(f64, f64)],
    template: &[(f64, f64)],
) -> (Vec<usize>, f64, usize) {
    let mut used = vec![false; template.len()];
    let mut current = Vec::with_capacity(query.len());
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut candidates = 0usize;
    descend(query, template, &mut used, &mut current, 0.0, &mut best, &mut candidates);
    let (indices, cost) = best.expect("at least one selection exists when n ≤ N");
    (indices, cost, candidates)
}

fn descend(
    query: &[(f64, f64)],
    template: &[(f64, f64)],
    used: &mut [bool],
    current: &mut Vec<usize>,
    acc: f64,
    best: &mut Option<(Vec<usize>, f64)>,
    candidates: &mut usize,
) {
    let j = current.len();
    if j == query.len() {
        *candidates += 1;
        if best.as_ref().is_none_or(|(_, c)| acc < *c) {
            *best = Some((current.clone(), acc));
        }
        return;
    }
    for i in 0..template.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        current.push(i);
        let du = query[j].0 - template[i].0;
        let dv = query[j].1 - template[i].1;
        descend(query, template, used, current, acc + (du * du + dv * dv).sqrt(), best, candidates);
        current.pop();
        used[i] = false;
    }
}

fn mean_point(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len().max(1) as f64;
    let (su, sv) = points.iter().fold((0.0, 0.0), |(su, sv), p| (su + p.0, sv + p.1));
    (su / n, sv / n)
}

/// Drops excess query instances of one class until at most `slots` remain.
/// The smallest-area instance goes first; areas within 10 % of the minimum
/// count as tied, and among tied instances the one whose centroid depth is
/// farthest from any template centroid is dropped — spurious segments sit at
/// anatomically implausible depths even when areas tie exactly.
pub fn reduce_query<'a>(
    query: &[&'a Instance],
    template: &[(f64, f64)],
) -> Vec<&'a Instance> {
    let mut kept: Vec<&Instance> = query.to_vec();
    while kept.len() > template.len() {
        let min_area = kept.iter().map(|i| i.area).min().expect("non-empty") as f64;
        let tier: Vec<usize> = (0..kept.len())
            .filter(|&k| (kept[k].area as f64) <= min_area * (1.0 + AREA_TIE_FRACTION))
            .collect();
        let drop_at = if tier.len() == 1 {
            tier[0]
        } else {
            *tier
                .iter()
                .max_by(|&&a, &&b| {
                    let da = axial_mismatch(kept[a], template);
                    let db = axial_mismatch(kept[b], template);
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .expect("tier non-empty")
        };
        kept.remove(drop_at);
    }
    kept
}

/// Depth distance (px) from an instance centroid to the nearest template
/// centroid of the same class.
fn axial_mismatch(instance: &Instance, template: &[(f64, f64)]) -> f64 {
    template
        .iter()
        .map(|t| (instance.centroid.1 - t.1).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Matches every template class present in both template and query; classes
/// absent from the query are skipped (the servo loop ignores them for that
/// frame).
pub fn match_landmarks(
    template: &Template,
    instances: &[Instance],
) -> Result<Vec<Pairing>, AfmError> {
    let mut out = Vec::new();
    for class in [LandmarkClass::PleuralLine, LandmarkClass::RibShadow] {
        let slots = template.of_class(class);
        if slots.is_empty() {
            continue;
        }
        let query: Vec<&Instance> = instances.iter().filter(|i| i.class == class).collect();
        if query.is_empty() {
            continue;
        }
        let kept = reduce_query(&query, slots);
        let centroids: Vec<(f64, f64)> = kept.iter().map(|i| i.centroid).collect();
        out.push(match_class(slots, &centroids, class)?);
    }
    Ok(out)
}

/// Converts a pairing's descriptor offset to a metric error in the probe
/// frame: image u is probe x, image v (depth) is probe z.
pub fn visual_error(pairing: &Pairing, spec: &ImageSpec) -> VisualError {
    let du = pairing.query_descriptor.0 - pairing.template_descriptor.0;
    let dv = pairing.query_descriptor.1 - pairing.template_descriptor.1;
    VisualError {
        class: pairing.class,
        e: Vector3::new(du * spec.lateral_pitch(), 0.0, dv * spec.axial_pitch()),
    }
}

/// Builds the template from ground-truth masks at the target plane.
pub fn build_template(
    gt: &GroundTruth,
    spec: &ImageSpec,
    min_area: usize,
) -> Result<Template, AfmError> {
    let mask = SemanticMask { pleura: gt.pleura.clone(), shadow: gt.shadow.clone() };
    let instances = extract_instances(&mask, min_area);
    let centroids = |class: LandmarkClass| -> Vec<(f64, f64)> {
        instances.iter().filter(|i| i.class == class).map(|i| i.centroid).collect()
    };
    let template = Template {
        image: *spec,
        pleural_line: centroids(LandmarkClass::PleuralLine),
        rib_shadow: centroids(LandmarkClass::RibShadow),
    };
    template.validate()?;
    Ok(template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{PhantomModel, PhantomParams};
    use approx::assert_relative_eq;
    use itertools::Itertools;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PL: LandmarkClass = LandmarkClass::PleuralLine;
    const RS: LandmarkClass = LandmarkClass::RibShadow;

    /// Oracle: evaluate every ordered selection via itertools and keep the
    /// minimum, mirroring the cost summation order.
    fn oracle_cost(template: &[(f64, f64)], query: &[(f64, f64)]) -> f64 {
        (0..template.len())
            .permutations(query.len())
            .map(|sel| {
                sel.iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let du = query[j].0 - template[i].0;
                        let dv = query[j].1 - template[i].1;
                        (du * du + dv * dv).sqrt()
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn single_query_picks_the_nearer_template_slot() {
        let template = [(64.0, 140.0), (192.0, 140.0)];
        let query = [(80.0, 150.0)];
        let pairing = match_class(&template, &query, RS).unwrap();
        assert_eq!(pairing.template_indices, vec![0]);
        assert_eq!(pairing.cost, 356.0_f64.sqrt());
        assert_relative_eq!(pairing.cost, 18.868, epsilon = 1e-3);
    }

    #[test]
    fn one_to_one_cost_is_the_point_distance() {
        let pairing = match_class(&[(10.0, 10.0)], &[(13.0, 14.0)], PL).unwrap();
        assert_eq!(pairing.cost, 5.0);
    }

    #[test]
    fn permuted_query_matches_exactly_with_zero_cost() {
        let template = [(64.0, 140.0), (192.0, 140.0), (128.0, 40.0)];
        let query = [(128.0, 40.0), (64.0, 140.0), (192.0, 140.0)];
        let pairing = match_class(&template, &query, RS).unwrap();
        assert_eq!(pairing.cost, 0.0);
        assert_eq!(pairing.template_indices, vec![2, 0, 1]);
        assert_eq!(pairing.query_descriptor, pairing.template_descriptor);
    }

    #[test]
    fn equidistant_tie_takes_the_smaller_template_index() {
        let template = [(90.0, 100.0), (110.0, 100.0)];
        let pairing = match_class(&template, &[(100.0, 100.0)], RS).unwrap();
        assert_eq!(pairing.template_indices, vec![0]);
    }

    #[test]
    fn input_contracts_are_enforced() {
        let t = [(0.0, 0.0), (1.0, 0.0)];
        assert_eq!(
            match_class(&t, &[(0.0, 0.0); 3], RS).unwrap_err(),
            AfmError::ExcessInstances { class: RS, query: 3, template: 2 }
        );
        assert_eq!(match_class(&[], &[(0.0, 0.0)], PL).unwrap_err(), AfmError::EmptyTemplateClass(PL));
        assert_eq!(match_class(&t, &[], RS).unwrap_err(), AfmError::EmptyQueryClass(RS));
        assert!(matches!(
            match_class(&[(0.0, 0.0); 5], &[(0.0, 0.0)], RS).unwrap_err(),
            AfmError::TooManyInstances(5)
        ));
    }

    #[test]
    fn matches_agree_with_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n_template = rng.gen_range(1..=4usize);
            let n_query = rng.gen_range(1..=n_template);
            let rand_pts = |rng: &mut ChaCha8Rng, n: usize| -> Vec<(f64, f64)> {
                (0..n).map(|_| (rng.gen_range(0.0..256.0), rng.gen_range(0.0..256.0))).collect()
            };
            let template = rand_pts(&mut rng, n_template);
            let query = rand_pts(&mut rng, n_query);
            let (_, cost, candidates) = best_selection(&query, &template);
            assert_eq!(cost, oracle_cost(&template, &query), "cost must equal the oracle exactly");
            let expected: usize = ((n_template - n_query + 1)..=n_template).product();
            assert_eq!(candidates, expected, "P(N,n) candidate count");
        }
    }

    #[test]
    fn translating_the_query_translates_error_linearly() {
        let template = [(64.0, 140.0), (192.0, 140.0)];
        let query = [(70.0, 150.0), (180.0, 135.0)];
        let spec = ImageSpec::default();
        let base = match_class(&template, &query, RS).unwrap();
        let e0 = visual_error(&base, &spec);
        let (du, dv) = (12.5, -7.25);
        let moved: Vec<(f64, f64)> = query.iter().map(|&(u, v)| (u + du, v + dv)).collect();
        let shifted = visual_error(&match_class(&template, &moved, RS).unwrap(), &spec);
        assert_relative_eq!(
            shifted.e.x - e0.e.x,
            du * spec.lateral_pitch(),
            epsilon = 1e-12
        );
        assert_relative_eq!(shifted.e.z - e0.e.z, dv * spec.axial_pitch(), epsilon = 1e-12);
        assert_eq!(shifted.e.y, 0.0);
    }

    #[test]
    fn pixel_offsets_convert_to_meters() {
        let spec = ImageSpec { width: 256, height: 256, depth: 0.10, lateral_width: 0.08 };
        let template = [(100.0, 100.0)];
        let lateral = match_class(&template, &[(125.6, 100.0)], PL).unwrap();
        assert_relative_eq!(visual_error(&lateral, &spec).e.x, 0.008, epsilon = 1e-15);
        let axial = match_class(&template, &[(100.0, 125.6)], PL).unwrap();
        assert_relative_eq!(visual_error(&axial, &spec).e.z, 0.01, epsilon = 1e-15);
        let aligned = match_class(&template, &[(100.0, 100.0)], PL).unwrap();
        assert_eq!(visual_error(&aligned, &spec).e, Vector3::zeros());
    }

    fn instance(class: LandmarkClass, area: usize, centroid: (f64, f64)) -> Instance {
        // Synthesize a compact pixel list with the desired area whose mean
        // equals the requested centroid exactly (all pixels identical).
        let pixels = vec![(centroid.0 as usize, centroid.1 as usize); area];
        let mut inst = Instance::new(class, pixels);
        inst.centroid = centroid;
        inst
    }

    #[test]
    fn excess_drop_removes_the_clearly_smallest() {
        let a = instance(PL, 300, (60.0, 46.0));
        let b = instance(PL, 40, (200.0, 46.0));
        let kept = reduce_query(&[&a, &b], &[(128.0, 46.0)]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].centroid, (60.0, 46.0));
    }

    #[test]
    fn tied_areas_drop_the_depth_outlier() {
        // Equal areas: keep the instance whose depth matches the template.
        let shallow = instance(PL, 100, (60.0, 45.0));
        let deep = instance(PL, 100, (200.0, 52.0));
        let kept = reduce_query(&[&shallow, &deep], &[(128.0, 46.0)]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].centroid, (60.0, 45.0));
        // Near-tied areas (within 10 %) behave the same.
        let shallow = instance(PL, 105, (60.0, 45.0));
        let kept = reduce_query(&[&shallow, &deep], &[(128.0, 46.0)]);
        assert_eq!(kept[0].centroid, (60.0, 45.0));
    }

    #[test]
    fn no_drop_when_counts_already_fit() {
        let a = instance(RS, 50, (16.0, 120.0));
        let b = instance(RS, 45, (240.0, 120.0));
        let kept = reduce_query(&[&a, &b], &[(16.0, 120.0), (240.0, 120.0)]);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn missing_class_skips_without_touching_the_other() {
        let template = Template {
            image: ImageSpec::default(),
            pleural_line: vec![(128.0, 46.0)],
            rib_shadow: vec![(16.0, 120.0), (240.0, 120.0)],
        };
        let pl = instance(PL, 900, (127.0, 46.5));
        let rs1 = instance(RS, 2000, (15.0, 121.0));
        let with_rs =
            match_landmarks(&template, &[pl.clone(), rs1.clone()]).unwrap();
        let without_rs = match_landmarks(&template, &[pl]).unwrap();
        assert_eq!(with_rs.len(), 2);
        assert_eq!(without_rs.len(), 1);
        assert_eq!(without_rs[0], with_rs[0]);
    }

    #[test]
    fn template_from_canonical_view_has_expected_structure() {
        let m = PhantomModel::new(PhantomParams::default()).unwrap();
        let spec = ImageSpec::default();
        let gt = m.ground_truth_masks(m.sip_pose(), &spec, 0.0).unwrap();
        let a = build_template(&gt, &spec, 20).unwrap();
        let b = build_template(&gt, &spec, 20).unwrap();
        assert_eq!(a, b, "template building is deterministic");
        assert_eq!(a.pleural_line.len(), 1);
        assert_eq!(a.rib_shadow.len(), 2);
        // Pleural descriptor sits on the image midline.
        assert_relative_eq!(a.pleural_line[0].0, (spec.width as f64 - 1.0) / 2.0, epsilon = 1.0);
    }

    #[test]
    fn template_json_round_trip_is_bit_exact() {
        let m = PhantomModel::new(PhantomParams::default()).unwrap();
        let spec = ImageSpec::default();
        let gt = m.ground_truth_masks(m.sip_pose(), &spec, 0.0).unwrap();
        let template = build_template(&gt, &spec, 20).unwrap();
        let json = serde_json::to_string_pretty(&template).unwrap();
        let parsed: Template = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, template);
        assert_eq!(serde_json::to_string_pretty(&parsed).unwrap(), json);
        // Unknown keys are rejected.
        let bad = json.replacen("\"image\"", "\"imagery\"", 1);
        assert!(serde_json::from_str::<Template>(&bad).is_err());
    }

    #[test]
    fn template_without_pleura_is_rejected() {
        let template = Template {
            image: ImageSpec::default(),
            pleural_line: vec![],
            rib_shadow: vec![(16.0, 120.0)],
        };
        assert_eq!(template.validate().unwrap_err(), AfmError::MissingPleura);
    }
}
