//! Paired-point rigid registration, marker-layout pose estimation and the
//! CT-to-patient registration chain.

use nalgebra::{Matrix3, Matrix3xX, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose_chain, invert, FrameId, FramedTransform, RigidTransform};

/// Relative tolerance on the second principal extent of a point set below
/// which it is treated as collinear.
pub const COLLINEAR_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult {
    /// Maps model coordinates (`to`) into observed coordinates (`from`).
    pub xf: FramedTransform,
    pub fre_rms: f64,
}

fn centroid(points: &[Point3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / points.len() as f64
}

/// Principal extents (singular values of the centered coordinates), largest
/// first.
fn principal_extents(points: &[Point3<f64>]) -> Vector3<f64> {
    let c = centroid(points);
    let m = Matrix3xX::from_iterator(
        points.len(),
        points.iter().flat_map(|p| {
            let d = p.coords - c;
            [d.x, d.y, d.z]
        }),
    );
    let mut s: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    s.resize(3, 0.0);
    s.sort_by(|a, b| b.total_cmp(a));
    Vector3::new(s[0], s[1], s[2])
}

pub fn is_collinear(points: &[Point3<f64>]) -> bool {
    let s = principal_extents(points);
    s[0] <= f64::EPSILON || s[1] <= COLLINEAR_TOLERANCE * s[0]
}

/// Least-squares rigid alignment of corresponding point sets (SVD absolute
/// orientation with a reflection guard).
///
/// The returned transform is tagged `observed_frame → model_frame`, i.e. it
/// maps model coordinates into the observed frame.
pub fn paired_point_register(
    model: &[Point3<f64>],
    observed: &[Point3<f64>],
    observed_frame: FrameId,
    model_frame: FrameId,
) -> Result<RegistrationResult> {
    if model.len() != observed.len() {
        return Err(Error::LengthMismatch {
            left: model.len(),
            right: observed.len(),
        });
    }
    if model.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: model.len(),
        });
    }
    if is_collinear(model) {
        return Err(Error::DegenerateConfiguration(
            "model points are collinear".into(),
        ));
    }

    let mc = centroid(model);
    let oc = centroid(observed);
    let cross_cov = model
        .iter()
        .zip(observed)
        .fold(Matrix3::zeros(), |acc, (m, o)| {
            acc + (m.coords - mc) * (o.coords - oc).transpose()
        });
    let svd = cross_cov.svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = nalgebra::UnitQuaternion::from_matrix(&rotation);
    let translation = oc - rotation * mc;
    let xf = RigidTransform::new(rotation, translation);

    let fre_rms = (model
        .iter()
        .zip(observed)
        .map(|(m, o)| (xf.transform_point(m) - o).norm_squared())
        .sum::<f64>()
        / model.len() as f64)
        .sqrt();

    Ok(RegistrationResult {
        xf: FramedTransform::new(observed_frame, model_frame, xf),
        fre_rms,
    })
}

/// Named marker positions in a rigid body's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerLayout {
    pub name: String,
    pub markers: Vec<(String, Point3<f64>)>,
}

/// Default minimum gap between any two inter-marker distances of a layout.
pub const DEFAULT_DISTANCE_SEPARATION: f64 = 3.0;

impl MarkerLayout {
    pub fn new(name: impl Into<String>, markers: Vec<(String, Point3<f64>)>) -> Result<Self> {
        Self::with_separation(name, markers, DEFAULT_DISTANCE_SEPARATION)
    }

    pub fn with_separation(
        name: impl Into<String>,
        markers: Vec<(String, Point3<f64>)>,
        separation: f64,
    ) -> Result<Self> {
        if markers.len() < 3 {
            return Err(Error::InsufficientData {
                needed: 3,
                got: markers.len(),
            });
        }
        let layout = Self {
            name: name.into(),
            markers,
        };
        if is_collinear(&layout.points()) {
            return Err(Error::DegenerateConfiguration(
                "marker layout is collinear".into(),
            ));
        }
        let mut dists = layout.pair_distances();
        dists.sort_by(|a, b| a.2.total_cmp(&b.2));
        for w in dists.windows(2) {
            if w[1].2 - w[0].2 < separation {
                return Err(Error::DegenerateConfiguration(format!(
                    "inter-marker distances {:.2} and {:.2} mm are closer than {separation} mm",
                    w[0].2, w[1].2
                )));
            }
        }
        Ok(layout)
    }

    pub fn points(&self) -> Vec<Point3<f64>> {
        self.markers.iter().map(|(_, p)| *p).collect()
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    fn pair_distances(&self) -> Vec<(usize, usize, f64)> {
        let pts = self.points();
        let mut out = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                out.push((i, j, (pts[i] - pts[j]).norm()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CorrespondenceOptions {
    /// Maximum disagreement between a layout distance and a detection
    /// distance for the pair to be considered consistent, mm.
    pub tolerance: f64,
    /// Detections left unassigned before the frame is declared a tracking
    /// failure.
    pub max_unmatched: usize,
    pub min_matches: usize,
}

impl Default for CorrespondenceOptions {
    fn default() -> Self {
        Self {
            tolerance: 1.5,
            max_unmatched: 4,
            min_matches: 3,
        }
    }
}

struct Search {
    layout_dist: Vec<Vec<f64>>,
    det_dist: Vec<Vec<f64>>,
    tolerance: f64,
    assignment: Vec<Option<usize>>,
    used: Vec<bool>,
    best_count: usize,
    best: Vec<Vec<Option<usize>>>,
}

impl Search {
    fn run(&mut self, idx: usize, count: usize) {
        let n_layout = self.layout_dist.len();
        if count + (n_layout - idx) < self.best_count {
            return;
        }
        if idx == n_layout {
            if count > self.best_count {
                self.best_count = count;
                self.best.clear();
            }
            if count == self.best_count {
                self.best.push(self.assignment.clone());
            }
            return;
        }
        for det in 0..self.det_dist.len() {
            if self.used[det] || !self.consistent(idx, det) {
                continue;
            }
            self.used[det] = true;
            self.assignment[idx] = Some(det);
            self.run(idx + 1, count + 1);
            self.assignment[idx] = None;
            self.used[det] = false;
        }
        // marker `idx` occluded
        self.run(idx + 1, count);
    }

    fn consistent(&self, idx: usize, det: usize) -> bool {
        self.assignment[..idx]
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|d| (i, d)))
            .all(|(i, d)| (self.layout_dist[idx][i] - self.det_dist[det][d]).abs() < self.tolerance)
    }
}

fn distance_table(points: &[Point3<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| points.iter().map(|q| (p - q).norm()).collect())
        .collect()
}

/// Union of maximal matches that never pair a marker or a detection
/// differently. Such candidates only disagree on which marginal pair to
/// drop, which happens when noise pushes one distance past the tolerance.
fn merge_compatible(candidates: &[Vec<Option<usize>>]) -> Option<Vec<Option<usize>>> {
    let mut merged = candidates.first()?.clone();
    for cand in &candidates[1..] {
        for (slot, d) in merged.iter_mut().zip(cand) {
            match (*slot, *d) {
                (Some(a), Some(b)) if a != b => return None,
                (None, Some(b)) => *slot = Some(b),
                _ => {}
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    merged.iter().flatten().all(|d| seen.insert(*d)).then_some(merged)
}

/// Identifies which detection belongs to which layout marker by matching
/// inter-point distances, then registers the matched pairs.
///
/// Detections are unordered and may contain spurious points or miss
/// markers. The match with the most consistent pairs wins; two distinct
/// maximal matches that conflict are reported as ambiguous.
pub fn pose_from_markers(
    layout: &MarkerLayout,
    detections: &[Point3<f64>],
    observer: FrameId,
    body: FrameId,
    options: &CorrespondenceOptions,
) -> Result<RegistrationResult> {
    let min_matches = options.min_matches.max(3);
    if detections.len() < min_matches {
        return Err(Error::TrackingFailure {
            matched: 0,
            required: min_matches,
        });
    }
    let mut search = Search {
        layout_dist: distance_table(&layout.points()),
        det_dist: distance_table(detections),
        tolerance: options.tolerance,
        assignment: vec![None; layout.len()],
        used: vec![false; detections.len()],
        best_count: min_matches,
        best: Vec::new(),
    };
    search.run(0, 0);

    let matched = search.best.first().map_or(0, |a| a.iter().flatten().count());
    if matched < min_matches {
        return Err(Error::TrackingFailure {
            matched,
            required: min_matches,
        });
    }
    let assignment = merge_compatible(&search.best).ok_or(Error::AmbiguousCorrespondence {
        candidates: search.best.len(),
        matched,
    })?;
    let matched = assignment.iter().flatten().count();
    if detections.len() - matched > options.max_unmatched {
        return Err(Error::TrackingFailure {
            matched,
            required: detections.len() - options.max_unmatched,
        });
    }

    let (model, observed): (Vec<_>, Vec<_>) = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|d| (layout.markers[i].1, detections[d])))
        .unzip();
    paired_point_register(&model, &observed, observer, body)
}

/// Chains tracker observations of the patient array and CT machine with
/// the machine-to-image calibration: `F^P_I = (F^T_P)⁻¹ · F^T_M · F^M_I`.
pub fn ct_register(
    f_tp: &FramedTransform,
    f_tm: &FramedTransform,
    f_mi: &FramedTransform,
) -> Result<FramedTransform> {
    f_tp.expect_frames(FrameId::Tracker, FrameId::Patient)?;
    f_tm.expect_frames(FrameId::Tracker, FrameId::Machine)?;
    f_mi.expect_frames(FrameId::Machine, FrameId::Image)?;
    compose_chain(&[&invert(f_tp), f_tm, f_mi])
}

/// On-disk marker layout: `{"name": str, "points": {"m1": [x,y,z], ...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkerLayoutFile {
    pub name: String,
    pub points: std::collections::BTreeMap<String, [f64; 3]>,
}

impl TryFrom<MarkerLayoutFile> for MarkerLayout {
    type Error = Error;

    fn try_from(file: MarkerLayoutFile) -> Result<Self> {
        let markers = file
            .points
            .into_iter()
            .map(|(k, p)| (k, Point3::from(p)))
            .collect();
        MarkerLayout::new(file.name, markers)
    }
}

impl From<&MarkerLayout> for MarkerLayoutFile {
    fn from(layout: &MarkerLayout) -> Self {
        Self {
            name: layout.name.clone(),
            points: layout
                .markers
                .iter()
                .map(|(k, p)| (k.clone(), [p.x, p.y, p.z]))
                .collect(),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::geometry::testutil::random_transform;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const T: FrameId = FrameId::Tracker;
    const M: FrameId = FrameId::Machine;

    fn noise<R: Rng>(rng: &mut R, sigma: f64) -> Vector3<f64> {
        Vector3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn identity_registration() {
        let pts = seven_points();
        let r = paired_point_register(&pts, &pts, T, M).unwrap();
        assert_relative_eq!(r.xf.xf.to_homogeneous(), Matrix4::identity(), epsilon = 1e-12);
        assert!(r.fre_rms < 1e-12);
        assert_eq!((r.xf.from, r.xf.to), (T, M));
    }

    #[test]
    fn recovers_random_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let pts = seven_points();
        for _ in 0..200 {
            let g = random_transform(&mut rng, 1000.0);
            let obs: Vec<_> = pts.iter().map(|p| g.transform_point(p)).collect();
            let r = paired_point_register(&pts, &obs, T, M).unwrap();
            assert!((r.xf.xf.translation() - g.translation()).norm() < 1e-9);
            assert!(r.xf.xf.rotation().angle_to(g.rotation()) < 1e-9);
        }
    }

    #[test]
    fn fre_follows_dof_prediction() {
        // E[FRE²] = σ²(3N − 6)/N for per-axis noise σ.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts = seven_points();
        let sigma = 0.3;
        let reps = 2000;
        let mut acc = 0.0;
        for _ in 0..reps {
            let g = random_transform(&mut rng, 500.0);
            let obs: Vec<_> = pts
                .iter()
                .map(|p| g.transform_point(p) + noise(&mut rng, sigma))
                .collect();
            acc += paired_point_register(&pts, &obs, T, M).unwrap().fre_rms.powi(2);
        }
        let fre = (acc / reps as f64).sqrt();
        let expected = sigma * (3.0 - 6.0 / 7.0f64).sqrt();
        assert!((fre - expected).abs() / expected < 0.05, "{fre} vs {expected}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let pts = seven_points();
        assert!(matches!(
            paired_point_register(&pts, &pts[..6], T, M),
            Err(Error::LengthMismatch { left: 7, right: 6 })
        ));
        let line: Vec<_> = (0..4).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            paired_point_register(&line, &line, T, M),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn layout_validation() {
        assert!(MarkerLayout::new(
            "sym",
            vec![
                ("a".into(), Point3::new(0.0, 0.0, 0.0)),
                ("b".into(), Point3::new(10.0, 0.0, 0.0)),
                ("c".into(), Point3::new(5.0, 8.66, 0.0)),
            ],
        )
        .is_err());
        assert!(MarkerLayout::new(
            "line",
            vec![
                ("a".into(), Point3::new(0.0, 0.0, 0.0)),
                ("b".into(), Point3::new(10.0, 0.0, 0.0)),
                ("c".into(), Point3::new(30.0, 0.0, 0.0)),
            ],
        )
        .is_err());
    }

    #[test]
    fn permuted_detections_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let layout = five_marker_layout();
        for _ in 0..100 {
            let g = random_transform(&mut rng, 800.0);
            let mut det: Vec<_> = layout.points().iter().map(|p| g.transform_point(p)).collect();
            det.shuffle(&mut rng);
            let r = pose_from_markers(&layout, &det, FrameId::Hmd, FrameId::Cannula, &Default::default()).unwrap();
            assert!((r.xf.xf.translation() - g.translation()).norm() < 1e-9);
            assert!(r.xf.xf.rotation().angle_to(g.rotation()) < 1e-9);
        }
    }

    #[test]
    fn missing_marker_still_tracks() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let layout = five_marker_layout();
        for drop in 0..5 {
            let g = random_transform(&mut rng, 800.0);
            let mut det: Vec<_> = layout.points().iter().map(|p| g.transform_point(p)).collect();
            det.remove(drop);
            det.shuffle(&mut rng);
            let r = pose_from_markers(&layout, &det, FrameId::Hmd, FrameId::Cannula, &Default::default()).unwrap();
            assert!((r.xf.xf.translation() - g.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn spurious_detection_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let layout = five_marker_layout();
        let g = random_transform(&mut rng, 800.0);
        let mut det: Vec<_> = layout
            .points()
            .iter()
            .map(|p| g.transform_point(p) + noise(&mut rng, 0.2))
            .collect();
        det.push(g.transform_point(&Point3::new(400.0, -300.0, 20.0)));
        det.shuffle(&mut rng);
        let r = pose_from_markers(&layout, &det, FrameId::Hmd, FrameId::Cannula, &Default::default()).unwrap();
        assert!((r.xf.xf.translation() - g.translation()).norm() < 2.0);
        assert!(r.fre_rms < 1.0);
    }

    #[test]
    fn two_detections_fail_tracking() {
        let layout = five_marker_layout();
        let det = &layout.points()[..2];
        assert!(matches!(
            pose_from_markers(&layout, det, FrameId::Hmd, FrameId::Cannula, &Default::default()),
            Err(Error::TrackingFailure { .. })
        ));
    }

    #[test]
    fn ambiguous_subset_is_reported() {
        // Three detections forming a triangle congruent to two different
        // triples is impossible for a valid layout, so loosen the tolerance
        // until distances stop being distinguishable.
        let layout = five_marker_layout();
        let det: Vec<_> = layout.points()[..3].to_vec();
        let loose = CorrespondenceOptions {
            tolerance: 200.0,
            ..Default::default()
        };
        assert!(matches!(
            pose_from_markers(&layout, &det, FrameId::Hmd, FrameId::Cannula, &loose),
            Err(Error::AmbiguousCorrespondence { .. })
        ));
    }

    #[test]
    fn ct_chain_cases() {
        let id = |a, b| FramedTransform::new(a, b, RigidTransform::identity());
        let pi = ct_register(&id(T, FrameId::Patient), &id(T, M), &id(M, FrameId::Image)).unwrap();
        assert_eq!((pi.from, pi.to), (FrameId::Patient, FrameId::Image));
        assert_relative_eq!(pi.xf.to_homogeneous(), Matrix4::identity());

        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let tp = FramedTransform::new(T, FrameId::Patient, random_transform(&mut rng, 900.0));
        let tm = FramedTransform::new(T, M, random_transform(&mut rng, 900.0));
        let mi = FramedTransform::new(M, FrameId::Image, random_transform(&mut rng, 300.0));
        let pi = ct_register(&tp, &tm, &mi).unwrap();
        let oracle = tp.xf.to_homogeneous().try_inverse().unwrap() * tm.xf.to_homogeneous() * mi.xf.to_homogeneous();
        assert_relative_eq!(pi.xf.to_homogeneous(), oracle, epsilon = 1e-9);

        let mt = invert(&tm);
        assert!(matches!(ct_register(&tp, &mt, &mi), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn layout_file_round_trip() {
        let layout = five_marker_layout();
        let json = serde_json::to_string(&MarkerLayoutFile::from(&layout)).unwrap();
        let back: MarkerLayout = serde_json::from_str::<MarkerLayoutFile>(&json).unwrap().try_into().unwrap();
        assert_eq!(back, layout);
    }

    proptest! {
        #[test]
        fn left_equivariance_and_fre_invariance(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = seven_points();
            let obs: Vec<_> = pts.iter().map(|p| p + noise(&mut rng, 0.5)).collect();
            let base = paired_point_register(&pts, &obs, T, M).unwrap();
            let g = random_transform(&mut rng, 500.0);
            let moved: Vec<_> = obs.iter().map(|p| g.transform_point(p)).collect();
            let r = paired_point_register(&pts, &moved, T, M).unwrap();
            let expected = g.compose(&base.xf.xf);
            prop_assert!((r.xf.xf.to_homogeneous() - expected.to_homogeneous()).abs().max() < 1e-8);
            prop_assert!((r.fre_rms - base.fre_rms).abs() < 1e-9);

            let h = random_transform(&mut rng, 500.0);
            let both_m: Vec<_> = pts.iter().map(|p| h.transform_point(p)).collect();
            let both_o: Vec<_> = obs.iter().map(|p| h.transform_point(p)).collect();
            let r2 = paired_point_register(&both_m, &both_o, T, M).unwrap();
            prop_assert!((r2.fre_rms - base.fre_rms).abs() < 1e-9);
        }

        #[test]
        fn detection_order_does_not_matter(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layout = five_marker_layout();
            let g = random_transform(&mut rng, 800.0);
            let det: Vec<_> = layout.points().iter().map(|p| g.transform_point(p) + noise(&mut rng, 0.3)).collect();
            let a = pose_from_markers(&layout, &det, FrameId::Hmd, FrameId::Cannula, &Default::default()).unwrap();
            let mut shuffled = det.clone();
            shuffled.shuffle(&mut rng);
            let b = pose_from_markers(&layout, &shuffled, FrameId::Hmd, FrameId::Cannula, &Default::default()).unwrap();
            prop_assert_eq!(a.xf, b.xf);
            prop_assert_eq!(a.fre_rms, b.fre_rms);
        }
    }
}
