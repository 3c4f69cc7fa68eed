//! Touch-point error propagation through the two sides of the navigation
//! equation `F^W_H · F^H_C · p_tip = F^W_H · F^H_P · F^P_I · p_I`.

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{compose_chain, FrameId, FramedTransform, RigidTransform};
use crate::metrics::end_to_end_error;
use crate::simulation::config::NoiseBudget;
use crate::simulation::noise::{gaussian_vector, perturb};
use crate::simulation::synthetic::{random_rotation, random_transform};
use crate::simulation::{trial_rng, Execution};

/// Nominal (noise-free) geometry of a touch-point experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub f_wh: FramedTransform,
    pub f_hp: FramedTransform,
    pub f_pi: FramedTransform,
    /// Calibrated tip in the cannula frame.
    pub tip_offset: Point3<f64>,
    /// Tool pose while touching each landmark; nominally exact.
    pub f_hc: Vec<FramedTransform>,
    pub landmarks: Vec<Point3<f64>>,
}

impl Scene {
    /// Desk-scale layout: headset about half a metre from the patient array,
    /// pointer tip 150 mm from its marker body.
    pub fn nominal(landmarks: Vec<Point3<f64>>) -> Result<Self> {
        let f_wh = RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.4, -0.2, 1.1),
            Vector3::new(150.0, -320.0, 1450.0),
        );
        let f_hp = RigidTransform::new(
            UnitQuaternion::from_euler_angles(2.5, 0.3, -0.6),
            Vector3::new(40.0, 60.0, 480.0),
        );
        let f_pi = RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.05, -0.1, 0.2),
            Vector3::new(-70.0, 35.0, -90.0),
        );
        let tool_rot = UnitQuaternion::from_euler_angles(2.8, 0.25, 0.4);
        Self::build(f_wh, f_hp, f_pi, Point3::new(0.0, 0.0, 150.0), |_| tool_rot, landmarks)
    }

    /// Random chain and tool orientations, used for consistency checks.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, landmarks: usize) -> Result<Self> {
        let f_wh = random_transform(rng, 2000.0);
        let f_hp = random_transform(rng, 600.0);
        let f_pi = random_transform(rng, 200.0);
        let tip = Point3::from(gaussian_vector(rng, 100.0));
        let pts: Vec<_> = (0..landmarks).map(|_| Point3::from(gaussian_vector(rng, 60.0))).collect();
        let rots: Vec<_> = (0..landmarks).map(|_| random_rotation(rng)).collect();
        Self::build(f_wh, f_hp, f_pi, tip, |i| rots[i], pts)
    }

    fn build(
        f_wh: RigidTransform,
        f_hp: RigidTransform,
        f_pi: RigidTransform,
        tip_offset: Point3<f64>,
        tool_rotation: impl Fn(usize) -> UnitQuaternion<f64>,
        landmarks: Vec<Point3<f64>>,
    ) -> Result<Self> {
        if landmarks.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let f_wh = FramedTransform::new(FrameId::World, FrameId::Hmd, f_wh);
        let f_hp = FramedTransform::new(FrameId::Hmd, FrameId::Patient, f_hp);
        let f_pi = FramedTransform::new(FrameId::Patient, FrameId::Image, f_pi);
        let f_hi = compose_chain(&[&f_hp, &f_pi])?;
        // Tool pose that puts the tip exactly on each landmark.
        let f_hc = landmarks
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = tool_rotation(i);
                let target = f_hi.transform_point(p);
                let t = target.coords - r * tip_offset.coords;
                FramedTransform::new(FrameId::Hmd, FrameId::Cannula, RigidTransform::new(r, t))
            })
            .collect();
        Ok(Self {
            f_wh,
            f_hp,
            f_pi,
            tip_offset,
            f_hc,
            landmarks,
        })
    }

    /// Both sides of the navigation equation for one landmark.
    #[allow(clippy::too_many_arguments)]
    pub fn sides(
        &self,
        landmark: usize,
        f_wh_tool: &FramedTransform,
        f_hc: &FramedTransform,
        tip: &Point3<f64>,
        f_wh_patient: &FramedTransform,
        f_hp: &FramedTransform,
        f_pi: &FramedTransform,
        annotated: &Point3<f64>,
    ) -> Result<(Point3<f64>, Point3<f64>)> {
        debug_assert!(landmark < self.landmarks.len());
        let tool = compose_chain(&[f_wh_tool, f_hc])?.transform_point(tip);
        let image = compose_chain(&[f_wh_patient, f_hp, f_pi])?.transform_point(annotated);
        Ok((tool, image))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct E2eSummary {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub landmarks: usize,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Per trial: the pivot calibration and CT registration are drawn once;
/// every touch draws its own SLAM, tool-tracking, patient-tracking and
/// annotation noise. The two sides of the equation use independent SLAM
/// draws because tool and patient are observed at different instants.
fn run_trial(scene: &Scene, budget: &NoiseBudget, seed: u64, trial: usize) -> Result<Vec<f64>> {
    let mut rng = trial_rng(seed, 0, trial);
    let tip = scene.tip_offset + gaussian_vector(&mut rng, budget.pivot_mm);
    let f_pi = perturb(&scene.f_pi, budget.ctreg_trans_mm, budget.ctreg_rot_deg, &mut rng);
    (0..scene.landmarks.len())
        .map(|l| {
            let wh_tool = perturb(&scene.f_wh, budget.slam_trans_mm, budget.slam_rot_deg, &mut rng);
            let wh_patient = perturb(&scene.f_wh, budget.slam_trans_mm, budget.slam_rot_deg, &mut rng);
            let f_hc = perturb(&scene.f_hc[l], budget.tool_track_trans_mm, budget.tool_track_rot_deg, &mut rng);
            let f_hp = perturb(&scene.f_hp, budget.patient_track_trans_mm, budget.patient_track_rot_deg, &mut rng);
            let annotated = scene.landmarks[l] + gaussian_vector(&mut rng, budget.annotation_mm);
            let (a, b) = scene.sides(l, &wh_tool, &f_hc, &tip, &wh_patient, &f_hp, &f_pi, &annotated)?;
            Ok(end_to_end_error(&a, &b))
        })
        .collect()
}

/// Mean and sample std over all trial × landmark errors. Samples are
/// ordered by trial, then landmark.
pub fn simulate_e2e(scene: &Scene, budget: &NoiseBudget, trials: usize, seed: u64, exec: Execution) -> Result<E2eSummary> {
    if trials < 1 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let per_trial: Vec<Vec<f64>> = match exec {
        Execution::Serial => (0..trials).map(|i| run_trial(scene, budget, seed, i)).collect::<Result<_>>()?,
        Execution::Parallel => (0..trials)
            .into_par_iter()
            .map(|i| run_trial(scene, budget, seed, i))
            .collect::<Result<_>>()?,
    };
    let samples: Vec<f64> = per_trial.into_iter().flatten().collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = if samples.len() > 1 {
        (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(E2eSummary {
        mean,
        std,
        trials,
        landmarks: scene.landmarks.len(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ks_two_sample;
    use crate::simulation::config::StudyConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_landmark() -> Scene {
        Scene::nominal(vec![Point3::new(10.0, -20.0, 30.0)]).unwrap()
    }

    #[test]
    fn zero_budget_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        for _ in 0..20 {
            let scene = Scene::random(&mut rng, 5).unwrap();
            let s = simulate_e2e(&scene, &NoiseBudget::default(), 5, 1, Execution::Serial).unwrap();
            assert!(s.samples.iter().all(|e| *e < 1e-9));
            assert!(s.mean < 1e-9 && s.std < 1e-9);
        }
    }

    #[test]
    fn pivot_only_mean_is_chi_three() {
        let sigma = 0.4;
        let budget = NoiseBudget { pivot_mm: sigma, ..Default::default() };
        let s = simulate_e2e(&one_landmark(), &budget, 20_000, 3, Execution::Parallel).unwrap();
        let expected = sigma * (8.0 / std::f64::consts::PI).sqrt();
        assert!((s.mean / expected - 1.0).abs() < 0.02, "{} vs {expected}", s.mean);
    }

    fn direct<F: FnMut(&mut ChaCha8Rng) -> f64>(n: usize, mut f: F) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        (0..n).map(|_| f(&mut rng)).collect()
    }

    fn assert_ks_equivalent(budget: NoiseBudget, reference: Vec<f64>) {
        let s = simulate_e2e(&one_landmark(), &budget, 10_000, 4, Execution::Parallel).unwrap();
        let p = ks_two_sample(&s.samples, &reference).unwrap().p_value;
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn single_component_distributions() {
        let n = 10_000;
        assert_ks_equivalent(
            NoiseBudget { pivot_mm: 0.5, ..Default::default() },
            direct(n, |r| gaussian_vector(r, 0.5).norm()),
        );
        assert_ks_equivalent(
            NoiseBudget { annotation_mm: 0.8, ..Default::default() },
            direct(n, |r| gaussian_vector(r, 0.8).norm()),
        );
        assert_ks_equivalent(
            NoiseBudget { patient_track_trans_mm: 0.6, ..Default::default() },
            direct(n, |r| gaussian_vector(r, 0.6).norm()),
        );
        assert_ks_equivalent(
            NoiseBudget { slam_trans_mm: 0.7, ..Default::default() },
            direct(n, |r| (gaussian_vector(r, 0.7) - gaussian_vector(r, 0.7)).norm()),
        );
    }

    #[test]
    fn serial_and_parallel_agree() {
        let cfg = StudyConfig::default();
        let scene = Scene::nominal(cfg.e2e.landmarks()).unwrap();
        let a = simulate_e2e(&scene, &cfg.budget, 300, 9, Execution::Serial).unwrap();
        let b = simulate_e2e(&scene, &cfg.budget, 300, 9, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_budget_in_band() {
        let cfg = StudyConfig::default();
        let scene = Scene::nominal(cfg.e2e.landmarks()).unwrap();
        let s = simulate_e2e(&scene, &cfg.budget, 2000, cfg.seed, Execution::Parallel).unwrap();
        assert!((1.92..=3.86).contains(&s.mean), "mean {}", s.mean);
    }

    #[test]
    fn rejects_empty_inputs() {
        assert!(Scene::nominal(vec![]).is_err());
        assert!(simulate_e2e(&one_landmark(), &NoiseBudget::default(), 0, 1, Execution::Serial).is_err());
    }
}
