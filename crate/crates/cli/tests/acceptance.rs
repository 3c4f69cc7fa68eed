//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion, nonzero exit
//! if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use kwnav_core::calibration::pivot_calibrate;
use kwnav_core::geometry::{angle_between, AngleMode};
use kwnav_core::metrics::{placement_error, significance};
use kwnav_core::navigation::{error_indicator, surface_marker};
use kwnav_core::registration::paired_point_register;
use kwnav_core::simulation::e2e::{simulate_e2e, Scene};
use kwnav_core::simulation::insertion::{Condition, GuidanceMode};
use kwnav_core::simulation::noise::{gaussian_vector, random_unit};
use kwnav_core::simulation::study::{run_conditions, run_study};
use kwnav_core::simulation::synthetic::{pivot_dataset, random_point, random_transform, PivotProtocol};
use kwnav_core::{
    Execution, FrameId, FramedTransform, Line3, PlacementError, Point3, PointCloud, RigidTransform, StudyConfig, UnitQuaternion, Vector3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn noiseless_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let zero = StudyConfig::default().noiseless().budget;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let scene = Scene::random(&mut rng, 7).map_err(err)?;
        let s = simulate_e2e(&scene, &zero, 1, i, Execution::Serial).map_err(err)?;
        worst = s.samples.iter().fold(worst, |w, e| w.max(*e));
    }
    check(worst < 1e-9, format!("max |system error| over 100 chains x 7 landmarks = {worst:.2e} mm (limit 1e-9)"))
}

fn registration_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_t, mut worst_r) = (0.0f64, 0.0f64);
    let sigma = 0.3;
    let n = 7;
    let mut fre_sq = 0.0;
    for _ in 0..1000 {
        let truth = random_transform(&mut rng, 500.0);
        let model: Vec<Point3<f64>> = (0..n).map(|_| random_point(&mut rng, 100.0)).collect();
        let observed: Vec<Point3<f64>> = model.iter().map(|p| truth.transform_point(p)).collect();
        let r = paired_point_register(&model, &observed, FrameId::Tracker, FrameId::Cannula).map_err(err)?;
        let delta = truth.inverse().compose(&r.xf.xf);
        worst_t = worst_t.max((r.xf.xf.translation() - truth.translation()).norm());
        worst_r = worst_r.max(delta.rotation_angle());

        let noisy: Vec<Point3<f64>> = observed.iter().map(|p| p + gaussian_vector(&mut rng, sigma)).collect();
        let r = paired_point_register(&model, &noisy, FrameId::Tracker, FrameId::Cannula).map_err(err)?;
        fre_sq += r.fre_rms * r.fre_rms;
    }
    let fre = (fre_sq / 1000.0).sqrt();
    // Six fitted degrees of freedom absorb part of the 3N noise components.
    let expected = (sigma * sigma * (3 * n - 6) as f64 / n as f64).sqrt();
    let rel = (fre - expected).abs() / expected;
    check(
        worst_t < 1e-9 && worst_r < 1e-9 && rel < 0.05,
        format!(
            "noiseless max error {worst_t:.2e} mm / {worst_r:.2e} rad; rms FRE {fre:.4} mm vs expected {expected:.4} mm ({:.1}% off, limit 5%)",
            100.0 * rel
        ),
    )
}

fn pivot_band() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    // 0.6 mm rms 3D noise on each pose position.
    let protocol = PivotProtocol {
        translation_noise: 0.6 / 3f64.sqrt(),
        ..PivotProtocol::default()
    };
    let (lo, hi) = (0.48 - 0.1, 0.66 + 0.1);
    let mut rms = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let r = pivot_calibrate(&pivot_dataset(&protocol, &mut rng)).map_err(err)?;
        rms.push(r.rms_error);
    }
    let inside = rms.iter().filter(|r| (lo..=hi).contains(*r)).count();
    let mean = rms.iter().sum::<f64>() / rms.len() as f64;
    let min = rms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = rms.iter().copied().fold(0.0, f64::max);
    check(
        inside == rms.len(),
        format!("rms mean {mean:.3} mm, range [{min:.3}, {max:.3}] mm; {inside}/1000 within [{lo:.2}, {hi:.2}] mm"),
    )
}

fn e2e_band() -> Outcome {
    let cfg = StudyConfig::default();
    let scene = Scene::nominal(cfg.e2e.landmarks()).map_err(err)?;
    let s = simulate_e2e(&scene, &cfg.budget, 10_000, cfg.seed, Execution::Parallel).map_err(err)?;
    let budget: Vec<String> = cfg.budget.values().iter().map(|(k, v)| format!("{k}={v}")).collect();
    check(
        (1.92..=3.86).contains(&s.mean) && s.landmarks == 7,
        format!(
            "{} landmarks x {} trials: {:.2} ± {:.2} mm (band [1.92, 3.86]); budget {}",
            s.landmarks,
            s.trials,
            s.mean,
            s.std,
            budget.join(" ")
        ),
    )
}

fn column(samples: &[PlacementError], k: usize) -> Vec<f64> {
    samples.iter().map(|e| e.fields()[k]).collect()
}

fn study_ordering() -> Outcome {
    let cfg = StudyConfig::default();
    if cfg.trials < 500 {
        return Err(format!("default trials {} below 500", cfg.trials));
    }
    let out = run_study(&cfg, Execution::Parallel).map_err(err)?;
    let plain = |mode| {
        out.get(Condition { mode, surface_marker: false })
            .expect("study covers every condition")
    };
    let (c, n, d) = (plain(GuidanceMode::Cannula), plain(GuidanceMode::NonTracked), plain(GuidanceMode::DrillMounted));
    let mean = |r: &kwnav_core::simulation::study::ConditionResult, k| {
        let v = column(&r.samples, k);
        v.iter().sum::<f64>() / v.len() as f64
    };
    let entry_order = mean(c, 0) < mean(n, 0) && mean(n, 0) < mean(d, 0);
    let cannula_lowest = (0..4).all(|k| mean(c, k) < mean(n, k) && mean(c, k) < mean(d, k));
    let p = significance(&column(&c.samples, 0), &column(&d.samples, 0)).map_err(err)?;
    check(
        entry_order && cannula_lowest && p < 0.01,
        format!(
            "entry mm Cannula {:.2} < Non-tracked {:.2} < Drill {:.2}: {entry_order}; Cannula lowest on all metrics: {cannula_lowest}; Cannula vs Drill entry p = {p:.2e} (n = {})",
            mean(c, 0),
            mean(n, 0),
            mean(d, 0),
            cfg.trials
        ),
    )
}

fn bending_ablation() -> Outcome {
    let mut cfg = StudyConfig {
        trials: 500,
        ..StudyConfig::default()
    };
    cfg.bending.cannula_stiffness = 0.0;
    cfg.bending.wire_stiffness = 0.0;
    let conditions = [GuidanceMode::Cannula, GuidanceMode::DrillMounted].map(|mode| Condition { mode, surface_marker: false });
    let out = run_conditions(&cfg, &conditions, Execution::Parallel).map_err(err)?;
    let (c, d) = (&out.results[0].samples, &out.results[1].samples);
    let p = significance(&column(c, 0), &column(d, 0)).map_err(err)?;
    let others: Vec<String> = ["mid", "end", "rotation"]
        .iter()
        .enumerate()
        .map(|(i, name)| significance(&column(c, i + 1), &column(d, i + 1)).map(|p| format!("{name} p = {p:.3}")))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    check(p > 0.1, format!("stiffness 0: Cannula vs Drill entry p = {p:.3} (needs > 0.1, n = 500); {}", others.join(", ")))
}

/// Line through a random point, tilted up to `max_deg` from `axis`.
fn random_line<R: Rng>(rng: &mut R, axis: &Vector3<f64>, max_deg: f64) -> Line3 {
    let axis = axis.normalize();
    let perp = random_unit(rng).into_inner().cross(&axis);
    let tilt = UnitQuaternion::from_axis_angle(&nalgebra_unit(perp), rng.random_range(0.0..max_deg).to_radians());
    Line3::new(random_point(rng, 100.0), tilt * axis).expect("unit direction")
}

fn guidance_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut zero_ok = 0;
    let mut worst_inv = 0.0f64;
    let mut worst_tilt = 0.0f64;
    for _ in 0..1000 {
        let entry = random_point(&mut rng, 100.0);
        let exit = entry + random_unit(&mut rng).into_inner() * rng.random_range(20.0..200.0);

        // Aligned tool (either direction) gives zero radii; a displaced one does not.
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let aligned = Line3::new(exit + (exit - entry) * 0.3, (exit - entry) * sign).map_err(err)?;
        let g = error_indicator(&aligned, &entry, &exit).map_err(err)?;
        let shift = random_unit(&mut rng).into_inner().cross(&(exit - entry)).normalize() * rng.random_range(0.01..5.0);
        let off = Line3::new(aligned.point + shift, aligned.direction.into_inner()).map_err(err)?;
        let h = error_indicator(&off, &entry, &exit).map_err(err)?;
        if g.entry.radius < 1e-9 && g.end.radius < 1e-9 && h.entry.radius > 1e-9 && h.end.radius > 1e-9 {
            zero_ok += 1;
        }

        // Rigid motion of tool and trajectory together.
        let tool = random_line(&mut rng, &(exit - entry), 80.0);
        let before = error_indicator(&tool, &entry, &exit).map_err(err)?;
        let pe = placement_error(&entry, &exit, &tool).map_err(err)?;
        let m = FramedTransform::new(FrameId::World, FrameId::World, random_transform(&mut rng, 500.0));
        let (e2, x2) = (m.transform_point(&entry), m.transform_point(&exit));
        let tool2 = m.transform_line(&tool);
        let after = error_indicator(&tool2, &e2, &x2).map_err(err)?;
        let pe2 = placement_error(&e2, &x2, &tool2).map_err(err)?;
        let d = [
            before.entry.radius - after.entry.radius,
            before.end.radius - after.end.radius,
            pe.entry_mm - pe2.entry_mm,
            pe.mid_mm - pe2.mid_mm,
            pe.end_mm - pe2.end_mm,
            pe.rotation_deg - pe2.rotation_deg,
        ];
        worst_inv = d.iter().fold(worst_inv, |w, v| w.max(v.abs()));

        // Tool pivoted about the entry point by a known angle.
        let length = (exit - entry).norm();
        let theta = rng.random_range(0.0f64..60.0).to_radians();
        let axis = (exit - entry).normalize();
        let perp = random_unit(&mut rng).into_inner().cross(&axis).normalize();
        let tilted = UnitQuaternion::from_axis_angle(&nalgebra_unit(perp), theta) * axis;
        let t = Line3::new(entry, tilted).map_err(err)?;
        let g = error_indicator(&t, &entry, &exit).map_err(err)?;
        worst_tilt = worst_tilt.max(g.entry.radius).max((g.end.radius - length * theta.tan()).abs());
    }
    check(
        zero_ok == 1000 && worst_inv < 1e-9 && worst_tilt < 1e-9,
        format!(
            "zero iff aligned {zero_ok}/1000; rigid-motion max change {worst_inv:.2e} over 1000 motions; tilt oracle max error {worst_tilt:.2e} mm"
        ),
    )
}

fn nalgebra_unit(v: Vector3<f64>) -> kwnav_core::UnitVector3 {
    kwnav_core::UnitVector3::new_normalize(v)
}

fn surface_marker_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut within = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let pose = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&random_unit(&mut rng), rng.random_range(0.0f64..40.0).to_radians()),
            random_point(&mut rng, 100.0).coords,
        );
        let normal = pose.transform_vector(&Vector3::z());
        let mut points = Vec::with_capacity(961);
        for i in -15..=15 {
            for j in -15..=15 {
                let p = Point3::new(2.0 * i as f64, 2.0 * j as f64, 0.0);
                points.push(pose.transform_point(&p) + gaussian_vector(&mut rng, 1.0));
            }
        }
        let cloud = PointCloud::new(points).map_err(err)?;
        let aim = Line3::new(pose.transform_point(&Point3::new(3.0, -2.0, 0.0)), normal).map_err(err)?;
        let m = surface_marker(&cloud, &aim, 500).map_err(err)?;
        let angle = angle_between(&m.normal.into_inner(), &normal, AngleMode::Directed).map_err(err)?;
        worst = worst.max(angle);
        if angle <= 2.0 {
            within += 1;
        }
    }
    check(within >= 950, format!("{within}/1000 normals within 2 deg (need 950); worst {worst:.2} deg"))
}

fn run_study_cli(dir: &Path, serial: bool) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kwnav"));
    cmd.args(["--quiet", "--seed", "4242", "--output-dir"]).arg(dir).arg("simulate-study");
    if serial {
        cmd.arg("--serial");
    }
    let out = cmd.output().map_err(err)?;
    if !out.status.success() {
        return Err(format!("simulate-study failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn determinism() -> Outcome {
    let root = std::env::temp_dir().join(format!("kwnav-acceptance-{}", std::process::id()));
    let dirs = ["a", "b", "serial"].map(|d| root.join(d));
    for (i, d) in dirs.iter().enumerate() {
        std::fs::create_dir_all(d).map_err(err)?;
        run_study_cli(d, i == 2)?;
    }
    let mut mismatches = Vec::new();
    for name in ["report.json", "trials.csv", "significance.json"] {
        let first = std::fs::read(dirs[0].join(name)).map_err(err)?;
        for d in &dirs[1..] {
            if std::fs::read(d.join(name)).map_err(err)? != first {
                mismatches.push(format!("{name} differs in {}", d.display()));
            }
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "report.json, trials.csv and significance.json byte-identical across two parallel runs and a serial run".into()
        } else {
            mismatches.join("; ")
        },
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, u64);
    let criteria: [Criterion; 9] = [
        ("noiseless chain consistency", noiseless_chain, 1),
        ("registration recovery", registration_recovery, 5),
        ("pivot calibration band", pivot_band, 10),
        ("end-to-end error calibration", e2e_band, 30),
        ("study ordering", study_ordering, 60),
        ("bending ablation", bending_ablation, 60),
        ("guidance geometry invariants", guidance_invariants, 10),
        ("surface-marker recovery", surface_marker_recovery, 30),
        ("determinism", determinism, 120),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let slow = elapsed > Duration::from_secs(*limit);
        let (ok, detail) = match result {
            Ok(d) if !slow => (true, d),
            Ok(d) => (false, format!("{d}; exceeded {limit} s")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] {}. {}: {} ({:.2} s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            name,
            detail,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
