use std::path::{Path, PathBuf};

use kwnav_core::calibration::{calibrate_shaft, pivot_calibrate};
use kwnav_core::guidance::{run_guidance, GuidanceSetup};
use kwnav_core::io::{self, LineFile, PivotResultFile, PlanFile, RegistrationFile, ShaftFile};
use kwnav_core::metrics::{placement_error, significance, summarize, PlacementError, StudySummary};
use kwnav_core::navigation::surface_marker;
use kwnav_core::registration::{ct_register, paired_point_register};
use kwnav_core::simulation::e2e::{simulate_e2e, Scene};
use kwnav_core::simulation::study::{run_study, Comparison, METRICS};
use kwnav_core::tracking::FilterParams;
use kwnav_core::{Error, Execution, FrameId, FramedTransform, StudyConfig};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::{Cli, Command};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_input_error() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Prefixes the offending file to input errors.
fn in_file(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

struct Run<'a> {
    cli: &'a Cli,
    manifest: RunManifest,
}

impl Run<'_> {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = std::fs::read(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        self.manifest.input(path, &bytes);
        Ok(bytes)
    }

    fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<T, Failure> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| in_file(path)(Error::Json(e)))
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let dir = &self.cli.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| input_error(format!("{}: {e}", dir.display())))?;
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        self.manifest.outputs.push(path.clone());
        Ok(path)
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn say(&self, text: impl AsRef<str>) {
        if !self.cli.quiet {
            println!("{}", text.as_ref());
        }
    }

    fn finish(mut self) -> Result<(), Failure> {
        let name = self.manifest.file_name();
        let dir = &self.cli.output_dir;
        let path = dir.join(&name);
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(Error::from)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        self.manifest.outputs.push(path);
        Ok(())
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Pivot { .. } => "pivot",
        Command::ShaftFit { .. } => "shaft-fit",
        Command::Register { .. } => "register",
        Command::CtRegister { .. } => "ct-register",
        Command::Indicate { .. } => "indicate",
        Command::SurfaceMarker { .. } => "surface-marker",
        Command::Metrics { .. } => "metrics",
        Command::SimulateE2e { .. } => "simulate-e2e",
        Command::SimulateStudy { .. } => "simulate-study",
    }
}

fn load_config(cli: &Cli) -> Result<(StudyConfig, Option<Vec<u8>>), Failure> {
    let (mut cfg, raw) = match &cli.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            let text = String::from_utf8(bytes.clone()).map_err(|_| input_error(format!("{}: not UTF-8", path.display())))?;
            (StudyConfig::from_json(&text).map_err(in_file(path))?, Some(bytes))
        }
        None => (StudyConfig::default(), None),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::SimulateE2e { trials: Some(n), .. } => cfg.e2e.trials = n,
        Command::SimulateStudy { trials: Some(n), .. } => cfg.trials = n,
        _ => {}
    }
    cfg.validate().map_err(Failure::from)?;
    Ok((cfg, raw))
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let (cfg, raw_config) = load_config(cli)?;
    let cfg_json = serde_json::to_string(&cfg).map_err(Error::from)?;
    let mut run = Run {
        cli,
        manifest: RunManifest::new(command_name(&cli.command), &cfg_json, cfg.seed),
    };
    if let (Some(path), Some(bytes)) = (&cli.config, &raw_config) {
        run.manifest.input(path, bytes);
    }
    let exec = |serial: bool| if serial { Execution::Serial } else { Execution::Parallel };

    match &cli.command {
        Command::Pivot { input, output } => pivot(&mut run, input, output)?,
        Command::ShaftFit { datasets, output } => shaft_fit(&mut run, datasets, output)?,
        Command::Register {
            model,
            observed,
            model_frame,
            observed_frame,
            output,
        } => register(&mut run, model, observed, *model_frame, *observed_frame, output)?,
        Command::CtRegister {
            tracker_patient,
            tracker_machine,
            machine_image,
            output,
        } => {
            let tp: FramedTransform = run.read_json(tracker_patient)?;
            let tm: FramedTransform = run.read_json(tracker_machine)?;
            let mi: FramedTransform = run.read_json(machine_image)?;
            let f_pi = ct_register(&tp, &tm, &mi)?;
            run.write_json(output, &f_pi)?;
            run.say(format!("P->I translation {:?} mm", f_pi.xf.translation().as_slice()));
        }
        Command::Indicate {
            plan,
            poses,
            shaft,
            registration,
            grace,
            filter,
            output,
        } => indicate(&mut run, plan, poses, shaft, registration, *grace, *filter, output)?,
        Command::SurfaceMarker {
            cloud,
            axis,
            neighbors,
            output,
        } => marker(&mut run, cloud, axis, *neighbors, output)?,
        Command::Metrics { plan, actual, trials } => match (plan, actual, trials) {
            (Some(plan), Some(actual), None) => metrics_lines(&mut run, plan, actual)?,
            (None, None, Some(trials)) => metrics_trials(&mut run, trials)?,
            _ => return Err(input_error("metrics needs either --plan with --actual, or --trials")),
        },
        Command::SimulateE2e { serial, .. } => simulate_e2e_cmd(&mut run, &cfg, exec(*serial))?,
        Command::SimulateStudy { serial, .. } => simulate_study_cmd(&mut run, &cfg, exec(*serial))?,
    }
    run.finish()
}

fn pivot(run: &mut Run, input: &Path, output: &str) -> Result<(), Failure> {
    let text = String::from_utf8(run.read(input)?).map_err(|_| input_error(format!("{}: not UTF-8", input.display())))?;
    let data = io::parse_pivot_dataset(&text).map_err(in_file(input))?;
    let result = pivot_calibrate(&data).map_err(in_file(input))?;
    run.write_json(output, &PivotResultFile::from(&result))?;
    run.say(format!(
        "tip offset {:.3?} mm, rms {:.3} mm, mean {:.3} mm",
        result.tip_offset.coords.as_slice(),
        result.rms_error,
        result.mean_error
    ));
    Ok(())
}

#[derive(Serialize)]
struct ShaftReport {
    #[serde(flatten)]
    shaft: ShaftFile,
    tip_offsets: Vec<[f64; 3]>,
    pivot_rms_mm: Vec<f64>,
    mean_rms_mm: f64,
}

fn shaft_fit(run: &mut Run, datasets: &[PathBuf], output: &str) -> Result<(), Failure> {
    let mut sets = Vec::new();
    for path in datasets {
        let text = String::from_utf8(run.read(path)?).map_err(|_| input_error(format!("{}: not UTF-8", path.display())))?;
        sets.push(io::parse_pivot_dataset(&text).map_err(in_file(path))?);
    }
    let cal = calibrate_shaft(&sets)?;
    let report = ShaftReport {
        shaft: ShaftFile::from(&cal.fit),
        tip_offsets: cal.pivots.iter().map(|p| p.tip_offset.into()).collect(),
        pivot_rms_mm: cal.pivots.iter().map(|p| p.rms_error).collect(),
        mean_rms_mm: cal.mean_rms(),
    };
    run.write_json(output, &report)?;
    run.say(format!(
        "shaft direction {:.4?}, fit residual {:.3} mm, mean pivot rms {:.3} mm",
        cal.fit.axis.direction.as_slice(),
        cal.fit.residual_rms,
        cal.mean_rms()
    ));
    Ok(())
}

fn register(run: &mut Run, model: &Path, observed: &Path, model_frame: FrameId, observed_frame: FrameId, output: &str) -> Result<(), Failure> {
    let m: Vec<[f64; 3]> = run.read_json(model)?;
    let o: Vec<[f64; 3]> = run.read_json(observed)?;
    let m = io::points_from_arrays(&m).map_err(in_file(model))?;
    let o = io::points_from_arrays(&o).map_err(in_file(observed))?;
    let result = paired_point_register(&m, &o, observed_frame, model_frame)?;
    run.write_json(output, &RegistrationFile::from(&result))?;
    run.say(format!("{}->{} registered, FRE {:.4} mm", observed_frame, model_frame, result.fre_rms));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn indicate(
    run: &mut Run,
    plan: &Path,
    poses: &Path,
    shaft: &Path,
    registration: &Path,
    grace: f64,
    filter: bool,
    output: &str,
) -> Result<(), Failure> {
    let plan_file: PlanFile = run.read_json(plan)?;
    let plan_v = plan_file.to_plan().map_err(in_file(plan))?;
    let shaft_file: ShaftFile = run.read_json(shaft)?;
    let shaft_line = shaft_file.axis.to_line().map_err(in_file(shaft))?;
    let f_pi: FramedTransform = run.read_json(registration)?;
    let bytes = run.read(poses)?;
    let samples = io::read_pose_stream(bytes.as_slice()).map_err(in_file(poses))?;
    let setup = GuidanceSetup {
        plan: plan_v,
        f_pi,
        shaft: shaft_line,
        grace,
        filter: filter.then(FilterParams::default),
    };
    let report = run_guidance(&setup, &samples).map_err(in_file(poses))?;
    let mut buf = Vec::new();
    let mut w = io::IndicatorWriter::new(&mut buf)?;
    for f in &report.frames {
        w.write(f.t, &f.geometry)?;
    }
    w.finish()?;
    run.write(output, &buf)?;
    run.say(format!(
        "{} indicator rows; {} suspended, {} incomplete, {} without plane intersection",
        report.frames.len(),
        report.suspended,
        report.incomplete,
        report.no_intersection
    ));
    Ok(())
}

#[derive(Serialize)]
struct MarkerReport {
    position_mm: [f64; 3],
    normal: [f64; 3],
    neighbors: usize,
}

fn marker(run: &mut Run, cloud: &Path, axis: &Path, neighbors: usize, output: &str) -> Result<(), Failure> {
    let axis_file: LineFile = run.read_json(axis)?;
    let axis_line = axis_file.to_line().map_err(in_file(axis))?;
    let bytes = run.read(cloud)?;
    let is_ply = cloud.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let points = if is_ply {
        io::read_cloud_ply(bytes.as_slice())
    } else {
        io::read_cloud_csv(bytes.as_slice())
    }
    .map_err(in_file(cloud))?;
    let m = surface_marker(&points, &axis_line, neighbors).map_err(in_file(cloud))?;
    let report = MarkerReport {
        position_mm: m.position.into(),
        normal: m.normal.into_inner().into(),
        neighbors: neighbors.min(points.len()),
    };
    run.write_json(output, &report)?;
    run.say(format!("marker at {:.3?} mm, normal {:.4?}", report.position_mm, report.normal));
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActualLines {
    condition: String,
    lines: Vec<LineFile>,
}

fn print_table(run: &Run, summaries: &[&StudySummary]) {
    run.say(StudySummary::table_header());
    for s in summaries {
        run.say(s.table_row());
    }
}

fn metrics_lines(run: &mut Run, plan: &Path, actual: &Path) -> Result<(), Failure> {
    let plan_file: PlanFile = run.read_json(plan)?;
    let plan_v = plan_file.to_plan().map_err(in_file(plan))?;
    let lines: ActualLines = run.read_json(actual)?;
    let errors = lines
        .lines
        .iter()
        .map(|l| placement_error(&plan_v.entry(), &plan_v.exit(), &l.to_line()?))
        .collect::<Result<Vec<PlacementError>, Error>>()
        .map_err(in_file(actual))?;
    let summary = summarize(lines.condition.clone(), &errors).map_err(in_file(actual))?;
    run.write_json("report.json", &[&summary])?;
    let mut buf = Vec::new();
    io::write_trials_csv(&mut buf, &[(lines.condition, errors)])?;
    run.write("trials.csv", &buf)?;
    print_table(run, &[&summary]);
    Ok(())
}

fn metrics_trials(run: &mut Run, trials: &Path) -> Result<(), Failure> {
    let bytes = run.read(trials)?;
    let groups = io::read_trials_csv(bytes.as_slice()).map_err(in_file(trials))?;
    let summaries = groups
        .iter()
        .map(|(c, xs)| summarize(c.clone(), xs))
        .collect::<Result<Vec<_>, Error>>()
        .map_err(in_file(trials))?;
    let mut comparisons = Vec::new();
    for (i, (a, xs)) in groups.iter().enumerate() {
        for (b, ys) in &groups[i + 1..] {
            for (k, metric) in METRICS.into_iter().enumerate() {
                let xa: Vec<f64> = xs.iter().map(|e| e.fields()[k]).collect();
                let xb: Vec<f64> = ys.iter().map(|e| e.fields()[k]).collect();
                comparisons.push(Comparison {
                    a: a.clone(),
                    b: b.clone(),
                    metric,
                    p_value: significance(&xa, &xb)?,
                });
            }
        }
    }
    run.write_json("report.json", &summaries)?;
    run.write_json("significance.json", &comparisons)?;
    print_table(run, &summaries.iter().collect::<Vec<_>>());
    Ok(())
}

#[derive(Serialize)]
struct E2eReport<'a> {
    mean_mm: f64,
    std_mm: f64,
    trials: usize,
    landmarks: usize,
    seed: u64,
    budget: &'a kwnav_core::NoiseBudget,
}

fn simulate_e2e_cmd(run: &mut Run, cfg: &StudyConfig, exec: Execution) -> Result<(), Failure> {
    let scene = Scene::nominal(cfg.e2e.landmarks())?;
    let s = simulate_e2e(&scene, &cfg.budget, cfg.e2e.trials, cfg.seed, exec)?;
    run.write_json(
        "e2e.json",
        &E2eReport {
            mean_mm: s.mean,
            std_mm: s.std,
            trials: s.trials,
            landmarks: s.landmarks,
            seed: cfg.seed,
            budget: &cfg.budget,
        },
    )?;
    let mut csv = String::from("trial,landmark,error_mm\n");
    for (i, e) in s.samples.iter().enumerate() {
        csv.push_str(&format!("{},{},{}\n", i / s.landmarks, i % s.landmarks, io::fmt_f64(*e)));
    }
    run.write("e2e_samples.csv", csv.as_bytes())?;
    run.say(format!(
        "system error {:.2} ± {:.2} mm over {} trials x {} landmarks",
        s.mean, s.std, s.trials, s.landmarks
    ));
    Ok(())
}

fn simulate_study_cmd(run: &mut Run, cfg: &StudyConfig, exec: Execution) -> Result<(), Failure> {
    let out = run_study(cfg, exec)?;
    let summaries = out.summaries();
    run.write_json("report.json", &summaries)?;
    run.write_json("significance.json", &out.comparisons)?;
    let rows: Vec<(String, Vec<PlacementError>)> = out.results.iter().map(|r| (r.condition.to_string(), r.samples.clone())).collect();
    let mut buf = Vec::new();
    io::write_trials_csv(&mut buf, &rows)?;
    run.write("trials.csv", &buf)?;
    print_table(run, &summaries);
    for c in out.comparisons.iter().filter(|c| c.metric == "entry_mm") {
        run.say(format!("entry error {} vs {}: p = {:.2e}", c.a, c.b, c.p_value));
    }
    Ok(())
}
