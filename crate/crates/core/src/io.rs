//! File formats. Every reader has a matching writer; JSON uses transform
//! literals for rigid transforms and `[x, y, z]` arrays in mm for points.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::calibration::{PivotDataset, PivotResult, ShaftAxisFit};
use crate::error::{Error, Result};
use crate::geometry::{FrameId, FramedTransform, Line3, RigidTransform};
use crate::metrics::PlacementError;
use crate::navigation::{IndicatorGeometry, PointCloud, TrajectoryPlan};
use crate::registration::RegistrationResult;
use crate::tracking::PoseSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub entry_mm: [f64; 3],
    pub exit_mm: [f64; 3],
    pub frame: FrameId,
}

impl PlanFile {
    pub fn to_plan(&self) -> Result<TrajectoryPlan> {
        if self.frame != FrameId::Image {
            return Err(Error::FrameMismatch {
                left: FrameId::Image,
                right: self.frame,
            });
        }
        TrajectoryPlan::new(Point3::from(self.entry_mm), Point3::from(self.exit_mm))
    }

    pub fn from_plan(plan: &TrajectoryPlan) -> Self {
        Self {
            entry_mm: plan.entry().into(),
            exit_mm: plan.exit().into(),
            frame: FrameId::Image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineFile {
    pub point: [f64; 3],
    pub direction: [f64; 3],
}

impl LineFile {
    pub fn to_line(&self) -> Result<Line3> {
        let d = Vector3::from(self.direction);
        if !d.iter().chain(self.point.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("line has non-finite values".into()));
        }
        Line3::new(Point3::from(self.point), d).map_err(|_| Error::InvalidParameter("line direction is zero".into()))
    }
}

impl From<&Line3> for LineFile {
    fn from(l: &Line3) -> Self {
        Self {
            point: l.point.into(),
            direction: l.direction.into_inner().into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotResultFile {
    pub tip_offset: [f64; 3],
    pub pivot_point: [f64; 3],
    pub rms_mm: f64,
    pub mean_mm: f64,
}

impl From<&PivotResult> for PivotResultFile {
    fn from(r: &PivotResult) -> Self {
        Self {
            tip_offset: r.tip_offset.into(),
            pivot_point: r.pivot_point.into(),
            rms_mm: r.rms_error,
            mean_mm: r.mean_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShaftFile {
    pub axis: LineFile,
    pub residual_rms_mm: f64,
}

impl From<&ShaftAxisFit> for ShaftFile {
    fn from(f: &ShaftAxisFit) -> Self {
        Self {
            axis: LineFile::from(&f.axis),
            residual_rms_mm: f.residual_rms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationFile {
    pub transform: FramedTransform,
    pub fre_mm: f64,
}

impl From<&RegistrationResult> for RegistrationFile {
    fn from(r: &RegistrationResult) -> Self {
        Self {
            transform: r.xf,
            fre_mm: r.fre_rms,
        }
    }
}

pub fn points_from_arrays(arrays: &[[f64; 3]]) -> Result<Vec<Point3<f64>>> {
    if arrays.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite coordinate".into()));
    }
    Ok(arrays.iter().map(|a| Point3::from(*a)).collect())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Pivot dataset: JSON array of transform literals (marker body in tracker).
pub fn parse_pivot_dataset(text: &str) -> Result<PivotDataset> {
    let poses: Vec<FramedTransform> = serde_json::from_str(text)?;
    PivotDataset::new(poses.into_iter().map(|p| p.xf).collect())
}

pub fn pivot_dataset_json(data: &PivotDataset, from: FrameId, to: FrameId) -> Result<String> {
    let lits: Vec<FramedTransform> = data.observations().iter().map(|xf| FramedTransform::new(from, to, *xf)).collect();
    Ok(serde_json::to_string_pretty(&lits)?)
}

const POSE_HEADER: [&str; 11] = ["t_s", "frame_from", "frame_to", "qw", "qx", "qy", "qz", "tx_mm", "ty_mm", "tz_mm", "valid"];

fn parse_valid(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Parse(format!("invalid validity flag {other:?}"))),
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse {:?} as {}", raw, POSE_HEADER[i])))
}

/// Pose stream CSV. Timestamps must be non-decreasing overall and strictly
/// increasing per `(frame_from, frame_to)` pair.
pub fn read_pose_stream<R: Read>(reader: R) -> Result<Vec<PoseSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != POSE_HEADER {
        return Err(Error::Parse(format!("pose stream header must be {}", POSE_HEADER.join(","))));
    }
    let mut out: Vec<PoseSample> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let t: f64 = field(&rec, 0, line)?;
        let from: FrameId = field(&rec, 1, line)?;
        let to: FrameId = field(&rec, 2, line)?;
        let mut q = [0.0; 4];
        for (k, v) in q.iter_mut().enumerate() {
            *v = field(&rec, 3 + k, line)?;
        }
        let mut tr = [0.0; 3];
        for (k, v) in tr.iter_mut().enumerate() {
            *v = field(&rec, 7 + k, line)?;
        }
        let valid = parse_valid(rec.get(10).unwrap_or(""))?;
        if !t.is_finite() {
            return Err(Error::Parse(format!("line {line}: non-finite timestamp")));
        }
        if let Some(last) = out.last() {
            if t < last.t {
                return Err(Error::TimestampOrder { last: last.t, got: t });
            }
        }
        if let Some(prev) = out.iter().rev().find(|s| s.pose.from == from && s.pose.to == to) {
            if t <= prev.t {
                return Err(Error::TimestampOrder { last: prev.t, got: t });
            }
        }
        let xf = RigidTransform::from_wxyz(q, tr).map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        out.push(PoseSample {
            t,
            pose: FramedTransform::new(from, to, xf),
            valid,
        });
    }
    Ok(out)
}

pub fn write_pose_stream<W: Write>(writer: W, samples: &[PoseSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(POSE_HEADER)?;
    for s in samples {
        let q = s.pose.xf.wxyz();
        let t = s.pose.xf.translation();
        let mut row = vec![fmt_f64(s.t), s.pose.from.tag().into(), s.pose.to.tag().into()];
        row.extend(q.iter().map(|v| fmt_f64(*v)));
        row.extend(t.iter().map(|v| fmt_f64(*v)));
        row.push(if s.valid { "1" } else { "0" }.into());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_cloud_csv<R: Read>(reader: R) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["x_mm", "y_mm", "z_mm"] {
        return Err(Error::Parse("point cloud header must be x_mm,y_mm,z_mm".into()));
    }
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut p = [0.0; 3];
        for (k, v) in p.iter_mut().enumerate() {
            let raw = rec.get(k).unwrap_or("");
            *v = raw.parse().map_err(|_| Error::Parse(format!("line {line}: bad coordinate {raw:?}")))?;
        }
        points.push(Point3::from(p));
    }
    PointCloud::new(points)
}

pub fn write_cloud_csv<W: Write>(writer: W, cloud: &PointCloud) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x_mm", "y_mm", "z_mm"])?;
    for p in &cloud.points {
        w.write_record([fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)])?;
    }
    w.flush()?;
    Ok(())
}

/// ASCII PLY with a single `vertex` element; extra vertex properties are
/// ignored.
pub fn read_cloud_ply<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut lines = reader.lines();
    let mut next = || -> Result<Option<String>> { Ok(lines.next().transpose()?) };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(Error::Parse("missing ply magic".into()));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = next()?.ok_or_else(|| Error::Parse("unterminated ply header".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(Error::Parse(format!("unsupported ply format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::Parse(format!("bad vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", other, ..] => {
                return Err(Error::Parse(format!("unsupported ply element {other}; only vertex clouds are read")));
            }
            ["property", "list", ..] => return Err(Error::Parse("list properties are not supported".into())),
            ["property", _, name] if in_vertex => props.push((*name).to_owned()),
            ["end_header"] => break,
            _ => return Err(Error::Parse(format!("unexpected ply header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| Error::Parse("ply has no vertex element".into()))?;
    let idx = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::Parse(format!("ply vertex lacks property {name}")))
    };
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
    let mut points = Vec::with_capacity(count);
    while points.len() < count {
        let line = next()?.ok_or_else(|| Error::Parse(format!("ply ends after {} of {count} vertices", points.len())))?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad ply value {t:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != props.len() {
            return Err(Error::Parse(format!("ply vertex has {} values, header declares {}", vals.len(), props.len())));
        }
        points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
    }
    PointCloud::new(points)
}

pub fn write_cloud_ply<W: Write>(mut writer: W, cloud: &PointCloud) -> Result<()> {
    writeln!(writer, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
    writeln!(writer, "property double x\nproperty double y\nproperty double z\nend_header")?;
    for p in &cloud.points {
        writeln!(writer, "{} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z))?;
    }
    Ok(())
}

/// Dispatches on the extension: `.ply` or CSV otherwise.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        read_cloud_ply(std::io::BufReader::new(file))
    } else {
        read_cloud_csv(file)
    }
}

const TRIAL_HEADER: [&str; 6] = ["condition", "trial", "entry_mm", "mid_mm", "end_mm", "rotation_deg"];

/// One row per trial: `condition,trial,entry_mm,mid_mm,end_mm,rotation_deg`.
pub fn write_trials_csv<W: Write>(writer: W, rows: &[(String, Vec<PlacementError>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIAL_HEADER)?;
    for (condition, samples) in rows {
        for (i, e) in samples.iter().enumerate() {
            let mut row = vec![condition.clone(), i.to_string()];
            row.extend(e.fields().iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_csv<R: Read>(reader: R) -> Result<Vec<(String, Vec<PlacementError>)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != TRIAL_HEADER {
        return Err(Error::Parse(format!("trial csv header must be {}", TRIAL_HEADER.join(","))));
    }
    let mut out: Vec<(String, Vec<PlacementError>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Parse(format!("bad value in column {}", TRIAL_HEADER[i])))
        };
        let e = PlacementError {
            entry_mm: num(2)?,
            mid_mm: num(3)?,
            end_mm: num(4)?,
            rotation_deg: num(5)?,
        };
        let condition = rec.get(0).unwrap_or("").to_owned();
        match out.last_mut() {
            Some((c, v)) if *c == condition => v.push(e),
            _ => out.push((condition, vec![e])),
        }
    }
    Ok(out)
}

const INDICATOR_HEADER: [&str; 9] = [
    "t_s", "entry_radius_mm", "entry_hatch_x", "entry_hatch_y", "entry_hatch_z", "end_radius_mm", "end_hatch_x", "end_hatch_y", "end_hatch_z",
];

pub struct IndicatorWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> IndicatorWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(INDICATOR_HEADER)?;
        Ok(Self { inner })
    }

    /// Hatch components are empty when the radius is zero.
    pub fn write(&mut self, t: f64, g: &IndicatorGeometry) -> Result<()> {
        let mut row = vec![fmt_f64(t)];
        for c in [g.entry, g.end] {
            row.push(fmt_f64(c.radius));
            match c.hatch {
                Some(h) => row.extend(h.iter().map(|v| fmt_f64(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        self.inner.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
