//! File formats: trace CSV, detection logs, camera-pose logs, metric
//! summaries, and observability verdict records.
//!
//! Trace CSVs round floats to 9 significant digits with a fixed rule so that
//! equal runs are byte-identical across platforms. Detection and camera-pose
//! logs keep full shortest-round-trip precision instead: they are inputs to
//! further computation, and replaying them must reproduce the original
//! estimates bit for bit.

use crate::box3d::Box3DDetection;
use crate::geometry::{Rotation, UnitPlanePoint};
use crate::metrics::{EstimateTrace, MetricSummary};
use nalgebra::{Matrix3, Vector3};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

/// Columns of a trace CSV. Acceleration columns are empty for estimators
/// without an acceleration state; `alpha` is empty for the bearing-only
/// baseline; truth-dependent columns are empty when no truth was available.
pub const TRACE_HEADER: &str =
    "t,px,py,pz,vx,vy,vz,ax,ay,az,alpha,px_true,py_true,pz_true,depth_true,depth_est,nees,in_fov";

/// Columns of a detection log.
pub const DETECTION_HEADER: &str = "t,r00,r01,r02,r10,r11,r12,r20,r21,r22,lbar2,lbar3,\
v1x,v1y,v2x,v2y,v3x,v3y,v4x,v4y,v5x,v5y,v6x,v6y,v7x,v7y,v8x,v8y,cx,cy";

/// Columns of a camera-pose log (`R_c^w` row-major).
pub const CAMERA_POSE_HEADER: &str = "t,pcx,pcy,pcz,r00,r01,r02,r10,r11,r12,r20,r21,r22";

#[derive(Debug)]
pub enum IoError {
    Io(std::io::Error),
    Parse { line: usize, message: String },
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoError::Io(e) => write!(f, "{e}"),
            IoError::Parse { line, message } => write!(f, "line {line}: {message}"),
        }
    }
}

impl std::error::Error for IoError {}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError::Io(e)
    }
}

/// Formats a float with at most 9 significant digits.
///
/// Values whose magnitude lies in `[1e-4, 1e9)` print in plain decimal,
/// everything else in scientific notation; trailing zeros are trimmed. This
/// is the documented trace formatting rule.
pub fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let mag = x.abs();
    if (1e-4..1e9).contains(&mag) {
        let decimals = (8 - mag.log10().floor() as i32).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(s)
    } else {
        let s = format!("{x:.8e}");
        // "d.ddddddddeN" -> trim mantissa zeros.
        match s.split_once('e') {
            Some((mantissa, exp)) => format!("{}e{}", trim_zeros(mantissa.to_string()), exp),
            None => s,
        }
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}

fn opt_g9(x: Option<f64>) -> String {
    x.map(fmt_g9).unwrap_or_default()
}

/// Renders a trace as CSV text (header included).
pub fn render_trace_csv(trace: &EstimateTrace) -> String {
    let mut out = String::with_capacity(trace.records.len() * 128);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let a = r.a.map(|a| (a.x, a.y, a.z));
        let tp = r.truth_p.map(|p| (p.x, p.y, p.z));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_g9(r.t),
            fmt_g9(r.p.x),
            fmt_g9(r.p.y),
            fmt_g9(r.p.z),
            fmt_g9(r.v.x),
            fmt_g9(r.v.y),
            fmt_g9(r.v.z),
            opt_g9(a.map(|a| a.0)),
            opt_g9(a.map(|a| a.1)),
            opt_g9(a.map(|a| a.2)),
            opt_g9(r.alpha),
            opt_g9(tp.map(|p| p.0)),
            opt_g9(tp.map(|p| p.1)),
            opt_g9(tp.map(|p| p.2)),
            opt_g9(r.depth_true),
            fmt_g9(r.depth_est),
            opt_g9(r.nees),
            u8::from(r.in_fov),
        );
    }
    out
}

pub fn write_trace_csv(path: &Path, trace: &EstimateTrace) -> Result<(), IoError> {
    fs::write(path, render_trace_csv(trace))?;
    Ok(())
}

/// Writes metric summaries as a JSON array.
pub fn write_summary_json(path: &Path, summaries: &[MetricSummary]) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(summaries).expect("summary serialization");
    fs::write(path, text + "\n")?;
    Ok(())
}

/// One detection-log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRow {
    pub t: f64,
    pub detection: Box3DDetection,
}

/// Renders a detection log (full round-trip float precision).
pub fn render_detection_log(rows: &[DetectionRow]) -> String {
    let mut out = String::new();
    out.push_str(DETECTION_HEADER);
    out.push('\n');
    for row in rows {
        let mut fields: Vec<String> = Vec::with_capacity(30);
        fields.push(row.t.to_string());
        let r = row.detection.r_oc.matrix();
        for i in 0..3 {
            for j in 0..3 {
                fields.push(r[(i, j)].to_string());
            }
        }
        let ld = row.detection.ldims();
        fields.push(ld[1].to_string());
        fields.push(ld[2].to_string());
        for v in &row.detection.vertices {
            fields.push(v.x().to_string());
            fields.push(v.y().to_string());
        }
        fields.push(row.detection.center.x().to_string());
        fields.push(row.detection.center.y().to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_detection_log(path: &Path, rows: &[DetectionRow]) -> Result<(), IoError> {
    fs::write(path, render_detection_log(rows))?;
    Ok(())
}

/// Parses a detection log; errors carry the 1-based line number.
pub fn parse_detection_log<R: Read>(reader: R) -> Result<Vec<DetectionRow>, IoError> {
    let mut rows = Vec::new();
    for (line_no, fields) in csv_lines(reader, DETECTION_HEADER, 30)? {
        let t = fields[0];
        let m = Matrix3::new(
            fields[1], fields[2], fields[3], fields[4], fields[5], fields[6], fields[7],
            fields[8], fields[9],
        );
        // Logged rotations may carry rounding; repair before validating.
        let r_oc = Rotation::orthonormalize(m);
        let lbar2 = fields[10];
        let lbar3 = fields[11];
        let mut vertices = [UnitPlanePoint::from_xy(0.0, 0.0); 8];
        for (i, v) in vertices.iter_mut().enumerate() {
            *v = UnitPlanePoint::from_xy(fields[12 + 2 * i], fields[13 + 2 * i]);
        }
        let center = UnitPlanePoint::from_xy(fields[28], fields[29]);
        let detection = Box3DDetection::new(r_oc, lbar2, lbar3, vertices, center).map_err(|e| {
            IoError::Parse {
                line: line_no,
                message: e.to_string(),
            }
        })?;
        rows.push(DetectionRow { t, detection });
    }
    if rows.is_empty() {
        return Err(IoError::Parse {
            line: 1,
            message: "detection log has no data rows".to_string(),
        });
    }
    Ok(rows)
}

/// One camera-pose row: camera position and `R_c^w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoseRow {
    pub t: f64,
    pub p_c_w: Vector3<f64>,
    pub r_cw: Rotation,
}

pub fn render_camera_poses(rows: &[CameraPoseRow]) -> String {
    let mut out = String::new();
    out.push_str(CAMERA_POSE_HEADER);
    out.push('\n');
    for row in rows {
        let mut fields: Vec<String> = Vec::with_capacity(13);
        fields.push(row.t.to_string());
        fields.push(row.p_c_w.x.to_string());
        fields.push(row.p_c_w.y.to_string());
        fields.push(row.p_c_w.z.to_string());
        let r = row.r_cw.matrix();
        for i in 0..3 {
            for j in 0..3 {
                fields.push(r[(i, j)].to_string());
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_camera_poses(path: &Path, rows: &[CameraPoseRow]) -> Result<(), IoError> {
    fs::write(path, render_camera_poses(rows))?;
    Ok(())
}

pub fn parse_camera_poses<R: Read>(reader: R) -> Result<Vec<CameraPoseRow>, IoError> {
    let mut rows = Vec::new();
    for (line_no, fields) in csv_lines(reader, CAMERA_POSE_HEADER, 13)? {
        let t = fields[0];
        let p_c_w = Vector3::new(fields[1], fields[2], fields[3]);
        let m = Matrix3::new(
            fields[4], fields[5], fields[6], fields[7], fields[8], fields[9], fields[10],
            fields[11], fields[12],
        );
        let _ = line_no;
        rows.push(CameraPoseRow {
            t,
            p_c_w,
            r_cw: Rotation::orthonormalize(m),
        });
    }
    if rows.is_empty() {
        return Err(IoError::Parse {
            line: 1,
            message: "camera-pose log has no data rows".to_string(),
        });
    }
    Ok(rows)
}

/// Splits a CSV body into parsed float rows, validating the header and the
/// field count. Returns `(line_number, fields)` pairs.
fn csv_lines<R: Read>(
    reader: R,
    expected_header: &str,
    expected_fields: usize,
) -> Result<Vec<(usize, Vec<f64>)>, IoError> {
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == expected_header => {}
        Some((_, Ok(header))) => {
            return Err(IoError::Parse {
                line: 1,
                message: format!("unexpected header '{header}'"),
            })
        }
        Some((_, Err(e))) => return Err(IoError::Io(e)),
        None => {
            return Err(IoError::Parse {
                line: 1,
                message: "empty file".to_string(),
            })
        }
    }
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(IoError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let fields = fields.map_err(|e| IoError::Parse {
            line: line_no,
            message: format!("bad float: {e}"),
        })?;
        if fields.len() != expected_fields {
            return Err(IoError::Parse {
                line: line_no,
                message: format!("expected {expected_fields} fields, got {}", fields.len()),
            });
        }
        out.push((line_no, fields));
    }
    Ok(out)
}

/// JSON-lines record written by the observability command, one per window.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VerdictRecord {
    pub scenario: String,
    #[serde(rename = "N")]
    pub n_obs: usize,
    pub n: usize,
    pub rank: usize,
    pub cols: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub cond_a: bool,
    pub cond_b: bool,
    pub observable: bool,
}

pub fn render_verdicts_jsonl(records: &[VerdictRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("verdict serialization"));
        out.push('\n');
    }
    out
}

pub fn write_verdicts_jsonl(path: &Path, records: &[VerdictRecord]) -> Result<(), IoError> {
    fs::write(path, render_verdicts_jsonl(records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_cuboid, Cuboid, Frame, Pose};
    use crate::metrics::TraceRecord;
    use crate::simulator::Estimator;

    #[test]
    fn float_formatting_rule() {
        assert_eq!(fmt_g9(0.0), "0");
        assert_eq!(fmt_g9(-0.0), "0");
        assert_eq!(fmt_g9(0.02), "0.02");
        assert_eq!(fmt_g9(1.0), "1");
        assert_eq!(fmt_g9(-3.5), "-3.5");
        assert_eq!(fmt_g9(1234.5678999), "1234.5679");
        assert_eq!(fmt_g9(0.123456789123), "0.123456789");
        assert_eq!(fmt_g9(123456789.123), "123456789");
        assert_eq!(fmt_g9(1.5e-7), "1.5e-7");
        assert_eq!(fmt_g9(-2.25e12), "-2.25e12");
        assert_eq!(fmt_g9(f64::NAN), "nan");
        assert_eq!(fmt_g9(f64::INFINITY), "inf");
    }

    #[test]
    fn formatted_floats_reparse_within_9_digits() {
        for &x in &[0.02, -17.25, 9.81, 1.0 / 3.0, 2.0_f64.sqrt() * 1e-6, 4.0e11] {
            let s = fmt_g9(x);
            let back: f64 = s.parse().unwrap();
            assert!((back - x).abs() <= 1e-8 * x.abs().max(1e-12), "{x} -> {s} -> {back}");
        }
    }

    #[test]
    fn trace_csv_shape() {
        let trace = EstimateTrace {
            estimator: Estimator::BearingOnly,
            scenario: "t".into(),
            seed: 0,
            records: vec![TraceRecord {
                t: 0.02,
                p: Vector3::new(1.0, 2.0, 3.0),
                v: Vector3::zeros(),
                a: None,
                alpha: None,
                truth_p: None,
                depth_true: None,
                depth_est: 4.5,
                nees: None,
                in_fov: true,
            }],
        };
        let csv = render_trace_csv(&trace);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER);
        let row = lines.next().unwrap();
        assert_eq!(row, "0.02,1,2,3,0,0,0,,,,,,,,,4.5,,1");
        assert_eq!(row.split(',').count(), TRACE_HEADER.split(',').count());
    }

    #[test]
    fn detection_log_round_trip_is_exact() {
        let cuboid = Cuboid::new(0.92, 0.92, 0.55).unwrap();
        let pose = Pose::new(
            Rotation::from_axis_angle(Vector3::new(0.3, -1.0, 0.2), 0.7),
            Vector3::new(0.4, -0.2, 7.0),
            Frame::Object,
            Frame::Camera,
        );
        let proj = project_cuboid(&pose, &cuboid).unwrap();
        let det = Box3DDetection::from_projection(pose.rotation, &cuboid, &proj);
        let rows = vec![
            DetectionRow { t: 0.0, detection: det },
            DetectionRow { t: 0.02, detection: det },
        ];
        let text = render_detection_log(&rows);
        let parsed = parse_detection_log(text.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 2);
        for (orig, back) in rows.iter().zip(parsed.iter()) {
            assert_eq!(orig.t, back.t);
            for (a, b) in orig
                .detection
                .vertices
                .iter()
                .zip(back.detection.vertices.iter())
            {
                assert_eq!(a.x(), b.x());
                assert_eq!(a.y(), b.y());
            }
            // Rotation goes through orthonormalization; shortest round-trip
            // floats keep it bit-close.
            assert!(
                (orig.detection.r_oc.matrix() - back.detection.r_oc.matrix())
                    .abs()
                    .max()
                    < 1e-14
            );
        }
    }

    #[test]
    fn detection_log_errors_carry_line_numbers() {
        assert!(matches!(
            parse_detection_log(&b""[..]),
            Err(IoError::Parse { line: 1, .. })
        ));
        let text = format!("{DETECTION_HEADER}\n1.0,2.0\n");
        match parse_detection_log(text.as_bytes()) {
            Err(IoError::Parse { line: 2, message }) => {
                assert!(message.contains("expected 30 fields"));
            }
            other => panic!("unexpected: {other:?}"),
        }
        let text = format!("{DETECTION_HEADER}\n{}\n", vec!["x"; 30].join(","));
        assert!(matches!(
            parse_detection_log(text.as_bytes()),
            Err(IoError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn camera_pose_round_trip() {
        let rows = vec![CameraPoseRow {
            t: 0.5,
            p_c_w: Vector3::new(1.0, -2.0, 0.25),
            r_cw: Rotation::from_axis_angle(Vector3::new(0.1, 0.9, -0.3), 1.1),
        }];
        let text = render_camera_poses(&rows);
        let parsed = parse_camera_poses(text.as_bytes()).unwrap();
        assert_eq!(parsed[0].t, 0.5);
        assert_eq!(parsed[0].p_c_w, rows[0].p_c_w);
        assert!((parsed[0].r_cw.matrix() - rows[0].r_cw.matrix()).abs().max() < 1e-14);
    }

    #[test]
    fn verdict_jsonl_field_names() {
        let rec = VerdictRecord {
            scenario: "case4".into(),
            n_obs: 8,
            n: 2,
            rank: 10,
            cols: 10,
            sigma_min: 1e-3,
            sigma_max: 2.0,
            cond_a: false,
            cond_b: true,
            observable: true,
        };
        let line = render_verdicts_jsonl(&[rec]);
        assert!(line.contains("\"N\":8"));
        assert!(line.contains("\"n\":2"));
        assert!(line.contains("\"observable\":true"));
    }
}
