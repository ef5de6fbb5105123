//! Artifact emission: the fixed-schema per-step CSV, the aggregate JSON
//! summary, and optional raw PGM frame dumps. Formatting is deterministic so
//! identical logs produce identical bytes.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, UnitQuaternion};
use thiserror::Error;

use crate::raster::GrayImage;

use super::trial::{StepRecord, SummaryReport, TrialLog};

/// Column order is part of the output contract; do not reorder.
pub const TRIAL_CSV_HEADER: &str = "t,px,py,pz,qw,qx,qy,qz,err_mm,err_deg,Fz,\
v_x,v_y,v_z,w_x,w_y,w_z,ibvs_vx,ibvs_vz,ibvs_wy,normal_wx,normal_wy,force_vz,\
pl_px_dist,rs_px_dist,ncc,nssd,mi,converged";

#[derive(Debug, Error)]
#[error("writing {path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn write_row<W: Write>(w: &mut W, r: &StepRecord) -> io::Result<()> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
        r.pose.rotation,
    ));
    let c = q.coords; // (x, y, z, w)
    let p = &r.pose.translation;
    let fused = &r.command.fused;
    let ibvs = &r.command.ibvs;
    write!(w, "{},{},{},{},{},{},{},{}", r.t, p.x, p.y, p.z, c.w, c.x, c.y, c.z)?;
    write!(w, ",{},{},{}", r.err_mm, r.err_deg, r.force_n)?;
    write!(
        w,
        ",{},{},{},{},{},{}",
        fused.linear.x, fused.linear.y, fused.linear.z, fused.angular.x, fused.angular.y,
        fused.angular.z
    )?;
    write!(
        w,
        ",{},{},{},{},{},{}",
        ibvs.linear.x,
        ibvs.linear.z,
        ibvs.angular.y,
        r.command.normal_wx,
        r.command.normal_wy,
        r.command.force_vz
    )?;
    writeln!(
        w,
        ",{},{},{},{},{},{}",
        opt(r.pl_px),
        opt(r.rs_px),
        r.ncc,
        r.nssd,
        r.mi,
        u8::from(r.converged)
    )
}

/// Writes the per-step log in the fixed 29-column schema. Absent class
/// distances become empty fields; floats use shortest round-trip form.
pub fn write_trial_csv<W: Write>(log: &TrialLog, w: &mut W) -> io::Result<()> {
    writeln!(w, "{TRIAL_CSV_HEADER}")?;
    for record in &log.records {
        write_row(w, record)?;
    }
    Ok(())
}

/// In-memory CSV emission, used for byte-identity checks.
pub fn trial_csv_bytes(log: &TrialLog) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_trial_csv(log, &mut bytes).expect("writing to a Vec cannot fail");
    bytes
}

pub fn write_summary_json<W: Write>(summary: &SummaryReport, w: &mut W) -> io::Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    writeln!(w, "{text}")
}

/// Binary PGM (P5), one byte per pixel, row-major.
pub fn write_pgm<W: Write>(image: &GrayImage, w: &mut W) -> io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", image.width(), image.height())?;
    w.write_all(image.cells())
}

fn emit_file<F>(dir: &Path, name: &str, fill: F) -> Result<PathBuf, OutputError>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let path = dir.join(name);
    let wrap = |source: io::Error| OutputError { path: path.clone(), source };
    let mut file = BufWriter::new(File::create(&path).map_err(wrap)?);
    fill(&mut file).map_err(wrap)?;
    file.flush().map_err(wrap)?;
    Ok(path)
}

/// Writes every artifact of a sweep into `dir`: `trial.csv` for the first
/// repeat, `trial_<k>.csv` for the rest, `summary.json`, and any captured
/// frames as `frame_<step>.pgm` (prefixed with the trial index when the
/// sweep has several repeats). Returns the written paths.
pub fn emit_outputs(
    trials: &[TrialLog],
    summary: &SummaryReport,
    dir: &Path,
) -> Result<Vec<PathBuf>, OutputError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| OutputError { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    for (i, log) in trials.iter().enumerate() {
        let name = if i == 0 { "trial.csv".to_string() } else { format!("trial_{i}.csv") };
        written.push(emit_file(dir, &name, |w| write_trial_csv(log, w))?);
        for (step, image) in &log.frames {
            let name = if trials.len() == 1 {
                format!("frame_{step:05}.pgm")
            } else {
                format!("trial_{i}_frame_{step:05}.pgm")
            };
            written.push(emit_file(dir, &name, |w| write_pgm(image, w))?);
        }
    }
    written.push(emit_file(dir, "summary.json", |w| write_summary_json(summary, w))?);
    Ok(written)
}
