use std::path::Path;

use super::mc::McSummary;
use super::run::TraceRecord;
use crate::error::{Error, Result};
use crate::mesh::vtk::write_vtk;
use crate::scheme::StepState;

pub const STEPS_HEADER: &str = "step,t,dofs,mass,energy,lambda,newton_iters,\
eta_space_1,eta_space_2,eta_space_3,eta_space_4,eta_space_5,eta_space_6,\
eta_time_1,eta_time_2,eta_time_3,eta_time_4,eta_time_5,eta_time_6,\
eta_noise,mu_m1,mu_0,mu_1,muh_m1,muh_0,muh_1";

pub const HISTOGRAM_HEADER: &str = "bin_left,bin_right,count";

pub const EXPECT_HEADER: &str = "t,energy_mean,energy_se,lambda_mean,lambda_se";

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Encoding(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header.split(',')).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per level; `lambda` is interpolated between the sampled levels.
pub fn write_steps_csv(path: &Path, trace: &TraceRecord) -> Result<()> {
    let lambda = trace.lambda_series();
    let rows = trace.steps.iter().zip(lambda).map(|(s, l)| {
        let r = &s.report;
        let mut row = vec![
            s.step.to_string(),
            s.t.to_string(),
            s.dofs.to_string(),
            s.mass.to_string(),
            s.energy.to_string(),
            l.to_string(),
            s.newton_iters.to_string(),
        ];
        row.extend(r.eta_space.iter().chain(&r.eta_time).map(f64::to_string));
        row.push(r.eta_noise.to_string());
        row.extend(r.mu.iter().chain(&r.muh).map(f64::to_string));
        row
    });
    write_rows(path, STEPS_HEADER, rows)
}

pub fn write_histogram_csv(path: &Path, summary: &McSummary) -> Result<()> {
    let h = &summary.histogram;
    let rows = h.counts.iter().enumerate().map(|(i, c)| {
        vec![h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()]
    });
    write_rows(path, HISTOGRAM_HEADER, rows)
}

pub fn write_expect_csv(path: &Path, summary: &McSummary) -> Result<()> {
    let rows = summary.expectations.iter().map(|e| {
        vec![e.t.to_string(), e.energy.mean.to_string(), opt(e.energy.se), opt(e.lambda.map(|l| l.mean)), opt(e.lambda.and_then(|l| l.se))]
    });
    write_rows(path, EXPECT_HEADER, rows)
}

/// Legacy VTK snapshot with the fields `u`, `w`, `utilde` and `uhat`.
pub fn write_state_vtk(path: &Path, s: &StepState) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_vtk(
        path,
        s.mesh(),
        &format!("level {} t = {}", s.n, s.t),
        &[("u", s.u.values()), ("w", s.w.values()), ("utilde", s.ut.values()), ("uhat", s.uh.values())],
    )
}
