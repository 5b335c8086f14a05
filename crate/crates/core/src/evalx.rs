//! Comparing a trained network with the finite-volume reference, and the
//! profile statistics used to quantify smoothing of jumps.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fvref::RefSolution;
use crate::model::ProblemSpec;
use crate::net::{forward_batch, NetConfig, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `sqrt(mean((u_net - u_ref)²))` over every reference node.
    pub energy_norm: f64,
    pub max_abs_error: f64,
    /// RMS error at each stored time level.
    pub rms_per_level: Vec<f64>,
    pub n_eval: usize,
}

/// Reference nodes `(θ_j, t_n)` in the reference's storage order.
pub fn evaluation_points(reference: &RefSolution) -> Vec<(f64, f64)> {
    let grid = &reference.grid;
    let times = grid.times();
    (0..grid.cells)
        .flat_map(|j| {
            let theta = grid.center(j);
            times.iter().map(move |&t| (theta, t))
        })
        .collect()
}

/// Error statistics of predictions laid out like `reference.values`.
pub fn error_report(predicted: &[f64], reference: &RefSolution) -> Result<ErrorReport> {
    if predicted.len() != reference.values.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} reference nodes",
            predicted.len(),
            reference.values.len()
        )));
    }
    if let Some(index) = predicted.iter().position(|u| !u.is_finite()) {
        return Err(Error::NonFinite {
            what: "network prediction",
            index,
        });
    }
    let levels = reference.grid.levels;
    let mut per_level = vec![0.0; levels];
    let mut total = 0.0;
    let mut max_abs: f64 = 0.0;
    for (k, (p, r)) in predicted.iter().zip(&reference.values).enumerate() {
        let d = p - r;
        per_level[k % levels] += d * d;
        total += d * d;
        max_abs = max_abs.max(d.abs());
    }
    let cells = reference.grid.cells as f64;
    Ok(ErrorReport {
        energy_norm: (total / predicted.len() as f64).sqrt(),
        max_abs_error: max_abs,
        rms_per_level: per_level.into_iter().map(|s| (s / cells).sqrt()).collect(),
        n_eval: predicted.len(),
    })
}

/// Energy norm of the network against the reference, evaluated at the
/// reference cell centers and stored time levels without interpolation.
pub fn energy_norm(
    params: &ParamSet,
    config: &NetConfig,
    spec: &ProblemSpec,
    reference: &RefSolution,
) -> Result<ErrorReport> {
    reference.check_compatible(spec)?;
    let predicted = forward_batch(params, config, &evaluation_points(reference))?;
    error_report(&predicted, reference)
}

impl ErrorReport {
    /// Columns `level, t, rms`.
    pub fn write_csv(&self, reference: &RefSolution, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["level", "t", "rms"])?;
        for (n, rms) in self.rms_per_level.iter().enumerate() {
            writer.write_record([
                n.to_string(),
                format!("{:e}", reference.grid.time(n)),
                format!("{rms:e}"),
            ])?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Network values on a cell-centered angle grid at a few times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub thetas: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[k * times.len() + i]` is `u(θ_k, t_i)`.
    pub values: Vec<f64>,
}

/// `θ_k = (k + ½) 2π / m` for `k < m`.
pub fn plot_angles(m: usize) -> Vec<f64> {
    let h = TAU / m as f64;
    (0..m).map(|k| (k as f64 + 0.5) * h).collect()
}

pub fn profile(params: &ParamSet, config: &NetConfig, times: &[f64], m_plot: usize) -> Result<Profile> {
    if m_plot == 0 {
        return Err(Error::config("profile needs at least one angle"));
    }
    if let Some(&t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::Domain {
            what: "profile time",
            value: t,
        });
    }
    let thetas = plot_angles(m_plot);
    let points: Vec<(f64, f64)> = thetas
        .iter()
        .flat_map(|&theta| times.iter().map(move |&t| (theta, t)))
        .collect();
    let values = forward_batch(params, config, &points)?;
    Ok(Profile {
        thetas,
        times: times.to_vec(),
        values,
    })
}

impl Profile {
    /// Values along θ at time index `i`.
    pub fn column(&self, i: usize) -> Vec<f64> {
        let nt = self.times.len();
        (0..self.thetas.len()).map(|k| self.values[k * nt + i]).collect()
    }

    /// Columns `theta, u(t=...)...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["theta".to_string()];
        header.extend(self.times.iter().map(|t| format!("t={t}")));
        writer.write_record(&header)?;
        let nt = self.times.len();
        for (k, theta) in self.thetas.iter().enumerate() {
            let mut row = vec![format!("{theta:e}")];
            row.extend(self.values[k * nt..(k + 1) * nt].iter().map(|u| format!("{u:e}")));
            writer.write_record(&row)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// `Σ |u_{k+1} - u_k|` along the samples (not wrapped around).
pub fn total_variation(samples: &[f64]) -> f64 {
    samples.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Width, in samples, of a transition from level `from` to level `to`:
/// the distance from the last sample still within the first quarter of the
/// jump to the first sample past three quarters of it. `None` if the
/// samples never complete the transition.
pub fn transition_width(samples: &[f64], from: f64, to: f64) -> Option<usize> {
    let jump = to - from;
    if jump == 0.0 {
        return None;
    }
    // Progress through the jump, 0 at `from` and 1 at `to`.
    let progress = |u: f64| (u - from) / jump;
    let end = samples.iter().position(|&u| progress(u) >= 0.75)?;
    let start = samples[..end].iter().rposition(|&u| progress(u) <= 0.25)?;
    Some(end - start)
}
