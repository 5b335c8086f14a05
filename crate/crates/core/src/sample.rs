//! Training point sets: Latin-hypercube collocation points in `(θ, t)` and
//! stratified angles for the initial-condition loss.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RNG_ALGORITHM: &str = "chacha8";

const COLLOCATION_STREAM: u64 = 1;
const IC_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub points: Vec<(f64, f64)>,
    pub horizon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcSet {
    pub points: Vec<f64>,
    pub seed: u64,
}

/// Latin-hypercube sample of `n` points in `[0, 2π) × [0, T)`: each of the
/// `n` equal bins of either axis holds exactly one point.
pub fn lhs_sample(n: usize, horizon: f64, seed: u64) -> Result<CollocationSet> {
    if n == 0 {
        return Err(Error::config("collocation set needs at least one point"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::config(format!("final time must be positive, got {horizon}")));
    }
    let mut rng = rng_for(seed, COLLOCATION_STREAM);
    let mut theta_bins: Vec<usize> = (0..n).collect();
    let mut t_bins: Vec<usize> = (0..n).collect();
    theta_bins.shuffle(&mut rng);
    t_bins.shuffle(&mut rng);
    let width = 1.0 / n as f64;
    let points = theta_bins
        .into_iter()
        .zip(t_bins)
        .map(|(a, b)| {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            // Clamp guards against the last bin rounding up to the upper edge.
            let theta = ((a as f64 + x) * width * TAU).min(TAU * (1.0 - f64::EPSILON));
            let t = ((b as f64 + y) * width * horizon).min(horizon * (1.0 - f64::EPSILON));
            (theta, t)
        })
        .collect();
    Ok(CollocationSet { points, horizon, seed })
}

/// One uniformly jittered angle in each of `n` equal bins of `[0, 2π)`.
pub fn ic_sample(n: usize, seed: u64) -> Result<IcSet> {
    if n == 0 {
        return Err(Error::config("initial-condition set needs at least one point"));
    }
    let mut rng = rng_for(seed, IC_STREAM);
    let width = TAU / n as f64;
    let points = (0..n)
        .map(|k| {
            let x: f64 = rng.random();
            ((k as f64 + x) * width).min(TAU * (1.0 - f64::EPSILON))
        })
        .collect();
    Ok(IcSet { points, seed })
}

fn write_rows(path: &Path, rows: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["theta", "t"])?;
    for (theta, t) in rows {
        writer.write_record([format!("{theta:e}"), format!("{t:e}")])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, self.points.iter().copied())
    }
}

impl IcSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, self.points.iter().map(|&theta| (theta, 0.0)))
    }
}
