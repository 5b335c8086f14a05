//! Finite-volume reference solver.
//!
//! Cell averages on a uniform periodic grid are advanced with forward Euler
//! and a global Lax-Friedrichs flux
//! `F_{j+1/2} = ½(V_j u_j + V_{j+1} u_{j+1}) - (α/2)(u_{j+1} - u_j)`,
//! `α = max_j |V_j|`. The velocity at cell centers is the same discrete
//! convolution used by the network loss, with the cell centers as nodes.
//! Snapshots are stored on a uniform time grid by linear interpolation
//! between the two substeps that bracket each storage time.

use std::f64::consts::TAU;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InitialConditionKind, ProblemSpec};

pub const DEFAULT_CELLS: usize = 512;
pub const DEFAULT_LEVELS: usize = 205;
pub const DEFAULT_CFL: f64 = 0.9;
pub const SCHEME_NAME: &str = "lax-friedrichs-global";

/// Lower bound on the wave speed used in the step-size formula.
const MIN_SPEED: f64 = 1e-12;
/// Cell values below this count as a negative overshoot.
const NEGATIVE_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvGrid {
    pub cells: usize,
    /// Stored time levels, including `t = 0` and `t = T`.
    pub levels: usize,
    pub horizon: f64,
}

impl FvGrid {
    pub fn new(cells: usize, levels: usize, horizon: f64) -> Result<Self> {
        let grid = FvGrid { cells, levels, horizon };
        grid.validate()?;
        Ok(grid)
    }

    pub fn for_spec(spec: &ProblemSpec) -> Self {
        FvGrid {
            cells: DEFAULT_CELLS,
            levels: DEFAULT_LEVELS,
            horizon: spec.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells < 8 {
            return Err(Error::config(format!(
                "reference grid needs at least 8 cells, got {}",
                self.cells
            )));
        }
        if self.levels < 2 {
            return Err(Error::config(format!(
                "reference grid needs at least 2 time levels, got {}",
                self.levels
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!(
                "final time must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn dtheta(&self) -> f64 {
        TAU / self.cells as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dtheta()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.center(j)).collect()
    }

    pub fn time(&self, n: usize) -> f64 {
        if n + 1 == self.levels {
            self.horizon
        } else {
            n as f64 * self.horizon / (self.levels - 1) as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.levels).map(|n| self.time(n)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefSolution {
    pub grid: FvGrid,
    pub spec: ProblemSpec,
    pub cfl: f64,
    /// Cell averages, `values[j * levels + n]`.
    pub values: Vec<f64>,
    /// Set when some cell dropped below `-1e-10` during the run.
    pub negative_overshoot: bool,
    /// Internal forward-Euler steps taken.
    pub steps: usize,
}

impl RefSolution {
    pub fn value(&self, j: usize, n: usize) -> f64 {
        self.values[j * self.grid.levels + n]
    }

    pub fn level(&self, n: usize) -> Vec<f64> {
        (0..self.grid.cells).map(|j| self.value(j, n)).collect()
    }

    pub fn mass(&self, n: usize) -> f64 {
        self.level(n).iter().sum::<f64>() * self.grid.dtheta()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Errors unless `other` describes the same problem on the same grid.
    pub fn check_compatible(&self, spec: &ProblemSpec) -> Result<()> {
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        if !same(self.spec.horizon, spec.horizon) || !same(self.spec.coupling, spec.coupling) {
            return Err(Error::Mismatch(format!(
                "reference was computed for T = {}, K = {} but the problem has T = {}, K = {}",
                self.spec.horizon, self.spec.coupling, spec.horizon, spec.coupling
            )));
        }
        if self.spec.ic != spec.ic
            || (spec.ic == InitialConditionKind::Dirac && !same(self.spec.mollifier, spec.mollifier))
        {
            return Err(Error::Mismatch(format!(
                "reference initial data `{}` does not match `{}`",
                self.spec.ic, spec.ic
            )));
        }
        Ok(())
    }
}

/// Velocity at cell centers by direct summation,
/// `V_j = -K Δθ Σ_k sin(θ_j - θ_k) u_k`.
pub fn cell_velocity_direct(u: &[f64], coupling: f64) -> Vec<f64> {
    let m = u.len();
    let h = TAU / m as f64;
    (0..m)
        .map(|j| {
            let theta = (j as f64 + 0.5) * h;
            let s: f64 = u
                .iter()
                .enumerate()
                .map(|(k, uk)| (theta - (k as f64 + 0.5) * h).sin() * uk)
                .sum();
            -coupling * h * s
        })
        .collect()
}

/// Same sum via the first Fourier moments:
/// `sin(θ_j - θ_k) = sin θ_j cos θ_k - cos θ_j sin θ_k`.
struct MomentVelocity {
    sin: Vec<f64>,
    cos: Vec<f64>,
    scale: f64,
}

impl MomentVelocity {
    fn new(grid: &FvGrid, coupling: f64) -> Self {
        let (sin, cos) = grid.centers().iter().map(|c| c.sin_cos()).unzip();
        MomentVelocity {
            sin,
            cos,
            scale: -coupling * grid.dtheta(),
        }
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let mut c = 0.0;
        let mut s = 0.0;
        for ((uk, ck), sk) in u.iter().zip(&self.cos).zip(&self.sin) {
            c += ck * uk;
            s += sk * uk;
        }
        for ((v, sj), cj) in out.iter_mut().zip(&self.sin).zip(&self.cos) {
            *v = self.scale * (sj * c - cj * s);
        }
    }
}

/// Exact cell averages of the initial data.
pub fn project_initial_condition(spec: &ProblemSpec, grid: &FvGrid) -> Vec<f64> {
    let h = grid.dtheta();
    (0..grid.cells)
        .map(|j| spec.ic_cell_average(j as f64 * h, (j + 1) as f64 * h))
        .collect()
}

/// One forward-Euler step of length `dt` with global speed `alpha`.
fn lf_step(u: &[f64], v: &[f64], alpha: f64, ratio: f64, flux: &mut [f64], next: &mut [f64]) {
    let m = u.len();
    for j in 0..m {
        let k = if j + 1 == m { 0 } else { j + 1 };
        flux[j] = 0.5 * (v[j] * u[j] + v[k] * u[k]) - 0.5 * alpha * (u[k] - u[j]);
    }
    for j in 0..m {
        let left = if j == 0 { flux[m - 1] } else { flux[j - 1] };
        next[j] = u[j] - ratio * (flux[j] - left);
    }
}

pub fn fv_solve(spec: &ProblemSpec, grid: &FvGrid, cfl: f64) -> Result<RefSolution> {
    spec.validate()?;
    grid.validate()?;
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::Cfl {
            courant: cfl,
            limit: 1.0,
        });
    }
    if (grid.horizon - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::Mismatch(format!(
            "grid horizon {} differs from problem horizon {}",
            grid.horizon, spec.horizon
        )));
    }
    let m = grid.cells;
    let h = grid.dtheta();
    let velocity = MomentVelocity::new(grid, spec.coupling);

    let mut u = project_initial_condition(spec, grid);
    let mut next = vec![0.0; m];
    let mut v = vec![0.0; m];
    let mut flux = vec![0.0; m];
    let mut values = vec![0.0; m * grid.levels];
    let store = |values: &mut [f64], n: usize, a: &[f64], b: &[f64], w: f64| {
        for j in 0..m {
            values[j * grid.levels + n] = if w == 1.0 { b[j] } else { (1.0 - w) * a[j] + w * b[j] };
        }
    };
    store(&mut values, 0, &u, &u, 1.0);

    let mut negative = u.iter().any(|&x| x < NEGATIVE_TOLERANCE);
    let mut t = 0.0;
    let mut n_next = 1;
    let mut steps = 0;
    while n_next < grid.levels {
        velocity.apply(&u, &mut v);
        let alpha = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut dt = cfl * h / alpha.max(MIN_SPEED);
        let last = t + dt >= grid.horizon;
        if last {
            dt = grid.horizon - t;
        }
        let courant = alpha * dt / h;
        if !(courant <= cfl * (1.0 + 1e-12)) {
            return Err(Error::Cfl { courant, limit: cfl });
        }
        lf_step(&u, &v, alpha, dt / h, &mut flux, &mut next);
        if let Some(index) = next.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "reference cell value",
                index,
            });
        }
        negative |= next.iter().any(|&x| x < NEGATIVE_TOLERANCE);
        let t_new = if last { grid.horizon } else { t + dt };
        while n_next < grid.levels && grid.time(n_next) <= t_new {
            // At t = T the weight is exactly 1 and the new state is copied.
            let w = (grid.time(n_next) - t) / (t_new - t);
            store(&mut values, n_next, &u, &next, w);
            n_next += 1;
        }
        std::mem::swap(&mut u, &mut next);
        t = t_new;
        steps += 1;
    }
    if negative {
        log::warn!("reference solution dipped below {NEGATIVE_TOLERANCE}");
    }
    Ok(RefSolution {
        grid: *grid,
        spec: *spec,
        cfl,
        values,
        negative_overshoot: negative,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub cells: usize,
    /// L¹ distance at `t = T` to the previous (coarser) row; `None` on the first row.
    pub error: Option<f64>,
    /// Observed order against the previous row's error.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `-log(error)` against `log(M)`.
    pub fitted_order: Option<f64>,
}

/// L¹ distance between a coarse solution and a finer one averaged onto it.
fn l1_restricted(coarse: &[f64], fine: &[f64]) -> Result<f64> {
    if fine.len() % coarse.len() != 0 {
        return Err(Error::config(format!(
            "cell counts {} and {} are not nested",
            coarse.len(),
            fine.len()
        )));
    }
    let r = fine.len() / coarse.len();
    let h = TAU / coarse.len() as f64;
    Ok(coarse
        .iter()
        .zip(fine.chunks_exact(r))
        .map(|(c, f)| (c - f.iter().sum::<f64>() / r as f64).abs())
        .sum::<f64>()
        * h)
}

pub fn fv_convergence_study(spec: &ProblemSpec, cells: &[usize], cfl: f64) -> Result<ConvergenceTable> {
    if cells.len() < 3 {
        return Err(Error::config("a convergence study needs at least three grids"));
    }
    if cells.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("grid sizes must be non-decreasing"));
    }
    let finals = cells
        .iter()
        .map(|&m| {
            let grid = FvGrid::new(m, 2, spec.horizon)?;
            Ok(fv_solve(spec, &grid, cfl)?.level(1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = vec![ConvergenceRow {
        cells: cells[0],
        error: None,
        order: None,
    }];
    for i in 1..cells.len() {
        let error = l1_restricted(&finals[i - 1], &finals[i])?;
        let order = match rows[i - 1].error {
            Some(prev) if prev > 0.0 && error > 0.0 && cells[i] > cells[i - 1] => {
                Some((prev / error).ln() / (cells[i] as f64 / cells[i - 1] as f64).ln())
            }
            _ => None,
        };
        rows.push(ConvergenceRow {
            cells: cells[i],
            error: Some(error),
            order,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.error.filter(|&e| e > 0.0).map(|e| ((r.cells as f64).ln(), -e.ln())))
        .collect();
    let fitted_order = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    } else {
        None
    };
    Ok(ConvergenceTable { rows, fitted_order })
}

const BINARY_MAGIC: &[u8; 8] = b"KPREF001";

fn ic_code(ic: InitialConditionKind) -> u64 {
    match ic {
        InitialConditionKind::Polynomial => 0,
        InitialConditionKind::Dirac => 1,
        InitialConditionKind::Piecewise => 2,
    }
}

fn ic_from_code(code: u64) -> Option<InitialConditionKind> {
    match code {
        0 => Some(InitialConditionKind::Polynomial),
        1 => Some(InitialConditionKind::Dirac),
        2 => Some(InitialConditionKind::Piecewise),
        _ => None,
    }
}

impl RefSolution {
    /// Binary layout, little-endian 8-byte fields: magic `KPREF001`, M, N_t,
    /// T, K, IC code (0 poly, 1 dirac, 2 piecewise), ε, cfl, scheme code
    /// (0 = global Lax-Friedrichs), overshoot flag, step count, then the
    /// `M × N_t` values with the time index fastest.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
            w.write_all(BINARY_MAGIC)?;
            for word in [
                self.grid.cells as u64,
                self.grid.levels as u64,
                self.spec.horizon.to_bits(),
                self.spec.coupling.to_bits(),
                ic_code(self.spec.ic),
                self.spec.mollifier.to_bits(),
                self.cfl.to_bits(),
                0,
                self.negative_overshoot as u64,
                self.steps as u64,
            ] {
                w.write_all(&word.to_le_bytes())?;
            }
            for v in &self.values {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let bad = |reason: String| Error::format("reference", path, reason);
        if bytes.len() < 88 || &bytes[..8] != BINARY_MAGIC {
            return Err(bad("missing reference header".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (cells, levels) = (word(0) as usize, word(1) as usize);
        let ic = ic_from_code(word(4)).ok_or_else(|| bad(format!("unknown initial-condition code {}", word(4))))?;
        if word(7) != 0 {
            return Err(bad(format!("unknown scheme code {}", word(7))));
        }
        let expected = cells
            .checked_mul(levels)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad("grid dimensions overflow".into()))?;
        if bytes.len() - 88 != expected {
            return Err(bad(format!(
                "header declares {cells} x {levels} values but the file holds {} bytes of data",
                bytes.len() - 88
            )));
        }
        let values: Vec<f64> = bytes[88..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let spec = ProblemSpec {
            coupling: f64::from_bits(word(3)),
            horizon: f64::from_bits(word(2)),
            ic,
            mollifier: f64::from_bits(word(5)),
        };
        RefSolution::assemble(
            path,
            spec,
            cells,
            levels,
            f64::from_bits(word(6)),
            word(8) != 0,
            word(9) as usize,
            values,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        path: &Path,
        spec: ProblemSpec,
        cells: usize,
        levels: usize,
        cfl: f64,
        negative_overshoot: bool,
        steps: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |reason: String| Error::format("reference", path, reason);
        let grid = FvGrid::new(cells, levels, spec.horizon).map_err(|e| bad(e.to_string()))?;
        spec.validate().map_err(|e| bad(e.to_string()))?;
        if values.len() != cells * levels {
            return Err(bad(format!(
                "expected {} values, found {}",
                cells * levels,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite value at position {i}")));
        }
        Ok(RefSolution {
            grid,
            spec,
            cfl,
            values,
            negative_overshoot,
            steps,
        })
    }

    /// CSV layout: `#`-prefixed `key=value` metadata lines, then a header
    /// `cell,level,theta,t,u` and one row per grid node, cells outermost.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let meta = format!(
            "# kpinn-reference 1\n# cells={}\n# levels={}\n# horizon={:e}\n# coupling={:e}\n# ic={}\n# mollifier={:e}\n# cfl={:e}\n# scheme={}\n# negative_overshoot={}\n# steps={}\n",
            self.grid.cells,
            self.grid.levels,
            self.spec.horizon,
            self.spec.coupling,
            self.spec.ic,
            self.spec.mollifier,
            self.cfl,
            SCHEME_NAME,
            self.negative_overshoot,
            self.steps
        );
        w.write_all(meta.as_bytes()).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["cell", "level", "theta", "t", "u"])?;
        for j in 0..self.grid.cells {
            for n in 0..self.grid.levels {
                writer.write_record([
                    j.to_string(),
                    n.to_string(),
                    format!("{:e}", self.grid.center(j)),
                    format!("{:e}", self.grid.time(n)),
                    format!("{:e}", self.value(j, n)),
                ])?;
            }
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: String| Error::format("reference", path, reason);
        let mut meta = std::collections::HashMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |key: &str| meta.get(key).ok_or_else(|| bad(format!("missing `{key}` metadata")));
        let num = |key: &str| -> Result<f64> { get(key)?.parse().map_err(|_| bad(format!("bad `{key}` metadata"))) };
        let cells = num("cells")? as usize;
        let levels = num("levels")? as usize;
        if get("scheme")? != SCHEME_NAME {
            return Err(bad(format!("unknown scheme `{}`", get("scheme")?)));
        }
        let ic: InitialConditionKind = get("ic")?.parse().map_err(|e: Error| bad(e.to_string()))?;
        let spec = ProblemSpec {
            coupling: num("coupling")?,
            horizon: num("horizon")?,
            ic,
            mollifier: num("mollifier")?,
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut values = vec![f64::NAN; cells.saturating_mul(levels)];
        let mut seen = 0usize;
        for record in reader.records() {
            let record = record?;
            let field = |k: usize| record.get(k).ok_or_else(|| bad(format!("short row {}", seen + 1)));
            let j: usize = field(0)?.parse().map_err(|_| bad("bad cell index".into()))?;
            let n: usize = field(1)?.parse().map_err(|_| bad("bad level index".into()))?;
            let u: f64 = field(4)?.parse().map_err(|_| bad("bad value".into()))?;
            if j >= cells || n >= levels {
                return Err(bad(format!(
                    "node ({j}, {n}) outside the declared {cells} x {levels} grid"
                )));
            }
            values[j * levels + n] = u;
            seen += 1;
        }
        if seen != values.len() {
            return Err(bad(format!("header declares {} nodes, file has {seen}", values.len())));
        }
        let overshoot = get("negative_overshoot")? == "true";
        let steps = num("steps")? as usize;
        RefSolution::assemble(path, spec, cells, levels, num("cfl")?, overshoot, steps, values)
    }

    /// Loads either format, chosen by the `.csv` extension.
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            RefSolution::load_csv(path)
        } else {
            RefSolution::load_binary(path)
        }
    }
}
