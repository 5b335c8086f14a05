//! Architecture sweeps with a resumable on-disk store.
//!
//! Store layout under the root directory:
//!
//! ```text
//! ledger.csv              append-only summary, one row per finished cell
//! cells/<id>.json         full record of a finished cell
//! cells/<id>.params       trained parameters (text checkpoint)
//! cells/<id>.history.csv  per-epoch losses
//! chains/<chain>.state    optimizer state of an unfinished training run
//! references/<key>.bin    cached finite-volume references
//! ```
//!
//! Cells that differ only in their epoch budget share one training run (a
//! *chain*): the run stops at each budget, records that cell, and continues.
//! Stopping costs nothing because full-batch Adam has no epoch-dependent
//! schedule, so the parameters after `e` epochs are those of an `e`-epoch run.
//! A cell's seed is derived from everything except the budget for the same
//! reason. Chain state is saved periodically, so an interrupted sweep
//! resumes mid-run and reproduces the uninterrupted result exactly.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalx::energy_norm;
use crate::fvref::{fv_solve, FvGrid, RefSolution, DEFAULT_CFL};
use crate::model::{LossWeights, ProblemSpec};
use crate::net::{ActivationKind, NetConfig};
use crate::sample::RNG_ALGORITHM;
use crate::train::{write_history_csv, AdamConfig, TrainConfig, TrainState, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub activations: Vec<ActivationKind>,
    /// `(depth, width)` pairs.
    pub shapes: Vec<(usize, usize)>,
    pub epochs: Vec<usize>,
    pub colloc: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            activations: ActivationKind::ALL.to_vec(),
            shapes: vec![(4, 64), (4, 128), (6, 128), (6, 256), (8, 256)],
            epochs: vec![2048, 4096, 5120, 10240],
            colloc: vec![1024, 2048],
            seeds: vec![1],
        }
    }
}

fn dedup<T: PartialEq + Clone>(items: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        if !out.contains(item) {
            out.push(item.clone());
        }
    }
    out
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.activations.is_empty()
            || self.shapes.is_empty()
            || self.epochs.is_empty()
            || self.colloc.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::config("every sweep axis needs at least one value"));
        }
        if self.shapes.iter().any(|&(l, n)| l == 0 || n == 0) {
            return Err(Error::config("network depth and width must be at least 1"));
        }
        if self.epochs.contains(&0) || self.colloc.contains(&0) {
            return Err(Error::config("epoch budgets and collocation counts must be at least 1"));
        }
        Ok(())
    }

    /// Cross product in a fixed order (duplicate axis values collapsed).
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut cells = Vec::new();
        for &seed in &dedup(&self.seeds) {
            for &activation in &dedup(&self.activations) {
                for &(depth, width) in &dedup(&self.shapes) {
                    for &n_colloc in &dedup(&self.colloc) {
                        for &epochs in &dedup(&self.epochs) {
                            cells.push(CellSpec {
                                activation,
                                depth,
                                width,
                                epochs,
                                n_colloc,
                                base_seed: seed,
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellSpec {
    pub activation: ActivationKind,
    pub depth: usize,
    pub width: usize,
    pub epochs: usize,
    pub n_colloc: usize,
    pub base_seed: u64,
}

/// Everything that determines a cell's result. Serialized to JSON and hashed.
#[derive(Serialize)]
struct CellKey<'a> {
    activation: ActivationKind,
    init_scheme: &'static str,
    depth: usize,
    width: usize,
    epochs: Option<usize>,
    n_colloc: usize,
    n_ic: usize,
    n_quad: usize,
    adam: &'a AdamConfig,
    weights: &'a LossWeights,
    resample_every: Option<usize>,
    problem: &'a ProblemSpec,
    rng: &'static str,
    base_seed: u64,
}

fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl CellSpec {
    fn key<'a>(&self, spec: &'a ProblemSpec, template: &'a TrainConfig, with_epochs: bool) -> CellKey<'a> {
        CellKey {
            activation: self.activation,
            init_scheme: self.activation.init_scheme().as_str(),
            depth: self.depth,
            width: self.width,
            epochs: with_epochs.then_some(self.epochs),
            n_colloc: self.n_colloc,
            n_ic: template.n_ic,
            n_quad: template.n_quad,
            adam: &template.adam,
            weights: &template.weights,
            resample_every: template.resample_every,
            problem: spec,
            rng: RNG_ALGORITHM,
            base_seed: self.base_seed,
        }
    }

    fn fingerprint(&self, spec: &ProblemSpec, template: &TrainConfig, with_epochs: bool) -> String {
        serde_json::to_string(&self.key(spec, template, with_epochs)).expect("cell key serializes")
    }

    pub fn cell_id(&self, spec: &ProblemSpec, template: &TrainConfig) -> String {
        sha256_hex(&self.fingerprint(spec, template, true))[..16].to_string()
    }

    pub fn chain_id(&self, spec: &ProblemSpec, template: &TrainConfig) -> String {
        sha256_hex(&self.fingerprint(spec, template, false))[..16].to_string()
    }

    /// Seed for initialization and sampling; independent of the epoch budget.
    pub fn cell_seed(&self, spec: &ProblemSpec, template: &TrainConfig) -> u64 {
        let digest = Sha256::digest(self.fingerprint(spec, template, false).as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn net_config(&self, spec: &ProblemSpec, template: &TrainConfig) -> NetConfig {
        NetConfig::new(self.depth, self.width, self.activation, self.cell_seed(spec, template))
    }

    pub fn train_config(&self, spec: &ProblemSpec, template: &TrainConfig) -> TrainConfig {
        TrainConfig {
            n_colloc: self.n_colloc,
            epochs: self.epochs,
            seed: self.cell_seed(spec, template),
            early_stop: None,
            checkpoints: Vec::new(),
            ..template.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    /// A loss, gradient or parameter became NaN or infinite.
    Nonfinite,
    /// Finished, but the final loss exceeds the initial loss.
    Diverged,
    /// Failed for a non-numerical reason (see the message).
    Failed,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::Nonfinite => "nonfinite",
            RecordStatus::Diverged => "diverged",
            RecordStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub cell_id: String,
    pub chain_id: String,
    pub cell: CellSpec,
    pub cell_seed: u64,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub problem: ProblemSpec,
    pub init_scheme: String,
    pub rng: String,
    pub status: RecordStatus,
    pub energy_norm: Option<f64>,
    pub max_abs_error: Option<f64>,
    pub wall_clock_secs: f64,
    pub epochs_completed: usize,
    pub initial_l_total: Option<f64>,
    pub final_l_res: Option<f64>,
    pub final_l_ic: Option<f64>,
    pub final_l_total: Option<f64>,
    /// Number of cells trained concurrently when this one ran.
    pub parallelism: usize,
    pub message: Option<String>,
}

impl SweepRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok && self.energy_norm.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub store: PathBuf,
    /// Concurrent training runs.
    pub parallelism: usize,
    /// Retrain cells that already have records.
    pub force: bool,
    pub reference_grid: Option<FvGrid>,
    pub cfl: f64,
    /// Epochs between saves of the chain optimizer state.
    pub state_every: usize,
}

impl SweepOptions {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        SweepOptions {
            store: store.into(),
            parallelism: default_parallelism(),
            force: false,
            reference_grid: None,
            cfl: DEFAULT_CFL,
            state_every: 256,
        }
    }
}

/// Available cores minus one, at least one.
pub fn default_parallelism() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get().saturating_sub(1))
        .unwrap_or(1)
        .max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Records of every grid cell, in grid order.
    pub records: Vec<SweepRecord>,
    /// Cells trained by this invocation.
    pub trained: usize,
}

/// Handle on a sweep store directory.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

const LEDGER_HEADER: [&str; 14] = [
    "cell_id",
    "chain_id",
    "status",
    "activation",
    "depth",
    "width",
    "epochs",
    "n_colloc",
    "base_seed",
    "energy_norm",
    "wall_clock_secs",
    "final_l_res",
    "final_l_ic",
    "parallelism",
];

fn opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:e}")).unwrap_or_default()
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["cells", "chains", "references"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_path(&self, cell_id: &str) -> PathBuf {
        self.root.join("cells").join(format!("{cell_id}.json"))
    }

    pub fn params_path(&self, cell_id: &str) -> PathBuf {
        self.root.join("cells").join(format!("{cell_id}.params"))
    }

    pub fn history_path(&self, cell_id: &str) -> PathBuf {
        self.root.join("cells").join(format!("{cell_id}.history.csv"))
    }

    pub fn chain_state_path(&self, chain_id: &str) -> PathBuf {
        self.root.join("chains").join(format!("{chain_id}.state"))
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join("ledger.csv")
    }

    pub fn load_record(&self, cell_id: &str) -> Result<Option<SweepRecord>> {
        let path = self.record_path(cell_id);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(
                serde_json::from_str(&text).map_err(|e| Error::format("sweep record", &path, e.to_string()))?,
            )),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Every record in the store, ordered by cell id.
    pub fn load_all(&self) -> Result<Vec<SweepRecord>> {
        let dir = self.root.join("cells");
        let mut ids: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok())
            .filter_map(|entry| {
                let name = entry.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_string)
            })
            .collect();
        ids.sort();
        ids.iter().filter_map(|id| self.load_record(id).transpose()).collect()
    }

    /// Writes the record file and appends a ledger row.
    pub fn commit(&self, record: &SweepRecord) -> Result<()> {
        let json = serde_json::to_string_pretty(record)?;
        write_atomic(&self.record_path(&record.cell_id), json.as_bytes())?;
        let path = self.ledger_path();
        let fresh = !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(LEDGER_HEADER)?;
        }
        writer.write_record([
            record.cell_id.clone(),
            record.chain_id.clone(),
            record.status.as_str().to_string(),
            record.cell.activation.to_string(),
            record.cell.depth.to_string(),
            record.cell.width.to_string(),
            record.cell.epochs.to_string(),
            record.cell.n_colloc.to_string(),
            record.cell.base_seed.to_string(),
            opt(record.energy_norm),
            format!("{:e}", record.wall_clock_secs),
            opt(record.final_l_res),
            opt(record.final_l_ic),
            record.parallelism.to_string(),
        ])?;
        writer.flush().map_err(|e| Error::io(&path, e))
    }

    /// The reference for `spec` on `grid`, solved once and cached.
    pub fn reference(&self, spec: &ProblemSpec, grid: &FvGrid, cfl: f64) -> Result<RefSolution> {
        #[derive(Serialize)]
        struct RefKey<'a> {
            spec: &'a ProblemSpec,
            grid: &'a FvGrid,
            cfl: f64,
            scheme: &'static str,
        }
        let key = serde_json::to_string(&RefKey {
            spec,
            grid,
            cfl,
            scheme: crate::fvref::SCHEME_NAME,
        })?;
        let path = self
            .root
            .join("references")
            .join(format!("{}.bin", &sha256_hex(&key)[..16]));
        if path.exists() {
            let cached = RefSolution::load_binary(&path)?;
            if cached.grid == *grid && cached.spec == *spec && cached.cfl == cfl {
                return Ok(cached);
            }
        }
        let solution = fv_solve(spec, grid, cfl)?;
        let tmp = path.with_extension("tmp");
        solution.save_binary(&tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(solution)
    }
}

/// Cells sharing one training run, ordered by budget.
#[derive(Debug, Clone)]
struct Chain {
    chain_id: String,
    cells: Vec<(CellSpec, String)>,
}

struct ChainContext<'a> {
    store: &'a Store,
    spec: &'a ProblemSpec,
    template: &'a TrainConfig,
    reference: &'a RefSolution,
    parallelism: usize,
    state_every: usize,
}

fn base_record(cell: &CellSpec, cell_id: &str, chain_id: &str, ctx: &ChainContext<'_>) -> SweepRecord {
    SweepRecord {
        cell_id: cell_id.to_string(),
        chain_id: chain_id.to_string(),
        cell: *cell,
        cell_seed: cell.cell_seed(ctx.spec, ctx.template),
        net: cell.net_config(ctx.spec, ctx.template),
        train: cell.train_config(ctx.spec, ctx.template),
        problem: *ctx.spec,
        init_scheme: cell.activation.init_scheme().as_str().to_string(),
        rng: RNG_ALGORITHM.to_string(),
        status: RecordStatus::Failed,
        energy_norm: None,
        max_abs_error: None,
        wall_clock_secs: 0.0,
        epochs_completed: 0,
        initial_l_total: None,
        final_l_res: None,
        final_l_ic: None,
        final_l_total: None,
        parallelism: ctx.parallelism,
        message: None,
    }
}

/// Trains one chain, sending each finished cell's record as soon as it is ready.
fn run_chain(chain: &Chain, ctx: &ChainContext<'_>, send: &dyn Fn(SweepRecord)) {
    let (first, _) = chain.cells[0];
    let max_epochs = chain.cells.last().map(|(c, _)| c.epochs).unwrap_or(0);
    let net = first.net_config(ctx.spec, ctx.template);
    let config = TrainConfig {
        epochs: max_epochs,
        ..first.train_config(ctx.spec, ctx.template)
    };
    let state_path = ctx.store.chain_state_path(&chain.chain_id);
    let mut pending: VecDeque<&(CellSpec, String)> = chain.cells.iter().collect();

    let fail_rest = |pending: &mut VecDeque<&(CellSpec, String)>, status: RecordStatus, err: &Error, done: usize| {
        while let Some((cell, id)) = pending.pop_front() {
            let mut record = base_record(cell, id, &chain.chain_id, ctx);
            record.status = status;
            record.epochs_completed = done;
            record.message = Some(err.to_string());
            send(record);
        }
    };

    let resumed = TrainState::load(&state_path, &net)
        .ok()
        .filter(|s| s.history.len() <= first.epochs)
        .and_then(|s| Trainer::from_state(&net, ctx.spec, &config, s).ok());
    let mut trainer = match resumed {
        Some(t) => {
            log::info!("chain {} resumes at epoch {}", chain.chain_id, t.epochs_completed());
            t
        }
        None => match Trainer::new(&net, ctx.spec, &config) {
            Ok(t) => t,
            Err(err) => return fail_rest(&mut pending, RecordStatus::Failed, &err, 0),
        },
    };

    while let Some(&(cell, ref cell_id)) = pending.front().copied() {
        let step = ctx.state_every.max(1);
        let result = (|| -> Result<SweepRecord> {
            while trainer.epochs_completed() < cell.epochs {
                let next = ((trainer.epochs_completed() / step) + 1) * step;
                trainer.run_until(next.min(cell.epochs))?;
                trainer.state().save(&state_path)?;
            }
            let checkpoint = trainer.checkpoint()?;
            let history = &trainer.state().history[..cell.epochs];
            let report = energy_norm(&checkpoint.params, &net, ctx.spec, ctx.reference)?;
            checkpoint.params.save(&net, &ctx.store.params_path(cell_id))?;
            write_history_csv(history, &ctx.store.history_path(cell_id))?;
            let mut record = base_record(&cell, cell_id, &chain.chain_id, ctx);
            let initial = history[0].total;
            record.status = if checkpoint.loss.total > initial {
                RecordStatus::Diverged
            } else {
                RecordStatus::Ok
            };
            record.energy_norm = Some(report.energy_norm);
            record.max_abs_error = Some(report.max_abs_error);
            record.wall_clock_secs = checkpoint.elapsed_secs;
            record.epochs_completed = cell.epochs;
            record.initial_l_total = Some(initial);
            record.final_l_res = Some(checkpoint.loss.residual);
            record.final_l_ic = Some(checkpoint.loss.ic);
            record.final_l_total = Some(checkpoint.loss.total);
            Ok(record)
        })();
        match result {
            Ok(record) => {
                pending.pop_front();
                send(record);
            }
            Err(err) => {
                let status = match err.category() {
                    crate::error::ErrorCategory::Numerical => RecordStatus::Nonfinite,
                    _ => RecordStatus::Failed,
                };
                let done = trainer.epochs_completed();
                return fail_rest(&mut pending, status, &err, done);
            }
        }
    }
    let _ = std::fs::remove_file(&state_path);
}

/// Runs every grid cell that has no record yet (or all of them with `force`).
/// Failures are recorded per cell; only store I/O errors abort the sweep.
pub fn run_sweep(
    grid: &SweepGrid,
    spec: &ProblemSpec,
    template: &TrainConfig,
    options: &SweepOptions,
) -> Result<SweepOutcome> {
    grid.validate()?;
    spec.validate()?;
    template.adam.validate()?;
    let store = Store::open(&options.store)?;
    let ref_grid = options.reference_grid.unwrap_or_else(|| FvGrid::for_spec(spec));
    let reference = store.reference(spec, &ref_grid, options.cfl)?;

    let cells = grid.cells();
    let mut chains: BTreeMap<String, Chain> = BTreeMap::new();
    let mut chain_order = Vec::new();
    for cell in &cells {
        let cell_id = cell.cell_id(spec, template);
        let done = !options.force && store.load_record(&cell_id)?.is_some();
        if done {
            continue;
        }
        let chain_id = cell.chain_id(spec, template);
        let chain = chains.entry(chain_id.clone()).or_insert_with(|| {
            chain_order.push(chain_id.clone());
            Chain {
                chain_id: chain_id.clone(),
                cells: Vec::new(),
            }
        });
        chain.cells.push((*cell, cell_id));
    }
    for chain in chains.values_mut() {
        chain.cells.sort_by_key(|(c, _)| c.epochs);
    }
    let queue: Mutex<VecDeque<Chain>> = Mutex::new(chain_order.iter().map(|id| chains[id].clone()).collect());
    let workers = options.parallelism.max(1).min(chains.len().max(1));
    let ctx = ChainContext {
        store: &store,
        spec,
        template,
        reference: &reference,
        parallelism: options.parallelism.max(1),
        state_every: options.state_every,
    };

    let mut trained = 0;
    let mut commit_error = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<SweepRecord>();
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            let ctx = &ctx;
            scope.spawn(move || loop {
                let next = queue.lock().map(|mut q| q.pop_front()).ok().flatten();
                let Some(chain) = next else { break };
                run_chain(&chain, ctx, &|record| {
                    let _ = tx.send(record);
                });
            });
        }
        drop(tx);
        for record in rx {
            log::info!(
                "cell {} ({}-{}x{}, {} epochs, N_r={}): {} energy norm {}",
                record.cell_id,
                record.cell.activation,
                record.cell.depth,
                record.cell.width,
                record.cell.epochs,
                record.cell.n_colloc,
                record.status.as_str(),
                opt(record.energy_norm)
            );
            trained += 1;
            if let Err(err) = store.commit(&record) {
                commit_error.get_or_insert(err);
            }
        }
    });
    if let Some(err) = commit_error {
        return Err(err);
    }

    let records = cells
        .iter()
        .map(|cell| {
            let id = cell.cell_id(spec, template);
            store
                .load_record(&id)?
                .ok_or_else(|| Error::Mismatch(format!("cell {id} has no record after the sweep")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepOutcome { records, trained })
}

/// Records not beaten on both training time and energy norm by any other
/// successful record, sorted by time.
pub fn pareto_front(records: &[SweepRecord]) -> Vec<&SweepRecord> {
    let ok: Vec<(&SweepRecord, f64, f64)> = records
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| (r, r.wall_clock_secs, r.energy_norm.unwrap()))
        .collect();
    let mut front: Vec<(&SweepRecord, f64, f64)> = ok
        .iter()
        .filter(|&&(_, t, e)| !ok.iter().any(|&(_, t2, e2)| t2 <= t && e2 <= e && (t2 < t || e2 < e)))
        .copied()
        .collect();
    front.sort_by(|a, b| a.1.total_cmp(&b.1));
    front.into_iter().map(|(r, _, _)| r).collect()
}

/// Outcome of one trend check over sweep records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub name: String,
    /// `None` when the records needed for the check are missing.
    pub passed: Option<bool>,
    pub detail: String,
}

fn find<'a>(
    records: &'a [SweepRecord],
    activation: ActivationKind,
    shape: (usize, usize),
    epochs: usize,
    n_colloc: usize,
    seed: u64,
) -> Option<&'a SweepRecord> {
    records.iter().find(|r| {
        r.is_ok()
            && r.cell.activation == activation
            && (r.cell.depth, r.cell.width) == shape
            && r.cell.epochs == epochs
            && r.cell.n_colloc == n_colloc
            && r.cell.base_seed == seed
    })
}

fn seeds(records: &[SweepRecord]) -> Vec<u64> {
    let mut seeds: Vec<u64> = records.iter().map(|r| r.cell.base_seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
}

/// Compares two cells per seed with `holds(a, b)`; passes if it holds for
/// every seed that has both cells.
fn pairwise(
    records: &[SweepRecord],
    name: &str,
    a: (ActivationKind, (usize, usize), usize, usize),
    b: (ActivationKind, (usize, usize), usize, usize),
    rule: &str,
    holds: impl Fn(f64, f64) -> bool,
) -> ClaimCheck {
    let mut detail = String::new();
    let mut verdict: Option<bool> = None;
    for seed in seeds(records) {
        let (Some(ra), Some(rb)) = (
            find(records, a.0, a.1, a.2, a.3, seed),
            find(records, b.0, b.1, b.2, b.3, seed),
        ) else {
            continue;
        };
        let (ea, eb) = (ra.energy_norm.unwrap(), rb.energy_norm.unwrap());
        let ok = holds(ea, eb);
        let _ = write!(
            detail,
            "seed {seed}: {ea:.3e} vs {eb:.3e} ({rule}) {}; ",
            if ok { "holds" } else { "fails" }
        );
        verdict = Some(verdict.unwrap_or(true) && ok);
    }
    if verdict.is_none() {
        detail = "required cells missing".into();
    }
    ClaimCheck {
        name: name.into(),
        passed: verdict,
        detail: detail.trim_end_matches("; ").to_string(),
    }
}

pub const HEADLINE_THRESHOLD: f64 = 5e-4;

pub fn claim_checks(records: &[SweepRecord]) -> Vec<ClaimCheck> {
    use ActivationKind::{Relu, Tanh};
    let mut checks = Vec::new();

    let mut headline = ClaimCheck {
        name: "headline accuracy: tanh 4x128, N_r=1024, 4096 epochs".into(),
        passed: None,
        detail: "required cell missing".into(),
    };
    for seed in seeds(records) {
        if let Some(r) = find(records, Tanh, (4, 128), 4096, 1024, seed) {
            let e = r.energy_norm.unwrap();
            let ok = e <= HEADLINE_THRESHOLD;
            headline.passed = Some(headline.passed.unwrap_or(true) && ok);
            headline.detail = format!("seed {seed}: energy norm {e:.3e} (threshold {HEADLINE_THRESHOLD:e})");
        }
    }
    checks.push(headline);

    checks.push(pairwise(
        records,
        "epoch trend: tanh 4x64, N_r=1024, 4096 vs 2048 epochs",
        (Tanh, (4, 64), 4096, 1024),
        (Tanh, (4, 64), 2048, 1024),
        "need first <= second / 1.3",
        |a, b| a <= b / 1.3,
    ));
    checks.push(pairwise(
        records,
        "width trend: tanh L=4, 4096 epochs, N_r=1024, width 128 vs 64",
        (Tanh, (4, 128), 4096, 1024),
        (Tanh, (4, 64), 4096, 1024),
        "need first <= second",
        |a, b| a <= b,
    ));
    checks.push(pairwise(
        records,
        "collocation saturation: tanh 4x128, 4096 epochs, N_r=2048 vs 1024",
        (Tanh, (4, 128), 4096, 2048),
        (Tanh, (4, 128), 4096, 1024),
        "need |first - second| / second <= 0.25",
        |a, b| (a - b).abs() / b <= 0.25,
    ));

    let relu: Vec<&SweepRecord> = records.iter().filter(|r| r.cell.activation == Relu).collect();
    let best_tanh = records
        .iter()
        .filter(|r| r.is_ok() && r.cell.activation == Tanh)
        .map(|r| r.energy_norm.unwrap())
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.min(e))));
    checks.push(match (relu.is_empty(), best_tanh) {
        (false, Some(best)) => {
            // A ReLU cell that produced no usable network has failed too.
            let worst_ratio = relu
                .iter()
                .map(|r| r.energy_norm.filter(|_| r.is_ok()).map_or(f64::INFINITY, |e| e / best))
                .fold(f64::INFINITY, f64::min);
            ClaimCheck {
                name: "ReLU failure: every ReLU cell >= 10x best tanh error".into(),
                passed: Some(worst_ratio >= 10.0),
                detail: format!(
                    "{} ReLU cells, smallest ratio {worst_ratio:.2} (best tanh {best:.3e})",
                    relu.len()
                ),
            }
        }
        _ => ClaimCheck {
            name: "ReLU failure: every ReLU cell >= 10x best tanh error".into(),
            passed: None,
            detail: "needs ReLU cells and a successful tanh cell".into(),
        },
    });
    checks
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub csv: String,
    pub summary: String,
    pub checks: Vec<ClaimCheck>,
}

const REPORT_HEADER: [&str; 16] = [
    "cell_id",
    "status",
    "activation",
    "depth",
    "width",
    "epochs",
    "n_colloc",
    "base_seed",
    "cell_seed",
    "energy_norm",
    "max_abs_error",
    "wall_clock_secs",
    "final_l_res",
    "final_l_ic",
    "final_l_total",
    "parallelism",
];

pub fn report(records: &[SweepRecord]) -> Result<SweepReport> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(REPORT_HEADER)?;
    for r in records {
        writer.write_record([
            r.cell_id.clone(),
            r.status.as_str().into(),
            r.cell.activation.to_string(),
            r.cell.depth.to_string(),
            r.cell.width.to_string(),
            r.cell.epochs.to_string(),
            r.cell.n_colloc.to_string(),
            r.cell.base_seed.to_string(),
            r.cell_seed.to_string(),
            opt(r.energy_norm),
            opt(r.max_abs_error),
            format!("{:e}", r.wall_clock_secs),
            opt(r.final_l_res),
            opt(r.final_l_ic),
            opt(r.final_l_total),
            r.parallelism.to_string(),
        ])?;
    }
    let csv = String::from_utf8(writer.into_inner().map_err(|e| Error::Mismatch(e.to_string()))?)
        .expect("csv output is utf-8");

    let checks = claim_checks(records);
    let mut s = String::new();
    let count = |status: RecordStatus| records.iter().filter(|r| r.status == status).count();
    let _ = writeln!(
        s,
        "{} records: {} ok, {} nonfinite, {} diverged, {} failed",
        records.len(),
        count(RecordStatus::Ok),
        count(RecordStatus::Nonfinite),
        count(RecordStatus::Diverged),
        count(RecordStatus::Failed)
    );
    let concurrent = records.iter().filter(|r| r.parallelism > 1).count();
    if concurrent > 0 {
        let _ = writeln!(
            s,
            "note: {concurrent} records were trained alongside other cells; their wall-clock times are not comparable"
        );
    }
    let front = pareto_front(records);
    if !front.is_empty() {
        let _ = writeln!(s, "\nPareto front (time vs energy norm):");
        for r in front {
            let _ = writeln!(
                s,
                "  {:>10.1} s  {:.3e}  {}-{}x{} epochs={} N_r={}",
                r.wall_clock_secs,
                r.energy_norm.unwrap(),
                r.cell.activation,
                r.cell.depth,
                r.cell.width,
                r.cell.epochs,
                r.cell.n_colloc
            );
        }
    }
    let _ = writeln!(s, "\nTrend checks:");
    for c in &checks {
        let tag = match c.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "N/A ",
        };
        let _ = writeln!(s, "  [{tag}] {}: {}", c.name, c.detail);
    }
    Ok(SweepReport {
        csv,
        summary: s,
        checks,
    })
}

/// Records in the store that belong to `spec`.
pub fn records_for(store: &Store, spec: &ProblemSpec) -> Result<Vec<SweepRecord>> {
    Ok(store.load_all()?.into_iter().filter(|r| r.problem == *spec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn record(
        activation: ActivationKind,
        shape: (usize, usize),
        epochs: usize,
        colloc: usize,
        time: f64,
        err: f64,
    ) -> SweepRecord {
        let cell = CellSpec {
            activation,
            depth: shape.0,
            width: shape.1,
            epochs,
            n_colloc: colloc,
            base_seed: 1,
        };
        let spec = ProblemSpec::default();
        let template = TrainConfig::default();
        SweepRecord {
            cell_id: cell.cell_id(&spec, &template),
            chain_id: cell.chain_id(&spec, &template),
            cell,
            cell_seed: 0,
            net: cell.net_config(&spec, &template),
            train: cell.train_config(&spec, &template),
            problem: spec,
            init_scheme: String::new(),
            rng: String::new(),
            status: RecordStatus::Ok,
            energy_norm: Some(err),
            max_abs_error: Some(err),
            wall_clock_secs: time,
            epochs_completed: epochs,
            initial_l_total: Some(1.0),
            final_l_res: Some(0.0),
            final_l_ic: Some(0.0),
            final_l_total: Some(0.0),
            parallelism: 1,
            message: None,
        }
    }

    #[test]
    fn default_grid_has_120_cells() {
        let grid = SweepGrid::default();
        assert_eq!(grid.cells().len(), 120);
        let ids: HashSet<String> = grid
            .cells()
            .iter()
            .map(|c| c.cell_id(&ProblemSpec::default(), &TrainConfig::default()))
            .collect();
        assert_eq!(ids.len(), 120);
    }

    #[test]
    fn seeds_ignore_the_epoch_budget() {
        let spec = ProblemSpec::default();
        let template = TrainConfig::default();
        let a = CellSpec {
            activation: ActivationKind::Tanh,
            depth: 4,
            width: 64,
            epochs: 2048,
            n_colloc: 1024,
            base_seed: 1,
        };
        let b = CellSpec { epochs: 4096, ..a };
        let c = CellSpec { width: 128, ..a };
        assert_eq!(a.cell_seed(&spec, &template), b.cell_seed(&spec, &template));
        assert_eq!(a.chain_id(&spec, &template), b.chain_id(&spec, &template));
        assert_ne!(a.cell_id(&spec, &template), b.cell_id(&spec, &template));
        assert_ne!(a.cell_seed(&spec, &template), c.cell_seed(&spec, &template));
        let k2 = ProblemSpec { coupling: 2.0, ..spec };
        assert_ne!(a.cell_id(&spec, &template), a.cell_id(&k2, &template));
    }

    #[test]
    fn invalid_grids() {
        let mut grid = SweepGrid::default();
        grid.seeds.clear();
        assert!(grid.validate().is_err());
        let grid = SweepGrid {
            shapes: vec![(0, 4)],
            ..SweepGrid::default()
        };
        assert!(grid.validate().is_err());
    }

    #[test]
    fn pareto_cases() {
        use ActivationKind::Tanh;
        let one = vec![record(Tanh, (4, 64), 2048, 1024, 10.0, 1e-4)];
        assert_eq!(pareto_front(&one).len(), 1);
        let dominated = vec![
            record(Tanh, (4, 64), 2048, 1024, 10.0, 1e-4),
            record(Tanh, (4, 128), 2048, 1024, 20.0, 2e-4),
        ];
        let front = pareto_front(&dominated);
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].wall_clock_secs, 10.0);
        let incomparable = vec![
            record(Tanh, (4, 128), 2048, 1024, 20.0, 1e-5),
            record(Tanh, (4, 64), 2048, 1024, 10.0, 1e-4),
        ];
        let front = pareto_front(&incomparable);
        assert_eq!(front.len(), 2);
        assert!(front[0].wall_clock_secs < front[1].wall_clock_secs);
    }

    #[test]
    fn claim_checks_evaluate_trends() {
        use ActivationKind::{Relu, Tanh};
        let records = vec![
            record(Tanh, (4, 64), 2048, 1024, 1.0, 4e-3),
            record(Tanh, (4, 64), 4096, 1024, 2.0, 2e-3),
            record(Tanh, (4, 128), 4096, 1024, 3.0, 1e-3),
            record(Tanh, (4, 128), 4096, 2048, 6.0, 1.1e-3),
            record(Relu, (4, 64), 4096, 1024, 2.0, 5e-2),
        ];
        let checks = claim_checks(&records);
        assert_eq!(checks.len(), 5);
        assert_eq!(checks[0].passed, Some(false));
        assert!(checks[1..].iter().all(|c| c.passed == Some(true)), "{checks:?}");

        let mut bad = records.clone();
        bad[4].energy_norm = Some(5e-3);
        assert_eq!(claim_checks(&bad)[4].passed, Some(false));
        assert!(claim_checks(&[]).iter().all(|c| c.passed.is_none()));
    }

    #[test]
    fn report_rows_and_flags() {
        let empty = report(&[]).unwrap();
        assert_eq!(empty.csv.lines().count(), 1);
        let mut records = vec![record(ActivationKind::Tanh, (4, 64), 2048, 1024, 1.0, 1e-3)];
        records[0].parallelism = 3;
        let r = report(&records).unwrap();
        assert_eq!(r.csv.lines().count(), 2);
        assert!(r.summary.contains("not comparable"));
        assert!(r.summary.contains("[FAIL]") || r.summary.contains("[N/A ]"));
    }
}
