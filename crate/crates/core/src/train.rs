//! Full-batch Adam training.
//!
//! One epoch evaluates the loss and its gradient over every collocation and
//! initial-condition point and applies a single Adam update. The complete
//! optimizer state can be saved and restored, and a resumed run reproduces
//! an uninterrupted one bit for bit.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LossParts, LossWeights, PinnObjective, ProblemSpec, QuadratureRule};
use crate::net::{init_params, NetConfig, ParamSet};
use crate::sample::{ic_sample, lhs_sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {beta}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(format!(
                "Adam epsilon must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "Adam update with {} parameters, {} gradient entries and state of length {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let step = i32::try_from(state.step).map_err(|_| Error::config("Adam step count overflow"))?;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(step);
    let c2 = 1.0 - b2.powi(step);
    for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

/// True once the best value has not improved by more than `min_delta` for
/// `patience` consecutive entries.
pub fn early_stop_monitor(history: &[f64], patience: usize, min_delta: f64) -> bool {
    let Some(&first) = history.first() else {
        return false;
    };
    let mut best = first;
    let mut best_index = 0;
    for (i, &value) in history.iter().enumerate().skip(1) {
        if value < best - min_delta {
            best = value;
            best_index = i;
        }
    }
    history.len() - 1 - best_index >= patience
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_colloc: usize,
    pub n_ic: usize,
    pub n_quad: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Seed of the collocation and initial-condition samples.
    pub seed: u64,
    /// Draw a fresh collocation set every this many epochs. Off by default.
    pub resample_every: Option<usize>,
    pub early_stop: Option<EarlyStop>,
    /// Epochs after which a parameter snapshot is recorded.
    pub checkpoints: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_colloc: 1024,
            n_ic: 512,
            n_quad: 128,
            epochs: 4096,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            seed: 1,
            resample_every: None,
            early_stop: None,
            checkpoints: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_colloc == 0 || self.n_ic == 0 || self.n_quad == 0 {
            return Err(Error::config("point counts N_r, N_0 and N_q must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        self.adam.validate()?;
        for (name, w) in [
            ("residual", self.weights.residual),
            ("initial-condition", self.weights.ic),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!(
                    "{name} loss weight must be non-negative, got {w}"
                )));
            }
        }
        if self.resample_every == Some(0) {
            return Err(Error::config("resampling interval must be at least 1"));
        }
        if let Some(stop) = self.early_stop {
            if stop.patience == 0 || !(stop.min_delta >= 0.0) {
                return Err(Error::config("early stopping needs patience >= 1 and min_delta >= 0"));
            }
        }
        if let Some(&bad) = self.checkpoints.iter().find(|&&e| e == 0 || e > self.epochs) {
            return Err(Error::config(format!(
                "checkpoint epoch {bad} outside 1..={}",
                self.epochs
            )));
        }
        Ok(())
    }
}

/// Parameters saved part-way through training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ParamSet,
    /// Training-loop wall clock up to this epoch.
    pub elapsed_secs: f64,
    /// Loss at `params` (evaluated outside the timed loop).
    pub loss: LossParts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss at the start of each completed epoch, before its update.
    pub history: Vec<LossParts>,
    pub wall_clock_secs: f64,
    pub params: ParamSet,
    pub epochs_completed: usize,
    /// Loss at the final parameters.
    pub final_loss: LossParts,
    pub checkpoints: Vec<Checkpoint>,
    pub stopped_early: bool,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamSet,
    pub adam: AdamState,
    pub history: Vec<LossParts>,
    pub elapsed_secs: f64,
}

/// State handed back when a run stops on a non-finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergedState {
    /// Parameters of the last epoch whose loss was finite.
    pub params: ParamSet,
    pub history: Vec<LossParts>,
}

const STATE_MAGIC: &[u8; 8] = b"KPINNST1";

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    (0..n).map(|_| read_u64(r).map(f64::from_bits)).collect()
}

impl TrainState {
    /// Binary layout, all little-endian: magic `KPINNST1`, parameter count
    /// `P`, Adam step, history length `H`, elapsed seconds, then `P`
    /// parameters, `P` first moments, `P` second moments and `3H` loss
    /// values (residual, ic, total per epoch).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
            w.write_all(STATE_MAGIC)?;
            w.write_all(&(self.params.len() as u64).to_le_bytes())?;
            w.write_all(&self.adam.step.to_le_bytes())?;
            w.write_all(&(self.history.len() as u64).to_le_bytes())?;
            w.write_all(&self.elapsed_secs.to_le_bytes())?;
            write_f64s(w, self.params.as_slice())?;
            write_f64s(w, &self.adam.m)?;
            write_f64s(w, &self.adam.v)?;
            for h in &self.history {
                write_f64s(w, &[h.residual, h.ic, h.total])?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, config: &NetConfig) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |reason: String| Error::format("training state", path, reason);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != STATE_MAGIC {
            return Err(bad("unrecognized header".into()));
        }
        let mut next = || read_u64(&mut r);
        let header = (|| -> std::io::Result<(u64, u64, u64, u64)> { Ok((next()?, next()?, next()?, next()?)) })()
            .map_err(|e| bad(e.to_string()))?;
        let (count, step, hist, elapsed) = header;
        if count as usize != config.param_count() {
            return Err(bad(format!(
                "holds {count} parameters, configuration needs {}",
                config.param_count()
            )));
        }
        let n = count as usize;
        let params = read_f64s(&mut r, n).map_err(|e| bad(e.to_string()))?;
        let m = read_f64s(&mut r, n).map_err(|e| bad(e.to_string()))?;
        let v = read_f64s(&mut r, n).map_err(|e| bad(e.to_string()))?;
        let raw = read_f64s(&mut r, 3 * hist as usize).map_err(|e| bad(e.to_string()))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| bad(e.to_string()))?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        let history = raw
            .chunks_exact(3)
            .map(|c| LossParts {
                residual: c[0],
                ic: c[1],
                total: c[2],
            })
            .collect();
        Ok(TrainState {
            params: ParamSet::from_flat(config, params)?,
            adam: AdamState { m, v, step },
            history,
            elapsed_secs: f64::from_bits(elapsed),
        })
    }
}

/// A training run that can be advanced in stages.
pub struct Trainer {
    net: NetConfig,
    spec: ProblemSpec,
    config: TrainConfig,
    objective: PinnObjective,
    state: TrainState,
    stopped_early: bool,
}

impl Trainer {
    pub fn new(net: &NetConfig, spec: &ProblemSpec, config: &TrainConfig) -> Result<Self> {
        let params = init_params(net)?;
        let adam = AdamState::new(params.len());
        Trainer::from_state(
            net,
            spec,
            config,
            TrainState {
                params,
                adam,
                history: Vec::new(),
                elapsed_secs: 0.0,
            },
        )
    }

    /// Starts from explicit initial parameters with fresh optimizer state.
    pub fn with_params(net: &NetConfig, spec: &ProblemSpec, config: &TrainConfig, params: ParamSet) -> Result<Self> {
        let adam = AdamState::new(params.len());
        Trainer::from_state(
            net,
            spec,
            config,
            TrainState {
                params,
                adam,
                history: Vec::new(),
                elapsed_secs: 0.0,
            },
        )
    }

    pub fn from_state(net: &NetConfig, spec: &ProblemSpec, config: &TrainConfig, state: TrainState) -> Result<Self> {
        net.validate()?;
        spec.validate()?;
        config.validate()?;
        state.params.check(net)?;
        if state.adam.step as usize != state.history.len() || state.history.len() > config.epochs {
            return Err(Error::Mismatch(format!(
                "training state after {} steps with {} history entries does not fit a {}-epoch run",
                state.adam.step,
                state.history.len(),
                config.epochs
            )));
        }
        let quad = QuadratureRule::uniform(config.n_quad)?;
        let colloc_seed = Trainer::colloc_seed(config, state.history.len());
        let colloc = lhs_sample(config.n_colloc, spec.horizon, colloc_seed)?;
        let ic = ic_sample(config.n_ic, config.seed)?;
        let objective = PinnObjective::new(net, spec, &quad, &colloc.points, &ic.points, config.weights)?;
        Ok(Trainer {
            net: *net,
            spec: *spec,
            config: config.clone(),
            objective,
            state,
            stopped_early: false,
        })
    }

    /// Seed of the collocation set in force at the start of epoch `done + 1`.
    fn colloc_seed(config: &TrainConfig, done: usize) -> u64 {
        match config.resample_every {
            Some(k) => config.seed.wrapping_add((done / k) as u64),
            None => config.seed,
        }
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn epochs_completed(&self) -> usize {
        self.state.history.len()
    }

    pub fn objective(&self) -> &PinnObjective {
        &self.objective
    }

    pub fn is_finished(&self) -> bool {
        self.stopped_early || self.epochs_completed() >= self.config.epochs
    }

    /// Loss at the current parameters; not timed.
    pub fn evaluate(&self) -> Result<LossParts> {
        self.objective.loss(&self.state.params)
    }

    /// Runs epochs until `target` epochs are complete (capped at the
    /// configured budget) or early stopping triggers.
    pub fn run_until(&mut self, target: usize) -> Result<()> {
        let target = target.min(self.config.epochs);
        let start = Instant::now();
        let base = self.state.elapsed_secs;
        let mut previous = self.state.params.clone();
        let result = self.run_epochs(target, &mut previous);
        self.state.elapsed_secs = base + start.elapsed().as_secs_f64();
        match result {
            Ok(()) => Ok(()),
            Err(err @ (Error::NonFinite { .. } | Error::NonFiniteLayer { .. })) => Err(Error::Diverged {
                epoch: self.epochs_completed() + 1,
                reason: err.to_string(),
                state: Some(Box::new(DivergedState {
                    params: previous,
                    history: self.state.history.clone(),
                })),
            }),
            Err(err) => Err(err),
        }
    }

    fn run_epochs(&mut self, target: usize, previous: &mut ParamSet) -> Result<()> {
        while self.epochs_completed() < target && !self.stopped_early {
            let done = self.epochs_completed();
            if let Some(k) = self.config.resample_every {
                if done > 0 && done % k == 0 {
                    let colloc = lhs_sample(
                        self.config.n_colloc,
                        self.spec.horizon,
                        Trainer::colloc_seed(&self.config, done),
                    )?;
                    self.objective.set_collocation(&colloc.points)?;
                }
            }
            let (parts, grad) = self.objective.loss_and_grad(&self.state.params)?;
            previous.as_mut_slice().copy_from_slice(self.state.params.as_slice());
            adam_step(
                self.state.params.as_mut_slice(),
                &grad,
                &mut self.state.adam,
                &self.config.adam,
            )?;
            self.state.history.push(parts);
            if let Some(index) = self.state.params.as_slice().iter().position(|p| !p.is_finite()) {
                return Err(Error::NonFinite {
                    what: "parameter",
                    index,
                });
            }
            let epoch = self.epochs_completed();
            if epoch % 256 == 0 || epoch == 1 {
                log::debug!(
                    "{}: epoch {epoch} L_res={:.3e} L_ic={:.3e} L={:.3e}",
                    self.net,
                    parts.residual,
                    parts.ic,
                    parts.total
                );
            }
            if let Some(stop) = self.config.early_stop {
                let totals: Vec<f64> = self.state.history.iter().map(|h| h.total).collect();
                if early_stop_monitor(&totals, stop.patience, stop.min_delta) {
                    log::info!("early stop after epoch {epoch}");
                    self.stopped_early = true;
                }
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            epoch: self.epochs_completed(),
            params: self.state.params.clone(),
            elapsed_secs: self.state.elapsed_secs,
            loss: self.evaluate()?,
        })
    }

    /// Runs to the configured budget, recording the configured checkpoints.
    pub fn run(mut self) -> Result<TrainReport> {
        let mut marks = self.config.checkpoints.clone();
        marks.sort_unstable();
        marks.dedup();
        let mut checkpoints = Vec::new();
        for mark in marks {
            if mark <= self.epochs_completed() {
                continue;
            }
            self.run_until(mark)?;
            if self.stopped_early {
                break;
            }
            checkpoints.push(self.checkpoint()?);
        }
        self.run_until(self.config.epochs)?;
        let final_loss = self.evaluate()?;
        Ok(TrainReport {
            epochs_completed: self.epochs_completed(),
            wall_clock_secs: self.state.elapsed_secs,
            history: self.state.history,
            params: self.state.params,
            final_loss,
            checkpoints,
            stopped_early: self.stopped_early,
        })
    }
}

/// Trains a freshly initialized network.
pub fn train(net: &NetConfig, spec: &ProblemSpec, config: &TrainConfig) -> Result<TrainReport> {
    Trainer::new(net, spec, config)?.run()
}

pub fn write_history_csv(history: &[LossParts], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epoch", "l_res", "l_ic", "l_total"])?;
    for (i, h) in history.iter().enumerate() {
        writer.write_record([
            (i + 1).to_string(),
            format!("{:e}", h.residual),
            format!("{:e}", h.ic),
            format!("{:e}", h.total),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<LossParts>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut history = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let field = |k: usize| -> Result<f64> {
            record
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format("loss history", path, format!("bad field {k} on row {}", i + 1)))
        };
        if field(0)? as usize != i + 1 {
            return Err(Error::format(
                "loss history",
                path,
                format!("row {} is out of order", i + 1),
            ));
        }
        history.push(LossParts {
            residual: field(1)?,
            ic: field(2)?,
            total: field(3)?,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialConditionKind;
    use crate::net::ActivationKind;
    use proptest::prelude::*;

    fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            n_colloc: 48,
            n_ic: 32,
            n_quad: 16,
            epochs,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![0.5, -1.0, 2.0];
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0; 3], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(params, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_by_hand() {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[1.0], &mut state, &AdamConfig::default()).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction.
        let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((params[0] - expected).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut params = vec![0.0; 2];
        let mut state = AdamState::new(2);
        assert!(adam_step(&mut params, &[1.0], &mut state, &AdamConfig::default()).is_err());
    }

    fn reference_adam(params: &mut [f64], grads: &[Vec<f64>], c: &AdamConfig) {
        let mut m = vec![0.0; params.len()];
        let mut v = vec![0.0; params.len()];
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as f64;
            for i in 0..params.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / (1.0 - c.beta1.powf(t));
                let vh = v[i] / (1.0 - c.beta2.powf(t));
                params[i] -= c.learning_rate * mh / (vh.sqrt() + c.eps);
            }
        }
    }

    proptest! {
        #[test]
        fn adam_matches_scalar_reference(
            init in prop::collection::vec(-2.0f64..2.0, 1..6),
            seeds in prop::collection::vec(-3.0f64..3.0, 1..5),
        ) {
            let c = AdamConfig::default();
            let grads: Vec<Vec<f64>> = seeds
                .iter()
                .map(|s| init.iter().enumerate().map(|(i, p)| s * (p + i as f64)).collect())
                .collect();
            let mut a = init.clone();
            let mut state = AdamState::new(a.len());
            for g in &grads {
                adam_step(&mut a, g, &mut state, &c).unwrap();
            }
            let mut b = init.clone();
            reference_adam(&mut b, &grads, &c);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-14);
            }
        }

        #[test]
        fn monitor_never_fires_on_strict_descent(len in 1usize..50, patience in 1usize..10) {
            let history: Vec<f64> = (0..len).map(|i| 1.0 / (i + 1) as f64).collect();
            prop_assert!(!early_stop_monitor(&history, patience, 0.0));
        }
    }

    #[test]
    fn early_stop_rule() {
        assert!(!early_stop_monitor(&[3.0, 2.0, 1.0], 1, 0.0));
        assert!(early_stop_monitor(&[1.0, 1.0, 1.0, 1.0], 3, 0.0));
        let h = [1.0, 0.5, 0.4999, 0.4998];
        assert!(!early_stop_monitor(&h[..3], 2, 1e-2));
        assert!(early_stop_monitor(&h, 2, 1e-2));
        assert!(!early_stop_monitor(&[], 1, 0.0));
    }

    #[test]
    fn invalid_configs() {
        let net = NetConfig::new(2, 8, ActivationKind::Tanh, 1);
        let spec = ProblemSpec::default();
        let mut bad = vec![];
        bad.push(TrainConfig {
            epochs: 0,
            ..small_config(1)
        });
        bad.push(TrainConfig {
            n_colloc: 0,
            ..small_config(1)
        });
        let mut c = small_config(1);
        c.adam.learning_rate = 0.0;
        bad.push(c);
        let mut c = small_config(1);
        c.adam.beta1 = 1.0;
        bad.push(c);
        bad.push(TrainConfig {
            checkpoints: vec![5],
            ..small_config(2)
        });
        for c in bad {
            assert!(matches!(train(&net, &spec, &c), Err(Error::Config(_))));
        }
        let empty = NetConfig::new(0, 8, ActivationKind::Tanh, 1);
        assert!(train(&empty, &spec, &small_config(1)).is_err());
    }

    #[test]
    fn fifty_epochs_reduce_the_loss() {
        let net = NetConfig::new(2, 8, ActivationKind::Tanh, 3);
        let report = train(&net, &ProblemSpec::default(), &small_config(50)).unwrap();
        assert_eq!(report.history.len(), 50);
        assert_eq!(report.epochs_completed, 50);
        assert!(report.history[49].total < report.history[0].total);
        assert!(report.final_loss.total < report.history[0].total);
        assert!(report.wall_clock_secs >= 0.0);
        assert!(report.history.iter().all(|h| h.total.is_finite()));
    }

    #[test]
    fn runs_are_bitwise_repeatable() {
        let net = NetConfig::new(2, 6, ActivationKind::Sin, 9);
        let config = small_config(15);
        let a = train(&net, &ProblemSpec::default(), &config).unwrap();
        let b = train(&net, &ProblemSpec::default(), &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let net = NetConfig::new(2, 6, ActivationKind::Tanh, 2);
        let spec = ProblemSpec::with_ic(InitialConditionKind::Dirac);
        let config = TrainConfig {
            resample_every: Some(4),
            ..small_config(12)
        };
        let whole = train(&net, &spec, &config).unwrap();

        let mut first = Trainer::new(&net, &spec, &config).unwrap();
        first.run_until(7).unwrap();
        let path = dir.path().join("state.bin");
        first.state().save(&path).unwrap();
        let state = TrainState::load(&path, &net).unwrap();
        assert_eq!(&state, first.state());
        let resumed = Trainer::from_state(&net, &spec, &config, state).unwrap().run().unwrap();
        assert_eq!(resumed.history, whole.history);
        assert_eq!(resumed.params, whole.params);
    }

    #[test]
    fn checkpoints_are_recorded() {
        let net = NetConfig::new(1, 4, ActivationKind::Relu, 2);
        let config = TrainConfig {
            checkpoints: vec![6, 3],
            ..small_config(8)
        };
        let report = train(&net, &ProblemSpec::default(), &config).unwrap();
        let epochs: Vec<usize> = report.checkpoints.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![3, 6]);
        assert!(report.checkpoints[0].elapsed_secs <= report.checkpoints[1].elapsed_secs);
        assert_eq!(report.checkpoints[1].loss.total, report.history.get(6).unwrap().total);
    }

    #[test]
    fn early_stop_ends_the_run() {
        let net = NetConfig::new(1, 4, ActivationKind::Tanh, 2);
        let config = TrainConfig {
            early_stop: Some(EarlyStop {
                patience: 2,
                min_delta: 1e9,
            }),
            ..small_config(50)
        };
        let report = train(&net, &ProblemSpec::default(), &config).unwrap();
        assert!(report.stopped_early);
        assert_eq!(report.epochs_completed, 3);
    }

    #[test]
    fn divergence_returns_last_finite_state() {
        let net = NetConfig::new(1, 4, ActivationKind::Tanh, 2);
        let mut config = small_config(20);
        config.adam.learning_rate = 1e300;
        let err = train(&net, &ProblemSpec::default(), &config).unwrap_err();
        match err {
            Error::Diverged {
                epoch,
                state: Some(state),
                ..
            } => {
                assert!(epoch >= 1);
                assert!(state.params.is_finite());
                assert_eq!(state.history.len(), epoch - 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn history_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let history = vec![
            LossParts {
                residual: 0.1,
                ic: 0.2,
                total: 0.30000000000000004,
            },
            LossParts {
                residual: 1e-9,
                ic: 3.5,
                total: 3.500000001,
            },
        ];
        write_history_csv(&history, &path).unwrap();
        assert_eq!(read_history_csv(&path).unwrap(), history);
    }

    #[test]
    fn corrupt_state_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        std::fs::write(&path, b"KPINNST1\x01").unwrap();
        let net = NetConfig::new(1, 2, ActivationKind::Tanh, 0);
        assert!(matches!(TrainState::load(&path, &net), Err(Error::Format { .. })));
    }
}
