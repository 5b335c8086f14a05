use kuramoto_pinn::fvref::FvGrid;
use kuramoto_pinn::model::ProblemSpec;
use kuramoto_pinn::net::{ActivationKind, ParamSet};
use kuramoto_pinn::sweep::{report, run_sweep, RecordStatus, Store, SweepGrid, SweepOptions};
use kuramoto_pinn::train::{read_history_csv, TrainConfig, Trainer};

fn tiny_template() -> TrainConfig {
    TrainConfig {
        n_ic: 8,
        n_quad: 8,
        ..TrainConfig::default()
    }
}

fn tiny_grid(epochs: Vec<usize>) -> SweepGrid {
    SweepGrid {
        activations: vec![ActivationKind::Tanh, ActivationKind::Relu],
        shapes: vec![(1, 4)],
        epochs,
        colloc: vec![8],
        seeds: vec![3],
    }
}

fn options(dir: &std::path::Path) -> SweepOptions {
    SweepOptions {
        parallelism: 1,
        reference_grid: Some(FvGrid::new(32, 5, 1.0).unwrap()),
        state_every: 2,
        ..SweepOptions::new(dir)
    }
}

#[test]
fn second_run_trains_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ProblemSpec::default();
    let grid = tiny_grid(vec![4, 8]);
    let first = run_sweep(&grid, &spec, &tiny_template(), &options(dir.path())).unwrap();
    assert_eq!(first.trained, 4);
    assert_eq!(first.records.len(), 4);
    assert!(first
        .records
        .iter()
        .all(|r| r.status != RecordStatus::Failed && r.status != RecordStatus::Nonfinite));

    let again = run_sweep(&grid, &spec, &tiny_template(), &options(dir.path())).unwrap();
    assert_eq!(again.trained, 0);
    assert_eq!(again.records, first.records);

    let store = Store::open(dir.path()).unwrap();
    let ledger = std::fs::read_to_string(store.ledger_path()).unwrap();
    assert_eq!(ledger.lines().count(), 5);
    for r in &first.records {
        let (net, params) = ParamSet::load(&store.params_path(&r.cell_id)).unwrap();
        assert_eq!(net, r.net);
        assert_eq!(params.len(), r.net.param_count());
        assert_eq!(
            read_history_csv(&store.history_path(&r.cell_id)).unwrap().len(),
            r.cell.epochs
        );
    }
    // Unfinished-chain state is removed once a chain completes.
    assert_eq!(std::fs::read_dir(dir.path().join("chains")).unwrap().count(), 0);

    let rep = report(&first.records).unwrap();
    assert_eq!(rep.csv.lines().count(), 5);
}

#[test]
fn shared_chain_matches_standalone_budget() {
    let spec = ProblemSpec::default();
    let chained = tempfile::tempdir().unwrap();
    let alone = tempfile::tempdir().unwrap();
    let a = run_sweep(
        &tiny_grid(vec![4, 8]),
        &spec,
        &tiny_template(),
        &options(chained.path()),
    )
    .unwrap();
    let b = run_sweep(&tiny_grid(vec![8]), &spec, &tiny_template(), &options(alone.path())).unwrap();
    for rb in &b.records {
        let ra = a.records.iter().find(|r| r.cell_id == rb.cell_id).unwrap();
        assert_eq!(ra.cell_seed, rb.cell_seed);
        assert_eq!(ra.energy_norm, rb.energy_norm);
        assert_eq!(ra.final_l_total, rb.final_l_total);
    }
}

#[test]
fn interrupted_chain_resumes_exactly() {
    let spec = ProblemSpec::default();
    let template = tiny_template();
    let grid = SweepGrid {
        activations: vec![ActivationKind::Tanh],
        ..tiny_grid(vec![8])
    };
    let clean = tempfile::tempdir().unwrap();
    let expected = run_sweep(&grid, &spec, &template, &options(clean.path())).unwrap();

    // Leave behind the state an interrupted run would have saved at epoch 3.
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let cell = grid.cells()[0];
    let net = cell.net_config(&spec, &template);
    let config = TrainConfig {
        epochs: 8,
        ..cell.train_config(&spec, &template)
    };
    let mut trainer = Trainer::new(&net, &spec, &config).unwrap();
    trainer.run_until(3).unwrap();
    trainer
        .state()
        .save(&store.chain_state_path(&cell.chain_id(&spec, &template)))
        .unwrap();

    let resumed = run_sweep(&grid, &spec, &template, &options(dir.path())).unwrap();
    assert_eq!(resumed.trained, 1);
    assert_eq!(resumed.records[0].energy_norm, expected.records[0].energy_norm);
    assert_eq!(resumed.records[0].final_l_total, expected.records[0].final_l_total);
}

#[test]
fn parallel_workers_agree_with_serial() {
    let spec = ProblemSpec::default();
    let serial = tempfile::tempdir().unwrap();
    let parallel = tempfile::tempdir().unwrap();
    let grid = tiny_grid(vec![4]);
    let a = run_sweep(&grid, &spec, &tiny_template(), &options(serial.path())).unwrap();
    let b = run_sweep(
        &grid,
        &spec,
        &tiny_template(),
        &SweepOptions {
            parallelism: 2,
            ..options(parallel.path())
        },
    )
    .unwrap();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.energy_norm, rb.energy_norm);
        assert_eq!(rb.parallelism, 2);
    }
    assert!(report(&b.records).unwrap().summary.contains("not comparable"));
}
