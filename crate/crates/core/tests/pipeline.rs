//! End to end: generate, save, reload, train, checkpoint, evaluate.

use constrdyn::evaluation::{evaluate, EvalConfig, EvalReport};
use constrdyn::format::{load_trajectories, save_trajectories};
use constrdyn::models::{Checkpoint, ModelKind};
use constrdyn::physics::{generate_dataset, Protocol, System};
use constrdyn::training::{save_metrics, train, Architecture, TrainConfig};

fn small_config(task: System, kind: ModelKind) -> TrainConfig {
    let mut config = TrainConfig::new(task, kind);
    config.architecture = Architecture {
        hidden_layers: 1,
        hidden_units: 16,
        ..Architecture::default()
    };
    config.epochs = 3;
    config.lr = 1e-3;
    config.seed = 4;
    config
}

#[test]
fn dataset_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let task = System::MassSpring;
    let protocol = Protocol {
        n_traj: 6,
        n_samples: 10,
        ..Protocol::default_for(task)
    };
    let data = generate_dataset(task, protocol, 9).unwrap();
    let path = dir.path().join("data.ndjson");
    save_trajectories(&path, &data.trajectories).unwrap();
    let loaded = load_trajectories(&path).unwrap();
    assert_eq!(loaded, data.trajectories);

    let config = small_config(task, ModelKind::Node).constrained();
    let report = train(&config, &loaded).unwrap();
    assert!(report.failure.is_none());
    assert_eq!(report.epochs_completed, 3);
    assert_eq!(report.metrics.len(), 4);
    let metrics = dir.path().join("metrics.csv");
    save_metrics(&metrics, &report.metrics).unwrap();
    assert_eq!(std::fs::read_to_string(&metrics).unwrap().lines().count(), 5);

    let ckpt = dir.path().join("checkpoint.json");
    Checkpoint::from_model(&report.model, 3).save(&ckpt).unwrap();
    let model = Checkpoint::load(&ckpt).unwrap().to_model().unwrap();
    assert_eq!(model.params(), report.model.params());

    let eval = EvalConfig {
        n_test: 4,
        t_end: 5.0,
        seed: 2,
        ..EvalConfig::default()
    };
    let traces = evaluate(&model, task, &eval).unwrap();
    let summary = EvalReport::new(task, "node+hamiltonian", traces.iter().map(|t| t.rmse).collect()).unwrap();
    assert_eq!(summary.n_test, 4);
    assert!(summary.p2_5 <= summary.median && summary.median <= summary.p97_5);

    let out = dir.path().join("report.json");
    summary.save(&out).unwrap();
    assert_eq!(EvalReport::load(&out).unwrap(), summary);
}

#[test]
fn every_task_trains_one_epoch() {
    for task in [System::MassSpring, System::SinglePendulum, System::DoublePendulum, System::DampedPendulumXy] {
        let protocol = Protocol {
            n_traj: 2,
            n_samples: 5,
            ..Protocol::default_for(task)
        };
        let data = generate_dataset(task, protocol, 1).unwrap();
        for kind in [ModelKind::Node, ModelKind::Hnn] {
            if kind == ModelKind::Hnn && task == System::DampedPendulumXy {
                continue;
            }
            let mut config = small_config(task, kind);
            config.epochs = 1;
            if kind == ModelKind::Node {
                config = config.constrained();
            }
            let report = train(&config, &data.trajectories).unwrap();
            assert!(report.failure.is_none(), "{task:?} {kind:?}");
            assert!(report.metrics[1].total.is_finite());
        }
    }
}
