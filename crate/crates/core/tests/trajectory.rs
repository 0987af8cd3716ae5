use std::sync::Arc;
use std::time::Duration;

use regionshap::dataset::Dataset;
use regionshap::pipeline::{
    analyze_trajectory, emit_trajectory, Checkpoint, EvaluatorFactory, EvaluatorSpec, RunConfig, Shared, SpecFactory,
    TRAJECTORY_CSV_HEADER,
};
use regionshap::synthetic::{generate_dataset, to_dataset, BiasConfig, Split};
use regionshap::toy_model::{train_with_checkpoints, MlpModel, TrainConfig};

fn biased(per_class: usize) -> (BiasConfig, Dataset) {
    let cfg = BiasConfig {
        height: 32,
        width: 32,
        target_size: 10,
        shadow_length: 5,
        train_per_class: per_class,
        ..Default::default()
    };
    let data = to_dataset(&cfg, &generate_dataset(&cfg, Split::Train).unwrap());
    (cfg, data)
}

fn every_nth(data: &Dataset, n: usize) -> Dataset {
    Dataset::new(data.classes.clone(), data.samples.iter().step_by(n).cloned().collect())
}

#[test]
fn clutter_ratio_moves_during_training() {
    let (_, data) = biased(20);
    let mut snapshots: Vec<MlpModel> = Vec::new();
    let tc = TrainConfig { hidden_dim: 32, ..Default::default() };
    train_with_checkpoints(&data, &tc, |_, m| snapshots.push(m.clone())).unwrap();
    assert_eq!(snapshots.len(), 60);

    let factories: Vec<Shared> = snapshots.into_iter().map(|m| Shared(Arc::new(m))).collect();
    let checkpoints: Vec<Checkpoint> = factories
        .iter()
        .enumerate()
        .map(|(k, f)| Checkpoint { index: k + 1, label: format!("epoch-{}", k + 1), factory: f as &dyn EvaluatorFactory })
        .collect();
    let config = RunConfig { replicates: 1, parallelism: 4, ..Default::default() };
    let report = analyze_trajectory(&config, &every_nth(&data, 4), &checkpoints).unwrap();
    assert_eq!(report.rows.len(), 60);
    let clutter: Vec<f64> = report.rows.iter().map(|r| r.overall.as_ref().unwrap().ratio[0].mean.unwrap()).collect();
    let (lo, hi) = clutter.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi - lo > 0.01, "clutter ratio range {lo}..{hi}");
    let acc: Vec<f64> = report.rows.iter().map(|r| r.overall.as_ref().unwrap().accuracy).collect();
    assert!(acc[59] > acc[0], "accuracy {} -> {}", acc[0], acc[59]);
}

#[test]
fn repeated_checkpoint_files_give_identical_rows() {
    let (_, data) = biased(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    MlpModel::random(32, 32, true, 8, 10, 0.05, 3).unwrap().save(&path).unwrap();
    let factory = SpecFactory { spec: EvaluatorSpec::Toy { checkpoint: path }, timeout: Duration::from_secs(1) };
    let checkpoints: Vec<Checkpoint> =
        (0..3).map(|k| Checkpoint { index: k, label: "same".into(), factory: &factory }).collect();
    let report = analyze_trajectory(&RunConfig { replicates: 2, ..Default::default() }, &data, &checkpoints).unwrap();
    assert_eq!(report.rows[0].overall, report.rows[1].overall);
    assert_eq!(report.rows[1].overall, report.rows[2].overall);

    let out = tempfile::tempdir().unwrap();
    emit_trajectory(&report, out.path(), true).unwrap();
    let csv = std::fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], TRAJECTORY_CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].split_once(',').unwrap().1, lines[3].split_once(',').unwrap().1);
    for chart in ["shapley", "ratio", "bsi", "accuracy"] {
        let svg = std::fs::read_to_string(out.path().join(format!("trajectory_{chart}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    }
}

#[test]
fn failing_checkpoint_is_recorded_and_others_continue() {
    let (_, data) = biased(1);
    let good = Shared(Arc::new(MlpModel::random(32, 32, true, 4, 10, 0.05, 1).unwrap()));
    let missing = SpecFactory {
        spec: EvaluatorSpec::Toy { checkpoint: "/nonexistent/model.json".into() },
        timeout: Duration::from_secs(1),
    };
    let checkpoints = [
        Checkpoint { index: 1, label: "good".into(), factory: &good },
        Checkpoint { index: 2, label: "missing".into(), factory: &missing },
        Checkpoint { index: 3, label: "good again".into(), factory: &good },
    ];
    let report = analyze_trajectory(&RunConfig { replicates: 1, ..Default::default() }, &data, &checkpoints).unwrap();
    assert!(report.rows[0].overall.is_some() && report.rows[2].overall.is_some());
    assert!(report.rows[1].error.is_some());
    assert_eq!(report.exit_code(), 2);
}
