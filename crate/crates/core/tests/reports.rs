use std::path::PathBuf;
use std::sync::Arc;

use regionshap::dataset::{write_dataset, Dataset, Sample};
use regionshap::evaluators::RegionMeanLinear;
use regionshap::imaging::{AmplitudeImage, BaselineSpec, ImageFormat, RegionLabelMap};
use regionshap::pipeline::{
    aggregate_csv, analyze_dataset, analyze_dataset_with, emit_reports, AggregateReport, EvaluatorSpec, RunConfig, Shared,
    AGGREGATE_CSV_HEADER,
};

const WEIGHTS: [[f64; 3]; 2] = [[1.0, 2.0, -0.5], [-0.25, 0.5, 3.0]];

fn model() -> RegionMeanLinear {
    RegionMeanLinear::new(WEIGHTS.to_vec(), vec![0.1, -0.1]).unwrap()
}

/// Four 2x3 samples, two per class; pixel `p` of sample `k` is `(p + 1 + k) / 10`.
fn fixture() -> Dataset {
    let labels = RegionLabelMap::from_raw(2, 3, &[0, 0, 1, 1, 2, 0]).unwrap();
    let samples = (0..4)
        .map(|k| Sample {
            id: format!("{}/s{k}", ["alpha", "beta"][k / 2]),
            class_index: k / 2,
            image: AmplitudeImage::new(2, 3, (0..6).map(|p| (p + 1 + k) as f64 / 10.0).collect()).unwrap(),
            labels: labels.clone(),
        })
        .collect();
    Dataset::new(vec!["alpha".into(), "beta".into()], samples)
}

fn config() -> RunConfig {
    RunConfig { baseline: BaselineSpec::Zero, replicates: 1, seed: 0, ..Default::default() }
}

fn report() -> AggregateReport {
    analyze_dataset_with(&config(), &fixture(), &Shared(Arc::new(model()))).unwrap()
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/aggregate.csv")
}

#[test]
fn fixture_matches_closed_form() {
    // zero baseline and a linear model: phi_r = w[class][r] * mean_r(sample)
    let r = report();
    let data = fixture();
    for (s, got) in data.samples.iter().zip(&r.samples) {
        let means = s.labels.region_means(&s.image).unwrap();
        for reg in 0..3 {
            let want = WEIGHTS[s.class_index][reg] * means[reg].unwrap();
            assert!((got.shapley[reg] - want).abs() < 1e-12);
        }
        assert!(got.bsi.iter().all(|b| b.abs() < 1e-12));
    }
}

#[test]
fn aggregate_csv_matches_golden() {
    let csv = aggregate_csv(&report());
    if std::env::var_os("REGIONSHAP_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &csv).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).expect("golden file present");
    assert_eq!(csv, golden);
}

#[test]
fn csv_formatting_contract() {
    let csv = aggregate_csv(&report());
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(AGGREGATE_CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // overall plus two classes, three regions and three pairs each
    assert_eq!(rows.len(), 18);
    for row in &rows {
        assert_eq!(row.len(), 7);
        assert_eq!(row[2].split('.').nth(1).unwrap().len(), 6);
        assert_eq!(row[3].split('.').nth(1).unwrap().len(), 6);
        assert_eq!(row[6].split('.').nth(1).unwrap().len(), 4);
        if row[1].contains('&') {
            assert_eq!((row[4], row[5]), ("", ""));
        } else {
            assert_eq!(row[4].split('.').nth(1).unwrap().len(), 4);
            assert_eq!(row[5].split('.').nth(1).unwrap().len(), 4);
        }
    }
    assert_eq!(rows[0][0], "overall");
    assert_eq!(rows[6][0], "alpha");
    assert_eq!(rows[12][0], "beta");
}

#[test]
fn report_json_is_versioned_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_reports(&report(), dir.path()).unwrap();
    assert_eq!(written.len(), 2);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], 1);
    assert_eq!(json["failed_count"], 0);
    assert!(json["max_efficiency_residual"].as_f64().unwrap() < 1e-12);
    assert_eq!(json["samples"].as_array().unwrap().len(), 4);
    assert_eq!(json["per_class"].as_array().unwrap().len(), 2);
    let back: AggregateReport = serde_json::from_value(json).unwrap();
    assert_eq!(back.overall, report().overall);
}

#[test]
fn analyze_from_disk_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    write_dataset(&data_root, &fixture(), ImageFormat::RawF32, |_| (None, None), None).unwrap();
    let weights = dir.path().join("weights.json");
    std::fs::write(&weights, serde_json::to_string(&model()).unwrap()).unwrap();

    let cfg = RunConfig {
        dataset_root: Some(data_root),
        evaluator: Some(EvaluatorSpec::Linear { path: weights }),
        ..config()
    };
    let from_disk = analyze_dataset(&cfg).unwrap();
    // values are stored as f32, so compare to a few ulps of f32
    let mem = report();
    for (a, b) in from_disk.samples.iter().zip(&mem.samples) {
        assert_eq!(a.id, b.id);
        for r in 0..3 {
            assert!((a.shapley[r] - b.shapley[r]).abs() < 1e-6);
        }
    }
}

#[test]
fn report_json_is_identical_across_worker_counts() {
    let data = fixture();
    let reports: Vec<String> = [1, 2, 8]
        .iter()
        .map(|&jobs| {
            let cfg = RunConfig { baseline: BaselineSpec::default(), replicates: 3, parallelism: jobs, ..config() };
            analyze_dataset_with(&cfg, &data, &Shared(Arc::new(model()))).unwrap().to_json()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}
