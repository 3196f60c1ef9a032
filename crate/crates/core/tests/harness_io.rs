//! End-to-end harness behaviors: artifact round-trips, schema errors, and
//! reproducing recorded curve values from the documented streams.

use ndarray::Array1;
use uqscale::blr::{blr_fit, blr_predict, Basis, BlrModel};
use uqscale::dataset::gen_linear_gaussian;
use uqscale::harness::{
    compute_fits, parse_config_str, read_curves_csv, report, run_experiment, HarnessError,
};
use uqscale::linalg::SymMatrix;
use uqscale::rng::{streams, RngStream};
use uqscale::scaling::MetricKind;
use uqscale::uq::{average_metrics, UncertaintyTriple};

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("uqscale-io-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL_BLR: &str = r#"
experiment = "blr_scaling"
seed = 4242
folds = 3
n_grid = [50, 100, 200, 400]
[dataset]
dim = 3
noise_sigma = 0.5
test_size = 25
"#;

#[test]
fn run_then_report_reproduces_embedded_fits() {
    let cfg = parse_config_str(SMALL_BLR, &[]).unwrap();
    let dir = tmp_dir("roundtrip");
    let record = run_experiment(&cfg, &dir).unwrap();

    // Row-count arithmetic: |n_grid| x folds x 3 metrics.
    assert_eq!(record.n_rows, 4 * 3 * 3);

    // Reporting from the CSV must reproduce the embedded fits exactly.
    let table = report(&dir.join("curves.csv"), None, None).unwrap();
    let refit: Vec<uqscale::harness::FitRecord> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("fits.json")).unwrap()).unwrap();
    assert_eq!(refit.len(), record.fits.len());
    for (a, b) in refit.iter().zip(record.fits.iter()) {
        assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
        assert_eq!(a.a.to_bits(), b.a.to_bits());
        assert_eq!(a.c.to_bits(), b.c.to_bits());
    }
    assert!(table.contains("eu"));
    assert!(dir.join("report.svg").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn hand_written_exact_curve_reports_gamma_minus_one() {
    let dir = tmp_dir("handwritten");
    let path = dir.join("curves.csv");
    let mut text = String::from("experiment,metric,method,lambda,n,fold,value\n");
    for n in [10.0f64, 100.0, 1000.0] {
        text.push_str(&format!("manual,eu,blr,0,{n},0,{:.16e}\n", 1.0 / n));
    }
    std::fs::write(&path, text).unwrap();
    let table = report(&path, None, None).unwrap();
    assert!(table.contains("-1.0000"), "table:\n{table}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn malformed_header_is_schema_error_line_one() {
    let dir = tmp_dir("badheader");
    let path = dir.join("curves.csv");
    std::fs::write(&path, "not,a,valid,header\n").unwrap();
    match report(&path, None, None) {
        Err(HarnessError::Schema { line: 1, .. }) => {}
        other => panic!("expected schema error at line 1, got {other:?}"),
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn trimmed_report_writes_both_fit_files() {
    let cfg = parse_config_str(SMALL_BLR, &[]).unwrap();
    let dir = tmp_dir("trimmed");
    run_experiment(&cfg, &dir).unwrap();
    let table = report(&dir.join("curves.csv"), None, Some(100.0)).unwrap();
    assert!(table.contains("trimmed to n >= 100"));
    assert!(dir.join("fits.json").exists());
    assert!(dir.join("fits_trimmed.json").exists());
    std::fs::remove_dir_all(&dir).ok();
}

/// Ten rows of a run, recomputed from scratch through the documented
/// (seed, stream_id) scheme, must match the recorded CSV values exactly.
#[test]
fn recorded_rows_are_reproducible_from_streams() {
    let cfg = parse_config_str(SMALL_BLR, &[]).unwrap();
    let dir = tmp_dir("spotcheck");
    run_experiment(&cfg, &dir).unwrap();
    let rows = read_curves_csv(&dir.join("curves.csv")).unwrap();

    let d = cfg.dataset.dim;
    let sigma = cfg.dataset.noise_sigma;
    let model = BlrModel::with_default_prior(Basis::Identity, d, sigma * sigma);
    let theta_true = {
        let mut s = RngStream::new(cfg.seed, streams::TRUTH);
        Array1::from_iter((0..d).map(|_| s.standard_normal()))
    };
    let test_inputs: Vec<Array1<f64>> = {
        let mut s = RngStream::new(cfg.seed, streams::TEST_DATA);
        (0..cfg.dataset.test_size)
            .map(|_| Array1::from_iter((0..d).map(|_| s.standard_normal())))
            .collect()
    };

    let mut picker = RngStream::new(7, 0);
    for _ in 0..10 {
        let row = &rows[(picker.uniform01() * rows.len() as f64) as usize];
        let mut s = RngStream::new(cfg.seed, streams::train_data(row.fold));
        let full = gen_linear_gaussian(
            *cfg.n_grid.last().unwrap(),
            &theta_true,
            sigma,
            &SymMatrix::identity(d),
            &mut s,
        )
        .unwrap();
        let post = blr_fit(&model, &full.prefix(row.n as usize)).unwrap();
        let triples: Vec<UncertaintyTriple> = test_inputs
            .iter()
            .map(|x| {
                let pred = blr_predict(&post, &model, x).unwrap();
                UncertaintyTriple { tu: pred.tu(), au: pred.au(), eu: pred.eu_entropy() }
            })
            .collect();
        let avg = average_metrics(&triples).unwrap();
        let expected = match row.metric {
            MetricKind::Tu => avg.tu,
            MetricKind::Au => avg.au,
            MetricKind::Eu => avg.eu,
            other => panic!("unexpected metric {other:?}"),
        };
        assert_eq!(
            expected.to_bits(),
            row.value.to_bits(),
            "row (metric {:?}, n {}, fold {}) not reproducible",
            row.metric,
            row.n,
            row.fold
        );
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn test_stream_is_disjoint_from_training_streams() {
    for fold in 0..1024 {
        assert_ne!(streams::TEST_DATA, streams::train_data(fold));
        assert_ne!(streams::TEST_DATA, streams::init(fold, 0));
        assert_ne!(streams::TEST_DATA, streams::chain(fold, 1_000_000));
    }
}

#[test]
fn compute_fits_uses_floor_only_with_enough_points() {
    let cfg = parse_config_str(SMALL_BLR, &[]).unwrap();
    let dir = tmp_dir("floorcount");
    let record = run_experiment(&cfg, &dir).unwrap();
    // 4 distinct N: the floored fit path runs (c may legitimately be 0).
    let fits = compute_fits(&record.rows, None).unwrap();
    assert_eq!(fits.len(), 3);
    for f in &fits {
        assert_eq!(f.n_points, 4);
        assert!(f.c >= 0.0);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn cli_exit_codes_follow_error_classes() {
    let bin = env!("CARGO_BIN_EXE_uqscale");
    let dir = tmp_dir("cli");
    let bad_config = dir.join("bad.toml");
    std::fs::write(&bad_config, "experiment = \"warp_drive\"\nseed = 1\nn_grid = [10, 20]\n").unwrap();
    let out = std::process::Command::new(bin)
        .args(["run", bad_config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = std::process::Command::new(bin)
        .args(["report", dir.join("missing.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // A good run exits 0 and prints the fit table.
    let good = dir.join("good.toml");
    std::fs::write(&good, SMALL_BLR).unwrap();
    let out_dir = dir.join("artifacts");
    let out = std::process::Command::new(bin)
        .args(["run", good.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("blr_scaling"));
    assert!(out_dir.join("curves.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}
