use std::fs;
use std::path::Path;
use std::process::Command;

use sievi::numerics::RandomStream;
use sievi::simbench::{ModelId, SimModel};
use sievi::{EviModel, Fidelity, FitConfig};
use sievi_cli::artifacts::FitFile;
use sievi_cli::ingest::{dataset_csv, ingest_csv, IngestOptions, Standardization};
use sievi_cli::CliError;
use tempfile::TempDir;

fn sievi(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sievi")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn simulated(dir: &TempDir, model: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.path().join(format!("sim-{model}-{n}-{seed}"));
    let status = sievi(&[
        "simulate",
        "--model",
        model,
        "--n",
        &n.to_string(),
        "--p",
        "3",
        "--seed",
        &seed.to_string(),
        "--out-dir",
        path(&out),
    ]);
    assert!(status.status.success());
    out.join("data.csv")
}

#[test]
fn toy_file_round_trips_through_export() {
    let dir = TempDir::new().unwrap();
    let src = write(&dir, "toy.csv", "a,b,y\n0.5,-1,2.5\n1.5,2,1\n-3,0.25,7\n");
    let got = ingest_csv(&src, "y", &IngestOptions::default()).unwrap();
    assert_eq!(got.dropped, 0);
    assert_eq!(dataset_csv(&got.data), "a,b,y\n0.5,-1,2.5\n1.5,2,1\n-3,0.25,7\n");
}

#[test]
fn zero_responses_are_counted_when_dropped() {
    let dir = TempDir::new().unwrap();
    let src = write(&dir, "z.csv", "y,x\n0,1\n2,1\n0,3\n-1,4\n5,2\n");
    let opts = IngestOptions {
        drop_zero_response: true,
        ..IngestOptions::default()
    };
    let got = ingest_csv(&src, "y", &opts).unwrap();
    assert_eq!(got.dropped, 3);
    assert_eq!(got.data.y(), &[2.0, 5.0]);
    assert!(matches!(
        ingest_csv(&src, "y", &IngestOptions::default()),
        Err(CliError::Core(sievi::Error::InvalidData(_)))
    ));
    let zeros = write(&dir, "zeros.csv", "y,x\n0,1\n0,2\n");
    assert!(matches!(
        ingest_csv(&zeros, "y", &opts),
        Err(CliError::EmptyAfterFiltering)
    ));
}

#[test]
fn malformed_cells_and_columns_are_reported() {
    let dir = TempDir::new().unwrap();
    let src = write(&dir, "bad.csv", "y,x\n1,2\n3,abc\n");
    match ingest_csv(&src, "y", &IngestOptions::default()) {
        Err(CliError::NonNumericCell { row, column, value }) => {
            assert_eq!((row, column.as_str(), value.as_str()), (2, "x", "abc"));
        }
        other => panic!("{other:?}"),
    }
    let nan = write(&dir, "nan.csv", "y,x\n1,NaN\n");
    assert!(matches!(
        ingest_csv(&nan, "y", &IngestOptions::default()),
        Err(CliError::NonNumericCell { .. })
    ));
    let inf = write(&dir, "inf.csv", "y,x\ninf,1\n");
    assert!(matches!(
        ingest_csv(&inf, "y", &IngestOptions::default()),
        Err(CliError::NonNumericCell { .. })
    ));
    assert!(matches!(
        ingest_csv(&src, "claims", &IngestOptions::default()),
        Err(CliError::MissingColumn(c)) if c == "claims"
    ));
}

#[test]
fn standardized_predictors_have_zero_mean_and_unit_sd() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "ii", 300, 4);
    let opts = IngestOptions {
        standardize: true,
        ..IngestOptions::default()
    };
    let got = ingest_csv(&data, "y", &opts).unwrap();
    let x = got.data.x();
    for col in x.columns() {
        let mean = col.sum() / 300.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 299.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
    let s = got.standardization.unwrap();
    assert_eq!(s.means.len(), 3);
    let constant = write(&dir, "c.csv", "y,x\n1,2\n3,2\n");
    assert!(Standardization::estimate(
        &ingest_csv(&constant, "y", &IngestOptions::default())
            .unwrap()
            .data
            .x()
            .clone()
    )
    .is_err());
}

#[test]
fn fit_file_round_trip_is_exact() {
    let model = SimModel::new(ModelId::Iii, 3).unwrap();
    let data = model.sample(800, &mut RandomStream::new(5)).unwrap();
    let fitted = sievi::fit(&data, &FitConfig::default()).unwrap();
    let file = FitFile::new(fitted, "y", data.names().to_vec(), None, Fidelity::Corrected);
    let loaded = FitFile::from_json(&file.to_json().unwrap()).unwrap();
    assert_eq!(loaded, file);
    let mut rng = RandomStream::new(6);
    for _ in 0..200 {
        let x = model.draw_covariates(&mut rng);
        assert_eq!(loaded.fit.alpha(&x).to_bits(), file.fit.alpha(&x).to_bits());
    }
    let mut wrong: serde_json::Value = serde_json::from_str(&file.to_json().unwrap()).unwrap();
    wrong["schema"] = "sievi-fit/0".into();
    assert!(matches!(
        FitFile::from_json(&wrong.to_string()),
        Err(CliError::Schema(_))
    ));
}

#[test]
fn fit_writes_a_unit_index_and_manifest() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "i", 1000, 7);
    let out = dir.path().join("fit");
    let run = sievi(&["fit", "--data", path(&data), "--response", "y", "--out-dir", path(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let file = FitFile::load(&out.join("fit.json")).unwrap();
    let norm: f64 = file.fit.theta.as_slice().iter().map(|v| v * v).sum();
    assert!((norm - 1.0).abs() < 1e-12);
    assert_eq!(file.covariates, ["x1", "x2", "x3"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    let digest = manifest["inputs"][path(&data)].as_str().unwrap();
    assert_eq!(digest, sievi_cli::artifacts::sha256_file(&data).unwrap());
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert!(curve.starts_with("index,alpha,gamma\n"));
    assert_eq!(curve.lines().count(), 102);
}

#[test]
fn tune_scores_the_default_ten_by_nine_grid() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "ii", 1000, 8);
    let out = dir.path().join("tune");
    let run = sievi(&[
        "tune",
        "--data",
        path(&data),
        "--response",
        "y",
        "--tau-grid",
        "0.90:0.99:0.01",
        "--lambda-grid",
        "1e-6:1e2:9",
        "--out-dir",
        path(&out),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 90);
    assert!(out.join("fit.json").exists() && out.join("manifest.json").exists());
}

#[test]
fn predicted_quantiles_follow_the_tail_index() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "i", 1000, 9);
    let fit_dir = dir.path().join("fit");
    assert!(sievi(&[
        "fit",
        "--data",
        path(&data),
        "--response",
        "y",
        "--lambda",
        "100",
        "--out-dir",
        path(&fit_dir)
    ])
    .status
    .success());
    let out = dir.path().join("pred");
    let fit_path = fit_dir.join("fit.json");
    let run = sievi(&[
        "predict",
        "--fit",
        path(&fit_path),
        "--data",
        path(&data),
        "--tau-e",
        "0.99",
        "--out-dir",
        path(&out),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,index,alpha,gamma,quantile"));
    let mut rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 1000);
    assert_eq!(rows[0][0], 1.0);
    rows.sort_by(|a, b| a[1].total_cmp(&b[1]));
    let gamma_down = rows.windows(2).all(|w| w[1][3] <= w[0][3]);
    let gamma_up = rows.windows(2).all(|w| w[1][3] >= w[0][3]);
    assert!(
        gamma_down || gamma_up,
        "heavily smoothed affine truth should give a monotone fit"
    );
    if gamma_down {
        assert!(rows.windows(2).all(|w| w[1][4] <= w[0][4]));
    } else {
        assert!(rows.windows(2).all(|w| w[1][4] >= w[0][4]));
    }
}

#[test]
fn exit_codes_separate_usage_data_and_convergence() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    assert_eq!(sievi(&["fit", "--nonsense"]).status.code(), Some(1));
    assert_eq!(
        sievi(&["bench", "--model", "vi", "--n", "10", "--out-dir", path(&out)])
            .status
            .code(),
        Some(1)
    );
    let bad = write(&dir, "bad.csv", "y,x\n1,2\n3,abc\n");
    assert_eq!(
        sievi(&["fit", "--data", path(&bad), "--response", "y", "--out-dir", path(&out)])
            .status
            .code(),
        Some(2)
    );
    // 200 rows leave 20 exceedances, short of the K + 5 = 45 needed to select
    let small = simulated(&dir, "i", 200, 10);
    let partial = dir.path().join("partial");
    let args = [
        "tune",
        "--data",
        path(&small),
        "--response",
        "y",
        "--tau-grid",
        "0.9:0.9:0.01",
        "--lambda-grid",
        "1e-2:1e-2:1",
    ];
    let run = sievi(&[&args[..], &["--out-dir", path(&out)]].concat());
    assert_eq!(run.status.code(), Some(3));
    assert!(out.join("manifest.json").exists() && !out.join("scores.csv").exists());
    let run = sievi(&[&args[..], &["--out-dir", path(&partial), "--keep-partial"]].concat());
    assert_eq!(run.status.code(), Some(3));
    assert!(partial.join("scores.csv").exists());
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = simulated(&dir, "v", 500, 11);
    let b_dir = dir.path().join("again");
    assert!(sievi(&[
        "simulate",
        "--model",
        "5",
        "--n",
        "500",
        "--seed",
        "11",
        "--out-dir",
        path(&b_dir)
    ])
    .status
    .success());
    assert_eq!(fs::read(a).unwrap(), fs::read(b_dir.join("data.csv")).unwrap());
}

#[test]
fn bench_output_ignores_thread_count() {
    let dir = TempDir::new().unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("bench-{threads}"));
        let status = sievi(&[
            "--threads",
            threads,
            "bench",
            "--model",
            "iii",
            "--n",
            "400",
            "--p",
            "2",
            "--reps",
            "4",
            "--seed",
            "3",
            "--knots",
            "12",
            "--tau-grid",
            "0.9:0.95:0.05",
            "--lambda-grid",
            "1e-3:10:2",
            "--out-dir",
            path(&out),
        ]);
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        out
    };
    let one = run("1");
    let four = run("4");
    for name in ["summary.csv", "replications.csv"] {
        assert_eq!(fs::read(one.join(name)).unwrap(), fs::read(four.join(name)).unwrap());
    }
    let summary = fs::read_to_string(one.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,model,p,n,reps,mean,sd,failures\n"));
}
