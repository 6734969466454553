use std::path::Path;
use std::process::Command;

use itergp::kernels::HyperParams;
use itergp_bench::synthetic::gp_prior_dataset;
use itergp_bench::{load_dataset, write_dataset, Checkpoint, Schema, TargetColumn};
use proptest::prelude::*;

fn itergp(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_itergp")).args(args).output().unwrap();
    assert!(out.status.success(), "itergp {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_prior(dir: &Path, n: usize) -> String {
    let theta = HyperParams::from_constrained(&[0.5, 0.8, 1.2], 1.0, 0.05, 0.0).unwrap();
    let path = dir.join("data.csv");
    write_dataset(&path, &gp_prior_dataset(n, &theta, 9).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn written_datasets_reload_bitwise(
        rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..30),
    ) {
        let n = rows.len();
        let x = itergp::faer::Mat::from_fn(n, 3, |i, j| rows[i][j]);
        let y: Vec<f64> = rows.iter().map(|r| r[3]).collect();
        let ds = itergp_bench::Dataset::new("p", x, y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path, &Schema::new(TargetColumn::Last)).unwrap();
        prop_assert_eq!(back.len(), n);
        prop_assert_eq!(back.dim(), 3);
        for i in 0..n {
            prop_assert_eq!(back.y[i].to_bits(), ds.y[i].to_bits());
            for j in 0..3 {
                prop_assert_eq!(back.x[(i, j)].to_bits(), ds.x[(i, j)].to_bits());
            }
        }
        prop_assert!(back.provenance.dropped_lines.is_empty());
    }
}

#[test]
fn fit_then_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_prior(dir.path(), 120);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    itergp(&[
        "fit", "--data", &data, "--backend", "iterative", "--cg-tol", "1e-4", "--precond-rank", "10", "--optimizer",
        "lbfgs", "--max-epochs", "5", "--out", out_s,
    ]);
    let ckpt = Checkpoint::load(&out.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.data.rows, 120);
    assert!(ckpt.train_mll.is_finite());
    assert!(out.join("trace.json").exists());

    itergp(&["predict", "--data", &data, "--lanczos-rank", "40", "--out", out_s]);
    let text = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("mean") && header.contains("variance"), "{header}");
    assert_eq!(lines.count(), 24);
}

#[test]
fn predict_refuses_changed_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_prior(dir.path(), 60);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    itergp(&["fit", "--data", &data, "--backend", "cholesky", "--optimizer", "lbfgs", "--max-epochs", "2", "--out", out_s]);
    let other = dir.path().join("other.csv");
    let theta = HyperParams::from_constrained(&[0.5, 0.8, 1.2], 1.0, 0.05, 0.0).unwrap();
    write_dataset(&other, &gp_prior_dataset(60, &theta, 10).unwrap()).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_itergp"))
        .args(["predict", "--data", other.to_str().unwrap(), "--out", out_s])
        .output()
        .unwrap();
    assert!(!status.status.success());
}

#[test]
fn report_rejects_unknown_kind() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_itergp"))
        .args(["report", "--out", dir.path().to_str().unwrap(), "--kind", "histogram"])
        .output()
        .unwrap();
    assert!(!status.status.success());
}
