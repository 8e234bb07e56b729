//! End-to-end command-line tests driving the built binary on synthetic
//! cohorts: file outputs, cache behavior, determinism, and API equivalence
//! of the predict command.

use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, DVector};

use pqlgei_core::crossval::{fixed_effect_predictor, predict};
use pqlgei_core::data::standardize_genotypes;
use pqlgei_core::io::{load_model, read_fit, BedTriplet, Table};
use pqlgei_core::kinship::{build_kd_cross, compute_grm_cross};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pqlgei"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("pqlgei_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(out.status.success(), "command failed\nstdout: {stdout}\nstderr: {stderr}");
    stdout + &stderr
}

/// Emit a small synthetic cohort into `dir` and return the prefix.
fn emit_toy(dir: &Path, n: usize, p: usize, seed: u64) -> PathBuf {
    let prefix = dir.join("toy");
    run_ok(bin()
        .args(["simulate", "--emit-data"])
        .arg("--n")
        .arg(n.to_string())
        .arg("--p")
        .arg(p.to_string())
        .arg("--seed")
        .arg(seed.to_string())
        .arg("--out")
        .arg(&prefix));
    prefix
}

#[test]
fn kinship_cache_reuse_and_exposure_hash() {
    let dir = workdir("kinship");
    let prefix = emit_toy(&dir, 60, 20, 1);
    let pheno = dir.join("toy.pheno.tsv");
    let out = dir.join("kin");
    let base = [
        "kinship",
        "--bfile",
        prefix.to_str().unwrap(),
        "--pheno",
        pheno.to_str().unwrap(),
    ];
    let first = run_ok(bin().args(base).args(["--exposure", "sex", "--out"]).arg(&out));
    assert!(first.contains("computed"), "{first}");
    assert!(out.with_extension("").with_file_name("kin.kin.bin").exists() || dir.join("kin.kin.bin").exists());
    let second = run_ok(bin().args(base).args(["--exposure", "sex", "--out"]).arg(&out));
    assert!(second.contains("reused cache"), "{second}");
    let forced = run_ok(bin()
        .args(base)
        .args(["--exposure", "sex", "--no-cache", "--out"])
        .arg(&out));
    assert!(forced.contains("computed"), "{forced}");

    // Different exposure column -> different content hash -> recompute.
    let table = std::fs::read_to_string(&pheno).unwrap();
    let flipped: String = {
        let mut lines: Vec<String> = table.lines().map(|s| s.to_string()).collect();
        for line in lines.iter_mut().skip(1) {
            let mut cols: Vec<String> = line.split('\t').map(|s| s.to_string()).collect();
            cols[2] = if cols[2] == "1" { "0".into() } else { "1".into() };
            *line = cols.join("\t");
        }
        lines.join("\n") + "\n"
    };
    std::fs::write(dir.join("toy_flip.pheno.tsv"), flipped).unwrap();
    let third = run_ok(bin()
        .args([
            "kinship",
            "--bfile",
            prefix.to_str().unwrap(),
            "--pheno",
            dir.join("toy_flip.pheno.tsv").to_str().unwrap(),
            "--exposure",
            "sex",
            "--out",
        ])
        .arg(&out));
    assert!(
        third.contains("does not match") && third.contains("computed"),
        "exposure change must invalidate the cache: {third}"
    );
}

#[test]
fn fit_writes_reports_and_model() {
    let dir = workdir("fit");
    let prefix = emit_toy(&dir, 80, 25, 2);
    let out = dir.join("run");
    let log = run_ok(bin()
        .args([
            "fit",
            "--bfile",
            prefix.to_str().unwrap(),
            "--pheno",
            dir.join("toy.pheno.tsv").to_str().unwrap(),
            "--covar-cols",
            "age",
            "--exposure",
            "sex",
            "--nlambda",
            "8",
            "--rho",
            "0.5",
            "--out",
        ])
        .arg(&out));
    assert!(log.contains("lambda_max"), "{log}");
    let path_file = dir.join("run.path.tsv");
    assert!(path_file.exists());
    assert!(dir.join("run.config.txt").exists());
    assert!(dir.join("run.model.bin").exists());
    let records = read_fit(&path_file).unwrap();
    // The top grid point is the null model; further down the path the
    // model picks up genetic terms.
    let sizes: Vec<&pqlgei_core::io::FitRecord> = records
        .iter()
        .filter(|r| r.name == "model_size_beta")
        .collect();
    assert_eq!(sizes.len(), 8);
    assert_eq!(sizes[0].value, 0.0);
    assert!(
        sizes[1..].iter().any(|r| r.value > 0.0),
        "no nonzero model anywhere along the path"
    );
    // Config echo is key=value.
    let config = std::fs::read_to_string(dir.join("run.config.txt")).unwrap();
    assert!(config.lines().any(|l| l == "command=fit"), "{config}");
}

#[test]
fn cv_is_deterministic_for_a_fixed_seed() {
    let dir = workdir("cv");
    let prefix = emit_toy(&dir, 70, 15, 3);
    let run_cv = |out: &Path| {
        run_ok(bin()
            .args([
                "cv",
                "--bfile",
                prefix.to_str().unwrap(),
                "--pheno",
                dir.join("toy.pheno.tsv").to_str().unwrap(),
                "--covar-cols",
                "age",
                "--exposure",
                "sex",
                "--nlambda",
                "6",
                "--lambda-min-ratio",
                "0.2",
                "--rho",
                "0.5",
                "-k",
                "3",
                "--seed",
                "11",
                "--out",
            ])
            .arg(out))
    };
    let a = dir.join("cv_a");
    let b = dir.join("cv_b");
    run_cv(&a);
    run_cv(&b);
    let cv_a = std::fs::read(dir.join("cv_a.cv.tsv")).unwrap();
    let cv_b = std::fs::read(dir.join("cv_b.cv.tsv")).unwrap();
    assert_eq!(cv_a, cv_b, "cv reports differ between identical runs");
    let cfg_a = std::fs::read_to_string(dir.join("cv_a.config.txt")).unwrap();
    let cfg_b = std::fs::read_to_string(dir.join("cv_b.config.txt")).unwrap();
    let chosen = |cfg: &str| -> String {
        cfg.lines()
            .find(|l| l.starts_with("chosen_lambda="))
            .unwrap()
            .to_string()
    };
    assert_eq!(chosen(&cfg_a), chosen(&cfg_b));
}

#[test]
fn predict_matches_library_api() {
    let dir = workdir("predict");
    let prefix = emit_toy(&dir, 90, 20, 4);
    // Split the cohort: first 70 samples train, the rest are scored.
    let full = BedTriplet::from_prefix(&prefix).unwrap();
    let g_full = full.read_bed(None, false).unwrap();
    let train_rows: Vec<usize> = (0..70).collect();
    let train_ids: Vec<String> =
        train_rows.iter().map(|&i| full.sample_ids[i].clone()).collect();
    let g_train = g_full.select_rows(&train_rows);
    let train_prefix = dir.join("train");
    pqlgei_core::io::write_plink(&train_prefix, &g_train, &train_ids, None).unwrap();
    // Training phenotype table: subset rows of the emitted table.
    let table = std::fs::read_to_string(dir.join("toy.pheno.tsv")).unwrap();
    let mut lines = table.lines();
    let header = lines.next().unwrap().to_string();
    let rows: Vec<&str> = lines.collect();
    let mut train_table = header.clone();
    train_table.push('\n');
    for &i in &train_rows {
        train_table.push_str(rows[i]);
        train_table.push('\n');
    }
    std::fs::write(dir.join("train.pheno.tsv"), &train_table).unwrap();

    let out = dir.join("model");
    run_ok(bin()
        .args([
            "fit",
            "--bfile",
            train_prefix.to_str().unwrap(),
            "--pheno",
            dir.join("train.pheno.tsv").to_str().unwrap(),
            "--covar-cols",
            "age",
            "--exposure",
            "sex",
            "--nlambda",
            "6",
            "--rho",
            "0.5",
            "--model-index",
            "0,3",
            "--out",
        ])
        .arg(&out));
    let pred_out = dir.join("scores");
    run_ok(bin()
        .args([
            "predict",
            "--bfile",
            prefix.to_str().unwrap(),
            "--pheno",
            dir.join("toy.pheno.tsv").to_str().unwrap(),
            "--model",
            dir.join("model.model.bin").to_str().unwrap(),
            "--out",
        ])
        .arg(&pred_out));
    let pred_table = Table::read(dir.join("scores.pred.tsv")).unwrap();
    assert_eq!(pred_table.rows.len(), 20);

    // Library-side reproduction from the same model file and inputs.
    let model = load_model(dir.join("model.model.bin")).unwrap();
    let target_rows: Vec<usize> = (70..90).collect();
    let mut g_all = g_full.clone();
    for j in 0..g_all.ncols() {
        for i in 0..g_all.nrows() {
            if g_all[(i, j)].is_nan() {
                g_all[(i, j)] = 2.0 * model.mafs[j];
            }
        }
    }
    let g_tr = standardize_genotypes(&g_all.select_rows(&train_rows), Some(&model.mafs))
        .unwrap()
        .matrix;
    let g_te = standardize_genotypes(&g_all.select_rows(&target_rows), Some(&model.mafs))
        .unwrap()
        .matrix;
    let pheno = Table::read(dir.join("toy.pheno.tsv")).unwrap();
    let target_ids: Vec<String> =
        target_rows.iter().map(|&i| full.sample_ids[i].clone()).collect();
    let order = pheno.align("IID", &target_ids).unwrap();
    let d_test = pheno.numeric_column("sex", &order).unwrap();
    let age_test = pheno.numeric_column("age", &order).unwrap();
    let mut z_test = DMatrix::zeros(20, 2);
    z_test.column_mut(0).fill(1.0);
    z_test.set_column(1, &age_test);
    let xtheta_test = fixed_effect_predictor(&z_test, &d_test, &g_te, &model.coef);
    let k12 = compute_grm_cross(&g_te, &g_tr).unwrap();
    let kd12 = build_kd_cross(&k12, &d_test, &model.d_train, model.exposure, None).unwrap();
    let k22 = compute_grm_cross(&g_tr, &g_tr).unwrap();
    let kd22 =
        build_kd_cross(&k22, &model.d_train, &model.d_train, model.exposure, None).unwrap();
    let (expect, _) = predict(
        model.family,
        model.tau_g,
        model.tau_d,
        model.phi,
        &model.w,
        &model.ytilde,
        &model.xtheta_train,
        &xtheta_test,
        &k12,
        &kd12,
        &k22,
        &kd22,
    )
    .unwrap();
    let scores = pred_table
        .numeric_column("score", &(0..20).collect::<Vec<_>>())
        .unwrap();
    let ids_out: Vec<String> = (0..20).map(|i| pred_table.rows[i][0].clone()).collect();
    assert_eq!(ids_out, target_ids);
    let diff: DVector<f64> = scores - expect;
    assert!(
        diff.abs().max() < 1e-15,
        "CLI and library predictions disagree by {}",
        diff.abs().max()
    );
}

#[test]
fn simulate_benchmark_smoke_emits_metric_rows() {
    let dir = workdir("bench");
    let out = dir.join("bench");
    let cfg = dir.join("sim.cfg");
    std::fs::write(&cfg, "n=200\np=500\ns_main=20\ns_gei=10\nq_kinship=300\n").unwrap();
    let log = run_ok(bin()
        .args(["simulate", "--sim-config"])
        .arg(&cfg)
        .args([
            "--reps", "2", "-k", "2", "--nlambda", "6", "--lambda-min-ratio", "0.2", "--rho",
            "0.5", "--seed", "9", "--out",
        ])
        .arg(&out));
    assert!(log.contains("benchmark over 2 replications"), "{log}");
    let bench = std::fs::read_to_string(dir.join("bench.bench.tsv")).unwrap();
    for needle in [
        "mean\tgei\tmodel_size",
        "mean\tgei\tf1",
        "mean\tmain\tfdr",
        "mean\tcombined\ttpr",
        "mean\tcombined\tauc_test",
        "rep:0\tgei\tf1",
        "rep:1\tcombined\tauc_test",
    ] {
        assert!(bench.contains(needle), "missing row {needle}\n{bench}");
    }
}

#[test]
fn missing_inputs_fail_with_nonzero_exit() {
    let dir = workdir("errors");
    let out = dir.join("x");
    let output = bin()
        .args(["fit", "--pheno", "nope.tsv", "--exposure", "sex", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let msg = String::from_utf8_lossy(&output.stderr);
    assert!(msg.contains("genotypes required"), "{msg}");
}
