//! Delimited result reports. The path report is a long-format TSV with one
//! `coef` row per nonzero coefficient at each (rho, lambda) grid point and a
//! `summary` block per grid point; values print with 17 significant digits
//! so a parse of the written file reproduces them exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::crossval::CVResult;
use crate::error::{Error, Result};
use crate::simulate::BenchmarkReport;
use crate::solver::PathResult;

pub const PATH_REPORT_HEADER: &str = "section\trho\tlambda\tname\tvalue";

/// One parsed report row.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub section: String,
    pub rho: f64,
    pub lambda: f64,
    pub name: String,
    pub value: f64,
}

/// Write the path report; CV statistics join the summary block when given.
pub fn write_fit<P: AsRef<Path>>(
    path: P,
    result: &PathResult,
    cv: Option<&CVResult>,
    variant_ids: &[String],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(PATH_REPORT_HEADER);
    out.push('\n');
    for (ri, rp) in result.rho_paths.iter().enumerate() {
        for (li, pt) in rp.points.iter().enumerate() {
            let mut row = |section: &str, name: &str, value: f64| {
                let _ = writeln!(
                    out,
                    "{section}\t{:.17e}\t{:.17e}\t{name}\t{:.17e}",
                    pt.rho, pt.lambda, value
                );
            };
            if pt.error.is_none() {
                for (k, &v) in pt.coef.theta.iter().enumerate() {
                    if v != 0.0 {
                        row("coef", &format!("theta:{k}"), v);
                    }
                }
                if pt.coef.alpha != 0.0 {
                    row("coef", "alpha", pt.coef.alpha);
                }
                for (j, &v) in pt.coef.beta.iter().enumerate() {
                    if v != 0.0 {
                        row("coef", &format!("beta:{}", variant_ids[j]), v);
                    }
                }
                for (j, &v) in pt.coef.gamma.iter().enumerate() {
                    if v != 0.0 {
                        row("coef", &format!("gamma:{}", variant_ids[j]), v);
                    }
                }
            }
            let sr = pt.coef.sparsity_report();
            row("summary", "model_size_beta", sr.nonzero_beta as f64);
            row("summary", "model_size_gamma", sr.nonzero_gamma as f64);
            row("summary", "n_active_groups", pt.n_active as f64);
            row("summary", "n_screened", pt.n_screened as f64);
            row("summary", "objective", pt.objective);
            row("summary", "iterations", pt.iterations as f64);
            row("summary", "converged", if pt.converged { 1.0 } else { 0.0 });
            row("summary", "failed", if pt.error.is_some() { 1.0 } else { 0.0 });
            if let Some(cv) = cv {
                if ri < cv.mean_deviance.len() && li < cv.mean_deviance[ri].len() {
                    row("summary", "cv_deviance_mean", cv.mean_deviance[ri][li]);
                    row("summary", "cv_deviance_se", cv.se_deviance[ri][li]);
                    row("summary", "cv_auc_mean", cv.mean_auc[ri][li]);
                    row("summary", "cv_auc_se", cv.se_auc[ri][li]);
                    row(
                        "summary",
                        "cv_chosen_min",
                        if cv.chosen_min == (ri, li) { 1.0 } else { 0.0 },
                    );
                    row(
                        "summary",
                        "cv_chosen_1se",
                        if cv.chosen_1se == (ri, li) { 1.0 } else { 0.0 },
                    );
                }
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse a path report back into rows.
pub fn read_fit<P: AsRef<Path>>(path: P) -> Result<Vec<FitRecord>> {
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == PATH_REPORT_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "unexpected path report header: {other:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::Format(format!(
                "path report line {}: expected 5 fields, found {}",
                ln + 2,
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("path report line {}: bad number {s}", ln + 2)))
        };
        records.push(FitRecord {
            section: cols[0].to_string(),
            rho: parse(cols[1])?,
            lambda: parse(cols[2])?,
            name: cols[3].to_string(),
            value: parse(cols[4])?,
        });
    }
    Ok(records)
}

/// CV grid summary as TSV.
pub fn write_cv<P: AsRef<Path>>(path: P, cv: &CVResult) -> Result<()> {
    let mut out = String::from(
        "rho\tlambda\tdeviance_mean\tdeviance_se\tauc_mean\tauc_se\tchosen_min\tchosen_1se\n",
    );
    for (ri, &rho) in cv.rho_grid.iter().enumerate() {
        for (li, &lam) in cv.lambdas[ri].iter().enumerate() {
            let _ = writeln!(
                out,
                "{rho:.6}\t{lam:.8e}\t{:.8e}\t{:.8e}\t{:.8e}\t{:.8e}\t{}\t{}",
                cv.mean_deviance[ri][li],
                cv.se_deviance[ri][li],
                cv.mean_auc[ri][li],
                cv.se_auc[ri][li],
                (cv.chosen_min == (ri, li)) as u8,
                (cv.chosen_1se == (ri, li)) as u8,
            );
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-sample prediction scores as TSV.
pub fn write_predictions<P: AsRef<Path>>(path: P, ids: &[String], scores: &[f64]) -> Result<()> {
    if ids.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} ids vs {} scores",
            ids.len(),
            scores.len()
        )));
    }
    let mut out = String::from("sample_id\tscore\n");
    for (id, s) in ids.iter().zip(scores) {
        let _ = writeln!(out, "{id}\t{s:.17e}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Benchmark report shaped like the evaluation tables: one metric row per
/// (target, statistic) with the replication mean, plus per-replication rows.
pub fn write_benchmark<P: AsRef<Path>>(path: P, report: &BenchmarkReport) -> Result<()> {
    let mut out = String::from("section\ttarget\tmetric\tvalue\n");
    for (target, m) in [
        ("gei", &report.mean_gamma),
        ("main", &report.mean_beta),
        ("combined", &report.mean_combined),
    ] {
        let _ = writeln!(out, "mean\t{target}\tmodel_size\t{}", m.model_size);
        let _ = writeln!(out, "mean\t{target}\tfpr\t{:.6e}", m.fpr);
        let _ = writeln!(out, "mean\t{target}\ttpr\t{:.6e}", m.tpr);
        let _ = writeln!(out, "mean\t{target}\tfdr\t{:.6e}", m.fdr);
        let _ = writeln!(out, "mean\t{target}\tf1\t{:.6e}", m.f1);
    }
    let _ = writeln!(out, "mean\tcombined\tauc_test\t{:.6e}", report.mean_test_auc);
    let _ = writeln!(out, "mean\tall\thierarchy_violations\t{}", report.hierarchy_violations);
    let _ = writeln!(out, "mean\tall\tfailed_replications\t{}", report.n_failed);
    for r in &report.reps {
        let base = format!("rep:{}", r.rep);
        if let Some(e) = &r.error {
            let _ = writeln!(out, "{base}\tall\terror\t0 # {e}");
            continue;
        }
        for (target, m) in [("gei", &r.gamma), ("main", &r.beta), ("combined", &r.combined)] {
            let _ = writeln!(out, "{base}\t{target}\tmodel_size\t{}", m.model_size);
            let _ = writeln!(out, "{base}\t{target}\tf1\t{:.6e}", m.f1);
            let _ = writeln!(out, "{base}\t{target}\tfdr\t{:.6e}", m.fdr);
            let _ = writeln!(out, "{base}\t{target}\ttpr\t{:.6e}", m.tpr);
            let _ = writeln!(out, "{base}\t{target}\tfpr\t{:.6e}", m.fpr);
        }
        let _ = writeln!(out, "{base}\tcombined\tauc_test\t{:.6e}", r.test_auc);
        let _ = writeln!(out, "{base}\tall\tchosen_lambda\t{:.8e}", r.chosen_lambda);
        let _ = writeln!(out, "{base}\tall\tchosen_rho\t{:.6}", r.chosen_rho);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Key=value run-configuration echo.
pub fn write_config<P: AsRef<Path>>(path: P, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k}={v}");
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Family;
    use crate::solver::{PathPoint, RhoPath};
    use nalgebra::DVector;

    fn tiny_path_result() -> PathResult {
        let mut coef = crate::data::Coefficients::zeros(2, 3);
        coef.theta[0] = 0.25;
        coef.beta[1] = -1.2345678901234567e-3;
        coef.gamma[1] = 4.4e-2;
        let pt = PathPoint {
            lambda: 0.5,
            rho: 0.5,
            coef,
            delta: DVector::zeros(4),
            objective: 12.5,
            iterations: 7,
            converged: true,
            n_active: 1,
            n_screened: 2,
            kkt_refit_rounds: 0,
            min_zero_slack: 0.1,
            max_active_residual: 1e-9,
            error: None,
        };
        PathResult {
            family: Family::Binomial,
            rho_paths: vec![RhoPath {
                rho: 0.5,
                lambda_max: 1.0,
                lambdas: vec![0.5],
                points: vec![pt],
            }],
            null_state: empty_state(),
        }
    }

    fn empty_state() -> crate::solver::FitState {
        crate::solver::FitState {
            coef: crate::data::Coefficients::zeros(2, 3),
            delta: DVector::zeros(4),
            mu: DVector::zeros(4),
            w: DVector::from_element(4, 1.0),
            ytilde: DVector::zeros(4),
            active_set: vec![],
            s_t: 1.0,
            objective: 0.0,
            objective_trace: vec![],
            iterations: 0,
            converged: true,
            kkt: crate::solver::KktReport {
                min_zero_slack: f64::INFINITY,
                max_active_residual: 0.0,
                max_unpenalized_residual: 0.0,
            },
            warnings: vec![],
        }
    }

    #[test]
    fn roundtrip_preserves_coefficients() {
        let dir = std::env::temp_dir().join("pqlgei_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("fit.tsv");
        let result = tiny_path_result();
        let ids = vec!["v0".to_string(), "v1".to_string(), "v2".to_string()];
        write_fit(&path, &result, None, &ids).unwrap();
        let records = read_fit(&path).unwrap();
        let coef_rows: Vec<&FitRecord> =
            records.iter().filter(|r| r.section == "coef").collect();
        // theta:0, beta:v1, gamma:v1 -- exactly the nonzero entries.
        assert_eq!(coef_rows.len(), 3);
        let beta = coef_rows.iter().find(|r| r.name == "beta:v1").unwrap();
        assert!((beta.value - (-1.2345678901234567e-3)).abs() < 1e-18);
        let theta = coef_rows.iter().find(|r| r.name == "theta:0").unwrap();
        assert_eq!(theta.value, 0.25);
    }

    #[test]
    fn empty_model_writes_summary_only() {
        let dir = std::env::temp_dir().join("pqlgei_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.tsv");
        let mut result = tiny_path_result();
        result.rho_paths[0].points[0].coef = crate::data::Coefficients::zeros(2, 3);
        write_fit(&path, &result, None, &["v0".into(), "v1".into(), "v2".into()]).unwrap();
        let records = read_fit(&path).unwrap();
        assert!(records.iter().all(|r| r.section == "summary"));
        let size = records.iter().find(|r| r.name == "model_size_beta").unwrap();
        assert_eq!(size.value, 0.0);
    }
}
