//! Text and structured renderings of every report.
//!
//! Structured reports are pretty-printed JSON objects whose keys are
//! emitted in sorted order, so two runs on the same inputs are
//! byte-identical. Every report carries `"schema": "hlm-report/1"` and the
//! `command` that produced it. Non-finite numbers are written as `null`.

use std::fmt::Write;

use hlm::data::DeletionReport;
use hlm::diagnostics::{ClusteringSummary, CorrelationMatrix, Descriptive, VarianceExplained};
use hlm::estimator::FitResult;
use hlm::plausible::PooledEffect;
use hlm::recode::RuleAudit;
use serde::Serialize;
use serde_json::{Map, Value};

pub const SCHEMA: &str = "hlm-report/1";

/// Builds `{schema, command, ...fields}`.
pub fn structured(command: &str, fields: Vec<(&str, Value)>) -> String {
    let mut map = Map::new();
    map.insert("schema".into(), SCHEMA.into());
    map.insert("command".into(), command.into());
    for (k, v) in fields {
        map.insert(k.to_string(), v);
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(map)).expect("report values serialize");
    s.push('\n');
    s
}

pub fn value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

/// Left-aligned first column, right-aligned rest.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let ncol = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut s = String::from("  ");
        for (i, c) in cells.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().take(ncol).map(String::as_str).collect());
    }
    out
}

pub fn num(x: f64, dp: usize) -> String {
    if x.is_finite() {
        format!("{x:.dp$}")
    } else if x.is_nan() {
        "-".into()
    } else {
        "inf".into()
    }
}

pub fn pval(p: f64) -> String {
    if p.is_nan() {
        "-".into()
    } else if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn df(d: f64) -> String {
    if d.fract() == 0.0 {
        format!("{d:.0}")
    } else {
        num(d, 1)
    }
}

pub fn deletion(d: &DeletionReport) -> String {
    format!(
        "Listwise deletion: {} of {} rows kept ({} removed), {} of {} groups kept\n",
        d.rows_after,
        d.rows_before,
        d.rows_deleted(),
        d.groups_after,
        d.groups_before
    )
}

pub fn fixed_effects(fit: &FitResult) -> String {
    let rows: Vec<Vec<String>> = fit
        .fixed
        .iter()
        .map(|f| vec![f.name.clone(), num(f.gamma_hat, 3), num(f.se, 3), num(f.t, 2), df(f.df), pval(f.p)])
        .collect();
    table(&["effect", "coefficient", "se", "t", "df", "p"], &rows)
}

pub fn random_effects(fit: &FitResult) -> String {
    let vc = &fit.vc;
    let mut rows = Vec::new();
    for (k, name) in vc.names.iter().enumerate() {
        let var = vc.tau[k][k];
        let mut row = vec![format!("{name} (tau)"), num(var, 3), num(var.max(0.0).sqrt(), 3)];
        match fit.test_for(name) {
            Some(t) => row.extend([num(t.statistic, 2), df(t.df), pval(t.p)]),
            None => row.extend(["-".into(), "-".into(), "-".into()]),
        }
        rows.push(row);
    }
    rows.push(vec![
        "level-1 (sigma2)".into(),
        num(vc.sigma2, 3),
        num(vc.sigma2.sqrt(), 3),
        "-".into(),
        "-".into(),
        "-".into(),
    ]);
    table(&["component", "variance", "sd", "chi2", "df", "p"], &rows)
}

pub fn fit_summary(fit: &FitResult) -> String {
    let mut s = String::new();
    let c = &fit.convergence;
    let _ = writeln!(
        s,
        "Outcome {}, {:?}, N = {}, J = {}",
        fit.outcome, fit.method, fit.n_obs, fit.n_groups
    );
    let _ = writeln!(s, "Fixed effects");
    s.push_str(&fixed_effects(fit));
    let _ = writeln!(s, "Variance components");
    s.push_str(&random_effects(fit));
    if fit.vc.q() > 1 {
        let _ = writeln!(s, "Random-effect covariance");
        let rows: Vec<Vec<String>> = fit
            .vc
            .names
            .iter()
            .zip(&fit.vc.tau)
            .map(|(n, r)| std::iter::once(n.clone()).chain(r.iter().map(|x| num(*x, 3))).collect())
            .collect();
        let mut header = vec![""];
        header.extend(fit.vc.names.iter().map(String::as_str));
        s.push_str(&table(&header, &rows));
    }
    let _ = writeln!(s, "Reliability of the intercept: {}", num(fit.reliability_mean, 3));
    let _ = writeln!(
        s,
        "Deviance {} ({} EM + {} Newton iterations, {}{})",
        num(fit.deviance, 3),
        c.em_iterations,
        c.newton_iterations,
        if c.converged { "converged" } else { "not converged" },
        if c.boundary { ", variance on the boundary" } else { "" }
    );
    s
}

pub fn clustering(c: &ClusteringSummary) -> String {
    let rows = vec![
        vec!["tau00".into(), num(c.tau00, 3)],
        vec!["sigma2".into(), num(c.sigma2, 3)],
        vec!["ICC".into(), num(c.icc_reported, 3)],
        vec!["mean cluster size".into(), num(c.mean_cluster_size, 2)],
        vec!["design effect".into(), num(c.design_effect, 2)],
        vec!["N".into(), num(c.n, 0)],
        vec![
            "effective N".into(),
            format!("{} (rounded {})", num(c.effective_sample_size.value, 1), c.effective_sample_size.rounded),
        ],
    ];
    format!(
        "Clustering\n{}  from the unrounded ICC {}: design effect {}, effective N {}\n",
        table(&["quantity", "value"], &rows),
        num(c.icc, 6),
        num(c.design_effect_unrounded, 2),
        num(c.effective_sample_size_unrounded.value, 1)
    )
}

pub fn variance_explained(v: &VarianceExplained) -> String {
    let pct = |x: f64| format!("{}%", num(100.0 * x, 1));
    let mut s = format!(
        "Variance explained: level-1 {}, level-2 {}, total {}\n",
        pct(v.r2_level1),
        pct(v.r2_level2),
        pct(v.r2_total)
    );
    if v.negative {
        s.push_str("  (a negative share means the component grew relative to the null model)\n");
    }
    s
}

pub fn descriptives(d: &[Descriptive]) -> String {
    let o = |x: Option<f64>| x.map_or("-".into(), |v| num(v, 3));
    let rows: Vec<Vec<String>> = d
        .iter()
        .map(|r| vec![r.variable.clone(), r.n.to_string(), o(r.mean), o(r.sd), o(r.min), o(r.max)])
        .collect();
    format!("Descriptives\n{}", table(&["variable", "n", "mean", "sd", "min", "max"], &rows))
}

pub fn correlations(c: &CorrelationMatrix) -> String {
    let rows: Vec<Vec<String>> = c
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| {
            std::iter::once(v.clone())
                .chain((0..c.variables.len()).map(|j| {
                    match (c.r[i][j], c.p[i][j]) {
                        (Some(r), Some(p)) if i != j => format!("{}{}", num(r, 3), stars(p)),
                        (Some(r), _) => num(r, 3),
                        _ => "-".into(),
                    }
                }))
                .collect()
        })
        .collect();
    let mut header = vec![""];
    header.extend(c.variables.iter().map(String::as_str));
    format!(
        "Correlations (pairwise complete; * p < .05, ** p < .01)\n{}",
        table(&header, &rows)
    )
}

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

pub fn audit(rows_in: usize, audit: &[RuleAudit]) -> String {
    let rows: Vec<Vec<String>> = audit
        .iter()
        .map(|a| {
            vec![
                a.line.to_string(),
                a.kind.to_string(),
                a.output.clone(),
                a.recoded.to_string(),
                a.missing.to_string(),
                a.unrecognized.to_string(),
            ]
        })
        .collect();
    format!(
        "Recoded {rows_in} rows with {} rules\n{}",
        audit.len(),
        table(&["line", "rule", "output", "recoded", "missing", "unrecognized"], &rows)
    )
}

pub fn pooled(effects: &[PooledEffect]) -> String {
    let rows: Vec<Vec<String>> = effects
        .iter()
        .map(|e| {
            let r = &e.rubin;
            vec![
                e.name.clone(),
                num(r.estimate, 3),
                num(r.se, 3),
                num(r.within, 4),
                num(r.between, 4),
                num(r.total, 4),
                df(e.df),
                pval(e.p),
            ]
        })
        .collect();
    table(&["effect", "estimate", "se", "U", "B", "T", "df", "p"], &rows)
}
