use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hlm::data::{listwise_delete, load_csv, Column, Dataset, LoadOptions};
use hlm::diagnostics::{clustering_summary, correlations, descriptives, variance_explained, ClusteringSummary};
use hlm::estimator::{fit, FitResult, ModelSpec};
use hlm::plausible::{fit_average_pv, fit_pooled, PlausibleValueSet};
use hlm::recode::{apply_codebook, Codebook};
use hlm::simulator::{simulate, SimConfig};
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;
use crate::report::{self, structured, value};
use crate::{Command, DiagnoseArgs, FitArgs, Format, PoolArgs, RecodeArgs, SimulateArgs};

/// Inputs of one invocation, echoed in structured reports.
#[derive(Debug, Default, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub data: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub null_model: Option<PathBuf>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunManifest {
    /// Every referenced input path must exist.
    fn check_inputs(&self) -> Result<(), CliError> {
        for p in [&self.data, &self.codebook, &self.model, &self.null_model].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::input(format!("input file not found: {}", p.display())));
            }
        }
        Ok(())
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Recode(a) => recode(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Pool(a) => pool(a),
        Command::Tutorial(a) => crate::tutorial::run(a),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

pub fn emit(out: Option<&Path>, content: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, content).map_err(|e| CliError::input(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(content)
            .map_err(|e| CliError::input(format!("cannot write to standard output: {e}"))),
    }
}

fn load_spec(path: &Path) -> Result<ModelSpec, CliError> {
    Ok(ModelSpec::parse(&read_text(path)?)?)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty()).map(str::to_string).collect()
}

fn cluster_for(flag: &Option<String>, spec: Option<&ModelSpec>) -> String {
    flag.clone()
        .or_else(|| spec.and_then(|s| s.cluster.clone()))
        .unwrap_or_else(|| "school".to_string())
}

/// Variables of both models, so the two fits share one sample.
fn model_variables(spec: &ModelSpec, null: Option<&ModelSpec>) -> Vec<String> {
    let mut vars = spec.variables();
    for v in null.into_iter().flat_map(ModelSpec::variables) {
        if !vars.contains(&v) {
            vars.push(v);
        }
    }
    vars
}

/// Clustering block from a fit's intercept variance and group sizes.
pub fn clustering_of(fit: &FitResult) -> Result<ClusteringSummary, CliError> {
    let n = fit.n_obs as f64;
    Ok(clustering_summary(fit.vc.tau00(), fit.vc.sigma2, n / fit.n_groups as f64, n)?)
}

fn recode(a: RecodeArgs) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: "recode",
        data: Some(a.data.clone()),
        codebook: Some(a.codebook.clone()),
        format: Some(a.format),
        out: Some(a.out.clone()),
        ..RunManifest::default()
    };
    manifest.check_inputs()?;
    let codebook = Codebook::parse(&read_text(&a.codebook)?)?;
    let opts = LoadOptions {
        text_columns: codebook.text_sources(),
        ..LoadOptions::default()
    };
    let ds = load_csv(&a.data, &[], &a.cluster, &opts)?;
    let (recoded, audit) = apply_codebook(&ds, &codebook)?;
    let mut csv = Vec::new();
    recoded.write_csv(&mut csv)?;
    let rendered = match a.format {
        Format::Text => report::audit(ds.n_rows(), &audit),
        Format::Structured => structured(
            "recode",
            vec![
                ("manifest", value(&manifest)),
                ("rows", ds.n_rows().into()),
                ("rules", value(&audit)),
            ],
        ),
    };
    emit(Some(&a.out), &csv)?;
    emit(None, rendered.as_bytes())
}

fn fit_cmd(a: FitArgs) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: "fit",
        data: Some(a.data.clone()),
        model: Some(a.model.clone()),
        null_model: a.null_model.clone(),
        format: Some(a.output.format),
        out: a.output.out.clone(),
        ..RunManifest::default()
    };
    manifest.check_inputs()?;
    let spec = load_spec(&a.model)?;
    let null_spec = a.null_model.as_deref().map(load_spec).transpose()?;
    if let Some(n) = &null_spec {
        if n.outcome != spec.outcome {
            return Err(CliError::input(format!(
                "null model outcome '{}' differs from model outcome '{}'",
                n.outcome, spec.outcome
            )));
        }
    }
    let ds = load_csv(&a.data, &[], &cluster_for(&a.cluster, Some(&spec)), &LoadOptions::default())?;
    let (data, deletion) = listwise_delete(&ds, &model_variables(&spec, null_spec.as_ref()))?;
    let model = fit(&spec, &data)?;
    let null = null_spec.as_ref().map(|n| fit(n, &data)).transpose()?;
    let explained = null.as_ref().map(|n| variance_explained(n, &model)).transpose()?;
    let unconditional = null.as_ref().or((spec.n_fixed() == 1 && spec.n_random() == 1).then_some(&model));
    let clustering = unconditional.map(clustering_of).transpose()?;

    let rendered = match a.output.format {
        Format::Text => {
            let mut s = report::deletion(&deletion);
            s.push_str(&report::fit_summary(&model));
            if let Some(c) = &clustering {
                s.push_str(&report::clustering(c));
            }
            if let Some(v) = &explained {
                s.push_str(&report::variance_explained(v));
            }
            s
        }
        Format::Structured => structured(
            "fit",
            vec![
                ("manifest", value(&manifest)),
                ("deletion", value(&deletion)),
                ("fit", value(&model)),
                ("null_fit", value(&null)),
                ("clustering", value(&clustering)),
                ("variance_explained", value(&explained)),
            ],
        ),
    };
    emit(a.output.out.as_deref(), rendered.as_bytes())
}

fn numeric_columns(ds: &Dataset) -> Vec<String> {
    ds.names()
        .filter(|n| *n != ds.cluster_column() && matches!(ds.column(n), Ok(Column::Numeric(_))))
        .map(str::to_string)
        .collect()
}

fn diagnose(a: DiagnoseArgs) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: "diagnose",
        data: a.data.clone(),
        model: a.model.clone(),
        null_model: a.null_model.clone(),
        format: Some(a.output.format),
        out: a.output.out.clone(),
        ..RunManifest::default()
    };
    manifest.check_inputs()?;
    let supplied = [a.tau00, a.sigma2, a.nbar, a.n_total];
    let components = match supplied {
        [Some(t), Some(s), Some(nb), Some(n)] => Some(clustering_summary(t, s, nb, n)?),
        [None, None, None, None] => None,
        _ => return Err(CliError::input("--tau00, --sigma2, --nbar and --n-total go together")),
    };
    if a.data.is_none() && components.is_none() {
        return Err(CliError::input("nothing to diagnose: supply --data or the variance components"));
    }
    if a.data.is_none() && (a.model.is_some() || a.vars.is_some()) {
        return Err(CliError::input("--model and --vars need --data"));
    }
    if a.null_model.is_some() && a.model.is_none() {
        return Err(CliError::input("--null-model needs --model"));
    }

    let mut fields: Vec<(&str, Value)> = vec![("manifest", value(&manifest))];
    let mut text = String::new();
    let mut clustering = components;
    let mut explained = None;
    if let Some(path) = &a.data {
        let spec = a.model.as_deref().map(load_spec).transpose()?;
        let null_spec = a.null_model.as_deref().map(load_spec).transpose()?;
        let ds = load_csv(path, &[], &cluster_for(&a.cluster, spec.as_ref()), &LoadOptions::default())?;
        let vars = match &a.vars {
            Some(v) => split_list(v),
            None => numeric_columns(&ds),
        };
        if vars.is_empty() {
            return Err(CliError::input("empty variable list"));
        }
        let desc = descriptives(&ds, &vars)?;
        let corr = correlations(&ds, &vars)?;
        text.push_str(&report::descriptives(&desc));
        text.push_str(&report::correlations(&corr));
        fields.push(("descriptives", value(&desc)));
        fields.push(("correlations", value(&corr)));

        if let Some(spec) = &spec {
            let (data, _) = listwise_delete(&ds, &model_variables(spec, null_spec.as_ref()))?;
            let model = fit(spec, &data)?;
            let null = null_spec.as_ref().map(|n| fit(n, &data)).transpose()?;
            if clustering.is_none() {
                clustering = Some(clustering_of(null.as_ref().unwrap_or(&model))?);
            }
            explained = null.as_ref().map(|n| variance_explained(n, &model)).transpose()?;
        }
    }
    if let Some(c) = &clustering {
        text.push_str(&report::clustering(c));
    }
    if let Some(v) = &explained {
        text.push_str(&report::variance_explained(v));
    }
    fields.push(("clustering", value(&clustering)));
    fields.push(("variance_explained", value(&explained)));
    let rendered = match a.output.format {
        Format::Text => text,
        Format::Structured => structured("diagnose", fields),
    };
    emit(a.output.out.as_deref(), rendered.as_bytes())
}

fn simulate_cmd(a: SimulateArgs) -> Result<(), CliError> {
    if let Some(c) = &a.config {
        if !c.is_file() {
            return Err(CliError::input(format!("input file not found: {}", c.display())));
        }
    }
    let mut cfg = match (&a.preset, &a.config) {
        (Some(name), _) => SimConfig::preset(name).ok_or_else(|| {
            CliError::input(format!(
                "unknown preset '{name}' (available: {})",
                SimConfig::preset_names().join(", ")
            ))
        })?,
        (None, Some(path)) => SimConfig::parse(&read_text(path)?)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    if let Some(seed) = a.seed {
        cfg = cfg.with_seed(seed);
    }
    let ds = simulate(&cfg)?;
    let mut csv = Vec::new();
    ds.write_csv(&mut csv)?;
    emit(a.out.as_deref(), &csv)
}

fn pool(a: PoolArgs) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: "pool",
        data: Some(a.data.clone()),
        model: Some(a.model.clone()),
        format: Some(a.output.format),
        out: a.output.out.clone(),
        ..RunManifest::default()
    };
    manifest.check_inputs()?;
    let spec = load_spec(&a.model)?;
    let pvs = PlausibleValueSet::new(split_list(&a.pv))?;
    let ds = load_csv(&a.data, &[], &cluster_for(&a.cluster, Some(&spec)), &LoadOptions::default())?;
    let rendered = if a.average_pv {
        let (result, deletion) = fit_average_pv(&spec, &ds, &pvs)?;
        match a.output.format {
            Format::Text => {
                let mut s = format!(
                    "Non-canonical mode: one fit on the row mean of {} (no between-imputation variance)\n",
                    pvs.columns().join(", ")
                );
                s.push_str(&report::deletion(&deletion));
                s.push_str(&report::fit_summary(&result));
                s
            }
            Format::Structured => structured(
                "pool",
                vec![
                    ("manifest", value(&manifest)),
                    ("mode", "average-pv".into()),
                    ("canonical", false.into()),
                    ("plausible_values", value(&pvs.columns())),
                    ("deletion", value(&deletion)),
                    ("fit", value(&result)),
                ],
            ),
        }
    } else {
        let pooled = fit_pooled(&spec, &ds, &pvs)?;
        match a.output.format {
            Format::Text => {
                let mut s = format!(
                    "Rubin's rules over M = {} plausible values: {}\n",
                    pvs.m(),
                    pvs.columns().join(", ")
                );
                s.push_str(&report::deletion(&pooled.deletion));
                s.push_str("Pooled fixed effects (T = U + (1 + 1/M) B)\n");
                s.push_str(&report::pooled(&pooled.fixed));
                let vc = &pooled.vc_mean;
                s.push_str(&format!(
                    "Mean variance components: tau00 {}, sigma2 {}\n",
                    report::num(vc.tau00(), 3),
                    report::num(vc.sigma2, 3)
                ));
                s
            }
            Format::Structured => structured(
                "pool",
                vec![
                    ("manifest", value(&manifest)),
                    ("mode", "rubin".into()),
                    ("canonical", true.into()),
                    ("result", value(&pooled)),
                ],
            ),
        }
    };
    emit(a.output.out.as_deref(), rendered.as_bytes())
}
