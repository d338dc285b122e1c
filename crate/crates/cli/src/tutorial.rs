//! Model 0 to Model 5 on the simulated survey preset.

use std::fmt::Write;

use hlm::diagnostics::{variance_explained, VarianceExplained};
use hlm::estimator::{fit, Centering, FitResult, ModelSpec};
use hlm::simulator::{simulate, SimConfig};
use serde_json::{json, Value};

use crate::commands::{clustering_of, emit};
use crate::error::CliError;
use crate::report::{self, num, pval, structured, value};
use crate::{Format, TutorialArgs};

const PRESET: &str = "paper-model5";

struct Step {
    label: &'static str,
    description: &'static str,
    spec: ModelSpec,
}

fn level1(spec: ModelSpec, names: &[&str], random: bool) -> ModelSpec {
    names.iter().fold(spec, |s, n| s.with_level1(n, Centering::Grand, random))
}

fn steps(outcome: &str) -> Vec<Step> {
    let base = ModelSpec::intercept_only(outcome);
    let fixed = level1(base.clone(), &["mo", "fa", "hp"], false);
    vec![
        Step {
            label: "Model 0",
            description: "unconditional model",
            spec: base.clone(),
        },
        Step {
            label: "Model 1",
            description: "mo and fa, grand-mean centered, fixed slopes",
            spec: level1(base.clone(), &["mo", "fa"], false),
        },
        Step {
            label: "Model 2",
            description: "adds hp",
            spec: fixed.clone(),
        },
        Step {
            label: "Model 3",
            description: "slopes of mo, fa and hp vary across schools",
            spec: level1(base, &["mo", "fa", "hp"], true),
        },
        Step {
            label: "Model 4",
            description: "finalized level-1 model, slopes fixed",
            spec: fixed.clone(),
        },
        Step {
            label: "Model 5",
            description: "stueco, schlo and schrc predict the intercept",
            spec: fixed.with_level2("stueco").with_level2("schlo").with_level2("schrc"),
        },
    ]
}

fn p_clause(p: f64) -> String {
    let v = pval(p);
    match v.strip_prefix('<') {
        Some(rest) => format!("< {rest}"),
        None => format!("= {v}"),
    }
}

fn pct(x: f64) -> String {
    format!("{}%", num(100.0 * x, 1))
}

fn narrate(s: &mut String, step: &Step, f: &FitResult, explained: Option<&VarianceExplained>) {
    let _ = writeln!(s, "\n{}: {}", step.label, step.description);
    s.push_str(&report::fixed_effects(f));
    s.push_str(&report::random_effects(f));
    let _ = writeln!(s, "  reliability of the intercept {}", num(f.reliability_mean, 3));
    for e in f.fixed.iter().skip(1) {
        let verdict = if e.p < 0.05 { "significant" } else { "not significant" };
        let _ = writeln!(
            s,
            "  {}: gamma = {}, SE = {}, p {} ({verdict})",
            e.name,
            num(e.gamma_hat, 2),
            num(e.se, 2),
            p_clause(e.p)
        );
    }
    for t in f.vc_tests.iter().flatten().skip(1) {
        let verdict = if t.p > 0.05 {
            "does not vary across schools at the 5% level; fix it"
        } else {
            "varies across schools"
        };
        let _ = writeln!(s, "  slope of {} {verdict} (chi2 = {}, p {})", t.effect, num(t.statistic, 2), p_clause(t.p));
    }
    if f.convergence.boundary {
        let _ = writeln!(s, "  the random-effect covariance is singular (on the boundary of the parameter space)");
    }
    if let Some(v) = explained {
        let _ = writeln!(
            s,
            "  relative to Model 0: {} of level-1, {} of level-2 and {} of total variance explained",
            pct(v.r2_level1),
            pct(v.r2_level2),
            pct(v.r2_total)
        );
    }
}

pub fn run(a: TutorialArgs) -> Result<(), CliError> {
    let mut cfg = SimConfig::preset(PRESET).expect("built-in preset");
    if let Some(seed) = a.seed {
        cfg = cfg.with_seed(seed);
    }
    let ds = simulate(&cfg)?;
    let steps = steps(&cfg.outcome);
    let fits: Vec<FitResult> = steps.iter().map(|st| fit(&st.spec, &ds)).collect::<Result<_, _>>()?;
    let null = &fits[0];
    let explained: Vec<Option<VarianceExplained>> = fits
        .iter()
        .enumerate()
        .map(|(i, f)| if i == 0 { Ok(None) } else { variance_explained(null, f).map(Some) })
        .collect::<Result<_, _>>()?;
    let clustering = clustering_of(null)?;

    let rendered = match a.output.format {
        Format::Text => {
            let mut s = format!(
                "Simulated {} schools and {} students (preset {PRESET}, seed {}); outcome {}\n\n",
                null.n_groups, null.n_obs, cfg.seed, cfg.outcome
            );
            s.push_str(&report::clustering(&clustering));
            let _ = writeln!(
                s,
                "  {} of the outcome variance lies between schools, so a two-level model is needed",
                pct(clustering.icc)
            );
            for ((st, f), v) in steps.iter().zip(&fits).zip(&explained) {
                narrate(&mut s, st, f, v.as_ref());
            }
            s
        }
        Format::Structured => {
            let models: Vec<Value> = steps
                .iter()
                .zip(&fits)
                .zip(&explained)
                .map(|((st, f), v)| {
                    json!({
                        "label": st.label,
                        "description": st.description,
                        "fit": value(f),
                        "variance_explained": value(v),
                    })
                })
                .collect();
            structured(
                "tutorial",
                vec![
                    ("preset", PRESET.into()),
                    ("seed", cfg.seed.into()),
                    ("clustering", value(&clustering)),
                    ("models", Value::Array(models)),
                ],
            )
        }
    };
    emit(a.output.out.as_deref(), rendered.as_bytes())
}
