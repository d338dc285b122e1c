//! Model definitions and their text format.
//!
//! ```text
//! outcome mat
//! cluster school                      # optional, used by loaders
//! level1 mo center=grand random=no    # center=grand|none, random=yes|no
//! level2 stueco
//! method reml                         # reml|ml
//! tol 1e-8
//! maxiter 1000
//! df hlm                              # hlm|residual
//! ```

use serde::Serialize;
use thiserror::Error;

use crate::textspec::{parse_count, parse_real, parse_yes_no, tokenize, Token};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("model spec line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid model spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    #[default]
    Reml,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    #[default]
    Grand,
    None,
}

/// Degrees-of-freedom rule for fixed-effect t tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DfConvention {
    /// Intercept and level-2 coefficients: J - S - 1. Fixed level-1
    /// slopes: N - J - K. Means of random slopes: J - 1.
    #[default]
    Hlm,
    /// N - p for every coefficient.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Level1Term {
    pub name: String,
    pub centering: Centering,
    pub random_slope: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub outcome: String,
    pub cluster: Option<String>,
    pub level1: Vec<Level1Term>,
    /// Level-2 predictors of the intercept, entered uncentered.
    pub level2: Vec<String>,
    pub method: Method,
    /// Relative log-likelihood change at convergence.
    pub tol: f64,
    pub max_iter: usize,
    pub df: DfConvention,
}

impl ModelSpec {
    /// Unconditional model: random intercept only.
    pub fn intercept_only(outcome: &str) -> Self {
        Self {
            outcome: outcome.to_string(),
            cluster: None,
            level1: Vec::new(),
            level2: Vec::new(),
            method: Method::Reml,
            tol: 1e-8,
            max_iter: 1000,
            df: DfConvention::Hlm,
        }
    }

    pub fn with_level1(mut self, name: &str, centering: Centering, random_slope: bool) -> Self {
        self.level1.push(Level1Term {
            name: name.to_string(),
            centering,
            random_slope,
        });
        self
    }

    pub fn with_level2(mut self, name: &str) -> Self {
        self.level2.push(name.to_string());
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// Number of random effects: intercept plus flagged slopes.
    pub fn n_random(&self) -> usize {
        1 + self.level1.iter().filter(|t| t.random_slope).count()
    }

    pub fn n_fixed(&self) -> usize {
        1 + self.level1.len() + self.level2.len()
    }

    /// Outcome and every predictor, in declaration order.
    pub fn variables(&self) -> Vec<String> {
        let mut v = vec![self.outcome.clone()];
        v.extend(self.predictors().map(str::to_string));
        v
    }

    pub fn predictors(&self) -> impl Iterator<Item = &str> {
        self.level1
            .iter()
            .map(|t| t.name.as_str())
            .chain(self.level2.iter().map(String::as_str))
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.outcome.is_empty() {
            return Err(SpecError::Invalid("outcome is required".into()));
        }
        let mut seen: Vec<&str> = Vec::new();
        for p in self.predictors() {
            if p == self.outcome {
                return Err(SpecError::Invalid(format!(
                    "outcome '{p}' is also a predictor"
                )));
            }
            if seen.contains(&p) {
                return Err(SpecError::Invalid(format!("predictor '{p}' appears twice")));
            }
            seen.push(p);
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SpecError::Invalid("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(SpecError::Invalid("maxiter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut spec = ModelSpec::intercept_only("");
        let mut have_outcome = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| SpecError::Parse { line, message };
            let tokens = tokenize(raw).map_err(err)?;
            if tokens.is_empty() {
                continue;
            }
            let clause = &tokens[0];
            if !clause.is_bare() {
                return Err(err(format!("unknown clause '{}'", clause.key)));
            }
            let args = &tokens[1..];
            match clause.key.as_str() {
                "outcome" => {
                    if have_outcome {
                        return Err(err("outcome given twice".into()));
                    }
                    spec.outcome = single_name(args).map_err(err)?;
                    have_outcome = true;
                }
                "cluster" => spec.cluster = Some(single_name(args).map_err(err)?),
                "level1" => spec.level1.push(parse_level1(args).map_err(err)?),
                "level2" => spec.level2.push(single_name(args).map_err(err)?),
                "method" => {
                    spec.method = match single_name(args).map_err(err)?.as_str() {
                        "reml" | "REML" => Method::Reml,
                        "ml" | "ML" => Method::Ml,
                        m => return Err(err(format!("method must be reml or ml, found '{m}'"))),
                    }
                }
                "tol" => {
                    let v = single_name(args).map_err(err)?;
                    spec.tol = parse_real(&v, "tol").map_err(err)?;
                }
                "maxiter" => {
                    let v = single_name(args).map_err(err)?;
                    spec.max_iter = parse_count(&v, "maxiter").map_err(err)?;
                }
                "df" => {
                    spec.df = match single_name(args).map_err(err)?.as_str() {
                        "hlm" => DfConvention::Hlm,
                        "residual" => DfConvention::Residual,
                        d => return Err(err(format!("df must be hlm or residual, found '{d}'"))),
                    }
                }
                other => return Err(err(format!("unknown clause '{other}'"))),
            }
        }
        if !have_outcome {
            return Err(SpecError::Invalid("outcome is required".into()));
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn single_name(args: &[Token]) -> Result<String, String> {
    match args {
        [t] if t.value.is_none() && !t.key.is_empty() => Ok(t.key.clone()),
        [] => Err("missing argument".into()),
        [t] => Err(format!("unexpected '{}='", t.key)),
        _ => Err(format!("expected one argument, found {}", args.len())),
    }
}

fn parse_level1(args: &[Token]) -> Result<Level1Term, String> {
    let Some((name, opts)) = args.split_first() else {
        return Err("level1 needs a predictor name".into());
    };
    if name.value.is_some() || name.key.is_empty() {
        return Err(format!("expected predictor name, found '{}'", name.key));
    }
    let mut term = Level1Term {
        name: name.key.clone(),
        centering: Centering::Grand,
        random_slope: false,
    };
    for opt in opts {
        if let Some(c) = opt.option("center") {
            term.centering = match c {
                "grand" => Centering::Grand,
                "none" => Centering::None,
                _ => return Err(format!("center must be grand or none, found '{c}'")),
            };
        } else if let Some(r) = opt.option("random") {
            term.random_slope = parse_yes_no(r, "random")?;
        } else {
            return Err(format!("unknown level1 option '{}'", opt.key));
        }
    }
    Ok(term)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FINAL_MODEL: &str = "\
outcome mat
cluster school
level1 mo center=grand random=no
level1 fa center=grand random=no
level1 hp center=grand random=no
level2 stueco
level2 schlo
level2 schrc
method reml
tol 1e-8
maxiter 1000
";

    #[test]
    fn parses_final_model() {
        let spec = ModelSpec::parse(FINAL_MODEL).unwrap();
        assert_eq!(spec.outcome, "mat");
        assert_eq!(spec.cluster.as_deref(), Some("school"));
        assert_eq!(spec.level1.len(), 3);
        assert_eq!(spec.level2, vec!["stueco", "schlo", "schrc"]);
        assert_eq!(spec.n_fixed(), 7);
        assert_eq!(spec.n_random(), 1);
        assert_eq!(spec.method, Method::Reml);
    }

    #[test]
    fn defaults_and_options() {
        let spec = ModelSpec::parse("outcome y\nlevel1 x random=yes\nmethod ml\ndf residual").unwrap();
        assert_eq!(spec.level1[0].centering, Centering::Grand);
        assert!(spec.level1[0].random_slope);
        assert_eq!(spec.n_random(), 2);
        assert_eq!(spec.method, Method::Ml);
        assert_eq!(spec.df, DfConvention::Residual);
        assert_eq!(spec.tol, 1e-8);
        assert_eq!(spec.max_iter, 1000);
    }

    fn parse_line(text: &str) -> Option<usize> {
        match ModelSpec::parse(text) {
            Err(SpecError::Parse { line, .. }) => Some(line),
            _ => None,
        }
    }

    #[test]
    fn parse_errors_name_lines() {
        assert_eq!(parse_line("outcome y\nlevel3 z"), Some(2));
        assert_eq!(parse_line("outcome y\nlevel1 x center=group"), Some(2));
        assert_eq!(parse_line("outcome y\nlevel1 x random=maybe"), Some(2));
        assert_eq!(parse_line("outcome y\nlevel1 x colour=red"), Some(2));
        assert_eq!(parse_line("outcome y\ntol abc"), Some(2));
        assert_eq!(parse_line("outcome y\nmaxiter -3"), Some(2));
        assert_eq!(parse_line("outcome y\nmethod bayes"), Some(2));
        assert_eq!(parse_line("outcome y z"), Some(1));
        assert_eq!(parse_line("outcome y\noutcome z"), Some(2));
    }

    #[test]
    fn invariants_enforced() {
        assert!(matches!(ModelSpec::parse("level2 w"), Err(SpecError::Invalid(_))));
        assert!(matches!(
            ModelSpec::parse("outcome y\nlevel1 y"),
            Err(SpecError::Invalid(_))
        ));
        assert!(matches!(
            ModelSpec::parse("outcome y\nlevel1 x\nlevel2 x"),
            Err(SpecError::Invalid(_))
        ));
        assert!(matches!(
            ModelSpec::parse("outcome y\ntol 0"),
            Err(SpecError::Invalid(_))
        ));
        assert!(matches!(
            ModelSpec::parse("outcome y\nmaxiter 0"),
            Err(SpecError::Invalid(_))
        ));
    }
}
