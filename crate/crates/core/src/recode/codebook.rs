//! Codebook text format.
//!
//! One rule per line, applied in file order:
//!
//! ```text
//! # comment
//! map      <output> <source> <code>=<score> ... [unmapped=error|missing]
//! location <output> <source> <code>=<score> ... [unmapped=error|missing]
//! sum      <output> <item> <item> ... yes=<code> no=<code>
//! compare  <output> <left> <right>
//! ```
//!
//! Codes containing spaces are double-quoted: `"High school"=3`. A bare
//! `unmapped`, `yes` or `no` key is an option; quote it to use the word as
//! a category code.

use thiserror::Error;

use super::{CategoricalMap, CompositeSumRule, OrdinalCompareRule, UnmappedPolicy};
use crate::textspec::{parse_real, tokenize, Token};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("codebook line {line}: {message}")]
pub struct CodebookError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    Map(CategoricalMap),
    /// Categorical map whose targets are restricted to {1, 0, -1}.
    Location(CategoricalMap),
    Sum(CompositeSumRule),
    Compare(OrdinalCompareRule),
}

impl Rule {
    pub fn output(&self) -> &str {
        match self {
            Rule::Map(m) | Rule::Location(m) => &m.output,
            Rule::Sum(s) => &s.output,
            Rule::Compare(c) => &c.output,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Rule::Map(_) => "map",
            Rule::Location(_) => "location",
            Rule::Sum(_) => "sum",
            Rule::Compare(_) => "compare",
        }
    }

    /// Columns the rule reads.
    pub fn sources(&self) -> Vec<&str> {
        match self {
            Rule::Map(m) | Rule::Location(m) => vec![m.variable.as_str()],
            Rule::Sum(s) => s.items.iter().map(String::as_str).collect(),
            Rule::Compare(c) => vec![c.left.as_str(), c.right.as_str()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Codebook {
    /// Rules with the 1-based line they came from.
    pub rules: Vec<(usize, Rule)>,
}

impl Codebook {
    pub fn parse(text: &str) -> Result<Self, CodebookError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| CodebookError { line, message };
            let tokens = tokenize(raw).map_err(err)?;
            if tokens.is_empty() {
                continue;
            }
            let rule = parse_rule(&tokens).map_err(err)?;
            rules.push((line, rule));
        }
        Ok(Self { rules })
    }

    /// Source columns that hold raw category labels rather than numbers.
    pub fn text_sources(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, rule) in &self.rules {
            if let Rule::Map(m) | Rule::Location(m) = rule {
                if !out.contains(&m.variable) {
                    out.push(m.variable.clone());
                }
            }
            if let Rule::Sum(s) = rule {
                for item in &s.items {
                    if !out.contains(item) {
                        out.push(item.clone());
                    }
                }
            }
        }
        out
    }
}

fn bare<'a>(tokens: &'a [Token], at: usize, what: &str) -> Result<&'a str, String> {
    match tokens.get(at) {
        Some(t) if t.value.is_none() && !t.key.is_empty() => Ok(&t.key),
        Some(t) => Err(format!("expected {what}, found '{}'", t.key)),
        None => Err(format!("missing {what}")),
    }
}

fn parse_rule(tokens: &[Token]) -> Result<Rule, String> {
    let kind = &tokens[0];
    if !kind.is_bare() {
        return Err(format!("unknown rule kind '{}'", kind.key));
    }
    match kind.key.as_str() {
        "map" => parse_map(tokens).map(Rule::Map),
        "location" => {
            let map = parse_map(tokens)?;
            if let Some((code, score)) = map
                .mapping
                .iter()
                .find(|(_, s)| ![-1.0, 0.0, 1.0].contains(s))
            {
                return Err(format!(
                    "location score for '{code}' must be 1, 0 or -1, found {score}"
                ));
            }
            Ok(Rule::Location(map))
        }
        "sum" => parse_sum(tokens).map(Rule::Sum),
        "compare" => {
            let output = bare(tokens, 1, "output name")?;
            let left = bare(tokens, 2, "left column")?;
            let right = bare(tokens, 3, "right column")?;
            if tokens.len() > 4 {
                return Err(format!("unexpected token '{}'", tokens[4].key));
            }
            Ok(Rule::Compare(OrdinalCompareRule {
                output: output.to_string(),
                left: left.to_string(),
                right: right.to_string(),
            }))
        }
        other => Err(format!("unknown rule kind '{other}'")),
    }
}

fn parse_map(tokens: &[Token]) -> Result<CategoricalMap, String> {
    let output = bare(tokens, 1, "output name")?;
    let variable = bare(tokens, 2, "source column")?;
    let mut mapping: Vec<(String, f64)> = Vec::new();
    let mut unmapped = UnmappedPolicy::Error;

    for t in &tokens[3..] {
        if let Some(policy) = t.option("unmapped") {
            unmapped = match policy {
                "error" => UnmappedPolicy::Error,
                "missing" => UnmappedPolicy::Missing,
                p => return Err(format!("unmapped policy must be error or missing, found '{p}'")),
            };
            continue;
        }
        let Some(score) = &t.value else {
            return Err(format!("expected <code>=<score>, found '{}'", t.key));
        };
        let score = parse_real(score, &format!("score for '{}'", t.key))?;
        if mapping.iter().any(|(c, _)| c == &t.key) {
            return Err(format!("duplicate source code '{}'", t.key));
        }
        mapping.push((t.key.clone(), score));
    }
    if mapping.is_empty() {
        return Err("map needs at least one <code>=<score> pair".to_string());
    }
    Ok(CategoricalMap {
        output: output.to_string(),
        variable: variable.to_string(),
        mapping,
        unmapped,
    })
}

fn parse_sum(tokens: &[Token]) -> Result<CompositeSumRule, String> {
    let output = bare(tokens, 1, "output name")?;
    let mut items = Vec::new();
    let mut yes = None;
    let mut no = None;
    for t in &tokens[2..] {
        if let Some(v) = t.option("yes") {
            yes = Some(v.to_string());
        } else if let Some(v) = t.option("no") {
            no = Some(v.to_string());
        } else if t.value.is_none() && !t.key.is_empty() {
            items.push(t.key.clone());
        } else {
            return Err(format!("unexpected token '{}'", t.key));
        }
    }
    if items.is_empty() {
        return Err("sum needs at least one item column".to_string());
    }
    let yes_code = yes.ok_or("sum needs yes=<code>")?;
    let no_code = no.ok_or("sum needs no=<code>")?;
    if yes_code == no_code {
        return Err("yes and no codes must differ".to_string());
    }
    Ok(CompositeSumRule {
        output: output.to_string(),
        items,
        yes_code,
        no_code,
    })
}
