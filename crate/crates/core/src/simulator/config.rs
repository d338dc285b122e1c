//! Simulation configuration and its text format.
//!
//! ```text
//! outcome mat
//! cluster school
//! groups 140
//! size 33                     # or: sizes 30,31,35,...
//! intercept 609.14
//! level1 mo coef=6.21 mean=2.5 sd=1.3 random=no
//! level2 stueco coef=19.41 dist=categorical p=0.28,0.40,0.32
//! level2 schrc coef=0.2 dist=gaussian mean=66.24 sd=40
//! tau 2238.6                  # q x q, row-major
//! sigma2 8195.39
//! seed 7
//! ```

use serde::Serialize;
use thiserror::Error;

use crate::textspec::{parse_count, parse_real, parse_yes_no, tokenize, Token};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("simulation config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid simulation config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GroupSizes {
    Constant(usize),
    PerGroup(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Level1Generator {
    pub name: String,
    pub coef: f64,
    pub mean: f64,
    pub sd: f64,
    /// Adds a random slope; its covariance row in `tau` follows declaration
    /// order among the random slopes.
    pub random: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Level2Distribution {
    Gaussian { mean: f64, sd: f64 },
    /// Values -1, 0, 1 with the given probabilities.
    Categorical { p: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Level2Generator {
    pub name: String,
    pub coef: f64,
    pub dist: Level2Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub outcome: String,
    pub cluster: String,
    pub n_groups: usize,
    pub sizes: GroupSizes,
    pub intercept: f64,
    pub level1: Vec<Level1Generator>,
    pub level2: Vec<Level2Generator>,
    /// Random-effect covariance, intercept first.
    pub tau: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Random-intercept model with no predictors.
    pub fn intercept_only(n_groups: usize, size: usize, intercept: f64, tau00: f64, sigma2: f64, seed: u64) -> Self {
        Self {
            outcome: "y".to_string(),
            cluster: "school".to_string(),
            n_groups,
            sizes: GroupSizes::Constant(size),
            intercept,
            level1: Vec::new(),
            level2: Vec::new(),
            tau: vec![vec![tau00]],
            sigma2,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Unconditional model with the school-level and student-level
    /// variances of the Taiwan grade-8 mathematics analysis.
    pub fn model0_preset() -> Self {
        let mut cfg = Self::intercept_only(140, 33, 609.14, 2238.6, 8195.39, 0);
        cfg.outcome = "mat".to_string();
        cfg
    }

    /// Final means-as-outcomes model: three grand-centered student
    /// predictors and three school predictors of the intercept. Residual
    /// variances are the unconditional ones reduced by 5% (student) and
    /// 44.8% (school).
    pub fn model5_preset() -> Self {
        let l1 = |name: &str, coef, mean, sd| Level1Generator {
            name: name.to_string(),
            coef,
            mean,
            sd,
            random: false,
        };
        let l2 = |name: &str, coef, dist| Level2Generator {
            name: name.to_string(),
            coef,
            dist,
        };
        Self {
            outcome: "mat".to_string(),
            cluster: "school".to_string(),
            n_groups: 140,
            sizes: GroupSizes::Constant(33),
            intercept: 597.93,
            level1: vec![l1("mo", 6.21, 2.5, 1.3), l1("fa", 7.32, 2.6, 1.4), l1("hp", 9.09, 4.53, 1.2)],
            level2: vec![
                l2("stueco", 19.41, Level2Distribution::Categorical { p: [0.28, 0.40, 0.32] }),
                l2("schlo", 23.41, Level2Distribution::Categorical { p: [0.34, 0.41, 0.25] }),
                l2("schrc", 0.2, Level2Distribution::Gaussian { mean: 66.24, sd: 40.0 }),
            ],
            tau: vec![vec![2238.6 * (1.0 - 0.448)]],
            sigma2: 8195.39 * 0.95,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-model0" => Some(Self::model0_preset()),
            "paper-model5" => Some(Self::model5_preset()),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["paper-model0", "paper-model5"]
    }

    pub fn n_random(&self) -> usize {
        1 + self.level1.iter().filter(|g| g.random).count()
    }

    /// Fixed effects in estimator column order: intercept, level-1,
    /// level-2.
    pub fn gamma(&self) -> Vec<f64> {
        std::iter::once(self.intercept)
            .chain(self.level1.iter().map(|g| g.coef))
            .chain(self.level2.iter().map(|g| g.coef))
            .collect()
    }

    pub fn group_size(&self, j: usize) -> usize {
        match &self.sizes {
            GroupSizes::Constant(n) => *n,
            GroupSizes::PerGroup(v) => v[j],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.n_groups < 1 {
            return bad("groups must be at least 1".into());
        }
        match &self.sizes {
            GroupSizes::Constant(0) => return bad("group size must be at least 1".into()),
            GroupSizes::PerGroup(v) if v.len() != self.n_groups => {
                return bad(format!("{} sizes given for {} groups", v.len(), self.n_groups))
            }
            GroupSizes::PerGroup(v) if v.contains(&0) => return bad("group size must be at least 1".into()),
            _ => {}
        }
        let mut names = vec![self.outcome.as_str(), self.cluster.as_str()];
        names.extend(self.level1.iter().map(|g| g.name.as_str()));
        names.extend(self.level2.iter().map(|g| g.name.as_str()));
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return bad(format!("column name '{n}' used twice"));
            }
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad("sigma2 must be a finite value ≥ 0".into());
        }
        if !self.intercept.is_finite() {
            return bad("intercept must be finite".into());
        }
        for g in &self.level1 {
            if !(g.sd >= 0.0) || !g.mean.is_finite() || !g.coef.is_finite() {
                return bad(format!("level1 '{}' needs finite coef, mean and sd ≥ 0", g.name));
            }
        }
        for g in &self.level2 {
            if !g.coef.is_finite() {
                return bad(format!("level2 '{}' needs a finite coef", g.name));
            }
            match g.dist {
                Level2Distribution::Gaussian { mean, sd } if !(sd >= 0.0) || !mean.is_finite() => {
                    return bad(format!("level2 '{}' needs finite mean and sd ≥ 0", g.name));
                }
                Level2Distribution::Categorical { p }
                    if p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 =>
                {
                    return bad(format!("level2 '{}' probabilities must be ≥ 0 and sum to 1", g.name));
                }
                _ => {}
            }
        }

        let q = self.n_random();
        if self.tau.len() != q || self.tau.iter().any(|r| r.len() != q) {
            return bad(format!("tau must be {q} x {q}"));
        }
        let t = nalgebra::DMatrix::from_fn(q, q, |i, j| self.tau[i][j]);
        if t.iter().any(|v| !v.is_finite()) {
            return bad("tau must be finite".into());
        }
        let scale = t.amax().max(f64::MIN_POSITIVE);
        if (&t - t.transpose()).amax() > 1e-12 * scale || t.symmetric_eigenvalues().min() < -1e-10 * scale {
            return bad("tau is not positive semi-definite".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = Self::intercept_only(0, 0, 0.0, 0.0, 0.0, 0);
        let mut tau: Option<Vec<f64>> = None;
        let mut have = (false, false, false); // groups, sizes, sigma2
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| SimError::Parse { line, message };
            let tokens = tokenize(raw).map_err(err)?;
            let Some((clause, args)) = tokens.split_first() else {
                continue;
            };
            if !clause.is_bare() {
                return Err(err(format!("unknown clause '{}'", clause.key)));
            }
            match clause.key.as_str() {
                "outcome" => cfg.outcome = single(args).map_err(err)?,
                "cluster" => cfg.cluster = single(args).map_err(err)?,
                "groups" => {
                    cfg.n_groups = parse_count(&single(args).map_err(err)?, "groups").map_err(err)?;
                    have.0 = true;
                }
                "size" => {
                    cfg.sizes = GroupSizes::Constant(parse_count(&single(args).map_err(err)?, "size").map_err(err)?);
                    have.1 = true;
                }
                "sizes" => {
                    let v = list(args)
                        .map_err(err)?
                        .iter()
                        .map(|s| parse_count(s, "sizes"))
                        .collect::<Result<_, _>>()
                        .map_err(err)?;
                    cfg.sizes = GroupSizes::PerGroup(v);
                    have.1 = true;
                }
                "intercept" => cfg.intercept = parse_real(&single(args).map_err(err)?, "intercept").map_err(err)?,
                "level1" => cfg.level1.push(parse_level1(args).map_err(err)?),
                "level2" => cfg.level2.push(parse_level2(args).map_err(err)?),
                "tau" => {
                    let v = list(args)
                        .map_err(err)?
                        .iter()
                        .map(|s| parse_real(s, "tau"))
                        .collect::<Result<_, _>>()
                        .map_err(err)?;
                    tau = Some(v);
                }
                "sigma2" => {
                    cfg.sigma2 = parse_real(&single(args).map_err(err)?, "sigma2").map_err(err)?;
                    have.2 = true;
                }
                "seed" => {
                    let s = single(args).map_err(err)?;
                    cfg.seed = s.parse().map_err(|_| err(format!("seed must be a non-negative integer, found '{s}'")))?;
                }
                other => return Err(err(format!("unknown clause '{other}'"))),
            }
        }
        for (ok, what) in [(have.0, "groups"), (have.1, "size or sizes"), (have.2, "sigma2")] {
            if !ok {
                return Err(SimError::Invalid(format!("{what} is required")));
            }
        }
        let q = cfg.n_random();
        let values = tau.ok_or_else(|| SimError::Invalid("tau is required".into()))?;
        if values.len() != q * q {
            return Err(SimError::Invalid(format!(
                "tau needs {} values for {q} random effects, found {}",
                q * q,
                values.len()
            )));
        }
        cfg.tau = values.chunks(q).map(<[f64]>::to_vec).collect();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn single(args: &[Token]) -> Result<String, String> {
    match args {
        [t] if t.is_bare() && !t.key.is_empty() => Ok(t.key.clone()),
        [] => Err("missing argument".into()),
        [t] => Err(format!("unexpected '{}='", t.key)),
        _ => Err(format!("expected one argument, found {}", args.len())),
    }
}

/// Values given either space- or comma-separated.
fn list(args: &[Token]) -> Result<Vec<String>, String> {
    if args.is_empty() {
        return Err("missing values".into());
    }
    let mut out = Vec::new();
    for t in args {
        if !t.is_bare() {
            return Err(format!("unexpected '{}='", t.key));
        }
        out.extend(t.key.split(',').filter(|s| !s.is_empty()).map(str::to_string));
    }
    Ok(out)
}

fn name_and_options(args: &[Token]) -> Result<(&str, &[Token]), String> {
    match args.split_first() {
        Some((n, rest)) if n.is_bare() && !n.key.is_empty() => Ok((&n.key, rest)),
        Some((n, _)) => Err(format!("expected predictor name, found '{}'", n.key)),
        None => Err("missing predictor name".into()),
    }
}

fn parse_level1(args: &[Token]) -> Result<Level1Generator, String> {
    let (name, opts) = name_and_options(args)?;
    let mut g = Level1Generator {
        name: name.to_string(),
        coef: 0.0,
        mean: 0.0,
        sd: 1.0,
        random: false,
    };
    for o in opts {
        match (o.key.as_str(), o.value.as_deref()) {
            ("coef", Some(v)) => g.coef = parse_real(v, "coef")?,
            ("mean", Some(v)) => g.mean = parse_real(v, "mean")?,
            ("sd", Some(v)) => g.sd = parse_real(v, "sd")?,
            ("random", Some(v)) => g.random = parse_yes_no(v, "random")?,
            _ => return Err(format!("unknown level1 option '{}'", o.key)),
        }
    }
    Ok(g)
}

fn parse_level2(args: &[Token]) -> Result<Level2Generator, String> {
    let (name, opts) = name_and_options(args)?;
    let mut coef = 0.0;
    let mut dist = "gaussian".to_string();
    let (mut mean, mut sd) = (0.0, 1.0);
    let mut p: Option<[f64; 3]> = None;
    for o in opts {
        match (o.key.as_str(), o.value.as_deref()) {
            ("coef", Some(v)) => coef = parse_real(v, "coef")?,
            ("dist", Some(v)) => dist = v.to_string(),
            ("mean", Some(v)) => mean = parse_real(v, "mean")?,
            ("sd", Some(v)) => sd = parse_real(v, "sd")?,
            ("p", Some(v)) => {
                let parts: Vec<f64> = v.split(',').map(|s| parse_real(s, "p")).collect::<Result<_, _>>()?;
                p = Some(
                    parts
                        .try_into()
                        .map_err(|_| "p needs three probabilities for -1, 0, 1".to_string())?,
                );
            }
            _ => return Err(format!("unknown level2 option '{}'", o.key)),
        }
    }
    let dist = match dist.as_str() {
        "gaussian" => Level2Distribution::Gaussian { mean, sd },
        "categorical" => Level2Distribution::Categorical {
            p: p.ok_or("categorical level2 needs p=")?,
        },
        d => return Err(format!("dist must be gaussian or categorical, found '{d}'")),
    };
    Ok(Level2Generator {
        name: name.to_string(),
        coef,
        dist,
    })
}
