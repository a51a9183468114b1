//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Later assignments win, so a file
//! followed by command-line overrides resolves in order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{Hyperparams, LambdaSpec};
use crate::sampler::ChainConfig;

/// Recognised keys with a one-line description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("alpha_split", "split-probability base, in (0,1)"),
    ("gamma_split", "split-probability decay exponent, > 0"),
    ("sigma_beta2", "prior variance of each tree's free height, > 0"),
    ("v", "noise-variance prior degrees of freedom, > 0"),
    ("lambda", "fixed noise-variance prior scale, > 0 (overrides q_lambda)"),
    ("q_lambda", "prior mass below the least-squares noise estimate, in (0,1)"),
    ("c_star", "tree-count penalty, > 0"),
    ("t_max", "number of tree slots, >= 1"),
    ("xi", "truncation bound, > 0, or none"),
    ("n_iter", "total sweeps per chain"),
    ("burn_in", "sweeps discarded before recording"),
    ("thin", "record every thin-th sweep after burn-in"),
    ("seed", "base RNG seed; chain c uses stream c"),
    ("chains", "number of independent chains, >= 1"),
    ("audit_every", "sweeps between residual-cache audits, >= 1"),
    ("progress_every", "sweeps between progress lines, 0 for none"),
    ("response", "response column name"),
    ("categorical", "comma-separated columns to one-hot encode"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hyper: Hyperparams,
    /// Per-chain settings; `stream` is assigned per chain at run time.
    pub chain: ChainConfig,
    pub chains: usize,
    pub response: String,
    pub categorical: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: Hyperparams::default(),
            chain: ChainConfig {
                progress_every: 100,
                ..ChainConfig::default()
            },
            chains: 1,
            response: "y".into(),
            categorical: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("{key}: cannot parse '{value}'"))
}

fn parse_xi(value: &str) -> std::result::Result<Option<f64>, String> {
    match value.to_ascii_lowercase().as_str() {
        "none" | "off" | "inf" | "infinity" => Ok(None),
        _ => parse_num::<f64>("xi", value).map(Some),
    }
}

/// Splits `key = value` text into pairs; malformed lines are reported with
/// their 1-based line number.
/// Well-formed `key = value` pairs plus one message per malformed line.
pub fn split_pairs(text: &str) -> (Vec<(String, String)>, Vec<String>) {
    let mut pairs = Vec::new();
    let mut bad = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => pairs.push((k.trim().to_string(), v.trim().to_string())),
            _ => bad.push(format!("line {}: expected key = value", i + 1)),
        }
    }
    (pairs, bad)
}

pub fn parse_pairs(text: &str) -> std::result::Result<Vec<(String, String)>, Vec<String>> {
    match split_pairs(text) {
        (pairs, bad) if bad.is_empty() => Ok(pairs),
        (_, bad) => Err(bad),
    }
}

impl RunConfig {
    /// Applies one assignment. Range checks are deferred to [`Self::problems`].
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let h = &mut self.hyper;
        let c = &mut self.chain;
        match key {
            "alpha_split" => h.alpha_split = parse_num(key, value)?,
            "gamma_split" => h.gamma_split = parse_num(key, value)?,
            "sigma_beta2" => h.sigma_beta2 = parse_num(key, value)?,
            "v" => h.v = parse_num(key, value)?,
            "lambda" => h.lambda = LambdaSpec::Fixed(parse_num(key, value)?),
            "q_lambda" => h.lambda = LambdaSpec::Quantile(parse_num(key, value)?),
            "c_star" => h.c_star = parse_num(key, value)?,
            "t_max" => h.t_max = parse_num(key, value)?,
            "xi" => h.xi = parse_xi(value)?,
            "n_iter" => c.n_iter = parse_num(key, value)?,
            "burn_in" => c.burn_in = parse_num(key, value)?,
            "thin" => c.thin = parse_num(key, value)?,
            "seed" => c.seed = parse_num(key, value)?,
            "chains" => self.chains = parse_num(key, value)?,
            "audit_every" => c.audit_every = parse_num(key, value)?,
            "progress_every" => c.progress_every = parse_num(key, value)?,
            "response" if !value.is_empty() => self.response = value.to_string(),
            "response" => return Err("response: empty column name".into()),
            "categorical" => {
                self.categorical = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        c.truncation_enabled = h.truncation().is_some();
        Ok(())
    }

    /// Applies every pair, collecting all parse failures.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<()> {
        let bad: Vec<String> = pairs
            .iter()
            .filter_map(|(k, v)| self.set(k.as_ref(), v.as_ref()).err())
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let pairs = parse_pairs(text).map_err(Error::Config)?;
        self.apply(&pairs)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut bad = self.hyper.problems();
        bad.extend(self.chain.problems());
        if self.chains == 0 {
            bad.push("chains must be >= 1".into());
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.problems();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// Resolved settings as strings that parse back to identical values.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let h = &self.hyper;
        let c = &self.chain;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("alpha_split", h.alpha_split.to_string());
        put("gamma_split", h.gamma_split.to_string());
        put("sigma_beta2", h.sigma_beta2.to_string());
        put("v", h.v.to_string());
        match h.lambda {
            LambdaSpec::Fixed(l) => put("lambda", l.to_string()),
            LambdaSpec::Quantile(q) => put("q_lambda", q.to_string()),
        }
        put("c_star", h.c_star.to_string());
        put("t_max", h.t_max.to_string());
        put("xi", h.xi.map_or_else(|| "none".to_string(), |x| x.to_string()));
        put("n_iter", c.n_iter.to_string());
        put("burn_in", c.burn_in.to_string());
        put("thin", c.thin.to_string());
        put("seed", c.seed.to_string());
        put("chains", self.chains.to_string());
        put("audit_every", c.audit_every.to_string());
        put("progress_every", c.progress_every.to_string());
        put("response", self.response.clone());
        put("categorical", self.categorical.join(","));
        m
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let pairs: Vec<(&String, &String)> = map.iter().collect();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }
}

/// Expands `key = a, b, c` lines into the Cartesian product of assignments.
/// The first key varies slowest; point order is the enumeration order.
pub fn parse_grid(text: &str) -> Result<Vec<Vec<(String, String)>>> {
    let pairs = parse_pairs(text).map_err(Error::Config)?;
    if pairs.is_empty() {
        return Err(Error::Config(vec!["grid is empty".into()]));
    }
    let mut bad = Vec::new();
    let axes: Vec<(String, Vec<String>)> = pairs
        .into_iter()
        .map(|(k, v)| {
            let vals: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if vals.is_empty() {
                bad.push(format!("{k}: no values"));
            }
            let mut probe = RunConfig::default();
            bad.extend(vals.iter().filter_map(|x| probe.set(&k, x).err()));
            (k, vals)
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, vals) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}
