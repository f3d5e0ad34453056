//! Experiment configuration: a flat `key = value` file with one `[spec]`
//! block per design.
//!
//! ```text
//! reps = 10
//! n = 1000
//! seed_base = 20250101
//! output_dir = out
//! estimators = bart, csf
//! variants = default, improved
//! bart.iterations = 1500
//!
//! [spec]
//! family = hu
//! dgp = 1, 2, 3, 4
//! null_hte = false
//! ```
//!
//! Keys before the first `[spec]` are global; `bart.*` and `csf.*` keys
//! override estimator hyperparameters for both variants. Inside a block,
//! `dgp` may list several indices and `n` overrides the global sample size.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use itelab_core::bart::BartHyperparams;
use itelab_core::csf::CsfHyperparams;
use itelab_core::dgp::{make_null_variant, DgpSpec, Family};

/// `(line, key, value)` inside a `[spec]` block.
type Entry = (usize, String, String);

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Estimator {
    Bart,
    Csf,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Bart => "bart",
            Estimator::Csf => "csf",
        }
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bart" => Ok(Estimator::Bart),
            "csf" => Ok(Estimator::Csf),
            other => Err(format!("unknown estimator '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Default,
    Improved,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::Improved => "improved",
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "default" => Ok(Variant::Default),
            "improved" => Ok(Variant::Improved),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub specs: Vec<DgpSpec>,
    pub estimators: Vec<Estimator>,
    pub variants: Vec<Variant>,
    pub reps: usize,
    pub n: usize,
    pub seed_base: u64,
    pub output_dir: PathBuf,
    /// Hyperparameters of the default variant; the improved variant changes
    /// only `k` (BART) or `min_node_size` (CSF).
    pub bart: BartHyperparams,
    pub csf: CsfHyperparams,
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut bart = BartHyperparams::default();
        let mut csf = CsfHyperparams::default();
        let (reps, n) = match profile {
            Profile::Desk => {
                bart.iterations = 1500;
                bart.burn_in = 300;
                csf.num_trees = 1000;
                (10, 1000)
            }
            Profile::Paper => (50, 1000),
        };
        Self {
            profile,
            specs: Vec::new(),
            estimators: vec![Estimator::Bart, Estimator::Csf],
            variants: vec![Variant::Default, Variant::Improved],
            reps,
            n,
            seed_base: 20_250_101,
            output_dir: PathBuf::from("results"),
            bart,
            csf,
        }
    }

    pub fn bart_for(&self, variant: Variant) -> BartHyperparams {
        match variant {
            Variant::Default => self.bart.clone(),
            Variant::Improved => BartHyperparams { k: 1.0, ..self.bart.clone() },
        }
    }

    pub fn csf_for(&self, variant: Variant) -> CsfHyperparams {
        match variant {
            Variant::Default => self.csf.clone(),
            Variant::Improved => CsfHyperparams {
                min_node_size: 2,
                ..self.csf.clone()
            },
        }
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, profile)
    }

    pub fn parse(text: &str, profile: Profile) -> Result<Self, ConfigError> {
        let mut cfg = Self::for_profile(profile);
        let mut blocks: Vec<(usize, Vec<Entry>)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if line != "[spec]" {
                    return Err(syntax(line_no, format!("unknown section {line}")));
                }
                blocks.push((line_no, Vec::new()));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(line_no, format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            match blocks.last_mut() {
                Some((_, entries)) => entries.push((line_no, key, value)),
                None => cfg.set_global(line_no, &key, &value)?,
            }
        }
        for (line_no, entries) in blocks {
            let specs = cfg.build_specs(line_no, &entries)?;
            cfg.specs.extend(specs);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set_global(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let err = |m: String| syntax(line, m);
        match key {
            "reps" => self.reps = parse_num(line, key, value)?,
            "n" => self.n = parse_num(line, key, value)?,
            "seed_base" => self.seed_base = parse_num(line, key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "estimators" => self.estimators = parse_list(value).map_err(err)?,
            "variants" => self.variants = parse_list(value).map_err(err)?,
            "bart.num_trees" => self.bart.num_trees = parse_num(line, key, value)?,
            "bart.k" => self.bart.k = parse_num(line, key, value)?,
            "bart.alpha" => self.bart.alpha = parse_num(line, key, value)?,
            "bart.beta" => self.bart.beta = parse_num(line, key, value)?,
            "bart.nu" => self.bart.nu = parse_num(line, key, value)?,
            "bart.q" => self.bart.q = parse_num(line, key, value)?,
            "bart.iterations" => self.bart.iterations = parse_num(line, key, value)?,
            "bart.burn_in" => self.bart.burn_in = parse_num(line, key, value)?,
            "bart.thin" => self.bart.thin = parse_num(line, key, value)?,
            "csf.num_trees" => self.csf.num_trees = parse_num(line, key, value)?,
            "csf.min_node_size" => self.csf.min_node_size = parse_num(line, key, value)?,
            "csf.subsample_fraction" => self.csf.subsample_fraction = parse_num(line, key, value)?,
            "csf.honesty_fraction" => self.csf.honesty_fraction = parse_num(line, key, value)?,
            "csf.mtry" => self.csf.mtry = Some(parse_num(line, key, value)?),
            "csf.bag_size" => self.csf.bag_size = parse_num(line, key, value)?,
            "csf.horizon_quantile" => self.csf.horizon_quantile = parse_num(line, key, value)?,
            other => return Err(err(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    fn build_specs(&self, line: usize, entries: &[Entry]) -> Result<Vec<DgpSpec>, ConfigError> {
        let mut family = None;
        let mut dgps: Option<Vec<u8>> = None;
        let mut null_hte = false;
        let mut n = self.n;
        for (l, key, value) in entries {
            match key.as_str() {
                "family" => family = Some(Family::from_str(value).map_err(|e| syntax(*l, e.to_string()))?),
                "dgp" => dgps = Some(parse_list(value).map_err(|m| syntax(*l, m))?),
                "null_hte" => null_hte = parse_bool(*l, value)?,
                "n" => n = parse_num(*l, key, value)?,
                other => return Err(syntax(*l, format!("unknown spec key '{other}'"))),
            }
        }
        let family = family.ok_or_else(|| syntax(line, "spec block without family".into()))?;
        let dgps = dgps.ok_or_else(|| syntax(line, "spec block without dgp".into()))?;
        dgps.into_iter()
            .map(|k| {
                let spec = DgpSpec::new(family, k, n, 0).map_err(|e| syntax(line, e.to_string()))?;
                Ok(if null_hte { make_null_variant(&spec) } else { spec })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.reps == 0 {
            return invalid("reps must be at least 1");
        }
        if self.estimators.is_empty() {
            return invalid("estimators must not be empty");
        }
        if self.variants.is_empty() {
            return invalid("variants must not be empty");
        }
        if self.specs.is_empty() {
            return invalid("no [spec] blocks");
        }
        let mut keys: Vec<_> = self.specs.iter().map(|s| (s.family, s.dgp_index, s.null_hte)).collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return invalid("a design is listed twice");
        }
        self.bart.validate().map_err(|e| ConfigError::Invalid(format!("bart: {e}")))?;
        for v in [Variant::Default, Variant::Improved] {
            self.csf_for(v)
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("csf: {e}")))?;
        }
        Ok(())
    }

    /// Every setting after defaults and overrides, in the input format.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let join = |names: Vec<&str>| names.join(", ");
        let b = &self.bart;
        let c = &self.csf;
        let _ = writeln!(s, "# profile = {}", self.profile);
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "seed_base = {}", self.seed_base);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "estimators = {}", join(self.estimators.iter().map(|e| e.name()).collect()));
        let _ = writeln!(s, "variants = {}", join(self.variants.iter().map(|v| v.name()).collect()));
        let _ = writeln!(s, "bart.num_trees = {}", b.num_trees);
        let _ = writeln!(s, "bart.k = {}", b.k);
        let _ = writeln!(s, "# improved variant: bart.k = 1");
        let _ = writeln!(s, "bart.alpha = {}", b.alpha);
        let _ = writeln!(s, "bart.beta = {}", b.beta);
        let _ = writeln!(s, "bart.nu = {}", b.nu);
        let _ = writeln!(s, "bart.q = {}", b.q);
        let _ = writeln!(s, "bart.iterations = {}", b.iterations);
        let _ = writeln!(s, "bart.burn_in = {}", b.burn_in);
        let _ = writeln!(s, "bart.thin = {}", b.thin);
        let _ = writeln!(s, "csf.num_trees = {}", c.num_trees);
        let _ = writeln!(s, "csf.min_node_size = {}", c.min_node_size);
        let _ = writeln!(s, "# improved variant: csf.min_node_size = 2");
        let _ = writeln!(s, "csf.subsample_fraction = {}", c.subsample_fraction);
        let _ = writeln!(s, "csf.honesty_fraction = {}", c.honesty_fraction);
        match c.mtry {
            Some(m) => {
                let _ = writeln!(s, "csf.mtry = {m}");
            }
            None => {
                let _ = writeln!(s, "# csf.mtry = min(ceil(sqrt(p) + 20), p)");
            }
        }
        let _ = writeln!(s, "csf.bag_size = {}", c.bag_size);
        let _ = writeln!(s, "csf.horizon_quantile = {}", c.horizon_quantile);
        for spec in &self.specs {
            let _ = writeln!(s, "\n[spec]");
            let _ = writeln!(s, "family = {}", spec.family);
            let _ = writeln!(s, "dgp = {}", spec.dgp_index);
            let _ = writeln!(s, "null_hte = {}", spec.null_hte);
            let _ = writeln!(s, "n = {}", spec.n);
            if let Some(law) = spec.residual_law {
                let _ = writeln!(s, "# residual_law = {}", law.name());
            }
        }
        s
    }
}

fn syntax(line: usize, message: String) -> ConfigError {
    ConfigError::Syntax { line, message }
}

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| syntax(line, format!("bad value '{value}' for {key}")))
}

fn parse_bool(line: usize, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(syntax(line, format!("expected true/false, got '{other}'"))),
    }
}

fn parse_list<T: FromStr + PartialEq>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    let mut out: Vec<T> = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v = item.parse::<T>().map_err(|e| format!("bad list item '{item}': {e}"))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}
