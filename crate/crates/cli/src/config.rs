//! Experiment configuration.
//!
//! A config is a TOML document:
//!
//! ```toml
//! kind = "intersect"      # optional when given on the command line
//! seed = 7
//! threads = 1
//! out = "out"
//! budget_mib = 1024
//! law = "gaussian"        # or "rademacher"
//! geometry = "tube"       # or "cone"
//! replicas = 200
//!
//! [grid]
//! d = [1]
//! a = [0.0, 0.25]
//! R = [1.0]
//! N = [64, 128, 256]
//!
//! [coupling]              # exactly one form
//! beta = 0.5              # fixed coupling
//! # beta_hat = 0.5        # the regime's own schedule
//! # c = 1.0               # c N^(-exponent)
//! # exponent = 0.1
//! ```
//!
//! `fractional` also reads `theta` and `betas`; `chaos` reads `order`.

use std::fmt;
use std::path::{Path, PathBuf};

use polytube_core::intersection::beta_schedule;
use polytube_core::limit_laws::Coupling;
use polytube_core::{DisorderLaw, Geometry, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Intersect,
    Partition,
    Chaos,
    RegimeMap,
    Converge,
    Fractional,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Intersect => "intersect",
            Kind::Partition => "partition",
            Kind::Chaos => "chaos",
            Kind::RegimeMap => "regime-map",
            Kind::Converge => "converge",
            Kind::Fractional => "fractional",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub d: Vec<usize>,
    pub a: Vec<f64>,
    #[serde(rename = "R", alias = "r")]
    pub r: Vec<f64>,
    #[serde(rename = "N", alias = "n")]
    pub n: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
}

/// The coupling along an `N` grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaSpec {
    Fixed(f64),
    Scaled(f64),
    Power { c: f64, exponent: f64 },
}

impl CouplingSpec {
    pub fn resolve(&self) -> Result<BetaSpec, CliError> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(CliError::Config(format!("coupling.{name} must be finite and >= 0, got {v}")))
            }
        };
        match (self.beta, self.beta_hat, self.c, self.exponent) {
            (Some(b), None, None, None) => Ok(BetaSpec::Fixed(finite("beta", b)?)),
            (None, Some(b), None, None) => Ok(BetaSpec::Scaled(finite("beta_hat", b)?)),
            (None, None, Some(c), Some(e)) if e.is_finite() => Ok(BetaSpec::Power {
                c: finite("c", c)?,
                exponent: e,
            }),
            _ => Err(CliError::Config(
                "coupling needs exactly one of: beta, beta_hat, or c with exponent".into(),
            )),
        }
    }
}

impl BetaSpec {
    pub fn beta(&self, params: &ModelParams) -> Result<f64, CliError> {
        match *self {
            BetaSpec::Fixed(b) => Ok(b),
            BetaSpec::Scaled(b) => beta_schedule(params, b)
                .map(|s| s.eval(params.n as f64))
                .map_err(|e| CliError::Config(format!("{params}: {e}"))),
            BetaSpec::Power { c, exponent } => Ok(c * (params.n as f64).powf(-exponent)),
        }
    }

    pub fn coupling(&self) -> Coupling {
        match *self {
            BetaSpec::Fixed(b) => Coupling::Power { c: b, exponent: 0.0 },
            BetaSpec::Scaled(beta_hat) => Coupling::Scaled { beta_hat },
            BetaSpec::Power { c, exponent } => Coupling::Power { c, exponent },
        }
    }
}

fn default_threads() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_budget() -> u64 {
    1024
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_budget")]
    pub budget_mib: u64,
    #[serde(default)]
    pub law: DisorderLaw,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingSpec>,
}

/// Values given on the command line; each replaces the config key.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

/// One `(d, a, R)` cell at one `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// Position of `(d, a, R)` in the grid.
    pub index: usize,
    pub params: ModelParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the command line and checks the result. `kind` must agree
    /// with the config's own `kind` when both are present.
    pub fn resolve(mut self, kind: Kind, o: &Overrides) -> Result<Self, CliError> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(CliError::Config(format!("config is for `{k}`, not `{kind}`")));
            }
        }
        self.kind = Some(kind);
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn kind(&self) -> Kind {
        self.kind.expect("resolved config has a kind")
    }

    /// SHA-256 of the config with the output path and thread count removed,
    /// so that relocating a run or changing its parallelism keeps the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.threads = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn beta_spec(&self) -> Result<Option<BetaSpec>, CliError> {
        self.coupling.as_ref().map(CouplingSpec::resolve).transpose()
    }

    fn needs_coupling(&self) -> Result<BetaSpec, CliError> {
        self.beta_spec()?
            .ok_or_else(|| CliError::Config(format!("`{}` needs a [coupling] table", self.kind())))
    }

    /// Every `(d, a, R)` cell at every `N`, in grid order.
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let mut out = Vec::new();
        let mut index = 0;
        for &d in &self.grid.d {
            for &a in &self.grid.a {
                for &r in &self.grid.r {
                    for &n in &self.grid.n {
                        let params = ModelParams::new(d, a, r, n)
                            .map_err(|e| CliError::Config(format!("(d={d}, a={a}, R={r}, N={n}): {e}")))?
                            .with_law(self.law)
                            .with_geometry(self.geometry);
                        out.push(Cell { index, params });
                    }
                    index += 1;
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if g.d.is_empty() || g.a.is_empty() || g.r.is_empty() || g.n.is_empty() {
            return Err(CliError::Config("grid.d, grid.a, grid.R and grid.N must be non-empty".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if self.budget_mib == 0 {
            return Err(CliError::Config("budget_mib must be at least 1".into()));
        }
        let cells = self.cells()?;
        match self.kind() {
            Kind::Intersect => {}
            Kind::RegimeMap => {
                self.regime_beta_hat()?;
            }
            Kind::Partition | Kind::Chaos => {
                let spec = self.needs_coupling()?;
                if self.replicas < 2 {
                    return Err(CliError::Config(format!("`{}` needs replicas >= 2", self.kind())));
                }
                for c in &cells {
                    spec.beta(&c.params)?;
                    if self.kind() == Kind::Chaos {
                        let k = self.order_for(c.params.n);
                        if k == 0 || k > c.params.n {
                            return Err(CliError::Config(format!(
                                "order {k} not in 1..=N for N = {}",
                                c.params.n
                            )));
                        }
                    }
                }
            }
            Kind::Converge => {
                let spec = self.needs_coupling()?;
                for c in &cells {
                    spec.beta(&c.params)?;
                }
            }
            Kind::Fractional => {
                match self.theta {
                    Some(t) if t > 0.0 && t < 1.0 => {}
                    Some(t) => return Err(CliError::Config(format!("theta = {t} not in (0, 1)"))),
                    None => return Err(CliError::Config("`fractional` needs theta".into())),
                }
                match &self.betas {
                    Some(b) if !b.is_empty() && b.iter().all(|x| x.is_finite() && *x >= 0.0) => {}
                    _ => {
                        return Err(CliError::Config(
                            "`fractional` needs a non-empty betas list of finite values >= 0".into(),
                        ))
                    }
                }
                if self.replicas < 2 {
                    return Err(CliError::Config("`fractional` needs replicas >= 2".into()));
                }
            }
        }
        Ok(())
    }

    /// `beta_hat` of a regime map: `coupling.beta_hat`, or 0.5.
    pub fn regime_beta_hat(&self) -> Result<f64, CliError> {
        match self.beta_spec()? {
            None => Ok(0.5),
            Some(BetaSpec::Scaled(b)) => Ok(b),
            Some(_) => Err(CliError::Config("`regime-map` takes coupling.beta_hat only".into())),
        }
    }

    /// Chaos truncation order at length `n`: `order`, or `min(12, n)`.
    pub fn order_for(&self, n: usize) -> usize {
        self.order.unwrap_or(12.min(n))
    }
}
