//! Scenario configuration: TOML schema, validation, overrides and digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::courses::{CourseModel, StageChain};
use crate::error::{Error, Result};
use crate::kernels::{
    malthusian_parameter, ContactRate, Density, InitialCondition, IntensityKernel, DEFAULT_AGE_SPAN, DEFAULT_AGE_STEP,
    DEFAULT_BRACKET,
};
use crate::tree::DEFAULT_NODE_CAP;

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub contact: ContactConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    MarkovSir {
        beta: f64,
        gamma: f64,
    },
    MarkovSeir {
        beta: f64,
        lambda: f64,
        gamma: f64,
    },
    /// Poisson contacts with intensity `kernel`, life cycle given by
    /// `stages` and one exit rate per non-terminal stage.
    Poisson {
        kernel: KernelConfig,
        #[serde(default = "default_stages")]
        stages: Vec<String>,
        #[serde(default)]
        rates: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelConfig {
    Exponential { beta: f64, gamma: f64 },
    Seir { beta: f64, lambda: f64, gamma: f64 },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Constant,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactConfig {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self { breakpoints: vec![0.0], values: vec![1.0], interpolation: Interpolation::Constant }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub i0: f64,
    #[serde(default)]
    pub g: AgeLawConfig,
}

/// Age law of the initially infected. `equilibrium` is `Exp(alpha)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AgeLawConfig {
    #[default]
    Equilibrium,
    Exponential {
        rate: f64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub population: usize,
    pub replicas: usize,
    pub samples: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { population: 50_000, replicas: 20, samples: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    pub horizon: f64,
    pub dt: f64,
    pub age_step: f64,
    pub a_max: f64,
    pub bracket: [f64; 2],
    pub node_cap: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            horizon: 25.0,
            dt: 0.01,
            age_step: DEFAULT_AGE_STEP,
            a_max: DEFAULT_AGE_SPAN,
            bracket: [DEFAULT_BRACKET.0, DEFAULT_BRACKET.1],
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Compartment curves written by `solve`; empty means all.
    #[serde(default)]
    pub compartments: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), compartments: vec![] }
    }
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_stages() -> Vec<String> {
    vec!["I".into()]
}

impl ScenarioConfig {
    /// Markovian SIR with `beta = 1.5`, `gamma = 1`, `I0 = 0.01`, `c = 1`.
    pub fn reference() -> Self {
        Self {
            seed: DEFAULT_SEED,
            model: ModelConfig::MarkovSir { beta: 1.5, gamma: 1.0 },
            contact: ContactConfig::default(),
            initial: InitialConfig { i0: 0.01, g: AgeLawConfig::Exponential { rate: 0.5 } },
            simulation: SimulationConfig::default(),
            numerics: NumericsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Every violated precondition, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.seed > i64::MAX as u64 {
            errs.push(format!("seed must be below 2^63 (got {})", self.seed));
        }
        let positive = |errs: &mut Vec<String>, name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive and finite (got {v})"));
            }
        };
        match &self.model {
            ModelConfig::MarkovSir { beta, gamma } => {
                positive(&mut errs, "model.beta", *beta);
                positive(&mut errs, "model.gamma", *gamma);
            }
            ModelConfig::MarkovSeir { beta, lambda, gamma } => {
                positive(&mut errs, "model.beta", *beta);
                positive(&mut errs, "model.lambda", *lambda);
                positive(&mut errs, "model.gamma", *gamma);
            }
            ModelConfig::Poisson { kernel, stages, rates } => {
                match kernel {
                    KernelConfig::Exponential { beta, gamma } => {
                        positive(&mut errs, "model.kernel.beta", *beta);
                        positive(&mut errs, "model.kernel.gamma", *gamma);
                    }
                    KernelConfig::Seir { beta, lambda, gamma } => {
                        positive(&mut errs, "model.kernel.beta", *beta);
                        positive(&mut errs, "model.kernel.lambda", *lambda);
                        positive(&mut errs, "model.kernel.gamma", *gamma);
                    }
                    KernelConfig::Csv { .. } => {}
                }
                for r in rates {
                    positive(&mut errs, "model.rates", *r);
                }
                if stages.is_empty() || rates.len() + 1 != stages.len() {
                    errs.push("model.rates needs one entry per non-terminal stage".into());
                }
            }
        }
        let c = &self.contact;
        if let Some(v) = c.values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            errs.push(format!("contact rate outside [0,1] (got {v})"));
        }
        if c.breakpoints.is_empty() || c.breakpoints.len() != c.values.len() {
            errs.push("contact.breakpoints and contact.values must be nonempty and of equal length".into());
        } else if c.breakpoints[0] != 0.0 || c.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            errs.push("contact.breakpoints must start at 0 and increase".into());
        }
        let i0 = self.initial.i0;
        if !(i0 > 0.0 && i0 < 1.0) {
            errs.push(format!("I0 in (0,1) required (got {i0})"));
        }
        if let AgeLawConfig::Exponential { rate } = self.initial.g {
            positive(&mut errs, "initial.g.rate", rate);
        }
        let n = &self.numerics;
        positive(&mut errs, "numerics.horizon", n.horizon);
        positive(&mut errs, "numerics.dt", n.dt);
        positive(&mut errs, "numerics.age_step", n.age_step);
        positive(&mut errs, "numerics.a_max", n.a_max);
        if !(n.bracket[0] < n.bracket[1]) {
            errs.push("numerics.bracket must satisfy lo < hi".into());
        }
        if n.node_cap == 0 {
            errs.push("numerics.node_cap must be at least 1".into());
        }
        let s = &self.simulation;
        if s.population == 0 || s.replicas == 0 || s.samples == 0 {
            errs.push("simulation.population, replicas and samples must be at least 1".into());
        }
        errs
    }

    /// SHA-256 of the canonical JSON form (keys sorted), ignoring the output
    /// directory.
    pub fn digest(&self) -> String {
        let mut cfg = self.clone();
        cfg.output.dir = OutputConfig::default().dir;
        let value = serde_json::to_value(&cfg).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parse, apply `key=value` overrides, then validate.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: ScenarioConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    parse_config(&std::fs::read_to_string(path)?, overrides)
}

/// `a.b.c=value`; the value is parsed as TOML, falling back to a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(vec![format!("override `{assignment}` is not key=value")]))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(vec![format!("override `{key}`: `{p}` is not a table")]))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A configuration resolved into model objects.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: CourseModel,
    pub tau: IntensityKernel,
    pub ic: InitialCondition,
    pub c: ContactRate,
    /// Malthusian parameter, if it exists in the bracket.
    pub alpha: Option<f64>,
    pub population: usize,
    pub horizon: f64,
    pub dt: f64,
    pub age_step: f64,
    pub a_max: f64,
    pub seed: u64,
    pub replicas: usize,
    pub samples: usize,
    pub node_cap: usize,
    pub bracket: (f64, f64),
    pub digest: String,
    g: AgeLawConfig,
    base: PathBuf,
}

impl Scenario {
    pub fn reference() -> Result<Self> {
        Self::from_config(&ScenarioConfig::reference(), Path::new("."))
    }

    /// CSV paths are resolved relative to `base`.
    pub fn from_config(cfg: &ScenarioConfig, base: &Path) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let model = match &cfg.model {
            ModelConfig::MarkovSir { beta, gamma } => CourseModel::markov_sir(*beta, *gamma)?,
            ModelConfig::MarkovSeir { beta, lambda, gamma } => CourseModel::markov_seir(*beta, *lambda, *gamma)?,
            ModelConfig::Poisson { kernel, stages, rates } => {
                let tau = match kernel {
                    KernelConfig::Exponential { beta, gamma } => IntensityKernel::exponential(*beta, *gamma)?,
                    KernelConfig::Seir { beta, lambda, gamma } => IntensityKernel::seir(*beta, *lambda, *gamma)?,
                    KernelConfig::Csv { path } => IntensityKernel::from_csv(&base.join(path))?,
                };
                CourseModel::poisson(tau, StageChain::new(stages.clone(), rates.clone())?)?
            }
        };
        let c = match cfg.contact.interpolation {
            Interpolation::Constant => ContactRate::piecewise_constant(cfg.contact.breakpoints.clone(), cfg.contact.values.clone())?,
            Interpolation::Linear => ContactRate::piecewise_linear(cfg.contact.breakpoints.clone(), cfg.contact.values.clone())?,
        };
        let n = &cfg.numerics;
        let mut scn = Self {
            tau: IntensityKernel::zero(),
            ic: InitialCondition::new(cfg.initial.i0, Density::exponential(1.0)?, &IntensityKernel::zero())?,
            model,
            c,
            alpha: None,
            population: cfg.simulation.population,
            horizon: n.horizon,
            dt: n.dt,
            age_step: n.age_step,
            a_max: n.a_max,
            seed: cfg.seed,
            replicas: cfg.simulation.replicas,
            samples: cfg.simulation.samples,
            node_cap: n.node_cap,
            bracket: (n.bracket[0], n.bracket[1]),
            digest: cfg.digest(),
            g: cfg.initial.g.clone(),
            base: base.to_path_buf(),
        };
        scn.set_model(scn.model.clone())?;
        Ok(scn)
    }

    /// Swap the course model and rebuild everything derived from it.
    pub fn set_model(&mut self, model: CourseModel) -> Result<()> {
        let tau = model.kernel()?;
        tau.validate()?;
        self.alpha = malthusian_parameter(&tau, self.bracket, 1e-12).ok().map(|m| m.alpha);
        let g = match &self.g {
            AgeLawConfig::Exponential { rate } => Density::exponential(*rate)?,
            AgeLawConfig::Csv { path } => Density::from_csv(&self.base.join(path))?,
            AgeLawConfig::Equilibrium => match self.alpha {
                Some(a) if a > 0.0 => Density::exponential(a)?,
                _ => return Err(Error::InvalidArgument("equilibrium age law needs a positive Malthusian parameter".into())),
            },
        };
        self.ic = InitialCondition::new(self.ic.i0, g, &tau)?;
        self.tau = tau;
        self.model = model;
        Ok(())
    }

    pub fn set_i0(&mut self, i0: f64) -> Result<()> {
        self.ic = InitialCondition::new(i0, self.ic.g.clone(), &self.tau)?;
        Ok(())
    }
}
