//! Run configuration.
//!
//! One JSON document per study. Unknown fields are rejected and every block
//! is checked against the library's preconditions before any path is drawn,
//! so a bad file fails fast with the path of the offending field.
//!
//! ```json
//! {
//!   "name": "atm-call",
//!   "model": { "r": 0.0, "s0": 100.0, "vol": { "kind": "constant", "sigma": 0.2 } },
//!   "contract": { "strike": 100.0, "maturity": 1.0 },
//!   "strategy": { "kind": "adaptive", "eta": 0.05 },
//!   "study": { "paths": 1000 },
//!   "rng": { "seed": 7 }
//! }
//! ```

use std::path::Path;

use hedgesim::analysis::{validate_ladder, GridConfig, QuadratureConfig};
use hedgesim::hedge::{CrossingConfig, StrategySpec};
use hedgesim::limits::OBSERVATION_MARGIN;
use hedgesim::{ContractSpec, MarketModel, PdeGridConfig, VolatilitySpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub model: MarketModel,
    pub contract: ContractSpec,
    #[serde(default)]
    pub pricing: PricingBlock,
    /// Strategy of the `hedge` command.
    #[serde(default)]
    pub strategy: Option<StrategySpec>,
    #[serde(default)]
    pub study: StudyBlock,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub rng: RngBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingMethod {
    /// Closed form under constant volatility, PDE otherwise.
    Auto,
    ClosedForm,
    Pde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingBlock {
    pub method: PricingMethod,
    pub pde: PdeGridConfig,
}

impl Default for PricingBlock {
    fn default() -> Self {
        PricingBlock {
            method: PricingMethod::Auto,
            pde: PdeGridConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyBlock {
    pub paths: usize,
    /// Convergence ladders, each of a single strategy kind.
    pub ladders: Vec<Vec<StrategySpec>>,
    pub grid: GridConfig,
    pub crossing: CrossingConfig,
    pub observation: ObservationBlock,
}

impl Default for StudyBlock {
    fn default() -> Self {
        StudyBlock {
            paths: 10_000,
            ladders: Vec::new(),
            grid: GridConfig::default(),
            crossing: CrossingConfig::default(),
            observation: ObservationBlock::default(),
        }
    }
}

/// Where and how the normalised gap is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationBlock {
    pub etas: Vec<f64>,
    pub times: Vec<f64>,
    pub paths: usize,
    pub max_step: f64,
}

impl Default for ObservationBlock {
    fn default() -> Self {
        ObservationBlock {
            etas: vec![0.01],
            times: vec![0.5],
            paths: 10_000,
            max_step: 1.0 / 1024.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RngBlock {
    pub seed: u64,
}

impl Default for RngBlock {
    fn default() -> Self {
        RngBlock { seed: 20_240_917 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            directory: "out".into(),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

impl OutputBlock {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Small runs that finish in seconds.
    Smoke,
    /// Full-size runs of the standard at-the-money setup.
    Paper,
}

fn adaptive(etas: &[f64]) -> Vec<StrategySpec> {
    etas.iter().map(|&eta| StrategySpec::Adaptive { eta }).collect()
}

fn equidistant(ns: &[usize]) -> Vec<StrategySpec> {
    ns.iter().map(|&n| StrategySpec::Equidistant { n }).collect()
}

impl RunConfig {
    /// At-the-money call, `s0 = K = 100`, `r = 0`, `sigma = 0.2`, `T = 1`.
    fn standard(name: &str) -> RunConfig {
        RunConfig {
            name: name.into(),
            model: MarketModel {
                r: 0.0,
                s0: 100.0,
                vol: VolatilitySpec::Constant { sigma: 0.2 },
            },
            contract: ContractSpec {
                strike: 100.0,
                maturity: 1.0,
            },
            pricing: PricingBlock::default(),
            strategy: None,
            study: StudyBlock::default(),
            quadrature: QuadratureConfig::default(),
            rng: RngBlock::default(),
            output: OutputBlock::default(),
        }
    }

    pub fn preset(preset: Preset) -> RunConfig {
        match preset {
            Preset::Smoke => {
                let mut c = Self::standard("smoke");
                c.strategy = Some(StrategySpec::Adaptive { eta: 0.05 });
                c.study.paths = 1000;
                c.study.ladders = vec![adaptive(&[0.2, 0.1, 0.05]), equidistant(&[4, 16, 64])];
                c.study.grid.max_step = 1.0 / 1024.0;
                c.study.observation = ObservationBlock {
                    etas: vec![0.05],
                    times: vec![0.5],
                    paths: 1000,
                    max_step: 1.0 / 1024.0,
                };
                c
            }
            Preset::Paper => {
                let mut c = Self::standard("paper");
                c.strategy = Some(StrategySpec::Adaptive { eta: 0.01 });
                c.study.paths = 100_000;
                c.study.ladders = vec![adaptive(&[0.05, 0.02, 0.01]), equidistant(&[4, 16, 64, 256])];
                c.study.observation = ObservationBlock {
                    etas: vec![0.02, 0.01, 0.005],
                    times: vec![0.5],
                    paths: 100_000,
                    max_step: 1.0 / 1024.0,
                };
                c
            }
        }
    }

    pub fn from_json(text: &str) -> CliResult<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Checks every block, whichever command will run.
    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: hedgesim::HedgeError| CliError::Config(format!("at `{name}`: {e}"));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(CliError::Config(format!(
                "at `name`: `{}` is not usable as a directory name",
                self.name
            )));
        }
        self.model.validate().map_err(|e| field("model", e))?;
        self.contract.validate().map_err(|e| field("contract", e))?;
        if self.pricing.method != PricingMethod::ClosedForm {
            self.pricing.pde.validate().map_err(|e| field("pricing.pde", e))?;
        }
        if let Some(s) = &self.strategy {
            s.validate().map_err(|e| field("strategy", e))?;
        }
        let study = &self.study;
        if study.paths < 2 {
            return Err(CliError::Config(format!(
                "at `study.paths`: need at least 2 paths, got {}",
                study.paths
            )));
        }
        for (i, ladder) in study.ladders.iter().enumerate() {
            validate_ladder(ladder).map_err(|e| field(&format!("study.ladders[{i}]"), e))?;
        }
        let g = &study.grid;
        if !(g.max_step > 0.0 && g.max_step <= self.contract.maturity) {
            return Err(CliError::Config(format!(
                "at `study.grid.max_step`: {} outside (0, T]",
                g.max_step
            )));
        }
        if !(g.grading > 0.0 && g.grading < 1.0) || !(g.cutoff > 0.0 && g.cutoff < 0.5) {
            return Err(CliError::Config(
                "at `study.grid`: grading and cutoff must lie in (0, 1) and (0, 0.5)".into(),
            ));
        }
        study.crossing.validate().map_err(|e| field("study.crossing", e))?;
        let obs = &study.observation;
        for (i, &eta) in obs.etas.iter().enumerate() {
            if !(eta > 0.0 && eta < 1.0) {
                return Err(CliError::Config(format!(
                    "at `study.observation.etas[{i}]`: {eta} outside (0, 1)"
                )));
            }
        }
        let margin = OBSERVATION_MARGIN * self.contract.maturity;
        for (i, &t) in obs.times.iter().enumerate() {
            if !(t > margin && t < self.contract.maturity - margin) {
                return Err(CliError::Config(format!(
                    "at `study.observation.times[{i}]`: {t} outside ({margin}, {})",
                    self.contract.maturity - margin
                )));
            }
        }
        if obs.paths < 2 || !(obs.max_step > 0.0) {
            return Err(CliError::Config(
                "at `study.observation`: need at least 2 paths and a positive max_step".into(),
            ));
        }
        self.quadrature.validate().map_err(|e| field("quadrature", e))?;
        if !self.output.formats.contains(&Format::Json) {
            return Err(CliError::Config(
                "at `output.formats`: `json` is required for the summary".into(),
            ));
        }
        Ok(())
    }
}
