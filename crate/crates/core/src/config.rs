//! Experiment configuration.
//!
//! Configurations are TOML files with `version = 1`. Every key is optional;
//! run sizes fall back to the selected [`Profile`] and everything else to the
//! benchmark defaults. See `book/src/configuration.md` for the schema.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::abstraction::LeakPolicy;
use crate::error::{Error, Result};
use crate::partition::GridPartition;
use crate::system::{FiniteChain, GaussianChannel, StochasticSystem};

pub const CONFIG_VERSION: u32 = 1;

/// Preset run sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// Trace `10^5`, `10^5` initial draws, `10^4` TV samples, `K = 100`.
    #[default]
    Paper,
    /// Trace `2·10^4`, `2·10^4` initial draws, `2·10^3` TV samples, `K = 40`.
    Ci,
}

impl Profile {
    fn sizes(self) -> (usize, usize, usize, usize) {
        match self {
            Profile::Paper => (100_000, 100_000, 10_000, 100),
            Profile::Ci => (20_000, 20_000, 2_000, 40),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "ci" => Ok(Profile::Ci),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected `paper` or `ci`)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    LinearGaussian {
        a: Vec<Vec<f64>>,
        #[serde(default)]
        m_w: Option<Vec<f64>>,
        sigma_w: Vec<Vec<f64>>,
        m_0: Vec<f64>,
        sigma_0: Vec<Vec<f64>>,
    },
    Rotation {
        #[serde(default = "quarter_turn")]
        step: f64,
        #[serde(default = "tenth_pi")]
        noise_width: f64,
    },
    FiniteChain {
        matrix: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

fn quarter_turn() -> f64 {
    std::f64::consts::FRAC_PI_2
}

fn tenth_pi() -> f64 {
    std::f64::consts::PI / 10.0
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("`{what}` must be a nonempty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec::LinearGaussian {
            a: vec![vec![0.995, 0.005], vec![0.0, 0.98]],
            m_w: None,
            sigma_w: vec![vec![0.07, 0.0], vec![0.0, 0.07]],
            m_0: vec![-0.4, -0.4],
            sigma_0: vec![vec![0.3, 0.0], vec![0.0, 0.3]],
        }
    }
}

impl SystemSpec {
    pub fn build(&self) -> Result<StochasticSystem> {
        match self {
            SystemSpec::LinearGaussian { a, m_w, sigma_w, m_0, sigma_0 } => {
                let a = matrix(a, "a")?;
                let d = a.nrows();
                let m_w = m_w.clone().unwrap_or_else(|| vec![0.0; d]);
                let ch = GaussianChannel::new(
                    a,
                    DVector::from_vec(m_w),
                    matrix(sigma_w, "sigma_w")?,
                    DVector::from_vec(m_0.clone()),
                    matrix(sigma_0, "sigma_0")?,
                )?;
                Ok(StochasticSystem::linear_gaussian(ch))
            }
            SystemSpec::Rotation { step, noise_width } => StochasticSystem::rotation(*step, *noise_width),
            SystemSpec::FiniteChain { matrix, initial } => {
                Ok(StochasticSystem::finite_chain(FiniteChain::new(matrix.clone(), initial.clone())?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartitionSpec {
    /// Per dimension: `(-∞, lo)`, `p` equal pieces of `[lo, hi]`, `(hi, ∞)`.
    Grid {
        p: usize,
        #[serde(default = "minus_one")]
        lo: f64,
        #[serde(default = "one")]
        hi: f64,
    },
    Cuts { cuts: Vec<Vec<f64>> },
    Named { named: NamedPartition },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPartition {
    /// The four quarter circles of `[0, 2π)`.
    Quadrants,
    /// One cell per state of a finite chain.
    Singletons,
}

fn minus_one() -> f64 {
    -1.0
}

fn one() -> f64 {
    1.0
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec::Grid { p: 3, lo: -1.0, hi: 1.0 }
    }
}

impl PartitionSpec {
    pub fn build(&self, system: &StochasticSystem) -> Result<GridPartition> {
        match self {
            PartitionSpec::Grid { p, lo, hi } => GridPartition::grid(system.dim(), *p, *lo, *hi),
            PartitionSpec::Cuts { cuts } => GridPartition::from_cuts(cuts.clone()),
            PartitionSpec::Named { named: NamedPartition::Quadrants } => Ok(GridPartition::quadrants()),
            PartitionSpec::Named { named: NamedPartition::Singletons } => {
                let chain = system
                    .chain()
                    .ok_or_else(|| Error::Config("singleton partitions need a finite chain system".into()))?;
                GridPartition::integer_cells(chain.n())
            }
        }
    }
}

/// Cell weights `μ(A_i)` used to turn marginals into densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellMu {
    /// Symbol frequencies of the steady-state trace.
    #[default]
    Empirical,
    /// Exact invariant cell masses (Gaussian channels and finite chains).
    Analytic,
}

/// Transition matrix used by the bound report on finite chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    #[default]
    Estimated,
    /// Memory lift of the true chain.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unobserved {
    #[default]
    Absorb,
    Error,
}

impl From<Unobserved> for LeakPolicy {
    fn from(u: Unobserved) -> Self {
        match u {
            Unobserved::Absorb => LeakPolicy::Absorb,
            Unobserved::Error => LeakPolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub memories: Option<Vec<usize>>,
    pub horizon: Option<usize>,
    pub trace_length: Option<usize>,
    pub initial_samples: Option<usize>,
    pub tv_samples: Option<usize>,
    pub burn_in: Option<usize>,
    pub cell_mu: Option<CellMu>,
    pub unobserved: Option<Unobserved>,
    pub model: Option<ModelSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Case2Settings {
    pub fine_p: usize,
    pub fine_ell: usize,
    pub coarse_p: usize,
    pub coarse_ell: usize,
}

impl Default for Case2Settings {
    fn default() -> Self {
        Self { fine_p: 25, fine_ell: 1, coarse_p: 7, coarse_ell: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    #[default]
    Estimated,
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSpec {
    pub source: BoundSource,
    pub m: usize,
    /// Required for supplied parameters.
    pub e1: Option<f64>,
    pub delta: f64,
    pub r: f64,
    /// Measured from the pipeline when absent.
    pub tv0: Option<f64>,
    /// Computed from the system when absent.
    pub v0_norm2: Option<f64>,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        Self { source: BoundSource::Estimated, m: 1, e1: None, delta: 0.0, r: 0.0, tv0: None, v0_norm2: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationSpec {
    pub trace_length: usize,
    /// Quadrant playing the role of `A1` (0-based, counter-clockwise from angle 0).
    pub a1: usize,
    /// Quadrant playing the role of `A2`.
    pub a2: usize,
}

impl Default for RotationSpec {
    fn default() -> Self {
        Self { trace_length: 1_000_000, a1: 0, a2: 2 }
    }
}

/// The file as written, before profile resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub version: Option<u32>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub system: SystemSpec,
    pub partition: PartitionSpec,
    pub run: RunFile,
    pub case2: Case2Settings,
    pub bounds: BoundsSpec,
    pub rotation: RotationSpec,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match file.version {
            Some(CONFIG_VERSION) | None => Ok(file),
            Some(v) => Err(Error::Config(format!("unsupported config version {v} (expected {CONFIG_VERSION})"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(self, profile: Profile) -> Result<ExperimentConfig> {
        let (trace, initial, tv, horizon) = profile.sizes();
        let run = self.run;
        let cfg = ExperimentConfig {
            seed: self.seed.unwrap_or(0),
            output: self.output.unwrap_or_else(|| PathBuf::from("out")),
            system: self.system,
            partition: self.partition,
            memories: run.memories.unwrap_or_else(|| vec![1, 2, 3]),
            horizon: run.horizon.unwrap_or(horizon),
            trace_length: run.trace_length.unwrap_or(trace),
            initial_samples: run.initial_samples.unwrap_or(initial),
            tv_samples: run.tv_samples.unwrap_or(tv),
            burn_in: run.burn_in,
            cell_mu: run.cell_mu.unwrap_or_default(),
            unobserved: run.unobserved.unwrap_or_default(),
            model: run.model.unwrap_or_default(),
            case2: self.case2,
            bounds: self.bounds,
            rotation: self.rotation,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub system: SystemSpec,
    pub partition: PartitionSpec,
    pub memories: Vec<usize>,
    pub horizon: usize,
    pub trace_length: usize,
    pub initial_samples: usize,
    pub tv_samples: usize,
    pub burn_in: Option<usize>,
    pub cell_mu: CellMu,
    pub unobserved: Unobserved,
    pub model: ModelSource,
    pub case2: Case2Settings,
    pub bounds: BoundsSpec,
    pub rotation: RotationSpec,
}

impl ExperimentConfig {
    /// Benchmark defaults under `profile`.
    pub fn with_profile(profile: Profile) -> Self {
        ConfigFile::default().resolve(profile).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("trace_length", self.trace_length),
            ("initial_samples", self.initial_samples),
            ("tv_samples", self.tv_samples),
            ("rotation.trace_length", self.rotation.trace_length),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if self.memories.is_empty() || self.memories.contains(&0) {
            return Err(Error::Config("`memories` must be a nonempty list of positive integers".into()));
        }
        let c = &self.case2;
        if [c.fine_p, c.fine_ell, c.coarse_p, c.coarse_ell].contains(&0) {
            return Err(Error::Config("case2 settings must be positive".into()));
        }
        if self.rotation.a1 > 3 || self.rotation.a2 > 3 || self.rotation.a1 == self.rotation.a2 {
            return Err(Error::Config("rotation quadrants must be distinct and in 0..=3".into()));
        }
        if self.bounds.source == BoundSource::Supplied && self.bounds.e1.is_none() {
            return Err(Error::Config("supplied bounds need `e1`".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> crate::abstraction::SampleBudget {
        crate::abstraction::SampleBudget {
            trace_length: self.trace_length,
            initial_samples: self.initial_samples,
            burn_in: self.burn_in,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_benchmark_defaults() {
        let cfg = ConfigFile::parse("").unwrap().resolve(Profile::Paper).unwrap();
        assert_eq!((cfg.trace_length, cfg.initial_samples, cfg.tv_samples, cfg.horizon), (100_000, 100_000, 10_000, 100));
        assert_eq!(cfg.memories, vec![1, 2, 3]);
        assert_eq!(cfg.partition, PartitionSpec::Grid { p: 3, lo: -1.0, hi: 1.0 });
        let sys = cfg.system.build().unwrap();
        assert_eq!(sys.gaussian().unwrap(), &GaussianChannel::benchmark_2d());
    }

    #[test]
    fn ci_profile_and_explicit_values() {
        let cfg = ConfigFile::parse("[run]\ntv_samples = 500\n").unwrap().resolve(Profile::Ci).unwrap();
        assert_eq!((cfg.trace_length, cfg.tv_samples, cfg.horizon), (20_000, 500, 40));
    }

    #[test]
    fn documented_example_spells_out_the_defaults() {
        let doc = include_str!("../../../book/src/configuration.md");
        let text = doc.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
        let mut cfg = ConfigFile::parse(text).unwrap().resolve(Profile::Ci).unwrap();
        let paper = ExperimentConfig::with_profile(Profile::Paper);
        assert_eq!(cfg.system.build().unwrap().gaussian(), paper.system.build().unwrap().gaussian());
        assert_eq!(cfg.burn_in, Some(1000));
        cfg.system = paper.system.clone();
        cfg.burn_in = None;
        assert_eq!(cfg, paper);
    }

    #[test]
    fn full_file_round_trips() {
        let text = r#"
version = 1
seed = 7
output = "results"

[system]
kind = "finite_chain"
matrix = [[0.5, 0.5], [0.2, 0.8]]
initial = [1.0, 0.0]

[partition]
named = "singletons"

[run]
memories = [1, 2]
cell_mu = "analytic"
unobserved = "error"
model = "exact"

[bounds]
source = "supplied"
m = 1
e1 = 0.3
"#;
        let file = ConfigFile::parse(text).unwrap();
        let again = ConfigFile::parse(&toml::to_string(&file).unwrap()).unwrap();
        assert_eq!(file, again);
        let cfg = file.resolve(Profile::Paper).unwrap();
        let sys = cfg.system.build().unwrap();
        assert_eq!(cfg.partition.build(&sys).unwrap().n_cells(), 2);
        assert_eq!(cfg.unobserved, Unobserved::Error);
        assert_eq!(cfg.model, ModelSource::Exact);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ConfigFile::parse("version = 2").is_err());
        assert!(ConfigFile::parse("speed = 1").is_err());
        assert!(ConfigFile::parse("[run]\nmemories = []").unwrap().resolve(Profile::Paper).is_err());
        assert!(ConfigFile::parse("[run]\ntrace_length = 0").unwrap().resolve(Profile::Paper).is_err());
        assert!(ConfigFile::parse("[bounds]\nsource = \"supplied\"").unwrap().resolve(Profile::Paper).is_err());
        assert!("fast".parse::<Profile>().is_err());
    }

    #[test]
    fn partitions_from_specs() {
        let sys = StochasticSystem::default_rotation();
        let q = ConfigFile::parse("[partition]\nnamed = \"quadrants\"").unwrap().partition;
        assert_eq!(q.build(&sys).unwrap(), GridPartition::quadrants());
        let c = ConfigFile::parse("[partition]\ncuts = [[0.0, 1.0]]").unwrap().partition;
        assert_eq!(c.build(&sys).unwrap().n_cells(), 3);
    }
}
