//! Reproducible experiments on top of the abstraction pipeline.
//!
//! * [`run_case1`]: one partition, several memories, TV against the exact
//!   Gaussian law for `k = 0..=K`.
//! * [`run_case2`]: a fine memoryless abstraction against a coarse one with
//!   memory, at equal transition storage.
//! * [`run_rotation_demo`]: conditional quadrant frequencies of the noisy
//!   circle rotation.
//! * [`run_bounds`]: measured TV next to the a priori bounds.
//!
//! All TV curves of one run share the same invariant draws, so differences
//! between memories are not blurred by independent Monte-Carlo noise.

use std::sync::Arc;

use rayon::prelude::*;

use crate::abstraction::{invariant_cell_mass, output_trace, Abstraction};
use crate::analysis::{
    analytic_densities, bound_combined, crossover, estimate_spectral_params_observed, exact_initial_joint, exact_model,
    initial_l2_norm_chain, initial_l2_norm_mc, joint_initial_tv_mc, tv_discrete, Bounds, InvariantSamples, McEstimate,
    SpectralParams,
};
use crate::config::{BoundSource, CellMu, ExperimentConfig, ModelSource, PartitionSpec, SystemSpec};
use crate::error::{Error, Result};
use crate::partition::GridPartition;
use crate::report::{fmt_f64, Table};
use crate::system::{GaussianChannel, GroundTruth, StochasticSystem};

/// Builds the abstraction for one memory with the configured leak policy
/// and cell weights.
pub fn build_abstraction(
    cfg: &ExperimentConfig,
    system: &StochasticSystem,
    partition: Arc<GridPartition>,
    ell: usize,
) -> Result<Abstraction> {
    let a = Abstraction::build(system, partition.clone(), ell, &cfg.budget(), cfg.seed)?
        .with_leak_policy(cfg.unobserved.into());
    match cfg.cell_mu {
        CellMu::Empirical => Ok(a),
        CellMu::Analytic => a.with_cell_mu(invariant_cell_mass(system, &partition)?),
    }
}

fn gaussian_system(cfg: &ExperimentConfig) -> Result<(StochasticSystem, GaussianChannel)> {
    let system = cfg.system.build()?;
    let channel = system
        .gaussian()
        .cloned()
        .ok_or_else(|| Error::AnalyticUnavailable("this experiment needs a linear-Gaussian system".into()))?;
    Ok((system, channel))
}

/// TV curve of one abstraction for `k = 0..=horizon`.
pub fn tv_curve(abstraction: &Abstraction, samples: &InvariantSamples, channel: &GaussianChannel, horizon: usize) -> Result<Vec<McEstimate>> {
    let exact = analytic_densities(channel, horizon)?;
    let densities = abstraction.densities(horizon)?;
    densities.par_iter().zip(&exact).map(|(d, e)| samples.tv(e, d)).collect()
}

/// One TV curve with what it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub n: usize,
    pub ell: usize,
    pub stored_nonzeros: usize,
    /// Mass lost to unobserved sequences by `k = horizon`.
    pub leaked: f64,
    pub tv: Vec<McEstimate>,
    pub warnings: Vec<String>,
}

impl Curve {
    fn compute(
        cfg: &ExperimentConfig,
        system: &StochasticSystem,
        channel: &GaussianChannel,
        partition: Arc<GridPartition>,
        ell: usize,
        label: String,
    ) -> Result<Self> {
        let a = build_abstraction(cfg, system, partition.clone(), ell)?;
        let samples = InvariantSamples::draw(channel, &partition, cfg.tv_samples, cfg.seed)?;
        let tv = tv_curve(&a, &samples, channel, cfg.horizon)?;
        let leaked = if cfg.horizon + 1 >= ell {
            a.model().propagate_with(a.initial(), cfg.horizon + 1 - ell, cfg.unobserved.into())?.leaked()
        } else {
            0.0
        };
        Ok(Self {
            label,
            n: partition.n_cells(),
            ell,
            stored_nonzeros: a.model().stored_nonzeros(),
            leaked,
            tv,
            warnings: a.warnings().to_vec(),
        })
    }

    pub fn mean_tv(&self) -> f64 {
        self.tv.iter().map(|e| e.value).sum::<f64>() / self.tv.len() as f64
    }
}

/// Per-memory TV curves on a single partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Case1Result {
    pub curves: Vec<Curve>,
}

impl Case1Result {
    /// `k, tv_l{ℓ}, stderr_l{ℓ}, …`
    pub fn table(&self) -> Table {
        let mut header = vec!["k".to_string()];
        for c in &self.curves {
            header.push(format!("tv_l{}", c.ell));
            header.push(format!("stderr_l{}", c.ell));
        }
        let mut t = Table::new(header);
        let len = self.curves.first().map_or(0, |c| c.tv.len());
        for k in 0..len {
            let mut row = vec![k.to_string()];
            for c in &self.curves {
                row.push(fmt_f64(c.tv[k].value));
                row.push(fmt_f64(c.tv[k].stderr));
            }
            t.push(row);
        }
        t
    }

    pub fn curve(&self, ell: usize) -> Option<&Curve> {
        self.curves.iter().find(|c| c.ell == ell)
    }
}

pub fn run_case1(cfg: &ExperimentConfig) -> Result<Case1Result> {
    let (system, channel) = gaussian_system(cfg)?;
    let partition = Arc::new(cfg.partition.build(&system)?);
    let curves = cfg
        .memories
        .iter()
        .map(|&ell| Curve::compute(cfg, &system, &channel, partition.clone(), ell, format!("l{ell}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Case1Result { curves })
}

/// Fine memoryless abstraction against coarse abstraction with memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Case2Result {
    pub fine: Curve,
    pub coarse: Curve,
}

impl Case2Result {
    /// `setting, n, ell, stored_nonzeros, k, tv, stderr`
    pub fn table(&self) -> Table {
        let mut t = Table::new(["setting", "n", "ell", "stored_nonzeros", "k", "tv", "stderr"]);
        for c in [&self.fine, &self.coarse] {
            for (k, e) in c.tv.iter().enumerate() {
                t.push(vec![
                    c.label.clone(),
                    c.n.to_string(),
                    c.ell.to_string(),
                    c.stored_nonzeros.to_string(),
                    k.to_string(),
                    fmt_f64(e.value),
                    fmt_f64(e.stderr),
                ]);
            }
        }
        t
    }
}

pub fn run_case2(cfg: &ExperimentConfig) -> Result<Case2Result> {
    let (system, channel) = gaussian_system(cfg)?;
    let (lo, hi) = match cfg.partition {
        PartitionSpec::Grid { lo, hi, .. } => (lo, hi),
        _ => (-1.0, 1.0),
    };
    let s = &cfg.case2;
    let curve = |p: usize, ell: usize, label: &str| -> Result<Curve> {
        let partition = Arc::new(GridPartition::grid(system.dim(), p, lo, hi)?);
        Curve::compute(cfg, &system, &channel, partition, ell, label.to_string())
    };
    Ok(Case2Result { fine: curve(s.fine_p, s.fine_ell, "fine")?, coarse: curve(s.coarse_p, s.coarse_ell, "coarse")? })
}

/// Quadrant statistics of the noisy rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationReport {
    pub trace_length: usize,
    pub noise_width: f64,
    pub a1: usize,
    pub a2: usize,
    /// Times `Y_k = A2` with a successor.
    pub from_a2: u64,
    /// Times `Y_k = A2, Y_{k+1} = A1`.
    pub a2_then_a1: u64,
    /// Times `Y_k = A1, Y_{k+1} = A2` with a successor.
    pub a1_then_a2: u64,
    /// Times `Y_k = A1, Y_{k+1} = A2, Y_{k+2} = A1`.
    pub a1_a2_a1: u64,
    /// First quadrants of the noiseless rotation.
    pub noiseless_prefix: Vec<usize>,
    /// Whether the noiseless trace always advances by one quadrant.
    pub noiseless_cycles: bool,
}

impl RotationReport {
    /// Empirical `P[Y_{k+1} = A1 | Y_k = A2]`.
    pub fn one_step(&self) -> f64 {
        self.a2_then_a1 as f64 / self.from_a2 as f64
    }

    /// Empirical `P[Y_{k+2} = A1 | Y_{k+1} = A2, Y_k = A1]`.
    pub fn two_step(&self) -> f64 {
        self.a1_a2_a1 as f64 / self.a1_then_a2 as f64
    }

    pub fn to_text(&self) -> String {
        let (a1, a2) = (self.a1 + 1, self.a2 + 1);
        let mut s = String::new();
        s.push_str(&format!("trace_length {}\nnoise_width {}\n", self.trace_length, fmt_f64(self.noise_width)));
        s.push_str(&format!("A1 = quadrant {a1}, A2 = quadrant {a2}\n"));
        s.push_str(&format!(
            "P[Y(k+1)=A1 | Y(k)=A2] = {} / {} = {}\n",
            self.a2_then_a1,
            self.from_a2,
            fmt_f64(self.one_step())
        ));
        s.push_str(&format!(
            "P[Y(k+2)=A1 | Y(k+1)=A2, Y(k)=A1] = {} / {} = {}\n",
            self.a1_a2_a1,
            self.a1_then_a2,
            fmt_f64(self.two_step())
        ));
        let prefix: Vec<String> = self.noiseless_prefix.iter().map(|q| (q + 1).to_string()).collect();
        s.push_str(&format!(
            "noiseless quadrants {} ... cycle {}\n",
            prefix.join(" "),
            if self.noiseless_cycles { "holds" } else { "broken" }
        ));
        s
    }
}

pub fn run_rotation_demo(cfg: &ExperimentConfig) -> Result<RotationReport> {
    let (step, noise_width) = match cfg.system {
        SystemSpec::Rotation { step, noise_width } => (step, noise_width),
        _ => (std::f64::consts::FRAC_PI_2, std::f64::consts::PI / 10.0),
    };
    let system = StochasticSystem::rotation(step, noise_width)?;
    let partition = GridPartition::quadrants();
    let (a1, a2) = (cfg.rotation.a1, cfg.rotation.a2);
    let len = cfg.rotation.trace_length;
    let burn_in = cfg.burn_in.unwrap_or(1000);
    let y = output_trace(&system, &partition, len, burn_in, cfg.seed)?;
    let mut r = RotationReport {
        trace_length: len,
        noise_width,
        a1,
        a2,
        from_a2: 0,
        a2_then_a1: 0,
        a1_then_a2: 0,
        a1_a2_a1: 0,
        noiseless_prefix: Vec::new(),
        noiseless_cycles: true,
    };
    for w in y.windows(2) {
        if w[0] == a2 {
            r.from_a2 += 1;
            r.a2_then_a1 += u64::from(w[1] == a1);
        }
    }
    for w in y.windows(3) {
        if w[0] == a1 && w[1] == a2 {
            r.a1_then_a2 += 1;
            r.a1_a2_a1 += u64::from(w[2] == a1);
        }
    }
    let noiseless = StochasticSystem::rotation(step, 0.0)?;
    let z = output_trace(&noiseless, &partition, 1000, 0, cfg.seed)?;
    r.noiseless_prefix = z[..8].to_vec();
    r.noiseless_cycles = z.windows(2).all(|w| w[1] == (w[0] + 1) % 4);
    Ok(r)
}

/// Measured TV next to the bounds for one memory.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub ell: usize,
    pub params: SpectralParams,
    /// `(k, measured, bounds)` for `k = ℓ..=K`.
    pub rows: Vec<(usize, McEstimate, Bounds)>,
    pub crossover: Option<usize>,
}

impl BoundsReport {
    /// `k, tv_measured, tv_stderr, bound_inc, bound_dec, bound_combined, bound_raw, provenance`
    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "k",
            "tv_measured",
            "tv_stderr",
            "bound_inc",
            "bound_dec",
            "bound_combined",
            "bound_raw",
            "provenance",
        ]);
        for (k, tv, b) in &self.rows {
            t.push(vec![
                k.to_string(),
                fmt_f64(tv.value),
                fmt_f64(tv.stderr),
                fmt_f64(b.increasing),
                fmt_f64(b.decreasing),
                fmt_f64(b.combined),
                fmt_f64(b.raw),
                self.params.provenance.as_str().to_string(),
            ]);
        }
        t
    }
}

fn finish_params(cfg: &ExperimentConfig, model: &crate::MemoryMarkovModel, tv0: f64, v0: f64) -> Result<SpectralParams> {
    let b = &cfg.bounds;
    let tv0 = b.tv0.unwrap_or(tv0);
    let v0 = b.v0_norm2.unwrap_or(v0);
    match b.source {
        BoundSource::Supplied => {
            let e1 = b.e1.ok_or_else(|| Error::Config("supplied bounds need `e1`".into()))?;
            SpectralParams::supplied(b.m, e1, b.delta, b.r, v0, tv0)
        }
        BoundSource::Estimated => estimate_spectral_params_observed(model, b.m)?.with_initial(tv0, v0)?.with_delta(b.delta),
    }
}

fn bound_rows(
    params: &SpectralParams,
    ell: usize,
    measured: &[McEstimate],
) -> Result<Vec<(usize, McEstimate, Bounds)>> {
    (ell..measured.len()).map(|k| Ok((k, measured[k], bound_combined(params, k, ell)?))).collect()
}

/// Bound reports for every configured memory. Finite chains use exact
/// discrete distances (and, with `model = "exact"`, the lifted true
/// matrix); Gaussian channels use Monte-Carlo distances.
pub fn run_bounds(cfg: &ExperimentConfig) -> Result<Vec<BoundsReport>> {
    let system = cfg.system.build()?;
    let partition = Arc::new(cfg.partition.build(&system)?);
    cfg.memories
        .iter()
        .map(|&ell| {
            let built = build_abstraction(cfg, &system, partition.clone(), ell)?;
            let (params, measured) = match system.ground_truth() {
                Some(GroundTruth::FiniteChain(chain)) => {
                    if partition.n_cells() != chain.n() {
                        return Err(Error::Config("finite chains need the singleton partition".into()));
                    }
                    let a = match cfg.model {
                        ModelSource::Estimated => built,
                        ModelSource::Exact => Abstraction::from_parts(partition.clone(), exact_model(chain, ell)?, built.initial().clone())?
                            .with_leak_policy(cfg.unobserved.into()),
                    };
                    let tv0 = tv_discrete(&exact_initial_joint(chain, ell)?, a.initial().probs())?;
                    let params = finish_params(cfg, a.model(), tv0, initial_l2_norm_chain(chain)?)?;
                    let measured = a
                        .marginals(cfg.horizon)?
                        .iter()
                        .enumerate()
                        .map(|(k, m)| Ok(McEstimate { value: tv_discrete(&chain.distribution_at(k), m)?, stderr: 0.0 }))
                        .collect::<Result<Vec<_>>>()?;
                    (params, measured)
                }
                Some(GroundTruth::Gaussian(channel)) => {
                    let tv0 = joint_initial_tv_mc(channel, &built, cfg.tv_samples, cfg.seed)?.value;
                    let v0 = initial_l2_norm_mc(channel, cfg.tv_samples, cfg.seed)?.value;
                    let params = finish_params(cfg, built.model(), tv0, v0)?;
                    let samples = InvariantSamples::draw(channel, &partition, cfg.tv_samples, cfg.seed)?;
                    (params, tv_curve(&built, &samples, channel, cfg.horizon)?)
                }
                None => return Err(Error::AnalyticUnavailable("bounds need a system with a known law".into())),
            };
            Ok(BoundsReport {
                ell,
                rows: bound_rows(&params, ell, &measured)?,
                crossover: crossover(&params, ell, cfg.horizon)?,
                params,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ConfigFile, Profile};

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::with_profile(Profile::Ci);
        cfg.trace_length = 5_000;
        cfg.initial_samples = 5_000;
        cfg.tv_samples = 500;
        cfg.horizon = 10;
        cfg.memories = vec![1, 2];
        cfg
    }

    #[test]
    fn case1_table_shape_and_determinism() {
        let cfg = small();
        let a = run_case1(&cfg).unwrap().table();
        assert_eq!(a.header, vec!["k", "tv_l1", "stderr_l1", "tv_l2", "stderr_l2"]);
        assert_eq!(a.rows.len(), 11);
        assert_eq!(a.to_csv(), run_case1(&cfg).unwrap().table().to_csv());
        for v in a.numbers("tv_l1").unwrap() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn case2_reports_budgets() {
        let mut cfg = small();
        cfg.case2.fine_p = 5;
        cfg.case2.coarse_p = 1;
        let r = run_case2(&cfg).unwrap();
        assert_eq!((r.fine.n, r.coarse.n), (49, 9));
        assert!(r.fine.stored_nonzeros <= 49 * 49);
        assert!(r.coarse.stored_nonzeros <= 9 * 9 * 9);
        assert_eq!(r.table().rows.len(), 22);
    }

    #[test]
    fn short_traces_warn() {
        let mut cfg = small();
        cfg.trace_length = 500;
        // empirical weights would leave visited-at-start cells without mass
        cfg.cell_mu = CellMu::Analytic;
        let r = run_case2(&cfg).unwrap();
        assert!(r.fine.warnings.iter().any(|w| w.contains("never observed")));
    }

    #[test]
    fn case1_needs_gaussian_truth() {
        let mut cfg = small();
        cfg.system = SystemSpec::Rotation { step: 1.0, noise_width: 0.1 };
        assert!(matches!(run_case1(&cfg), Err(Error::AnalyticUnavailable(_))));
    }

    #[test]
    fn rotation_report() {
        let mut cfg = small();
        cfg.rotation.trace_length = 100_000;
        let r = run_rotation_demo(&cfg).unwrap();
        assert_eq!(r.a1_a2_a1, 0);
        assert!(r.a1_then_a2 > 1000);
        assert!(r.one_step() > 0.0);
        assert_eq!(r.noiseless_prefix.len(), 8);
        assert!(r.noiseless_cycles);
        assert!(r.to_text().contains("cycle holds"));
    }

    #[test]
    fn supplied_zero_projection_error_gives_flat_increasing_bound() {
        let text = r#"
[system]
kind = "finite_chain"
matrix = [[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]]
initial = [1.0, 0.0, 0.0]
[partition]
named = "singletons"
[run]
memories = [1]
horizon = 20
trace_length = 5000
initial_samples = 5000
model = "exact"
[bounds]
source = "supplied"
m = 2
e1 = 0.3
"#;
        let cfg = ConfigFile::parse(text).unwrap().resolve(Profile::Ci).unwrap();
        let r = &run_bounds(&cfg).unwrap()[0];
        let tv0 = r.params.tv0;
        assert!(r.rows.iter().all(|(_, _, b)| b.increasing == tv0));
        assert!(r.rows.iter().all(|(_, m, b)| m.value <= b.combined + 1e-12));
        assert_eq!(r.table().rows[0][7], "supplied");
    }

    #[test]
    fn estimated_bounds_on_gaussian_benchmark() {
        let mut cfg = small();
        cfg.memories = vec![1];
        let r = &run_bounds(&cfg).unwrap()[0];
        assert_eq!(r.params.provenance, crate::analysis::Provenance::Estimated);
        assert!(r.params.e1 > 0.9 && r.params.e1 < 1.0);
        for (_, _, b) in &r.rows {
            assert!(b.combined <= 1.0);
        }
    }
}
