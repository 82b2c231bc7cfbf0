//! Error measures and a priori bounds.
//!
//! Total variation between densities with respect to `μ` is computed exactly
//! for two piecewise constant densities and by Monte Carlo under `μ` when one
//! side is an analytic Gaussian. The Monte-Carlo estimator averages
//! `½|v_k(X_i) − ṽ(X_i)|` over `N` invariant draws, i.e. it carries the
//! `1/N` factor that a plain sum would lack.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::abstraction::{Abstraction, MemoryMarkovModel, PiecewiseConstantDensity};
use crate::error::{Error, Result};
use crate::gaussian::pairwise_sum;
use crate::partition::GridPartition;
use crate::rng::{stream, Domain};
use crate::system::{FiniteChain, GaussianBelief, GaussianChannel, MuWeightedGaussian};

/// Draws per random stream in Monte-Carlo estimators.
const SHARD: usize = 4096;
const MAX_SPECTRAL_ITERATIONS: usize = 100_000;

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySamples);
        }
        let n = values.len() as f64;
        let mean = pairwise_sum(values) / n;
        if values.len() == 1 {
            return Ok(Self { value: mean, stderr: 0.0 });
        }
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1.0);
        Ok(Self { value: mean, stderr: (var / n).sqrt() })
    }
}

/// `½ Σ_i |a_i − b_i| μ(A_i)`.
pub fn tv_piecewise(a: &PiecewiseConstantDensity, b: &PiecewiseConstantDensity) -> Result<f64> {
    if !a.compatible(b) {
        return Err(Error::PartitionMismatch);
    }
    Ok(0.5
        * a.values()
            .iter()
            .zip(b.values())
            .zip(a.cell_mu())
            .map(|((x, y), m)| (x - y).abs() * m)
            .sum::<f64>())
}

/// Total variation between two probability vectors on the same finite set.
pub fn tv_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Independent draws from the invariant law of a Gaussian channel, with
/// their cells and invariant log-densities cached so that many densities can
/// be compared on the same points.
#[derive(Debug, Clone)]
pub struct InvariantSamples {
    dim: usize,
    points: Vec<f64>,
    cells: Vec<usize>,
    invariant_log_pdf: Vec<f64>,
    partition: GridPartition,
}

impl InvariantSamples {
    pub fn draw(channel: &GaussianChannel, partition: &GridPartition, num_samples: usize, seed: u64) -> Result<Self> {
        Self::draw_in(channel, partition, num_samples, seed, Domain::TvSamples)
    }

    fn draw_in(
        channel: &GaussianChannel,
        partition: &GridPartition,
        num_samples: usize,
        seed: u64,
        domain: Domain,
    ) -> Result<Self> {
        let dim = channel.dim();
        if dim != partition.dim() {
            return Err(Error::DimensionMismatch { expected: partition.dim(), found: dim });
        }
        if num_samples == 0 {
            return Err(Error::EmptySamples);
        }
        let inv = channel.invariant();
        let shards: Vec<Vec<f64>> = (0..num_samples.div_ceil(SHARD))
            .into_par_iter()
            .map(|shard| {
                let mut rng = stream(seed, domain, shard as u64);
                let len = SHARD.min(num_samples - shard * SHARD);
                let mut out = Vec::with_capacity(len * dim);
                for _ in 0..len {
                    out.extend(inv.sample(&mut rng).iter());
                }
                out
            })
            .collect();
        let points: Vec<f64> = shards.concat();
        let cells = points
            .par_chunks(dim)
            .map(|x| partition.classify(x))
            .collect::<Result<Vec<_>>>()?;
        let invariant_log_pdf = points.par_chunks(dim).map(|x| inv.log_pdf(x)).collect();
        Ok(Self { dim, points, cells, invariant_log_pdf, partition: partition.clone() })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Monte-Carlo mean of `f(x, cell, log f_μ(x))` over the draws.
    pub fn mean_of<F>(&self, f: F) -> Result<McEstimate>
    where
        F: Fn(&[f64], usize, f64) -> f64 + Sync,
    {
        let values: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|i| f(self.point(i), self.cells[i], self.invariant_log_pdf[i]))
            .collect();
        McEstimate::from_values(&values)
    }

    /// `TV(λ_k, λ̃)` with `λ_k` the law of `belief`.
    pub fn tv(&self, exact: &MuWeightedGaussian, approx: &PiecewiseConstantDensity) -> Result<McEstimate> {
        if **approx.partition() != self.partition {
            return Err(Error::PartitionMismatch);
        }
        let values = approx.values();
        self.mean_of(|x, cell, inv| 0.5 * (exact.eval_with_invariant(x, inv) - values[cell]).abs())
    }
}

/// Monte-Carlo `TV(λ_k, λ̃)` where `λ_k` is the Gaussian `belief` and
/// `approx` a piecewise constant density, using `num_samples` invariant draws.
pub fn tv_monte_carlo(
    belief: &GaussianBelief,
    channel: &GaussianChannel,
    approx: &PiecewiseConstantDensity,
    num_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let samples = InvariantSamples::draw(channel, approx.partition(), num_samples, seed)?;
    samples.tv(&MuWeightedGaussian::new(belief, channel)?, approx)
}

/// `‖v_0‖₂` under `μ` for a Gaussian channel, by Monte Carlo. The path
/// density ratio of the first `ℓ` states reduces to the ratio at time zero,
/// so the value does not depend on `ℓ`.
pub fn initial_l2_norm_mc(channel: &GaussianChannel, num_samples: usize, seed: u64) -> Result<McEstimate> {
    let d = channel.dim();
    let trivial = GridPartition::from_cuts(vec![vec![0.0]; d])?;
    let samples = InvariantSamples::draw_in(channel, &trivial, num_samples, seed, Domain::NormSamples)?;
    let v0 = MuWeightedGaussian::new(&channel.initial_belief(), channel)?;
    let sq = samples.mean_of(|x, _, inv| v0.eval_with_invariant(x, inv).powi(2))?;
    let norm = sq.value.sqrt();
    Ok(McEstimate { value: norm, stderr: sq.stderr / (2.0 * norm) })
}

/// Exact `‖v_0^ℓ‖₂` for a finite chain: `(Σ λ_0(s)² / π(s))^{1/2}`, again
/// independent of `ℓ`.
pub fn initial_l2_norm_chain(chain: &FiniteChain) -> Result<f64> {
    let pi = chain.stationary()?;
    let mut total = 0.0;
    for (state, (&l, &p)) in chain.initial.iter().zip(&pi).enumerate() {
        if l > 0.0 && p <= 0.0 {
            return Err(Error::UnvisitedCell { cell: state, mass: l });
        }
        if l > 0.0 {
            total += l * l / p;
        }
    }
    Ok(total.sqrt())
}

/// Exact law of the first `ℓ` states of a finite chain.
pub fn exact_initial_joint(chain: &FiniteChain, ell: usize) -> Result<Vec<f64>> {
    let codec = crate::partition::SequenceCodec::new(chain.n(), ell)?;
    Ok((0..codec.size())
        .map(|i| {
            let mut p = chain.initial[codec.symbol_at(i, 0)];
            for pos in 1..ell {
                p *= chain.matrix[codec.symbol_at(i, pos - 1)][codec.symbol_at(i, pos)];
            }
            p
        })
        .collect())
}

/// Monte-Carlo `TV(λ_0^ℓ, λ̃_0^ℓ)` on `ℓ`-paths for a Gaussian channel.
///
/// Paths are drawn from the invariant-initialised channel. The estimated
/// joint density is `λ̃_0^ℓ(s) / μ̃^ℓ(s)` with the steady sequence
/// frequencies of the model; estimated mass on sequences with `μ̃^ℓ(s) = 0`
/// cannot be expressed as a density and is added to the distance as is.
pub fn joint_initial_tv_mc(
    channel: &GaussianChannel,
    abstraction: &Abstraction,
    num_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let model = abstraction.model();
    let partition = abstraction.partition();
    let (ell, n) = (model.ell(), model.n());
    if channel.dim() != partition.dim() {
        return Err(Error::DimensionMismatch { expected: partition.dim(), found: channel.dim() });
    }
    if num_samples == 0 {
        return Err(Error::EmptySamples);
    }
    let initial = abstraction.initial().probs();
    let steady = model.steady_seq_prob();
    let stranded: f64 = initial.iter().zip(steady).filter(|(_, &s)| s == 0.0).map(|(&p, _)| p).sum();
    let density: Vec<f64> = initial.iter().zip(steady).map(|(&p, &s)| if s > 0.0 { p / s } else { 0.0 }).collect();
    let v0 = MuWeightedGaussian::new(&channel.initial_belief(), channel)?;
    let inv = channel.invariant();
    let values: Vec<f64> = (0..num_samples.div_ceil(SHARD))
        .into_par_iter()
        .map(|shard| -> Result<Vec<f64>> {
            let mut rng = stream(seed, Domain::PathSamples, shard as u64);
            let len = SHARD.min(num_samples - shard * SHARD);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let x0 = inv.sample(&mut rng);
                let mut x = x0.clone();
                let mut seq = partition.classify(x.as_slice())?;
                for _ in 1..ell {
                    x = channel.a() * &x + channel.noise().sample(&mut rng);
                    seq = seq * n + partition.classify(x.as_slice())?;
                }
                out.push(0.5 * (v0.eval(x0.as_slice()) - density[seq]).abs());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let est = McEstimate::from_values(&values)?;
    Ok(McEstimate { value: (est.value + 0.5 * stranded).min(1.0), stderr: est.stderr })
}

/// Where the spectral parameters came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Supplied,
    Estimated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Supplied => "supplied",
            Provenance::Estimated => "estimated",
        }
    }
}

/// Inputs to the error bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParams {
    /// Number of dominant eigenvalues below one.
    pub m: usize,
    /// Largest eigenvalue modulus below one.
    pub e1: f64,
    /// Projection error on the dominant eigenfunctions.
    pub delta: f64,
    /// Radius containing the rest of the spectrum.
    pub r: f64,
    /// `‖v_0^ℓ‖₂`.
    pub v0_norm2: f64,
    /// `TV(λ_0^ℓ, λ̃_0^ℓ)`.
    pub tv0: f64,
    pub provenance: Provenance,
}

impl SpectralParams {
    pub fn supplied(m: usize, e1: f64, delta: f64, r: f64, v0_norm2: f64, tv0: f64) -> Result<Self> {
        let p = Self { m, e1, delta, r, v0_norm2, tv0, provenance: Provenance::Supplied };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e1 > 0.0 && self.e1 < 1.0) {
            return Err(Error::SpectralAssumption(format!("e1 = {} is not in (0, 1)", self.e1)));
        }
        if !(self.delta >= 0.0 && self.r >= 0.0 && self.v0_norm2 >= 0.0) || !self.v0_norm2.is_finite() {
            return Err(Error::InvalidParameter("delta, r and the initial norm must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.tv0) {
            return Err(Error::InvalidParameter(format!("tv0 = {} is not in [0, 1]", self.tv0)));
        }
        Ok(())
    }

    pub fn with_initial(mut self, tv0: f64, v0_norm2: f64) -> Result<Self> {
        self.tv0 = tv0;
        self.v0_norm2 = v0_norm2;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }
}

/// Leading part of the spectrum of `P_ℓ` with the eigenvalue one removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    /// `(re, im)`, sorted by decreasing modulus.
    pub eigenvalues: Vec<(f64, f64)>,
    pub iterations: usize,
    /// Number of sequences the iteration ran on.
    pub states: usize,
}

impl SpectralEstimate {
    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&(re, im)| re.hypot(im)).collect()
    }
}

struct Csr {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_model(model: &MemoryMarkovModel) -> Result<Self> {
        let unobserved = model.unobserved_rows();
        if unobserved > 0 {
            return Err(Error::SpectralAssumption(format!(
                "{unobserved} rows of the model were never observed; restrict to the observed sequences first"
            )));
        }
        let mut offsets = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for r in 0..model.size() {
            let (c, p) = model.row(r);
            cols.extend_from_slice(c);
            vals.extend_from_slice(p);
            offsets.push(cols.len());
        }
        Ok(Self { n: model.size(), offsets, cols, vals })
    }

    /// Observed sequences only, dropping transitions into unobserved ones and
    /// renormalising; repeated until every kept row has mass.
    fn observed_part(model: &MemoryMarkovModel) -> Result<Self> {
        let mut keep: Vec<bool> = (0..model.size()).map(|r| model.is_observed(r)).collect();
        loop {
            let mut changed = false;
            for r in 0..model.size() {
                if keep[r] {
                    let (c, _) = model.row(r);
                    if !c.iter().any(|&c| keep[c]) {
                        keep[r] = false;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut index = vec![usize::MAX; model.size()];
        let mut n = 0;
        for (r, &k) in keep.iter().enumerate() {
            if k {
                index[r] = n;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::SpectralAssumption("no observed sequences".into()));
        }
        let mut offsets = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for r in (0..model.size()).filter(|&r| keep[r]) {
            let (c, p) = model.row(r);
            let kept: Vec<(usize, f64)> = c.iter().zip(p).filter(|(c, _)| keep[**c]).map(|(&c, &p)| (index[c], p)).collect();
            let total: f64 = kept.iter().map(|&(_, p)| p).sum();
            cols.extend(kept.iter().map(|&(c, _)| c));
            vals.extend(kept.iter().map(|&(_, p)| p / total));
            offsets.push(cols.len());
        }
        Ok(Self { n, offsets, cols, vals })
    }

    /// `y = Pᵀ x`.
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                for k in self.offsets[r]..self.offsets[r + 1] {
                    y[self.cols[k]] += xr * self.vals[k];
                }
            }
        }
    }
}

/// Orthonormal coordinates on the sum-zero subspace, which `Pᵀ` leaves
/// invariant: columns `2..n` of the Householder reflection taking `e_1` to
/// `𝟙/√n`.
struct SumZeroBasis {
    u: Vec<f64>,
    scale: f64,
}

impl SumZeroBasis {
    fn new(n: usize) -> Self {
        let mut u = vec![1.0 / (n as f64).sqrt(); n];
        u[0] -= 1.0;
        let norm2: f64 = u.iter().map(|v| v * v).sum();
        Self { u, scale: 2.0 / norm2 }
    }

    /// `x = H [0; z]`.
    fn lift(&self, z: &[f64], x: &mut [f64]) {
        x[0] = 0.0;
        x[1..].copy_from_slice(z);
        let dot: f64 = self.u[1..].iter().zip(z).map(|(a, b)| a * b).sum();
        for (xi, ui) in x.iter_mut().zip(&self.u) {
            *xi -= self.scale * dot * ui;
        }
    }

    /// `z = (H y)[1..]`.
    fn project(&self, y: &[f64], z: &mut [f64]) {
        let dot: f64 = self.u.iter().zip(y).map(|(a, b)| a * b).sum();
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = y[i + 1] - self.scale * dot * self.u[i + 1];
        }
    }
}

fn block_spectrum(p: &Csr, count: usize) -> Result<SpectralEstimate> {
    let n = p.n;
    let dim = n.saturating_sub(1);
    let wanted = count.min(dim);
    let finish = |mut eigenvalues: Vec<(f64, f64)>, iterations| {
        eigenvalues.truncate(wanted);
        eigenvalues.resize(wanted, (0.0, 0.0));
        SpectralEstimate { eigenvalues, iterations, states: n }
    };
    if dim == 0 {
        return Ok(finish(Vec::new(), 0));
    }
    let mut block = (count + 4).min(dim);
    let basis = SumZeroBasis::new(n);
    let mut rng = stream(0, Domain::Spectral, 0);
    let mut q = DMatrix::<f64>::from_fn(dim, block, |_, _| StandardNormal.sample(&mut rng)).qr().q();
    let (mut x, mut y) = (vec![0.0; n], vec![0.0; n]);
    let mut previous: Option<Vec<f64>> = None;
    for iteration in 1..=MAX_SPECTRAL_ITERATIONS {
        let mut z = DMatrix::<f64>::zeros(dim, block);
        for j in 0..block {
            basis.lift(q.column(j).as_slice(), &mut x);
            p.apply_transpose(&x, &mut y);
            basis.project(&y, z.column_mut(j).as_mut_slice());
        }
        if iteration % 10 == 1 || block == dim {
            let ritz = ritz_values(&q, &z);
            let moduli: Vec<f64> = ritz.iter().take(wanted).map(|&(re, im)| re.hypot(im)).collect();
            if let Some(prev) = &previous {
                if prev.len() == moduli.len() && prev.iter().zip(&moduli).all(|(a, b)| (a - b).abs() <= 1e-13) {
                    return Ok(finish(ritz, iteration));
                }
            }
            previous = Some(moduli);
        }
        // directions the operator annihilates carry no spectral information
        let qr = z.col_piv_qr();
        let r = qr.r();
        let top = r[(0, 0)].abs();
        let rank = (0..block).take_while(|&j| r[(j, j)].abs() > 1e-12 * top.max(f64::MIN_POSITIVE)).count();
        if rank == 0 || top == 0.0 {
            return Ok(finish(Vec::new(), iteration));
        }
        q = qr.q().columns(0, rank).into_owned();
        if rank < block {
            block = rank;
            previous = None;
        }
    }
    Err(Error::EigenNonConvergence(MAX_SPECTRAL_ITERATIONS))
}

fn ritz_values(q: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let h = q.transpose() * z;
    let mut ev: Vec<(f64, f64)> = h.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    ev.sort_by(|a, b| b.0.hypot(b.1).total_cmp(&a.0.hypot(a.1)).then(b.1.total_cmp(&a.1)));
    ev
}

/// The `count` largest-modulus eigenvalues of `P_ℓ` other than the
/// stationary eigenvalue one, by block power iteration on the sum-zero
/// subspace with Rayleigh-Ritz extraction.
pub fn estimate_spectrum(model: &MemoryMarkovModel, count: usize) -> Result<SpectralEstimate> {
    block_spectrum(&Csr::from_model(model)?, count)
}

/// As [`estimate_spectrum`], on the chain restricted to observed sequences.
pub fn estimate_spectrum_observed(model: &MemoryMarkovModel, count: usize) -> Result<SpectralEstimate> {
    block_spectrum(&Csr::observed_part(model)?, count)
}

fn params_from_spectrum(est: &SpectralEstimate, m: usize) -> Result<SpectralParams> {
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one dominant eigenvalue".into()));
    }
    let moduli = est.moduli();
    let e1 = *moduli
        .first()
        .ok_or_else(|| Error::SpectralAssumption("the chain has a single state".into()))?;
    if e1 >= 1.0 - 1e-9 {
        return Err(Error::SpectralAssumption(format!(
            "second eigenvalue has modulus {e1}; the chain is reducible or periodic"
        )));
    }
    let params = SpectralParams {
        m,
        e1,
        delta: 0.0,
        r: moduli.get(m).copied().unwrap_or(0.0),
        v0_norm2: 1.0,
        tv0: 0.0,
        provenance: Provenance::Estimated,
    };
    params.validate()?;
    Ok(params)
}

/// Heuristic bound inputs read off `P_ℓ`: `e1` is the second largest
/// eigenvalue modulus and `r` the modulus following the `m` dominant ones.
/// `delta` is set to zero; `tv0` and `v0_norm2` are placeholders (0 and 1)
/// to be filled with [`SpectralParams::with_initial`].
pub fn estimate_spectral_params(model: &MemoryMarkovModel, m: usize) -> Result<SpectralParams> {
    params_from_spectrum(&estimate_spectrum(model, m + 1)?, m)
}

/// As [`estimate_spectral_params`], restricted to observed sequences.
pub fn estimate_spectral_params_observed(model: &MemoryMarkovModel, m: usize) -> Result<SpectralParams> {
    params_from_spectrum(&estimate_spectrum_observed(model, m + 1)?, m)
}

fn check_horizon(k: usize, ell: usize) -> Result<()> {
    if k < ell {
        return Err(Error::InvalidParameter(format!("bounds hold for k >= ell, got k={k}, ell={ell}")));
    }
    Ok(())
}

/// `tv0 + (m e1 δ + r) (1 − e1^{k−ℓ+1}) / (1 − e1) ‖v_0^ℓ‖₂`.
pub fn bound_increasing(p: &SpectralParams, k: usize, ell: usize) -> Result<f64> {
    p.validate()?;
    check_horizon(k, ell)?;
    let steps = (k - ell + 1) as i32;
    let geometric = (1.0 - p.e1.powi(steps)) / (1.0 - p.e1);
    Ok(p.tv0 + (p.m as f64 * p.e1 * p.delta + p.r) * geometric * p.v0_norm2)
}

/// `e1^{k−ℓ+1} ‖v_0^ℓ‖₂`.
pub fn bound_decreasing(p: &SpectralParams, k: usize, ell: usize) -> Result<f64> {
    p.validate()?;
    check_horizon(k, ell)?;
    Ok(p.e1.powi((k - ell + 1) as i32) * p.v0_norm2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub increasing: f64,
    pub decreasing: f64,
    /// `min(increasing, decreasing)`, possibly above one.
    pub raw: f64,
    /// `raw` clipped at one.
    pub combined: f64,
}

pub fn bound_combined(p: &SpectralParams, k: usize, ell: usize) -> Result<Bounds> {
    let increasing = bound_increasing(p, k, ell)?;
    let decreasing = bound_decreasing(p, k, ell)?;
    let raw = increasing.min(decreasing);
    Ok(Bounds { increasing, decreasing, raw, combined: raw.min(1.0) })
}

/// First `k` in `[ℓ, k_max]` from which the decreasing bound is the smaller.
pub fn crossover(p: &SpectralParams, ell: usize, k_max: usize) -> Result<Option<usize>> {
    let dec_wins = |k| -> Result<bool> { Ok(bound_decreasing(p, k, ell)? <= bound_increasing(p, k, ell)?) };
    if k_max < ell || !dec_wins(k_max)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (ell, k_max);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if dec_wins(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(Some(lo))
}

/// Builds the exact-spectrum model used to check the bounds: the
/// memory-`ℓ` lift of a chain, whose nonzero spectrum is that of the chain.
pub fn exact_model(chain: &FiniteChain, ell: usize) -> Result<MemoryMarkovModel> {
    MemoryMarkovModel::exact_lift(&chain.matrix, &chain.stationary()?, ell)
}

/// Convenience for analytic trajectories `λ_0, …, λ_K` of a Gaussian channel
/// prepared for density evaluation.
pub fn analytic_densities(channel: &GaussianChannel, horizon: usize) -> Result<Vec<MuWeightedGaussian>> {
    channel
        .initial_belief()
        .trajectory(channel, horizon)?
        .iter()
        .map(|b| MuWeightedGaussian::new(b, channel))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use crate::gaussian::{gauss_legendre, normal_pdf};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn two_cells() -> Arc<GridPartition> {
        Arc::new(GridPartition::integer_cells(2).unwrap())
    }

    fn pcd(values: Vec<f64>, mu: &[f64]) -> PiecewiseConstantDensity {
        let part = Arc::new(GridPartition::integer_cells(values.len()).unwrap());
        PiecewiseConstantDensity::new(part, values, mu.into()).unwrap()
    }

    fn model_of(matrix: Vec<Vec<f64>>) -> MemoryMarkovModel {
        let n = matrix.len();
        let rows = matrix
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, &p)| (j, p)).collect())
            .collect();
        MemoryMarkovModel::from_rows(1, n, rows, vec![1.0 / n as f64; n], vec![1.0 / n as f64; n]).unwrap()
    }

    fn scalar_channel(a: f64, sigma_w: f64, m0: f64, s0: f64) -> GaussianChannel {
        GaussianChannel::new(
            DMatrix::from_element(1, 1, a),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, sigma_w),
            DVector::from_element(1, m0),
            DMatrix::from_element(1, 1, s0),
        )
        .unwrap()
    }

    #[test]
    fn tv_piecewise_examples() {
        let a = pcd(vec![2.0, 0.0], &[0.5, 0.5]);
        let b = pcd(vec![0.0, 2.0], &[0.5, 0.5]);
        assert_eq!(tv_piecewise(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_piecewise(&a, &b).unwrap(), 1.0);
        let c = pcd(vec![4.0, 0.0, 0.0], &[0.25, 0.25, 0.5]);
        let d = pcd(vec![0.0, 0.0, 2.0], &[0.25, 0.25, 0.5]);
        assert_eq!(tv_piecewise(&c, &d).unwrap(), 1.0);
        assert!(matches!(tv_piecewise(&a, &c), Err(Error::PartitionMismatch)));
        let other_mu = PiecewiseConstantDensity::new(two_cells(), vec![1.25, 0.0], [0.8, 0.2].into()).unwrap();
        assert!(tv_piecewise(&a, &other_mu).is_err());
    }

    fn arb_density() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 4).prop_map(|w| {
            let total: f64 = w.iter().sum::<f64>() + 1e-9;
            // values against cell weights 0.1, 0.2, 0.3, 0.4
            w.iter().zip([0.1, 0.2, 0.3, 0.4]).map(|(x, m)| x / total / m).collect()
        })
    }

    proptest! {
        #[test]
        fn tv_piecewise_is_a_metric(a in arb_density(), b in arb_density(), c in arb_density()) {
            let mu = [0.1, 0.2, 0.3, 0.4];
            let part = Arc::new(GridPartition::integer_cells(4).unwrap());
            let mk = |v: &Vec<f64>| {
                let total: f64 = v.iter().zip(mu).map(|(x, m)| x * m).sum();
                let v = v.iter().map(|x| x / total).collect();
                PiecewiseConstantDensity::new(part.clone(), v, mu.into()).unwrap()
            };
            let (a, b, c) = (mk(&a), mk(&b), mk(&c));
            let ab = tv_piecewise(&a, &b).unwrap();
            prop_assert!((ab - tv_piecewise(&b, &a).unwrap()).abs() < 1e-15);
            prop_assert!(ab <= tv_piecewise(&a, &c).unwrap() + tv_piecewise(&c, &b).unwrap() + 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert_eq!(tv_piecewise(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn mc_tv_of_invariant_against_constant_is_zero() {
        let ch = GaussianChannel::benchmark_2d();
        let part = Arc::new(GridPartition::grid(2, 3, -1.0, 1.0).unwrap());
        let mu: Vec<f64> = vec![1.0 / 25.0; 25];
        let one = PiecewiseConstantDensity::uniform(part, mu.into()).unwrap();
        let est = tv_monte_carlo(&ch.invariant_belief(), &ch, &one, 10_000, 0).unwrap();
        assert!(est.value <= 3.0 * est.stderr + 1e-12, "{est:?}");
    }

    #[test]
    fn mc_tv_is_reproducible_and_seed_stable() {
        let ch = GaussianChannel::benchmark_2d();
        let part = Arc::new(GridPartition::grid(2, 3, -1.0, 1.0).unwrap());
        let one = PiecewiseConstantDensity::uniform(part, vec![1.0 / 25.0; 25].into()).unwrap();
        let b = ch.initial_belief().trajectory(&ch, 10).unwrap().pop().unwrap();
        let a1 = tv_monte_carlo(&b, &ch, &one, 10_000, 1).unwrap();
        assert_eq!(a1, tv_monte_carlo(&b, &ch, &one, 10_000, 1).unwrap());
        let a2 = tv_monte_carlo(&b, &ch, &one, 10_000, 2).unwrap();
        assert!((a1.value - a2.value).abs() < 0.02);
    }

    /// `½ ∫ |f_k(x) − ṽ(x) f_μ(x)| dx` by composite quadrature, per cell.
    fn quadrature_tv_1d(belief: (f64, f64), inv: (f64, f64), cuts: &[f64], values: &[f64]) -> f64 {
        let f = |x: f64, (m, s2): (f64, f64)| normal_pdf((x - m) / s2.sqrt()) / s2.sqrt();
        let mut edges = vec![-40.0];
        edges.extend_from_slice(cuts);
        edges.push(40.0);
        edges
            .windows(2)
            .zip(values)
            .map(|(w, &v)| gauss_legendre(|x| (f(x, belief) - v * f(x, inv)).abs(), w[0], w[1], 0.01))
            .sum::<f64>()
            * 0.5
    }

    #[test]
    fn mc_tv_matches_quadrature_in_one_dimension() {
        // invariant N(0, 1); belief N(0.3, 0.5); approximation on a fine grid
        let ch = scalar_channel(0.6, 0.64, 0.3, 0.5);
        let part = Arc::new(GridPartition::grid(1, 40, -3.0, 3.0).unwrap());
        let mu = crate::abstraction::invariant_cell_mass(&crate::StochasticSystem::linear_gaussian(ch.clone()), &part).unwrap();
        let belief = ch.initial_belief();
        let lam: Vec<f64> = (0..part.n_cells())
            .map(|c| {
                let (lo, hi) = part.cell_bounds(c);
                crate::gaussian::rectangle_probability(&[0.3], &DMatrix::from_element(1, 1, 0.5), &lo, &hi).unwrap()
            })
            .collect();
        let values: Vec<f64> = lam.iter().zip(&mu).map(|(l, m)| l / m).collect();
        let approx = PiecewiseConstantDensity::new(part.clone(), values.clone(), mu.into()).unwrap();
        let oracle = quadrature_tv_1d((0.3, 0.5), (0.0, 1.0), &part.cuts()[0], &values);
        let est = tv_monte_carlo(&belief, &ch, &approx, 100_000, 0).unwrap();
        assert!((est.value - oracle).abs() < 0.01, "{est:?} vs {oracle}");
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(pcd(vec![1.0; 3], &[0.2, 0.3, 0.5]).l2_norm(), 1.0);
        assert_relative_eq!(pcd(vec![2.0, 0.0], &[0.5, 0.5]).l2_norm(), 2f64.sqrt());
    }

    #[test]
    fn initial_norm_matches_closed_form() {
        let ch = GaussianChannel::benchmark_2d();
        // ∫ f₀²/f_μ dx = |Σμ|^{1/2} |Σ0|^{-1} |Q|^{-1/2} exp(½(bᵀQ⁻¹b − c))
        // with Q = 2Σ0⁻¹ − Σμ⁻¹, b = 2Σ0⁻¹m0 − Σμ⁻¹mμ, c = 2m0ᵀΣ0⁻¹m0 − mμᵀΣμ⁻¹mμ
        let s0 = ch.initial().cov().clone();
        let smu = ch.invariant().cov().clone();
        let p0 = s0.clone().try_inverse().unwrap();
        let pmu = smu.clone().try_inverse().unwrap();
        let m0 = ch.initial().mean().clone();
        let mmu = ch.invariant().mean().clone();
        let prec = &p0 * 2.0 - &pmu;
        let lin = &p0 * &m0 * 2.0 - &pmu * &mmu;
        let quad = 2.0 * (m0.transpose() * &p0 * &m0)[(0, 0)] - (mmu.transpose() * &pmu * &mmu)[(0, 0)];
        let cov = prec.clone().try_inverse().unwrap();
        let exponent = 0.5 * ((lin.transpose() * &cov * &lin)[(0, 0)] - quad);
        let det = |m: &DMatrix<f64>| m.determinant();
        let closed = (det(&smu).sqrt() / det(&s0) / det(&prec).sqrt() * exponent.exp()).sqrt();
        let a = initial_l2_norm_mc(&ch, 100_000, 0).unwrap();
        let b = initial_l2_norm_mc(&ch, 100_000, 1).unwrap();
        assert!((a.value - closed).abs() / closed < 0.02, "{a:?} vs {closed}");
        assert!((a.value - b.value).abs() / closed < 0.02);
    }

    #[test]
    fn chain_initial_norm() {
        let chain = FiniteChain::new(
            vec![vec![0.5, 0.3, 0.2], vec![0.3, 0.4, 0.3], vec![0.2, 0.3, 0.5]],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        assert_relative_eq!(initial_l2_norm_chain(&chain).unwrap(), 3f64.sqrt(), epsilon = 1e-9);
        let joint = exact_initial_joint(&chain, 2).unwrap();
        assert_relative_eq!(joint.iter().sum::<f64>(), 1.0);
        assert_eq!(joint[1], 0.3);
    }

    #[test]
    fn spectral_examples() {
        let p = estimate_spectral_params(&model_of(vec![vec![0.9, 0.1], vec![0.2, 0.8]]), 1).unwrap();
        assert!((p.e1 - 0.7).abs() < 1e-8);
        assert_eq!(p.r, 0.0);
        assert_eq!(p.provenance, Provenance::Estimated);
        let identity = model_of(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(estimate_spectral_params(&identity, 1), Err(Error::SpectralAssumption(_))));
        let alternating = model_of(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(estimate_spectral_params(&alternating, 1), Err(Error::SpectralAssumption(_))));
    }

    #[test]
    fn spectrum_of_oracle_chain_and_its_lift() {
        let chain = FiniteChain::new(
            vec![vec![0.5, 0.3, 0.2], vec![0.3, 0.4, 0.3], vec![0.2, 0.3, 0.5]],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        for ell in 1..=3 {
            let est = estimate_spectrum(&exact_model(&chain, ell).unwrap(), 3).unwrap();
            let moduli = est.moduli();
            assert!((moduli[0] - 0.3).abs() < 1e-10, "ell={ell}: {moduli:?}");
            assert!((moduli[1] - 0.1).abs() < 1e-10);
            assert!(moduli.get(2).is_none_or(|&v| v < 1e-6));
        }
    }

    #[test]
    fn spectrum_of_larger_sparse_chain() {
        // lazy random walk on a cycle of 50 states: eigenvalues 0.5 + 0.5 cos(2πj/50)
        let n = 50;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] += 0.5;
                r[(i + 1) % n] += 0.25;
                r[(i + n - 1) % n] += 0.25;
                r
            })
            .collect();
        let est = estimate_spectrum(&model_of(rows), 2).unwrap();
        let expected = 0.5 + 0.5 * (2.0 * std::f64::consts::PI / n as f64).cos();
        assert!((est.moduli()[0] - expected).abs() < 1e-8, "{est:?}");
    }

    #[test]
    fn restricted_spectrum_skips_unobserved_rows() {
        let rows = vec![vec![(0, 0.9), (1, 0.1)], vec![(0, 0.2), (1, 0.8)], vec![]];
        let m = MemoryMarkovModel::from_rows(1, 3, rows, vec![0.5, 0.5, 0.0], vec![0.5, 0.5, 0.0]).unwrap();
        assert!(estimate_spectral_params(&m, 1).is_err());
        let p = estimate_spectral_params_observed(&m, 1).unwrap();
        assert!((p.e1 - 0.7).abs() < 1e-8);
    }

    #[test]
    fn bound_examples() {
        let p = SpectralParams::supplied(1, 0.5, 0.1, 0.05, 1.0, 0.0).unwrap();
        assert_relative_eq!(bound_increasing(&p, 2, 2).unwrap(), 0.1, epsilon = 1e-15);
        let q = SpectralParams::supplied(1, 0.5, 0.0, 0.0, 2.0, 0.0).unwrap();
        assert_relative_eq!(bound_decreasing(&q, 3, 2).unwrap(), 0.5);
        let unit = SpectralParams::supplied(1, 0.4, 0.0, 0.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(bound_decreasing(&unit, 3, 3).unwrap(), 0.4);
        let exact = SpectralParams::supplied(2, 0.3, 0.0, 0.0, 3f64.sqrt(), 0.05).unwrap();
        for k in 1..50 {
            assert_eq!(bound_increasing(&exact, k, 1).unwrap(), 0.05);
            let b = bound_combined(&exact, k, 1).unwrap();
            assert_eq!(b.raw, 0.05f64.min(0.3f64.powi(k as i32) * 3f64.sqrt()));
        }
        assert!(bound_increasing(&p, 1, 2).is_err());
        assert!(SpectralParams::supplied(1, 1.0, 0.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn bounds_have_two_regimes() {
        let p = SpectralParams::supplied(2, 0.9, 0.2, 0.05, 3.0, 0.1).unwrap();
        for k in 2..200 {
            assert!(bound_increasing(&p, k + 1, 2).unwrap() >= bound_increasing(&p, k, 2).unwrap());
            assert!(bound_decreasing(&p, k + 1, 2).unwrap() < bound_decreasing(&p, k, 2).unwrap());
            let b = bound_combined(&p, k, 2).unwrap();
            assert!(b.combined <= 1.0 && b.combined <= b.raw);
        }
        let k = crossover(&p, 2, 1000).unwrap().unwrap();
        assert!(bound_decreasing(&p, k, 2).unwrap() <= bound_increasing(&p, k, 2).unwrap());
        assert!(bound_decreasing(&p, k - 1, 2).unwrap() > bound_increasing(&p, k - 1, 2).unwrap());
        // raw bounds above one are reported as such
        assert!(bound_combined(&p, 2, 2).unwrap().raw > 1.0);
        assert_eq!(bound_combined(&p, 2, 2).unwrap().combined, 1.0);
    }
}
