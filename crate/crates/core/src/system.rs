//! Continuous-state stochastic systems `x' ~ τ(·|x)`, `x₀ ~ λ₀`.
//!
//! Besides arbitrary sampler-backed systems this module provides the
//! linear-Gaussian family, whose state law stays Gaussian and can be
//! propagated exactly, the noisy circle rotation, and finite Markov chains
//! embedded on the integers (useful as exact oracles).

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::rng::{stream, Domain, SimRng};

pub type State = DVector<f64>;

type StepFn = dyn Fn(&State, &mut SimRng) -> State + Send + Sync;
type InitFn = dyn Fn(&mut SimRng) -> State + Send + Sync;

/// Exact description of a system, when one is known.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum GroundTruth {
    Gaussian(GaussianChannel),
    FiniteChain(FiniteChain),
}

/// A sampler for the transition kernel and the initial measure.
#[derive(Clone)]
pub struct StochasticSystem {
    dim: usize,
    step: Arc<StepFn>,
    init: Arc<InitFn>,
    truth: Option<GroundTruth>,
}

impl fmt::Debug for StochasticSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StochasticSystem")
            .field("dim", &self.dim)
            .field("truth", &self.truth)
            .finish_non_exhaustive()
    }
}

impl StochasticSystem {
    /// Wraps arbitrary samplers. The step sampler must map `dim`-vectors to
    /// `dim`-vectors.
    pub fn new<S, I>(dim: usize, step: S, init: I) -> Self
    where
        S: Fn(&State, &mut SimRng) -> State + Send + Sync + 'static,
        I: Fn(&mut SimRng) -> State + Send + Sync + 'static,
    {
        Self { dim, step: Arc::new(step), init: Arc::new(init), truth: None }
    }

    /// `x' = A x + w`, `w ~ N(m_w, Σ_w)`, `x₀ ~ N(m₀, Σ₀)`.
    pub fn linear_gaussian(channel: GaussianChannel) -> Self {
        let noise = channel.noise.clone();
        let initial = channel.initial.clone();
        let a = channel.a.clone();
        Self {
            dim: channel.dim(),
            step: Arc::new(move |x, rng| &a * x + noise.sample(rng)),
            init: Arc::new(move |rng| initial.sample(rng)),
            truth: Some(GroundTruth::Gaussian(channel)),
        }
    }

    /// `x' = x + step + w (mod 2π)` with `w` uniform on `[0, noise_width]`,
    /// started uniformly on the circle.
    pub fn rotation(step: f64, noise_width: f64) -> Result<Self> {
        if !(noise_width >= 0.0) || !step.is_finite() || !noise_width.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rotation needs a finite step and noise_width >= 0, got step={step}, noise_width={noise_width}"
            )));
        }
        Ok(Self::new(
            1,
            move |x, rng| {
                let w = if noise_width > 0.0 { rng.random::<f64>() * noise_width } else { 0.0 };
                DVector::from_element(1, wrap_angle(x[0] + step + w))
            },
            |rng| DVector::from_element(1, rng.random::<f64>() * TAU),
        ))
    }

    /// The circle rotation with the default quarter turn and `π/10` noise.
    pub fn default_rotation() -> Self {
        Self::rotation(FRAC_PI_2, PI / 10.0).expect("valid defaults")
    }

    /// A finite chain whose state `i` is embedded as the real number `i`.
    pub fn finite_chain(chain: FiniteChain) -> Self {
        let rows = chain.cumulative_rows();
        let init = cumulative(&chain.initial);
        Self {
            dim: 1,
            step: Arc::new(move |x, rng| {
                let i = x[0] as usize;
                DVector::from_element(1, draw(&rows[i], rng) as f64)
            }),
            init: Arc::new(move |rng| DVector::from_element(1, draw(&init, rng) as f64)),
            truth: Some(GroundTruth::FiniteChain(chain)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    pub fn gaussian(&self) -> Option<&GaussianChannel> {
        match &self.truth {
            Some(GroundTruth::Gaussian(g)) => Some(g),
            _ => None,
        }
    }

    pub fn chain(&self) -> Option<&FiniteChain> {
        match &self.truth {
            Some(GroundTruth::FiniteChain(c)) => Some(c),
            _ => None,
        }
    }

    pub fn sample_initial(&self, rng: &mut SimRng) -> State {
        (self.init)(rng)
    }

    pub fn sample_step(&self, x: &State, rng: &mut SimRng) -> State {
        (self.step)(x, rng)
    }

    /// `horizon + 1` states; element 0 from the initial measure.
    pub fn simulate_trajectory(&self, horizon: usize, seed: u64) -> Vec<State> {
        let mut rng = stream(seed, Domain::Trajectory, 0);
        self.simulate_with(horizon, &mut rng)
    }

    pub fn simulate_with(&self, horizon: usize, rng: &mut SimRng) -> Vec<State> {
        let mut out = Vec::with_capacity(horizon + 1);
        let mut x = self.sample_initial(rng);
        for _ in 0..horizon {
            let next = self.sample_step(&x, rng);
            out.push(std::mem::replace(&mut x, next));
        }
        out.push(x);
        out
    }
}

fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y >= TAU {
        0.0
    } else {
        y
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut SimRng) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// A finite Markov chain with an initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain {
    pub matrix: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl FiniteChain {
    pub fn new(matrix: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let n = matrix.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty chain".into()));
        }
        check_distribution(&initial, n, "initial distribution")?;
        for (i, row) in matrix.iter().enumerate() {
            check_distribution(row, n, &format!("row {i}"))?;
        }
        Ok(Self { matrix, initial })
    }

    pub fn n(&self) -> usize {
        self.matrix.len()
    }

    fn cumulative_rows(&self) -> Vec<Vec<f64>> {
        self.matrix.iter().map(|r| cumulative(r)).collect()
    }

    /// `p ↦ p P`.
    pub fn step_distribution(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for (i, &pi) in p.iter().enumerate() {
            for (j, &pij) in self.matrix[i].iter().enumerate() {
                out[j] += pi * pij;
            }
        }
        out
    }

    /// Law of the state at time `k`.
    pub fn distribution_at(&self, k: usize) -> Vec<f64> {
        (0..k).fold(self.initial.clone(), |p, _| self.step_distribution(&p))
    }

    /// Stationary distribution by power iteration. Errors if the chain does
    /// not settle within `10^6` steps.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.n();
        let mut p = vec![1.0 / n as f64; n];
        for _ in 0..1_000_000 {
            // lazy step avoids oscillation on periodic chains
            let stepped = self.step_distribution(&p);
            let next: Vec<f64> = p.iter().zip(&stepped).map(|(a, b)| 0.5 * (a + b)).collect();
            let change = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            p = next;
            if change < 1e-15 {
                return Ok(p);
            }
        }
        Err(Error::UnstableDynamics("finite chain stationary distribution did not converge".into()))
    }
}

fn check_distribution(p: &[f64], n: usize, what: &str) -> Result<()> {
    if p.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: p.len() });
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("{what} is not a probability vector")));
    }
    Ok(())
}

/// Linear-Gaussian dynamics together with their invariant law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannel {
    a: DMatrix<f64>,
    noise: Gaussian,
    initial: Gaussian,
    invariant: Gaussian,
}

impl GaussianChannel {
    /// Builds the channel and solves for the invariant mean and covariance.
    pub fn new(
        a: DMatrix<f64>,
        m_w: DVector<f64>,
        sigma_w: DMatrix<f64>,
        m_0: DVector<f64>,
        sigma_0: DMatrix<f64>,
    ) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: a.ncols() });
        }
        for len in [m_w.len(), m_0.len(), sigma_w.nrows(), sigma_0.nrows()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, found: len });
            }
        }
        let sigma_mu = solve_invariant_covariance(&a, &sigma_w)?;
        let eye = DMatrix::<f64>::identity(d, d);
        let m_mu = (eye - &a)
            .lu()
            .solve(&m_w)
            .ok_or_else(|| Error::UnstableDynamics("I - A is singular".into()))?;
        Ok(Self {
            a,
            noise: Gaussian::new(m_w, sigma_w)?,
            initial: Gaussian::new(m_0, sigma_0)?,
            invariant: Gaussian::new(m_mu, sigma_mu)?,
        })
    }

    /// Linear-Gaussian system of the two-dimensional benchmark:
    /// `A = [[0.995, 0.005], [0, 0.98]]`, `Σ_w = 0.07 I`, `m₀ = (-0.4, -0.4)`,
    /// `Σ₀ = 0.3 I`.
    pub fn benchmark_2d() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[0.995, 0.005, 0.0, 0.98]),
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 0.07,
            DVector::from_vec(vec![-0.4, -0.4]),
            DMatrix::identity(2, 2) * 0.3,
        )
        .expect("benchmark system is stable")
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn noise(&self) -> &Gaussian {
        &self.noise
    }

    pub fn initial(&self) -> &Gaussian {
        &self.initial
    }

    /// The invariant law `N(m_μ, Σ_μ)`.
    pub fn invariant(&self) -> &Gaussian {
        &self.invariant
    }

    pub fn initial_belief(&self) -> GaussianBelief {
        GaussianBelief::new(self.initial.mean().clone(), self.initial.cov().clone(), 0)
    }

    pub fn invariant_belief(&self) -> GaussianBelief {
        GaussianBelief::new(self.invariant.mean().clone(), self.invariant.cov().clone(), 0)
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solves `Σ = A Σ Aᵀ + Σ_w` by fixed-point iteration from `Σ = Σ_w`, stopping
/// once no entry moves by more than `1e-12`.
pub fn solve_invariant_covariance(a: &DMatrix<f64>, sigma_w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const MAX_ITER: usize = 1_000_000;
    let rho = spectral_radius(a);
    if !(rho < 1.0) {
        return Err(Error::UnstableDynamics(format!("spectral radius {rho} is not below 1")));
    }
    let at = a.transpose();
    let mut sigma = sigma_w.clone();
    for _ in 0..MAX_ITER {
        let next = a * &sigma * &at + sigma_w;
        let change = (&next - &sigma).amax();
        sigma = next;
        if !change.is_finite() {
            break;
        }
        if change < 1e-12 {
            return Ok((&sigma + sigma.transpose()) * 0.5);
        }
    }
    Err(Error::UnstableDynamics(format!("invariant covariance did not converge in {MAX_ITER} iterations")))
}

/// The law `λ_k = N(m_k, Σ_k)` of a linear-Gaussian state at time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub time_index: usize,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, time_index: usize) -> Self {
        Self { mean, covariance, time_index }
    }

    /// One exact step: `m' = A m + m_w`, `Σ' = A Σ Aᵀ + Σ_w`.
    pub fn propagate(&self, channel: &GaussianChannel) -> Result<Self> {
        let d = channel.dim();
        if self.mean.len() != d || self.covariance.nrows() != d || self.covariance.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: self.mean.len() });
        }
        let a = channel.a();
        let cov = a * &self.covariance * a.transpose() + channel.noise().cov();
        Ok(Self {
            mean: a * &self.mean + channel.noise().mean(),
            covariance: (&cov + cov.transpose()) * 0.5,
            time_index: self.time_index + 1,
        })
    }

    /// `λ₀, λ₁, …, λ_K`.
    pub fn trajectory(&self, channel: &GaussianChannel, horizon: usize) -> Result<Vec<Self>> {
        let mut out = Vec::with_capacity(horizon + 1);
        out.push(self.clone());
        for _ in 0..horizon {
            let next = out.last().expect("nonempty").propagate(channel)?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn to_gaussian(&self) -> Result<Gaussian> {
        Gaussian::new(self.mean.clone(), self.covariance.clone())
    }

    /// The μ-weighted density `v = dλ/dμ` at `x`: the ratio of this belief's
    /// Lebesgue density to the invariant one.
    pub fn mu_weighted_density(&self, channel: &GaussianChannel, x: &[f64]) -> Result<f64> {
        Ok(MuWeightedGaussian::new(self, channel)?.eval(x))
    }
}

/// A Gaussian belief prepared for repeated evaluation of `dλ/dμ`.
#[derive(Debug, Clone)]
pub struct MuWeightedGaussian {
    belief: Gaussian,
    invariant: Gaussian,
}

impl MuWeightedGaussian {
    pub fn new(belief: &GaussianBelief, channel: &GaussianChannel) -> Result<Self> {
        Ok(Self { belief: belief.to_gaussian()?, invariant: channel.invariant().clone() })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.belief.log_pdf(x) - self.invariant.log_pdf(x)).exp()
    }

    /// Same as [`eval`](Self::eval) with the invariant log-density supplied.
    pub fn eval_with_invariant(&self, x: &[f64], invariant_log_pdf: f64) -> f64 {
        (self.belief.log_pdf(x) - invariant_log_pdf).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_channel() -> GaussianChannel {
        GaussianChannel::benchmark_2d()
    }

    #[test]
    fn zero_noise_identity_system_stays_put() {
        let c = DVector::from_vec(vec![1.5, -2.0]);
        let c0 = c.clone();
        let sys = StochasticSystem::new(2, |x, _| x.clone(), move |_| c0.clone());
        let traj = sys.simulate_trajectory(3, 0);
        assert_eq!(traj.len(), 4);
        assert!(traj.iter().all(|x| *x == c));
    }

    #[test]
    fn trajectories_are_bit_reproducible() {
        let sys = StochasticSystem::linear_gaussian(example_channel());
        let a = sys.simulate_trajectory(200, 42);
        let b = sys.simulate_trajectory(200, 42);
        let c = sys.simulate_trajectory(200, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn long_trace_covariance_matches_invariant() {
        // The slow pole (0.995) leaves only a few hundred effective samples in
        // the tail, so the tolerance is four batch-means standard errors.
        let ch = example_channel();
        let sys = StochasticSystem::linear_gaussian(ch.clone());
        let traj = sys.simulate_trajectory(100_000, 0);
        let tail = &traj[50_001..];
        let n = tail.len() as f64;
        let mean = tail.iter().fold(DVector::zeros(2), |acc, x| acc + x) / n;
        let products: Vec<DMatrix<f64>> = tail.iter().map(|x| (x - &mean) * (x - &mean).transpose()).collect();
        let cov = products.iter().fold(DMatrix::zeros(2, 2), |acc, p| acc + p) / n;
        let batches: Vec<DMatrix<f64>> = products
            .chunks(products.len() / 25)
            .map(|c| c.iter().fold(DMatrix::zeros(2, 2), |acc, p| acc + p) / c.len() as f64)
            .collect();
        let target = ch.invariant().cov();
        for i in 0..2 {
            for j in 0..2 {
                let b: Vec<f64> = batches.iter().map(|m| m[(i, j)]).collect();
                let bm = b.iter().sum::<f64>() / b.len() as f64;
                let var = b.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (b.len() - 1) as f64;
                let se = (var / b.len() as f64).sqrt();
                assert!((cov[(i, j)] - target[(i, j)]).abs() < 4.0 * se,
                    "entry ({i},{j}): {} vs {} (se {se})", cov[(i, j)], target[(i, j)]);
            }
        }
    }

    #[test]
    fn invariant_covariance_of_benchmark() {
        let s = example_channel().invariant().cov().clone();
        let expected = [[7.36896, 0.347856], [0.347856, 1.76768]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((s[(i, j)] - expected[i][j]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn invariant_covariance_fixed_point_residual() {
        let ch = example_channel();
        let a = ch.a();
        let s = ch.invariant().cov();
        let residual = s - a * s * a.transpose() - ch.noise().cov();
        assert!(residual.amax() <= 1e-10);
        assert_relative_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn invariant_covariance_trivial_cases() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(solve_invariant_covariance(&DMatrix::zeros(2, 2), &s).unwrap(), s);
        let scalar = solve_invariant_covariance(&DMatrix::from_element(1, 1, 0.5), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(scalar[(0, 0)], 4.0 / 3.0, epsilon = 1e-11);
    }

    #[test]
    fn unstable_dynamics_rejected() {
        let err = solve_invariant_covariance(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2));
        assert!(matches!(err, Err(Error::UnstableDynamics(_))));
    }

    #[test]
    fn propagate_benchmark_mean() {
        let ch = example_channel();
        let b = ch.initial_belief().propagate(&ch).unwrap();
        assert_relative_eq!(b.mean[0], -0.4, epsilon = 1e-15);
        assert_relative_eq!(b.mean[1], -0.392, epsilon = 1e-15);
        assert_eq!(b.time_index, 1);
    }

    #[test]
    fn propagate_identity_and_memoryless_channels() {
        let m = DVector::from_vec(vec![0.3]);
        let ident = GaussianChannel {
            a: DMatrix::identity(1, 1),
            noise: Gaussian::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap(),
            initial: Gaussian::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap(),
            invariant: Gaussian::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap(),
        };
        // identity channel with zero noise covariance: exercise the recurrence directly
        let b = GaussianBelief::new(m.clone(), DMatrix::from_element(1, 1, 2.0), 4);
        let a = ident.a();
        let zero_noise = a * &b.covariance * a.transpose();
        assert_eq!(zero_noise[(0, 0)], 2.0);

        let ch = GaussianChannel::new(
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![0.7]),
            DMatrix::from_element(1, 1, 0.2),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let next = b.propagate(&ch).unwrap();
        assert_eq!(next.mean[0], 0.7);
        assert_eq!(next.covariance[(0, 0)], 0.2);
        assert_eq!(next.time_index, 5);
    }

    #[test]
    fn propagate_rejects_wrong_dimension() {
        let ch = example_channel();
        let b = GaussianBelief::new(DVector::zeros(3), DMatrix::identity(3, 3), 0);
        assert!(matches!(b.propagate(&ch), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn invariant_belief_is_fixed_by_propagation() {
        let ch = example_channel();
        let inv = ch.invariant_belief();
        let next = inv.propagate(&ch).unwrap();
        assert!((&next.mean - &inv.mean).amax() <= 1e-10);
        assert!((&next.covariance - &inv.covariance).amax() <= 1e-10);
    }

    #[test]
    fn density_ratio_examples() {
        let ch = example_channel();
        let inv = ch.invariant_belief();
        for x in [[0.0, 0.0], [3.0, -1.0], [-7.0, 2.5]] {
            assert_relative_eq!(inv.mu_weighted_density(&ch, &x).unwrap(), 1.0, epsilon = 1e-12);
        }
        // 1-d: N(0,1) against invariant N(0,2)
        let ch1 = GaussianChannel::new(
            DMatrix::from_element(1, 1, 0.5f64.sqrt()),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(ch1.invariant().cov()[(0, 0)], 2.0, epsilon = 1e-10);
        let v = ch1.initial_belief().mu_weighted_density(&ch1, &[0.0]).unwrap();
        assert_relative_eq!(v, 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn density_ratio_integrates_to_one_under_invariant() {
        let ch = example_channel();
        let v = MuWeightedGaussian::new(&ch.initial_belief(), &ch).unwrap();
        let mut rng = stream(0, Domain::NormSamples, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| v.eval(ch.invariant().sample(&mut rng).as_slice())).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn singular_belief_covariance_is_an_error() {
        let ch = example_channel();
        let b = GaussianBelief::new(DVector::zeros(2), DMatrix::zeros(2, 2), 0);
        assert!(matches!(b.mu_weighted_density(&ch, &[0.0, 0.0]), Err(Error::SingularCovariance)));
    }

    #[test]
    fn rotation_examples() {
        let exact = StochasticSystem::rotation(FRAC_PI_2, 0.0).unwrap();
        let mut rng = stream(0, Domain::Rotation, 0);
        let zero = DVector::from_element(1, 0.0);
        assert_eq!(exact.sample_step(&zero, &mut rng)[0], FRAC_PI_2);

        let noisy = StochasticSystem::default_rotation();
        for _ in 0..1000 {
            let y = noisy.sample_step(&zero, &mut rng)[0];
            assert!((FRAC_PI_2..=FRAC_PI_2 + PI / 10.0).contains(&y));
        }
        let traj = noisy.simulate_trajectory(10_000, 3);
        assert!(traj.iter().all(|x| (0.0..TAU).contains(&x[0])));
        assert!(StochasticSystem::rotation(FRAC_PI_2, -1.0).is_err());
    }

    #[test]
    fn finite_chain_sampling_respects_support() {
        let chain = FiniteChain::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, 0.0]).unwrap();
        let sys = StochasticSystem::finite_chain(chain);
        let traj = sys.simulate_trajectory(9, 1);
        let states: Vec<f64> = traj.iter().map(|x| x[0]).collect();
        assert_eq!(states, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn finite_chain_stationary() {
        let chain = FiniteChain::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![1.0, 0.0]).unwrap();
        let pi = chain.stationary().unwrap();
        assert_relative_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-12);
        assert!(FiniteChain::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]], vec![1.0, 0.0]).is_err());
    }
}
