//! Memory-`ℓ` Markov abstractions estimated from output traces.
//!
//! The pipeline is:
//!
//! 1. count sliding `(ℓ+1)`-windows of a long steady-state output trace and
//!    normalise per `ℓ`-prefix to obtain the sparse matrix `P_ℓ`;
//! 2. estimate the joint law of the first `ℓ` outputs from independent
//!    short trajectories started at the initial measure;
//! 3. push that joint law forward `k-ℓ+1` times through `P_ℓᵀ`;
//! 4. keep the law of the last symbol and divide it by the steady-state cell
//!    mass, giving a piecewise constant density with respect to `μ`.
//!
//! Rows of `P_ℓ` whose prefix never occurred in the trace stay empty rather
//! than being filled in; mass that reaches them is reported.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::rectangle_probability;
use crate::partition::{GridPartition, SequenceCodec};
use crate::rng::{stream, Domain};
use crate::system::{GroundTruth, StochasticSystem};

/// Mass below this may silently fall into an unobserved row.
pub const LEAK_TOLERANCE: f64 = 1e-9;

/// What to do when propagated mass reaches a row that was never observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeakPolicy {
    /// Fail once a single row receives at least [`LEAK_TOLERANCE`].
    #[default]
    Strict,
    /// Drop the mass and account for it in [`JointDistribution::leaked`].
    Absorb,
}

/// Sparse row-stochastic matrix over memory-`ℓ` output sequences, together
/// with the steady-state sequence and cell frequencies it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryMarkovModel {
    codec: SequenceCodec,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    probs: Vec<f64>,
    counts: Option<Vec<u64>>,
    steady_seq_prob: Vec<f64>,
    seq_counts: Option<Vec<u64>>,
    steady_cell_prob: Vec<f64>,
    cell_counts: Option<Vec<u64>>,
    trace_length: usize,
    seed: Option<u64>,
}

impl MemoryMarkovModel {
    /// Estimates `P_ℓ` by sliding-window counting over `trace`.
    ///
    /// `P[s → shift(s, j)] = #(s j) / Σ_j' #(s j')`. The sequence frequencies
    /// count the `ℓ`-windows that have a successor (so they are exactly the
    /// row weights); the cell frequencies count every symbol of the trace.
    pub fn estimate(trace: &[usize], ell: usize, n: usize) -> Result<Self> {
        let codec = SequenceCodec::new(n, ell)?;
        if trace.len() <= ell {
            return Err(Error::TraceTooShort { len: trace.len(), ell });
        }
        if let Some(&bad) = trace.iter().find(|&&s| s >= n) {
            return Err(Error::SymbolOutOfRange { symbol: bad, n });
        }

        let size = codec.size();
        let mut windows: HashMap<usize, u64> = HashMap::new();
        let mut idx = trace[..ell].iter().fold(0usize, |acc, &s| acc * n + s);
        for &s in &trace[ell..] {
            idx = (idx % size) * n + s;
            *windows.entry(idx).or_insert(0) += 1;
        }
        let mut keys: Vec<(usize, u64)> = windows.into_iter().collect();
        keys.sort_unstable_by_key(|&(k, _)| k);

        let mut row_offsets = vec![0usize; size + 1];
        let mut row_totals = vec![0u64; size];
        for &(key, count) in &keys {
            row_offsets[key / n + 1] += 1;
            row_totals[key / n] += count;
        }
        for r in 0..size {
            row_offsets[r + 1] += row_offsets[r];
        }
        let cols: Vec<usize> = keys.iter().map(|&(key, _)| key % size).collect();
        let counts: Vec<u64> = keys.iter().map(|&(_, c)| c).collect();
        let probs: Vec<f64> = keys.iter().map(|&(key, c)| c as f64 / row_totals[key / n] as f64).collect();

        let windows_with_successor = (trace.len() - ell) as f64;
        let steady_seq_prob = row_totals.iter().map(|&c| c as f64 / windows_with_successor).collect();
        let mut cell_counts = vec![0u64; n];
        for &s in trace {
            cell_counts[s] += 1;
        }
        let steady_cell_prob = cell_counts.iter().map(|&c| c as f64 / trace.len() as f64).collect();

        Ok(Self {
            codec,
            row_offsets,
            cols,
            probs,
            counts: Some(counts),
            steady_seq_prob,
            seq_counts: Some(row_totals),
            steady_cell_prob,
            cell_counts: Some(cell_counts),
            trace_length: trace.len(),
            seed: None,
        })
    }

    /// Builds a model from explicit rows of `(column, probability)` pairs.
    /// Rows may be empty (unobserved); non-empty rows must sum to one and
    /// only reach suffix-matching columns.
    pub fn from_rows(
        ell: usize,
        n: usize,
        rows: Vec<Vec<(usize, f64)>>,
        steady_seq_prob: Vec<f64>,
        steady_cell_prob: Vec<f64>,
    ) -> Result<Self> {
        let codec = SequenceCodec::new(n, ell)?;
        let size = codec.size();
        if rows.len() != size {
            return Err(Error::DimensionMismatch { expected: size, found: rows.len() });
        }
        check_probability_vector(&steady_seq_prob, size, 1e-12, "steady sequence probabilities")?;
        check_probability_vector(&steady_cell_prob, n, 1e-12, "steady cell probabilities")?;
        let mut row_offsets = Vec::with_capacity(size + 1);
        row_offsets.push(0);
        let (mut cols, mut probs) = (Vec::new(), Vec::new());
        for (r, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(_, p)| p != 0.0);
            row.sort_unstable_by_key(|&(c, _)| c);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidParameter(format!("row {r} repeats a column")));
            }
            for &(c, p) in &row {
                if c >= size || !codec.suffix_prefix_match(r, c) {
                    return Err(Error::InvalidParameter(format!("row {r} reaches column {c}, which does not extend it")));
                }
                if !(p.is_finite() && p > 0.0) {
                    return Err(Error::InvalidParameter(format!("row {r} has entry {p}")));
                }
            }
            if !row.is_empty() {
                let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("row {r} sums to {sum}")));
                }
            }
            cols.extend(row.iter().map(|&(c, _)| c));
            probs.extend(row.iter().map(|&(_, p)| p));
            row_offsets.push(cols.len());
        }
        Ok(Self {
            codec,
            row_offsets,
            cols,
            probs,
            counts: None,
            steady_seq_prob,
            seq_counts: None,
            steady_cell_prob,
            cell_counts: None,
            trace_length: 0,
            seed: None,
        })
    }

    /// The exact memory-`ℓ` lift of a fully observed finite chain: the next
    /// symbol depends only on the last one, and the sequence weights are the
    /// stationary path probabilities.
    pub fn exact_lift(matrix: &[Vec<f64>], stationary: &[f64], ell: usize) -> Result<Self> {
        let n = matrix.len();
        let codec = SequenceCodec::new(n, ell)?;
        let rows = (0..codec.size())
            .map(|r| {
                let last = r % n;
                (0..n).map(|j| (codec.shift(r, j), matrix[last][j])).collect()
            })
            .collect();
        let steady_seq: Vec<f64> = (0..codec.size())
            .map(|r| {
                let mut p = stationary[codec.symbol_at(r, 0)];
                for pos in 1..ell {
                    p *= matrix[codec.symbol_at(r, pos - 1)][codec.symbol_at(r, pos)];
                }
                p
            })
            .collect();
        Self::from_rows(ell, n, rows, steady_seq, stationary.to_vec())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn codec(&self) -> &SequenceCodec {
        &self.codec
    }

    pub fn ell(&self) -> usize {
        self.codec.ell()
    }

    pub fn n(&self) -> usize {
        self.codec.n()
    }

    /// `n^ℓ`.
    pub fn size(&self) -> usize {
        self.codec.size()
    }

    pub fn trace_length(&self) -> usize {
        self.trace_length
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Columns and probabilities of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.cols[span.clone()], &self.probs[span])
    }

    /// Whether row `r` carries transitions (its prefix was observed).
    pub fn is_observed(&self, r: usize) -> bool {
        self.row_offsets[r + 1] > self.row_offsets[r]
    }

    pub fn unobserved_rows(&self) -> usize {
        (0..self.size()).filter(|&r| !self.is_observed(r)).count()
    }

    pub fn stored_nonzeros(&self) -> usize {
        self.probs.len()
    }

    pub fn steady_seq_prob(&self) -> &[f64] {
        &self.steady_seq_prob
    }

    pub fn steady_cell_prob(&self) -> &[f64] {
        &self.steady_cell_prob
    }

    /// Dense copy of the matrix; only sensible for small models.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.size()]; self.size()];
        for (r, row) in out.iter_mut().enumerate() {
            let (cols, probs) = self.row(r);
            for (&c, &p) in cols.iter().zip(probs) {
                row[c] = p;
            }
        }
        out
    }

    /// `out = Pᵀ v` restricted to observed rows; returns the mass of `v` that
    /// sat on unobserved rows together with the heaviest such row.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) -> (f64, Option<(usize, f64)>) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut lost = 0.0;
        let mut worst: Option<(usize, f64)> = None;
        for (r, &mass) in v.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let (cols, probs) = self.row(r);
            if cols.is_empty() {
                lost += mass;
                if worst.is_none_or(|(_, m)| mass > m) {
                    worst = Some((r, mass));
                }
                continue;
            }
            for (&c, &p) in cols.iter().zip(probs) {
                out[c] += mass * p;
            }
        }
        (lost, worst)
    }

    /// `out = P x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let (cols, probs) = self.row(r);
            *o = cols.iter().zip(probs).map(|(&c, &p)| p * x[c]).sum();
        }
    }

    /// One step `v ↦ Pᵀ v`.
    pub fn step(&self, v: &JointDistribution, policy: LeakPolicy) -> Result<JointDistribution> {
        self.check_joint(v)?;
        let mut next = vec![0.0; self.size()];
        let (lost, worst) = self.apply_transpose(&v.probs, &mut next);
        if let (LeakPolicy::Strict, Some((row, mass))) = (policy, worst) {
            if mass >= LEAK_TOLERANCE {
                return Err(Error::UnmodeledRegion {
                    leaked_mass: v.leaked + lost,
                    sequence: self.codec.decode(row)?,
                });
            }
        }
        Ok(JointDistribution {
            codec: self.codec,
            probs: next,
            time_offset: v.time_offset + 1,
            leaked: v.leaked + lost,
        })
    }

    /// `(P_ℓ^steps)ᵀ v0`, failing if noticeable mass reaches an unobserved row.
    pub fn propagate(&self, v0: &JointDistribution, steps: usize) -> Result<JointDistribution> {
        self.propagate_with(v0, steps, LeakPolicy::Strict)
    }

    pub fn propagate_with(&self, v0: &JointDistribution, steps: usize, policy: LeakPolicy) -> Result<JointDistribution> {
        self.check_joint(v0)?;
        let mut v = v0.clone();
        for _ in 0..steps {
            v = self.step(&v, policy)?;
        }
        Ok(v)
    }

    fn check_joint(&self, v: &JointDistribution) -> Result<()> {
        if v.codec != self.codec {
            return Err(Error::InvalidParameter(format!(
                "joint distribution has (n, ell) = ({}, {}), model has ({}, {})",
                v.codec.n(),
                v.codec.ell(),
                self.n(),
                self.ell()
            )));
        }
        Ok(())
    }

    /// Writes the model in the plain-text model format (see the README).
    /// Probabilities are printed in shortest round-trip form, so
    /// [`read_from`](Self::read_from) restores them bit for bit.
    pub fn write_to<W: Write>(&self, mut w: W, partition: Option<&GridPartition>) -> Result<()> {
        let seq = |i: usize| -> String {
            let parts: Vec<String> = (0..self.ell()).map(|p| self.codec.symbol_at(i, p).to_string()).collect();
            parts.join(".")
        };
        let count = |c: &Option<Vec<u64>>, i: usize| c.as_ref().map_or("-".to_string(), |c| c[i].to_string());
        writeln!(w, "# memabs model v1")?;
        writeln!(w, "n {}", self.n())?;
        writeln!(w, "ell {}", self.ell())?;
        writeln!(w, "trace_length {}", self.trace_length)?;
        match self.seed {
            Some(s) => writeln!(w, "seed {s}")?,
            None => writeln!(w, "seed -")?,
        }
        if let Some(p) = partition {
            let axes: Vec<String> = p
                .cuts()
                .iter()
                .map(|c| c.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" "))
                .collect();
            writeln!(w, "partition {}", axes.join(" | "))?;
        }
        writeln!(w, "cells")?;
        for (i, &p) in self.steady_cell_prob.iter().enumerate().filter(|(_, &p)| p > 0.0) {
            writeln!(w, "{i} {} {p:?}", count(&self.cell_counts, i))?;
        }
        writeln!(w, "windows")?;
        for (i, &p) in self.steady_seq_prob.iter().enumerate().filter(|(_, &p)| p > 0.0) {
            writeln!(w, "{} {} {p:?}", seq(i), count(&self.seq_counts, i))?;
        }
        writeln!(w, "transitions")?;
        for r in 0..self.size() {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                writeln!(w, "{} {} {} {:?}", seq(r), seq(self.cols[k]), count(&self.counts, k), self.probs[k])?;
            }
        }
        writeln!(w, "end")?;
        Ok(())
    }

    /// Reads a model written by [`write_to`](Self::write_to), together with
    /// the partition if the file names one.
    pub fn read_from<R: BufRead>(r: R) -> Result<(Self, Option<GridPartition>)> {
        let bad = |line: usize, msg: &str| Error::ModelFormat(format!("line {line}: {msg}"));
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header: HashMap<String, String> = HashMap::new();
        let mut section = String::new();
        for (no, line) in lines.by_ref() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "cells" {
                section = line.to_string();
                break;
            }
            let (k, v) = line.split_once(' ').ok_or_else(|| bad(no, "expected `key value`"))?;
            header.insert(k.to_string(), v.trim().to_string());
        }
        if section != "cells" {
            return Err(Error::ModelFormat("missing `cells` section".into()));
        }
        let field = |k: &str| -> Result<usize> {
            header
                .get(k)
                .ok_or_else(|| Error::ModelFormat(format!("missing header `{k}`")))?
                .parse()
                .map_err(|_| Error::ModelFormat(format!("header `{k}` is not an integer")))
        };
        let (n, ell, trace_length) = (field("n")?, field("ell")?, field("trace_length")?);
        let codec = SequenceCodec::new(n, ell)?;
        let seed = match header.get("seed").map(String::as_str) {
            None | Some("-") => None,
            Some(s) => Some(s.parse().map_err(|_| Error::ModelFormat("bad seed".into()))?),
        };
        let partition = match header.get("partition") {
            None => None,
            Some(text) => {
                let cuts = text
                    .split('|')
                    .map(|axis| axis.split_whitespace().map(str::parse::<f64>).collect::<std::result::Result<Vec<_>, _>>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::ModelFormat("bad partition cuts".into()))?;
                Some(GridPartition::from_cuts(cuts)?)
            }
        };

        let parse_seq = |no: usize, s: &str| -> Result<usize> {
            let symbols = s
                .split('.')
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(no, "bad sequence"))?;
            codec.encode(&symbols)
        };
        let parse_count = |no: usize, s: &str| -> Result<Option<u64>> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(no, "bad count"))
            }
        };
        let parse_prob = |no: usize, s: &str| -> Result<f64> { s.parse().map_err(|_| bad(no, "bad probability")) };

        let mut steady_cell_prob = vec![0.0; n];
        let mut cell_counts = vec![0u64; n];
        let mut steady_seq_prob = vec![0.0; codec.size()];
        let mut seq_counts = vec![0u64; codec.size()];
        let mut entries: Vec<(usize, usize, Option<u64>, f64)> = Vec::new();
        let mut has_counts = true;
        let mut finished = false;
        for (no, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "windows" | "transitions" => {
                    section = line.to_string();
                    continue;
                }
                "end" => {
                    finished = true;
                    break;
                }
                _ => {}
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match (section.as_str(), fields.as_slice()) {
                ("cells", [cell, count, prob]) => {
                    let cell: usize = cell.parse().map_err(|_| bad(no, "bad cell"))?;
                    if cell >= n {
                        return Err(bad(no, "cell out of range"));
                    }
                    let c = parse_count(no, count)?;
                    has_counts &= c.is_some();
                    cell_counts[cell] = c.unwrap_or(0);
                    steady_cell_prob[cell] = parse_prob(no, prob)?;
                }
                ("windows", [s, count, prob]) => {
                    let i = parse_seq(no, s)?;
                    let c = parse_count(no, count)?;
                    has_counts &= c.is_some();
                    seq_counts[i] = c.unwrap_or(0);
                    steady_seq_prob[i] = parse_prob(no, prob)?;
                }
                ("transitions", [row, col, count, prob]) => {
                    let c = parse_count(no, count)?;
                    has_counts &= c.is_some();
                    entries.push((parse_seq(no, row)?, parse_seq(no, col)?, c, parse_prob(no, prob)?));
                }
                _ => return Err(bad(no, "unexpected line")),
            }
        }
        if !finished {
            return Err(Error::ModelFormat("missing `end` marker".into()));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); codec.size()];
        let mut row_counts: Vec<Vec<(usize, u64)>> = vec![Vec::new(); codec.size()];
        for &(r, c, count, p) in &entries {
            rows[r].push((c, p));
            row_counts[r].push((c, count.unwrap_or(0)));
        }
        let mut model = Self::from_rows(ell, n, rows, steady_seq_prob, steady_cell_prob)?;
        if has_counts {
            let mut counts = Vec::with_capacity(model.probs.len());
            for mut rc in row_counts {
                rc.sort_unstable_by_key(|&(c, _)| c);
                counts.extend(rc.into_iter().map(|(_, c)| c));
            }
            model.counts = Some(counts);
            model.seq_counts = Some(seq_counts);
            model.cell_counts = Some(cell_counts);
        }
        model.trace_length = trace_length;
        model.seed = seed;
        Ok((model, partition))
    }
}

fn check_probability_vector(p: &[f64], len: usize, tol: f64, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::DimensionMismatch { expected: len, found: p.len() });
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidParameter(format!("{what} sum to {sum}")));
    }
    Ok(())
}

/// Probability vector over the `n^ℓ` output sequences of a time window
/// `time_offset, …, time_offset + ℓ - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    codec: SequenceCodec,
    probs: Vec<f64>,
    time_offset: usize,
    leaked: f64,
}

impl JointDistribution {
    pub fn from_probs(n: usize, ell: usize, probs: Vec<f64>, time_offset: usize) -> Result<Self> {
        let codec = SequenceCodec::new(n, ell)?;
        check_probability_vector(&probs, codec.size(), 1e-10, "joint distribution")?;
        Ok(Self { codec, probs, time_offset, leaked: 0.0 })
    }

    pub fn point_mass(n: usize, ell: usize, seq: &[usize]) -> Result<Self> {
        let codec = SequenceCodec::new(n, ell)?;
        let mut probs = vec![0.0; codec.size()];
        probs[codec.encode(seq)?] = 1.0;
        Ok(Self { codec, probs, time_offset: 0, leaked: 0.0 })
    }

    /// Empirical frequencies of `ℓ`-long cell sequences.
    pub fn from_samples(samples: &[Vec<usize>], ell: usize, n: usize) -> Result<Self> {
        let codec = SequenceCodec::new(n, ell)?;
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut counts = vec![0u64; codec.size()];
        for s in samples {
            counts[codec.encode(s)?] += 1;
        }
        let total = samples.len() as f64;
        Ok(Self {
            codec,
            probs: counts.into_iter().map(|c| c as f64 / total).collect(),
            time_offset: 0,
            leaked: 0.0,
        })
    }

    pub fn ell(&self) -> usize {
        self.codec.ell()
    }

    pub fn n(&self) -> usize {
        self.codec.n()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn time_offset(&self) -> usize {
        self.time_offset
    }

    /// Mass dropped on unobserved rows so far.
    pub fn leaked(&self) -> f64 {
        self.leaked
    }

    /// Law of the last (most recent) symbol of the window.
    pub fn marginalize_last(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for (i, &p) in self.probs.iter().enumerate() {
            out[i % n] += p;
        }
        out
    }

    /// Law of the symbol at `position` (0 = oldest) of the window.
    pub fn marginalize_at(&self, position: usize) -> Result<Vec<f64>> {
        if position >= self.ell() {
            return Err(Error::PositionOutOfRange { position, ell: self.ell() });
        }
        let mut out = vec![0.0; self.n()];
        for (i, &p) in self.probs.iter().enumerate() {
            out[self.codec.symbol_at(i, position)] += p;
        }
        Ok(out)
    }
}

/// A density with respect to `μ` that is constant on each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantDensity {
    partition: Arc<GridPartition>,
    values: Vec<f64>,
    cell_mu: Arc<[f64]>,
}

impl PiecewiseConstantDensity {
    /// `Σ values_i μ(A_i)` must equal one.
    pub fn new(partition: Arc<GridPartition>, values: Vec<f64>, cell_mu: Arc<[f64]>) -> Result<Self> {
        Self::with_mass(partition, values, cell_mu, 1.0)
    }

    fn with_mass(partition: Arc<GridPartition>, values: Vec<f64>, cell_mu: Arc<[f64]>, mass: f64) -> Result<Self> {
        let n = partition.n_cells();
        for len in [values.len(), cell_mu.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        if values.iter().chain(cell_mu.iter()).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("density values and cell weights must be finite and nonnegative".into()));
        }
        let d = Self { partition, values, cell_mu };
        let total = d.integral();
        if (total - mass).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("density integrates to {total} under the cell weights, expected {mass}")));
        }
        Ok(d)
    }

    /// The invariant density, identically one.
    pub fn uniform(partition: Arc<GridPartition>, cell_mu: Arc<[f64]>) -> Result<Self> {
        let n = partition.n_cells();
        Self::new(partition, vec![1.0; n], cell_mu)
    }

    /// `values_i = marginal_i / μ(A_i)`, with `μ(A_i)` taken from `cell_mu`
    /// when given and from the model's steady cell frequencies otherwise.
    /// A marginal that lost mass to unobserved rows gives a density that
    /// integrates to the remaining mass.
    pub fn from_marginal(
        marginal: &[f64],
        model: &MemoryMarkovModel,
        partition: Arc<GridPartition>,
        cell_mu: Option<Arc<[f64]>>,
    ) -> Result<Self> {
        let cell_mu = cell_mu.unwrap_or_else(|| model.steady_cell_prob().into());
        let n = partition.n_cells();
        if marginal.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: marginal.len() });
        }
        let values = marginal
            .iter()
            .zip(cell_mu.iter())
            .enumerate()
            .map(|(cell, (&m, &mu))| {
                if mu > 0.0 {
                    Ok(m / mu)
                } else if m > 0.0 {
                    Err(Error::UnvisitedCell { cell, mass: m })
                } else {
                    Ok(0.0)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mass: f64 = marginal.iter().sum();
        if !(mass <= 1.0 + 1e-10) {
            return Err(Error::InvalidParameter(format!("marginal has mass {mass}")));
        }
        Self::with_mass(partition, values, cell_mu, mass)
    }

    pub fn partition(&self) -> &Arc<GridPartition> {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_mu(&self) -> &[f64] {
        &self.cell_mu
    }

    pub fn value_in_cell(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.values[self.partition.classify(x)?])
    }

    /// `Σ values_i μ(A_i)`.
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.cell_mu.iter()).map(|(v, m)| v * m).sum()
    }

    /// `‖v‖₂ = (Σ values_i² μ(A_i))^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().zip(self.cell_mu.iter()).map(|(v, m)| v * v * m).sum::<f64>().sqrt()
    }

    /// True if both densities live on the same cells with the same weights.
    pub fn compatible(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.partition, &other.partition) || self.partition == other.partition)
            && (Arc::ptr_eq(&self.cell_mu, &other.cell_mu) || self.cell_mu == other.cell_mu)
    }
}

/// How much data the pipeline draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleBudget {
    /// Length of the steady-state output trace, after burn-in.
    pub trace_length: usize,
    /// Total initial draws; `initial_samples / ℓ` prefixes of length `ℓ` are used.
    pub initial_samples: usize,
    /// Steps discarded before recording the trace. Defaults to
    /// `max(1000, trace_length / 100)`.
    pub burn_in: Option<usize>,
}

impl SampleBudget {
    pub fn new(trace_length: usize, initial_samples: usize) -> Self {
        Self { trace_length, initial_samples, burn_in: None }
    }

    pub fn burn_in_steps(&self) -> usize {
        self.burn_in.unwrap_or_else(|| (self.trace_length / 100).max(1000))
    }
}

/// Output trace of one long trajectory, after discarding `burn_in` steps.
pub fn output_trace(
    system: &StochasticSystem,
    partition: &GridPartition,
    length: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if system.dim() != partition.dim() {
        return Err(Error::DimensionMismatch { expected: partition.dim(), found: system.dim() });
    }
    let mut rng = stream(seed, Domain::SteadyTrace, 0);
    let mut x = system.sample_initial(&mut rng);
    for _ in 0..burn_in {
        x = system.sample_step(&x, &mut rng);
    }
    let mut out = Vec::with_capacity(length);
    for i in 0..length {
        if i > 0 {
            x = system.sample_step(&x, &mut rng);
        }
        out.push(partition.classify(x.as_slice())?);
    }
    Ok(out)
}

/// `count` independent output prefixes of length `ell` started at the
/// initial measure; prefix `i` uses its own random stream.
pub fn initial_prefixes(
    system: &StochasticSystem,
    partition: &GridPartition,
    ell: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if system.dim() != partition.dim() {
        return Err(Error::DimensionMismatch { expected: partition.dim(), found: system.dim() });
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Domain::InitialPrefix, i as u64);
            let traj = system.simulate_with(ell - 1, &mut rng);
            traj.iter().map(|x| partition.classify(x.as_slice())).collect()
        })
        .collect()
}

/// Exact `μ(A_i)` for systems with a known invariant law.
pub fn invariant_cell_mass(system: &StochasticSystem, partition: &GridPartition) -> Result<Vec<f64>> {
    match system.ground_truth() {
        Some(GroundTruth::Gaussian(ch)) => {
            let inv = ch.invariant();
            (0..partition.n_cells())
                .map(|cell| {
                    let (lo, hi) = partition.cell_bounds(cell);
                    rectangle_probability(inv.mean().as_slice(), inv.cov(), &lo, &hi)
                })
                .collect::<Result<Vec<_>>>()
                .map(|mut p| {
                    let total: f64 = p.iter().sum();
                    p.iter_mut().for_each(|v| *v /= total);
                    p
                })
        }
        Some(GroundTruth::FiniteChain(chain)) => {
            let pi = chain.stationary()?;
            let mut out = vec![0.0; partition.n_cells()];
            for (state, &p) in pi.iter().enumerate() {
                out[partition.classify(&[state as f64])?] += p;
            }
            Ok(out)
        }
        None => Err(Error::AnalyticUnavailable("invariant cell masses".into())),
    }
}

/// A built abstraction: estimated `P_ℓ`, the initial joint law and the cell
/// weights used to turn marginals into densities.
#[derive(Debug, Clone)]
pub struct Abstraction {
    partition: Arc<GridPartition>,
    model: MemoryMarkovModel,
    initial: JointDistribution,
    cell_mu: Arc<[f64]>,
    policy: LeakPolicy,
    warnings: Vec<String>,
}

impl Abstraction {
    /// Simulates one steady-state trace and `initial_samples / ℓ` prefixes
    /// under `seed`, and estimates the model and the initial joint law.
    pub fn build(
        system: &StochasticSystem,
        partition: Arc<GridPartition>,
        ell: usize,
        budget: &SampleBudget,
        seed: u64,
    ) -> Result<Self> {
        if ell == 0 {
            return Err(Error::InvalidParameter("memory must be at least 1".into()));
        }
        let n = partition.n_cells();
        let trace = output_trace(system, &partition, budget.trace_length, budget.burn_in_steps(), seed)?;
        let model = MemoryMarkovModel::estimate(&trace, ell, n)?.with_seed(seed);
        let prefixes = initial_prefixes(system, &partition, ell, (budget.initial_samples / ell).max(1), seed)?;
        let initial = JointDistribution::from_samples(&prefixes, ell, n)?;
        let mut out = Self::from_parts(partition, model, initial)?;
        if budget.trace_length < 1000 {
            let size = out.model.size();
            let unobserved = out.model.unobserved_rows();
            out.warn(format!(
                "steady-state trace of {} steps is shorter than 1000; {unobserved} of {size} memory-{ell} sequences ({:.1}%) were never observed",
                budget.trace_length,
                100.0 * unobserved as f64 / size as f64
            ));
        }
        Ok(out)
    }

    pub fn from_parts(partition: Arc<GridPartition>, model: MemoryMarkovModel, initial: JointDistribution) -> Result<Self> {
        if model.n() != partition.n_cells() {
            return Err(Error::DimensionMismatch { expected: partition.n_cells(), found: model.n() });
        }
        if initial.codec != model.codec {
            return Err(Error::InvalidParameter("initial joint law and model disagree on (n, ell)".into()));
        }
        let cell_mu: Arc<[f64]> = model.steady_cell_prob().into();
        let mut out = Self { partition, model, initial, cell_mu, policy: LeakPolicy::Strict, warnings: Vec::new() };
        let stranded: f64 = (0..out.model.size())
            .filter(|&r| !out.model.is_observed(r))
            .map(|r| out.initial.probs[r])
            .sum();
        if stranded > 0.0 {
            out.warn(format!("initial joint law puts mass {stranded:.3e} on sequences never observed in the steady-state trace"));
        }
        Ok(out)
    }

    /// Replaces the cell weights `μ(A_i)` (e.g. by exact invariant masses).
    pub fn with_cell_mu(mut self, cell_mu: Vec<f64>) -> Result<Self> {
        check_probability_vector(&cell_mu, self.partition.n_cells(), 1e-9, "cell weights")?;
        self.cell_mu = cell_mu.into();
        Ok(self)
    }

    pub fn with_leak_policy(mut self, policy: LeakPolicy) -> Self {
        self.policy = policy;
        self
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn partition(&self) -> &Arc<GridPartition> {
        &self.partition
    }

    pub fn model(&self) -> &MemoryMarkovModel {
        &self.model
    }

    pub fn initial(&self) -> &JointDistribution {
        &self.initial
    }

    pub fn cell_mu(&self) -> &Arc<[f64]> {
        &self.cell_mu
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Approximate law of the output at time `k`.
    pub fn marginal_at(&self, k: usize) -> Result<Vec<f64>> {
        let ell = self.model.ell();
        if k + 1 < ell {
            return self.initial.marginalize_at(k);
        }
        let joint = self.model.propagate_with(&self.initial, k + 1 - ell, self.policy)?;
        Ok(joint.marginalize_last())
    }

    /// Marginals for `k = 0, …, horizon`, propagating incrementally.
    pub fn marginals(&self, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let ell = self.model.ell();
        let mut out = Vec::with_capacity(horizon + 1);
        let mut joint = self.initial.clone();
        for k in 0..=horizon {
            if k + 1 < ell {
                out.push(self.initial.marginalize_at(k)?);
                continue;
            }
            if k + 1 > ell {
                joint = self.model.step(&joint, self.policy)?;
            }
            out.push(joint.marginalize_last());
        }
        Ok(out)
    }

    /// Density of a marginal under this abstraction's cell weights. Under
    /// [`LeakPolicy::Absorb`], mass on cells of zero weight is dropped like
    /// mass reaching an unobserved row.
    pub fn density_from(&self, marginal: &[f64]) -> Result<PiecewiseConstantDensity> {
        let cell_mu = Some(self.cell_mu.clone());
        if self.policy == LeakPolicy::Absorb && marginal.iter().zip(self.cell_mu.iter()).any(|(m, mu)| *mu == 0.0 && *m > 0.0) {
            let kept: Vec<f64> = marginal.iter().zip(self.cell_mu.iter()).map(|(&m, &mu)| if mu > 0.0 { m } else { 0.0 }).collect();
            return PiecewiseConstantDensity::from_marginal(&kept, &self.model, self.partition.clone(), cell_mu);
        }
        PiecewiseConstantDensity::from_marginal(marginal, &self.model, self.partition.clone(), cell_mu)
    }

    /// The piecewise constant approximation `ṽ_{ℓ,k}`.
    pub fn density_at(&self, k: usize) -> Result<PiecewiseConstantDensity> {
        self.density_from(&self.marginal_at(k)?)
    }

    pub fn densities(&self, horizon: usize) -> Result<Vec<PiecewiseConstantDensity>> {
        self.marginals(horizon)?.iter().map(|m| self.density_from(m)).collect()
    }
}

/// Full pipeline for a single horizon: estimate, propagate, marginalise and
/// normalise by the estimated steady cell frequencies.
pub fn run_algorithm1(
    system: &StochasticSystem,
    partition: Arc<GridPartition>,
    ell: usize,
    k: usize,
    budget: &SampleBudget,
    seed: u64,
) -> Result<PiecewiseConstantDensity> {
    Abstraction::build(system, partition, ell, budget, seed)?.density_at(k)
}
