//! Output maps `h: E → {0, …, n-1}` given by axis-aligned grids, and the
//! codec between memory-`ℓ` output sequences and flat indices.
//!
//! Cells are half-open: along each axis the cut points `c_0 < … < c_{m-1}`
//! produce the intervals `(-∞, c_0), [c_0, c_1), …, [c_{m-1}, ∞)`. Cells are
//! numbered row-major with the first coordinate most significant.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned grid partition of `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridCuts", into = "GridCuts")]
pub struct GridPartition {
    cuts: Vec<Vec<f64>>,
    strides: Vec<usize>,
    n: usize,
}

/// Serialised form of a [`GridPartition`]: the cut points per dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCuts {
    pub cuts: Vec<Vec<f64>>,
}

impl TryFrom<GridCuts> for GridPartition {
    type Error = Error;

    fn try_from(value: GridCuts) -> Result<Self> {
        Self::from_cuts(value.cuts)
    }
}

impl From<GridPartition> for GridCuts {
    fn from(value: GridPartition) -> Self {
        Self { cuts: value.cuts }
    }
}

impl GridPartition {
    /// One strictly increasing list of finite cut points per dimension.
    pub fn from_cuts(cuts: Vec<Vec<f64>>) -> Result<Self> {
        if cuts.is_empty() {
            return Err(Error::InvalidBounds("partition needs at least one dimension".into()));
        }
        for (dim, c) in cuts.iter().enumerate() {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidBounds(format!("dimension {dim} has a non-finite cut")));
            }
            if c.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidBounds(format!("cuts of dimension {dim} are not strictly increasing")));
            }
        }
        let mut strides = vec![1usize; cuts.len()];
        let mut n = 1usize;
        for (dim, c) in cuts.iter().enumerate().rev() {
            strides[dim] = n;
            n = n
                .checked_mul(c.len() + 1)
                .ok_or_else(|| Error::InvalidBounds("too many cells".into()))?;
        }
        Ok(Self { cuts, strides, n })
    }

    /// Each axis split into `(-∞, lo)`, `p` equal pieces of `[lo, hi]`, and
    /// `[hi, ∞)`: `(p + 2)^d` cells in total.
    pub fn grid(d: usize, p: usize, lo: f64, hi: f64) -> Result<Self> {
        if d == 0 || p == 0 {
            return Err(Error::InvalidBounds(format!("need d >= 1 and p >= 1, got d={d}, p={p}")));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidBounds(format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        let axis: Vec<f64> = (0..=p)
            .map(|j| if j == p { hi } else { lo + (hi - lo) * j as f64 / p as f64 })
            .collect();
        Self::from_cuts(vec![axis; d])
    }

    /// The four quarter arcs of `[0, 2π)`.
    pub fn quadrants() -> Self {
        Self::from_cuts(vec![vec![FRAC_PI_2, PI, 3.0 * FRAC_PI_2]]).expect("valid cuts")
    }

    /// One cell per integer `0, …, n-1` on the real line.
    pub fn integer_cells(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidBounds("need at least one cell".into()));
        }
        Self::from_cuts(vec![(1..n).map(|i| i as f64 - 0.5).collect()])
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self) -> &[Vec<f64>] {
        &self.cuts
    }

    /// Cell index of `x`.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate { index });
        }
        Ok(self.classify_finite(x))
    }

    /// [`classify`](Self::classify) without checks; `x` must have the right
    /// dimension and finite entries.
    #[inline]
    pub fn classify_finite(&self, x: &[f64]) -> usize {
        self.cuts
            .iter()
            .zip(&self.strides)
            .zip(x)
            .map(|((c, s), &v)| c.partition_point(|&cut| cut <= v) * s)
            .sum()
    }

    /// Per-axis indices of cell `cell`.
    pub fn cell_coords(&self, cell: usize) -> Vec<usize> {
        self.cuts
            .iter()
            .zip(&self.strides)
            .map(|(c, s)| (cell / s) % (c.len() + 1))
            .collect()
    }

    /// Lower and upper corners of a cell, with infinite end cells.
    pub fn cell_bounds(&self, cell: usize) -> (Vec<f64>, Vec<f64>) {
        self.cuts
            .iter()
            .zip(self.cell_coords(cell))
            .map(|(c, j)| {
                let lo = if j == 0 { f64::NEG_INFINITY } else { c[j - 1] };
                let hi = if j == c.len() { f64::INFINITY } else { c[j] };
                (lo, hi)
            })
            .unzip()
    }

    /// Short human-readable form, used in file headers.
    pub fn descriptor(&self) -> String {
        let axes: Vec<String> = self
            .cuts
            .iter()
            .map(|c| c.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" "))
            .collect();
        format!("d={} cuts={}", self.dim(), axes.join(" | "))
    }
}

/// Big-endian codec between `[n]^ℓ` and `[n^ℓ]`: `s ↦ Σ_j s_j n^{ℓ-1-j}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceCodec {
    n: usize,
    ell: usize,
    size: usize,
    // n^(ℓ-1)
    head: usize,
}

impl SequenceCodec {
    pub fn new(n: usize, ell: usize) -> Result<Self> {
        if n == 0 || ell == 0 {
            return Err(Error::InvalidParameter(format!("need n >= 1 and ell >= 1, got n={n}, ell={ell}")));
        }
        let pow = |e: usize| {
            u32::try_from(e)
                .ok()
                .and_then(|e| n.checked_pow(e))
                .ok_or(Error::SequenceSpaceOverflow { n, ell })
        };
        // the (ℓ+1)-windows must be indexable too
        pow(ell + 1)?;
        Ok(Self { n, ell, size: pow(ell)?, head: pow(ell - 1)? })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// `n^ℓ`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn encode(&self, seq: &[usize]) -> Result<usize> {
        if seq.len() != self.ell {
            return Err(Error::SampleLength { found: seq.len(), ell: self.ell });
        }
        seq.iter().try_fold(0usize, |acc, &s| {
            if s >= self.n {
                Err(Error::SymbolOutOfRange { symbol: s, n: self.n })
            } else {
                Ok(acc * self.n + s)
            }
        })
    }

    pub fn decode(&self, index: usize) -> Result<Vec<usize>> {
        self.check(index)?;
        let mut out = vec![0; self.ell];
        let mut rest = index;
        for slot in out.iter_mut().rev() {
            *slot = rest % self.n;
            rest /= self.n;
        }
        Ok(out)
    }

    /// Symbol at `position` (0 = oldest) of the sequence with flat index `index`.
    #[inline]
    pub fn symbol_at(&self, index: usize, position: usize) -> usize {
        let mut div = 1;
        for _ in position + 1..self.ell {
            div *= self.n;
        }
        (index / div) % self.n
    }

    /// True iff the last `ℓ-1` symbols of `row` equal the first `ℓ-1`
    /// symbols of `col`, i.e. `row → col` is a possible shift.
    pub fn suffix_prefix_match(&self, row: usize, col: usize) -> bool {
        row % self.head == col / self.n
    }

    /// Flat index of `row` shifted by one with `symbol` appended.
    #[inline]
    pub fn shift(&self, row: usize, symbol: usize) -> usize {
        (row % self.head) * self.n + symbol
    }

    /// The `n` columns a row can move to.
    pub fn successors(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).map(move |s| self.shift(row, s))
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.size {
            Err(Error::SequenceOutOfRange { index, n: self.n, ell: self.ell })
        } else {
            Ok(())
        }
    }
}
