//! Truncated multi-mode Fock spaces.
//!
//! A [`ModeRegistry`] fixes an ordered list of bosonic modes, each truncated at
//! an occupation cutoff. Flat basis indices are mixed-radix with the *last*
//! registered mode varying fastest, so the tensor product of two registries is
//! the Kronecker product of their matrices.

use std::collections::BTreeMap;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

/// Default ceiling on the total dimension of any registry.
pub const DEFAULT_MAX_DIMENSION: usize = 1 << 24;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Numerical tolerances for validity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub hermiticity: f64,
    pub trace: f64,
    pub norm: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-10,
            trace: 1e-10,
            norm: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mode {
    label: String,
    cutoff: usize,
}

impl Mode {
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Highest occupation represented; the local dimension is `cutoff + 1`.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeRegistry {
    modes: Vec<Mode>,
    dim: usize,
}

impl ModeRegistry {
    pub fn new<I, S>(modes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let modes: Vec<Mode> = modes
            .into_iter()
            .map(|(label, cutoff)| Mode {
                label: label.into(),
                cutoff,
            })
            .collect();
        if modes.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        let mut dim = 1usize;
        for (k, m) in modes.iter().enumerate() {
            if m.cutoff == 0 {
                return Err(Error::InvalidCutoff(m.label.clone()));
            }
            if modes[..k].iter().any(|o| o.label == m.label) {
                return Err(Error::DuplicateMode(m.label.clone()));
            }
            dim = dim
                .checked_mul(m.cutoff + 1)
                .filter(|&d| d <= DEFAULT_MAX_DIMENSION)
                .ok_or(Error::DimensionOverflow {
                    max: DEFAULT_MAX_DIMENSION,
                })?;
        }
        Ok(Self { modes, dim })
    }

    pub fn single(label: impl Into<String>, cutoff: usize) -> Result<Self> {
        Self::new([(label.into(), cutoff)])
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.modes.iter().map(|m| m.label.as_str())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.modes.iter().any(|m| m.label == label)
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.label == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    pub fn cutoff_of(&self, label: &str) -> Result<usize> {
        Ok(self.modes[self.position(label)?].cutoff)
    }

    /// Registry of `self` followed by `other`.
    pub fn concat(&self, other: &ModeRegistry) -> Result<Self> {
        Self::new(
            self.modes
                .iter()
                .chain(other.modes.iter())
                .map(|m| (m.label.clone(), m.cutoff)),
        )
    }

    pub(crate) fn indexer(&self) -> BasisIndexer {
        BasisIndexer::from_dims(self.modes.iter().map(|m| m.cutoff + 1).collect())
    }
}

/// Bijection between occupation tuples and flat indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisIndexer {
    dims: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl BasisIndexer {
    fn from_dims(dims: Vec<usize>) -> Self {
        let mut strides = vec![1usize; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let total = dims.iter().product();
        Self {
            dims,
            strides,
            total,
        }
    }

    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn index_of(&self, occupations: &[usize]) -> Result<usize> {
        if occupations.len() != self.dims.len()
            || occupations.iter().zip(&self.dims).any(|(&n, &d)| n >= d)
        {
            return Err(Error::OccupationOutOfRange(occupations.to_vec()));
        }
        Ok(occupations
            .iter()
            .zip(&self.strides)
            .map(|(n, s)| n * s)
            .sum())
    }

    pub fn tuple_of(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.total {
            return Err(Error::DimensionMismatch {
                expected: self.total,
                actual: index,
            });
        }
        Ok(self
            .dims
            .iter()
            .zip(&self.strides)
            .map(|(d, s)| (index / s) % d)
            .collect())
    }

    /// Occupation of the mode at `position` in the basis state `index`.
    #[inline]
    pub fn occupation(&self, index: usize, position: usize) -> usize {
        (index / self.strides[position]) % self.dims[position]
    }
}

/// Builds the basis indexer, refusing registries larger than `max_dimension`.
pub fn build_basis(registry: &ModeRegistry, max_dimension: usize) -> Result<BasisIndexer> {
    if registry.dim() > max_dimension {
        return Err(Error::DimensionOverflow { max: max_dimension });
    }
    Ok(registry.indexer())
}

/// Single-mode annihilation matrix on occupations `0..=cutoff`.
pub fn local_annihilation(cutoff: usize) -> CMatrix {
    let d = cutoff + 1;
    let mut a = CMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Sparse operator on the full space of a registry, stored row-compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOperator {
    registry: ModeRegistry,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl ModeOperator {
    fn from_rows(registry: ModeRegistry, rows: Vec<Vec<(usize, Complex64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            registry,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn identity(registry: &ModeRegistry) -> Self {
        Self::diagonal(registry, |_| ONE)
    }

    /// Diagonal operator whose entry is a function of the occupation tuple.
    pub fn diagonal(registry: &ModeRegistry, f: impl Fn(&[usize]) -> Complex64) -> Self {
        let idx = registry.indexer();
        let rows = (0..registry.dim())
            .map(|i| {
                let occ = idx.tuple_of(i).expect("index in range");
                let v = f(&occ);
                if v == ZERO {
                    vec![]
                } else {
                    vec![(i, v)]
                }
            })
            .collect();
        Self::from_rows(registry.clone(), rows)
    }

    /// Embeds a matrix acting on `modes` (Kronecker order as listed) into the
    /// full registry, identity elsewhere.
    pub fn from_local(registry: &ModeRegistry, modes: &[&str], local: &CMatrix) -> Result<Self> {
        let positions = modes
            .iter()
            .map(|m| registry.position(m))
            .collect::<Result<Vec<_>>>()?;
        for (k, p) in positions.iter().enumerate() {
            if positions[..k].contains(p) {
                return Err(Error::IdenticalModes(modes[k].to_string()));
            }
        }
        let local_dims: Vec<usize> = positions
            .iter()
            .map(|&p| registry.modes[p].cutoff + 1)
            .collect();
        let local_idx = BasisIndexer::from_dims(local_dims);
        let ld = local_idx.dim();
        if local.nrows() != ld || local.ncols() != ld {
            return Err(Error::DimensionMismatch {
                expected: ld,
                actual: local.nrows(),
            });
        }
        let global = registry.indexer();
        // global offset contributed by each local basis state
        let offset: Vec<usize> = (0..ld)
            .map(|l| {
                positions
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| local_idx.occupation(l, k) * global.strides[p])
                    .sum()
            })
            .collect();
        let local_rows: Vec<Vec<(usize, Complex64)>> = (0..ld)
            .map(|r| {
                (0..ld)
                    .filter(|&c| local[(r, c)] != ZERO)
                    .map(|c| (c, local[(r, c)]))
                    .collect()
            })
            .collect();

        let rows = (0..registry.dim())
            .map(|i| {
                let l: usize = positions
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| global.occupation(i, p) * local_idx.strides[k])
                    .sum();
                let base = i - offset[l];
                local_rows[l]
                    .iter()
                    .map(|&(c, v)| (base + offset[c], v))
                    .collect()
            })
            .collect();
        Ok(Self::from_rows(registry.clone(), rows))
    }

    pub fn registry(&self) -> &ModeRegistry {
        &self.registry
    }

    pub fn dim(&self) -> usize {
        self.registry.dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn adjoint(&self) -> Self {
        let mut rows = vec![Vec::new(); self.dim()];
        for i in 0..self.dim() {
            for (c, v) in self.row(i) {
                rows[c].push((i, v.conj()));
            }
        }
        Self::from_rows(self.registry.clone(), rows)
    }

    /// Operator product `self · other`.
    pub fn compose(&self, other: &ModeOperator) -> Result<Self> {
        self.check_registry(&other.registry)?;
        let rows = (0..self.dim())
            .map(|i| {
                let mut acc: BTreeMap<usize, Complex64> = BTreeMap::new();
                for (k, a) in self.row(i) {
                    for (c, b) in other.row(k) {
                        *acc.entry(c).or_insert(ZERO) += a * b;
                    }
                }
                acc.into_iter().filter(|(_, v)| *v != ZERO).collect()
            })
            .collect();
        Ok(Self::from_rows(self.registry.clone(), rows))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn to_dense(&self) -> CMatrix {
        let d = self.dim();
        let mut m = CMatrix::zeros(d, d);
        for i in 0..d {
            for (c, v) in self.row(i) {
                m[(i, c)] += v;
            }
        }
        m
    }

    /// `‖U†U − I‖_max`.
    pub fn unitarity_defect(&self) -> f64 {
        let prod = self.adjoint().compose(self).expect("same registry");
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            let mut diag_seen = false;
            for (c, v) in prod.row(i) {
                let target = if c == i {
                    diag_seen = true;
                    ONE
                } else {
                    ZERO
                };
                worst = worst.max((v - target).norm());
            }
            if !diag_seen {
                worst = worst.max(1.0);
            }
        }
        worst
    }

    pub fn apply_vector(&self, x: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()),
        ))
    }

    /// `self · m` for a dense `m`.
    pub fn left_mul(&self, m: &CMatrix) -> Result<CMatrix> {
        if m.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: m.nrows(),
            });
        }
        let mut out = CMatrix::zeros(self.dim(), m.ncols());
        for k in 0..m.ncols() {
            let col = m.column(k);
            let mut dst = out.column_mut(k);
            for i in 0..self.dim() {
                let mut acc = ZERO;
                for (c, v) in self.row(i) {
                    acc += v * col[c];
                }
                dst[i] = acc;
            }
        }
        Ok(out)
    }

    /// `self · m · self†`.
    pub fn conjugate(&self, m: &CMatrix) -> Result<CMatrix> {
        let left = self.left_mul(m)?;
        Ok(self.left_mul(&left.adjoint())?.adjoint())
    }

    fn check_registry(&self, other: &ModeRegistry) -> Result<()> {
        if &self.registry != other {
            if self.registry.dim() != other.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.registry.dim(),
                    actual: other.dim(),
                });
            }
            return Err(Error::RegistryMismatch);
        }
        Ok(())
    }
}

/// Annihilation operator of `label`: `a|n⟩ = √n |n−1⟩`.
pub fn annihilation(registry: &ModeRegistry, label: &str) -> Result<ModeOperator> {
    let cutoff = registry.cutoff_of(label)?;
    ModeOperator::from_local(registry, &[label], &local_annihilation(cutoff))
}

pub fn creation(registry: &ModeRegistry, label: &str) -> Result<ModeOperator> {
    Ok(annihilation(registry, label)?.adjoint())
}

pub fn number_operator(registry: &ModeRegistry, label: &str) -> Result<ModeOperator> {
    let p = registry.position(label)?;
    Ok(ModeOperator::diagonal(registry, |occ| {
        Complex64::new(occ[p] as f64, 0.0)
    }))
}

/// Pure state on a registry.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModeState {
    registry: ModeRegistry,
    amplitudes: DVector<Complex64>,
}

impl MultiModeState {
    pub fn new(registry: ModeRegistry, amplitudes: DVector<Complex64>) -> Result<Self> {
        if amplitudes.len() != registry.dim() {
            return Err(Error::DimensionMismatch {
                expected: registry.dim(),
                actual: amplitudes.len(),
            });
        }
        Ok(Self {
            registry,
            amplitudes,
        })
    }

    pub fn vacuum(registry: &ModeRegistry) -> Self {
        let mut amps = DVector::zeros(registry.dim());
        amps[0] = ONE;
        Self {
            registry: registry.clone(),
            amplitudes: amps,
        }
    }

    pub fn fock(registry: &ModeRegistry, occupations: &[usize]) -> Result<Self> {
        Self::from_terms(registry, &[(occupations, ONE)])
    }

    /// Superposition `Σ c_k |n_k⟩`, not normalized.
    pub fn from_terms(registry: &ModeRegistry, terms: &[(&[usize], Complex64)]) -> Result<Self> {
        let idx = registry.indexer();
        let mut amps = DVector::zeros(registry.dim());
        for (occ, c) in terms {
            amps[idx.index_of(occ)?] += *c;
        }
        Ok(Self {
            registry: registry.clone(),
            amplitudes: amps,
        })
    }

    pub fn registry(&self) -> &ModeRegistry {
        &self.registry
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, occupations: &[usize]) -> Result<Complex64> {
        Ok(self.amplitudes[self.registry.indexer().index_of(occupations)?])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Normalized copy together with the missing weight `1 − ‖ψ‖²`.
    pub fn normalized(&self) -> Result<(Self, f64)> {
        let n2 = self.norm_sqr();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::NotNormalized { norm_sqr: n2 });
        }
        let out = Self {
            registry: self.registry.clone(),
            amplitudes: &self.amplitudes / Complex64::new(n2.sqrt(), 0.0),
        };
        Ok((out, 1.0 - n2))
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &MultiModeState) -> Result<Complex64> {
        if self.registry != other.registry {
            return Err(Error::RegistryMismatch);
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn tensor(&self, other: &MultiModeState) -> Result<Self> {
        Ok(Self {
            registry: self.registry.concat(&other.registry)?,
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        })
    }

    pub fn with_global_phase(&self, phase: f64) -> Self {
        Self {
            registry: self.registry.clone(),
            amplitudes: &self.amplitudes * Complex64::from_polar(1.0, phase),
        }
    }

    /// `op|ψ⟩` for any operator (not necessarily unitary).
    pub fn apply_operator(&self, op: &ModeOperator) -> Result<Self> {
        op.check_registry(&self.registry)?;
        Ok(Self {
            registry: self.registry.clone(),
            amplitudes: op.apply_vector(&self.amplitudes)?,
        })
    }

    /// Probability of each occupation of `label`.
    pub fn marginal_distribution(&self, label: &str) -> Result<Vec<f64>> {
        DensityOperator::from_pure(self).marginal_distribution(label)
    }
}

/// Density operator on a registry. Not forced to unit trace: unnormalized
/// conditional operators are represented by the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    registry: ModeRegistry,
    matrix: CMatrix,
}

impl DensityOperator {
    pub fn new(registry: ModeRegistry, matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != registry.dim() || matrix.ncols() != registry.dim() {
            return Err(Error::DimensionMismatch {
                expected: registry.dim(),
                actual: matrix.nrows(),
            });
        }
        Ok(Self { registry, matrix })
    }

    pub fn from_pure(state: &MultiModeState) -> Self {
        let v = &state.amplitudes;
        Self {
            registry: state.registry.clone(),
            matrix: v * v.adjoint(),
        }
    }

    pub fn vacuum(registry: &ModeRegistry) -> Self {
        Self::from_pure(&MultiModeState::vacuum(registry))
    }

    pub fn fock(registry: &ModeRegistry, occupations: &[usize]) -> Result<Self> {
        Ok(Self::from_pure(&MultiModeState::fock(
            registry,
            occupations,
        )?))
    }

    /// Diagonal operator with the given populations.
    pub fn from_diagonal(registry: &ModeRegistry, populations: &[f64]) -> Result<Self> {
        if populations.len() != registry.dim() {
            return Err(Error::DimensionMismatch {
                expected: registry.dim(),
                actual: populations.len(),
            });
        }
        let mut m = CMatrix::zeros(registry.dim(), registry.dim());
        for (i, &p) in populations.iter().enumerate() {
            m[(i, i)] = Complex64::new(p, 0.0);
        }
        Ok(Self {
            registry: registry.clone(),
            matrix: m,
        })
    }

    pub fn registry(&self) -> &ModeRegistry {
        &self.registry
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.registry.dim()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn normalized(&self) -> Result<Self> {
        let t = self.trace().re;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::ImpossibleCondition);
        }
        Ok(self.scaled(1.0 / t))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            registry: self.registry.clone(),
            matrix: &self.matrix * Complex64::new(factor, 0.0),
        }
    }

    pub fn add(&self, other: &DensityOperator) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            registry: self.registry.clone(),
            matrix: &self.matrix + &other.matrix,
        })
    }

    /// Mixture `Σ w_k ρ_k` of operators on one registry.
    pub fn mixture(terms: &[(f64, &DensityOperator)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or(Error::EmptyRegistry)?;
        let mut m = CMatrix::zeros(first.dim(), first.dim());
        for (w, rho) in terms {
            first.check_same(rho)?;
            m += &rho.matrix * Complex64::new(*w, 0.0);
        }
        Ok(Self {
            registry: first.registry.clone(),
            matrix: m,
        })
    }

    pub fn tensor(&self, other: &DensityOperator) -> Result<Self> {
        Ok(Self {
            registry: self.registry.concat(&other.registry)?,
            matrix: linalg::kron(&self.matrix, &other.matrix),
        })
    }

    /// `K ρ K†` for an arbitrary operator.
    pub fn sandwich(&self, op: &ModeOperator) -> Result<Self> {
        op.check_registry(&self.registry)?;
        Ok(Self {
            registry: self.registry.clone(),
            matrix: op.conjugate(&self.matrix)?,
        })
    }

    /// `Tr(ρ O)`.
    pub fn expectation(&self, op: &ModeOperator) -> Result<Complex64> {
        op.check_registry(&self.registry)?;
        let mut acc = ZERO;
        for i in 0..self.dim() {
            for (c, v) in op.row(i) {
                acc += v * self.matrix[(c, i)];
            }
        }
        Ok(acc)
    }

    /// Reduced operator on `keep` (kept modes stay in registry order).
    pub fn partial_trace(&self, keep: &[&str]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::EmptyKeepSet);
        }
        for k in keep {
            self.registry.position(k)?;
        }
        let traced: Vec<&str> = self
            .registry
            .labels()
            .filter(|l| !keep.contains(l))
            .collect();
        self.trace_out_weighted(&traced, |_| 1.0)
    }

    /// Traces out `traced`, weighting each traced basis tuple (in registry
    /// order of the traced modes) by `weight`. With a diagonal POVM element as
    /// the weight this yields the unnormalized post-measurement operator on the
    /// remaining modes.
    pub fn trace_out_weighted(
        &self,
        traced: &[&str],
        weight: impl Fn(&[usize]) -> f64,
    ) -> Result<Self> {
        let traced_pos = traced
            .iter()
            .map(|l| self.registry.position(l))
            .collect::<Result<Vec<_>>>()?;
        let keep_pos: Vec<usize> = (0..self.registry.len())
            .filter(|p| !traced_pos.contains(p))
            .collect();
        if keep_pos.is_empty() {
            return Err(Error::EmptyKeepSet);
        }
        let mut traced_sorted = traced_pos.clone();
        traced_sorted.sort_unstable();

        let kept_registry = ModeRegistry::new(
            keep_pos
                .iter()
                .map(|&p| (self.registry.modes[p].label.clone(), self.registry.modes[p].cutoff)),
        )?;
        let tr_dims: Vec<usize> = traced_sorted
            .iter()
            .map(|&p| self.registry.modes[p].cutoff + 1)
            .collect();
        let tr_idx = BasisIndexer::from_dims(tr_dims);
        let kept_idx = kept_registry.indexer();
        let global = self.registry.indexer();

        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); tr_idx.dim()];
        for i in 0..self.dim() {
            let t: usize = traced_sorted
                .iter()
                .enumerate()
                .map(|(k, &p)| global.occupation(i, p) * tr_idx.strides[k])
                .sum();
            let k: usize = keep_pos
                .iter()
                .enumerate()
                .map(|(k, &p)| global.occupation(i, p) * kept_idx.strides[k])
                .sum();
            buckets[t].push((i, k));
        }

        let kd = kept_registry.dim();
        let mut out = CMatrix::zeros(kd, kd);
        for (t, bucket) in buckets.iter().enumerate() {
            let w = weight(&tr_idx.tuple_of(t).expect("in range"));
            if w == 0.0 {
                continue;
            }
            let w = Complex64::new(w, 0.0);
            for &(ib, kb) in bucket {
                for &(ia, ka) in bucket {
                    out[(ka, kb)] += w * self.matrix[(ia, ib)];
                }
            }
        }
        Ok(Self {
            registry: kept_registry,
            matrix: out,
        })
    }

    /// `⟨ψ|ρ|ψ⟩`, clamped into `[0, 1]` when it strays by at most the norm tolerance.
    pub fn fidelity_with_pure(&self, psi: &MultiModeState, tol: &Tolerances) -> Result<f64> {
        if self.registry != psi.registry {
            return Err(Error::RegistryMismatch);
        }
        let n2 = psi.norm_sqr();
        if (n2 - 1.0).abs() > tol.norm.max(1e-10) {
            return Err(Error::NotNormalized { norm_sqr: n2 });
        }
        let v = &psi.amplitudes;
        let f = (v.adjoint() * &self.matrix * v)[(0, 0)].re;
        let slack = tol.trace;
        if (-slack..0.0).contains(&f) {
            Ok(0.0)
        } else if f > 1.0 && f <= 1.0 + slack {
            Ok(1.0)
        } else {
            Ok(f)
        }
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::max_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    pub fn is_hermitian(&self, tol: &Tolerances) -> bool {
        self.hermiticity_defect() <= tol.hermiticity
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Checks Hermiticity, unit trace and positivity.
    pub fn is_valid_state(&self, tol: &Tolerances) -> bool {
        self.is_hermitian(tol)
            && (self.trace().re - 1.0).abs() <= tol.trace
            && self.trace().im.abs() <= tol.trace
            && self.min_eigenvalue() >= -tol.hermiticity
    }

    /// `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityOperator) -> Result<f64> {
        self.check_same(other)?;
        let diff = &self.matrix - &other.matrix;
        Ok(0.5 * linalg::hermitian_eigenvalues(&diff).iter().map(|x| x.abs()).sum::<f64>())
    }

    /// Diagonal of the matrix (basis-state populations).
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn marginal_distribution(&self, label: &str) -> Result<Vec<f64>> {
        let p = self.registry.position(label)?;
        let idx = self.registry.indexer();
        let mut out = vec![0.0; self.registry.modes[p].cutoff + 1];
        for (i, pop) in self.populations().into_iter().enumerate() {
            out[idx.occupation(i, p)] += pop;
        }
        Ok(out)
    }

    /// `Σ_n w(n) ⟨n|ρ|n⟩` for a weight diagonal in the Fock basis, i.e. the
    /// probability of a diagonal POVM element on all modes.
    pub fn weighted_trace(&self, weight: impl Fn(&[usize]) -> f64) -> f64 {
        let idx = self.registry.indexer();
        (0..self.dim())
            .map(|i| {
                let w = weight(&idx.tuple_of(i).expect("in range"));
                if w == 0.0 {
                    0.0
                } else {
                    w * self.matrix[(i, i)].re
                }
            })
            .sum()
    }

    /// Largest population sitting on the top (guard) level of any mode.
    pub fn guard_level_population(&self) -> f64 {
        self.registry
            .modes
            .iter()
            .map(|m| {
                self.marginal_distribution(&m.label)
                    .map(|d| d[m.cutoff])
                    .unwrap_or(0.0)
            })
            .fold(0.0, f64::max)
    }

    fn check_same(&self, other: &DensityOperator) -> Result<()> {
        if self.registry != other.registry {
            return Err(Error::RegistryMismatch);
        }
        Ok(())
    }
}

/// Unitary evolution shared by pure states and density operators.
pub trait Evolve: Sized {
    fn apply_unitary(&self, u: &ModeOperator) -> Result<Self>;
}

impl Evolve for MultiModeState {
    fn apply_unitary(&self, u: &ModeOperator) -> Result<Self> {
        self.apply_operator(u)
    }
}

impl Evolve for DensityOperator {
    fn apply_unitary(&self, u: &ModeOperator) -> Result<Self> {
        self.sandwich(u)
    }
}

pub fn apply_unitary<T: Evolve>(target: &T, u: &ModeOperator) -> Result<T> {
    target.apply_unitary(u)
}
