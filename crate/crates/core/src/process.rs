//! Quantum semantics for processes with classical interfaces.
//!
//! Completely positive maps are stored in Kraus form as the source of truth;
//! the Choi matrix is computed on demand, cached, and used as the equality
//! oracle. Classical systems are finite label sets, embedded as Hilbert
//! spaces spanned by their labels wherever a process needs to touch them.
//! Maps are allowed to be super-normalised; trace preservation is a property
//! to check, not an invariant.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{choi_to_kraus, kraus_to_choi, kron, ComplexMatrix, SystemDims, C64};
use crate::tol;

/// Finite ordered set of distinct classical labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassicalSet {
    labels: Vec<String>,
}

impl ClassicalSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidClassicalSet("label set must be non-empty".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            crate::scenario::validate_identifier(a)?;
            if labels[..i].contains(a) {
                return Err(Error::InvalidClassicalSet(format!("duplicate label {a:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// The singleton set, the monoidal unit for classical systems.
    pub fn trivial() -> Self {
        Self { labels: vec!["*".into()] }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Cartesian product in the given order; component labels joined with a
    /// comma, the first component varying slowest. The empty product is the
    /// set containing the empty tuple.
    pub fn product(sets: &[&ClassicalSet]) -> Self {
        let mut labels = vec![String::new()];
        for set in sets {
            let mut next = Vec::with_capacity(labels.len() * set.size());
            for prefix in &labels {
                for l in &set.labels {
                    if prefix.is_empty() {
                        next.push(l.clone());
                    } else {
                        next.push(format!("{prefix},{l}"));
                    }
                }
            }
            labels = next;
        }
        Self { labels }
    }
}

/// Completely positive map in Kraus form, not necessarily trace-preserving.
#[derive(Clone, Debug)]
pub struct CpMap {
    dim_in: SystemDims,
    dim_out: SystemDims,
    kraus: Vec<ComplexMatrix>,
    choi: OnceLock<ComplexMatrix>,
}

impl CpMap {
    pub fn new(dim_in: SystemDims, dim_out: SystemDims, kraus: Vec<ComplexMatrix>) -> Result<Self> {
        for k in &kraus {
            if k.rows() != dim_out.total() || k.cols() != dim_in.total() {
                return Err(Error::DimensionMismatch(format!(
                    "Kraus operator {}x{} does not match dims {} -> {}",
                    k.rows(),
                    k.cols(),
                    dim_in.total(),
                    dim_out.total()
                )));
            }
        }
        Ok(Self { dim_in, dim_out, kraus, choi: OnceLock::new() })
    }

    /// The zero map (empty Kraus list).
    pub fn zero(dim_in: SystemDims, dim_out: SystemDims) -> Self {
        Self { dim_in, dim_out, kraus: Vec::new(), choi: OnceLock::new() }
    }

    pub fn identity(dims: SystemDims) -> Self {
        let id = ComplexMatrix::identity(dims.total());
        Self { dim_in: dims.clone(), dim_out: dims, kraus: vec![id], choi: OnceLock::new() }
    }

    /// The CP map `rho -> K rho K^dagger` of a single operator.
    pub fn from_operator(k: ComplexMatrix) -> Result<Self> {
        let dim_in = SystemDims::single(k.cols())?;
        let dim_out = SystemDims::single(k.rows())?;
        Self::new(dim_in, dim_out, vec![k])
    }

    /// Same map with the factor views replaced (totals must agree).
    pub fn with_dims(&self, dim_in: SystemDims, dim_out: SystemDims) -> Result<Self> {
        if dim_in.total() != self.dim_in.total() || dim_out.total() != self.dim_out.total() {
            return Err(Error::DimensionMismatch("with_dims: totals must be preserved".into()));
        }
        Self::new(dim_in, dim_out, self.kraus.clone())
    }

    pub fn dim_in(&self) -> &SystemDims {
        &self.dim_in
    }

    pub fn dim_out(&self) -> &SystemDims {
        &self.dim_out
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    /// The Choi matrix on `out (x) in`; computed once and cached.
    pub fn choi(&self) -> &ComplexMatrix {
        self.choi.get_or_init(|| {
            if self.kraus.is_empty() {
                let n = self.dim_in.total() * self.dim_out.total();
                ComplexMatrix::zeros(n, n)
            } else {
                kraus_to_choi(&self.kraus).expect("kraus validated at construction")
            }
        })
    }

    /// Applies the map to a density matrix.
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        if rho.rows() != self.dim_in.total() || rho.cols() != self.dim_in.total() {
            return Err(Error::DimensionMismatch("apply: state dimension mismatch".into()));
        }
        let n = self.dim_out.total();
        let mut out = ComplexMatrix::zeros(n, n);
        for k in &self.kraus {
            out = out.add(&k.mul(rho)?.mul(&k.adjoint())?)?;
        }
        Ok(out)
    }

    /// Sequential composition `self . other` (apply `other` first).
    pub fn compose(&self, other: &CpMap) -> Result<CpMap> {
        if other.dim_out.total() != self.dim_in.total() {
            return Err(Error::DimensionMismatch(format!(
                "compose: inner dims {} vs {}",
                other.dim_out.total(),
                self.dim_in.total()
            )));
        }
        let mut kraus = Vec::with_capacity(self.kraus.len() * other.kraus.len());
        for a in &self.kraus {
            for b in &other.kraus {
                kraus.push(a.mul(b)?);
            }
        }
        CpMap::new(other.dim_in.clone(), self.dim_out.clone(), kraus)
    }

    /// Parallel composition; factor lists concatenate.
    pub fn tensor(&self, other: &CpMap) -> Result<CpMap> {
        let dim_in = self.dim_in.concat(&other.dim_in);
        let dim_out = self.dim_out.concat(&other.dim_out);
        let mut kraus = Vec::with_capacity(self.kraus.len() * other.kraus.len());
        for a in &self.kraus {
            for b in &other.kraus {
                kraus.push(kron(a, b));
            }
        }
        // The zero map tensored with anything is the zero map.
        CpMap::new(dim_in, dim_out, kraus)
    }

    /// Convex scaling: multiplies the map by the nonnegative weight `w`.
    pub fn scaled(&self, w: f64) -> Result<CpMap> {
        if w < 0.0 || !w.is_finite() {
            return Err(Error::InvalidWeights(format!("scale weight {w} must be nonnegative")));
        }
        let s = C64::new(w.sqrt(), 0.0);
        let kraus = self.kraus.iter().map(|k| k.scaled(s)).collect();
        CpMap::new(self.dim_in.clone(), self.dim_out.clone(), kraus)
    }

    /// Sum of CP maps (union of Kraus lists).
    pub fn sum(maps: &[CpMap]) -> Result<CpMap> {
        let first = maps.first().ok_or(Error::EmptyKraus)?;
        let mut kraus = Vec::new();
        for m in maps {
            if m.dim_in.total() != first.dim_in.total() || m.dim_out.total() != first.dim_out.total() {
                return Err(Error::DimensionMismatch("sum: member dims differ".into()));
            }
            kraus.extend(m.kraus.iter().cloned());
        }
        CpMap::new(first.dim_in.clone(), first.dim_out.clone(), kraus)
    }

    /// The discarding effect: trace, as a CP map to the trivial system.
    pub fn discard(dims: SystemDims) -> Self {
        let n = dims.total();
        let kraus = (0..n).map(|b| ComplexMatrix::basis_row(n, b)).collect();
        Self { dim_in: dims, dim_out: SystemDims::trivial(), kraus, choi: OnceLock::new() }
    }

    /// Preparation of a fixed state as a CP map from the trivial system.
    pub fn prepare(state: &ComplexMatrix) -> Result<Self> {
        if state.cols() != 1 {
            return Err(Error::DimensionMismatch("prepare expects a column state".into()));
        }
        let dims = SystemDims::single(state.rows())?;
        Self::new(SystemDims::trivial(), dims, vec![state.clone()])
    }

    /// `tr(rho) * I/d`: discard then re-prepare the maximally mixed state.
    pub fn trace_and_reprepare(dims: SystemDims) -> Self {
        let n = dims.total();
        let w = C64::new(1.0 / (n as f64).sqrt(), 0.0);
        let mut kraus = Vec::with_capacity(n * n);
        for b in 0..n {
            for b2 in 0..n {
                kraus.push(ComplexMatrix::unit(n, n, b, b2).scaled(w));
            }
        }
        Self { dim_in: dims.clone(), dim_out: dims, kraus, choi: OnceLock::new() }
    }

    /// `sum_j K_j^dagger K_j`.
    pub fn kraus_sum(&self) -> Result<ComplexMatrix> {
        let n = self.dim_in.total();
        let mut acc = ComplexMatrix::zeros(n, n);
        for k in &self.kraus {
            acc = acc.add(&k.adjoint().mul(k)?)?;
        }
        Ok(acc)
    }

    /// Deviation from trace preservation: `max_abs(sum K^dagger K - I)`.
    pub fn normalisation_deviation(&self) -> Result<f64> {
        self.kraus_sum()?.max_abs_diff(&ComplexMatrix::identity(self.dim_in.total()))
    }

    /// True iff `sum K^dagger K = I` within `tol`.
    pub fn is_normalised(&self, tol: f64) -> bool {
        self.normalisation_deviation().map(|d| d <= tol).unwrap_or(false)
    }

    /// Canonical Kraus operators recomputed from the Choi matrix: descending
    /// eigenvalue order with deterministic tie-breaking and phases.
    pub fn canonical_kraus(&self, rank_tol: f64) -> Result<Vec<ComplexMatrix>> {
        choi_to_kraus(self.choi(), self.dim_in.total(), self.dim_out.total(), rank_tol)
    }

    /// Numerical rank of the Choi matrix at `rank_tol`.
    pub fn choi_rank(&self, rank_tol: f64) -> Result<usize> {
        Ok(self.canonical_kraus(rank_tol)?.len())
    }

    /// True iff the Choi matrix has numerical rank 1 at `tol`.
    pub fn is_pure(&self, tol: f64) -> bool {
        self.choi_rank(tol).map(|r| r == 1).unwrap_or(false)
    }

    /// Canonical purification `V = sum_j K_j (x) |j>_E` over the canonical
    /// Kraus operators, so this is a deterministic function of the map.
    pub fn purify(&self) -> Result<Purification> {
        let kraus = self.canonical_kraus(tol::RANK)?;
        if kraus.is_empty() {
            return Err(Error::EmptyKraus);
        }
        Purification::from_kraus(&self.dim_in, &self.dim_out, &kraus, kraus.len())
    }

    /// Splits the trailing `count` output factors off as an environment and
    /// traces them out, turning each Kraus operator into a block family.
    pub fn trace_out_trailing(&self, count: usize) -> Result<CpMap> {
        let n_factors = self.dim_out.len();
        if count > n_factors {
            return Err(Error::InvalidFactor { index: count, count: n_factors });
        }
        let kept: Vec<usize> = self.dim_out.factors()[..n_factors - count].to_vec();
        let env: usize = self.dim_out.factors()[n_factors - count..].iter().product();
        let kept_dims = SystemDims::new(kept)?;
        let kept_total = kept_dims.total();
        let mut kraus = Vec::with_capacity(self.kraus.len() * env);
        for k in &self.kraus {
            for e in 0..env {
                let block = ComplexMatrix::from_fn(kept_total, self.dim_in.total(), |b, a| {
                    k.get(b * env + e, a)
                });
                kraus.push(block);
            }
        }
        CpMap::new(self.dim_in.clone(), kept_dims, kraus)
    }
}

/// Max-abs entry of the Choi difference; zero iff the channels are equal as
/// CP maps within tolerance.
pub fn channel_distance(a: &CpMap, b: &CpMap) -> Result<f64> {
    a.choi().max_abs_diff(b.choi())
}

/// Wrapper for a reported channel distance.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChannelDistance {
    pub value: f64,
}

/// Stinespring-style purification: a single operator `V: A -> B (x) E` whose
/// environment trace reproduces the source map.
#[derive(Clone, Debug)]
pub struct Purification {
    dim_in: SystemDims,
    dim_out: SystemDims,
    env_dim: usize,
    isometry: ComplexMatrix,
}

impl Purification {
    /// Builds `V = sum_j K_j (x) |j>_E`, padding with zero blocks up to
    /// `env_dim` when the Kraus list is shorter.
    pub fn from_kraus(
        dim_in: &SystemDims,
        dim_out: &SystemDims,
        kraus: &[ComplexMatrix],
        env_dim: usize,
    ) -> Result<Self> {
        if env_dim == 0 || kraus.len() > env_dim {
            return Err(Error::DimensionMismatch(format!(
                "environment dimension {} cannot hold {} Kraus operators",
                env_dim,
                kraus.len()
            )));
        }
        let b = dim_out.total();
        let a = dim_in.total();
        let mut v = ComplexMatrix::zeros(b * env_dim, a);
        for (j, k) in kraus.iter().enumerate() {
            if k.rows() != b || k.cols() != a {
                return Err(Error::DimensionMismatch("purification: Kraus shape mismatch".into()));
            }
            for row in 0..b {
                for col in 0..a {
                    v.set(row * env_dim + j, col, k.get(row, col));
                }
            }
        }
        Ok(Self { dim_in: dim_in.clone(), dim_out: dim_out.clone(), env_dim, isometry: v })
    }

    pub fn env_dim(&self) -> usize {
        self.env_dim
    }

    /// The single operator `V: A -> B (x) E` (environment factor last).
    pub fn isometry(&self) -> &ComplexMatrix {
        &self.isometry
    }

    /// The pure CP map `rho -> V rho V^dagger` with the environment open.
    pub fn as_pure_map(&self) -> Result<CpMap> {
        let dim_out = self.dim_out.concat(&SystemDims::single(self.env_dim)?);
        CpMap::new(self.dim_in.clone(), dim_out, vec![self.isometry.clone()])
    }

    /// Traces out the environment, recovering the purified channel.
    pub fn trace_env(&self) -> Result<CpMap> {
        self.as_pure_map()?.trace_out_trailing(1)
    }

    /// A different purification of the same channel: `(I (x) U) V` for a
    /// unitary `U` on the environment.
    pub fn with_env_unitary(&self, u: &ComplexMatrix) -> Result<Purification> {
        if u.rows() != self.env_dim || u.cols() != self.env_dim {
            return Err(Error::DimensionMismatch("environment unitary has wrong dimension".into()));
        }
        let lift = kron(&ComplexMatrix::identity(self.dim_out.total()), u);
        Ok(Self {
            dim_in: self.dim_in.clone(),
            dim_out: self.dim_out.clone(),
            env_dim: self.env_dim,
            isometry: lift.mul(&self.isometry)?,
        })
    }
}

/// Sharp preparation-observation pair: perfect encode/decode of a classical
/// set into a quantum system, `m(x) . p(x') = delta_{x,x'}`.
#[derive(Clone, Debug)]
pub struct SpoPair {
    classical: ClassicalSet,
    quantum_dim: usize,
    prepare: Vec<ComplexMatrix>,
    measure: Vec<ComplexMatrix>,
}

impl SpoPair {
    pub fn new(
        classical: ClassicalSet,
        quantum_dim: usize,
        prepare: Vec<ComplexMatrix>,
        measure: Vec<ComplexMatrix>,
    ) -> Result<Self> {
        if prepare.len() != classical.size() || measure.len() != classical.size() {
            return Err(Error::DimensionMismatch("SPO pair must cover every label".into()));
        }
        for p in &prepare {
            if p.rows() != quantum_dim || p.cols() != 1 {
                return Err(Error::DimensionMismatch("preparation must be a column state".into()));
            }
        }
        for m in &measure {
            if m.rows() != 1 || m.cols() != quantum_dim {
                return Err(Error::DimensionMismatch("observation must be a row effect".into()));
            }
        }
        Ok(Self { classical, quantum_dim, prepare, measure })
    }

    /// Computational-basis pair for the label set: `p(x_k) = |k>`,
    /// `m(x_k) = <k|`.
    pub fn canonical(classical: &ClassicalSet) -> Self {
        let n = classical.size();
        let prepare = (0..n).map(|k| ComplexMatrix::basis_column(n, k)).collect();
        let measure = (0..n).map(|k| ComplexMatrix::basis_row(n, k)).collect();
        Self { classical: classical.clone(), quantum_dim: n, prepare, measure }
    }

    pub fn classical(&self) -> &ClassicalSet {
        &self.classical
    }

    pub fn quantum_dim(&self) -> usize {
        self.quantum_dim
    }

    pub fn prepare_state(&self, k: usize) -> &ComplexMatrix {
        &self.prepare[k]
    }

    pub fn measure_effect(&self, k: usize) -> &ComplexMatrix {
        &self.measure[k]
    }

    /// Max deviation of `m(x) . p(x')` from the identity pattern.
    pub fn sharpness_deviation(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for (i, m) in self.measure.iter().enumerate() {
            for (j, p) in self.prepare.iter().enumerate() {
                let v = m.mul(p)?.get(0, 0);
                let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                worst = worst.max((v - target).norm());
            }
        }
        Ok(worst)
    }

    pub fn verify(&self, tol: f64) -> bool {
        self.sharpness_deviation().map(|d| d <= tol).unwrap_or(false)
    }

    /// The preparation as a classical-to-quantum CP map (dephases first).
    pub fn prepare_map(&self) -> Result<CpMap> {
        let n = self.classical.size();
        let kraus = (0..n)
            .map(|k| self.prepare[k].mul(&ComplexMatrix::basis_row(n, k)))
            .collect::<Result<Vec<_>>>()?;
        CpMap::new(SystemDims::single(n)?, SystemDims::single(self.quantum_dim)?, kraus)
    }

    /// The observation as a quantum-to-classical CP map.
    pub fn measure_map(&self) -> Result<CpMap> {
        let n = self.classical.size();
        let kraus = (0..n)
            .map(|k| ComplexMatrix::basis_column(n, k).mul(&self.measure[k]))
            .collect::<Result<Vec<_>>>()?;
        CpMap::new(SystemDims::single(self.quantum_dim)?, SystemDims::single(n)?, kraus)
    }

    /// Effect selecting label `k`: `H -> 1`, as a CP map.
    pub fn point_effect(&self, k: usize) -> Result<CpMap> {
        CpMap::new(
            SystemDims::single(self.quantum_dim)?,
            SystemDims::trivial(),
            vec![self.measure[k].clone()],
        )
    }

    /// State preparing label `k`: `1 -> H`, as a CP map.
    pub fn point_state(&self, k: usize) -> Result<CpMap> {
        CpMap::new(
            SystemDims::trivial(),
            SystemDims::single(self.quantum_dim)?,
            vec![self.prepare[k].clone()],
        )
    }
}

/// Canonical computational-basis SPO pair for a classical set.
pub fn canonical_spo(classical: &ClassicalSet) -> SpoPair {
    SpoPair::canonical(classical)
}

/// Indexed family of CP maps `F(o|i)` with classical input and output sets.
/// Missing branches are zero maps.
#[derive(Clone, Debug)]
pub struct QuantumInstrument {
    input_set: ClassicalSet,
    output_set: ClassicalSet,
    dim_in: SystemDims,
    dim_out: SystemDims,
    branches: BTreeMap<(String, String), CpMap>,
}

impl QuantumInstrument {
    pub fn new(
        input_set: ClassicalSet,
        output_set: ClassicalSet,
        dim_in: SystemDims,
        dim_out: SystemDims,
        branches: BTreeMap<(String, String), CpMap>,
    ) -> Result<Self> {
        for ((i, o), map) in &branches {
            input_set.index_of(i)?;
            output_set.index_of(o)?;
            if map.dim_in().total() != dim_in.total() || map.dim_out().total() != dim_out.total() {
                return Err(Error::DimensionMismatch(format!(
                    "branch ({i}|{o}) has dims {} -> {}, instrument expects {} -> {}",
                    map.dim_in().total(),
                    map.dim_out().total(),
                    dim_in.total(),
                    dim_out.total()
                )));
            }
        }
        Ok(Self { input_set, output_set, dim_in, dim_out, branches })
    }

    /// Wraps a channel as an instrument with trivial classical interface.
    pub fn from_channel(map: CpMap) -> Self {
        let trivial = ClassicalSet::trivial();
        let mut branches = BTreeMap::new();
        let dim_in = map.dim_in().clone();
        let dim_out = map.dim_out().clone();
        branches.insert(("*".to_string(), "*".to_string()), map);
        Self { input_set: trivial.clone(), output_set: trivial, dim_in, dim_out, branches }
    }

    pub fn input_set(&self) -> &ClassicalSet {
        &self.input_set
    }

    pub fn output_set(&self) -> &ClassicalSet {
        &self.output_set
    }

    pub fn dim_in(&self) -> &SystemDims {
        &self.dim_in
    }

    pub fn dim_out(&self) -> &SystemDims {
        &self.dim_out
    }

    pub fn branches(&self) -> &BTreeMap<(String, String), CpMap> {
        &self.branches
    }

    pub fn branch(&self, i: &str, o: &str) -> Option<&CpMap> {
        self.branches.get(&(i.to_string(), o.to_string()))
    }

    /// The branch for `(i, o)`, or the zero map when absent.
    pub fn branch_or_zero(&self, i: &str, o: &str) -> CpMap {
        self.branch(i, o)
            .cloned()
            .unwrap_or_else(|| CpMap::zero(self.dim_in.clone(), self.dim_out.clone()))
    }

    /// Worst trace-preservation deviation of `sum_o F(o|i)` over inputs `i`.
    pub fn normalisation_deviation(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in self.input_set.labels() {
            let mut acc = ComplexMatrix::zeros(self.dim_in.total(), self.dim_in.total());
            for o in self.output_set.labels() {
                if let Some(branch) = self.branch(i, o) {
                    acc = acc.add(&branch.kraus_sum()?)?;
                }
            }
            worst = worst.max(acc.max_abs_diff(&ComplexMatrix::identity(self.dim_in.total()))?);
        }
        Ok(worst)
    }

    pub fn is_normalised(&self, tol: f64) -> bool {
        self.normalisation_deviation().map(|d| d <= tol).unwrap_or(false)
    }

    /// The instrument as a single CP map `I (x) A -> O (x) B` with the
    /// classical sets embedded as leading tensor factors (and dephased).
    pub fn total_map(&self) -> Result<CpMap> {
        let ni = self.input_set.size();
        let no = self.output_set.size();
        let dim_in = self.dim_in.with_leading(ni);
        let dim_out = self.dim_out.with_leading(no);
        let mut kraus = Vec::new();
        for ((i, o), branch) in &self.branches {
            let ii = self.input_set.index_of(i)?;
            let oo = self.output_set.index_of(o)?;
            let tag = ComplexMatrix::unit(no, ni, oo, ii);
            for k in branch.kraus() {
                kraus.push(kron(&tag, k));
            }
        }
        CpMap::new(dim_in, dim_out, kraus)
    }
}

/// Marginal-independence check behind the no-signalling observation: after
/// discarding the trailing `quantum_out` output factors of a normalised map,
/// the result must not depend on the trailing `quantum_in` input factors.
///
/// Implemented by comparing the discarded marginal against the same marginal
/// with the designated quantum input traced out and replaced by the
/// maximally mixed state.
pub fn check_no_signalling(
    f: &CpMap,
    quantum_in: usize,
    quantum_out: usize,
    tol: f64,
) -> Result<bool> {
    let deviation = f.normalisation_deviation()?;
    if deviation > tol::NORMALISATION {
        return Err(Error::NotNormalised { deviation });
    }
    if quantum_in > f.dim_in().len() || quantum_out > f.dim_out().len() {
        return Err(Error::InvalidFactor {
            index: quantum_in.max(quantum_out),
            count: f.dim_in().len().max(f.dim_out().len()),
        });
    }
    let marginal = f.trace_out_trailing(quantum_out)?;

    let lead_in: Vec<usize> = f.dim_in().factors()[..f.dim_in().len() - quantum_in].to_vec();
    let tail_in: Vec<usize> = f.dim_in().factors()[f.dim_in().len() - quantum_in..].to_vec();
    let scrambler = CpMap::identity(SystemDims::new(lead_in)?)
        .tensor(&CpMap::trace_and_reprepare(SystemDims::new(tail_in)?))?;
    let scrambled = marginal.compose(&scrambler)?;
    Ok(channel_distance(&marginal, &scrambled)? <= tol)
}
