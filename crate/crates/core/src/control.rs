//! Controlled processes and superposition of causal orders.
//!
//! A controlled process for a family `(F_x)` is a triple `(G, p, m)` of a
//! process on `H (x) A` and a sharp preparation-observation pair such that
//! measuring the control after `G` (resp. preparing it before) decomposes
//! `G` into the family, branch by branch. Classical control always exists;
//! coherent control of pure maps is a single block-diagonal operator with a
//! free phase per branch; coherent control of general CP maps goes through
//! chosen purifications and genuinely depends on that choice — the witness
//! in [`nogo_witness`] exhibits the dependence, while the coherent control
//! of a *diagram* stays purification-independent because each event's
//! environment carries the same map in every branch of the superposition.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::diagram::{contract, contract_purified, induce, purify_diagram, DiagramAssignment};
use crate::error::{Error, Result};
use crate::matrix::{kron, permute_factors, ComplexMatrix, SystemDims, C64};
use crate::process::{
    channel_distance, ChannelDistance, ClassicalSet, CpMap, Purification, QuantumInstrument,
    SpoPair,
};
use crate::scenario::{enumerate_compatible, IndefiniteCausalScenario, NodeId};
use crate::tol;

/// Indexed family of CP maps with uniform input/output dimensions.
#[derive(Clone, Debug)]
pub struct ProcessFamily {
    index: ClassicalSet,
    members: BTreeMap<String, CpMap>,
}

impl ProcessFamily {
    pub fn new(index: ClassicalSet, members: BTreeMap<String, CpMap>) -> Result<Self> {
        if members.len() != index.size() {
            return Err(Error::InvalidInput(format!(
                "family needs one member per index label: {} labels, {} members",
                index.size(),
                members.len()
            )));
        }
        let first = index.labels().first().expect("non-empty index");
        let reference = members
            .get(first)
            .ok_or_else(|| Error::UnknownLabel(first.clone()))?;
        let (din, dout) = (reference.dim_in().total(), reference.dim_out().total());
        for label in index.labels() {
            let m = members
                .get(label)
                .ok_or_else(|| Error::UnknownLabel(label.clone()))?;
            if m.dim_in().total() != din || m.dim_out().total() != dout {
                return Err(Error::DimensionMismatch(format!(
                    "family member {label:?} has different dimensions"
                )));
            }
        }
        Ok(Self { index, members })
    }

    pub fn from_members(members: Vec<(String, CpMap)>) -> Result<Self> {
        let index = ClassicalSet::new(members.iter().map(|(l, _)| l.clone()).collect())?;
        Self::new(index, members.into_iter().collect())
    }

    pub fn index(&self) -> &ClassicalSet {
        &self.index
    }

    pub fn size(&self) -> usize {
        self.index.size()
    }

    pub fn member(&self, label: &str) -> Result<&CpMap> {
        self.members.get(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Members in index-label order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &CpMap)> {
        self.index.labels().iter().map(move |l| (l, &self.members[l]))
    }

    pub fn dim_in(&self) -> SystemDims {
        self.members[&self.index.labels()[0]].dim_in().clone()
    }

    pub fn dim_out(&self) -> SystemDims {
        self.members[&self.index.labels()[0]].dim_out().clone()
    }

    pub fn all_normalised(&self, tol: f64) -> bool {
        self.members.values().all(|m| m.is_normalised(tol))
    }
}

/// Real phase per branch index, in radians.
#[derive(Clone, Debug)]
pub struct PhaseVector {
    phases: BTreeMap<String, f64>,
}

impl PhaseVector {
    /// Zero phase on every key.
    pub fn zeros(keys: &[String]) -> Self {
        Self { phases: keys.iter().map(|k| (k.clone(), 0.0)).collect() }
    }

    /// Phases for exactly the given keys; missing entries default to zero,
    /// unknown entries are rejected.
    pub fn new(phases: BTreeMap<String, f64>, keys: &[String]) -> Result<Self> {
        for k in phases.keys() {
            if !keys.contains(k) {
                return Err(Error::UnknownKey(k.clone()));
            }
        }
        let mut full: BTreeMap<String, f64> = keys.iter().map(|k| (k.clone(), 0.0)).collect();
        for (k, v) in phases {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("phase for {k:?} must be finite")));
            }
            full.insert(k, v.rem_euclid(TAU));
        }
        Ok(Self { phases: full })
    }

    pub fn get(&self, key: &str) -> f64 {
        self.phases.get(key).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.phases
    }
}

/// A controlled process `(G, p, m)` for a process family.
#[derive(Clone, Debug)]
pub struct ControlledProcess {
    pub control_dim: usize,
    pub family: ProcessFamily,
    pub g: CpMap,
    pub spo: SpoPair,
}

impl ControlledProcess {
    /// The branch obtained by preparing `|x>` on the control, applying `G`
    /// and post-selecting `x` on the observation; equals the family member
    /// when the defining equations hold.
    pub fn branch_via_control(&self, label: &str) -> Result<CpMap> {
        let k = self.spo.classical().index_of(label)?;
        let a = self.family.dim_in();
        let b = self.family.dim_out();
        let prep = self.spo.point_state(k)?.tensor(&CpMap::identity(a))?;
        let post = self.spo.point_effect(k)?.tensor(&CpMap::identity(b))?;
        post.compose(&self.g.compose(&prep)?)
    }
}

/// The classically controlled process of a family: control system of size
/// `|X|`, `G = sum_x dbl[|x><x|] (x) F_x`, canonical preparation and
/// observation. Exists for every family.
pub fn classical_control(family: &ProcessFamily) -> ControlledProcess {
    let n = family.size();
    let a = family.dim_in();
    let b = family.dim_out();
    let mut kraus = Vec::new();
    for (idx, (_, member)) in family.iter().enumerate() {
        let tag = ComplexMatrix::unit(n, n, idx, idx);
        for k in member.kraus() {
            kraus.push(kron(&tag, k));
        }
    }
    let g = CpMap::new(a.with_leading(n), b.with_leading(n), kraus)
        .expect("shapes validated by family");
    ControlledProcess {
        control_dim: n,
        family: family.clone(),
        g,
        spo: SpoPair::canonical(family.index()),
    }
}

/// Coherent control of a family of pure CP maps: the single operator
/// `sum_x e^{i a_x} |x><x| (x) L_x` over the canonical Kraus operator `L_x`
/// of each member, with the given per-branch phase.
pub fn coherent_control_pure(family: &ProcessFamily, phase: &PhaseVector) -> Result<ControlledProcess> {
    let n = family.size();
    let a = family.dim_in();
    let b = family.dim_out();
    let mut w = ComplexMatrix::zeros(n * b.total(), n * a.total());
    for (idx, (label, member)) in family.iter().enumerate() {
        let kraus = member.canonical_kraus(tol::RANK)?;
        if kraus.len() != 1 {
            return Err(Error::NotPure { rank: kraus.len() });
        }
        let alpha = C64::from_polar(1.0, phase.get(label));
        let block = kraus[0].scaled(alpha);
        for row in 0..b.total() {
            for col in 0..a.total() {
                w.set(idx * b.total() + row, idx * a.total() + col, block.get(row, col));
            }
        }
    }
    let g = CpMap::new(a.with_leading(n), b.with_leading(n), vec![w])?;
    Ok(ControlledProcess {
        control_dim: n,
        family: family.clone(),
        g,
        spo: SpoPair::canonical(family.index()),
    })
}

/// Per-branch environment unitaries keyed by family index label.
pub type EnvTwist = BTreeMap<String, ComplexMatrix>;

/// Coherent control of a general family of CP maps through canonical
/// purifications: purify each member into a shared environment (padded to
/// the largest branch rank), coherently control the purifications, then
/// discard the environment. The result depends on the purification choice,
/// which is exposed via `env_unitaries`.
pub fn coherent_control_cp_with_env(
    family: &ProcessFamily,
    phase: &PhaseVector,
    env_unitaries: &EnvTwist,
) -> Result<ControlledProcess> {
    let n = family.size();
    let a = family.dim_in();
    let b = family.dim_out();
    for key in env_unitaries.keys() {
        family.index().index_of(key)?;
    }

    let mut canonical: Vec<Vec<ComplexMatrix>> = Vec::with_capacity(n);
    let mut env = 1usize;
    for (_, member) in family.iter() {
        let kraus = member.canonical_kraus(tol::RANK)?;
        env = env.max(kraus.len());
        canonical.push(kraus);
    }

    let bt = b.total();
    let at = a.total();
    let mut w = ComplexMatrix::zeros(n * bt * env, n * at);
    for (idx, (label, _)) in family.iter().enumerate() {
        let mut purification = Purification::from_kraus(&a, &b, &canonical[idx], env)?;
        if let Some(u) = env_unitaries.get(label) {
            purification = purification.with_env_unitary(u)?;
        }
        let alpha = C64::from_polar(1.0, phase.get(label));
        let v = purification.isometry().scaled(alpha);
        for row in 0..bt * env {
            for col in 0..at {
                w.set(idx * bt * env + row, idx * at + col, v.get(row, col));
            }
        }
    }
    let pure = CpMap::new(
        a.with_leading(n),
        SystemDims::new(vec![n, bt, env])?,
        vec![w],
    )?;
    let g = pure.trace_out_trailing(1)?.with_dims(a.with_leading(n), b.with_leading(n))?;
    Ok(ControlledProcess {
        control_dim: n,
        family: family.clone(),
        g,
        spo: SpoPair::canonical(family.index()),
    })
}

/// Coherent control with the canonical purifications (no environment twist).
pub fn coherent_control_cp(family: &ProcessFamily, phase: &PhaseVector) -> Result<ControlledProcess> {
    coherent_control_cp_with_env(family, phase, &EnvTwist::new())
}

/// Max Choi deviation across the two defining equations of a controlled
/// process: the observation-side decomposition
/// `(m (x) id) . G = sum_x (|x> m_x) (x) F_x`
/// and the preparation-side decomposition
/// `G . (p (x) id) = sum_x (p_x <x|) (x) F_x`.
pub fn eq1_deviation(cp: &ControlledProcess) -> Result<f64> {
    let a = cp.family.dim_in();
    let b = cp.family.dim_out();
    let id_a = CpMap::identity(a.clone());
    let id_b = CpMap::identity(b.clone());
    let m = cp.spo.measure_map()?;
    let p = cp.spo.prepare_map()?;

    let lhs_measure = m.tensor(&id_b)?.compose(&cp.g)?;
    let lhs_prepare = cp.g.compose(&p.tensor(&id_a)?)?;

    let mut measure_terms = Vec::new();
    let mut prepare_terms = Vec::new();
    for (idx, (_, member)) in cp.family.iter().enumerate() {
        let m_x = cp.spo.point_effect(idx)?;
        let p_x = cp.spo.point_state(idx)?;
        let tag_out = CpMap::new(
            SystemDims::trivial(),
            SystemDims::single(cp.spo.classical().size())?,
            vec![ComplexMatrix::basis_column(cp.spo.classical().size(), idx)],
        )?;
        let tag_in = CpMap::new(
            SystemDims::single(cp.spo.classical().size())?,
            SystemDims::trivial(),
            vec![ComplexMatrix::basis_row(cp.spo.classical().size(), idx)],
        )?;
        measure_terms.push(tag_out.compose(&m_x)?.tensor(member)?);
        prepare_terms.push(p_x.compose(&tag_in)?.tensor(member)?);
    }
    let rhs_measure = CpMap::sum(&measure_terms)?;
    let rhs_prepare = CpMap::sum(&prepare_terms)?;

    let d1 = channel_distance(&lhs_measure, &rhs_measure)?;
    let d2 = channel_distance(&lhs_prepare, &rhs_prepare)?;
    Ok(d1.max(d2))
}

/// True iff both defining equations hold within `tol`.
pub fn verify_eq1(cp: &ControlledProcess, tol: f64) -> Result<bool> {
    Ok(eq1_deviation(cp)? <= tol)
}

/// Deviation of the output-discarded marginal from `id_X (x) discard_A`:
/// with every family member trace-preserving, an observer holding only the
/// control cannot learn anything about the quantum input.
pub fn eq2_deviation(cp: &ControlledProcess) -> Result<f64> {
    let a = cp.family.dim_in();
    let b = cp.family.dim_out();
    let m = cp.spo.measure_map()?;
    let p = cp.spo.prepare_map()?;
    let marginal = m
        .tensor(&CpMap::discard(b))?
        .compose(&cp.g)?
        .compose(&p.tensor(&CpMap::identity(a.clone()))?)?;

    // The classical identity is the dephasing channel on the label basis.
    let n = cp.family.size();
    let dephase = CpMap::new(
        SystemDims::single(n)?,
        SystemDims::single(n)?,
        (0..n).map(|k| ComplexMatrix::unit(n, n, k, k)).collect(),
    )?;
    let expected = dephase.tensor(&CpMap::discard(a))?;
    channel_distance(&marginal, &expected)
}

/// Recovers the per-branch phases of a pure controlled process for a pure
/// family: the diagonal blocks of the single Kraus operator of `g` must be
/// proportional to the members' canonical Kraus operators, and the phase of
/// the first branch is normalised to zero.
pub fn extract_phase(g: &CpMap, family: &ProcessFamily) -> Result<PhaseVector> {
    let n = family.size();
    let a = family.dim_in().total();
    let b = family.dim_out().total();
    let candidate = ControlledProcess {
        control_dim: n,
        family: family.clone(),
        g: g.clone(),
        spo: SpoPair::canonical(family.index()),
    };
    let deviation = eq1_deviation(&candidate)?;
    if deviation > tol::EQ1 {
        return Err(Error::ControlEquationViolated { deviation });
    }
    let kraus = g.canonical_kraus(tol::RANK)?;
    if kraus.len() != 1 {
        return Err(Error::NotPure { rank: kraus.len() });
    }
    let w = &kraus[0];

    let mut raw = Vec::with_capacity(n);
    for (idx, (label, member)) in family.iter().enumerate() {
        let member_kraus = member.canonical_kraus(tol::RANK)?;
        if member_kraus.len() != 1 {
            return Err(Error::NotPure { rank: member_kraus.len() });
        }
        let l = &member_kraus[0];
        let block = ComplexMatrix::from_fn(b, a, |row, col| w.get(idx * b + row, idx * a + col));
        let overlap = l.inner(&block)?;
        let scale = l.frobenius_norm().powi(2);
        if overlap.norm() < 1e-10 * scale.max(1e-30) {
            return Err(Error::PhaseExtraction(format!(
                "branch {label:?} block is orthogonal to the member operator"
            )));
        }
        let phi = overlap.arg();
        let residual = block.max_abs_diff(&l.scaled(C64::from_polar(1.0, phi)))?;
        if residual > tol::PHASE_ROUNDTRIP * (1.0 + l.max_abs()) {
            return Err(Error::PhaseExtraction(format!(
                "branch {label:?} block is not proportional to the member operator (residual {residual})"
            )));
        }
        raw.push((label.clone(), phi));
    }
    let base = raw[0].1;
    let phases: BTreeMap<String, f64> = raw
        .into_iter()
        .map(|(label, phi)| (label, (phi - base).rem_euclid(TAU)))
        .collect();
    let recovered = PhaseVector::new(phases, family.index().labels())?;

    // Reassembly must reproduce g exactly (this also rules out off-diagonal
    // leakage between control sectors).
    let rebuilt = coherent_control_pure(family, &recovered)?;
    let distance = channel_distance(&rebuilt.g, g)?;
    if distance > tol::PHASE_ROUNDTRIP {
        return Err(Error::PhaseExtraction(format!(
            "reassembled control differs from input (Choi distance {distance})"
        )));
    }
    Ok(recovered)
}

/// Fixed demonstration that coherent control of general CP maps depends on
/// the choice of purification.
#[derive(Debug)]
pub struct NogoWitness {
    pub family: ProcessFamily,
    /// Canonical-purification control.
    pub canonical: ControlledProcess,
    /// Control built from the alternative purification (identity on the
    /// first member's environment, Pauli X on the second's).
    pub alternative: ControlledProcess,
    /// Choi distance between the two controls; strictly positive.
    pub distance: ChannelDistance,
    /// Distance when the same unitary is applied to both environments; zero
    /// within tolerance because a unitary is trace-preserving.
    pub equal_unitary_distance: f64,
}

/// Builds the witness family (identity qubit channel and Z-dephasing) and
/// compares coherent controls across two purification choices.
pub fn nogo_witness() -> Result<NogoWitness> {
    let identity = CpMap::identity(SystemDims::single(2)?);
    let dephasing = CpMap::new(
        SystemDims::single(2)?,
        SystemDims::single(2)?,
        vec![ComplexMatrix::unit(2, 2, 0, 0), ComplexMatrix::unit(2, 2, 1, 1)],
    )?;
    let family = ProcessFamily::from_members(vec![
        ("0".to_string(), identity),
        ("1".to_string(), dephasing),
    ])?;
    let phase = PhaseVector::zeros(family.index().labels());
    let canonical = coherent_control_cp(&family, &phase)?;

    let pauli_x = ComplexMatrix::from_real(&[&[0.0, 1.0], &[1.0, 0.0]]);
    let mut twist = EnvTwist::new();
    twist.insert("1".to_string(), pauli_x.clone());
    let alternative = coherent_control_cp_with_env(&family, &phase, &twist)?;
    let distance = ChannelDistance { value: channel_distance(&canonical.g, &alternative.g)? };

    let mut same = EnvTwist::new();
    same.insert("0".to_string(), pauli_x.clone());
    same.insert("1".to_string(), pauli_x);
    let equal = coherent_control_cp_with_env(&family, &phase, &same)?;
    let equal_unitary_distance = channel_distance(&canonical.g, &equal.g)?;

    Ok(NogoWitness { family, canonical, alternative, distance, equal_unitary_distance })
}

/// The n-partite switch: `n` parties act once each on one shared system of
/// dimension `system_dim`, with a single system label everywhere, so the
/// compatible definite scenarios are exactly the `n!` orderings.
pub fn build_switch(
    n: usize,
    system_dim: usize,
    instruments: Vec<QuantumInstrument>,
) -> Result<(IndefiniteCausalScenario, DiagramAssignment)> {
    if n == 0 {
        return Err(Error::InvalidScenario("switch needs at least one party".into()));
    }
    if instruments.len() != n {
        return Err(Error::InvalidScenario(format!(
            "switch with {n} parties needs {n} instruments, got {}",
            instruments.len()
        )));
    }
    for (k, inst) in instruments.iter().enumerate() {
        if inst.dim_in().total() != system_dim || inst.dim_out().total() != system_dim {
            return Err(Error::DimensionMismatch(format!(
                "instrument {k} must map dimension {system_dim} to {system_dim}"
            )));
        }
    }
    let events: Vec<NodeId> = (1..=n).map(|k| format!("p{k:02}")).collect();
    let label = "z".to_string();
    let phi = IndefiniteCausalScenario::new(
        events.clone(),
        events
            .iter()
            .zip(&instruments)
            .map(|(e, inst)| (e.clone(), inst.input_set().clone()))
            .collect(),
        events
            .iter()
            .zip(&instruments)
            .map(|(e, inst)| (e.clone(), inst.output_set().clone()))
            .collect(),
        events.iter().map(|e| (e.clone(), vec![label.clone()])).collect(),
        events.iter().map(|e| (e.clone(), vec![label.clone()])).collect(),
        vec![label.clone()],
        vec![label.clone()],
    )?;
    let sys = [(label, system_dim)].into();
    let proc = events.into_iter().zip(instruments).collect();
    Ok((phi, DiagramAssignment::new(sys, proc)))
}

/// Per-event, per-branch environment unitaries used to vary the purification
/// of a diagram.
pub type DiagramTwist = BTreeMap<(NodeId, String, String), ComplexMatrix>;

struct DiagramControlParts {
    keys: Vec<String>,
    /// Pure control operator per global classical branch `(i, o)`.
    pure_controls: BTreeMap<(String, String), ComplexMatrix>,
    /// Compiled base instruments per compatible scenario, keyed canonically.
    compiled: BTreeMap<String, QuantumInstrument>,
    input_set: ClassicalSet,
    output_set: ClassicalSet,
    dim_in: SystemDims,
    dim_out: SystemDims,
    env_total: usize,
}

/// Assembles, for every global classical branch, the block operator
/// `W(o|i) = sum_T e^{i phi_T} |T><T| (x) V_T(o|i)` over the compatible
/// scenarios `T`, where `V_T` is the compiled purified branch with all event
/// environments open in event-id order. That shared order is what cancels a
/// change of purification after the final environment trace.
fn diagram_pure_controls(
    phi: &IndefiniteCausalScenario,
    delta: &DiagramAssignment,
    phase: &PhaseVector,
    twist: &DiagramTwist,
    cap: u128,
) -> Result<DiagramControlParts> {
    delta.type_check_indefinite(phi)?;
    let comps = enumerate_compatible(phi, cap)?;
    if comps.is_empty() {
        return Err(Error::InvalidScenario(
            "no definite causal scenario is compatible with the given scenario".into(),
        ));
    }
    let keys: Vec<String> = comps.iter().map(|c| c.canonical_key.clone()).collect();
    for key in phase.entries().keys() {
        if !keys.contains(key) {
            return Err(Error::UnknownKey(key.clone()));
        }
    }
    let pd = purify_diagram(phi, delta)?.with_env_twist(twist)?;

    let mut compiled = BTreeMap::new();
    let mut pure = Vec::new();
    for comp in &comps {
        let induced = induce(phi, delta, comp)?;
        let base = contract(&comp.scenario, &induced)?;
        compiled.insert(comp.canonical_key.clone(), base.instrument);
        pure.push(contract_purified(comp, &pd)?);
    }

    let n = comps.len();
    let first = &pure[0];
    let input_set = first.instrument.input_set().clone();
    let output_set = first.instrument.output_set().clone();
    let env_total: usize = first.env_dims.iter().map(|(_, d)| d).product();
    let env_factors = first.env_dims.len();
    let pure_out_total = first.instrument.dim_out().total();
    let dim_out_boundary = pure_out_total / env_total.max(1);
    let dim_in = first.instrument.dim_in().clone();
    let dim_out = SystemDims::new(
        first.instrument.dim_out().factors()[..first.instrument.dim_out().len() - env_factors]
            .to_vec(),
    )?;
    debug_assert_eq!(dim_out.total(), dim_out_boundary);

    let mut pure_controls = BTreeMap::new();
    for i in input_set.labels() {
        for o in output_set.labels() {
            let mut w = ComplexMatrix::zeros(n * pure_out_total, n * dim_in.total());
            for (idx, compiled_pure) in pure.iter().enumerate() {
                let branch = compiled_pure.instrument.branch_or_zero(i, o);
                let kraus = branch.kraus();
                if kraus.len() > 1 {
                    return Err(Error::NotPure { rank: kraus.len() });
                }
                let Some(v) = kraus.first() else { continue };
                let alpha = C64::from_polar(1.0, phase.get(&keys[idx]));
                for row in 0..pure_out_total {
                    for col in 0..dim_in.total() {
                        w.set(
                            idx * pure_out_total + row,
                            idx * dim_in.total() + col,
                            v.get(row, col) * alpha,
                        );
                    }
                }
            }
            pure_controls.insert((i.clone(), o.clone()), w);
        }
    }
    Ok(DiagramControlParts {
        keys,
        pure_controls,
        compiled,
        input_set,
        output_set,
        dim_in,
        dim_out,
        env_total,
    })
}

/// Coherent control of a diagram over an indefinite causal scenario, with
/// control system spanned by the compatible definite scenarios in canonical
/// key order: per classical branch, the pure controls of the compiled
/// purified diagrams are assembled and the shared global environment traced
/// out. The result is a controlled process for the family of compiled
/// induced diagrams and does not depend on the purification choice.
pub fn coherent_control_of_diagram(
    phi: &IndefiniteCausalScenario,
    delta: &DiagramAssignment,
    phase: &PhaseVector,
    cap: u128,
) -> Result<ControlledProcess> {
    coherent_control_of_diagram_with_twist(phi, delta, phase, &DiagramTwist::new(), cap)
}

/// As [`coherent_control_of_diagram`], with explicit per-event per-branch
/// environment unitaries (used to exercise purification independence).
pub fn coherent_control_of_diagram_with_twist(
    phi: &IndefiniteCausalScenario,
    delta: &DiagramAssignment,
    phase: &PhaseVector,
    twist: &DiagramTwist,
    cap: u128,
) -> Result<ControlledProcess> {
    let parts = diagram_pure_controls(phi, delta, phase, twist, cap)?;
    let n = parts.keys.len();
    let ni = parts.input_set.size();
    let no = parts.output_set.size();
    let din = parts.dim_in.total();
    let dout = parts.dim_out.total();

    // Per classical branch: trace the global environment of the pure control,
    // then embed the branch into the classical factors.
    let mut kraus = Vec::new();
    for ((i, o), w) in &parts.pure_controls {
        let pure = CpMap::new(
            SystemDims::new(vec![n, din])?,
            SystemDims::new(vec![n, dout, parts.env_total])?,
            vec![w.clone()],
        )?;
        let traced = pure.trace_out_trailing(1)?;
        let ii = parts.input_set.index_of(i)?;
        let oo = parts.output_set.index_of(o)?;
        for k in traced.kraus() {
            // k : (H, Dout) <- (H, Din); insert the classical tags and put
            // factors in (H, O, Dout) <- (H, I, Din) order.
            let tagged = kron(k, &ComplexMatrix::unit(no, ni, oo, ii));
            let embedded = permute_factors(
                &tagged,
                &SystemDims::new(vec![n, din, ni])?,
                &SystemDims::new(vec![n, dout, no])?,
                &[0, 2, 1],
                &[0, 2, 1],
            )?;
            kraus.push(embedded);
        }
    }
    let g = CpMap::new(
        SystemDims::new(vec![n, ni, din])?,
        SystemDims::new(vec![n, no, dout])?,
        kraus,
    )?;

    let members: BTreeMap<String, CpMap> = parts
        .compiled
        .iter()
        .map(|(key, inst)| Ok((key.clone(), inst.total_map()?)))
        .collect::<Result<_>>()?;
    let family = ProcessFamily::new(ClassicalSet::new(parts.keys.clone())?, members)?;
    Ok(ControlledProcess { control_dim: n, family, g, spo: SpoPair::canonical(&ClassicalSet::new(parts.keys)?) })
}

/// How to measure the control after the superposition.
#[derive(Clone, Debug)]
pub enum MeasurementSpec {
    /// Fourier basis of the cyclic group on the compatible scenarios in
    /// canonical key order (exists for every count).
    Fourier,
    /// Explicit unitary whose rows are the measurement effects; every row
    /// must be unbiased with respect to the computational basis.
    Custom(ComplexMatrix),
}

impl MeasurementSpec {
    /// The effect row vectors `<chi_c|` and their outcome labels.
    fn effects(&self, n: usize) -> Result<(Vec<ComplexMatrix>, Vec<String>)> {
        match self {
            MeasurementSpec::Fourier => {
                let scale = 1.0 / (n as f64).sqrt();
                let rows = (0..n)
                    .map(|c| {
                        ComplexMatrix::from_fn(1, n, |_, k| {
                            C64::from_polar(scale, -TAU * (c * k) as f64 / n as f64)
                        })
                    })
                    .collect();
                let labels = if n == 2 {
                    vec!["+".to_string(), "-".to_string()]
                } else {
                    (0..n).map(|c| format!("f{c}")).collect()
                };
                Ok((rows, labels))
            }
            MeasurementSpec::Custom(u) => {
                if u.rows() != n || u.cols() != n {
                    return Err(Error::BiasedMeasurement(format!(
                        "measurement matrix must be {n}x{n}"
                    )));
                }
                let unitarity = u
                    .mul(&u.adjoint())
                    .and_then(|p| p.max_abs_diff(&ComplexMatrix::identity(n)))?;
                if unitarity > tol::UNBIASED {
                    return Err(Error::BiasedMeasurement(format!(
                        "measurement matrix is not unitary (deviation {unitarity})"
                    )));
                }
                let target = 1.0 / n as f64;
                for c in 0..n {
                    for k in 0..n {
                        let overlap = u.get(c, k).norm_sqr();
                        if (overlap - target).abs() > tol::UNBIASED {
                            return Err(Error::BiasedMeasurement(format!(
                                "row {c} has squared overlap {overlap} with basis state {k}, expected {target}"
                            )));
                        }
                    }
                }
                let rows = (0..n)
                    .map(|c| ComplexMatrix::from_fn(1, n, |_, k| u.get(c, k)))
                    .collect();
                Ok((rows, (0..n).map(|c| format!("m{c}")).collect()))
            }
        }
    }
}

/// The superposition-of-causal-orders instrument: uniform control state in,
/// coherent control of the diagram with phase, unbiased measurement out.
/// Branches are indexed by global classical input, global classical output
/// and measurement outcome.
#[derive(Clone, Debug)]
pub struct SuperpositionInstrument {
    pub control_keys: Vec<String>,
    pub input_set: ClassicalSet,
    pub output_set: ClassicalSet,
    pub outcomes: ClassicalSet,
    pub dim_in: SystemDims,
    pub dim_out: SystemDims,
    branches: BTreeMap<(String, String, String), CpMap>,
}

impl SuperpositionInstrument {
    pub fn branches(&self) -> &BTreeMap<(String, String, String), CpMap> {
        &self.branches
    }

    pub fn branch(&self, i: &str, o: &str, outcome: &str) -> Option<&CpMap> {
        self.branches.get(&(i.to_string(), o.to_string(), outcome.to_string()))
    }

    /// Worst deviation of `sum_{o,c} S(c,o|i)` from trace preservation.
    pub fn normalisation_deviation(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in self.input_set.labels() {
            let mut acc = ComplexMatrix::zeros(self.dim_in.total(), self.dim_in.total());
            for o in self.output_set.labels() {
                for c in self.outcomes.labels() {
                    if let Some(b) = self.branch(i, o, c) {
                        acc = acc.add(&b.kraus_sum()?)?;
                    }
                }
            }
            worst = worst.max(acc.max_abs_diff(&ComplexMatrix::identity(self.dim_in.total()))?);
        }
        Ok(worst)
    }

    pub fn is_normalised(&self, tol: f64) -> bool {
        self.normalisation_deviation().map(|d| d <= tol).unwrap_or(false)
    }

    /// Outcome probabilities for a given classical input and input state:
    /// `P(o, c | i, rho) = tr S(c,o|i)(rho)`.
    pub fn probabilities(
        &self,
        i: &str,
        rho: &ComplexMatrix,
    ) -> Result<BTreeMap<(String, String), f64>> {
        self.input_set.index_of(i)?;
        let mut out = BTreeMap::new();
        for o in self.output_set.labels() {
            for c in self.outcomes.labels() {
                let p = match self.branch(i, o, c) {
                    Some(b) => b.apply(rho)?.trace()?.re,
                    None => 0.0,
                };
                out.insert((o.clone(), c.clone()), p);
            }
        }
        Ok(out)
    }
}

/// Builds the superposition of causal orders for a diagram: prepare the
/// control in the uniform superposition over compatible scenarios, apply the
/// coherent control with the given phase, measure the control unbiasedly.
pub fn superpose(
    phi: &IndefiniteCausalScenario,
    delta: &DiagramAssignment,
    phase: &PhaseVector,
    measurement: &MeasurementSpec,
    cap: u128,
) -> Result<SuperpositionInstrument> {
    let parts = diagram_pure_controls(phi, delta, phase, &DiagramTwist::new(), cap)?;
    let n = parts.keys.len();
    let (effects, outcome_labels) = measurement.effects(n)?;
    let outcomes = ClassicalSet::new(outcome_labels)?;

    let din = parts.dim_in.total();
    let dout = parts.dim_out.total();
    let plus = ComplexMatrix::from_fn(n, 1, |_, _| C64::new(1.0 / (n as f64).sqrt(), 0.0));

    let mut branches = BTreeMap::new();
    for ((i, o), w) in &parts.pure_controls {
        // M_c = (<chi_c| (x) I_(Dout,E)) W (|+> (x) I_Din), then trace E.
        let prep = kron(&plus, &ComplexMatrix::identity(din));
        let fed = w.mul(&prep)?;
        for (c, effect) in effects.iter().enumerate() {
            let sel = kron(effect, &ComplexMatrix::identity(dout * parts.env_total));
            let m = sel.mul(&fed)?;
            let pure = CpMap::new(
                SystemDims::new(vec![din])?,
                SystemDims::new(vec![dout, parts.env_total])?,
                vec![m],
            )?;
            let traced = pure
                .trace_out_trailing(1)?
                .with_dims(parts.dim_in.clone(), parts.dim_out.clone())?;
            branches.insert((i.clone(), o.clone(), outcomes.labels()[c].clone()), traced);
        }
    }
    Ok(SuperpositionInstrument {
        control_keys: parts.keys,
        input_set: parts.input_set,
        output_set: parts.output_set,
        outcomes,
        dim_in: parts.dim_in,
        dim_out: parts.dim_out,
        branches,
    })
}

/// Convex mixture of the family branches with the given weights: what
/// remains of a controlled process when the control is fed the matching
/// classical distribution and then discarded.
pub fn discard_control_mixture(cp: &ControlledProcess, weights: &[f64]) -> Result<CpMap> {
    let n = cp.family.size();
    if weights.len() != n {
        return Err(Error::InvalidWeights(format!("expected {n} weights, got {}", weights.len())));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < -tol::WEIGHTS) {
        return Err(Error::InvalidWeights("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > tol::WEIGHTS {
        return Err(Error::InvalidWeights(format!("weights sum to {total}, expected 1")));
    }
    let mut terms = Vec::with_capacity(n);
    for ((_, member), &w) in cp.family.iter().zip(weights) {
        terms.push(member.scaled(w.max(0.0))?);
    }
    CpMap::sum(&terms)
}
