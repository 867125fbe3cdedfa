//! Diagrams of quantum instruments over causal scenarios and their
//! compilation into a single process.
//!
//! Contraction walks the events in topological order, keeping a frontier of
//! open wires: the instrument branch operators are tensored in and the
//! frontier factors permuted so that consumed wires sit leftmost. This is
//! deliberately a sequential frontier evolution rather than a general
//! tensor-network contractor; dimensions here are desk-scale and the factor
//! bookkeeping stays auditable.
//!
//! Boundary quantum wires are ordered by the boundary node orders, global
//! classical inputs/outputs by event id. Purified contraction keeps one
//! environment wire per event open, appended after the boundary outputs in
//! event-id order regardless of the topological order used — every
//! compatible wiring of one scenario therefore exposes its environments in
//! the same factor order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::{kron, ComplexMatrix, SystemDims};
use crate::process::{ClassicalSet, CpMap, Purification, QuantumInstrument};
use crate::scenario::{
    is_compatible, topological_order, CompatibleScenario, DefiniteCausalScenario, EdgeId,
    IndefiniteCausalScenario, NodeId,
};
use crate::tol;

/// Assignment of a dimension to every wire key and an instrument to every
/// event. Over an indefinite scenario the wire keys are system labels; over
/// a definite scenario they are edge ids.
#[derive(Clone, Debug)]
pub struct DiagramAssignment {
    pub sys: BTreeMap<String, usize>,
    pub proc: BTreeMap<NodeId, QuantumInstrument>,
}

impl DiagramAssignment {
    pub fn new(sys: BTreeMap<String, usize>, proc: BTreeMap<NodeId, QuantumInstrument>) -> Self {
        Self { sys, proc }
    }

    fn wire_dim(&self, key: &str) -> Result<usize> {
        self.sys
            .get(key)
            .copied()
            .ok_or_else(|| Error::InvalidDiagram(format!("no dimension assigned to wire {key:?}")))
    }

    fn check_event(
        &self,
        event: &NodeId,
        in_keys: &[String],
        out_keys: &[String],
        classical_in: &ClassicalSet,
        classical_out: &ClassicalSet,
    ) -> Result<()> {
        let inst = self
            .proc
            .get(event)
            .ok_or_else(|| Error::InvalidDiagram(format!("event {event:?} has no instrument")))?;
        if inst.input_set() != classical_in || inst.output_set() != classical_out {
            return Err(Error::InvalidDiagram(format!(
                "event {event:?}: instrument classical sets do not match the scenario"
            )));
        }
        let mut din = 1usize;
        for k in in_keys {
            din *= self.wire_dim(k)?;
        }
        let mut dout = 1usize;
        for k in out_keys {
            dout *= self.wire_dim(k)?;
        }
        if inst.dim_in().total() != din {
            return Err(Error::InvalidDiagram(format!(
                "event {event:?}: instrument input dim {} but wires {:?} give {}",
                inst.dim_in().total(),
                in_keys,
                din
            )));
        }
        if inst.dim_out().total() != dout {
            return Err(Error::InvalidDiagram(format!(
                "event {event:?}: instrument output dim {} but wires {:?} give {}",
                inst.dim_out().total(),
                out_keys,
                dout
            )));
        }
        Ok(())
    }

    /// Typing check against an indefinite scenario (wire keys are labels).
    pub fn type_check_indefinite(&self, phi: &IndefiniteCausalScenario) -> Result<()> {
        for event in phi.events() {
            self.check_event(
                event,
                phi.in_labels(event),
                phi.out_labels(event),
                phi.classical_input(event),
                phi.classical_output(event),
            )?;
        }
        Ok(())
    }

    /// Typing check against a definite scenario (wire keys are edge ids).
    pub fn type_check_definite(&self, theta: &DefiniteCausalScenario) -> Result<()> {
        let graph = theta.graph();
        for event in theta.events() {
            self.check_event(
                &event,
                graph.in_framing(&event),
                graph.out_framing(&event),
                theta.classical_input(&event),
                theta.classical_output(&event),
            )?;
        }
        Ok(())
    }
}

/// The induced diagram over a compatible definite scenario: wire dimensions
/// read through the edge labelling, instruments unchanged.
pub fn induce(
    phi: &IndefiniteCausalScenario,
    delta: &DiagramAssignment,
    comp: &CompatibleScenario,
) -> Result<DiagramAssignment> {
    if !is_compatible(phi, comp) {
        return Err(Error::NotCompatible(
            "definite scenario does not satisfy the compatibility conditions".into(),
        ));
    }
    delta.type_check_indefinite(phi)?;
    let mut sys = BTreeMap::new();
    for e in comp.scenario.graph().edges() {
        let label = &comp.labelling[&e.id];
        sys.insert(e.id.clone(), delta.wire_dim(label)?);
    }
    let induced = DiagramAssignment::new(sys, delta.proc.clone());
    induced.type_check_definite(&comp.scenario)?;
    Ok(induced)
}

/// A compiled diagram: one instrument whose classical sets are the products
/// of the per-event sets (event-id order) and whose quantum wires are the
/// boundary wires (with any open environment factors appended).
#[derive(Clone, Debug)]
pub struct CompiledProcess {
    pub instrument: QuantumInstrument,
    /// Event-id order used for the classical products and environments.
    pub event_order: Vec<NodeId>,
    /// Environment factor dimensions appended to the quantum output, one per
    /// event in `event_order`; empty for ordinary contraction.
    pub env_dims: Vec<(NodeId, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Wire {
    Edge(EdgeId),
    Env(NodeId),
}

struct Frontier {
    wires: Vec<Wire>,
    dims: Vec<usize>,
}

impl Frontier {
    fn total(&self) -> usize {
        self.dims.iter().product()
    }

    fn position(&self, wire: &Wire) -> Result<usize> {
        self.wires
            .iter()
            .position(|w| w == wire)
            .ok_or_else(|| Error::InvalidDiagram(format!("wire {wire:?} is not open")))
    }
}

/// Moves the given wires to the front of the frontier (in the given order),
/// returning the row permutation applied to the pending operators.
fn pull_to_front(frontier: &mut Frontier, wanted: &[Wire]) -> Result<Vec<usize>> {
    let mut perm: Vec<usize> = Vec::with_capacity(frontier.wires.len());
    for w in wanted {
        perm.push(frontier.position(w)?);
    }
    for (idx, w) in frontier.wires.iter().enumerate() {
        if !wanted.contains(w) {
            perm.push(idx);
        }
    }
    let wires: Vec<Wire> = perm.iter().map(|&i| frontier.wires[i].clone()).collect();
    let dims: Vec<usize> = perm.iter().map(|&i| frontier.dims[i]).collect();
    frontier.wires = wires;
    frontier.dims = dims;
    Ok(perm)
}

struct BranchContraction {
    kraus: Vec<ComplexMatrix>,
    dim_in: SystemDims,
    dim_out: SystemDims,
}

/// Contracts one classical branch: `event_ops` holds the Kraus operators of
/// the chosen branch of each event (an empty list is the zero map). With
/// `env_dims` set, each event contributes exactly one operator with an extra
/// trailing environment factor that stays open.
fn contract_branch(
    theta: &DefiniteCausalScenario,
    edge_dims: &BTreeMap<EdgeId, usize>,
    order: &[NodeId],
    event_ops: &BTreeMap<NodeId, Vec<ComplexMatrix>>,
    env_dims: Option<&BTreeMap<NodeId, usize>>,
) -> Result<BranchContraction> {
    let graph = theta.graph();
    let dim_of = |edge: &EdgeId| -> Result<usize> {
        edge_dims
            .get(edge)
            .copied()
            .ok_or_else(|| Error::InvalidDiagram(format!("no dimension for edge {edge:?}")))
    };

    // Boundary input wires in input-node order.
    let mut frontier = Frontier { wires: Vec::new(), dims: Vec::new() };
    for n in graph.input_nodes() {
        let e = graph
            .outgoing(n)
            .first()
            .map(|e| e.id.clone())
            .ok_or_else(|| Error::InvalidScenario(format!("input node {n:?} has no edge")))?;
        frontier.dims.push(dim_of(&e)?);
        frontier.wires.push(Wire::Edge(e));
    }
    let dim_in = SystemDims::new(frontier.dims.clone())?;
    let mut ops: Vec<ComplexMatrix> = vec![ComplexMatrix::identity(frontier.total())];

    for event in order {
        let in_wires: Vec<Wire> =
            graph.in_framing(event).iter().map(|e| Wire::Edge(e.clone())).collect();
        let before = SystemDims::new(frontier.dims.clone())?;
        let perm = pull_to_front(&mut frontier, &in_wires)?;
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            for op in ops.iter_mut() {
                *op = crate::matrix::permute_rows(op, &before, &perm)?;
            }
        }

        let consumed: usize = frontier.dims[..in_wires.len()].iter().product();
        let rest_total: usize = frontier.dims[in_wires.len()..].iter().product();
        let rest_identity = ComplexMatrix::identity(rest_total);

        let out_wires: Vec<Wire> =
            graph.out_framing(event).iter().map(|e| Wire::Edge(e.clone())).collect();
        let mut out_dims: Vec<usize> = graph
            .out_framing(event)
            .iter()
            .map(dim_of)
            .collect::<Result<_>>()?;
        let mut new_wires = out_wires;
        if let Some(envs) = env_dims {
            let env = envs.get(event).copied().ok_or_else(|| {
                Error::InvalidDiagram(format!("no environment dimension for event {event:?}"))
            })?;
            new_wires.push(Wire::Env(event.clone()));
            out_dims.push(env);
        }
        let produced: usize = out_dims.iter().product();

        let kraus_list = event_ops
            .get(event)
            .ok_or_else(|| Error::InvalidDiagram(format!("no operators for event {event:?}")))?;
        let mut next_ops = Vec::with_capacity(ops.len() * kraus_list.len());
        for k in kraus_list {
            if k.cols() != consumed || k.rows() != produced {
                return Err(Error::InvalidDiagram(format!(
                    "event {event:?}: operator {}x{} does not match wires {}x{}",
                    k.rows(),
                    k.cols(),
                    produced,
                    consumed
                )));
            }
            let lifted = kron(k, &rest_identity);
            for op in &ops {
                next_ops.push(lifted.mul(op)?);
            }
        }
        ops = next_ops;

        let mut wires = new_wires;
        wires.extend(frontier.wires[in_wires.len()..].iter().cloned());
        let mut dims = out_dims;
        dims.extend(&frontier.dims[in_wires.len()..]);
        frontier = Frontier { wires, dims };
    }

    // Final order: boundary outputs by output-node order, then environments
    // by event id.
    let mut targets: Vec<Wire> = Vec::new();
    for n in graph.output_nodes() {
        let e = graph
            .incoming(n)
            .first()
            .map(|e| e.id.clone())
            .ok_or_else(|| Error::InvalidScenario(format!("output node {n:?} has no edge")))?;
        targets.push(Wire::Edge(e));
    }
    if env_dims.is_some() {
        let mut envs: Vec<&Wire> =
            frontier.wires.iter().filter(|w| matches!(w, Wire::Env(_))).collect();
        envs.sort();
        for e in envs {
            targets.push(e.clone());
        }
    }
    if targets.len() != frontier.wires.len() {
        return Err(Error::InvalidDiagram(
            "contraction finished with unexpected open wires".into(),
        ));
    }
    let before = frontier.dims.clone();
    let perm = pull_to_front(&mut frontier, &targets)?;
    if perm.iter().enumerate().any(|(i, &p)| i != p) {
        let dims = SystemDims::new(before)?;
        for op in ops.iter_mut() {
            *op = crate::matrix::permute_rows(op, &dims, &perm)?;
        }
    }
    let dim_out = SystemDims::new(frontier.dims.clone())?;
    Ok(BranchContraction { kraus: ops, dim_in, dim_out })
}

fn product_sets<'a>(
    events: &[NodeId],
    pick: impl Fn(&NodeId) -> &'a ClassicalSet,
) -> (ClassicalSet, Vec<Vec<String>>) {
    let sets: Vec<&ClassicalSet> = events.iter().map(pick).collect();
    let product = ClassicalSet::product(&sets);
    // Tuples of component labels aligned with the product label order.
    let mut tuples: Vec<Vec<String>> = vec![Vec::new()];
    for set in &sets {
        let mut next = Vec::with_capacity(tuples.len() * set.size());
        for t in &tuples {
            for l in set.labels() {
                let mut t2 = t.clone();
                t2.push(l.clone());
                next.push(t2);
            }
        }
        tuples = next;
    }
    (product, tuples)
}

fn compile(
    theta: &DefiniteCausalScenario,
    delta: &DiagramAssignment,
    order: &[NodeId],
    purified: Option<&PurifiedDiagram>,
) -> Result<CompiledProcess> {
    let events = theta.events();
    {
        let mut sorted = order.to_vec();
        sorted.sort();
        if sorted != events {
            return Err(Error::InvalidDiagram(
                "contraction order must cover exactly the events".into(),
            ));
        }
    }
    // Edges must go from earlier to later in the given order.
    let rank: BTreeMap<&NodeId, usize> = order.iter().enumerate().map(|(i, n)| (n, i)).collect();
    for e in theta.graph().edges() {
        if let (Some(&t), Some(&h)) = (rank.get(&e.tail), rank.get(&e.head)) {
            if t >= h {
                return Err(Error::InvalidDiagram(format!(
                    "order is not topological: edge {:?}",
                    e.id
                )));
            }
        }
    }

    let edge_dims: BTreeMap<EdgeId, usize> = theta
        .graph()
        .edges()
        .iter()
        .map(|e| delta.wire_dim(&e.id).map(|d| (e.id.clone(), d)))
        .collect::<Result<_>>()?;

    let (in_set, in_tuples) = product_sets(&events, |e| delta.proc[e].input_set());
    let (out_set, out_tuples) = product_sets(&events, |e| delta.proc[e].output_set());

    let env_dims: Option<BTreeMap<NodeId, usize>> =
        purified.map(|p| p.env_dims.clone());

    let mut branches = BTreeMap::new();
    let mut dims: Option<(SystemDims, SystemDims)> = None;
    for (ii, i_tuple) in in_tuples.iter().enumerate() {
        for (oi, o_tuple) in out_tuples.iter().enumerate() {
            let mut event_ops: BTreeMap<NodeId, Vec<ComplexMatrix>> = BTreeMap::new();
            for (k, event) in events.iter().enumerate() {
                let ops = match purified {
                    None => delta.proc[event]
                        .branch(&i_tuple[k], &o_tuple[k])
                        .map(|b| b.kraus().to_vec())
                        .unwrap_or_default(),
                    Some(p) => p
                        .isometry(event, &i_tuple[k], &o_tuple[k])
                        .map(|v| vec![v.clone()])
                        .unwrap_or_default(),
                };
                event_ops.insert(event.clone(), ops);
            }
            let contraction = contract_branch(theta, &edge_dims, order, &event_ops, env_dims.as_ref())?;
            let branch = CpMap::new(
                contraction.dim_in.clone(),
                contraction.dim_out.clone(),
                contraction.kraus,
            )?;
            dims.get_or_insert((contraction.dim_in, contraction.dim_out));
            branches.insert(
                (in_set.labels()[ii].clone(), out_set.labels()[oi].clone()),
                branch,
            );
        }
    }
    let (dim_in, dim_out) = dims.expect("at least one branch");
    let instrument = QuantumInstrument::new(in_set, out_set, dim_in, dim_out, branches)?;
    let env_list = env_dims
        .map(|m| events.iter().map(|e| (e.clone(), m[e])).collect())
        .unwrap_or_default();
    Ok(CompiledProcess { instrument, event_order: events, env_dims: env_list })
}

/// Compiles a diagram over a definite scenario into its associated process,
/// walking events in the deterministic topological order.
pub fn contract(theta: &DefiniteCausalScenario, delta: &DiagramAssignment) -> Result<CompiledProcess> {
    delta.type_check_definite(theta)?;
    let order = topological_order(theta.graph())?;
    compile(theta, delta, &order, None)
}

/// As [`contract`], but along a caller-supplied topological order (any valid
/// order yields the same compiled process).
pub fn contract_with_order(
    theta: &DefiniteCausalScenario,
    delta: &DiagramAssignment,
    order: &[NodeId],
) -> Result<CompiledProcess> {
    delta.type_check_definite(theta)?;
    compile(theta, delta, order, None)
}

/// Branchwise purification of a diagram: every branch of every instrument is
/// replaced by its canonical purification, with one environment per event
/// sized by the largest branch rank so all branches of an event share it
/// (shorter branches are padded with zero blocks).
#[derive(Clone, Debug)]
pub struct PurifiedDiagram {
    pub base: DiagramAssignment,
    pub env_dims: BTreeMap<NodeId, usize>,
    isometries: BTreeMap<NodeId, BTreeMap<(String, String), ComplexMatrix>>,
}

impl PurifiedDiagram {
    pub fn isometry(&self, event: &str, i: &str, o: &str) -> Option<&ComplexMatrix> {
        self.isometries.get(event)?.get(&(i.to_string(), o.to_string()))
    }

    /// A different purification of the same diagram: applies the unitary
    /// keyed by `(event, input, output)` to that branch's environment.
    pub fn with_env_twist(
        &self,
        twist: &BTreeMap<(NodeId, String, String), ComplexMatrix>,
    ) -> Result<Self> {
        let mut isometries = self.isometries.clone();
        for ((event, i, o), u) in twist {
            let env = *self
                .env_dims
                .get(event)
                .ok_or_else(|| Error::InvalidDiagram(format!("unknown event {event:?}")))?;
            if u.rows() != env || u.cols() != env {
                return Err(Error::DimensionMismatch(format!(
                    "environment unitary for {event:?} must be {env}x{env}"
                )));
            }
            let branch = isometries
                .get_mut(event)
                .and_then(|m| m.get_mut(&(i.clone(), o.clone())))
                .ok_or_else(|| {
                    Error::InvalidDiagram(format!("no branch ({i}|{o}) at event {event:?}"))
                })?;
            let dout = branch.rows() / env;
            let lift = kron(&ComplexMatrix::identity(dout), u);
            *branch = lift.mul(branch)?;
        }
        Ok(Self { base: self.base.clone(), env_dims: self.env_dims.clone(), isometries })
    }
}

/// Purifies every instrument branch of a diagram over an indefinite
/// scenario (canonical purifications, shared per-event environments).
pub fn purify_diagram(
    phi: &IndefiniteCausalScenario,
    delta: &DiagramAssignment,
) -> Result<PurifiedDiagram> {
    delta.type_check_indefinite(phi)?;
    let mut env_dims = BTreeMap::new();
    let mut isometries = BTreeMap::new();
    for event in phi.events() {
        let inst = &delta.proc[event];
        let mut canonical: BTreeMap<(String, String), Vec<ComplexMatrix>> = BTreeMap::new();
        let mut env = 1usize;
        for ((i, o), branch) in inst.branches() {
            let kraus = branch.canonical_kraus(tol::RANK)?;
            env = env.max(kraus.len());
            canonical.insert((i.clone(), o.clone()), kraus);
        }
        let mut per_branch = BTreeMap::new();
        for ((i, o), kraus) in canonical {
            let p = Purification::from_kraus(inst.dim_in(), inst.dim_out(), &kraus, env)?;
            per_branch.insert((i, o), p.isometry().clone());
        }
        env_dims.insert(event.clone(), env);
        isometries.insert(event.clone(), per_branch);
    }
    Ok(PurifiedDiagram { base: delta.clone(), env_dims, isometries })
}

/// Compiles the purified diagram induced on a compatible scenario, keeping
/// every event's environment open as a trailing output factor (event-id
/// order). Tracing those factors recovers the ordinary contraction.
pub fn contract_purified(
    comp: &CompatibleScenario,
    pd: &PurifiedDiagram,
) -> Result<CompiledProcess> {
    let theta = &comp.scenario;
    let mut sys = BTreeMap::new();
    for e in theta.graph().edges() {
        let label = &comp.labelling[&e.id];
        sys.insert(e.id.clone(), pd.base.wire_dim(label)?);
    }
    let induced = DiagramAssignment::new(sys, pd.base.proc.clone());
    induced.type_check_definite(theta)?;
    let order = topological_order(theta.graph())?;
    compile(theta, &induced, &order, Some(pd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::Gen;
    use crate::matrix::C64;
    use crate::process::channel_distance;
    use crate::scenario::{
        definite_to_indefinite, enumerate_compatible, EdgeRec, FramedMultigraph, DEFAULT_ENUM_CAP,
    };

    fn dbl(op: &ComplexMatrix) -> CpMap {
        CpMap::from_operator(op.clone()).unwrap()
    }

    fn pauli_x() -> ComplexMatrix {
        ComplexMatrix::from_real(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    fn pauli_z() -> ComplexMatrix {
        ComplexMatrix::from_real(&[&[1.0, 0.0], &[0.0, -1.0]])
    }

    /// Chain scenario with one qubit wire through the listed events.
    fn chain(events: &[&str]) -> DefiniteCausalScenario {
        let mut nodes = vec!["in#0".to_string()];
        nodes.extend(events.iter().map(|s| s.to_string()));
        nodes.push("out#0".to_string());
        let mut edges = Vec::new();
        for w in nodes.windows(2) {
            edges.push(EdgeRec {
                id: format!("e{}", edges.len()),
                tail: w[0].clone(),
                head: w[1].clone(),
            });
        }
        let in_framing = nodes
            .iter()
            .map(|n| {
                (n.clone(), edges.iter().filter(|e| &e.head == n).map(|e| e.id.clone()).collect())
            })
            .collect();
        let out_framing = nodes
            .iter()
            .map(|n| {
                (n.clone(), edges.iter().filter(|e| &e.tail == n).map(|e| e.id.clone()).collect())
            })
            .collect();
        let graph = FramedMultigraph::new(
            nodes,
            edges,
            vec!["in#0".into()],
            vec!["out#0".into()],
            in_framing,
            out_framing,
        )
        .unwrap();
        let trivial = ClassicalSet::trivial();
        DefiniteCausalScenario::new(
            graph,
            events.iter().map(|e| (e.to_string(), trivial.clone())).collect(),
            events.iter().map(|e| (e.to_string(), trivial.clone())).collect(),
        )
        .unwrap()
    }

    fn unitary_chain_diagram(
        theta: &DefiniteCausalScenario,
        ops: &[ComplexMatrix],
    ) -> DiagramAssignment {
        let events = theta.events();
        let sys = theta
            .graph()
            .edges()
            .iter()
            .map(|e| (e.id.clone(), ops[0].rows()))
            .collect();
        let proc = events
            .iter()
            .zip(ops)
            .map(|(e, u)| (e.clone(), QuantumInstrument::from_channel(dbl(u))))
            .collect();
        DiagramAssignment::new(sys, proc)
    }

    #[test]
    fn single_identity_event_compiles_to_identity() {
        let theta = chain(&["a"]);
        let delta = unitary_chain_diagram(&theta, &[ComplexMatrix::identity(2)]);
        let compiled = contract(&theta, &delta).unwrap();
        let branch = compiled.instrument.branch("*", "*").unwrap();
        let id = CpMap::identity(SystemDims::single(2).unwrap());
        assert!(channel_distance(branch, &id).unwrap() <= 1e-12);
    }

    #[test]
    fn chain_composes_in_order() {
        let theta = chain(&["a", "b"]);
        let delta = unitary_chain_diagram(&theta, &[pauli_x(), pauli_z()]);
        let compiled = contract(&theta, &delta).unwrap();
        let branch = compiled.instrument.branch("*,*", "*,*").unwrap();
        let zx = pauli_z().mul(&pauli_x()).unwrap();
        assert!(channel_distance(branch, &dbl(&zx)).unwrap() <= tol::CONTRACTION);
    }

    /// Two parallel events compile to the tensor of the instruments.
    #[test]
    fn parallel_events_tensor() {
        let nodes: Vec<String> = ["in#0", "in#1", "a", "b", "out#0", "out#1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let edges = vec![
            EdgeRec { id: "e0".into(), tail: "in#0".into(), head: "a".into() },
            EdgeRec { id: "e1".into(), tail: "in#1".into(), head: "b".into() },
            EdgeRec { id: "e2".into(), tail: "a".into(), head: "out#0".into() },
            EdgeRec { id: "e3".into(), tail: "b".into(), head: "out#1".into() },
        ];
        let in_framing = nodes
            .iter()
            .map(|n| {
                (n.clone(), edges.iter().filter(|e| &e.head == n).map(|e| e.id.clone()).collect())
            })
            .collect();
        let out_framing = nodes
            .iter()
            .map(|n| {
                (n.clone(), edges.iter().filter(|e| &e.tail == n).map(|e| e.id.clone()).collect())
            })
            .collect();
        let graph = FramedMultigraph::new(
            nodes,
            edges,
            vec!["in#0".into(), "in#1".into()],
            vec!["out#0".into(), "out#1".into()],
            in_framing,
            out_framing,
        )
        .unwrap();
        let trivial = ClassicalSet::trivial();
        let theta = DefiniteCausalScenario::new(
            graph,
            [("a".to_string(), trivial.clone()), ("b".to_string(), trivial.clone())].into(),
            [("a".to_string(), trivial.clone()), ("b".to_string(), trivial)].into(),
        )
        .unwrap();
        let mut gen = Gen::new(3);
        let fa = gen.cptp(2, 2, 2);
        let fb = gen.cptp(2, 2, 2);
        let sys = ["e0", "e1", "e2", "e3"]
            .iter()
            .map(|e| (e.to_string(), 2usize))
            .collect();
        let proc = [
            ("a".to_string(), QuantumInstrument::from_channel(fa.clone())),
            ("b".to_string(), QuantumInstrument::from_channel(fb.clone())),
        ]
        .into();
        let compiled = contract(&theta, &DiagramAssignment::new(sys, proc)).unwrap();
        let branch = compiled.instrument.branch("*,*", "*,*").unwrap();
        let oracle = fa.tensor(&fb).unwrap();
        assert!(channel_distance(branch, &oracle).unwrap() <= tol::CONTRACTION);
    }

    #[test]
    fn induced_switch_diagram_wires_in_order() {
        // Bipartite switch with distinguishable unitaries: the two induced
        // diagrams compile to the two composition orders.
        let (phi, delta) = crate::control::build_switch(
            2,
            2,
            vec![
                QuantumInstrument::from_channel(dbl(&pauli_x())),
                QuantumInstrument::from_channel(dbl(&pauli_z())),
            ],
        )
        .unwrap();
        let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(comps.len(), 2);
        let mut seen = Vec::new();
        for comp in &comps {
            let induced = induce(&phi, &delta, comp).unwrap();
            induced.type_check_definite(&comp.scenario).unwrap();
            let compiled = contract(&comp.scenario, &induced).unwrap();
            let branch = compiled.instrument.branch("*,*", "*,*").unwrap().clone();
            seen.push(branch);
        }
        let zx = dbl(&pauli_z().mul(&pauli_x()).unwrap());
        let xz = dbl(&pauli_x().mul(&pauli_z()).unwrap());
        let d00 = channel_distance(&seen[0], &zx).unwrap().min(channel_distance(&seen[0], &xz).unwrap());
        let d11 = channel_distance(&seen[1], &zx).unwrap().min(channel_distance(&seen[1], &xz).unwrap());
        assert!(d00 <= tol::CONTRACTION && d11 <= tol::CONTRACTION);
        // The two orders give different processes for X/Z.
        assert!(channel_distance(&seen[0], &seen[1]).unwrap() > 0.5);
    }

    #[test]
    fn induce_rejects_foreign_scenario() {
        let (phi, delta) = crate::control::build_switch(
            2,
            2,
            vec![
                QuantumInstrument::from_channel(dbl(&pauli_x())),
                QuantumInstrument::from_channel(dbl(&pauli_z())),
            ],
        )
        .unwrap();
        let (phi3, _) = crate::control::build_switch(
            3,
            2,
            vec![
                QuantumInstrument::from_channel(dbl(&pauli_x())),
                QuantumInstrument::from_channel(dbl(&pauli_z())),
                QuantumInstrument::from_channel(dbl(&pauli_x())),
            ],
        )
        .unwrap();
        let comps3 = enumerate_compatible(&phi3, DEFAULT_ENUM_CAP).unwrap();
        assert!(matches!(
            induce(&phi, &delta, &comps3[0]),
            Err(Error::NotCompatible(_))
        ));
    }

    #[test]
    fn purified_diagram_env_dims_follow_branch_ranks() {
        let (phi, mut delta) = crate::control::build_switch(
            2,
            2,
            vec![
                QuantumInstrument::from_channel(dbl(&pauli_x())),
                QuantumInstrument::from_channel(dbl(&pauli_z())),
            ],
        )
        .unwrap();
        // All-unitary diagram: every environment is trivial.
        let pd = purify_diagram(&phi, &delta).unwrap();
        assert!(pd.env_dims.values().all(|&e| e == 1));

        // Alice dephasing, Bob unitary: environments (2, 1).
        let dephasing = CpMap::new(
            SystemDims::single(2).unwrap(),
            SystemDims::single(2).unwrap(),
            vec![ComplexMatrix::unit(2, 2, 0, 0), ComplexMatrix::unit(2, 2, 1, 1)],
        )
        .unwrap();
        let first = phi.events()[0].clone();
        delta.proc.insert(first.clone(), QuantumInstrument::from_channel(dephasing));
        let pd = purify_diagram(&phi, &delta).unwrap();
        assert_eq!(pd.env_dims[&first], 2);
        assert_eq!(pd.env_dims[&phi.events()[1]], 1);
    }

    #[test]
    fn purified_contraction_traces_back_to_plain() {
        let mut gen = Gen::new(41);
        for _ in 0..8 {
            let (phi, delta) = gen.scenario_and_diagram(3, 2).unwrap();
            let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
            assert!(!comps.is_empty());
            let pd = purify_diagram(&phi, &delta).unwrap();
            for comp in comps.iter().take(2) {
                let plain = contract(&comp.scenario, &induce(&phi, &delta, comp).unwrap()).unwrap();
                let pure = contract_purified(comp, &pd).unwrap();
                let env_factors = pure.env_dims.len();
                // Environment output dim is the product of the event env dims.
                let env_total: usize = pure.env_dims.iter().map(|(_, d)| d).product();
                assert_eq!(
                    pure.instrument.dim_out().total(),
                    plain.instrument.dim_out().total() * env_total
                );
                for (key, branch) in pure.instrument.branches() {
                    let traced = branch.trace_out_trailing(env_factors).unwrap();
                    let plain_branch = plain.instrument.branch(&key.0, &key.1).unwrap();
                    assert!(
                        channel_distance(&traced, plain_branch).unwrap() <= tol::CHANNEL_EQ,
                        "purified contraction does not trace back"
                    );
                }
            }
        }
    }

    #[test]
    fn purified_branches_are_pure() {
        let (phi, delta) = crate::control::build_switch(
            2,
            2,
            vec![
                QuantumInstrument::from_channel(dbl(&pauli_x())),
                QuantumInstrument::from_channel(dbl(&pauli_z())),
            ],
        )
        .unwrap();
        let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
        let pd = purify_diagram(&phi, &delta).unwrap();
        let pure = contract_purified(&comps[0], &pd).unwrap();
        for branch in pure.instrument.branches().values() {
            assert_eq!(branch.kraus().len(), 1);
            assert!(branch.is_pure(tol::RANK));
        }
    }

    #[test]
    fn contraction_is_order_independent() {
        let mut gen = Gen::new(29);
        for _ in 0..6 {
            let theta = gen.definite_scenario(3);
            let phi = definite_to_indefinite(&theta).unwrap();
            let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
            let comp = &comps[0];
            let sys: BTreeMap<String, usize> =
                phi.labels().iter().map(|l| (l.clone(), 2usize)).collect();
            let mut proc = BTreeMap::new();
            for e in phi.events() {
                let din: usize = phi.in_labels(e).iter().map(|l| sys[l]).product();
                let dout: usize = phi.out_labels(e).iter().map(|l| sys[l]).product();
                proc.insert(
                    e.clone(),
                    QuantumInstrument::from_channel(gen.cptp(din.max(1), dout.max(1), 2)),
                );
            }
            let delta = DiagramAssignment::new(sys, proc);
            let induced = induce(&phi, &delta, comp).unwrap();
            let reference = contract(&comp.scenario, &induced).unwrap();

            // A randomly chosen valid topological order.
            let shuffled = random_topological_order(&comp.scenario, &mut gen);
            let alt = contract_with_order(&comp.scenario, &induced, &shuffled).unwrap();
            for (key, branch) in reference.instrument.branches() {
                let other = alt.instrument.branch(&key.0, &key.1).unwrap();
                assert!(channel_distance(branch, other).unwrap() <= tol::CONTRACTION);
            }
        }
    }

    fn random_topological_order(theta: &DefiniteCausalScenario, gen: &mut Gen) -> Vec<NodeId> {
        let graph = theta.graph();
        let events = theta.events();
        let mut remaining: Vec<NodeId> = events.clone();
        let mut placed: Vec<NodeId> = Vec::new();
        while !remaining.is_empty() {
            let ready: Vec<usize> = remaining
                .iter()
                .enumerate()
                .filter(|(_, n)| {
                    graph.incoming(n).iter().all(|e| {
                        !remaining.contains(&e.tail) || placed.contains(&e.tail)
                    })
                })
                .map(|(i, _)| i)
                .collect();
            let pick = ready[gen.usize_in(0, ready.len() - 1)];
            placed.push(remaining.remove(pick));
        }
        placed
    }

    #[test]
    fn normalised_instruments_compile_to_normalised_process() {
        let mut gen = Gen::new(59);
        for _ in 0..6 {
            let (phi, delta) = gen.scenario_and_diagram(3, 2).unwrap();
            for inst in delta.proc.values() {
                assert!(inst.is_normalised(tol::NORMALISATION));
            }
            let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
            for comp in comps.iter().take(2) {
                let compiled = contract(&comp.scenario, &induce(&phi, &delta, comp).unwrap()).unwrap();
                assert!(compiled.instrument.is_normalised(tol::NORMALISATION));
            }
        }
    }

    #[test]
    fn typing_mismatch_names_the_event() {
        let theta = chain(&["a"]);
        // Instrument expects dim 3 on a dim-2 wire.
        let sys = theta.graph().edges().iter().map(|e| (e.id.clone(), 2usize)).collect();
        let proc = [(
            "a".to_string(),
            QuantumInstrument::from_channel(dbl(&ComplexMatrix::identity(3))),
        )]
        .into();
        let err = contract(&theta, &DiagramAssignment::new(sys, proc)).unwrap_err();
        match err {
            Error::InvalidDiagram(msg) => assert!(msg.contains("\"a\"") || msg.contains("a")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn chain_equals_iterated_compose() {
        let mut gen = Gen::new(67);
        for n in 1..=4 {
            let names: Vec<String> = (0..n).map(|k| format!("u{k}")).collect();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let theta = chain(&refs);
            let ops: Vec<ComplexMatrix> = (0..n).map(|_| gen.unitary(3)).collect();
            let delta = unitary_chain_diagram(&theta, &ops);
            let compiled = contract(&theta, &delta).unwrap();
            let key = vec!["*"; n].join(",");
            let branch = compiled.instrument.branch(&key, &key).unwrap();
            let mut product = ComplexMatrix::identity(3);
            for u in &ops {
                product = u.mul(&product).unwrap();
            }
            assert!(channel_distance(branch, &dbl(&product)).unwrap() <= tol::CONTRACTION);
        }
    }

    #[test]
    fn induced_diagrams_type_check_for_every_compatible_scenario() {
        let mut gen = Gen::new(73);
        for _ in 0..10 {
            let (phi, delta) = gen.scenario_and_diagram(3, 3).unwrap();
            for comp in enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap() {
                let induced = induce(&phi, &delta, &comp).unwrap();
                induced.type_check_definite(&comp.scenario).unwrap();
            }
        }
    }

    #[test]
    fn all_label_dims_propagate_to_induced_edges() {
        let (phi, delta) = crate::control::build_switch(
            2,
            2,
            vec![
                QuantumInstrument::from_channel(dbl(&pauli_x())),
                QuantumInstrument::from_channel(dbl(&pauli_z())),
            ],
        )
        .unwrap();
        for comp in enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap() {
            let induced = induce(&phi, &delta, &comp).unwrap();
            assert!(induced.sys.values().all(|&d| d == 2));
            assert_eq!(induced.sys.len(), comp.scenario.graph().edges().len());
        }
    }

    #[test]
    fn preparation_events_are_supported() {
        // Event with no quantum input: the instrument prepares a state.
        let nodes: Vec<String> = ["p", "out#0"].iter().map(|s| s.to_string()).collect();
        let edges = vec![EdgeRec { id: "e0".into(), tail: "p".into(), head: "out#0".into() }];
        let in_framing = [("p".to_string(), vec![]), ("out#0".to_string(), vec!["e0".to_string()])]
            .into();
        let out_framing = [("p".to_string(), vec!["e0".to_string()]), ("out#0".to_string(), vec![])]
            .into();
        let graph = FramedMultigraph::new(
            nodes,
            edges,
            vec![],
            vec!["out#0".into()],
            in_framing,
            out_framing,
        )
        .unwrap();
        let trivial = ClassicalSet::trivial();
        let theta = DefiniteCausalScenario::new(
            graph,
            [("p".to_string(), trivial.clone())].into(),
            [("p".to_string(), trivial)].into(),
        )
        .unwrap();
        let state = ComplexMatrix::from_fn(2, 1, |i, _| {
            if i == 0 { C64::new(0.6, 0.0) } else { C64::new(0.0, 0.8) }
        });
        let prep = CpMap::prepare(&state).unwrap();
        let sys = [("e0".to_string(), 2usize)].into();
        let proc = [("p".to_string(), QuantumInstrument::from_channel(prep.clone()))].into();
        let compiled = contract(&theta, &DiagramAssignment::new(sys, proc)).unwrap();
        let branch = compiled.instrument.branch("*", "*").unwrap();
        assert!(channel_distance(branch, &prep).unwrap() <= 1e-12);
    }
}
