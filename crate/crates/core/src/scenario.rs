//! Framed multigraphs, definite and indefinite causal scenarios, and the
//! enumeration of all definite scenarios compatible with an indefinite one.
//!
//! An indefinite scenario lists events with labelled open wire slots but no
//! wiring. A compatible definite scenario is a label-respecting acyclic
//! wiring of every out-slot (event outputs plus boundary inputs) to an
//! in-slot (event inputs plus boundary outputs). Enumeration factorises over
//! label classes: slots can only pair within equal labels, so the search is
//! a Cartesian product of per-label perfect matchings, filtered to acyclic
//! graphs and deduplicated/sorted by a canonical key.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::process::ClassicalSet;

pub type NodeId = String;
pub type EdgeId = String;
pub type SystemLabel = String;

/// Default cap on the worst-case number of candidate wirings.
pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

/// Rejects identifiers that would collide with the separators used in
/// canonical keys, branch keys and product labels.
pub fn validate_identifier(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || ":;>#|,".contains(c)) {
        return Err(Error::InvalidIdentifier(s.to_string()));
    }
    Ok(())
}

/// Directed edge of a multigraph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeRec {
    pub id: EdgeId,
    pub tail: NodeId,
    pub head: NodeId,
}

/// Directed multigraph with designated boundary half-edges and total orders
/// (framings) on each node's incident edges.
#[derive(Clone, Debug)]
pub struct FramedMultigraph {
    nodes: Vec<NodeId>,
    edges: Vec<EdgeRec>,
    input_nodes: Vec<NodeId>,
    output_nodes: Vec<NodeId>,
    in_framing: BTreeMap<NodeId, Vec<EdgeId>>,
    out_framing: BTreeMap<NodeId, Vec<EdgeId>>,
}

impl FramedMultigraph {
    pub fn new(
        nodes: Vec<NodeId>,
        edges: Vec<EdgeRec>,
        input_nodes: Vec<NodeId>,
        output_nodes: Vec<NodeId>,
        in_framing: BTreeMap<NodeId, Vec<EdgeId>>,
        out_framing: BTreeMap<NodeId, Vec<EdgeId>>,
    ) -> Result<Self> {
        let node_set: BTreeSet<&NodeId> = nodes.iter().collect();
        if node_set.len() != nodes.len() {
            return Err(Error::InvalidScenario("duplicate node ids".into()));
        }
        let mut edge_ids = BTreeSet::new();
        for e in &edges {
            if !edge_ids.insert(&e.id) {
                return Err(Error::InvalidScenario(format!("duplicate edge id {:?}", e.id)));
            }
            if !node_set.contains(&e.tail) || !node_set.contains(&e.head) {
                return Err(Error::InvalidScenario(format!(
                    "edge {:?} references unknown node",
                    e.id
                )));
            }
        }
        for n in input_nodes.iter().chain(&output_nodes) {
            if !node_set.contains(n) {
                return Err(Error::InvalidScenario(format!("unknown boundary node {n:?}")));
            }
        }
        Ok(Self { nodes, edges, input_nodes, output_nodes, in_framing, out_framing })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRec] {
        &self.edges
    }

    pub fn edge(&self, id: &str) -> Option<&EdgeRec> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn input_nodes(&self) -> &[NodeId] {
        &self.input_nodes
    }

    pub fn output_nodes(&self) -> &[NodeId] {
        &self.output_nodes
    }

    pub fn incoming(&self, node: &str) -> Vec<&EdgeRec> {
        self.edges.iter().filter(|e| e.head == node).collect()
    }

    pub fn outgoing(&self, node: &str) -> Vec<&EdgeRec> {
        self.edges.iter().filter(|e| e.tail == node).collect()
    }

    /// The framed order of edges coming into `node` (empty when unframed).
    pub fn in_framing(&self, node: &str) -> &[EdgeId] {
        self.in_framing.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn out_framing(&self, node: &str) -> &[EdgeId] {
        self.out_framing.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Internal (non-boundary) nodes, sorted by id.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        let boundary: BTreeSet<&NodeId> = self.input_nodes.iter().chain(&self.output_nodes).collect();
        let mut internal: Vec<NodeId> =
            self.nodes.iter().filter(|n| !boundary.contains(n)).cloned().collect();
        internal.sort();
        internal
    }
}

/// A broken structural clause, as data rather than an error.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    /// Node or edge the violation refers to.
    pub subject: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Checks the structural clauses of a framed multigraph: boundary node
/// degrees and framings being permutations of the incident edge sets.
pub fn validate_framed(graph: &FramedMultigraph) -> Vec<Violation> {
    let mut violations = Vec::new();
    let out_set: BTreeSet<&NodeId> = graph.output_nodes.iter().collect();
    for n in &graph.input_nodes {
        if out_set.contains(n) {
            violations.push(Violation {
                subject: n.clone(),
                message: "node is both an input and an output node".into(),
            });
        }
        let incoming = graph.incoming(n).len();
        let outgoing = graph.outgoing(n).len();
        if incoming != 0 {
            violations.push(Violation {
                subject: n.clone(),
                message: format!("input node has {incoming} incoming edges, expected 0"),
            });
        }
        if outgoing != 1 {
            violations.push(Violation {
                subject: n.clone(),
                message: format!("input node has {outgoing} outgoing edges, expected 1"),
            });
        }
    }
    for n in &graph.output_nodes {
        let incoming = graph.incoming(n).len();
        let outgoing = graph.outgoing(n).len();
        if outgoing != 0 {
            violations.push(Violation {
                subject: n.clone(),
                message: format!("output node has {outgoing} outgoing edges, expected 0"),
            });
        }
        if incoming != 1 {
            violations.push(Violation {
                subject: n.clone(),
                message: format!("output node has {incoming} incoming edges, expected 1"),
            });
        }
    }
    for n in &graph.nodes {
        let incident_in: BTreeSet<&EdgeId> = graph.incoming(n).iter().map(|e| &e.id).collect();
        let framed_in: Vec<&EdgeId> = graph.in_framing(n).iter().collect();
        let framed_in_set: BTreeSet<&EdgeId> = framed_in.iter().copied().collect();
        if framed_in.len() != framed_in_set.len()
            || framed_in_set != incident_in
        {
            violations.push(Violation {
                subject: n.clone(),
                message: "incoming framing is not a permutation of the incoming edges".into(),
            });
        }
        let incident_out: BTreeSet<&EdgeId> = graph.outgoing(n).iter().map(|e| &e.id).collect();
        let framed_out: Vec<&EdgeId> = graph.out_framing(n).iter().collect();
        let framed_out_set: BTreeSet<&EdgeId> = framed_out.iter().copied().collect();
        if framed_out.len() != framed_out_set.len() || framed_out_set != incident_out {
            violations.push(Violation {
                subject: n.clone(),
                message: "outgoing framing is not a permutation of the outgoing edges".into(),
            });
        }
    }
    violations
}

/// True iff the graph has no directed cycle and no loop (Kahn's algorithm).
pub fn is_acyclic(graph: &FramedMultigraph) -> bool {
    if graph.edges.iter().any(|e| e.tail == e.head) {
        return false;
    }
    kahn_order(graph).is_ok()
}

fn kahn_order(graph: &FramedMultigraph) -> Result<Vec<NodeId>> {
    let mut in_degree: BTreeMap<&NodeId, usize> =
        graph.nodes.iter().map(|n| (n, 0)).collect();
    for e in &graph.edges {
        if e.tail == e.head {
            return Err(Error::CyclicGraph);
        }
        *in_degree.get_mut(&e.head).ok_or(Error::CyclicGraph)? += 1;
    }
    let mut ready: BTreeSet<&NodeId> = in_degree
        .iter()
        .filter_map(|(n, &d)| (d == 0).then_some(*n))
        .collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(&next) = ready.iter().next() {
        ready.remove(next);
        order.push(next.clone());
        for e in graph.outgoing(next) {
            let d = in_degree.get_mut(&e.head).expect("head exists");
            *d -= 1;
            if *d == 0 {
                ready.insert(&e.head);
            }
        }
    }
    if order.len() != graph.nodes.len() {
        return Err(Error::CyclicGraph);
    }
    Ok(order)
}

/// Deterministic topological order of the internal nodes: every edge goes
/// from earlier to later, smallest node id first among ready nodes.
pub fn topological_order(graph: &FramedMultigraph) -> Result<Vec<NodeId>> {
    let order = kahn_order(graph)?;
    let boundary: BTreeSet<&NodeId> =
        graph.input_nodes.iter().chain(&graph.output_nodes).collect();
    Ok(order.into_iter().filter(|n| !boundary.contains(n)).collect())
}

/// Acyclic framed multigraph whose internal nodes are events carrying
/// classical input/output sets.
#[derive(Clone, Debug)]
pub struct DefiniteCausalScenario {
    graph: FramedMultigraph,
    classical_inputs: BTreeMap<NodeId, ClassicalSet>,
    classical_outputs: BTreeMap<NodeId, ClassicalSet>,
}

impl DefiniteCausalScenario {
    pub fn new(
        graph: FramedMultigraph,
        classical_inputs: BTreeMap<NodeId, ClassicalSet>,
        classical_outputs: BTreeMap<NodeId, ClassicalSet>,
    ) -> Result<Self> {
        let violations = validate_framed(&graph);
        if let Some(v) = violations.first() {
            return Err(Error::InvalidScenario(format!("framed multigraph invalid: {v}")));
        }
        if !is_acyclic(&graph) {
            return Err(Error::CyclicGraph);
        }
        for event in graph.internal_nodes() {
            if !classical_inputs.contains_key(&event) || !classical_outputs.contains_key(&event) {
                return Err(Error::InvalidScenario(format!(
                    "event {event:?} is missing classical input or output sets"
                )));
            }
        }
        Ok(Self { graph, classical_inputs, classical_outputs })
    }

    pub fn graph(&self) -> &FramedMultigraph {
        &self.graph
    }

    /// The events of the scenario: internal nodes, sorted by id.
    pub fn events(&self) -> Vec<NodeId> {
        self.graph.internal_nodes()
    }

    pub fn classical_input(&self, event: &str) -> &ClassicalSet {
        &self.classical_inputs[event]
    }

    pub fn classical_output(&self, event: &str) -> &ClassicalSet {
        &self.classical_outputs[event]
    }
}

/// Events with labelled open wire slots but no wiring: the tuple of events,
/// system labels, classical sets, per-event label sequences and boundary
/// label sequences.
#[derive(Clone, Debug)]
pub struct IndefiniteCausalScenario {
    events: Vec<NodeId>,
    labels: Vec<SystemLabel>,
    classical_inputs: BTreeMap<NodeId, ClassicalSet>,
    classical_outputs: BTreeMap<NodeId, ClassicalSet>,
    in_labels: BTreeMap<NodeId, Vec<SystemLabel>>,
    out_labels: BTreeMap<NodeId, Vec<SystemLabel>>,
    boundary_in: Vec<SystemLabel>,
    boundary_out: Vec<SystemLabel>,
}

impl IndefiniteCausalScenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        events: Vec<NodeId>,
        classical_inputs: BTreeMap<NodeId, ClassicalSet>,
        classical_outputs: BTreeMap<NodeId, ClassicalSet>,
        in_labels: BTreeMap<NodeId, Vec<SystemLabel>>,
        out_labels: BTreeMap<NodeId, Vec<SystemLabel>>,
        boundary_in: Vec<SystemLabel>,
        boundary_out: Vec<SystemLabel>,
    ) -> Result<Self> {
        let mut events = events;
        events.sort();
        events.dedup();
        if events.is_empty() {
            return Err(Error::InvalidScenario("scenario needs at least one event".into()));
        }
        for e in &events {
            validate_identifier(e)?;
            if !classical_inputs.contains_key(e) || !classical_outputs.contains_key(e) {
                return Err(Error::InvalidScenario(format!(
                    "event {e:?} is missing classical input or output sets"
                )));
            }
        }
        let mut labels: BTreeSet<SystemLabel> = BTreeSet::new();
        let mut all_label_seqs: Vec<&Vec<SystemLabel>> = Vec::new();
        for e in &events {
            all_label_seqs.push(
                in_labels
                    .get(e)
                    .ok_or_else(|| Error::InvalidScenario(format!("missing input labels for {e:?}")))?,
            );
            all_label_seqs.push(out_labels.get(e).ok_or_else(|| {
                Error::InvalidScenario(format!("missing output labels for {e:?}"))
            })?);
        }
        all_label_seqs.push(&boundary_in);
        all_label_seqs.push(&boundary_out);
        for seq in all_label_seqs {
            for l in seq {
                validate_identifier(l)?;
                labels.insert(l.clone());
            }
        }
        Ok(Self {
            events,
            labels: labels.into_iter().collect(),
            classical_inputs,
            classical_outputs,
            in_labels,
            out_labels,
            boundary_in,
            boundary_out,
        })
    }

    /// Events in canonical (id) order.
    pub fn events(&self) -> &[NodeId] {
        &self.events
    }

    /// The system labels, sorted.
    pub fn labels(&self) -> &[SystemLabel] {
        &self.labels
    }

    pub fn classical_input(&self, event: &str) -> &ClassicalSet {
        &self.classical_inputs[event]
    }

    pub fn classical_output(&self, event: &str) -> &ClassicalSet {
        &self.classical_outputs[event]
    }

    pub fn in_labels(&self, event: &str) -> &[SystemLabel] {
        &self.in_labels[event]
    }

    pub fn out_labels(&self, event: &str) -> &[SystemLabel] {
        &self.out_labels[event]
    }

    pub fn boundary_in(&self) -> &[SystemLabel] {
        &self.boundary_in
    }

    pub fn boundary_out(&self) -> &[SystemLabel] {
        &self.boundary_out
    }
}

/// A definite scenario compatible with an indefinite one, together with the
/// edge labelling and the canonical key used for ordering and deduplication.
#[derive(Clone, Debug)]
pub struct CompatibleScenario {
    pub scenario: DefiniteCausalScenario,
    pub labelling: BTreeMap<EdgeId, SystemLabel>,
    pub canonical_key: String,
}

/// One endpoint of a wire before pairing.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Endpoint {
    /// `k`-th boundary slot.
    Boundary(usize),
    /// Slot `slot` of event `event`.
    Event { event: NodeId, slot: usize },
}

impl Endpoint {
    fn tail_spec(&self) -> String {
        match self {
            Endpoint::Boundary(k) => format!("in#{k}"),
            Endpoint::Event { event, slot } => format!("{event}#out{slot}"),
        }
    }

    fn head_spec(&self) -> String {
        match self {
            Endpoint::Boundary(k) => format!("out#{k}"),
            Endpoint::Event { event, slot } => format!("{event}#in{slot}"),
        }
    }
}

fn boundary_in_node(k: usize) -> NodeId {
    format!("in#{k}")
}

fn boundary_out_node(k: usize) -> NodeId {
    format!("out#{k}")
}

/// Enumerates exactly the definite causal scenarios compatible with `phi`:
/// all label-respecting pairings of out-slots with in-slots, filtered to
/// acyclic graphs, deduplicated and sorted by canonical key.
///
/// Unbalanced per-label slot counts yield the empty list. The worst-case
/// matching count (product of per-label factorials) is computed up front and
/// refused when it exceeds `cap`.
pub fn enumerate_compatible(
    phi: &IndefiniteCausalScenario,
    cap: u128,
) -> Result<Vec<CompatibleScenario>> {
    // Group endpoints by label.
    let mut outs: BTreeMap<&SystemLabel, Vec<Endpoint>> = BTreeMap::new();
    let mut ins: BTreeMap<&SystemLabel, Vec<Endpoint>> = BTreeMap::new();
    for event in phi.events() {
        for (slot, label) in phi.out_labels(event).iter().enumerate() {
            outs.entry(label).or_default().push(Endpoint::Event { event: event.clone(), slot });
        }
        for (slot, label) in phi.in_labels(event).iter().enumerate() {
            ins.entry(label).or_default().push(Endpoint::Event { event: event.clone(), slot });
        }
    }
    for (k, label) in phi.boundary_in().iter().enumerate() {
        outs.entry(label).or_default().push(Endpoint::Boundary(k));
    }
    for (k, label) in phi.boundary_out().iter().enumerate() {
        ins.entry(label).or_default().push(Endpoint::Boundary(k));
    }

    let labels: BTreeSet<&SystemLabel> = outs.keys().chain(ins.keys()).copied().collect();
    let empty: Vec<Endpoint> = Vec::new();
    let mut classes: Vec<(&SystemLabel, &Vec<Endpoint>, &Vec<Endpoint>)> = Vec::new();
    for label in labels {
        let o = outs.get(label).unwrap_or(&empty);
        let i = ins.get(label).unwrap_or(&empty);
        if o.len() != i.len() {
            return Ok(Vec::new());
        }
        if !o.is_empty() {
            classes.push((label, outs.get(label).unwrap(), ins.get(label).unwrap()));
        }
    }

    let mut bound: u128 = 1;
    for (_, o, _) in &classes {
        let mut f: u128 = 1;
        for k in 1..=o.len() as u128 {
            f = f.saturating_mul(k);
        }
        bound = bound.saturating_mul(f);
        if bound > cap {
            return Err(Error::EnumerationCapExceeded { bound, cap });
        }
    }

    // Per label: all bijections out-slot -> in-slot, as index permutations.
    let per_label: Vec<Vec<Vec<usize>>> = classes
        .iter()
        .map(|(_, _, i)| (0..i.len()).permutations(i.len()).collect())
        .collect();

    let mut found: BTreeMap<String, CompatibleScenario> = BTreeMap::new();
    for choice in per_label.iter().multi_cartesian_product() {
        let mut pairing: Vec<(SystemLabel, Endpoint, Endpoint)> = Vec::new();
        for (class_idx, perm) in choice.iter().enumerate() {
            let (label, o, i) = &classes[class_idx];
            for (out_idx, &in_idx) in perm.iter().enumerate() {
                pairing.push(((*label).clone(), o[out_idx].clone(), i[in_idx].clone()));
            }
        }
        if let Some(comp) = build_compatible(phi, &pairing)? {
            found.entry(comp.canonical_key.clone()).or_insert(comp);
        }
    }
    Ok(found.into_values().collect())
}

/// Builds the framed multigraph of one pairing; `None` when cyclic.
fn build_compatible(
    phi: &IndefiniteCausalScenario,
    pairing: &[(SystemLabel, Endpoint, Endpoint)],
) -> Result<Option<CompatibleScenario>> {
    let mut sorted: Vec<&(SystemLabel, Endpoint, Endpoint)> = pairing.iter().collect();
    sorted.sort_by_key(|(label, tail, head)| (label.clone(), tail.tail_spec(), head.head_spec()));

    let mut nodes: Vec<NodeId> = Vec::new();
    for k in 0..phi.boundary_in().len() {
        nodes.push(boundary_in_node(k));
    }
    nodes.extend(phi.events().iter().cloned());
    for k in 0..phi.boundary_out().len() {
        nodes.push(boundary_out_node(k));
    }

    let mut edges: Vec<EdgeRec> = Vec::new();
    let mut labelling: BTreeMap<EdgeId, SystemLabel> = BTreeMap::new();
    let mut in_slots: BTreeMap<NodeId, Vec<Option<EdgeId>>> = BTreeMap::new();
    let mut out_slots: BTreeMap<NodeId, Vec<Option<EdgeId>>> = BTreeMap::new();
    for event in phi.events() {
        in_slots.insert(event.clone(), vec![None; phi.in_labels(event).len()]);
        out_slots.insert(event.clone(), vec![None; phi.out_labels(event).len()]);
    }
    for k in 0..phi.boundary_in().len() {
        out_slots.insert(boundary_in_node(k), vec![None; 1]);
    }
    for k in 0..phi.boundary_out().len() {
        in_slots.insert(boundary_out_node(k), vec![None; 1]);
    }

    let mut key_parts: Vec<String> = Vec::with_capacity(sorted.len());
    for (idx, (label, tail, head)) in sorted.iter().enumerate() {
        let id: EdgeId = format!("e{idx}");
        let (tail_node, tail_slot) = match tail {
            Endpoint::Boundary(k) => (boundary_in_node(*k), 0usize),
            Endpoint::Event { event, slot } => (event.clone(), *slot),
        };
        let (head_node, head_slot) = match head {
            Endpoint::Boundary(k) => (boundary_out_node(*k), 0usize),
            Endpoint::Event { event, slot } => (event.clone(), *slot),
        };
        out_slots.get_mut(&tail_node).expect("tail registered")[tail_slot] = Some(id.clone());
        in_slots.get_mut(&head_node).expect("head registered")[head_slot] = Some(id.clone());
        key_parts.push(format!("{label}:{}>{}", tail.tail_spec(), head.head_spec()));
        labelling.insert(id.clone(), (*label).clone());
        edges.push(EdgeRec { id, tail: tail_node, head: head_node });
    }

    let collect = |slots: BTreeMap<NodeId, Vec<Option<EdgeId>>>| -> BTreeMap<NodeId, Vec<EdgeId>> {
        slots
            .into_iter()
            .map(|(n, v)| (n, v.into_iter().map(|e| e.expect("every slot paired")).collect()))
            .collect()
    };
    let in_framing = collect(in_slots);
    let out_framing = collect(out_slots);

    let input_nodes: Vec<NodeId> = (0..phi.boundary_in().len()).map(boundary_in_node).collect();
    let output_nodes: Vec<NodeId> = (0..phi.boundary_out().len()).map(boundary_out_node).collect();
    let graph = FramedMultigraph::new(nodes, edges, input_nodes, output_nodes, in_framing, out_framing)?;
    if !is_acyclic(&graph) {
        return Ok(None);
    }
    debug_assert!(validate_framed(&graph).is_empty());

    let scenario = DefiniteCausalScenario::new(
        graph,
        phi.events().iter().map(|e| (e.clone(), phi.classical_input(e).clone())).collect(),
        phi.events().iter().map(|e| (e.clone(), phi.classical_output(e).clone())).collect(),
    )?;
    key_parts.sort();
    let canonical_key = key_parts.join(";");
    Ok(Some(CompatibleScenario { scenario, labelling, canonical_key }))
}

/// Recomputes the canonical key of a labelled definite scenario: the sorted
/// serialisation of `(label, tail slot, head slot)` triples. Edge ids do not
/// appear, so renaming edges leaves the key unchanged.
pub fn canonical_key_of(
    theta: &DefiniteCausalScenario,
    labelling: &BTreeMap<EdgeId, SystemLabel>,
) -> Result<String> {
    let graph = theta.graph();
    let input_pos: BTreeMap<&NodeId, usize> =
        graph.input_nodes().iter().enumerate().map(|(k, n)| (n, k)).collect();
    let output_pos: BTreeMap<&NodeId, usize> =
        graph.output_nodes().iter().enumerate().map(|(k, n)| (n, k)).collect();
    let mut parts = Vec::with_capacity(graph.edges().len());
    for e in graph.edges() {
        let label = labelling
            .get(&e.id)
            .ok_or_else(|| Error::InvalidScenario(format!("edge {:?} has no label", e.id)))?;
        let tail_spec = if let Some(&k) = input_pos.get(&e.tail) {
            format!("in#{k}")
        } else {
            let slot = graph
                .out_framing(&e.tail)
                .iter()
                .position(|id| *id == e.id)
                .ok_or_else(|| Error::InvalidScenario(format!("edge {:?} not framed", e.id)))?;
            format!("{}#out{}", e.tail, slot)
        };
        let head_spec = if let Some(&k) = output_pos.get(&e.head) {
            format!("out#{k}")
        } else {
            let slot = graph
                .in_framing(&e.head)
                .iter()
                .position(|id| *id == e.id)
                .ok_or_else(|| Error::InvalidScenario(format!("edge {:?} not framed", e.id)))?;
            format!("{}#in{}", e.head, slot)
        };
        parts.push(format!("{label}:{tail_spec}>{head_spec}"));
    }
    parts.sort();
    Ok(parts.join(";"))
}

/// Checks the compatibility conditions of `comp` against `phi` directly:
/// events coincide, classical sets coincide, slot counts match, and the
/// label at each edge's tail and head coincide (positionally through the
/// framings and boundary orders).
pub fn is_compatible(phi: &IndefiniteCausalScenario, comp: &CompatibleScenario) -> bool {
    let theta = &comp.scenario;
    let graph = theta.graph();
    if theta.events() != phi.events() {
        return false;
    }
    for e in phi.events() {
        if theta.classical_input(e) != phi.classical_input(e)
            || theta.classical_output(e) != phi.classical_output(e)
        {
            return false;
        }
        if graph.in_framing(e).len() != phi.in_labels(e).len()
            || graph.out_framing(e).len() != phi.out_labels(e).len()
        {
            return false;
        }
    }
    if graph.input_nodes().len() != phi.boundary_in().len()
        || graph.output_nodes().len() != phi.boundary_out().len()
    {
        return false;
    }
    let input_pos: BTreeMap<&NodeId, usize> =
        graph.input_nodes().iter().enumerate().map(|(k, n)| (n, k)).collect();
    let output_pos: BTreeMap<&NodeId, usize> =
        graph.output_nodes().iter().enumerate().map(|(k, n)| (n, k)).collect();
    for e in graph.edges() {
        let Some(label) = comp.labelling.get(&e.id) else { return false };
        let tail_label = if let Some(&k) = input_pos.get(&e.tail) {
            phi.boundary_in().get(k)
        } else {
            graph
                .out_framing(&e.tail)
                .iter()
                .position(|id| *id == e.id)
                .and_then(|slot| phi.out_labels(&e.tail).get(slot))
        };
        let head_label = if let Some(&k) = output_pos.get(&e.head) {
            phi.boundary_out().get(k)
        } else {
            graph
                .in_framing(&e.head)
                .iter()
                .position(|id| *id == e.id)
                .and_then(|slot| phi.in_labels(&e.head).get(slot))
        };
        match (tail_label, head_label) {
            (Some(t), Some(h)) if t == h && t == label => {}
            _ => return false,
        }
    }
    true
}

/// Reads a definite scenario as an indefinite one: the labels are the edge
/// ids, the slot sequences are read off the framings, and the boundary
/// sequences off the boundary node orders. The original scenario is among
/// the compatible scenarios of the result.
pub fn definite_to_indefinite(theta: &DefiniteCausalScenario) -> Result<IndefiniteCausalScenario> {
    let graph = theta.graph();
    let events = theta.events();
    let mut in_labels = BTreeMap::new();
    let mut out_labels = BTreeMap::new();
    for e in &events {
        in_labels.insert(e.clone(), graph.in_framing(e).to_vec());
        out_labels.insert(e.clone(), graph.out_framing(e).to_vec());
    }
    let boundary_in: Vec<SystemLabel> = graph
        .input_nodes()
        .iter()
        .map(|n| {
            graph
                .outgoing(n)
                .first()
                .map(|e| e.id.clone())
                .ok_or_else(|| Error::InvalidScenario(format!("input node {n:?} has no edge")))
        })
        .collect::<Result<_>>()?;
    let boundary_out: Vec<SystemLabel> = graph
        .output_nodes()
        .iter()
        .map(|n| {
            graph
                .incoming(n)
                .first()
                .map(|e| e.id.clone())
                .ok_or_else(|| Error::InvalidScenario(format!("output node {n:?} has no edge")))
        })
        .collect::<Result<_>>()?;
    IndefiniteCausalScenario::new(
        events.clone(),
        events.iter().map(|e| (e.clone(), theta.classical_input(e).clone())).collect(),
        events.iter().map(|e| (e.clone(), theta.classical_output(e).clone())).collect(),
        in_labels,
        out_labels,
        boundary_in,
        boundary_out,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Chain in0 -> a -> b -> out0 with trivial classical sets.
    pub(crate) fn chain_scenario(event_ids: &[&str]) -> DefiniteCausalScenario {
        let mut nodes = vec!["in#0".to_string()];
        nodes.extend(event_ids.iter().map(|s| s.to_string()));
        nodes.push("out#0".to_string());
        let mut edges = Vec::new();
        for w in nodes.windows(2) {
            edges.push(EdgeRec {
                id: format!("e{}", edges.len()),
                tail: w[0].clone(),
                head: w[1].clone(),
            });
        }
        let mut in_framing = BTreeMap::new();
        let mut out_framing = BTreeMap::new();
        for n in &nodes {
            in_framing.insert(
                n.clone(),
                edges.iter().filter(|e| &e.head == n).map(|e| e.id.clone()).collect(),
            );
            out_framing.insert(
                n.clone(),
                edges.iter().filter(|e| &e.tail == n).map(|e| e.id.clone()).collect(),
            );
        }
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
            event_ids.iter().map(|e| (e.to_string(), trivial.clone())).collect(),
            event_ids.iter().map(|e| (e.to_string(), trivial.clone())).collect(),
        )
        .unwrap()
    }

    fn switch_phi(n: usize) -> IndefiniteCausalScenario {
        let events: Vec<NodeId> = (1..=n).map(|k| format!("p{k:02}")).collect();
        let trivial = ClassicalSet::trivial();
        IndefiniteCausalScenario::new(
            events.clone(),
            events.iter().map(|e| (e.clone(), trivial.clone())).collect(),
            events.iter().map(|e| (e.clone(), trivial.clone())).collect(),
            events.iter().map(|e| (e.clone(), vec!["z".to_string()])).collect(),
            events.iter().map(|e| (e.clone(), vec!["z".to_string()])).collect(),
            vec!["z".into()],
            vec!["z".into()],
        )
        .unwrap()
    }

    #[test]
    fn minimal_graph_validates() {
        let theta = chain_scenario(&["a"]);
        assert!(validate_framed(theta.graph()).is_empty());
    }

    #[test]
    fn input_node_with_two_edges_is_flagged() {
        let nodes = vec!["in#0".to_string(), "a".to_string(), "out#0".to_string()];
        let edges = vec![
            EdgeRec { id: "e0".into(), tail: "in#0".into(), head: "a".into() },
            EdgeRec { id: "e1".into(), tail: "in#0".into(), head: "a".into() },
            EdgeRec { id: "e2".into(), tail: "a".into(), head: "out#0".into() },
        ];
        let mut in_framing = BTreeMap::new();
        let mut out_framing = BTreeMap::new();
        in_framing.insert("a".into(), vec!["e0".into(), "e1".into()]);
        in_framing.insert("in#0".into(), vec![]);
        in_framing.insert("out#0".into(), vec!["e2".into()]);
        out_framing.insert("a".into(), vec!["e2".into()]);
        out_framing.insert("in#0".into(), vec!["e0".into(), "e1".into()]);
        out_framing.insert("out#0".into(), vec![]);
        let g = FramedMultigraph::new(
            nodes,
            edges,
            vec!["in#0".into()],
            vec!["out#0".into()],
            in_framing,
            out_framing,
        )
        .unwrap();
        let violations = validate_framed(&g);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].subject, "in#0");
    }

    #[test]
    fn missing_framing_entry_is_flagged() {
        let theta = chain_scenario(&["a"]);
        let graph = theta.graph();
        let mut in_framing: BTreeMap<NodeId, Vec<EdgeId>> = BTreeMap::new();
        let mut out_framing: BTreeMap<NodeId, Vec<EdgeId>> = BTreeMap::new();
        for n in graph.nodes() {
            in_framing.insert(n.clone(), graph.in_framing(n).to_vec());
            out_framing.insert(n.clone(), graph.out_framing(n).to_vec());
        }
        in_framing.get_mut("a").unwrap().clear();
        let broken = FramedMultigraph::new(
            graph.nodes().to_vec(),
            graph.edges().to_vec(),
            graph.input_nodes().to_vec(),
            graph.output_nodes().to_vec(),
            in_framing,
            out_framing,
        )
        .unwrap();
        let violations = validate_framed(&broken);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].message.contains("incoming framing"));
    }

    #[test]
    fn acyclicity_checks() {
        let theta = chain_scenario(&["a", "b", "c"]);
        assert!(is_acyclic(theta.graph()));

        let nodes = vec!["a".to_string(), "b".to_string()];
        let edges = vec![
            EdgeRec { id: "e0".into(), tail: "a".into(), head: "b".into() },
            EdgeRec { id: "e1".into(), tail: "b".into(), head: "a".into() },
        ];
        let g = FramedMultigraph::new(nodes, edges, vec![], vec![], BTreeMap::new(), BTreeMap::new())
            .unwrap();
        assert!(!is_acyclic(&g));

        let looped = FramedMultigraph::new(
            vec!["a".to_string()],
            vec![EdgeRec { id: "e0".into(), tail: "a".into(), head: "a".into() }],
            vec![],
            vec![],
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .unwrap();
        assert!(!is_acyclic(&looped));
    }

    #[test]
    fn topological_order_is_deterministic() {
        let theta = chain_scenario(&["a", "b"]);
        assert_eq!(topological_order(theta.graph()).unwrap(), vec!["a".to_string(), "b".to_string()]);

        // gamma feeds both alpha and beta; ready nodes resolve by id.
        let nodes: Vec<NodeId> =
            ["in#0", "gamma", "alpha", "beta", "out#0", "out#1"].iter().map(|s| s.to_string()).collect();
        let edges = vec![
            EdgeRec { id: "e0".into(), tail: "in#0".into(), head: "gamma".into() },
            EdgeRec { id: "e1".into(), tail: "gamma".into(), head: "alpha".into() },
            EdgeRec { id: "e2".into(), tail: "gamma".into(), head: "beta".into() },
            EdgeRec { id: "e3".into(), tail: "alpha".into(), head: "out#0".into() },
            EdgeRec { id: "e4".into(), tail: "beta".into(), head: "out#1".into() },
        ];
        let g = FramedMultigraph::new(
            nodes,
            edges,
            vec!["in#0".into()],
            vec!["out#0".into(), "out#1".into()],
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(
            topological_order(&g).unwrap(),
            vec!["gamma".to_string(), "alpha".to_string(), "beta".to_string()]
        );

        let cyclic = FramedMultigraph::new(
            vec!["a".to_string(), "b".to_string()],
            vec![
                EdgeRec { id: "e0".into(), tail: "a".into(), head: "b".into() },
                EdgeRec { id: "e1".into(), tail: "b".into(), head: "a".into() },
            ],
            vec![],
            vec![],
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .unwrap();
        assert!(matches!(topological_order(&cyclic), Err(Error::CyclicGraph)));
    }

    #[test]
    fn switch_counts_are_factorials() {
        for (n, expected) in [(1usize, 1usize), (2, 2), (3, 6), (4, 24)] {
            let phi = switch_phi(n);
            let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
            assert_eq!(comps.len(), expected, "switch n={n}");
            // Keys sorted and distinct; every result revalidates.
            for w in comps.windows(2) {
                assert!(w[0].canonical_key < w[1].canonical_key);
            }
            for c in &comps {
                assert!(validate_framed(c.scenario.graph()).is_empty());
                assert!(is_acyclic(c.scenario.graph()));
                assert!(is_compatible(&phi, c));
                assert_eq!(
                    canonical_key_of(&c.scenario, &c.labelling).unwrap(),
                    c.canonical_key
                );
            }
        }
    }

    #[test]
    fn unbalanced_labels_yield_empty() {
        let trivial = ClassicalSet::trivial();
        let phi = IndefiniteCausalScenario::new(
            vec!["a".into()],
            [("a".to_string(), trivial.clone())].into(),
            [("a".to_string(), trivial)].into(),
            [("a".to_string(), vec!["x".to_string()])].into(),
            [("a".to_string(), vec!["y".to_string()])].into(),
            vec!["x".into()],
            vec!["x".into()],
        )
        .unwrap();
        assert!(enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap().is_empty());
    }

    #[test]
    fn cap_is_enforced() {
        let phi = switch_phi(4);
        assert!(matches!(
            enumerate_compatible(&phi, 10),
            Err(Error::EnumerationCapExceeded { .. })
        ));
    }

    #[test]
    fn definite_roundtrip_membership() {
        let theta = chain_scenario(&["a", "b"]);
        let phi = definite_to_indefinite(&theta).unwrap();
        let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
        // Distinct edge labels force a unique wiring.
        assert_eq!(comps.len(), 1);
        let key = canonical_key_of(
            &theta,
            &theta
                .graph()
                .edges()
                .iter()
                .map(|e| (e.id.clone(), e.id.clone()))
                .collect(),
        )
        .unwrap();
        assert_eq!(comps[0].canonical_key, key);
    }

    #[test]
    fn single_event_distinct_labels_unique() {
        let trivial = ClassicalSet::trivial();
        let phi = IndefiniteCausalScenario::new(
            vec!["a".into()],
            [("a".to_string(), trivial.clone())].into(),
            [("a".to_string(), trivial)].into(),
            [("a".to_string(), vec!["x".to_string()])].into(),
            [("a".to_string(), vec!["y".to_string()])].into(),
            vec!["x".into()],
            vec!["y".into()],
        )
        .unwrap();
        assert_eq!(enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap().len(), 1);
    }

    #[test]
    fn independent_events_with_disjoint_labels_unique() {
        let trivial = ClassicalSet::trivial();
        let phi = IndefiniteCausalScenario::new(
            vec!["a".into(), "b".into()],
            [
                ("a".to_string(), trivial.clone()),
                ("b".to_string(), trivial.clone()),
            ]
            .into(),
            [
                ("a".to_string(), trivial.clone()),
                ("b".to_string(), trivial),
            ]
            .into(),
            [
                ("a".to_string(), vec!["x".to_string()]),
                ("b".to_string(), vec!["u".to_string()]),
            ]
            .into(),
            [
                ("a".to_string(), vec!["y".to_string()]),
                ("b".to_string(), vec!["v".to_string()]),
            ]
            .into(),
            vec!["x".into(), "u".into()],
            vec!["y".into(), "v".into()],
        )
        .unwrap();
        assert_eq!(enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap().len(), 1);
    }

    #[test]
    fn canonical_key_ignores_edge_names() {
        let theta = chain_scenario(&["a"]);
        let labelling: BTreeMap<EdgeId, SystemLabel> = theta
            .graph()
            .edges()
            .iter()
            .enumerate()
            .map(|(k, e)| (e.id.clone(), format!("l{k}")))
            .collect();
        let key1 = canonical_key_of(&theta, &labelling).unwrap();

        // Rebuild the same graph with different edge ids.
        let graph = theta.graph();
        let renamed: Vec<EdgeRec> = graph
            .edges()
            .iter()
            .map(|e| EdgeRec { id: format!("w-{}", e.id), tail: e.tail.clone(), head: e.head.clone() })
            .collect();
        let rename = |ids: &[EdgeId]| ids.iter().map(|i| format!("w-{i}")).collect::<Vec<_>>();
        let in_framing = graph
            .nodes()
            .iter()
            .map(|n| (n.clone(), rename(graph.in_framing(n))))
            .collect();
        let out_framing = graph
            .nodes()
            .iter()
            .map(|n| (n.clone(), rename(graph.out_framing(n))))
            .collect();
        let graph2 = FramedMultigraph::new(
            graph.nodes().to_vec(),
            renamed,
            graph.input_nodes().to_vec(),
            graph.output_nodes().to_vec(),
            in_framing,
            out_framing,
        )
        .unwrap();
        let theta2 = DefiniteCausalScenario::new(
            graph2,
            [("a".to_string(), ClassicalSet::trivial())].into(),
            [("a".to_string(), ClassicalSet::trivial())].into(),
        )
        .unwrap();
        let labelling2: BTreeMap<EdgeId, SystemLabel> = theta2
            .graph()
            .edges()
            .iter()
            .enumerate()
            .map(|(k, e)| (e.id.clone(), format!("l{k}")))
            .collect();
        let key2 = canonical_key_of(&theta2, &labelling2).unwrap();
        assert_eq!(key1, key2);
    }

    #[test]
    fn switch_keys_are_distinct_and_stable() {
        let phi = switch_phi(2);
        let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
        assert_ne!(comps[0].canonical_key, comps[1].canonical_key);
        let again = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(
            comps.iter().map(|c| c.canonical_key.clone()).collect::<Vec<_>>(),
            again.iter().map(|c| c.canonical_key.clone()).collect::<Vec<_>>()
        );
    }
}
