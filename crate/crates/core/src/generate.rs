//! Seeded random generators for matrices, channels, instruments, families
//! and scenarios. Everything is driven by a ChaCha stream so that CLI runs
//! and test suites are reproducible from a single `u64` seed.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{PhaseVector, ProcessFamily};
use crate::diagram::DiagramAssignment;
use crate::error::Result;
use crate::matrix::{qr_q, ComplexMatrix, SystemDims, C64};
use crate::process::{ClassicalSet, CpMap, QuantumInstrument};
use crate::scenario::{
    definite_to_indefinite, DefiniteCausalScenario, EdgeRec, FramedMultigraph,
    IndefiniteCausalScenario, NodeId,
};

pub struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn gaussian(&mut self) -> f64 {
        // Box-Muller transform.
        let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    pub fn c64(&mut self) -> C64 {
        C64::new(self.gaussian(), self.gaussian())
    }

    pub fn usize_in(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.gen_range(lo..=hi)
    }

    pub fn f64_in(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    pub fn bool_with(&mut self, p: f64) -> bool {
        self.rng.gen_range(0.0..1.0) < p
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| self.c64())
    }

    /// Haar-style random unitary: QR of a Gaussian matrix with column phases
    /// fixed by the R diagonal.
    pub fn unitary(&mut self, d: usize) -> ComplexMatrix {
        qr_q(&self.matrix(d, d)).expect("square QR")
    }

    /// Random isometry with `rows >= cols`.
    pub fn isometry(&mut self, rows: usize, cols: usize) -> ComplexMatrix {
        assert!(rows >= cols, "isometry needs rows >= cols");
        let q = qr_q(&self.matrix(rows, cols)).expect("thin QR");
        ComplexMatrix::from_fn(rows, cols, |i, j| q.get(i, j))
    }

    /// Random normalised pure state as a column vector.
    pub fn pure_state(&mut self, d: usize) -> ComplexMatrix {
        let v = self.matrix(d, 1);
        let norm = v.frobenius_norm();
        v.scaled(C64::new(1.0 / norm, 0.0))
    }

    /// Random density matrix (mixed, full support almost surely).
    pub fn density(&mut self, d: usize) -> ComplexMatrix {
        let a = self.matrix(d, d);
        let rho = a.mul(&a.adjoint()).expect("square");
        let tr = rho.trace().expect("square").re;
        rho.scaled(C64::new(1.0 / tr, 0.0))
    }

    /// Random channel (trace-preserving) with `kraus_count` Kraus operators,
    /// built from a Stinespring isometry.
    pub fn cptp(&mut self, dim_in: usize, dim_out: usize, kraus_count: usize) -> CpMap {
        let mut k = kraus_count.max(1);
        while dim_out * k < dim_in {
            k += 1;
        }
        let v = self.isometry(dim_out * k, dim_in);
        let kraus: Vec<ComplexMatrix> = (0..k)
            .map(|e| ComplexMatrix::from_fn(dim_out, dim_in, |b, a| v.get(b * k + e, a)))
            .collect();
        CpMap::new(
            SystemDims::single(dim_in).expect("positive"),
            SystemDims::single(dim_out).expect("positive"),
            kraus,
        )
        .expect("validated shapes")
    }

    /// Random CP map, generally not trace-preserving.
    pub fn cp_map(&mut self, dim_in: usize, dim_out: usize, kraus_count: usize) -> CpMap {
        let scale = C64::new(1.0 / ((dim_in * dim_out * kraus_count) as f64).sqrt(), 0.0);
        let kraus: Vec<ComplexMatrix> = (0..kraus_count.max(1))
            .map(|_| self.matrix(dim_out, dim_in).scaled(scale))
            .collect();
        CpMap::new(
            SystemDims::single(dim_in).expect("positive"),
            SystemDims::single(dim_out).expect("positive"),
            kraus,
        )
        .expect("validated shapes")
    }

    /// Random pure CP map (single Kraus operator).
    pub fn pure_cp(&mut self, dim_in: usize, dim_out: usize) -> CpMap {
        let scale = C64::new(1.0 / ((dim_in * dim_out) as f64).sqrt(), 0.0);
        CpMap::from_operator(self.matrix(dim_out, dim_in).scaled(scale)).expect("valid operator")
    }

    fn index_set(n: usize) -> ClassicalSet {
        ClassicalSet::new((0..n).map(|k| format!("x{k}")).collect()).expect("distinct labels")
    }

    /// Random family of `n` CP maps `dim_in -> dim_out`.
    pub fn family(&mut self, n: usize, dim_in: usize, dim_out: usize) -> ProcessFamily {
        let index = Self::index_set(n);
        let members = index
            .labels()
            .iter()
            .map(|l| {
                let k = self.usize_in(1, 3);
                (l.clone(), self.cp_map(dim_in, dim_out, k))
            })
            .collect();
        ProcessFamily::new(index, members).expect("uniform dims")
    }

    /// Random family of pure CP maps.
    pub fn pure_family(&mut self, n: usize, dim_in: usize, dim_out: usize) -> ProcessFamily {
        let index = Self::index_set(n);
        let members = index
            .labels()
            .iter()
            .map(|l| (l.clone(), self.pure_cp(dim_in, dim_out)))
            .collect();
        ProcessFamily::new(index, members).expect("uniform dims")
    }

    /// Random family of channels (each member trace-preserving).
    pub fn normalised_family(&mut self, n: usize, dim_in: usize, dim_out: usize) -> ProcessFamily {
        let index = Self::index_set(n);
        let members = index
            .labels()
            .iter()
            .map(|l| {
                let k = self.usize_in(1, 3);
                (l.clone(), self.cptp(dim_in, dim_out, k))
            })
            .collect();
        ProcessFamily::new(index, members).expect("uniform dims")
    }

    /// Random phases over the given index labels.
    pub fn phases(&mut self, labels: &[String]) -> PhaseVector {
        let map: BTreeMap<String, f64> =
            labels.iter().map(|l| (l.clone(), self.f64_in(0.0, TAU))).collect();
        PhaseVector::new(map, labels).expect("full coverage")
    }

    /// Random normalised instrument with the given classical set sizes: for
    /// each input, a channel split across the outcomes.
    pub fn instrument(
        &mut self,
        dim_in: usize,
        dim_out: usize,
        n_inputs: usize,
        n_outputs: usize,
    ) -> QuantumInstrument {
        let input_set = ClassicalSet::new((0..n_inputs).map(|k| format!("i{k}")).collect())
            .expect("distinct labels");
        let output_set = ClassicalSet::new((0..n_outputs).map(|k| format!("o{k}")).collect())
            .expect("distinct labels");
        let per_outcome = self.usize_in(1, 2);
        let mut branches = BTreeMap::new();
        for i in input_set.labels() {
            let channel = self.cptp(dim_in, dim_out, per_outcome * n_outputs);
            let kraus = channel.kraus();
            for (oi, o) in output_set.labels().iter().enumerate() {
                let slice: Vec<ComplexMatrix> = kraus
                    .iter()
                    .enumerate()
                    .filter(|(ki, _)| ki % n_outputs == oi)
                    .map(|(_, k)| k.clone())
                    .collect();
                let branch = CpMap::new(
                    SystemDims::single(dim_in).expect("positive"),
                    SystemDims::single(dim_out).expect("positive"),
                    slice,
                )
                .expect("validated shapes");
                branches.insert((i.clone(), o.clone()), branch);
            }
        }
        QuantumInstrument::new(
            input_set,
            output_set,
            SystemDims::single(dim_in).expect("positive"),
            SystemDims::single(dim_out).expect("positive"),
            branches,
        )
        .expect("validated instrument")
    }

    /// Random definite scenario with `n_events` events: a random DAG on the
    /// events plus random boundary wires. Every event keeps at least one
    /// incident wire so instruments stay non-trivial.
    pub fn definite_scenario(&mut self, n_events: usize) -> DefiniteCausalScenario {
        let events: Vec<NodeId> = (0..n_events).map(|k| format!("v{k}")).collect();
        let mut edges: Vec<EdgeRec> = Vec::new();
        let add_edge = |edges: &mut Vec<EdgeRec>, tail: NodeId, head: NodeId| {
            let id = format!("e{}", edges.len());
            edges.push(EdgeRec { id, tail, head });
        };
        for i in 0..n_events {
            for j in (i + 1)..n_events {
                if self.bool_with(0.4) {
                    add_edge(&mut edges, events[i].clone(), events[j].clone());
                }
            }
        }
        let mut input_nodes = Vec::new();
        let mut output_nodes = Vec::new();
        for e in &events {
            let has_in = edges.iter().any(|ed| &ed.head == e);
            if !has_in || self.bool_with(0.3) {
                let n = format!("in#{}", input_nodes.len());
                input_nodes.push(n.clone());
                add_edge(&mut edges, n, e.clone());
            }
            let has_out = edges.iter().any(|ed| &ed.tail == e);
            if !has_out || self.bool_with(0.3) {
                let n = format!("out#{}", output_nodes.len());
                output_nodes.push(n.clone());
                add_edge(&mut edges, e.clone(), n);
            }
        }
        let mut nodes = input_nodes.clone();
        nodes.extend(events.iter().cloned());
        nodes.extend(output_nodes.iter().cloned());
        let in_framing = nodes
            .iter()
            .map(|n| {
                (
                    n.clone(),
                    edges.iter().filter(|e| &e.head == n).map(|e| e.id.clone()).collect(),
                )
            })
            .collect();
        let out_framing = nodes
            .iter()
            .map(|n| {
                (
                    n.clone(),
                    edges.iter().filter(|e| &e.tail == n).map(|e| e.id.clone()).collect(),
                )
            })
            .collect();
        let graph =
            FramedMultigraph::new(nodes, edges, input_nodes, output_nodes, in_framing, out_framing)
                .expect("constructed consistently");
        let classical = |gen: &mut Self, events: &[NodeId]| {
            events
                .iter()
                .map(|e| {
                    let n = gen.usize_in(1, 2);
                    let set = if n == 1 {
                        ClassicalSet::trivial()
                    } else {
                        ClassicalSet::new((0..n).map(|k| format!("c{k}")).collect()).expect("distinct")
                    };
                    (e.clone(), set)
                })
                .collect::<BTreeMap<_, _>>()
        };
        let ins = classical(self, &events);
        let outs = classical(self, &events);
        DefiniteCausalScenario::new(graph, ins, outs).expect("acyclic by construction")
    }

    /// Random indefinite scenario (with at least one compatible wiring) and a
    /// type-correct diagram of random normalised instruments over it. Labels
    /// are optionally merged into a small pool so several compatible orders
    /// can exist.
    pub fn scenario_and_diagram(
        &mut self,
        max_events: usize,
        max_dim: usize,
    ) -> Result<(IndefiniteCausalScenario, DiagramAssignment)> {
        let n_events = self.usize_in(1, max_events);
        let theta = self.definite_scenario(n_events);
        let phi0 = definite_to_indefinite(&theta)?;

        // Optionally merge edge labels into a two-symbol pool.
        let merge = self.bool_with(0.5);
        let rename = |label: &str, gen: &mut Self| -> String {
            if merge {
                if gen.bool_with(0.5) {
                    "s0".to_string()
                } else {
                    "s1".to_string()
                }
            } else {
                format!("l-{label}")
            }
        };
        let mut mapping: BTreeMap<String, String> = BTreeMap::new();
        for l in phi0.labels() {
            let new = rename(l, self);
            mapping.insert(l.clone(), new);
        }
        let translate = |seq: &[String], mapping: &BTreeMap<String, String>| {
            seq.iter().map(|l| mapping[l].clone()).collect::<Vec<_>>()
        };
        let events = phi0.events().to_vec();
        let phi = IndefiniteCausalScenario::new(
            events.clone(),
            events.iter().map(|e| (e.clone(), phi0.classical_input(e).clone())).collect(),
            events.iter().map(|e| (e.clone(), phi0.classical_output(e).clone())).collect(),
            events
                .iter()
                .map(|e| (e.clone(), translate(phi0.in_labels(e), &mapping)))
                .collect(),
            events
                .iter()
                .map(|e| (e.clone(), translate(phi0.out_labels(e), &mapping)))
                .collect(),
            translate(phi0.boundary_in(), &mapping),
            translate(phi0.boundary_out(), &mapping),
        )?;

        // One dimension per label; when merged, all labels share it.
        let dim = self.usize_in(2, max_dim);
        let sys: BTreeMap<String, usize> =
            phi.labels().iter().map(|l| (l.clone(), dim)).collect();
        let mut proc = BTreeMap::new();
        for e in phi.events() {
            let din: usize = phi.in_labels(e).iter().map(|l| sys[l]).product();
            let dout: usize = phi.out_labels(e).iter().map(|l| sys[l]).product();
            let inst = self.instrument(
                din.max(1),
                dout.max(1),
                phi.classical_input(e).size(),
                phi.classical_output(e).size(),
            );
            // Reuse the scenario's classical label sets.
            let inst = QuantumInstrument::new(
                phi.classical_input(e).clone(),
                phi.classical_output(e).clone(),
                inst.dim_in().clone(),
                inst.dim_out().clone(),
                inst.branches()
                    .iter()
                    .enumerate()
                    .map(|(k, ((_, _), map))| {
                        let i = k / phi.classical_output(e).size();
                        let o = k % phi.classical_output(e).size();
                        (
                            (
                                phi.classical_input(e).labels()[i].clone(),
                                phi.classical_output(e).labels()[o].clone(),
                            ),
                            map.clone(),
                        )
                    })
                    .collect(),
            )?;
            proc.insert(e.clone(), inst);
        }
        Ok((phi, DiagramAssignment::new(sys, proc)))
    }
}
