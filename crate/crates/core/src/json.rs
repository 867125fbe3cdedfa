//! JSON wire formats for scenarios, diagrams, instruments and phases.
//!
//! Scenario files describe an indefinite causal scenario:
//!
//! ```json
//! {
//!   "events": [
//!     {"id": "p01", "inputs": ["z"], "outputs": ["z"],
//!      "classical_in": ["*"], "classical_out": ["*"]}
//!   ],
//!   "boundary_in": ["z"],
//!   "boundary_out": ["z"]
//! }
//! ```
//!
//! Diagram files are scenario files with two extra fields: `sys` (label to
//! dimension) and `proc` (event to instrument). Instruments carry their
//! branches as Kraus lists keyed `"i|o"`; matrices use the shared encoding
//! `{"rows", "cols", "re", "im"}`. Classical sets default to the singleton
//! `["*"]` when omitted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagram::DiagramAssignment;
use crate::error::{Error, Result};
use crate::matrix::{ComplexMatrix, SystemDims};
use crate::process::{ClassicalSet, CpMap, QuantumInstrument};
use crate::scenario::IndefiniteCausalScenario;

fn singleton() -> Vec<String> {
    vec!["*".to_string()]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EventFile {
    pub id: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default = "singleton")]
    pub classical_in: Vec<String>,
    #[serde(default = "singleton")]
    pub classical_out: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub events: Vec<EventFile>,
    #[serde(default)]
    pub boundary_in: Vec<String>,
    #[serde(default)]
    pub boundary_out: Vec<String>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("scenario JSON: {e}")))
    }

    pub fn into_scenario(self) -> Result<IndefiniteCausalScenario> {
        let mut classical_in = BTreeMap::new();
        let mut classical_out = BTreeMap::new();
        let mut in_labels = BTreeMap::new();
        let mut out_labels = BTreeMap::new();
        let mut ids = Vec::new();
        for event in self.events {
            if ids.contains(&event.id) {
                return Err(Error::InvalidScenario(format!("duplicate event id {:?}", event.id)));
            }
            classical_in.insert(event.id.clone(), ClassicalSet::new(event.classical_in)?);
            classical_out.insert(event.id.clone(), ClassicalSet::new(event.classical_out)?);
            in_labels.insert(event.id.clone(), event.inputs);
            out_labels.insert(event.id.clone(), event.outputs);
            ids.push(event.id);
        }
        IndefiniteCausalScenario::new(
            ids,
            classical_in,
            classical_out,
            in_labels,
            out_labels,
            self.boundary_in,
            self.boundary_out,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstrumentFile {
    #[serde(default = "singleton")]
    pub inputs: Vec<String>,
    #[serde(default = "singleton")]
    pub outputs: Vec<String>,
    pub dim_in: usize,
    pub dim_out: usize,
    /// Kraus operators per branch, keyed `"input|output"`.
    pub branches: BTreeMap<String, Vec<ComplexMatrix>>,
}

impl InstrumentFile {
    pub fn into_instrument(self) -> Result<QuantumInstrument> {
        let input_set = ClassicalSet::new(self.inputs)?;
        let output_set = ClassicalSet::new(self.outputs)?;
        let dim_in = SystemDims::single(self.dim_in)?;
        let dim_out = SystemDims::single(self.dim_out)?;
        let mut branches = BTreeMap::new();
        for (key, kraus) in self.branches {
            let (i, o) = key
                .split_once('|')
                .ok_or_else(|| Error::InvalidInput(format!("branch key {key:?} must be \"i|o\"")))?;
            branches.insert(
                (i.to_string(), o.to_string()),
                CpMap::new(dim_in.clone(), dim_out.clone(), kraus)?,
            );
        }
        QuantumInstrument::new(input_set, output_set, dim_in, dim_out, branches)
    }

    pub fn from_instrument(inst: &QuantumInstrument) -> Self {
        Self {
            inputs: inst.input_set().labels().to_vec(),
            outputs: inst.output_set().labels().to_vec(),
            dim_in: inst.dim_in().total(),
            dim_out: inst.dim_out().total(),
            branches: inst
                .branches()
                .iter()
                .map(|((i, o), map)| (format!("{i}|{o}"), map.kraus().to_vec()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagramFile {
    #[serde(flatten)]
    pub scenario: ScenarioFile,
    pub sys: BTreeMap<String, usize>,
    pub proc: BTreeMap<String, InstrumentFile>,
}

impl DiagramFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("diagram JSON: {e}")))
    }

    pub fn into_parts(self) -> Result<(IndefiniteCausalScenario, DiagramAssignment)> {
        let phi = self.scenario.into_scenario()?;
        let mut proc = BTreeMap::new();
        for (event, inst) in self.proc {
            proc.insert(event, inst.into_instrument()?);
        }
        let delta = DiagramAssignment::new(self.sys, proc);
        delta.type_check_indefinite(&phi)?;
        Ok((phi, delta))
    }
}

/// Phase assignment file: radians per canonical key; missing keys are zero.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PhasesFile {
    pub phases: BTreeMap<String, f64>,
}

impl PhasesFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("phases JSON: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{enumerate_compatible, DEFAULT_ENUM_CAP};

    fn switch_diagram_json() -> String {
        let x = ComplexMatrix::from_real(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let z = ComplexMatrix::from_real(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let file = DiagramFile {
            scenario: ScenarioFile {
                events: vec![
                    EventFile {
                        id: "alice".into(),
                        inputs: vec!["z".into()],
                        outputs: vec!["z".into()],
                        classical_in: singleton(),
                        classical_out: singleton(),
                    },
                    EventFile {
                        id: "bob".into(),
                        inputs: vec!["z".into()],
                        outputs: vec!["z".into()],
                        classical_in: singleton(),
                        classical_out: singleton(),
                    },
                ],
                boundary_in: vec!["z".into()],
                boundary_out: vec!["z".into()],
            },
            sys: [("z".to_string(), 2usize)].into(),
            proc: [
                (
                    "alice".to_string(),
                    InstrumentFile {
                        inputs: singleton(),
                        outputs: singleton(),
                        dim_in: 2,
                        dim_out: 2,
                        branches: [("*|*".to_string(), vec![x])].into(),
                    },
                ),
                (
                    "bob".to_string(),
                    InstrumentFile {
                        inputs: singleton(),
                        outputs: singleton(),
                        dim_in: 2,
                        dim_out: 2,
                        branches: [("*|*".to_string(), vec![z])].into(),
                    },
                ),
            ]
            .into(),
        };
        serde_json::to_string_pretty(&file).unwrap()
    }

    #[test]
    fn diagram_file_roundtrip() {
        let text = switch_diagram_json();
        let (phi, delta) = DiagramFile::parse(&text).unwrap().into_parts().unwrap();
        assert_eq!(phi.events(), &["alice".to_string(), "bob".to_string()]);
        assert_eq!(delta.sys["z"], 2);
        let comps = enumerate_compatible(&phi, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(comps.len(), 2);
    }

    #[test]
    fn diagram_files_parse_as_scenarios_too() {
        let text = switch_diagram_json();
        let scenario = ScenarioFile::parse(&text).unwrap().into_scenario().unwrap();
        assert_eq!(scenario.boundary_in(), &["z".to_string()]);
    }

    #[test]
    fn bad_branch_key_is_rejected() {
        let inst = InstrumentFile {
            inputs: singleton(),
            outputs: singleton(),
            dim_in: 2,
            dim_out: 2,
            branches: [("nope".to_string(), vec![ComplexMatrix::identity(2)])].into(),
        };
        assert!(inst.into_instrument().is_err());
    }

    #[test]
    fn typing_is_checked_at_load() {
        let mut text = switch_diagram_json();
        text = text.replace("\"dim_in\": 2", "\"dim_in\": 3");
        let parsed = DiagramFile::parse(&text);
        // Either Kraus shapes or typing fail; both are input errors.
        assert!(parsed.and_then(DiagramFile::into_parts).is_err());
    }
}
