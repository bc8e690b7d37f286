//! JSON model documents.
//!
//! ```json
//! {
//!   "population": 100,
//!   "minor_states": [0, 1],
//!   "minor_actions": [0, 1, 2],
//!   "major": { "states": [50, 100], "actions": [50, 100],
//!              "kernel": { "type": "deterministic_set" } },
//!   "minor_kernel": { "type": "forced_mix", "Q": [[0.6, 0.4], [0.3, 0.7]],
//!                     "epsilon": { "1": 0.1, "2": 0.1 } },
//!   "cost": { "type": "capacity_service", "S": { "50": 100, "100": 300 },
//!             "a": 2, "b": 5, "c": 50, "H": { "0": 0, "1": 4, "2": 1 } },
//!   "objective": { "discounted": { "beta": 0.6, "tol": 1e-8 } }
//! }
//! ```
//!
//! Multi-type models give `population` as a list and `minor_states`,
//! `minor_actions` and the table kernel's `P` as one entry per type.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::*;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Label {
    Number(serde_json::Number),
    Text(String),
}

impl Label {
    fn into_string(self) -> String {
        match self {
            Label::Number(n) => n.to_string(),
            Label::Text(s) => s,
        }
    }

    fn from_str(s: &str) -> Self {
        match serde_json::from_str::<serde_json::Number>(s) {
            Ok(n) if n.to_string() == s => Label::Number(n),
            _ => Label::Text(s.to_string()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    population: OneOrMany<usize>,
    minor_states: OneOrMany<Vec<Label>>,
    minor_actions: OneOrMany<Vec<Label>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    major: Option<MajorDoc>,
    minor_kernel: MinorKernelDoc,
    cost: CostDoc,
    objective: ObjectiveDoc,
    #[serde(default, skip_serializing_if = "is_per_type")]
    lattice: ShapeDoc,
}

#[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ShapeDoc {
    #[default]
    PerType,
    Pooled,
}

fn is_per_type(s: &ShapeDoc) -> bool {
    *s == ShapeDoc::PerType
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MajorDoc {
    states: Vec<Label>,
    actions: Vec<Label>,
    kernel: MajorKernelDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum MajorKernelDoc {
    DeterministicSet,
    Table {
        #[serde(rename = "P")]
        p: BTreeMap<String, Matrix>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum MinorKernelDoc {
    Table {
        #[serde(rename = "P")]
        p: OneOrMany<BTreeMap<String, Matrix>>,
    },
    ForcedMix {
        #[serde(rename = "Q")]
        q: Matrix,
        epsilon: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum CostDoc {
    CapacityService {
        #[serde(rename = "S")]
        s: BTreeMap<String, f64>,
        a: f64,
        b: f64,
        c: f64,
        #[serde(rename = "H")]
        h: BTreeMap<String, f64>,
    },
    Separable {
        per_agent: Matrix,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        major: Option<Matrix>,
    },
    Table {
        values: Vec<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum ObjectiveDoc {
    FiniteHorizon(usize),
    Discounted { beta: f64, tol: f64 },
}

fn labels(v: Vec<Label>) -> Vec<String> {
    v.into_iter().map(Label::into_string).collect()
}

fn label_docs(v: &[String]) -> Vec<Label> {
    v.iter().map(|s| Label::from_str(s)).collect()
}

/// Looks up one entry per label, rejecting missing and unknown keys.
fn keyed<T: Clone>(map: &BTreeMap<String, T>, keys: &[String], what: &str) -> Result<Vec<T>> {
    if let Some(extra) = map.keys().find(|k| !keys.contains(k)) {
        return Err(Error::Schema(format!("{what}: unknown key {extra:?}")));
    }
    keys.iter()
        .map(|k| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("{what}: missing entry for {k:?}")))
        })
        .collect()
}

fn numeric(labels: &[String], what: &str) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::Schema(format!("{what} label {l:?} is not a number")))
        })
        .collect()
}

/// Parses and validates a model document.
pub fn parse_spec(text: &str) -> Result<ModelSpec> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;

    let populations = match doc.population {
        OneOrMany::One(n) => vec![n],
        OneOrMany::Many(v) => v,
    };
    let per_type = |v: OneOrMany<Vec<Label>>, what: &str| -> Result<Vec<Vec<String>>> {
        match v {
            OneOrMany::One(l) if populations.len() == 1 => Ok(vec![labels(l)]),
            OneOrMany::One(_) => Err(Error::Population(format!(
                "{} type populations but a single {what} list",
                populations.len()
            ))),
            OneOrMany::Many(ls) if ls.len() == populations.len() => Ok(ls.into_iter().map(labels).collect()),
            OneOrMany::Many(ls) => Err(Error::Population(format!(
                "{} type populations but {} {what} lists",
                populations.len(),
                ls.len()
            ))),
        }
    };
    let states = per_type(doc.minor_states, "minor_states")?;
    let actions = per_type(doc.minor_actions, "minor_actions")?;
    let types: Vec<TypeSpec> = populations
        .into_iter()
        .zip(states)
        .zip(actions)
        .map(|((population, states), actions)| TypeSpec { population, states, actions })
        .collect();

    let major = doc
        .major
        .map(|m| -> Result<MajorSpec> {
            let states = labels(m.states);
            let actions = labels(m.actions);
            let kernel = match m.kernel {
                MajorKernelDoc::DeterministicSet => {
                    let target = actions
                        .iter()
                        .map(|a| {
                            states.iter().position(|s| s == a).ok_or_else(|| {
                                Error::Schema(format!("deterministic_set: action {a:?} is not a major state"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    MajorKernel::DeterministicSet { target }
                }
                MajorKernelDoc::Table { p } => {
                    let mats = keyed(&p, &actions, "major kernel")?;
                    MajorKernel::Table(
                        mats.into_iter()
                            .map(|m| normalize_matrix(m, "major kernel"))
                            .collect::<Result<_>>()?,
                    )
                }
            };
            Ok(MajorSpec { states, actions, kernel })
        })
        .transpose()?;

    let minor_kernel = match doc.minor_kernel {
        MinorKernelDoc::Table { p } => {
            let per = match p {
                OneOrMany::One(m) => vec![m],
                OneOrMany::Many(v) => v,
            };
            if per.len() != types.len() {
                return Err(Error::Schema(format!(
                    "minor kernel gives {} types, model has {}",
                    per.len(),
                    types.len()
                )));
            }
            let per_type = per
                .iter()
                .zip(&types)
                .enumerate()
                .map(|(k, (m, ty))| {
                    keyed(m, &ty.actions, &format!("minor kernel (type {k})"))?
                        .into_iter()
                        .map(|mat| normalize_matrix(mat, &format!("minor kernel (type {k})")))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            MinorKernel::Table(TableKernel { per_type })
        }
        MinorKernelDoc::ForcedMix { q, epsilon } => {
            if types.len() != 1 {
                return Err(Error::Schema("forced_mix kernels need a single type".into()));
            }
            let forcing = types[0].actions.get(1..).unwrap_or_default();
            let eps = keyed(&epsilon, forcing, "forced_mix epsilon")?;
            build_forced_mix_kernel(q, eps)?
        }
    };

    let major_states = major.as_ref().map_or(1, |m| m.states.len());
    let major_actions = major.as_ref().map_or(1, |m| m.actions.len());
    let objective = match doc.objective {
        ObjectiveDoc::FiniteHorizon(t) => Objective::FiniteHorizon(t),
        ObjectiveDoc::Discounted { beta, tol } => Objective::Discounted { beta, tol },
    };
    let shape = match doc.lattice {
        ShapeDoc::PerType => LatticeShape::PerType,
        ShapeDoc::Pooled => LatticeShape::Pooled,
    };

    let mut spec = ModelSpec {
        types,
        major,
        minor_kernel,
        cost: CostModel::zero(&[], 0, 0),
        objective,
        shape,
    };
    spec.cost = match doc.cost {
        CostDoc::CapacityService { s, a, b, c, h } => {
            let m = spec
                .major
                .as_ref()
                .ok_or_else(|| Error::Schema("capacity_service cost needs a major block".into()))?;
            if spec.types.len() != 1 || spec.types[0].states.len() < 2 {
                return Err(Error::Schema("capacity_service cost needs one type with at least two states".into()));
            }
            CostModel::CapacityService(CapacityServiceCost {
                state_capacity: numeric(&m.states, "major state")?,
                action_capacity: numeric(&m.actions, "major action")?,
                capacity_cost: keyed(&s, &m.actions, "capacity_service S")?,
                a,
                b,
                c,
                forcing_cost: keyed(&h, &spec.types[0].actions, "capacity_service H")?,
                active_state: 1,
            })
        }
        CostDoc::Separable { per_agent, major } => CostModel::Separable(SeparableCost {
            per_agent,
            major: major.unwrap_or_else(|| vec![vec![0.0; major_actions]; major_states]),
        }),
        CostDoc::Table { values } => CostModel::table(&spec, values)?,
    };
    spec.validate()?;
    Ok(spec)
}

fn custom(what: &str) -> Error {
    Error::Schema(format!("{what} is programmatic and has no document form"))
}

/// Writes a model back to its document form. Programmatic kernels and costs
/// cannot be serialized.
pub fn serialize_spec(spec: &ModelSpec) -> Result<String> {
    let single = spec.types.len() == 1;
    let pick = |v: Vec<Vec<Label>>| {
        if single {
            OneOrMany::One(v.into_iter().next().unwrap())
        } else {
            OneOrMany::Many(v)
        }
    };
    let population = if single {
        OneOrMany::One(spec.types[0].population)
    } else {
        OneOrMany::Many(spec.types.iter().map(|t| t.population).collect())
    };
    let keyed_out = |keys: &[String], vals: &[Matrix]| -> BTreeMap<String, Matrix> {
        keys.iter().cloned().zip(vals.iter().cloned()).collect()
    };

    let major = spec
        .major
        .as_ref()
        .map(|m| -> Result<MajorDoc> {
            let kernel = match &m.kernel {
                MajorKernel::DeterministicSet { target } => {
                    let consistent = target
                        .iter()
                        .enumerate()
                        .all(|(u, &x)| m.actions[u] == m.states[x]);
                    if !consistent {
                        return Err(Error::Schema("deterministic_set targets must match labels".into()));
                    }
                    MajorKernelDoc::DeterministicSet
                }
                MajorKernel::Table(p) => MajorKernelDoc::Table { p: keyed_out(&m.actions, p) },
                MajorKernel::Custom(_) => return Err(custom("major kernel")),
            };
            Ok(MajorDoc { states: label_docs(&m.states), actions: label_docs(&m.actions), kernel })
        })
        .transpose()?;

    let minor_kernel = match &spec.minor_kernel {
        MinorKernel::Table(t) => {
            let maps: Vec<_> = t
                .per_type
                .iter()
                .zip(&spec.types)
                .map(|(mats, ty)| keyed_out(&ty.actions, mats))
                .collect();
            MinorKernelDoc::Table {
                p: if single { OneOrMany::One(maps.into_iter().next().unwrap()) } else { OneOrMany::Many(maps) },
            }
        }
        MinorKernel::ForcedMix(f) => MinorKernelDoc::ForcedMix {
            q: f.q.clone(),
            epsilon: spec.types[0].actions[1..].iter().cloned().zip(f.epsilon.iter().copied()).collect(),
        },
        MinorKernel::Custom(_) => return Err(custom("minor kernel")),
    };

    let cost = match &spec.cost {
        CostModel::CapacityService(c) => {
            let m = spec.major.as_ref().ok_or_else(|| custom("capacity cost without major"))?;
            CostDoc::CapacityService {
                s: m.actions.iter().cloned().zip(c.capacity_cost.iter().copied()).collect(),
                a: c.a,
                b: c.b,
                c: c.c,
                h: spec.types[0].actions.iter().cloned().zip(c.forcing_cost.iter().copied()).collect(),
            }
        }
        CostModel::Separable(c) => CostDoc::Separable { per_agent: c.per_agent.clone(), major: Some(c.major.clone()) },
        CostModel::Table(c) => CostDoc::Table { values: c.values.clone() },
        CostModel::Custom(_) => return Err(custom("cost")),
    };

    let doc = ModelDoc {
        population,
        minor_states: pick(spec.types.iter().map(|t| label_docs(&t.states)).collect()),
        minor_actions: pick(spec.types.iter().map(|t| label_docs(&t.actions)).collect()),
        major,
        minor_kernel,
        cost,
        objective: match spec.objective {
            Objective::FiniteHorizon(t) => ObjectiveDoc::FiniteHorizon(t),
            Objective::Discounted { beta, tol } => ObjectiveDoc::Discounted { beta, tol },
        },
        lattice: match spec.shape {
            LatticeShape::PerType => ShapeDoc::PerType,
            LatticeShape::Pooled => ShapeDoc::Pooled,
        },
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SERVICE: &str = r#"{
        "population": 100,
        "minor_states": [0, 1],
        "minor_actions": [0, 1, 2],
        "major": {"states": [50, 100], "actions": [50, 100], "kernel": {"type": "deterministic_set"}},
        "minor_kernel": {"type": "forced_mix", "Q": [[0.6, 0.4], [0.3, 0.7]], "epsilon": {"1": 0.1, "2": 0.1}},
        "cost": {"type": "capacity_service", "S": {"50": 100, "100": 300}, "a": 2, "b": 5, "c": 50,
                 "H": {"0": 0, "1": 4, "2": 1}},
        "objective": {"discounted": {"beta": 0.6, "tol": 1e-8}}
    }"#;

    #[test]
    fn service_provider_document() {
        let spec = parse_spec(SERVICE).unwrap();
        assert_eq!(spec.population(), 100);
        assert_eq!(spec.state_count(), 2);
        assert_eq!(spec.types[0].actions.len(), 3);
        assert_eq!(spec.major_state_count(), 2);
        assert_eq!(spec.major_action_count(), 2);
        assert_eq!(spec.objective, Objective::Discounted { beta: 0.6, tol: 1e-8 });
        let CostModel::CapacityService(c) = &spec.cost else { panic!() };
        assert_eq!((c.a, c.b, c.c), (2.0, 5.0, 50.0));
        assert_eq!(c.capacity_cost, vec![100.0, 300.0]);
        assert_eq!(c.forcing_cost, vec![0.0, 4.0, 1.0]);
        assert_eq!(spec.major.as_ref().unwrap().kernel, MajorKernel::DeterministicSet { target: vec![0, 1] });
    }

    #[test]
    fn minimal_document() {
        let spec = parse_spec(
            r#"{"population": 1, "minor_states": ["only"], "minor_actions": ["stay"],
                "minor_kernel": {"type": "table", "P": {"stay": [[1.0]]}},
                "cost": {"type": "separable", "per_agent": [[0.0]]},
                "objective": {"finite_horizon": 1}}"#,
        )
        .unwrap();
        assert_eq!(spec.population(), 1);
        assert!(spec.major.is_none());
        assert_eq!(spec.major_state_count(), 1);
    }

    #[test]
    fn bad_row_sum_is_rejected() {
        let text = SERVICE.replace("[[0.6, 0.4], [0.3, 0.7]]", "[[0.6, 0.5], [0.3, 0.7]]");
        assert!(matches!(parse_spec(&text), Err(Error::Stochasticity { .. })));
    }

    #[test]
    fn schema_errors() {
        let missing = SERVICE.replace(r#""population": 100,"#, "");
        assert!(matches!(parse_spec(&missing), Err(Error::Schema(_))));
        let extra = SERVICE.replace(r#""population": 100,"#, r#""population": 100, "colour": 1,"#);
        assert!(matches!(parse_spec(&extra), Err(Error::Schema(_))));
        let eps = SERVICE.replace(r#""2": 0.1}"#, r#""3": 0.1}"#);
        assert!(matches!(parse_spec(&eps), Err(Error::Schema(_))));
    }

    #[test]
    fn population_mismatch() {
        let text = SERVICE.replace(r#""population": 100"#, r#""population": [60, 40]"#);
        assert!(matches!(parse_spec(&text), Err(Error::Population(_))));
    }

    #[test]
    fn zero_population_is_rejected() {
        let text = SERVICE.replace(r#""population": 100"#, r#""population": 0"#);
        assert!(matches!(parse_spec(&text), Err(Error::Population(_))));
    }

    #[test]
    fn round_trip_service() {
        let spec = parse_spec(SERVICE).unwrap();
        let again = parse_spec(&serialize_spec(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn typed_table_document() {
        let text = r#"{
            "population": [2, 3],
            "minor_states": [[1, 2], [2, 3, 4]],
            "minor_actions": [["a", "b"], ["c"]],
            "minor_kernel": {"type": "table", "P": [
                {"a": [[1, 0], [0, 1]], "b": [[0.5, 0.5], [0.5, 0.5]]},
                {"c": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}
            ]},
            "cost": {"type": "separable", "per_agent": [[0, 1], [0, 1], [2], [2], [2]]},
            "objective": {"finite_horizon": 3}
        }"#;
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.state_count(), 5);
        assert_eq!(spec.action_radices(), vec![2, 2, 1, 1, 1]);
        assert_eq!(spec, parse_spec(&serialize_spec(&spec).unwrap()).unwrap());
    }
}
