//! Structural transformations between the three model families.
//!
//! [`augment`] turns a multi-type model into a basic one over augmented
//! states `(type, local state)`. [`embed_major_as_type`] folds the major
//! subsystem into a population-1 type so a major-minor model can be solved as
//! a multi-type model without a major block.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, MeanField};
use crate::model::{
    AugmentedState, CostModel, LatticeShape, MinorDynamics, MinorKernel, ModelSpec,
    StageCost, StageView, TypeId, TypeSpec,
};
use crate::solver::{PolicyTable, ValueTable};

/// Bijection between `(type, local state)` pairs and flat indices.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationMap {
    pairs: Vec<AugmentedState>,
    offsets: Vec<usize>,
    state_labels: Vec<Vec<String>>,
    action_counts: Vec<usize>,
}

impl AugmentationMap {
    pub fn new(spec: &ModelSpec) -> Self {
        let mut pairs = Vec::new();
        let mut offsets = Vec::new();
        for (k, t) in spec.types.iter().enumerate() {
            offsets.push(pairs.len());
            pairs.extend((0..t.states.len()).map(|x| AugmentedState { type_id: TypeId(k), local_state: x }));
        }
        AugmentationMap {
            pairs,
            offsets,
            state_labels: spec.types.iter().map(|t| t.states.clone()).collect(),
            action_counts: spec.types.iter().map(|t| t.actions.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn flat(&self, state: AugmentedState) -> usize {
        self.offsets[state.type_id.0] + state.local_state
    }

    pub fn split(&self, flat: usize) -> AugmentedState {
        self.pairs[flat]
    }

    /// Actions available in augmented state `flat`.
    pub fn actions_at(&self, flat: usize) -> usize {
        self.action_counts[self.pairs[flat].type_id.0]
    }

    /// Flat index of the state labelled `label` within type `type_id`.
    pub fn flat_by_label(&self, type_id: TypeId, label: &str) -> Result<usize> {
        let labels = self
            .state_labels
            .get(type_id.0)
            .ok_or_else(|| Error::Lookup(format!("no type {}", type_id.0)))?;
        let x = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Lookup(format!("type {} has no state {label:?}", type_id.0)))?;
        Ok(self.offsets[type_id.0] + x)
    }

    /// Mean-field of an explicit configuration of `(type, local state)` pairs.
    pub fn counts_of(&self, configuration: &[AugmentedState]) -> MeanField {
        let mut counts = vec![0u32; self.len()];
        for &s in configuration {
            counts[self.flat(s)] += 1;
        }
        MeanField::new(counts)
    }
}

/// Multi-type model as a basic model over augmented states.
///
/// Types, kernels and costs carry over unchanged since they are already keyed
/// by augmented index; what changes is the lattice, which becomes the full
/// simplex of the total population. Points breaking the per-type masses are
/// unreachable from any reachable start.
pub fn augment(spec: &ModelSpec) -> (ModelSpec, AugmentationMap) {
    let mut basic = spec.clone();
    basic.shape = LatticeShape::Pooled;
    (basic, AugmentationMap::new(spec))
}

/// `g(theta, z, x)` read off a policy solved on the augmented model.
pub fn typed_action(
    map: &AugmentationMap,
    policy: &PolicyTable,
    z: &MeanField,
    major_state: usize,
    state: AugmentedState,
) -> Result<usize> {
    Ok(policy.lookup(z, major_state)?.minor[map.flat(state)])
}

/// Translates embedded views (minor counts followed by a one-hot major
/// block) back to views of the major-minor model.
#[derive(Debug)]
struct Split {
    inner: Arc<ModelSpec>,
    minor_states: usize,
}

impl Split {
    fn major_state(&self, counts: &[u32]) -> usize {
        counts[self.minor_states..].iter().position(|&c| c == 1).unwrap_or(0)
    }

    fn view<'a>(&self, view: &StageView<'a>) -> StageView<'a> {
        StageView {
            t: view.t,
            counts: &view.counts[..self.minor_states],
            major_state: self.major_state(view.counts),
        }
    }
}

impl MinorDynamics for Split {
    fn row(&self, view: &StageView<'_>, state: AugmentedState, action: usize) -> Vec<f64> {
        let inner_view = self.view(view);
        if state.type_id.0 < self.inner.types.len() {
            self.inner.minor_kernel.raw_row(&inner_view, state, action)
        } else {
            let major = self.inner.major.as_ref().expect("embedding needs a major block");
            let row_view = StageView { major_state: state.local_state, ..inner_view };
            major.kernel.raw_row(&row_view, major.states.len(), action)
        }
    }

    fn is_stationary(&self) -> bool {
        self.inner.is_stationary()
    }
}

impl StageCost for Split {
    fn cost(&self, view: &StageView<'_>, prescription: &[usize], _major_action: usize) -> f64 {
        let inner_view = self.view(view);
        let u0 = prescription[self.minor_states + inner_view.major_state];
        self.inner.cost.evaluate(&inner_view, &prescription[..self.minor_states], u0)
    }

    fn is_stationary(&self) -> bool {
        self.inner.is_stationary()
    }
}

/// Index correspondence between a major-minor model and its embedding.
#[derive(Clone, Debug)]
pub struct Correspondence {
    minor_lattice: Lattice,
    embedded_lattice: Lattice,
    major_states: usize,
    minor_states: usize,
}

impl Correspondence {
    /// Embedded lattice index of `(z, x0)`.
    pub fn embedded_index(&self, lattice_index: usize, major_state: usize) -> usize {
        let mut counts = self.minor_lattice.unrank(lattice_index).expect("index in range").into_counts();
        counts.extend((0..self.major_states).map(|k| u32::from(k == major_state)));
        self.embedded_lattice.rank(&counts).expect("embedded point on lattice")
    }

    /// `(z index, x0)` of an embedded lattice index.
    pub fn split_index(&self, embedded: usize) -> (usize, usize) {
        let counts = self.embedded_lattice.unrank(embedded).expect("index in range").into_counts();
        let x0 = counts[self.minor_states..].iter().position(|&c| c == 1).expect("one major agent");
        let z = self.minor_lattice.rank(&counts[..self.minor_states]).expect("minor point on lattice");
        (z, x0)
    }

    pub fn points(&self) -> usize {
        self.embedded_lattice.len()
    }

    /// Embedded values rearranged into the major-minor `(z, x0)` layout.
    pub fn values_to_major_minor(&self, embedded: &ValueTable) -> ValueTable {
        let mut out = vec![0.0; self.minor_lattice.len() * self.major_states];
        for e in 0..self.embedded_lattice.len() {
            let (z, x0) = self.split_index(e);
            out[z * self.major_states + x0] = embedded.get(e, 0);
        }
        ValueTable::from_values(self.major_states, out)
    }

    /// Major-minor values rearranged into the embedded layout.
    pub fn values_to_embedded(&self, direct: &ValueTable) -> ValueTable {
        let mut out = vec![0.0; self.embedded_lattice.len()];
        for z in 0..self.minor_lattice.len() {
            for x0 in 0..self.major_states {
                out[self.embedded_index(z, x0)] = direct.get(z, x0);
            }
        }
        ValueTable::from_values(1, out)
    }

    /// Major action `u0` prescribed by an embedded policy at `(z, x0)`.
    pub fn major_action(&self, policy: &PolicyTable, lattice_index: usize, major_state: usize) -> usize {
        let e = self.embedded_index(lattice_index, major_state);
        policy.minor_action(e, 0, self.minor_states + major_state)
    }

    /// Minor prescription of an embedded policy at `(z, x0)`.
    pub fn minor_prescription(&self, policy: &PolicyTable, lattice_index: usize, major_state: usize) -> Vec<usize> {
        let e = self.embedded_index(lattice_index, major_state);
        policy.prescription(e, 0).minor[..self.minor_states].to_vec()
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub spec: ModelSpec,
    pub correspondence: Correspondence,
}

/// Major-minor model as a multi-type model with the major subsystem as an
/// extra population-1 type appended after the minor types. Its states and
/// actions are the major states and actions.
pub fn embed_major_as_type(spec: &ModelSpec) -> Result<Embedding> {
    let major = spec
        .major
        .as_ref()
        .ok_or_else(|| Error::Model("model has no major subsystem to embed".into()))?;
    if spec.shape != LatticeShape::PerType {
        return Err(Error::Model("embedding is defined on per-type lattices only".into()));
    }
    let inner = Arc::new(spec.clone());
    let minor_states = spec.state_count();
    let split = Arc::new(Split { inner, minor_states });
    let mut types = spec.types.clone();
    types.push(TypeSpec { population: 1, states: major.states.clone(), actions: major.actions.clone() });
    let embedded = ModelSpec {
        types,
        major: None,
        minor_kernel: MinorKernel::Custom(split.clone()),
        cost: CostModel::Custom(split),
        objective: spec.objective,
        shape: LatticeShape::PerType,
    };
    embedded.validate()?;
    let correspondence = Correspondence {
        minor_lattice: spec.lattice()?,
        embedded_lattice: embedded.lattice()?,
        major_states: major.states.len(),
        minor_states,
    };
    Ok(Embedding { spec: embedded, correspondence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MajorKernel, MajorSpec, Objective, SeparableCost, TableKernel};

    fn two_type_spec() -> ModelSpec {
        let ident = |d: usize| -> Vec<Vec<f64>> {
            (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect()
        };
        ModelSpec {
            types: vec![
                TypeSpec { population: 2, states: vec!["1".into(), "2".into()], actions: vec!["a".into()] },
                TypeSpec {
                    population: 3,
                    states: vec!["2".into(), "3".into(), "4".into()],
                    actions: vec!["a".into(), "b".into()],
                },
            ],
            major: None,
            minor_kernel: MinorKernel::Table(TableKernel { per_type: vec![vec![ident(2)], vec![ident(3), ident(3)]] }),
            cost: CostModel::zero(&[1, 1, 2, 2, 2], 1, 1),
            objective: Objective::FiniteHorizon(1),
            shape: LatticeShape::PerType,
        }
    }

    #[test]
    fn five_subsystem_configuration() {
        let spec = two_type_spec();
        let (basic, map) = augment(&spec);
        assert_eq!(map.len(), 5);
        let at = |k: usize, label: &str| map.split(map.flat_by_label(TypeId(k), label).unwrap());
        let config = [at(0, "2"), at(1, "3"), at(0, "2"), at(1, "4"), at(1, "2")];
        let z = map.counts_of(&config);
        assert_eq!(z.counts(), &[0, 2, 1, 1, 1]);
        assert_eq!(z.fractions(), vec![0.0, 0.4, 0.2, 0.2, 0.2]);
        assert!(basic.lattice().unwrap().try_rank(z.counts()).is_some());
        assert_eq!(map.actions_at(0), 1);
        assert_eq!(map.actions_at(4), 2);
    }

    #[test]
    fn single_type_augment_keeps_lattice() {
        let mut spec = two_type_spec();
        spec.types.truncate(1);
        if let MinorKernel::Table(t) = &mut spec.minor_kernel {
            t.per_type.truncate(1);
        }
        spec.cost = CostModel::zero(&[1, 1], 1, 1);
        let (basic, map) = augment(&spec);
        assert_eq!(basic.lattice().unwrap().len(), spec.lattice().unwrap().len());
        for flat in 0..map.len() {
            assert_eq!(map.flat(map.split(flat)), flat);
        }
    }

    #[test]
    fn embedding_requires_major() {
        assert!(embed_major_as_type(&two_type_spec()).is_err());
    }

    #[test]
    fn embedded_lattice_is_reachable_set() {
        let mut spec = two_type_spec();
        spec.major = Some(MajorSpec {
            states: vec!["lo".into(), "hi".into()],
            actions: vec!["lo".into(), "hi".into()],
            kernel: MajorKernel::DeterministicSet { target: vec![0, 1] },
        });
        spec.cost = CostModel::Separable(SeparableCost {
            per_agent: vec![vec![0.0], vec![0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]],
            major: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        });
        let e = embed_major_as_type(&spec).unwrap();
        let direct = spec.lattice().unwrap().len();
        assert_eq!(e.correspondence.points(), direct * 2);
        for z in 0..direct {
            for x0 in 0..2 {
                let idx = e.correspondence.embedded_index(z, x0);
                assert_eq!(e.correspondence.split_index(idx), (z, x0));
            }
        }
    }
}
