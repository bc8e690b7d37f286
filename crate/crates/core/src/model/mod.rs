//! Problem description for the basic, multi-type and major-minor models.
//!
//! Minor states are addressed through a flat *augmented* index: the states of
//! type 0 come first, then those of type 1, and so on. Kernels return rows
//! over the local states of the source's type, since types never change.
//! A model without a major subsystem behaves as if it had one major state and
//! one major action.

mod file;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::Lattice;

pub use file::{parse_spec, serialize_spec};

pub type Matrix = Vec<Vec<f64>>;

/// Row-sum tolerance applied to hand-written kernels.
pub const INGEST_TOLERANCE: f64 = 1e-9;
/// Row-sum tolerance applied to every kernel row at query time.
pub const ROW_TOLERANCE: f64 = 1e-12;
/// Entries above this negative value are treated as round-off and clamped.
pub const NEGATIVE_SLACK: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub usize);

/// A minor state qualified by its type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AugmentedState {
    pub type_id: TypeId,
    pub local_state: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TypeSpec {
    pub population: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
}

/// Everything a kernel or cost may condition on at one stage.
#[derive(Clone, Copy, Debug)]
pub struct StageView<'a> {
    /// Stage index starting at 1.
    pub t: usize,
    /// Counts over augmented minor states.
    pub counts: &'a [u32],
    pub major_state: usize,
}

impl StageView<'_> {
    pub fn population(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }
}

/// Programmatic minor dynamics: `(z, x0, u, x) -> row over x's type states`.
pub trait MinorDynamics: Send + Sync + fmt::Debug {
    fn row(&self, view: &StageView<'_>, state: AugmentedState, action: usize) -> Vec<f64>;

    fn is_stationary(&self) -> bool {
        true
    }
}

/// Programmatic major dynamics: `(z, x0, u0) -> row over major states`.
pub trait MajorDynamics: Send + Sync + fmt::Debug {
    fn row(&self, view: &StageView<'_>, action: usize) -> Vec<f64>;

    fn is_stationary(&self) -> bool {
        true
    }
}

/// Programmatic reduced stage cost `(z, x0, prescription, u0) -> cost`.
pub trait StageCost: Send + Sync + fmt::Debug {
    fn cost(&self, view: &StageView<'_>, prescription: &[usize], major_action: usize) -> f64;

    fn is_stationary(&self) -> bool {
        true
    }
}

/// Transition matrices indexed `[type][action][from][to]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TableKernel {
    pub per_type: Vec<Vec<Matrix>>,
}

/// Free action 0 follows `Q`; action `u >= 1` moves to state `u - 1` except
/// with probability `epsilon[u - 1]`, in which case it follows `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcedMixKernel {
    pub q: Matrix,
    pub epsilon: Vec<f64>,
    matrices: Vec<Matrix>,
}

impl ForcedMixKernel {
    /// `P(u)` for every action, `P(0) = Q` included.
    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }
}

#[derive(Clone)]
pub enum MinorKernel {
    Table(TableKernel),
    ForcedMix(ForcedMixKernel),
    Custom(Arc<dyn MinorDynamics>),
}

/// Builds `P(u) = (1 - eps_u) K_u + eps_u Q`, where `K_u` sends every state
/// to `u - 1`. There is one forcing action per entry of `epsilons`.
pub fn build_forced_mix_kernel(q: Matrix, epsilons: Vec<f64>) -> Result<MinorKernel> {
    let d = q.len();
    if d == 0 || q.iter().any(|r| r.len() != d) {
        return Err(Error::Schema("Q must be a non-empty square matrix".into()));
    }
    let q = normalize_matrix(q, "Q")?;
    if epsilons.len() > d {
        return Err(Error::Schema(format!(
            "{} forcing actions but only {d} target states",
            epsilons.len()
        )));
    }
    let mut matrices = vec![q.clone()];
    for (i, &eps) in epsilons.iter().enumerate() {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Schema(format!("epsilon for action {} is {eps}, outside [0, 1]", i + 1)));
        }
        let p = q
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(y, &qy)| {
                        let forced = if y == i { 1.0 } else { 0.0 };
                        (1.0 - eps) * forced + eps * qy
                    })
                    .collect()
            })
            .collect();
        matrices.push(p);
    }
    Ok(MinorKernel::ForcedMix(ForcedMixKernel { q, epsilon: epsilons, matrices }))
}

impl MinorKernel {
    pub(crate) fn raw_row(&self, view: &StageView<'_>, state: AugmentedState, action: usize) -> Vec<f64> {
        match self {
            MinorKernel::Table(t) => t.per_type[state.type_id.0][action][state.local_state].clone(),
            MinorKernel::ForcedMix(f) => f.matrices[action][state.local_state].clone(),
            MinorKernel::Custom(c) => c.row(view, state, action),
        }
    }

    pub fn is_stationary(&self) -> bool {
        match self {
            MinorKernel::Custom(c) => c.is_stationary(),
            _ => true,
        }
    }
}

impl PartialEq for MinorKernel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (MinorKernel::Table(a), MinorKernel::Table(b)) => a == b,
            (MinorKernel::ForcedMix(a), MinorKernel::ForcedMix(b)) => a == b,
            (MinorKernel::Custom(a), MinorKernel::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl fmt::Debug for MinorKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MinorKernel::Table(t) => f.debug_tuple("Table").field(t).finish(),
            MinorKernel::ForcedMix(m) => f.debug_tuple("ForcedMix").field(m).finish(),
            MinorKernel::Custom(c) => f.debug_tuple("Custom").field(c).finish(),
        }
    }
}

#[derive(Clone)]
pub enum MajorKernel {
    /// `X0_{t+1} = U0_t`; `target[u0]` is the successor state index.
    DeterministicSet { target: Vec<usize> },
    /// Matrices indexed `[action][from][to]`.
    Table(Vec<Matrix>),
    Custom(Arc<dyn MajorDynamics>),
}

impl MajorKernel {
    pub(crate) fn raw_row(&self, view: &StageView<'_>, states: usize, action: usize) -> Vec<f64> {
        match self {
            MajorKernel::DeterministicSet { target } => {
                let mut row = vec![0.0; states];
                row[target[action]] = 1.0;
                row
            }
            MajorKernel::Table(p) => p[action][view.major_state].clone(),
            MajorKernel::Custom(c) => c.row(view, action),
        }
    }

    pub fn is_stationary(&self) -> bool {
        match self {
            MajorKernel::Custom(c) => c.is_stationary(),
            _ => true,
        }
    }
}

impl PartialEq for MajorKernel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (MajorKernel::DeterministicSet { target: a }, MajorKernel::DeterministicSet { target: b }) => {
                a == b
            }
            (MajorKernel::Table(a), MajorKernel::Table(b)) => a == b,
            (MajorKernel::Custom(a), MajorKernel::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl fmt::Debug for MajorKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MajorKernel::DeterministicSet { target } => {
                f.debug_struct("DeterministicSet").field("target", target).finish()
            }
            MajorKernel::Table(p) => f.debug_tuple("Table").field(p).finish(),
            MajorKernel::Custom(c) => f.debug_tuple("Custom").field(c).finish(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MajorSpec {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub kernel: MajorKernel,
}

/// Service-provider cost family:
/// `S(u0) + a |u0 - x0| - G(z, x0) + sum_x n z(x) H(gamma(x))`, with the
/// benefit `G = b n z(1)` while active users fit in capacity `x0` and
/// `b x0 - c (n z(1) - x0)` otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityServiceCost {
    /// Capacity carried by each major state.
    pub state_capacity: Vec<f64>,
    /// Capacity requested by each major action.
    pub action_capacity: Vec<f64>,
    /// `S`, per major action.
    pub capacity_cost: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `H`, per minor action.
    pub forcing_cost: Vec<f64>,
    /// Minor state counted as an active user.
    pub active_state: usize,
}

impl CapacityServiceCost {
    pub fn benefit(&self, active: f64, capacity: f64) -> f64 {
        if active <= capacity {
            self.b * active
        } else {
            self.b * capacity - self.c * (active - capacity)
        }
    }

    fn evaluate(&self, view: &StageView<'_>, prescription: &[usize], u0: usize) -> f64 {
        let x0 = self.state_capacity[view.major_state];
        let u = self.action_capacity[u0];
        let active = view.counts[self.active_state] as f64;
        let forcing: f64 = view
            .counts
            .iter()
            .zip(prescription)
            .map(|(&c, &g)| c as f64 * self.forcing_cost[g])
            .sum();
        self.capacity_cost[u0] + self.a * (u - x0).abs() - self.benefit(active, x0) + forcing
    }
}

/// `sum_x counts(x) per_agent[x][gamma(x)] + major[x0][u0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableCost {
    pub per_agent: Matrix,
    pub major: Matrix,
}

impl SeparableCost {
    fn evaluate(&self, view: &StageView<'_>, prescription: &[usize], u0: usize) -> f64 {
        let minor: f64 = view
            .counts
            .iter()
            .zip(prescription)
            .enumerate()
            .map(|(x, (&c, &g))| c as f64 * self.per_agent[x][g])
            .sum();
        minor + self.major[view.major_state][u0]
    }
}

/// Dense cost table over (typed lattice point, major state, prescription,
/// major action), laid out as `((rank * X0 + x0) * G + g) * U0 + u0` where
/// `g` is the mixed-radix index of the minor prescription with state 0 most
/// significant.
#[derive(Clone, Debug, PartialEq)]
pub struct TableCost {
    pub values: Vec<f64>,
    lattice: Lattice,
    radices: Vec<usize>,
    major_states: usize,
    major_actions: usize,
}

impl TableCost {
    fn evaluate(&self, view: &StageView<'_>, prescription: &[usize], u0: usize) -> f64 {
        // Points whose per-type masses differ from the declared populations
        // are unreachable; they carry zero cost.
        let Some(rank) = self.lattice.try_rank(view.counts) else {
            return 0.0;
        };
        let g = prescription
            .iter()
            .zip(&self.radices)
            .fold(0usize, |acc, (&a, &r)| acc * r + a);
        let minor: usize = self.radices.iter().product();
        let at = ((rank * self.major_states + view.major_state) * minor + g) * self.major_actions + u0;
        self.values[at]
    }
}

#[derive(Clone)]
pub enum CostModel {
    CapacityService(CapacityServiceCost),
    Separable(SeparableCost),
    Table(TableCost),
    Custom(Arc<dyn StageCost>),
}

impl CostModel {
    /// Zero cost for a model with the given per-state action counts.
    pub fn zero(radices: &[usize], major_states: usize, major_actions: usize) -> Self {
        CostModel::Separable(SeparableCost {
            per_agent: radices.iter().map(|&r| vec![0.0; r]).collect(),
            major: vec![vec![0.0; major_actions]; major_states],
        })
    }

    /// Table cost over the typed lattice of `spec`; `values` must follow the
    /// layout documented on [`TableCost`].
    pub fn table(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        let lattice = spec.typed_lattice()?;
        let radices = spec.action_radices();
        let minor: u128 = radices.iter().map(|&r| r as u128).product();
        let expected = lattice.len() as u128
            * spec.major_state_count() as u128
            * minor
            * spec.major_action_count() as u128;
        if values.len() as u128 != expected {
            return Err(Error::Schema(format!(
                "cost table has {} entries, expected {expected}",
                values.len()
            )));
        }
        Ok(CostModel::Table(TableCost {
            values,
            lattice,
            radices,
            major_states: spec.major_state_count(),
            major_actions: spec.major_action_count(),
        }))
    }

    pub(crate) fn evaluate(&self, view: &StageView<'_>, prescription: &[usize], u0: usize) -> f64 {
        match self {
            CostModel::CapacityService(c) => c.evaluate(view, prescription, u0),
            CostModel::Separable(c) => c.evaluate(view, prescription, u0),
            CostModel::Table(c) => c.evaluate(view, prescription, u0),
            CostModel::Custom(c) => c.cost(view, prescription, u0),
        }
    }

    pub fn is_stationary(&self) -> bool {
        match self {
            CostModel::Custom(c) => c.is_stationary(),
            _ => true,
        }
    }

    /// Applies `alpha * cost + shift` on top of this model.
    pub fn affine(self, alpha: f64, shift: f64) -> Self {
        CostModel::Custom(Arc::new(AffineCost { inner: self, alpha, shift }))
    }
}

impl PartialEq for CostModel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (CostModel::CapacityService(a), CostModel::CapacityService(b)) => a == b,
            (CostModel::Separable(a), CostModel::Separable(b)) => a == b,
            (CostModel::Table(a), CostModel::Table(b)) => a == b,
            (CostModel::Custom(a), CostModel::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostModel::CapacityService(c) => f.debug_tuple("CapacityService").field(c).finish(),
            CostModel::Separable(c) => f.debug_tuple("Separable").field(c).finish(),
            CostModel::Table(c) => f.debug_tuple("Table").field(&c.values.len()).finish(),
            CostModel::Custom(c) => f.debug_tuple("Custom").field(c).finish(),
        }
    }
}

#[derive(Debug)]
struct AffineCost {
    inner: CostModel,
    alpha: f64,
    shift: f64,
}

impl StageCost for AffineCost {
    fn cost(&self, view: &StageView<'_>, prescription: &[usize], major_action: usize) -> f64 {
        self.alpha * self.inner.evaluate(view, prescription, major_action) + self.shift
    }

    fn is_stationary(&self) -> bool {
        self.inner.is_stationary()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    FiniteHorizon(usize),
    Discounted { beta: f64, tol: f64 },
}

/// How the lattice of mean-fields is laid out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LatticeShape {
    /// One composition block per type with that type's population.
    #[default]
    PerType,
    /// A single composition block of the total population over all augmented
    /// states; points that break the per-type masses are unreachable.
    Pooled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub types: Vec<TypeSpec>,
    pub major: Option<MajorSpec>,
    pub minor_kernel: MinorKernel,
    pub cost: CostModel,
    pub objective: Objective,
    pub shape: LatticeShape,
}

impl ModelSpec {
    pub fn population(&self) -> usize {
        self.types.iter().map(|t| t.population).sum()
    }

    /// Number of augmented minor states.
    pub fn state_count(&self) -> usize {
        self.types.iter().map(|t| t.states.len()).sum()
    }

    pub fn type_offset(&self, type_id: TypeId) -> usize {
        self.types[..type_id.0].iter().map(|t| t.states.len()).sum()
    }

    pub fn augmented(&self, flat: usize) -> AugmentedState {
        let mut rest = flat;
        for (k, t) in self.types.iter().enumerate() {
            if rest < t.states.len() {
                return AugmentedState { type_id: TypeId(k), local_state: rest };
            }
            rest -= t.states.len();
        }
        panic!("augmented state {flat} out of range");
    }

    pub fn flat(&self, state: AugmentedState) -> usize {
        self.type_offset(state.type_id) + state.local_state
    }

    /// Number of actions available in each augmented state.
    pub fn action_radices(&self) -> Vec<usize> {
        self.types
            .iter()
            .flat_map(|t| std::iter::repeat(t.actions.len()).take(t.states.len()))
            .collect()
    }

    pub fn major_state_count(&self) -> usize {
        self.major.as_ref().map_or(1, |m| m.states.len())
    }

    pub fn major_action_count(&self) -> usize {
        self.major.as_ref().map_or(1, |m| m.actions.len())
    }

    pub fn is_stationary(&self) -> bool {
        self.minor_kernel.is_stationary()
            && self.major.as_ref().map_or(true, |m| m.kernel.is_stationary())
            && self.cost.is_stationary()
    }

    /// The lattice the production solver works on.
    pub fn lattice(&self) -> Result<Lattice> {
        match self.shape {
            LatticeShape::PerType => self.typed_lattice(),
            LatticeShape::Pooled => Lattice::simplex(self.population(), self.state_count()),
        }
    }

    /// The lattice of count vectors respecting every type's population.
    pub fn typed_lattice(&self) -> Result<Lattice> {
        let blocks: Vec<(usize, usize)> =
            self.types.iter().map(|t| (t.states.len(), t.population)).collect();
        Lattice::new(&blocks)
    }

    /// Successor row for an agent in augmented state `flat`, over the local
    /// states of its type. Rows are checked and tiny negatives clamped.
    pub fn minor_row(&self, view: &StageView<'_>, flat: usize, action: usize) -> Result<Vec<f64>> {
        let state = self.augmented(flat);
        let row = self.minor_kernel.raw_row(view, state, action);
        let len = self.types[state.type_id.0].states.len();
        checked_row(row, len, || format!("minor kernel row (state {flat}, action {action})"))
    }

    /// Successor row of the major subsystem over major states.
    pub fn major_row(&self, view: &StageView<'_>, action: usize) -> Result<Vec<f64>> {
        match &self.major {
            None => Ok(vec![1.0]),
            Some(m) => {
                let row = m.kernel.raw_row(view, m.states.len(), action);
                checked_row(row, m.states.len(), || {
                    format!("major kernel row (state {}, action {action})", view.major_state)
                })
            }
        }
    }

    /// Reduced stage cost `l(z, x0, gamma, u0)`.
    pub fn stage_cost(&self, view: &StageView<'_>, prescription: &[usize], major_action: usize) -> Result<f64> {
        let c = self.cost.evaluate(view, prescription, major_action);
        if !c.is_finite() {
            return Err(Error::Model(format!(
                "non-finite stage cost {c} at counts {:?}, major state {}",
                view.counts, view.major_state
            )));
        }
        Ok(c)
    }

    /// Checks every structural invariant; declarative kernels are checked
    /// entry by entry.
    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::Schema("at least one type is required".into()));
        }
        if self.population() == 0 {
            return Err(Error::Population("total population must be at least 1".into()));
        }
        for (k, t) in self.types.iter().enumerate() {
            if t.states.is_empty() || t.actions.is_empty() {
                return Err(Error::Schema(format!("type {k} needs at least one state and one action")));
            }
        }
        if let Some(m) = &self.major {
            if m.states.is_empty() || m.actions.is_empty() {
                return Err(Error::Schema("major block needs at least one state and one action".into()));
            }
            match &m.kernel {
                MajorKernel::DeterministicSet { target } => {
                    if target.len() != m.actions.len() || target.iter().any(|&s| s >= m.states.len()) {
                        return Err(Error::Schema("deterministic_set target map does not fit the major block".into()));
                    }
                }
                MajorKernel::Table(p) => {
                    check_matrices(p, m.actions.len(), m.states.len(), m.states.len(), "major kernel")?;
                }
                MajorKernel::Custom(_) => {}
            }
        }
        match &self.minor_kernel {
            MinorKernel::Table(t) => {
                if t.per_type.len() != self.types.len() {
                    return Err(Error::Schema(format!(
                        "minor kernel covers {} types, model has {}",
                        t.per_type.len(),
                        self.types.len()
                    )));
                }
                for (k, (mats, ty)) in t.per_type.iter().zip(&self.types).enumerate() {
                    let d = ty.states.len();
                    check_matrices(mats, ty.actions.len(), d, d, &format!("minor kernel (type {k})"))?;
                }
            }
            MinorKernel::ForcedMix(f) => {
                if self.types.len() != 1 {
                    return Err(Error::Schema("forced_mix kernels need a single type".into()));
                }
                let ty = &self.types[0];
                if f.q.len() != ty.states.len() {
                    return Err(Error::Schema(format!(
                        "Q is {}x{0}, model has {} minor states",
                        f.q.len(),
                        ty.states.len()
                    )));
                }
                if f.matrices.len() != ty.actions.len() {
                    return Err(Error::Schema(format!(
                        "forced_mix defines {} actions, model has {}",
                        f.matrices.len(),
                        ty.actions.len()
                    )));
                }
                check_matrices(&f.matrices, ty.actions.len(), ty.states.len(), ty.states.len(), "forced_mix kernel")?;
            }
            MinorKernel::Custom(_) => {}
        }
        self.validate_cost()?;
        match self.objective {
            Objective::FiniteHorizon(t) if t == 0 => {
                return Err(Error::Schema("finite horizon must be at least 1".into()));
            }
            Objective::Discounted { beta, tol } => {
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::Schema(format!("discount factor {beta} outside (0, 1)")));
                }
                if !(tol > 0.0) {
                    return Err(Error::Schema(format!("tolerance {tol} must be positive")));
                }
                if !self.is_stationary() {
                    return Err(Error::Model("discounted objectives need stationary kernels and costs".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn validate_cost(&self) -> Result<()> {
        let x0 = self.major_state_count();
        let u0 = self.major_action_count();
        match &self.cost {
            CostModel::CapacityService(c) => {
                if self.types.len() != 1 || self.major.is_none() {
                    return Err(Error::Schema("capacity_service cost needs one minor type and a major block".into()));
                }
                let ty = &self.types[0];
                if c.active_state >= ty.states.len() {
                    return Err(Error::Schema("capacity_service needs an active minor state".into()));
                }
                if c.forcing_cost.len() != ty.actions.len()
                    || c.capacity_cost.len() != u0
                    || c.action_capacity.len() != u0
                    || c.state_capacity.len() != x0
                {
                    return Err(Error::Schema("capacity_service tables do not match the model's spaces".into()));
                }
            }
            CostModel::Separable(c) => {
                let radices = self.action_radices();
                if c.per_agent.len() != radices.len()
                    || c.per_agent.iter().zip(&radices).any(|(row, &r)| row.len() != r)
                {
                    return Err(Error::Schema("separable per_agent costs must give one row per minor state".into()));
                }
                if c.major.len() != x0 || c.major.iter().any(|r| r.len() != u0) {
                    return Err(Error::Schema("separable major cost must be |X0| x |U0|".into()));
                }
            }
            CostModel::Table(c) => {
                if c.lattice != self.typed_lattice()? || c.radices != self.action_radices() {
                    return Err(Error::Schema("cost table was built for a different model".into()));
                }
            }
            CostModel::Custom(_) => {}
        }
        Ok(())
    }
}

fn check_matrices(mats: &[Matrix], count: usize, rows: usize, cols: usize, what: &str) -> Result<()> {
    if mats.len() != count {
        return Err(Error::Schema(format!("{what}: expected {count} matrices, found {}", mats.len())));
    }
    for (u, m) in mats.iter().enumerate() {
        if m.len() != rows || m.iter().any(|r| r.len() != cols) {
            return Err(Error::Schema(format!("{what}: matrix for action {u} must be {rows}x{cols}")));
        }
        for (x, row) in m.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < -NEGATIVE_SLACK || !p.is_finite()) || (sum - 1.0).abs() > INGEST_TOLERANCE {
                return Err(Error::Stochasticity { context: format!("{what}, action {u}, row {x}"), sum });
            }
        }
    }
    Ok(())
}

/// Validates a hand-written stochastic matrix at the ingestion tolerance and
/// returns it renormalized.
pub fn normalize_matrix(m: Matrix, what: &str) -> Result<Matrix> {
    m.into_iter()
        .enumerate()
        .map(|(x, row)| {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < -NEGATIVE_SLACK || !p.is_finite()) || (sum - 1.0).abs() > INGEST_TOLERANCE {
                return Err(Error::Stochasticity { context: format!("{what}, row {x}"), sum });
            }
            // Rows already within query tolerance are kept as written so
            // that normalizing twice changes nothing.
            if (sum - 1.0).abs() <= ROW_TOLERANCE {
                return Ok(row.into_iter().map(|p| p.max(0.0)).collect());
            }
            Ok(row.into_iter().map(|p| p.max(0.0) / sum).collect())
        })
        .collect()
}

fn checked_row(mut row: Vec<f64>, len: usize, context: impl Fn() -> String) -> Result<Vec<f64>> {
    if row.len() != len {
        return Err(Error::Model(format!("{}: expected {len} entries, got {}", context(), row.len())));
    }
    let mut sum = 0.0;
    for p in row.iter_mut() {
        if *p < -NEGATIVE_SLACK || !p.is_finite() {
            return Err(Error::Stochasticity { context: context(), sum: f64::NAN });
        }
        if *p < 0.0 {
            *p = 0.0;
        }
        sum += *p;
    }
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::Stochasticity { context: context(), sum });
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn service_q() -> Matrix {
        vec![vec![0.6, 0.4], vec![0.3, 0.7]]
    }

    #[test]
    fn forced_mix_rows() {
        let MinorKernel::ForcedMix(k) = build_forced_mix_kernel(service_q(), vec![0.1, 0.1]).unwrap() else {
            panic!()
        };
        let p1 = &k.matrices()[1];
        assert!((p1[0][0] - 0.96).abs() < 1e-15);
        assert!((p1[0][1] - 0.04).abs() < 1e-15);
        assert_eq!(k.matrices()[0], service_q());
    }

    #[test]
    fn forced_mix_degenerate_epsilons() {
        let MinorKernel::ForcedMix(k) = build_forced_mix_kernel(service_q(), vec![1.0, 1.0]).unwrap() else {
            panic!()
        };
        for p in k.matrices() {
            assert_eq!(p, &service_q());
        }
        let MinorKernel::ForcedMix(k) = build_forced_mix_kernel(service_q(), vec![0.0, 0.0]).unwrap() else {
            panic!()
        };
        assert_eq!(k.matrices()[2], vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn forced_mix_rejects_bad_input() {
        assert!(build_forced_mix_kernel(service_q(), vec![1.5]).is_err());
        assert!(build_forced_mix_kernel(vec![vec![1.0, 0.0]], vec![0.1]).is_err());
        assert!(matches!(
            build_forced_mix_kernel(vec![vec![0.6, 0.5], vec![0.3, 0.7]], vec![]),
            Err(Error::Stochasticity { .. })
        ));
    }

    #[test]
    fn checked_row_clamps_round_off() {
        let row = checked_row(vec![1.0 + 1e-16, -1e-16], 2, String::new).unwrap();
        assert_eq!(row[1], 0.0);
        assert!(checked_row(vec![1.1, -0.1], 2, String::new).is_err());
        assert!(checked_row(vec![0.5, 0.4], 2, String::new).is_err());
    }

    #[test]
    fn benefit_is_piecewise() {
        let c = CapacityServiceCost {
            state_capacity: vec![50.0, 100.0],
            action_capacity: vec![50.0, 100.0],
            capacity_cost: vec![100.0, 300.0],
            a: 2.0,
            b: 5.0,
            c: 50.0,
            forcing_cost: vec![0.0, 4.0, 1.0],
            active_state: 1,
        };
        assert_eq!(c.benefit(50.0, 50.0), 250.0);
        assert_eq!(c.benefit(60.0, 50.0), 250.0 - 500.0);
    }
}
