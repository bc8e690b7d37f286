//! Dynamic programming over `(mean-field, major state)`.
//!
//! The coordinator's action set is every prescription crossed with every
//! major action, enumerated lexicographically with state 0 the most
//! significant digit and the major action the least. Ties are broken in
//! favour of the first minimizer in that order.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dynamics::{Dynamics, Prescription};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, MeanField};
use crate::model::{ModelSpec, Objective, StageView};

pub const MAX_ACTION_PAIRS: u128 = 1_000_000;
/// Kernels are tabulated when the action set is no larger than this.
pub const CACHE_ACTION_LIMIT: u128 = 100_000;
/// Upper bound on tabulated `(state, prescription)` kernels.
pub const CACHE_KERNEL_LIMIT: u128 = 2_000_000;
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

/// Enumeration of `(gamma, u0)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrescriptionSpace {
    radices: Vec<usize>,
    minor_count: usize,
    major_actions: usize,
}

impl PrescriptionSpace {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let radices = spec.action_radices();
        let major_actions = spec.major_action_count();
        let minor: u128 = radices.iter().fold(1u128, |acc, &r| acc.saturating_mul(r as u128));
        let total = minor.saturating_mul(major_actions as u128);
        if total > MAX_ACTION_PAIRS {
            let product = radices.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("*");
            return Err(Error::capacity(
                format!("prescription space {product}*{major_actions}"),
                total,
                MAX_ACTION_PAIRS,
            ));
        }
        Ok(PrescriptionSpace { radices, minor_count: minor as usize, major_actions })
    }

    /// Number of `(gamma, u0)` pairs.
    pub fn len(&self) -> usize {
        self.minor_count * self.major_actions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of minor prescriptions `gamma`.
    pub fn minor_len(&self) -> usize {
        self.minor_count
    }

    pub fn major_actions(&self) -> usize {
        self.major_actions
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn decode_minor(&self, g: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        let mut rest = g;
        for (slot, &r) in out.iter_mut().zip(&self.radices).rev() {
            *slot = rest % r;
            rest /= r;
        }
        out
    }

    pub fn decode(&self, pair: usize) -> Prescription {
        Prescription::new(self.decode_minor(pair / self.major_actions), pair % self.major_actions)
    }

    pub fn encode(&self, p: &Prescription) -> Result<usize> {
        if p.minor.len() != self.radices.len() || p.major >= self.major_actions {
            return Err(Error::Lookup(format!("prescription {p:?} does not fit the action space")));
        }
        let mut g = 0;
        for (&a, &r) in p.minor.iter().zip(&self.radices) {
            if a >= r {
                return Err(Error::Lookup(format!("action {a} out of range 0..{r}")));
            }
            g = g * r + a;
        }
        Ok(g * self.major_actions + p.major)
    }

    pub fn iter(&self) -> impl Iterator<Item = Prescription> + '_ {
        (0..self.len()).map(|i| self.decode(i))
    }
}

/// All `(gamma, u0)` pairs in canonical order.
pub fn enumerate_prescriptions(spec: &ModelSpec) -> Result<Vec<Prescription>> {
    let space = PrescriptionSpace::new(spec)?;
    Ok(space.iter().collect())
}

/// Values per `(lattice index, major state)`, stored `index * X0 + x0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    major_states: usize,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(lattice_points: usize, major_states: usize) -> Self {
        ValueTable { major_states, values: vec![0.0; lattice_points * major_states] }
    }

    pub fn from_values(major_states: usize, values: Vec<f64>) -> Self {
        ValueTable { major_states, values }
    }

    pub fn get(&self, lattice_index: usize, major_state: usize) -> f64 {
        self.values[lattice_index * self.major_states + major_state]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn major_states(&self) -> usize {
        self.major_states
    }

    pub fn lattice_points(&self) -> usize {
        self.values.len() / self.major_states
    }

    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Minimizing `(gamma, u0)` per `(lattice index, major state)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    lattice: Arc<Lattice>,
    space: Arc<PrescriptionSpace>,
    major_states: usize,
    choices: Vec<usize>,
}

impl PolicyTable {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn space(&self) -> &PrescriptionSpace {
        &self.space
    }

    pub fn major_states(&self) -> usize {
        self.major_states
    }

    /// Action-pair index chosen at `(lattice index, major state)`.
    pub fn choice(&self, lattice_index: usize, major_state: usize) -> usize {
        self.choices[lattice_index * self.major_states + major_state]
    }

    pub fn prescription(&self, lattice_index: usize, major_state: usize) -> Prescription {
        self.space.decode(self.choice(lattice_index, major_state))
    }

    /// `g0*(z, x0)`.
    pub fn major_action(&self, lattice_index: usize, major_state: usize) -> usize {
        self.choice(lattice_index, major_state) % self.space.major_actions()
    }

    /// `g*(z, x0, x)`.
    pub fn minor_action(&self, lattice_index: usize, major_state: usize, state: usize) -> usize {
        self.prescription(lattice_index, major_state).minor[state]
    }

    pub fn lookup(&self, z: &MeanField, major_state: usize) -> Result<Prescription> {
        let idx = self.lattice.rank(z.counts())?;
        if major_state >= self.major_states {
            return Err(Error::Lookup(format!("major state {major_state} out of range")));
        }
        Ok(self.prescription(idx, major_state))
    }
}

/// The major action when `state` is `None`, otherwise the prescribed minor
/// action for that local state.
pub fn query_policy(policy: &PolicyTable, z: &MeanField, major_state: usize, state: Option<usize>) -> Result<usize> {
    let p = policy.lookup(z, major_state)?;
    match state {
        None => Ok(p.major),
        Some(x) => p
            .minor
            .get(x)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("minor state {x} out of range"))),
    }
}

#[derive(Clone, Debug)]
pub struct FiniteSolution {
    /// `values[t - 1]` is `V_t` for `t = 1..=T`.
    pub values: Vec<ValueTable>,
    pub policies: Vec<PolicyTable>,
}

#[derive(Clone, Debug)]
pub struct DiscountedSolution {
    pub value: ValueTable,
    pub policy: PolicyTable,
    pub sweeps: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub enum Solution {
    Finite(FiniteSolution),
    Discounted(DiscountedSolution),
}

impl Solution {
    /// `V_1` for finite horizons, the stationary value otherwise.
    pub fn initial_values(&self) -> &ValueTable {
        match self {
            Solution::Finite(f) => &f.values[0],
            Solution::Discounted(d) => &d.value,
        }
    }

    pub fn initial_policy(&self) -> &PolicyTable {
        match self {
            Solution::Finite(f) => &f.policies[0],
            Solution::Discounted(d) => &d.policy,
        }
    }
}

struct Cache {
    // (state * G + g) -> successor law of the mean-field
    kernels: Vec<Vec<(usize, f64)>>,
    // state * U0 + u0 -> major successor row
    major: Vec<Vec<f64>>,
    // (state * G + g) * U0 + u0 -> stage cost
    costs: Vec<f64>,
}

pub struct Solver<'a> {
    dynamics: Dynamics<'a>,
    lattice: Arc<Lattice>,
    space: Arc<PrescriptionSpace>,
    major_states: usize,
    cache: Option<Cache>,
}

impl<'a> Solver<'a> {
    pub fn new(spec: &'a ModelSpec) -> Result<Self> {
        Solver::build(spec, true)
    }

    /// Solver that evaluates every kernel on demand.
    pub fn uncached(spec: &'a ModelSpec) -> Result<Self> {
        Solver::build(spec, false)
    }

    fn build(spec: &'a ModelSpec, allow_cache: bool) -> Result<Self> {
        let dynamics = Dynamics::new(spec)?;
        let lattice = Arc::new(dynamics.lattice().clone());
        let space = Arc::new(PrescriptionSpace::new(spec)?);
        let major_states = spec.major_state_count();
        let mut solver = Solver { dynamics, lattice, space, major_states, cache: None };
        let states = solver.states() as u128;
        if allow_cache
            && spec.is_stationary()
            && solver.space.len() as u128 <= CACHE_ACTION_LIMIT
            && states * solver.space.minor_len() as u128 <= CACHE_KERNEL_LIMIT
        {
            solver.cache = Some(solver.tabulate()?);
        }
        Ok(solver)
    }

    fn tabulate(&self) -> Result<Cache> {
        let g_count = self.space.minor_len();
        let u_count = self.space.major_actions();
        let per_state: Vec<(Vec<Vec<(usize, f64)>>, Vec<Vec<f64>>, Vec<f64>)> = (0..self.states())
            .into_par_iter()
            .map(|s| {
                let (z, x0) = self.state(s);
                let mut kernels = Vec::with_capacity(g_count);
                let mut costs = Vec::with_capacity(g_count * u_count);
                for g in 0..g_count {
                    let p = Prescription::new(self.space.decode_minor(g), 0);
                    kernels.push(self.dynamics.meanfield_kernel(1, &z, x0, &p)?);
                    for u0 in 0..u_count {
                        let p = Prescription::new(p.minor.clone(), u0);
                        costs.push(self.dynamics.expected_stage_cost(1, &z, x0, &p)?);
                    }
                }
                let major = (0..u_count)
                    .map(|u0| self.dynamics.major_row(1, &z, x0, u0))
                    .collect::<Result<Vec<_>>>()?;
                Ok((kernels, major, costs))
            })
            .collect::<Result<_>>()?;
        let mut cache = Cache { kernels: Vec::new(), major: Vec::new(), costs: Vec::new() };
        for (k, m, c) in per_state {
            cache.kernels.extend(k);
            cache.major.extend(m);
            cache.costs.extend(c);
        }
        Ok(cache)
    }

    pub fn spec(&self) -> &'a ModelSpec {
        self.dynamics.spec()
    }

    pub fn dynamics(&self) -> &Dynamics<'a> {
        &self.dynamics
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn space(&self) -> &PrescriptionSpace {
        &self.space
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    pub fn major_states(&self) -> usize {
        self.major_states
    }

    /// Number of `(lattice point, major state)` pairs.
    pub fn states(&self) -> usize {
        self.lattice.len() * self.major_states
    }

    fn state(&self, s: usize) -> (MeanField, usize) {
        let z = self.lattice.unrank(s / self.major_states).expect("state in range");
        (z, s % self.major_states)
    }

    /// Calls `visit(pair, q)` for every action pair in canonical order, with
    /// `q = l(z, x0, gamma, u0) + discount * E[V_next]`.
    fn for_each_q(
        &self,
        s: usize,
        t: usize,
        v_next: &ValueTable,
        discount: f64,
        mut visit: impl FnMut(usize, f64),
    ) -> Result<()> {
        let g_count = self.space.minor_len();
        let u_count = self.space.major_actions();
        let x0n = self.major_states;
        let (z, x0) = self.state(s);
        let values = v_next.values();
        let mut expected = vec![0.0; x0n];
        let mut major_rows: Vec<Vec<f64>> = Vec::new();
        if self.cache.is_none() {
            major_rows = (0..u_count)
                .map(|u0| self.dynamics.major_row(t, &z, x0, u0))
                .collect::<Result<_>>()?;
        }
        for g in 0..g_count {
            let computed;
            let kernel: &[(usize, f64)] = match &self.cache {
                Some(c) => &c.kernels[s * g_count + g],
                None => {
                    let p = Prescription::new(self.space.decode_minor(g), 0);
                    computed = self.dynamics.meanfield_kernel(t, &z, x0, &p)?;
                    &computed
                }
            };
            expected.iter_mut().for_each(|e| *e = 0.0);
            for &(zi, p) in kernel {
                let base = zi * x0n;
                for (e, v) in expected.iter_mut().zip(&values[base..base + x0n]) {
                    *e += p * v;
                }
            }
            let minor = if self.cache.is_none() { self.space.decode_minor(g) } else { Vec::new() };
            for u0 in 0..u_count {
                let (row, cost) = match &self.cache {
                    Some(c) => (&c.major[s * u_count + u0], c.costs[(s * g_count + g) * u_count + u0]),
                    None => {
                        let view = StageView { t, counts: z.counts(), major_state: x0 };
                        (&major_rows[u0], self.spec().stage_cost(&view, &minor, u0)?)
                    }
                };
                let future: f64 = row.iter().zip(&expected).map(|(p, e)| p * e).sum();
                visit(g * u_count + u0, cost + discount * future);
            }
        }
        Ok(())
    }

    /// Q-values of every action pair at state `s = lattice index * X0 + x0`.
    pub fn action_values(&self, s: usize, t: usize, v_next: &ValueTable, discount: f64) -> Result<Vec<f64>> {
        let mut q = vec![0.0; self.space.len()];
        self.for_each_q(s, t, v_next, discount, |a, v| q[a] = v)?;
        Ok(q)
    }

    /// `V_t = min over (gamma, u0) of l + discount * E[V_next]`, with the
    /// first minimizer recorded.
    pub fn bellman_backup(&self, v_next: &ValueTable, t: usize, discount: f64) -> Result<(ValueTable, PolicyTable)> {
        if v_next.values().len() != self.states() || v_next.major_states() != self.major_states {
            return Err(Error::Model("value table does not match the lattice".into()));
        }
        let best: Vec<(f64, usize)> = (0..self.states())
            .into_par_iter()
            .map(|s| {
                let mut best = (f64::INFINITY, 0usize);
                self.for_each_q(s, t, v_next, discount, |a, q| {
                    if q < best.0 {
                        best = (q, a);
                    }
                })?;
                Ok(best)
            })
            .collect::<Result<_>>()?;
        let (values, choices) = best.into_iter().unzip();
        Ok((
            ValueTable { major_states: self.major_states, values },
            PolicyTable {
                lattice: self.lattice.clone(),
                space: self.space.clone(),
                major_states: self.major_states,
                choices,
            },
        ))
    }

    pub fn solve_finite(&self, horizon: usize) -> Result<FiniteSolution> {
        if horizon == 0 {
            return Err(Error::Model("horizon must be at least 1".into()));
        }
        let mut v = ValueTable::zeros(self.lattice.len(), self.major_states);
        let mut values = Vec::with_capacity(horizon);
        let mut policies = Vec::with_capacity(horizon);
        for t in (1..=horizon).rev() {
            let (vt, pt) = self.bellman_backup(&v, t, 1.0)?;
            values.push(vt.clone());
            policies.push(pt);
            v = vt;
        }
        values.reverse();
        policies.reverse();
        Ok(FiniteSolution { values, policies })
    }

    /// Value iteration until the sup-norm step is at most
    /// `tol (1 - beta) / (2 beta)`, then one greedy pass over the final
    /// values.
    pub fn solve_discounted(&self, beta: f64, tol: f64, max_sweeps: usize) -> Result<DiscountedSolution> {
        if !(beta > 0.0 && beta < 1.0) || !(tol > 0.0) {
            return Err(Error::Model(format!("invalid discount parameters beta={beta}, tol={tol}")));
        }
        if !self.spec().is_stationary() {
            return Err(Error::Model("discounted objectives need a stationary model".into()));
        }
        let threshold = tol * (1.0 - beta) / (2.0 * beta);
        let mut v = ValueTable::zeros(self.lattice.len(), self.major_states);
        let mut residual = f64::INFINITY;
        for sweep in 1..=max_sweeps {
            let (next, _) = self.bellman_backup(&v, 1, beta)?;
            residual = next.sup_distance(&v);
            v = next;
            if residual <= threshold {
                let (_, policy) = self.bellman_backup(&v, 1, beta)?;
                return Ok(DiscountedSolution { value: v, policy, sweeps: sweep, residual });
            }
        }
        Err(Error::Convergence { sweeps: max_sweeps, residual })
    }

    /// Solves according to the model's objective.
    pub fn solve(&self) -> Result<Solution> {
        match self.spec().objective {
            Objective::FiniteHorizon(t) => self.solve_finite(t).map(Solution::Finite),
            Objective::Discounted { beta, tol } => {
                self.solve_discounted(beta, tol, DEFAULT_MAX_SWEEPS).map(Solution::Discounted)
            }
        }
    }
}

/// Solves `spec` with its own objective.
pub fn solve(spec: &ModelSpec) -> Result<Solution> {
    Solver::new(spec)?.solve()
}
