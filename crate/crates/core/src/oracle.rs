//! Brute-force reference implementations.
//!
//! Nothing here touches the production lattice ranking, kernel convolution
//! or solver. The only shared code is the model itself (row, cost and
//! major-kernel queries), so agreement between the two paths is evidence
//! that the production implementation is correct.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::MeanField;
use crate::model::{ModelSpec, Objective, StageView, LatticeShape};

pub const MAX_JOINT_OUTCOMES: u128 = 1_000_000;
pub const MAX_DENSE_STATES: usize = 10_000;
pub const MAX_DENSE_ENTRIES: u128 = 50_000_000;

/// Explicit state of every agent plus the major subsystem.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JointState {
    pub agents: Vec<usize>,
    pub major: usize,
}

impl JointState {
    /// Lowest-index agents to lowest-index states.
    pub fn from_counts(counts: &[u32], major: usize) -> Self {
        let agents = counts
            .iter()
            .enumerate()
            .flat_map(|(x, &c)| std::iter::repeat(x).take(c as usize))
            .collect();
        JointState { agents, major }
    }

    pub fn counts(&self, states: usize) -> Vec<u32> {
        let mut c = vec![0u32; states];
        for &a in &self.agents {
            c[a] += 1;
        }
        c
    }
}

/// One coordinator action, kept as plain vectors.
pub type ActionPair = (Vec<usize>, usize);

fn local_range(spec: &ModelSpec, flat: usize) -> (usize, usize) {
    let ty = spec.augmented(flat).type_id;
    (spec.type_offset(ty), spec.types[ty.0].states.len())
}

/// Successor law of the count vector by enumerating every joint outcome of
/// the agents in `joint`.
pub fn kernel_by_enumeration_from(
    spec: &ModelSpec,
    t: usize,
    joint: &JointState,
    prescription: &[usize],
) -> Result<BTreeMap<Vec<u32>, f64>> {
    let d = spec.state_count();
    let counts = joint.counts(d);
    let view = StageView { t, counts: &counts, major_state: joint.major };
    let mut rows = Vec::with_capacity(joint.agents.len());
    let mut outcomes: u128 = 1;
    for &a in &joint.agents {
        let (offset, len) = local_range(spec, a);
        rows.push((offset, spec.minor_row(&view, a, prescription[a])?));
        outcomes = outcomes.saturating_mul(len as u128);
    }
    if outcomes > MAX_JOINT_OUTCOMES {
        return Err(Error::capacity("joint outcome enumeration", outcomes, MAX_JOINT_OUTCOMES));
    }
    let mut out = BTreeMap::new();
    let mut digits = vec![0usize; rows.len()];
    loop {
        let mut p = 1.0;
        let mut next = vec![0u32; d];
        for (i, &y) in digits.iter().enumerate() {
            p *= rows[i].1[y];
            next[rows[i].0 + y] += 1;
        }
        if p > 0.0 {
            *out.entry(next).or_insert(0.0) += p;
        }
        // odometer, last agent fastest
        let mut i = digits.len();
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < rows[i].1.len() {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// [`kernel_by_enumeration_from`] applied to the canonical joint state of `z`.
pub fn kernel_by_enumeration(
    spec: &ModelSpec,
    t: usize,
    z: &MeanField,
    major_state: usize,
    prescription: &[usize],
) -> Result<BTreeMap<Vec<u32>, f64>> {
    kernel_by_enumeration_from(spec, t, &JointState::from_counts(z.counts(), major_state), prescription)
}

/// Joint law of `(counts', x0')` by enumeration; minor and major noises are
/// drawn independently.
pub fn joint_by_enumeration(
    spec: &ModelSpec,
    t: usize,
    z: &MeanField,
    major_state: usize,
    prescription: &[usize],
    major_action: usize,
) -> Result<BTreeMap<(Vec<u32>, usize), f64>> {
    let minor = kernel_by_enumeration(spec, t, z, major_state, prescription)?;
    let view = StageView { t, counts: z.counts(), major_state };
    let major = spec.major_row(&view, major_action)?;
    let mut out = BTreeMap::new();
    for (c, p) in minor {
        for (x0, &q) in major.iter().enumerate() {
            if q > 0.0 {
                out.insert((c.clone(), x0), p * q);
            }
        }
    }
    Ok(out)
}

fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All ways of splitting `total` agents over the positive entries of `row`,
/// with their multinomial probabilities.
fn multinomial_outcomes(total: u32, row: &[f64]) -> Vec<(Vec<u32>, f64)> {
    let support: Vec<usize> = (0..row.len()).filter(|&y| row[y] > 0.0).collect();
    let mut out = Vec::new();
    let mut split = vec![0u32; row.len()];
    fn rec(
        support: &[usize],
        row: &[f64],
        left: u32,
        coef: f64,
        prob: f64,
        split: &mut Vec<u32>,
        out: &mut Vec<(Vec<u32>, f64)>,
    ) {
        let (&y, rest) = support.split_first().expect("non-empty support");
        if rest.is_empty() {
            split[y] = left;
            out.push((split.clone(), coef * prob * row[y].powi(left as i32)));
            split[y] = 0;
            return;
        }
        for k in 0..=left {
            split[y] = k;
            rec(rest, row, left - k, coef * binomial(left, k), prob * row[y].powi(k as i32), split, out);
        }
        split[y] = 0;
    }
    rec(&support, row, total, 1.0, 1.0, &mut split, &mut out);
    out
}

/// Successor law by explicit multinomial enumeration per occupied source
/// state, combined by direct convolution over count vectors.
pub fn kernel_by_multinomial(
    spec: &ModelSpec,
    t: usize,
    z: &MeanField,
    major_state: usize,
    prescription: &[usize],
) -> Result<BTreeMap<Vec<u32>, f64>> {
    let d = spec.state_count();
    let view = StageView { t, counts: z.counts(), major_state };
    let mut dist: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    dist.insert(vec![0; d], 1.0);
    for x in 0..d {
        let c = z.counts()[x];
        if c == 0 {
            continue;
        }
        let (offset, len) = local_range(spec, x);
        let local = spec.minor_row(&view, x, prescription[x])?;
        let mut row = vec![0.0; d];
        row[offset..offset + len].copy_from_slice(&local);
        let outcomes = multinomial_outcomes(c, &row);
        let mut next = BTreeMap::new();
        for (partial, p) in &dist {
            for (split, q) in &outcomes {
                let key: Vec<u32> = partial.iter().zip(split).map(|(a, b)| a + b).collect();
                *next.entry(key).or_insert(0.0) += p * q;
            }
        }
        dist = next;
    }
    Ok(dist)
}

/// Every count vector respecting the model's lattice shape, sorted.
pub fn enumerate_counts(spec: &ModelSpec) -> Vec<Vec<u32>> {
    fn compositions(n: u32, d: usize) -> Vec<Vec<u32>> {
        if d == 1 {
            return vec![vec![n]];
        }
        let mut out = Vec::new();
        for first in 0..=n {
            for mut tail in compositions(n - first, d - 1) {
                tail.insert(0, first);
                out.push(tail);
            }
        }
        out
    }
    let blocks: Vec<(u32, usize)> = match spec.shape {
        LatticeShape::PerType => spec.types.iter().map(|t| (t.population as u32, t.states.len())).collect(),
        LatticeShape::Pooled => vec![(spec.population() as u32, spec.state_count())],
    };
    let mut all = vec![Vec::new()];
    for (n, d) in blocks {
        let parts = compositions(n, d);
        all = all
            .into_iter()
            .flat_map(|prefix: Vec<u32>| {
                parts.iter().map(move |p| {
                    let mut v = prefix.clone();
                    v.extend(p);
                    v
                })
            })
            .collect();
    }
    all.sort();
    all
}

/// Every `(gamma, u0)` pair, lexicographic with the major action last.
pub fn enumerate_actions(spec: &ModelSpec) -> Vec<ActionPair> {
    let mut gammas: Vec<Vec<usize>> = vec![Vec::new()];
    for r in spec.action_radices() {
        gammas = gammas
            .into_iter()
            .flat_map(|g| {
                (0..r).map(move |a| {
                    let mut g = g.clone();
                    g.push(a);
                    g
                })
            })
            .collect();
    }
    let u0 = spec.major_action_count();
    gammas.into_iter().flat_map(|g| (0..u0).map(move |u| (g.clone(), u))).collect()
}

/// Dense solution of the coordinated MDP.
#[derive(Clone, Debug)]
pub struct DenseSolution {
    /// `(counts, major state)` per dense state index.
    pub states: Vec<(Vec<u32>, usize)>,
    pub actions: Vec<ActionPair>,
    /// One vector per stage (`t = 1..=T`), or a single stationary vector.
    pub values: Vec<Vec<f64>>,
    /// Near-minimizing action indices per stage and state.
    pub argmins: Vec<Vec<Vec<usize>>>,
}

impl DenseSolution {
    pub fn index_of(&self, counts: &[u32], major: usize) -> Option<usize> {
        self.states.iter().position(|(c, x0)| c.as_slice() == counts && *x0 == major)
    }
}

/// Relative tolerance used to collect tied minimizers.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Dense-matrix dynamic program, single-threaded.
pub fn dense_dp(spec: &ModelSpec) -> Result<DenseSolution> {
    let counts = enumerate_counts(spec);
    let x0n = spec.major_state_count();
    let states: Vec<(Vec<u32>, usize)> = counts
        .iter()
        .flat_map(|c| (0..x0n).map(move |x0| (c.clone(), x0)))
        .collect();
    let n_states = states.len();
    if n_states > MAX_DENSE_STATES {
        return Err(Error::capacity("dense DP state space", n_states as u128, MAX_DENSE_STATES as u128));
    }
    let actions = enumerate_actions(spec);
    let entries = (n_states as u128).pow(2) * actions.len() as u128;
    if entries > MAX_DENSE_ENTRIES {
        return Err(Error::capacity("dense transition matrices", entries, MAX_DENSE_ENTRIES));
    }
    let index: BTreeMap<(Vec<u32>, usize), usize> =
        states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();

    let build = |t: usize| -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
        // transition[a][s][s'], cost[a][s]
        let mut transition = vec![vec![vec![0.0; n_states]; n_states]; actions.len()];
        let mut cost = vec![vec![0.0; n_states]; actions.len()];
        for (s, (c, x0)) in states.iter().enumerate() {
            let z = MeanField::new(c.clone());
            let view = StageView { t, counts: c, major_state: *x0 };
            for (a, (gamma, u0)) in actions.iter().enumerate() {
                cost[a][s] = spec.stage_cost(&view, gamma, *u0)?;
                let minor = kernel_by_multinomial(spec, t, &z, *x0, gamma)?;
                let major = spec.major_row(&view, *u0)?;
                for (next, p) in &minor {
                    for (y0, &q) in major.iter().enumerate() {
                        if q > 0.0 {
                            let j = index[&(next.clone(), y0)];
                            transition[a][s][j] += p * q;
                        }
                    }
                }
            }
        }
        Ok((transition, cost))
    };

    let backup = |v: &[f64], p: &[Vec<Vec<f64>>], c: &[Vec<f64>], discount: f64| {
        let mut out = vec![0.0; n_states];
        let mut sets = vec![Vec::new(); n_states];
        for s in 0..n_states {
            let q: Vec<f64> = (0..actions.len())
                .map(|a| c[a][s] + discount * p[a][s].iter().zip(v).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            let best = q.iter().cloned().fold(f64::INFINITY, f64::min);
            let slack = TIE_TOLERANCE * best.abs().max(1.0);
            out[s] = best;
            sets[s] = (0..q.len()).filter(|&a| q[a] <= best + slack).collect();
        }
        (out, sets)
    };

    match spec.objective {
        Objective::FiniteHorizon(horizon) => {
            let mut v = vec![0.0; n_states];
            let mut values = Vec::new();
            let mut argmins = Vec::new();
            let stationary = spec.is_stationary();
            let mut built = if stationary { Some(build(1)?) } else { None };
            for t in (1..=horizon).rev() {
                if !stationary {
                    built = Some(build(t)?);
                }
                let (p, c) = built.as_ref().unwrap();
                let (next, sets) = backup(&v, p, c, 1.0);
                values.push(next.clone());
                argmins.push(sets);
                v = next;
            }
            values.reverse();
            argmins.reverse();
            Ok(DenseSolution { states, actions, values, argmins })
        }
        Objective::Discounted { beta, tol } => {
            let (p, c) = build(1)?;
            let threshold = tol * (1.0 - beta) / (2.0 * beta);
            let mut v = vec![0.0; n_states];
            for _ in 0..crate::solver::DEFAULT_MAX_SWEEPS {
                let (next, _) = backup(&v, &p, &c, beta);
                let step = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                v = next;
                if step <= threshold {
                    let (_, sets) = backup(&v, &p, &c, beta);
                    return Ok(DenseSolution { states, actions, values: vec![v], argmins: vec![sets] });
                }
            }
            Err(Error::Convergence { sweeps: crate::solver::DEFAULT_MAX_SWEEPS, residual: f64::NAN })
        }
    }
}

/// Classical MDP solve for a single agent (and the major subsystem, if
/// any). Returns values indexed `[x][x0]` at stage 1.
pub fn single_agent_mdp(spec: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    if spec.population() != 1 {
        return Err(Error::Population(format!("single-agent oracle needs n = 1, got {}", spec.population())));
    }
    // only the agent's own type can be occupied
    let owner = spec.types.iter().position(|t| t.population == 1).unwrap();
    let offset: usize = spec.types[..owner].iter().map(|t| t.states.len()).sum();
    let d = spec.state_count();
    let local_states = spec.types[owner].states.len();
    let actions = spec.types[owner].actions.len();
    let x0n = spec.major_state_count();
    let u0n = spec.major_action_count();

    // q(x, x0, u, u0) with the agent at augmented state offset + x
    let q_value = |t: usize, x: usize, x0: usize, u: usize, u0: usize, v: &[Vec<f64>], discount: f64| -> Result<f64> {
        let mut counts = vec![0u32; d];
        counts[offset + x] = 1;
        let view = StageView { t, counts: &counts, major_state: x0 };
        let mut gamma = vec![0usize; d];
        gamma[offset + x] = u;
        let cost = spec.stage_cost(&view, &gamma, u0)?;
        let row = spec.minor_row(&view, offset + x, u)?;
        let major = spec.major_row(&view, u0)?;
        let mut future = 0.0;
        for (y, &p) in row.iter().enumerate() {
            for (y0, &q) in major.iter().enumerate() {
                future += p * q * v[y][y0];
            }
        }
        Ok(cost + discount * future)
    };
    let sweep = |t: usize, v: &[Vec<f64>], discount: f64| -> Result<Vec<Vec<f64>>> {
        let mut out = vec![vec![0.0; x0n]; local_states];
        for x in 0..local_states {
            for x0 in 0..x0n {
                let mut best = f64::INFINITY;
                for u in 0..actions {
                    for u0 in 0..u0n {
                        best = best.min(q_value(t, x, x0, u, u0, v, discount)?);
                    }
                }
                out[x][x0] = best;
            }
        }
        Ok(out)
    };

    let mut v = vec![vec![0.0; x0n]; local_states];
    match spec.objective {
        Objective::FiniteHorizon(horizon) => {
            for t in (1..=horizon).rev() {
                v = sweep(t, &v, 1.0)?;
            }
            Ok(v)
        }
        Objective::Discounted { beta, .. } => {
            for _ in 0..crate::solver::DEFAULT_MAX_SWEEPS {
                let next = sweep(1, &v, beta)?;
                let step = next
                    .iter()
                    .flatten()
                    .zip(v.iter().flatten())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let scale = next.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
                v = next;
                if step <= 1e-15 * scale {
                    return Ok(v);
                }
            }
            Ok(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_forced_mix_kernel, CostModel, SeparableCost, TypeSpec, MinorKernel, TableKernel};

    fn service_minor(n: usize, objective: Objective) -> ModelSpec {
        let q = vec![vec![0.6, 0.4], vec![0.3, 0.7]];
        ModelSpec {
            types: vec![TypeSpec {
                population: n,
                states: vec!["0".into(), "1".into()],
                actions: vec!["0".into(), "1".into(), "2".into()],
            }],
            major: None,
            minor_kernel: build_forced_mix_kernel(q, vec![0.1, 0.1]).unwrap(),
            cost: CostModel::Separable(SeparableCost {
                per_agent: vec![vec![0.0, 4.0, 1.0], vec![0.0, 4.0, 1.0]],
                major: vec![vec![0.0]],
            }),
            objective,
            shape: LatticeShape::PerType,
        }
    }

    #[test]
    fn two_agent_enumeration() {
        let spec = service_minor(2, Objective::FiniteHorizon(1));
        let k = kernel_by_enumeration(&spec, 1, &MeanField::new(vec![2, 0]), 0, &[0, 0]).unwrap();
        let expect = [(vec![2, 0], 0.36), (vec![1, 1], 0.48), (vec![0, 2], 0.16)];
        for (c, p) in expect {
            assert!((k[&c] - p).abs() < 1e-15, "{c:?}");
        }
        assert_eq!(k.len(), 3);
    }

    #[test]
    fn enumeration_is_exchangeable() {
        let spec = service_minor(3, Objective::FiniteHorizon(1));
        let gamma = [1, 2];
        let a = kernel_by_enumeration_from(&spec, 1, &JointState { agents: vec![0, 0, 1], major: 0 }, &gamma).unwrap();
        let b = kernel_by_enumeration_from(&spec, 1, &JointState { agents: vec![1, 0, 0], major: 0 }, &gamma).unwrap();
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (k, p) in &a {
            assert!((p - b[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn multinomial_matches_enumeration() {
        let spec = service_minor(4, Objective::FiniteHorizon(1));
        for c in enumerate_counts(&spec) {
            let z = MeanField::new(c);
            let a = kernel_by_enumeration(&spec, 1, &z, 0, &[2, 1]).unwrap();
            let b = kernel_by_multinomial(&spec, 1, &z, 0, &[2, 1]).unwrap();
            for (k, p) in &a {
                assert!((p - b[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn enumeration_capacity() {
        let spec = service_minor(25, Objective::FiniteHorizon(1));
        let err = kernel_by_enumeration(&spec, 1, &MeanField::new(vec![25, 0]), 0, &[0, 0]).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn one_step_dense_dp_is_myopic() {
        let spec = service_minor(3, Objective::FiniteHorizon(1));
        let sol = dense_dp(&spec).unwrap();
        for (s, (c, _)) in sol.states.iter().enumerate() {
            // free action everywhere costs nothing
            assert_eq!(sol.values[0][s], 0.0, "{c:?}");
        }
    }

    #[test]
    fn zero_cost_dense_dp() {
        let mut spec = service_minor(2, Objective::Discounted { beta: 0.5, tol: 1e-9 });
        spec.cost = CostModel::zero(&[3, 3], 1, 1);
        let sol = dense_dp(&spec).unwrap();
        assert!(sol.values[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_state_geometric_value() {
        let spec = ModelSpec {
            types: vec![TypeSpec { population: 1, states: vec!["s".into()], actions: vec!["a".into()] }],
            major: None,
            minor_kernel: MinorKernel::Table(TableKernel { per_type: vec![vec![vec![vec![1.0]]]] }),
            cost: CostModel::Separable(SeparableCost { per_agent: vec![vec![2.5]], major: vec![vec![0.0]] }),
            objective: Objective::Discounted { beta: 0.8, tol: 1e-9 },
            shape: LatticeShape::PerType,
        };
        let v = single_agent_mdp(&spec).unwrap();
        assert!((v[0][0] - 12.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_chain_sums_path_costs() {
        // 0 -> 1 -> 2 -> 2, costs 1, 2, 3 per visit
        let shift = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]];
        let spec = ModelSpec {
            types: vec![TypeSpec {
                population: 1,
                states: vec!["a".into(), "b".into(), "c".into()],
                actions: vec!["go".into()],
            }],
            major: None,
            minor_kernel: MinorKernel::Table(TableKernel { per_type: vec![vec![shift]] }),
            cost: CostModel::Separable(SeparableCost {
                per_agent: vec![vec![1.0], vec![2.0], vec![3.0]],
                major: vec![vec![0.0]],
            }),
            objective: Objective::FiniteHorizon(4),
            shape: LatticeShape::PerType,
        };
        let v = single_agent_mdp(&spec).unwrap();
        assert_eq!(v[0][0], 1.0 + 2.0 + 3.0 + 3.0);
    }
}
