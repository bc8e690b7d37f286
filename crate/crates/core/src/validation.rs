//! Cross-checks between production code and the oracles.

use serde::Serialize;

use crate::dynamics::{Dynamics, Prescription};
use crate::error::Result;
use crate::lattice::MeanField;
use crate::model::{ModelSpec, Objective, StageView};
use crate::oracle::{self, TIE_TOLERANCE};
use crate::reductions::embed_major_as_type;
use crate::solver::{Solution, Solver, ValueTable};

/// Action pairs whose Q-value is within the tie tolerance of the minimum.
pub fn argmin_set(solver: &Solver<'_>, s: usize, t: usize, v_next: &ValueTable, discount: f64) -> Result<Vec<Prescription>> {
    let q = solver.action_values(s, t, v_next, discount)?;
    let best = q.iter().cloned().fold(f64::INFINITY, f64::min);
    let slack = TIE_TOLERANCE * best.abs().max(1.0);
    Ok((0..q.len()).filter(|&a| q[a] <= best + slack).map(|a| solver.space().decode(a)).collect())
}

/// Queries every minor and major row at every lattice point; any row that
/// fails the stochasticity check is an error.
pub fn row_normalization(spec: &ModelSpec) -> Result<usize> {
    let lattice = spec.lattice()?;
    let radices = spec.action_radices();
    let horizon = match spec.objective {
        Objective::FiniteHorizon(t) if !spec.is_stationary() => t,
        _ => 1,
    };
    let mut rows = 0;
    for t in 1..=horizon {
        for z in lattice.points() {
            for x0 in 0..spec.major_state_count() {
                let view = StageView { t, counts: z.counts(), major_state: x0 };
                for (x, &r) in radices.iter().enumerate() {
                    for u in 0..r {
                        spec.minor_row(&view, x, u)?;
                        rows += 1;
                    }
                }
                for u0 in 0..spec.major_action_count() {
                    spec.major_row(&view, u0)?;
                    rows += 1;
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelAgreement {
    pub cases: usize,
    pub max_deviation: f64,
}

/// Joint kernel against brute-force enumeration at every lattice point,
/// major state and action pair.
pub fn kernel_agreement(spec: &ModelSpec) -> Result<KernelAgreement> {
    let dynamics = Dynamics::new(spec)?;
    let lattice = dynamics.lattice();
    let space = crate::solver::PrescriptionSpace::new(spec)?;
    let mut cases = 0;
    let mut max_deviation: f64 = 0.0;
    for z in lattice.points() {
        for x0 in 0..spec.major_state_count() {
            for p in space.iter() {
                let fast = dynamics.joint_kernel(1, &z, x0, &p)?;
                let slow = oracle::joint_by_enumeration(spec, 1, &z, x0, &p.minor, p.major)?;
                for ((counts, y0), q) in &slow {
                    let idx = lattice.rank(counts)?;
                    max_deviation = max_deviation.max((fast.prob(idx, *y0) - q).abs());
                }
                for (idx, y0, q) in fast.iter() {
                    let counts = lattice.unrank(idx)?.into_counts();
                    let other = slow.get(&(counts, y0)).copied().unwrap_or(0.0);
                    max_deviation = max_deviation.max((q - other).abs());
                }
                cases += 1;
            }
        }
    }
    Ok(KernelAgreement { cases, max_deviation })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpAgreement {
    pub states: usize,
    pub stages: usize,
    pub max_value_deviation: f64,
    /// `(stage, counts, major state)` where the argmin sets differ.
    pub argmin_mismatches: Vec<(usize, Vec<u32>, usize)>,
}

impl DpAgreement {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_value_deviation <= tolerance && self.argmin_mismatches.is_empty()
    }
}

/// Production solve against the dense oracle DP. Argmin sets are compared
/// at every state and stage.
pub fn dp_agreement(spec: &ModelSpec) -> Result<DpAgreement> {
    let dense = oracle::dense_dp(spec)?;
    let solver = Solver::new(spec)?;
    let solution = solver.solve()?;
    let (tables, discount): (Vec<ValueTable>, f64) = match &solution {
        Solution::Finite(f) => (f.values.clone(), 1.0),
        Solution::Discounted(d) => {
            let Objective::Discounted { beta, .. } = spec.objective else { unreachable!() };
            (vec![d.value.clone()], beta)
        }
    };
    let x0n = spec.major_state_count();
    let zeros = ValueTable::zeros(solver.lattice().len(), x0n);
    let mut max_value_deviation: f64 = 0.0;
    let mut argmin_mismatches = Vec::new();
    for (stage, table) in tables.iter().enumerate() {
        // the table each stage's minimization looked at
        let next = match &solution {
            Solution::Finite(_) => tables.get(stage + 1).unwrap_or(&zeros),
            Solution::Discounted(_) => table,
        };
        for (ds, (counts, x0)) in dense.states.iter().enumerate() {
            let idx = solver.lattice().rank(counts)?;
            let s = idx * x0n + x0;
            max_value_deviation = max_value_deviation.max((table.get(idx, *x0) - dense.values[stage][ds]).abs());
            let mut fast: Vec<(Vec<usize>, usize)> = argmin_set(&solver, s, stage + 1, next, discount)?
                .into_iter()
                .map(|p| (p.minor, p.major))
                .collect();
            let mut slow: Vec<(Vec<usize>, usize)> =
                dense.argmins[stage][ds].iter().map(|&a| dense.actions[a].clone()).collect();
            fast.sort();
            slow.sort();
            if fast != slow {
                argmin_mismatches.push((stage + 1, counts.clone(), *x0));
            }
        }
    }
    Ok(DpAgreement { states: dense.states.len(), stages: tables.len(), max_value_deviation, argmin_mismatches })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddingAgreement {
    pub points: usize,
    pub max_value_deviation: f64,
    /// `(z index, x0)` where every direct minimizer shares one major action
    /// and the embedded policy picks another.
    pub major_action_mismatches: Vec<(usize, usize)>,
    /// `(z index, x0, x)` for occupied minor states, likewise.
    pub minor_action_mismatches: Vec<(usize, usize, usize)>,
}

impl EmbeddingAgreement {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_value_deviation <= tolerance
            && self.major_action_mismatches.is_empty()
            && self.minor_action_mismatches.is_empty()
    }
}

/// Direct major-minor solve against the solve of its multi-type embedding.
pub fn embedding_agreement(spec: &ModelSpec) -> Result<EmbeddingAgreement> {
    let embedding = embed_major_as_type(spec)?;
    let direct_solver = Solver::new(spec)?;
    let direct = direct_solver.solve()?;
    let embedded = Solver::new(&embedding.spec)?.solve()?;
    let c = &embedding.correspondence;
    let mapped = c.values_to_major_minor(embedded.initial_values());
    let max_value_deviation = mapped.sup_distance(direct.initial_values());
    let (v_next, discount) = match (&direct, spec.objective) {
        (Solution::Discounted(d), Objective::Discounted { beta, .. }) => (d.value.clone(), beta),
        (Solution::Finite(f), _) => (
            f.values
                .get(1)
                .cloned()
                .unwrap_or_else(|| ValueTable::zeros(direct_solver.lattice().len(), spec.major_state_count())),
            1.0,
        ),
        _ => unreachable!(),
    };
    let mut major_action_mismatches = Vec::new();
    let mut minor_action_mismatches = Vec::new();
    let x0n = spec.major_state_count();
    for z in 0..direct_solver.lattice().len() {
        let counts = direct_solver.lattice().unrank(z)?.into_counts();
        for x0 in 0..x0n {
            let set = argmin_set(&direct_solver, z * x0n + x0, 1, &v_next, discount)?;
            if set.iter().all(|p| p.major == set[0].major)
                && c.major_action(embedded.initial_policy(), z, x0) != set[0].major
            {
                major_action_mismatches.push((z, x0));
            }
            let minor = c.minor_prescription(embedded.initial_policy(), z, x0);
            for x in (0..counts.len()).filter(|&x| counts[x] > 0) {
                if set.iter().all(|p| p.minor[x] == set[0].minor[x]) && minor[x] != set[0].minor[x] {
                    minor_action_mismatches.push((z, x0, x));
                }
            }
        }
    }
    Ok(EmbeddingAgreement { points: c.points(), max_value_deviation, major_action_mismatches, minor_action_mismatches })
}

/// Largest gap between the single-agent MDP and the mean-field solve at
/// unit-mass lattice points; requires `n = 1`.
pub fn single_agent_agreement(spec: &ModelSpec) -> Result<f64> {
    let mdp = oracle::single_agent_mdp(spec)?;
    let solver = Solver::new(spec)?;
    let solution = solver.solve()?;
    let values = solution.initial_values();
    let owner = spec.types.iter().position(|t| t.population == 1).expect("n = 1");
    let offset: usize = spec.types[..owner].iter().map(|t| t.states.len()).sum();
    let mut worst: f64 = 0.0;
    for (x, row) in mdp.iter().enumerate() {
        let mut counts = vec![0u32; spec.state_count()];
        counts[offset + x] = 1;
        let idx = solver.lattice().rank(MeanField::new(counts).counts())?;
        for (x0, v) in row.iter().enumerate() {
            worst = worst.max((values.get(idx, x0) - v).abs());
        }
    }
    Ok(worst)
}
