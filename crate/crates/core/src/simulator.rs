//! Monte Carlo rollouts of the full `n`-agent system.
//!
//! Random numbers come from ChaCha8 as implemented by `rand_chacha`. The key
//! is `ChaCha8Rng::seed_from_u64(seed)`, the stream is the rollout (or
//! sample) index, and agent `i` at stage `t` reads the 64-bit word at word
//! position `2 * ((t - 1) * (n + 1) + i)`; the major subsystem is agent `n`.
//! A word `w` becomes the uniform `(w >> 11) * 2^-53`, and successors are
//! drawn by inverse CDF over the kernel row. Every draw is therefore a pure
//! function of `(seed, rollout, stage, agent)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{Dynamics, Prescription};
use crate::error::{Error, Result};
use crate::lattice::MeanField;
use crate::model::{ModelSpec, Objective, StageView};
use crate::solver::{FiniteSolution, PolicyTable};

/// Default bias budget for truncating discounted rollouts.
pub const DEFAULT_BIAS_BUDGET: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    /// Agents assigned lowest index to lowest state.
    MeanField { counts: Vec<u32>, major: usize },
    /// Augmented state of every agent.
    Joint { agents: Vec<usize>, major: usize },
}

impl InitialState {
    fn agents(&self) -> (Vec<usize>, usize) {
        match self {
            InitialState::MeanField { counts, major } => {
                let agents = counts
                    .iter()
                    .enumerate()
                    .flat_map(|(x, &c)| std::iter::repeat(x).take(c as usize))
                    .collect();
                (agents, *major)
            }
            InitialState::Joint { agents, major } => (agents.clone(), *major),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub rollouts: usize,
    /// Stage count; `None` uses `T` for finite horizons and the truncation
    /// rule for discounted objectives.
    pub horizon: Option<usize>,
    pub initial: InitialState,
    /// Upper bound on the discounted tail dropped by truncation.
    pub bias_budget: f64,
}

impl SimConfig {
    pub fn new(seed: u64, rollouts: usize, initial: InitialState) -> Self {
        SimConfig { seed, rollouts, horizon: None, initial, bias_budget: DEFAULT_BIAS_BUDGET }
    }
}

/// Something that picks `(gamma, u0)` from the current mean-field.
pub trait ControlLaw: Sync {
    fn prescribe(&self, t: usize, z: &MeanField, major_state: usize) -> Result<Prescription>;
}

impl ControlLaw for PolicyTable {
    fn prescribe(&self, _t: usize, z: &MeanField, major_state: usize) -> Result<Prescription> {
        self.lookup(z, major_state)
    }
}

impl ControlLaw for FiniteSolution {
    fn prescribe(&self, t: usize, z: &MeanField, major_state: usize) -> Result<Prescription> {
        self.policies
            .get(t - 1)
            .ok_or_else(|| Error::Lookup(format!("no policy for stage {t}")))?
            .lookup(z, major_state)
    }
}

impl ControlLaw for Prescription {
    fn prescribe(&self, _t: usize, _z: &MeanField, _major_state: usize) -> Result<Prescription> {
        Ok(self.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RolloutReport {
    pub mean: f64,
    pub std_error: f64,
    pub rollouts: usize,
    pub horizon: usize,
    /// Bound on the discounted cost beyond the horizon; 0 for finite horizons.
    pub truncation_bias_bound: f64,
    pub seed: u64,
    /// Average fraction of agents per augmented state at each stage.
    pub mean_fractions: Vec<Vec<f64>>,
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn sample(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (y, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = y;
            if u < acc {
                return y;
            }
        }
    }
    last
}

/// Stream positioned at the first draw of stage `t`.
fn stage_rng(seed: u64, stream: u64, t: usize, population: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * ((t as u128 - 1) * (population as u128 + 1)));
    rng
}

fn counts_of(agents: &[usize], states: usize) -> Vec<u32> {
    let mut c = vec![0u32; states];
    for &a in agents {
        c[a] += 1;
    }
    c
}

/// One stage: every agent and the major subsystem draw a successor.
fn step(
    spec: &ModelSpec,
    t: usize,
    agents: &mut [usize],
    major: &mut usize,
    gamma: &Prescription,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let d = spec.state_count();
    let counts = counts_of(agents, d);
    let view = StageView { t, counts: &counts, major_state: *major };
    let mut rows: Vec<Option<(usize, Vec<f64>)>> = vec![None; d];
    for x in 0..d {
        if counts[x] > 0 {
            let offset = spec.type_offset(spec.augmented(x).type_id);
            rows[x] = Some((offset, spec.minor_row(&view, x, gamma.action(x))?));
        }
    }
    for a in agents.iter_mut() {
        let (offset, row) = rows[*a].as_ref().expect("occupied state");
        *a = offset + sample(row, uniform(rng));
    }
    let row = spec.major_row(&view, gamma.major)?;
    *major = sample(&row, uniform(rng));
    Ok(())
}

fn horizon_and_bias(spec: &ModelSpec, law: &dyn ControlLaw, cfg: &SimConfig) -> Result<(usize, f64, f64)> {
    match spec.objective {
        Objective::FiniteHorizon(t) => Ok((cfg.horizon.unwrap_or(t), 0.0, 1.0)),
        Objective::Discounted { beta, .. } => {
            // Largest stage cost the law can incur anywhere on the lattice.
            let lattice = spec.lattice()?;
            let mut c_max: f64 = 0.0;
            for z in lattice.points() {
                for x0 in 0..spec.major_state_count() {
                    let gamma = law.prescribe(1, &z, x0)?;
                    let view = StageView { t: 1, counts: z.counts(), major_state: x0 };
                    c_max = c_max.max(spec.stage_cost(&view, &gamma.minor, gamma.major)?.abs());
                }
            }
            let tail = |h: usize| beta.powi(h as i32) * c_max / (1.0 - beta);
            let horizon = match cfg.horizon {
                Some(h) => h,
                None => {
                    let mut h = 1;
                    while tail(h) > cfg.bias_budget {
                        h += 1;
                    }
                    h
                }
            };
            Ok((horizon, tail(horizon), beta))
        }
    }
}

struct Trajectory {
    cost: f64,
    fractions: Vec<Vec<f64>>,
}

fn one_rollout(
    spec: &ModelSpec,
    law: &dyn ControlLaw,
    cfg: &SimConfig,
    rollout: usize,
    horizon: usize,
    discount: f64,
) -> Result<Trajectory> {
    let (mut agents, mut major) = cfg.initial.agents();
    let n = agents.len();
    let d = spec.state_count();
    let mut cost = 0.0;
    let mut weight = 1.0;
    let mut fractions = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let counts = counts_of(&agents, d);
        fractions.push(counts.iter().map(|&c| c as f64 / n as f64).collect());
        let z = MeanField::new(counts);
        let gamma = law.prescribe(t, &z, major)?;
        let view = StageView { t, counts: z.counts(), major_state: major };
        cost += weight * spec.stage_cost(&view, &gamma.minor, gamma.major)?;
        weight *= discount;
        let mut rng = stage_rng(cfg.seed, rollout as u64, t, n);
        step(spec, t, &mut agents, &mut major, &gamma, &mut rng)?;
    }
    Ok(Trajectory { cost, fractions })
}

fn check_initial(spec: &ModelSpec, cfg: &SimConfig) -> Result<()> {
    let (agents, major) = cfg.initial.agents();
    if agents.len() != spec.population() {
        return Err(Error::Population(format!(
            "initial state has {} agents, model has {}",
            agents.len(),
            spec.population()
        )));
    }
    if let Some(&a) = agents.iter().find(|&&a| a >= spec.state_count()) {
        return Err(Error::Model(format!("initial agent state {a} out of range")));
    }
    if major >= spec.major_state_count() {
        return Err(Error::Model(format!("initial major state {major} out of range")));
    }
    if spec.typed_lattice()?.try_rank(&counts_of(&agents, spec.state_count())).is_none() {
        return Err(Error::Population("initial state breaks the per-type populations".into()));
    }
    Ok(())
}

/// Mean total (or discounted) cost of `law` over independent rollouts.
pub fn rollout(spec: &ModelSpec, law: &dyn ControlLaw, cfg: &SimConfig) -> Result<RolloutReport> {
    if cfg.rollouts == 0 {
        return Err(Error::Model("at least one rollout is required".into()));
    }
    check_initial(spec, cfg)?;
    let (horizon, bias, discount) = horizon_and_bias(spec, law, cfg)?;
    if horizon == 0 {
        return Err(Error::Model("horizon must be at least 1".into()));
    }
    // Collected in rollout order, then reduced sequentially.
    let runs: Vec<Trajectory> = (0..cfg.rollouts)
        .into_par_iter()
        .map(|r| one_rollout(spec, law, cfg, r, horizon, discount))
        .collect::<Result<_>>()?;
    let r = runs.len() as f64;
    let mean = runs.iter().map(|x| x.cost).sum::<f64>() / r;
    let std_error = if runs.len() > 1 {
        let var = runs.iter().map(|x| (x.cost - mean).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    } else {
        0.0
    };
    let d = spec.state_count();
    let mut mean_fractions = vec![vec![0.0; d]; horizon];
    for run in &runs {
        for (acc, f) in mean_fractions.iter_mut().zip(&run.fractions) {
            for (a, b) in acc.iter_mut().zip(f) {
                *a += b;
            }
        }
    }
    mean_fractions.iter_mut().flatten().for_each(|x| *x /= r);
    Ok(RolloutReport {
        mean,
        std_error,
        rollouts: cfg.rollouts,
        horizon,
        truncation_bias_bound: bias,
        seed: cfg.seed,
        mean_fractions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelCheck {
    /// Largest `|empirical - exact|` over the joint support and any
    /// empirically observed point outside it.
    pub max_deviation: f64,
    /// Pearson statistic over successor points with positive exact mass.
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub samples: usize,
}

/// Simulates one step from `cfg.initial` under `gamma` `cfg.rollouts`
/// times and compares successor frequencies with the exact joint kernel.
pub fn empirical_kernel_check(spec: &ModelSpec, gamma: &Prescription, cfg: &SimConfig) -> Result<KernelCheck> {
    check_initial(spec, cfg)?;
    let dynamics = Dynamics::new(spec)?;
    let lattice = dynamics.lattice();
    let (agents, major) = cfg.initial.agents();
    let z = MeanField::new(counts_of(&agents, spec.state_count()));
    let exact = dynamics.joint_kernel(1, &z, major, gamma)?;
    let x0n = spec.major_state_count();
    let hits: Vec<usize> = (0..cfg.rollouts)
        .into_par_iter()
        .map(|s| -> Result<usize> {
            let mut a = agents.clone();
            let mut m = major;
            let mut rng = stage_rng(cfg.seed, s as u64, 1, a.len());
            step(spec, 1, &mut a, &mut m, gamma, &mut rng)?;
            Ok(lattice.rank(&counts_of(&a, spec.state_count()))? * x0n + m)
        })
        .collect::<Result<_>>()?;
    let mut freq = vec![0usize; lattice.len() * x0n];
    for h in hits {
        freq[h] += 1;
    }
    let total = cfg.rollouts as f64;
    let mut max_deviation: f64 = 0.0;
    let mut chi_square = 0.0;
    let mut support = 0usize;
    for (i, &f) in freq.iter().enumerate() {
        let p = exact.prob(i / x0n, i % x0n);
        let observed = f as f64 / total;
        max_deviation = max_deviation.max((observed - p).abs());
        if p > 0.0 {
            support += 1;
            chi_square += (f as f64 - total * p).powi(2) / (total * p);
        }
    }
    Ok(KernelCheck {
        max_deviation,
        chi_square,
        degrees_of_freedom: support.saturating_sub(1),
        samples: cfg.rollouts,
    })
}
