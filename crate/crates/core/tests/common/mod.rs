#![allow(dead_code)]

pub mod props;

use mfteam::model::{
    parse_spec, CostModel, LatticeShape, MajorKernel, MajorSpec, MinorKernel, ModelSpec, Objective, SeparableCost,
    TableKernel, TypeSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SERVICE: &str = include_str!("../data/service.json");

pub fn service() -> ModelSpec {
    parse_spec(SERVICE).expect("service model parses")
}

/// The service model with a different population and objective.
pub fn service_with(n: usize, objective: Objective) -> ModelSpec {
    let mut spec = service();
    spec.types[0].population = n;
    spec.objective = objective;
    spec
}

/// Reference policy of the service example: `(g(z, x0, 0), g0(z, x0))` as
/// action indices, with `m = n z(1)` out of 100. Thresholds are inclusive on
/// the left interval.
pub fn reference(m: usize, x0: usize) -> ((usize, usize), usize) {
    let z1 = m as f64 / 100.0;
    match x0 {
        0 => {
            let g0 = if z1 <= 0.53 {
                0
            } else if z1 <= 0.76 {
                1
            } else {
                2
            };
            ((g0, 0), usize::from(z1 > 0.76))
        }
        _ => {
            let g0 = if z1 <= 0.29 { 0 } else { 2 };
            ((g0, 0), usize::from(z1 > 0.29))
        }
    }
}

/// Reference switch points `(x0, what, z(1))`; `what` is `Some(x)` for the
/// minor action in state `x`, `None` for the major action.
pub const REFERENCE_THRESHOLDS: [(usize, Option<usize>, f64); 5] =
    [(0, Some(0), 0.53), (0, Some(0), 0.76), (1, Some(0), 0.29), (0, None, 0.76), (1, None, 0.29)];

fn random_row(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..d)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.05..1.0) })
        .collect();
    if row.iter().all(|&p| p == 0.0) {
        row[rng.gen_range(0..d)] = 1.0;
    }
    let s: f64 = row.iter().sum();
    row.iter().map(|p| p / s).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|_| random_row(rng, d)).collect()
}

/// Shape of a random model: `(population, states, actions)` per type.
#[derive(Clone, Debug)]
pub struct Shape {
    pub types: Vec<(usize, usize, usize)>,
    pub major: bool,
    pub objective: Objective,
    pub table_cost: bool,
}

pub fn random_model(seed: u64, shape: &Shape) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types: Vec<TypeSpec> = shape
        .types
        .iter()
        .map(|&(n, d, a)| TypeSpec {
            population: n,
            states: (0..d).map(|x| format!("s{x}")).collect(),
            actions: (0..a).map(|u| format!("a{u}")).collect(),
        })
        .collect();
    let per_type = shape
        .types
        .iter()
        .map(|&(_, d, a)| (0..a).map(|_| random_matrix(&mut rng, d)).collect())
        .collect();
    let major = shape.major.then(|| MajorSpec {
        states: vec!["lo".into(), "hi".into()],
        actions: vec!["stay".into(), "move".into()],
        kernel: MajorKernel::Table((0..2).map(|_| random_matrix(&mut rng, 2)).collect()),
    });
    let x0n = if shape.major { 2 } else { 1 };
    let mut spec = ModelSpec {
        types,
        major,
        minor_kernel: MinorKernel::Table(TableKernel { per_type }),
        cost: CostModel::zero(&[], 1, 1),
        objective: shape.objective,
        shape: LatticeShape::PerType,
    };
    let radices = spec.action_radices();
    spec.cost = if shape.table_cost {
        let lattice = spec.lattice().unwrap();
        let g: usize = radices.iter().product();
        let len = lattice.len() * x0n * g * x0n;
        CostModel::table(&spec, (0..len).map(|_| rng.gen_range(-1.0..3.0)).collect()).unwrap()
    } else {
        CostModel::Separable(SeparableCost {
            per_agent: radices.iter().map(|&r| (0..r).map(|_| rng.gen_range(0.0..2.0)).collect()).collect(),
            major: (0..x0n).map(|_| (0..x0n).map(|_| rng.gen_range(0.0..5.0)).collect()).collect(),
        })
    };
    spec.validate().unwrap();
    spec
}

/// The five random models used for dense-DP comparison.
pub fn dense_matrix() -> Vec<(String, ModelSpec)> {
    let discounted = Objective::Discounted { beta: 0.7, tol: 1e-11 };
    let shapes = [
        Shape { types: vec![(3, 2, 2)], major: false, objective: Objective::FiniteHorizon(4), table_cost: true },
        Shape { types: vec![(4, 3, 2)], major: true, objective: discounted, table_cost: false },
        Shape { types: vec![(2, 2, 2), (2, 3, 2)], major: false, objective: Objective::FiniteHorizon(3), table_cost: true },
        Shape { types: vec![(3, 3, 2)], major: true, objective: Objective::FiniteHorizon(5), table_cost: true },
        Shape { types: vec![(1, 2, 3), (3, 2, 2)], major: true, objective: discounted, table_cost: true },
    ];
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("random model {i} {:?}", s.types), random_model(1000 + i as u64, s)))
        .collect()
}
