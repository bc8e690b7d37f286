//! Exact ingredients of the coordinated system.
//!
//! Under a prescription every agent moves independently, so the successor
//! count vector is a sum of independent multinomials, one per occupied
//! source state. The law is built one agent at a time: the distribution over
//! partial count vectors of the agents processed so far is pushed through the
//! next agent's row. Each population block is convolved separately because
//! agents never leave their block.

use crate::error::{Error, Result};
use crate::lattice::{next_colex, CompositionLattice, Lattice, MeanField};
use crate::model::{ModelSpec, StageView};

/// Tolerance on the total mass of a successor distribution before it is
/// renormalized.
pub const KERNEL_MASS_TOLERANCE: f64 = 1e-10;

/// One action per augmented minor state, plus the major action.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prescription {
    pub minor: Vec<usize>,
    pub major: usize,
}

impl Prescription {
    pub fn new(minor: Vec<usize>, major: usize) -> Self {
        Prescription { minor, major }
    }

    /// Applies the prescription to a local state.
    pub fn action(&self, state: usize) -> usize {
        self.minor[state]
    }
}

/// Joint successor law for fixed `(z, x0, gamma, u0)`; the joint mass at
/// `(z', x0')` is `meanfield[z'] * major[x0']`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    /// `(lattice index, probability)` sorted by index, zero entries dropped.
    pub meanfield: Vec<(usize, f64)>,
    pub major: Vec<f64>,
}

impl KernelMatrix {
    pub fn prob(&self, lattice_index: usize, major_state: usize) -> f64 {
        let pz = self
            .meanfield
            .binary_search_by_key(&lattice_index, |&(i, _)| i)
            .map(|k| self.meanfield[k].1)
            .unwrap_or(0.0);
        pz * self.major[major_state]
    }

    /// Iterates `(lattice index, major state, probability)` over the support.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.meanfield.iter().flat_map(move |&(z, pz)| {
            self.major
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(move |(x0, &p)| (z, x0, pz * p))
        })
    }
}

/// Kernel and cost evaluation for one model on one lattice.
#[derive(Debug)]
pub struct Dynamics<'a> {
    spec: &'a ModelSpec,
    lattice: Lattice,
    // per block: composition lattices for partial populations 0..=n_b
    partial: Vec<Vec<CompositionLattice>>,
}

impl<'a> Dynamics<'a> {
    pub fn new(spec: &'a ModelSpec) -> Result<Self> {
        Dynamics::with_lattice(spec, spec.lattice()?)
    }

    pub fn with_lattice(spec: &'a ModelSpec, lattice: Lattice) -> Result<Self> {
        if lattice.states() != spec.state_count() {
            return Err(Error::Model(format!(
                "lattice has {} states, model has {}",
                lattice.states(),
                spec.state_count()
            )));
        }
        let partial = lattice
            .blocks()
            .iter()
            .map(|b| (0..=b.population()).map(|m| CompositionLattice::new(m, b.states())).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        Ok(Dynamics { spec, lattice, partial })
    }

    pub fn spec(&self) -> &'a ModelSpec {
        self.spec
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Rows over augmented states for every occupied source state; `None`
    /// where the state is empty.
    pub fn minor_step_rows(
        &self,
        t: usize,
        z: &MeanField,
        major_state: usize,
        gamma: &Prescription,
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let view = StageView { t, counts: z.counts(), major_state };
        let d = self.spec.state_count();
        (0..d)
            .map(|x| {
                if z.counts()[x] == 0 {
                    return Ok(None);
                }
                let local = self.spec.minor_row(&view, x, gamma.minor[x])?;
                let offset = self.spec.type_offset(self.spec.augmented(x).type_id);
                let mut row = vec![0.0; d];
                row[offset..offset + local.len()].copy_from_slice(&local);
                Ok(Some(row))
            })
            .collect()
    }

    /// Exact law of the successor mean-field.
    pub fn meanfield_kernel(
        &self,
        t: usize,
        z: &MeanField,
        major_state: usize,
        gamma: &Prescription,
    ) -> Result<Vec<(usize, f64)>> {
        let rows = self.minor_step_rows(t, z, major_state, gamma)?;
        let mut joint: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (b, block) in self.lattice.blocks().iter().enumerate() {
            let range = block.range();
            let mut sources = Vec::new();
            for x in range.clone() {
                if let Some(row) = &rows[x] {
                    sources.push((z.counts()[x], &row[range.clone()]));
                }
            }
            let dist = self.convolve_block(b, &sources)?;
            let stride = self.lattice.stride(b);
            let mut next = Vec::with_capacity(joint.len() * dist.len());
            for &(j, pj) in &dist {
                for &(i, pi) in &joint {
                    next.push((i + j * stride, pi * pj));
                }
            }
            joint = next;
        }
        joint.sort_unstable_by_key(|&(i, _)| i);
        let mass: f64 = joint.iter().map(|&(_, p)| p).sum();
        if (mass - 1.0).abs() > KERNEL_MASS_TOLERANCE {
            return Err(Error::Stochasticity { context: format!("mean-field kernel at {:?}", z.counts()), sum: mass });
        }
        if mass != 1.0 {
            for e in joint.iter_mut() {
                e.1 /= mass;
            }
        }
        Ok(joint)
    }

    /// Distribution over block-local compositions, sparse and sorted.
    fn convolve_block(&self, block: usize, sources: &[(u32, &[f64])]) -> Result<Vec<(usize, f64)>> {
        let lattices = &self.partial[block];
        let d = lattices[0].states();
        let mut dist = vec![1.0];
        let mut m = 0usize;
        let mut counts = vec![0u32; d];
        for &(agents, row) in sources {
            let support: Vec<(usize, f64)> =
                row.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect();
            for _ in 0..agents {
                let next_lattice = &lattices[m + 1];
                let mut next = vec![0.0; next_lattice.len()];
                counts.iter_mut().for_each(|c| *c = 0);
                counts[0] = m as u32;
                for &p in dist.iter() {
                    if p > 0.0 {
                        for &(y, py) in &support {
                            counts[y] += 1;
                            next[next_lattice.rank_unchecked(&counts)] += p * py;
                            counts[y] -= 1;
                        }
                    }
                    next_colex(&mut counts);
                }
                dist = next;
                m += 1;
            }
        }
        let full = &lattices[lattices.len() - 1];
        if m != full.population() {
            return Err(Error::Population(format!(
                "block {block} holds {m} agents, lattice expects {}",
                full.population()
            )));
        }
        Ok(dist.into_iter().enumerate().filter(|&(_, p)| p > 0.0).collect())
    }

    pub fn major_row(&self, t: usize, z: &MeanField, major_state: usize, major_action: usize) -> Result<Vec<f64>> {
        let view = StageView { t, counts: z.counts(), major_state };
        self.spec.major_row(&view, major_action)
    }

    pub fn joint_kernel(
        &self,
        t: usize,
        z: &MeanField,
        major_state: usize,
        gamma: &Prescription,
    ) -> Result<KernelMatrix> {
        Ok(KernelMatrix {
            meanfield: self.meanfield_kernel(t, z, major_state, gamma)?,
            major: self.major_row(t, z, major_state, gamma.major)?,
        })
    }

    pub fn expected_stage_cost(&self, t: usize, z: &MeanField, major_state: usize, gamma: &Prescription) -> Result<f64> {
        let view = StageView { t, counts: z.counts(), major_state };
        self.spec.stage_cost(&view, &gamma.minor, gamma.major)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_forced_mix_kernel, CostModel, MajorKernel, MajorSpec, MinorKernel, Objective, TableKernel, TypeSpec,
        LatticeShape, CapacityServiceCost,
    };

    fn single_type(n: usize, kernel: MinorKernel, d: usize, actions: usize) -> ModelSpec {
        let radices = vec![actions; d];
        ModelSpec {
            types: vec![TypeSpec {
                population: n,
                states: (0..d).map(|i| i.to_string()).collect(),
                actions: (0..actions).map(|i| i.to_string()).collect(),
            }],
            major: None,
            minor_kernel: kernel,
            cost: CostModel::zero(&radices, 1, 1),
            objective: Objective::FiniteHorizon(1),
            shape: LatticeShape::PerType,
        }
    }

    fn service(n: usize) -> ModelSpec {
        let q = vec![vec![0.6, 0.4], vec![0.3, 0.7]];
        let mut spec = single_type(n, build_forced_mix_kernel(q, vec![0.1, 0.1]).unwrap(), 2, 3);
        spec.major = Some(MajorSpec {
            states: vec!["50".into(), "100".into()],
            actions: vec!["50".into(), "100".into()],
            kernel: MajorKernel::DeterministicSet { target: vec![0, 1] },
        });
        spec.cost = CostModel::CapacityService(CapacityServiceCost {
            state_capacity: vec![50.0, 100.0],
            action_capacity: vec![50.0, 100.0],
            capacity_cost: vec![100.0, 300.0],
            a: 2.0,
            b: 5.0,
            c: 50.0,
            forcing_cost: vec![0.0, 4.0, 1.0],
            active_state: 1,
        });
        spec
    }

    fn identity(d: usize) -> MinorKernel {
        let eye: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        MinorKernel::Table(TableKernel { per_type: vec![vec![eye]] })
    }

    #[test]
    fn identity_rows_are_unit_vectors() {
        let spec = single_type(3, identity(3), 3, 1);
        let dy = Dynamics::new(&spec).unwrap();
        let z = MeanField::new(vec![1, 0, 2]);
        let rows = dy.minor_step_rows(1, &z, 0, &Prescription::new(vec![0; 3], 0)).unwrap();
        assert_eq!(rows[0], Some(vec![1.0, 0.0, 0.0]));
        assert_eq!(rows[1], None);
        assert_eq!(rows[2], Some(vec![0.0, 0.0, 1.0]));
        let k = dy.meanfield_kernel(1, &z, 0, &Prescription::new(vec![0; 3], 0)).unwrap();
        assert_eq!(k, vec![(dy.lattice().rank(&[1, 0, 2]).unwrap(), 1.0)]);
    }

    #[test]
    fn service_rows() {
        let spec = service(10);
        let dy = Dynamics::new(&spec).unwrap();
        let z = MeanField::new(vec![4, 6]);
        let free = dy.minor_step_rows(1, &z, 1, &Prescription::new(vec![0, 0], 0)).unwrap();
        assert_eq!(free[0], Some(vec![0.6, 0.4]));
        let forced = dy.minor_step_rows(1, &z, 1, &Prescription::new(vec![1, 0], 0)).unwrap();
        let row = forced[0].as_ref().unwrap();
        assert!((row[0] - 0.96).abs() < 1e-15 && (row[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn two_agents_free_dynamics() {
        let spec = service(2);
        let dy = Dynamics::new(&spec).unwrap();
        let k = dy
            .meanfield_kernel(1, &MeanField::new(vec![2, 0]), 0, &Prescription::new(vec![0, 0], 0))
            .unwrap();
        let expect = [(0, 0.36), (1, 0.48), (2, 0.16)];
        assert_eq!(k.len(), 3);
        for ((i, p), (j, q)) in k.iter().zip(expect) {
            assert_eq!(*i, j);
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn major_follows_its_action() {
        let spec = service(4);
        let dy = Dynamics::new(&spec).unwrap();
        let z = MeanField::new(vec![2, 2]);
        let k = dy.joint_kernel(1, &z, 0, &Prescription::new(vec![0, 2], 1)).unwrap();
        assert_eq!(k.major, vec![0.0, 1.0]);
        let mass: f64 = k.iter().map(|(_, _, p)| p).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(k.iter().all(|(_, x0, _)| x0 == 1));
    }

    #[test]
    fn sentinel_major_reduces_to_meanfield_kernel() {
        let spec = single_type(3, identity(2), 2, 1);
        let dy = Dynamics::new(&spec).unwrap();
        let z = MeanField::new(vec![1, 2]);
        let g = Prescription::new(vec![0, 0], 0);
        let k = dy.joint_kernel(1, &z, 0, &g).unwrap();
        assert_eq!(k.major, vec![1.0]);
        assert_eq!(k.meanfield, dy.meanfield_kernel(1, &z, 0, &g).unwrap());
    }

    #[test]
    fn capacity_service_stage_costs() {
        let spec = service(100);
        let dy = Dynamics::new(&spec).unwrap();
        // within capacity: 100 + 0 - 5 * 50
        let c = dy
            .expected_stage_cost(1, &MeanField::new(vec![50, 50]), 0, &Prescription::new(vec![0, 0], 0))
            .unwrap();
        assert_eq!(c, -150.0);
        // over capacity: 300 + 2 * 50 - (5 * 50 - 50 * 10)
        let c = dy
            .expected_stage_cost(1, &MeanField::new(vec![40, 60]), 0, &Prescription::new(vec![0, 0], 1))
            .unwrap();
        assert_eq!(c, 650.0);
        // forcing costs scale with occupancy
        let c = dy
            .expected_stage_cost(1, &MeanField::new(vec![40, 60]), 0, &Prescription::new(vec![1, 2], 1))
            .unwrap();
        assert_eq!(c, 650.0 + 40.0 * 4.0 + 60.0 * 1.0);
    }

    #[test]
    fn zero_cost() {
        let spec = single_type(3, identity(2), 2, 2);
        let dy = Dynamics::new(&spec).unwrap();
        for z in dy.lattice().points() {
            for a in 0..2 {
                for b in 0..2 {
                    assert_eq!(dy.expected_stage_cost(1, &z, 0, &Prescription::new(vec![a, b], 0)).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_agent_kernel_is_its_row() {
        let q = vec![vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8], vec![0.6, 0.0, 0.4]];
        let spec = single_type(1, MinorKernel::Table(TableKernel { per_type: vec![vec![q.clone()]] }), 3, 1);
        let dy = Dynamics::new(&spec).unwrap();
        for x in 0..3 {
            let mut c = vec![0u32; 3];
            c[x] = 1;
            let k = dy.meanfield_kernel(1, &MeanField::new(c), 0, &Prescription::new(vec![0; 3], 0)).unwrap();
            for (y, &p) in q[x].iter().enumerate() {
                let mut e = vec![0u32; 3];
                e[y] = 1;
                let idx = dy.lattice().rank(&e).unwrap();
                let got = k.iter().find(|&&(i, _)| i == idx).map_or(0.0, |&(_, p)| p);
                assert!((got - p).abs() < 1e-15);
            }
        }
    }
}
