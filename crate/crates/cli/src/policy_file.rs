//! Reads a `policy.csv` written by `solve` back into a control law.

use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use mfteam::dynamics::Prescription;
use mfteam::simulator::ControlLaw;
use mfteam::{Lattice, MeanField, ModelSpec};

use crate::tables::{action_headers, count_headers};

pub struct PolicyFile {
    lattice: Lattice,
    major_states: usize,
    /// `stages[t - 1][lattice index * major states + major state]`.
    stages: Vec<Vec<Prescription>>,
}

impl PolicyFile {
    pub fn stages(&self) -> usize {
        self.stages.len()
    }

    pub fn load(path: &Path, spec: &ModelSpec) -> Result<PolicyFile> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening policy file {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let finite = header.first().map(String::as_str) == Some("t");
        let counts = count_headers(spec);
        let actions = action_headers(spec);
        let mut expected: Vec<String> = if finite { vec!["t".into()] } else { Vec::new() };
        expected.push("index".into());
        expected.extend(counts.iter().cloned());
        expected.extend(["x0".to_string(), "u0".into()]);
        expected.extend(actions.iter().cloned());
        ensure!(header == expected, "policy file columns {header:?} do not match the model (expected {expected:?})");

        let lattice = spec.lattice()?;
        let major_states = spec.major_state_count();
        let radices = spec.action_radices();
        let per_stage = lattice.len() * major_states;
        let mut stages: Vec<Vec<Option<Prescription>>> = Vec::new();
        let d = counts.len();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let field = |k: usize| -> Result<usize> {
                record[k].parse::<usize>().map_err(|_| anyhow!("line {}: bad integer {:?}", line + 2, &record[k]))
            };
            let mut k = 0;
            let t = if finite {
                k = 1;
                field(0)?
            } else {
                1
            };
            ensure!(t >= 1, "line {}: stage must be positive", line + 2);
            let idx = field(k)?;
            let z: Vec<u32> = (0..d).map(|j| field(k + 1 + j).map(|c| c as u32)).collect::<Result<_>>()?;
            ensure!(
                lattice.try_rank(&z) == Some(idx),
                "line {}: index {idx} does not match counts {z:?}",
                line + 2
            );
            let x0 = field(k + 1 + d)?;
            let u0 = field(k + 2 + d)?;
            let minor: Vec<usize> = (0..d).map(|j| field(k + 3 + d + j)).collect::<Result<_>>()?;
            ensure!(x0 < major_states && u0 < spec.major_action_count(), "line {}: major entry out of range", line + 2);
            ensure!(minor.iter().zip(&radices).all(|(a, r)| a < r), "line {}: action out of range", line + 2);
            if stages.len() < t {
                stages.resize_with(t, || vec![None; per_stage]);
            }
            stages[t - 1][idx * major_states + x0] = Some(Prescription::new(minor, u0));
        }
        ensure!(!stages.is_empty(), "policy file {} has no rows", path.display());
        let stages = stages
            .into_iter()
            .enumerate()
            .map(|(t, s)| {
                s.into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| anyhow!("policy file is missing rows for stage {}", t + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        if !finite && stages.len() != 1 {
            bail!("stationary policy file has more than one stage");
        }
        Ok(PolicyFile { lattice, major_states, stages })
    }
}

impl ControlLaw for PolicyFile {
    fn prescribe(&self, t: usize, z: &MeanField, major_state: usize) -> mfteam::Result<Prescription> {
        let stage = if self.stages.len() == 1 { 0 } else { t - 1 };
        let table = self
            .stages
            .get(stage)
            .ok_or_else(|| mfteam::Error::Lookup(format!("no policy for stage {t}")))?;
        let idx = self.lattice.rank(z.counts())?;
        Ok(table[idx * self.major_states + major_state].clone())
    }
}
