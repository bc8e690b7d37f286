//! Solved tables in a layout shared by the direct and embedded solves, and
//! their CSV and text renderings.

use std::path::Path;

use anyhow::{Context, Result};
use mfteam::dynamics::Prescription;
use mfteam::reductions::Embedding;
use mfteam::{Lattice, ModelSpec, Solution, ValueTable};

/// Values and prescriptions per stage. A stationary solve has one stage.
pub struct Tables {
    pub finite: bool,
    pub values: Vec<ValueTable>,
    /// `policies[stage][lattice index * major states + major state]`.
    pub policies: Vec<Vec<Prescription>>,
}

impl Tables {
    pub fn from_solution(solution: &Solution, lattice: &Lattice, major_states: usize) -> Tables {
        let flatten = |p: &mfteam::PolicyTable| {
            (0..lattice.len())
                .flat_map(|i| (0..major_states).map(move |x0| (i, x0)))
                .map(|(i, x0)| p.prescription(i, x0))
                .collect()
        };
        match solution {
            Solution::Finite(f) => Tables {
                finite: true,
                values: f.values.clone(),
                policies: f.policies.iter().map(flatten).collect(),
            },
            Solution::Discounted(d) => Tables { finite: false, values: vec![d.value.clone()], policies: vec![flatten(&d.policy)] },
        }
    }

    /// Reads an embedded solve back into the original (z, x0) layout.
    pub fn from_embedding(solution: &Solution, e: &Embedding, lattice: &Lattice, major_states: usize) -> Tables {
        let c = &e.correspondence;
        let convert = |p: &mfteam::PolicyTable| {
            let mut out = Vec::with_capacity(lattice.len() * major_states);
            for i in 0..lattice.len() {
                for x0 in 0..major_states {
                    out.push(Prescription::new(c.minor_prescription(p, i, x0), c.major_action(p, i, x0)));
                }
            }
            out
        };
        match solution {
            Solution::Finite(f) => Tables {
                finite: true,
                values: f.values.iter().map(|v| c.values_to_major_minor(v)).collect(),
                policies: f.policies.iter().map(convert).collect(),
            },
            Solution::Discounted(d) => Tables {
                finite: false,
                values: vec![c.values_to_major_minor(&d.value)],
                policies: vec![convert(&d.policy)],
            },
        }
    }
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column names for the count vector, qualified by type when there are several.
pub fn count_headers(spec: &ModelSpec) -> Vec<String> {
    let typed = spec.types.len() > 1;
    spec.types
        .iter()
        .enumerate()
        .flat_map(|(k, t)| {
            t.states.iter().map(move |s| if typed { format!("n[{k}:{s}]") } else { format!("n[{s}]") })
        })
        .collect()
}

pub fn action_headers(spec: &ModelSpec) -> Vec<String> {
    let typed = spec.types.len() > 1;
    spec.types
        .iter()
        .enumerate()
        .flat_map(|(k, t)| {
            t.states.iter().map(move |s| if typed { format!("g[{k}:{s}]") } else { format!("g[{s}]") })
        })
        .collect()
}

fn stage_prefix(finite: bool, t: usize) -> Vec<String> {
    if finite {
        vec![t.to_string()]
    } else {
        Vec::new()
    }
}

fn row_prefix(finite: bool, t: usize, idx: usize, counts: &[u32]) -> Vec<String> {
    let mut row = stage_prefix(finite, t);
    row.push(idx.to_string());
    row.extend(counts.iter().map(|c| c.to_string()));
    row
}

fn header(finite: bool, spec: &ModelSpec, tail: &[String]) -> Vec<String> {
    let mut h = if finite { vec!["t".to_string()] } else { Vec::new() };
    h.push("index".into());
    h.extend(count_headers(spec));
    h.push("x0".into());
    h.extend_from_slice(tail);
    h
}

pub fn write_values(path: &Path, spec: &ModelSpec, lattice: &Lattice, tables: &Tables) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header(tables.finite, spec, &["V".into()]))?;
    for (stage, values) in tables.values.iter().enumerate() {
        for (i, z) in lattice.points().enumerate() {
            for x0 in 0..values.major_states() {
                let mut row = row_prefix(tables.finite, stage + 1, i, z.counts());
                row.push(x0.to_string());
                row.push(fmt_f64(values.get(i, x0)));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_policy(path: &Path, spec: &ModelSpec, lattice: &Lattice, tables: &Tables) -> Result<()> {
    let major_states = spec.major_state_count();
    let mut tail = vec!["u0".to_string()];
    tail.extend(action_headers(spec));
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header(tables.finite, spec, &tail))?;
    for (stage, policy) in tables.policies.iter().enumerate() {
        for (i, z) in lattice.points().enumerate() {
            for x0 in 0..major_states {
                let p = &policy[i * major_states + x0];
                let mut row = row_prefix(tables.finite, stage + 1, i, z.counts());
                row.push(x0.to_string());
                row.push(p.major.to_string());
                row.extend(p.minor.iter().map(|a| a.to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format tables: one row per (stage, point, major state) for values
/// and one row per policy component for actions, each with the fractions.
pub fn write_plot_data(dir: &Path, spec: &ModelSpec, lattice: &Lattice, tables: &Tables) -> Result<Vec<std::path::PathBuf>> {
    let major_states = spec.major_state_count();
    let fractions: Vec<String> = count_headers(spec).iter().map(|h| format!("z{}", &h[1..])).collect();
    let values_path = dir.join("plot_values.csv");
    let mut w = csv::Writer::from_path(&values_path)?;
    let mut h = vec!["t".to_string(), "index".into(), "x0".into()];
    h.extend(fractions.iter().cloned());
    h.push("V".into());
    w.write_record(&h)?;
    for (stage, values) in tables.values.iter().enumerate() {
        for (i, z) in lattice.points().enumerate() {
            for x0 in 0..major_states {
                let mut row = vec![(stage + 1).to_string(), i.to_string(), x0.to_string()];
                row.extend(z.fractions().iter().map(|f| fmt_f64(*f)));
                row.push(fmt_f64(values.get(i, x0)));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;

    let policy_path = dir.join("plot_policy.csv");
    let mut w = csv::Writer::from_path(&policy_path)?;
    let mut h = vec!["t".to_string(), "index".into(), "x0".into()];
    h.extend(fractions);
    h.extend(["component".to_string(), "action".into()]);
    w.write_record(&h)?;
    let components: Vec<String> = std::iter::once("u0".to_string()).chain(action_headers(spec)).collect();
    for (stage, policy) in tables.policies.iter().enumerate() {
        for (i, z) in lattice.points().enumerate() {
            let fr: Vec<String> = z.fractions().iter().map(|f| fmt_f64(*f)).collect();
            for x0 in 0..major_states {
                let p = &policy[i * major_states + x0];
                let actions = std::iter::once(p.major).chain(p.minor.iter().copied());
                for (name, a) in components.iter().zip(actions) {
                    let mut row = vec![(stage + 1).to_string(), i.to_string(), x0.to_string()];
                    row.extend(fr.iter().cloned());
                    row.push(name.clone());
                    row.push(a.to_string());
                    w.write_record(&row)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(vec![values_path, policy_path])
}

/// Maximal runs of constant action along z(1) at fixed (x0, component),
/// for single-type models with two minor states. Points where the
/// component's state is empty do not break a run.
pub fn threshold_summary(spec: &ModelSpec, lattice: &Lattice, tables: &Tables) -> Option<Vec<String>> {
    if spec.types.len() != 1 || spec.types[0].states.len() != 2 {
        return None;
    }
    let ty = &spec.types[0];
    let n = ty.population;
    let major_states = spec.major_state_count();
    let frac = |m: usize| format!("{}", m as f64 / n as f64);
    let mut lines = Vec::new();
    for (stage, policy) in tables.policies.iter().enumerate() {
        for x0 in 0..major_states {
            let mut components: Vec<Option<usize>> = vec![Some(0), Some(1)];
            if spec.major.is_some() {
                components.push(None);
            }
            for c in components {
                let mut runs: Vec<(usize, usize)> = Vec::new();
                for m in 0..=n {
                    let occupied = match c {
                        Some(0) => m < n,
                        Some(_) => m > 0,
                        None => true,
                    };
                    if !occupied {
                        continue;
                    }
                    let idx = lattice.rank(&[(n - m) as u32, m as u32]).ok()?;
                    let p = &policy[idx * major_states + x0];
                    let a = c.map_or(p.major, |x| p.minor[x]);
                    match runs.last_mut() {
                        Some(last) if last.1 == a => last.0 = m,
                        _ => runs.push((m, a)),
                    }
                }
                if let Some(last) = runs.last_mut() {
                    last.0 = n;
                }
                let label = |a: usize| match c {
                    None => spec.major.as_ref().map(|mj| mj.actions[a].clone()).unwrap_or_default(),
                    Some(_) => ty.actions[a].clone(),
                };
                let mut parts = Vec::new();
                let mut prev: Option<usize> = None;
                for &(end, a) in &runs {
                    let interval = match prev {
                        None => format!("[0, {}]", frac(end)),
                        Some(p) => format!("({}, {}]", frac(p), frac(end)),
                    };
                    parts.push(format!("{} on {interval}", label(a)));
                    prev = Some(end);
                }
                let mut head = Vec::new();
                if tables.finite {
                    head.push(format!("t={}", stage + 1));
                }
                if let Some(mj) = &spec.major {
                    head.push(format!("x⁰={}", mj.states[x0]));
                }
                head.push(match c {
                    Some(x) => format!("x={}", ty.states[x]),
                    None => "u⁰".to_string(),
                });
                lines.push(format!("{}: action {}", head.join(", "), parts.join(", ")));
            }
        }
    }
    Some(lines)
}
