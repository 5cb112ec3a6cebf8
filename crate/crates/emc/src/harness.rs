//! Whole-run helpers: run a config, FOM replicas, side-by-side comparison.

use std::fmt::Write as _;
use std::time::Instant;

use crate::config::RunConfig;
use crate::driver::{Simulation, Snapshot};
use crate::error::{ConfigError, Error};
use crate::mesh::Mesh;

pub struct RunOutcome {
    pub sim: Simulation,
    pub snapshots: Vec<Snapshot>,
    /// Wall time of the stepping loop in seconds.
    pub wall: f64,
}

impl RunOutcome {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("run always emits the initial snapshot")
    }
}

pub fn run_config(cfg: &RunConfig) -> Result<RunOutcome, Error> {
    let problem = cfg.problem()?;
    let initial = cfg.initial_field(problem.cells());
    let start = Instant::now();
    let mut sim = Simulation::new(problem, cfg.settings(), initial)?;
    let mut snapshots = Vec::new();
    sim.run(|s| snapshots.push(s.clone()))?;
    Ok(RunOutcome { sim, snapshots, wall: start.elapsed().as_secs_f64() })
}

/// FOM = 1/(Var·t); zero variance maps to the `f64::INFINITY` sentinel.
pub fn figure_of_merit(variance: f64, seconds: f64) -> f64 {
    if variance * seconds == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (variance * seconds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FomReport {
    pub replicas: usize,
    pub var_tm: Vec<f64>,
    pub var_tr: Vec<f64>,
    /// Mean wall time of one replica.
    pub wall: f64,
    pub mean_var_tm: f64,
    pub mean_var_tr: f64,
    pub fom_tm: f64,
    pub fom_tr: f64,
}

/// Sample variance per cell over replicas (rows).
pub fn cell_variance(samples: &[Vec<f64>]) -> Vec<f64> {
    let r = samples.len() as f64;
    let n = samples.first().map_or(0, Vec::len);
    // Deviations from the first sample, so identical samples give exactly 0.
    (0..n)
        .map(|i| {
            let s0 = samples[0][i];
            let mean = samples.iter().map(|s| s[i] - s0).sum::<f64>() / r;
            samples.iter().map(|s| (s[i] - s0 - mean).powi(2)).sum::<f64>() / (r - 1.0)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Runs `replicas` copies with seeds `seed, seed+1, ...` (or all with the
/// same seed when `same_seed`), and reports per-cell variance at t_end.
pub fn fom_harness(cfg: &RunConfig, replicas: usize, same_seed: bool) -> Result<FomReport, Error> {
    if replicas < 2 {
        return Err(ConfigError::Invalid(format!("fom needs at least 2 replicas, got {replicas}")).into());
    }
    let mut tm = Vec::with_capacity(replicas);
    let mut tr = Vec::with_capacity(replicas);
    let mut wall = 0.0;
    for r in 0..replicas {
        let mut c = cfg.clone();
        if !same_seed {
            c.seed = cfg.seed.wrapping_add(r as u64);
        }
        let out = run_config(&c)?;
        wall += out.wall;
        tm.push(out.last().temperature.clone());
        tr.push(out.last().radiation_temperature.clone());
    }
    let wall = wall / replicas as f64;
    let (var_tm, var_tr) = (cell_variance(&tm), cell_variance(&tr));
    let (mean_var_tm, mean_var_tr) = (mean(&var_tm), mean(&var_tr));
    Ok(FomReport {
        replicas,
        fom_tm: figure_of_merit(mean_var_tm, wall),
        fom_tr: figure_of_merit(mean_var_tr, wall),
        var_tm,
        var_tr,
        wall,
        mean_var_tm,
        mean_var_tr,
    })
}

impl FomReport {
    /// `cell,var_Tm,var_Tr` rows, then a `summary` row holding the mean
    /// variances, and `wall_seconds` and `fom` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell,var_Tm,var_Tr\n");
        for (i, (a, b)) in self.var_tm.iter().zip(&self.var_tr).enumerate() {
            writeln!(out, "{i},{a},{b}").expect("string write");
        }
        writeln!(out, "summary,{},{}", self.mean_var_tm, self.mean_var_tr).expect("string write");
        writeln!(out, "wall_seconds,{},{}", self.wall, self.wall).expect("string write");
        writeln!(out, "fom,{},{}", self.fom_tm, self.fom_tr).expect("string write");
        out
    }
}

/// Volume-weighted mean |a − b|.
pub fn l1_difference(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    let total: f64 = mesh.volumes().iter().sum();
    a.iter().zip(b).zip(mesh.volumes()).map(|((x, y), v)| (x - y).abs() * v).sum::<f64>() / total
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub wall_a: f64,
    pub wall_b: f64,
    pub l1_tm: f64,
    pub l1_tr: f64,
}

pub fn compare(a: &RunConfig, b: &RunConfig) -> Result<Comparison, Error> {
    let ra = run_config(a)?;
    let rb = run_config(b)?;
    if ra.sim.problem.mesh != rb.sim.problem.mesh {
        return Err(ConfigError::Invalid("compare needs both configs on the same mesh".into()).into());
    }
    let mesh = &ra.sim.problem.mesh;
    Ok(Comparison {
        wall_a: ra.wall,
        wall_b: rb.wall,
        l1_tm: l1_difference(mesh, &ra.last().temperature, &rb.last().temperature),
        l1_tr: l1_difference(mesh, &ra.last().radiation_temperature, &rb.last().radiation_temperature),
    })
}

/// Position of a 1D heating front driven from the left: the center of the
/// first cell, scanning away from the source, whose T does not exceed
/// `threshold`. Returns the left edge if no cell is hot and the right edge
/// if every cell is.
pub fn wavefront(mesh: &Mesh, temps: &[f64], threshold: f64) -> f64 {
    match temps.iter().position(|&t| t <= threshold) {
        Some(i) => mesh.center(i)[0],
        None => {
            let last = mesh.num_cells() - 1;
            mesh.origin(last)[0] + mesh.width(last)[0]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fom_definition() {
        assert_eq!(figure_of_merit(0.5, 2.0), 1.0);
        assert_eq!(figure_of_merit(0.0, 3.0), f64::INFINITY);
    }

    #[test]
    fn variance_of_constant_samples_is_zero() {
        let v = cell_variance(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(v, vec![0.0, 0.0]);
        let v = cell_variance(&[vec![1.0], vec![3.0]]);
        assert_eq!(v, vec![2.0]);
    }
}
