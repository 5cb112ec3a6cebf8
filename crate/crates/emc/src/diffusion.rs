//! Implicit equilibrium-diffusion reference solver.
//!
//! Solves a ∂ₜT⁴ + C_v ∂ₜT = ∇·(ac/(3σ_R)) ∇T⁴ with a cell-centred
//! finite-volume discretization and backward Euler in time.

use serde::{Deserialize, Serialize};

use crate::error::{PhysicsError, SolverError};
use crate::linalg::CsrMatrix;
use crate::macro_solver::{solve_prediction, CorrectionEquation, PicardSettings, TEMPERATURE_FLOOR};
use crate::mesh::{harmonic_interface_opacity, interface_temperature, BoundaryKind};
use crate::physics::{group_opacities, rosseland_from_weights, PlanckTable};
use crate::problem::Problem;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX: usize = 200;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionScheme {
    /// Backward Euler solved by Newton with lagged conductivity.
    #[default]
    Implicit,
    /// Quasilinear prediction plus per-cell nonlinear correction, iterated
    /// to a fixed point.
    Limit,
}

/// Per-cell material data at one temperature.
struct CellData {
    /// Σ_g b_g
    b_sum: Vec<f64>,
    /// Σ_g of the derivative coefficients.
    d_sum: Vec<f64>,
    sigma: Vec<f64>,
}

fn cell_data(problem: &Problem, temps: &[f64]) -> Result<CellData, SolverError> {
    let groups = problem.groups();
    let n = problem.cells();
    let mut sigma = vec![0.0; n * groups];
    let mut b_sum = vec![0.0; n];
    let mut d_sum = vec![0.0; n];
    let mut table = PlanckTable::new(&problem.grid);
    for i in 0..n {
        let t = temps[i].max(TEMPERATURE_FLOOR);
        group_opacities(
            &problem.material(i).opacity,
            &problem.grid,
            t,
            &mut sigma[i * groups..(i + 1) * groups],
        )?;
        table.fill(&problem.grid, t)?;
        b_sum[i] = table.b.iter().sum();
        d_sum[i] = table.dcoef.iter().sum();
    }
    Ok(CellData { b_sum, d_sum, sigma })
}

/// Σ_g κ_g/(3σ_g) written as (Σ_g κ_g)/(3σ_R).
fn rosseland_conductivity(sigma: &[f64], weights: &[f64]) -> Result<f64, SolverError> {
    let sigma_r = rosseland_from_weights(sigma, weights)?;
    Ok(weights.iter().sum::<f64>() / (3.0 * sigma_r))
}

/// Face conductivities; zero on reflective faces. Boundary faces hold an
/// effective value whose flux κ_f(φ_b − φ_i)/dist equals the Marshak flux.
pub fn face_conductivity(problem: &Problem, temps: &[f64]) -> Result<Vec<f64>, SolverError> {
    let groups = problem.groups();
    let mesh = &problem.mesh;
    let data = cell_data(problem, temps)?;
    let mut table = PlanckTable::new(&problem.grid);
    let mut sig = vec![0.0; groups];
    let mut out = vec![0.0; mesh.num_faces()];
    for (f, face) in mesh.faces().iter().enumerate() {
        match (face.lower, face.upper) {
            (Some(i), Some(j)) => {
                let t_ij = interface_temperature(temps[i], temps[j], face.half_lower, face.half_upper);
                table.fill(&problem.grid, t_ij.max(TEMPERATURE_FLOOR))?;
                for g in 0..groups {
                    sig[g] = harmonic_interface_opacity(
                        data.sigma[i * groups + g],
                        data.sigma[j * groups + g],
                        face.half_lower,
                        face.half_upper,
                    )
                    .map_err(|_| PhysicsError::Domain { quantity: "interface opacity", value: 0.0 })?;
                }
                out[f] = rosseland_conductivity(&sig, &table.dcoef)?;
            }
            _ => {
                let side = face.side.expect("boundary face");
                if problem.boundaries.get(side).is_reflective() {
                    continue;
                }
                let k = face.interior_cell();
                table.fill(&problem.grid, temps[k].max(TEMPERATURE_FLOOR))?;
                let kappa = rosseland_conductivity(&data.sigma[k * groups..(k + 1) * groups], &table.dcoef)?;
                // Marshak: F = 2κ(φ_b − φ_k)/(Δ + 4κ) with Δ = 2·dist.
                let width = 2.0 * face.distance();
                out[f] = 2.0 * kappa * face.distance() / (width + 4.0 * kappa);
            }
        }
    }
    Ok(out)
}

fn boundary_phi(problem: &Problem, kind: BoundaryKind) -> f64 {
    problem.consts.phi(kind.inflow_temperature().unwrap_or(0.0))
}

/// Diffusive inflow per cell, Σ_f κ_f |S| (φ_nb − φ_i)/dist.
fn diffusive_inflow(problem: &Problem, kappa: &[f64], phi: &[f64]) -> Vec<f64> {
    let mesh = &problem.mesh;
    let mut out = vec![0.0; problem.cells()];
    for (f, face) in mesh.faces().iter().enumerate() {
        if kappa[f] == 0.0 {
            continue;
        }
        let w = kappa[f] * face.area / face.distance();
        match (face.lower, face.upper) {
            (Some(i), Some(j)) => {
                let flow = w * (phi[j] - phi[i]);
                out[i] += flow;
                out[j] -= flow;
            }
            _ => {
                let k = face.interior_cell();
                let pb = boundary_phi(problem, problem.boundaries.get(face.side.expect("boundary")));
                out[k] += w * (pb - phi[k]);
            }
        }
    }
    out
}

/// Matrix of −∇·κ∇ acting on φ with per-column scaling `scale_j`
/// (dφ_j/dx_j); boundary values go to `rhs`.
fn diffusion_matrix(problem: &Problem, kappa: &[f64], diag_base: &[f64], scale: &[f64]) -> CsrMatrix {
    let mesh = &problem.mesh;
    let n = problem.cells();
    let mut m = CsrMatrix::with_rows(n);
    for i in 0..n {
        let mut diag = diag_base[i];
        for (f, _) in mesh.cell_faces(i) {
            if kappa[f] == 0.0 {
                continue;
            }
            let face = mesh.face(f);
            let w = kappa[f] * face.area / face.distance();
            diag += w * scale[i];
            if let Some(j) = mesh.neighbor(i, f) {
                m.push(j, -w * scale[j]);
            }
        }
        m.diag[i] = diag;
        m.finish_row();
    }
    m
}

/// Boundary contribution Σ κ|S|φ_b/dist per cell.
fn boundary_source(problem: &Problem, kappa: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; problem.cells()];
    for (f, face) in problem.mesh.boundary_faces() {
        if kappa[f] == 0.0 {
            continue;
        }
        let pb = boundary_phi(problem, problem.boundaries.get(face.side.expect("boundary")));
        out[face.interior_cell()] += kappa[f] * face.area / face.distance() * pb;
    }
    out
}

/// Total energy Σ ΔV (E_r + C_v T) with E_r = Σ_g b_g φ/c.
pub fn total_energy(problem: &Problem, temps: &[f64]) -> Result<f64, SolverError> {
    let data = cell_data(problem, temps)?;
    let c = problem.consts.c;
    Ok((0..problem.cells())
        .map(|i| {
            let e_r = data.b_sum[i] * problem.consts.phi(temps[i]) / c;
            problem.mesh.volume(i) * (e_r + problem.cv(i) * temps[i])
        })
        .sum())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiffusionOutcome {
    pub temperature: Vec<f64>,
    pub iterations: usize,
}

pub fn diffusion_step(
    problem: &Problem,
    temps: &[f64],
    dt: f64,
    scheme: DiffusionScheme,
    picard: &PicardSettings,
) -> Result<DiffusionOutcome, SolverError> {
    match scheme {
        DiffusionScheme::Implicit => implicit_step(problem, temps, dt),
        DiffusionScheme::Limit => limit_step(problem, temps, dt, picard),
    }
}

fn implicit_step(problem: &Problem, t_old: &[f64], dt: f64) -> Result<DiffusionOutcome, SolverError> {
    let consts = &problem.consts;
    let c = consts.c;
    let n = problem.cells();
    let old = cell_data(problem, t_old)?;
    let e_old: Vec<f64> = (0..n).map(|i| old.b_sum[i] * consts.phi(t_old[i]) / c).collect();
    let mut t: Vec<f64> = t_old.iter().map(|&x| x.max(TEMPERATURE_FLOOR)).collect();
    let mut increment = f64::INFINITY;
    for it in 1..=NEWTON_MAX {
        let kappa = face_conductivity(problem, &t)?;
        let data = cell_data(problem, &t)?;
        let phi: Vec<f64> = t.iter().map(|&x| consts.phi(x)).collect();
        let flow = diffusive_inflow(problem, &kappa, &phi);
        let mut residual = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut scale = vec![0.0; n];
        for i in 0..n {
            let v = problem.mesh.volume(i);
            let e_r = data.b_sum[i] * phi[i] / c;
            residual[i] = v * (problem.cv(i) * (t[i] - t_old[i]) + e_r - e_old[i]) / dt - flow[i];
            let t3 = t[i].powi(3);
            let de_r = 4.0 * consts.a * consts.c_planck * t3 * data.d_sum[i] / c;
            diag[i] = v * (problem.cv(i) + de_r) / dt;
            scale[i] = 4.0 * consts.a * consts.c_planck * t3;
        }
        let m = diffusion_matrix(problem, &kappa, &diag, &scale);
        let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
        let delta = solve_prediction(&m, &rhs, &vec![0.0; n])?;
        let t_max = t.iter().cloned().fold(0.0, f64::max);
        increment = 0.0;
        for i in 0..n {
            let mut step = delta[i];
            while t[i] + step <= 0.0 {
                step *= 0.5;
            }
            t[i] += step;
            increment = f64::max(increment, step.abs());
        }
        if increment <= NEWTON_TOL * t_max.max(1e-300) {
            return Ok(DiffusionOutcome { temperature: t, iterations: it });
        }
    }
    Err(SolverError::Diffusion { iterations: NEWTON_MAX, increment })
}

fn limit_step(
    problem: &Problem,
    t_old: &[f64],
    dt: f64,
    picard: &PicardSettings,
) -> Result<DiffusionOutcome, SolverError> {
    let consts = &problem.consts;
    let c = consts.c;
    let n = problem.cells();
    let grid = &problem.grid;
    let old = cell_data(problem, t_old)?;
    // Radiation energy at tⁿ in equilibrium, Σ_g ρ_g/c.
    let e_old: Vec<f64> = (0..n).map(|i| old.b_sum[i] * consts.phi(t_old[i]) / c).collect();
    let mut t_k: Vec<f64> = t_old.iter().map(|&x| x.max(TEMPERATURE_FLOOR)).collect();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let data = cell_data(problem, &t_k)?;
        let kappa = face_conductivity(problem, &t_k)?;
        let mut diag = vec![0.0; n];
        let mut rhs = boundary_source(problem, &kappa);
        for i in 0..n {
            let v = problem.mesh.volume(i);
            let inv_beta = problem.cv(i) / (4.0 * consts.a * consts.c_planck * t_k[i].powi(3));
            diag[i] = v * (inv_beta + data.b_sum[i] / c) / dt;
            rhs[i] += v * (inv_beta * consts.phi(t_old[i]) / dt + e_old[i] / dt);
        }
        let m = diffusion_matrix(problem, &kappa, &diag, &vec![1.0; n]);
        let guess: Vec<f64> = t_k.iter().map(|&x| consts.phi(x)).collect();
        let phi_half = solve_prediction(&m, &rhs, &guess)?;
        let t_half: Vec<f64> = phi_half
            .iter()
            .map(|&p| consts.temperature_from_phi(p.max(0.0)).max(TEMPERATURE_FLOOR))
            .collect();
        let kappa_h = face_conductivity(problem, &t_half)?;
        let flow = diffusive_inflow(problem, &kappa_h, &phi_half);
        let mut t_new = vec![0.0; n];
        let ones = vec![1.0; problem.groups()];
        for i in 0..n {
            let v = problem.mesh.volume(i);
            let eq = CorrectionEquation {
                grid,
                kappa: consts.a * consts.c_planck / (c * problem.cv(i)),
                chi: &ones,
                rhs: t_old[i] + dt / problem.cv(i) * (e_old[i] / dt + flow[i] / v),
            };
            t_new[i] = eq.solve(t_half[i]).map_err(|residual| SolverError::Newton { cell: i, residual })?.0;
        }
        let increment: f64 = (0..n).map(|i| (t_new[i] - t_k[i]).abs() * problem.mesh.volume(i)).sum();
        t_k = t_new;
        if increment < picard.gamma {
            return Ok(DiffusionOutcome { temperature: t_k, iterations });
        }
        if iterations >= picard.max_iter {
            return Err(SolverError::Picard { iterations, increment });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundarySpec, Geometry, Mesh, SlabRegion};
    use crate::physics::{FrequencyGroupGrid, OpacityModel, PhysicalConstants};
    use crate::problem::Material;

    fn slab(cells: usize, sigma: f64, cv: f64) -> Problem {
        Problem {
            consts: PhysicalConstants::default(),
            grid: FrequencyGroupGrid::gray(),
            mesh: Mesh::build(&Geometry::Slab {
                regions: vec![SlabRegion { x0: 0.0, x1: 1.0, cells: Some(cells), dx: None, material: 0 }],
            })
            .unwrap(),
            materials: vec![Material { opacity: OpacityModel::Constant { sigma0: sigma }, cv }],
            boundaries: BoundarySpec::reflective(),
        }
    }

    #[test]
    fn uniform_field_is_steady() {
        let p = slab(6, 2.0, 0.3);
        for scheme in [DiffusionScheme::Implicit, DiffusionScheme::Limit] {
            let out = diffusion_step(&p, &[0.7; 6], 0.01, scheme, &PicardSettings::default()).unwrap();
            assert!(out.temperature.iter().all(|t| (t - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn two_cell_exchange_conserves_energy() {
        let p = slab(2, 1.0, 0.1);
        let t0 = [1.0, 0.2];
        let out =
            diffusion_step(&p, &t0, 0.05, DiffusionScheme::Implicit, &PicardSettings::default()).unwrap();
        let e0 = total_energy(&p, &t0).unwrap();
        let e1 = total_energy(&p, &out.temperature).unwrap();
        assert!(((e1 - e0) / e0).abs() < 1e-12);
        assert!(out.temperature[0] < 1.0 && out.temperature[1] > 0.2);
        assert!(out.temperature[0] > out.temperature[1]);
    }

    #[test]
    fn opaque_medium_does_not_diffuse() {
        let p = slab(3, 1e14, 0.1);
        let t0 = [1.0, 0.5, 0.2];
        let out =
            diffusion_step(&p, &t0, 0.01, DiffusionScheme::Implicit, &PicardSettings::default()).unwrap();
        for (a, b) in out.temperature.iter().zip(t0) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
