//! Finite-volume macroscopic solver: convective fluxes from tallies,
//! implicit diffusion, and the predictor-corrector Picard loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::linalg::{bicgstab, solve_tridiagonal, CsrMatrix};
use crate::mesh::{harmonic_interface_opacity, interface_temperature, Side};
use crate::physics::{FrequencyGroupGrid, PlanckTable};
use crate::problem::Problem;
use crate::transport::TallySet;

/// Floor applied to temperatures that would otherwise go nonpositive.
pub const TEMPERATURE_FLOOR: f64 = 1e-6;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX: usize = 100;
const LINEAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaForm {
    /// θ = e^{−cσΔt}
    #[default]
    Exp,
    /// θ = 1 − e^{−1/(cσΔt)}
    InvExp,
}

pub fn weight_theta(sigma: f64, c: f64, dt: f64, form: ThetaForm) -> f64 {
    let tau = c * sigma * dt;
    match form {
        ThetaForm::Exp => (-tau).exp(),
        ThetaForm::InvExp => {
            if tau <= 0.0 {
                1.0
            } else {
                -(-1.0 / tau).exp_m1()
            }
        }
    }
}

/// χ = σ/(1/(cΔt) + σ).
pub fn chi(sigma: f64, c: f64, dt: f64) -> f64 {
    let tau = c * sigma * dt;
    tau / (1.0 + tau)
}

/// (1 − e^{−τ})/τ with the τ → 0 limit.
fn decay_average(tau: f64) -> f64 {
    if tau < 1e-8 {
        1.0 - 0.5 * tau
    } else {
        -(-tau).exp_m1() / tau
    }
}

/// D = (1−θ)(1 − e^{−cσΔt}) κ/(3σ), κ the derivative coefficient.
pub fn diffusion_coefficient(theta: f64, sigma: f64, c: f64, dt: f64, dcoef: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    (1.0 - theta) * -(-c * sigma * dt).exp_m1() * dcoef / (3.0 * sigma)
}

/// Interface opacity; zero if either side is transparent.
fn interface_opacity(s_i: f64, s_j: f64, d_i: f64, d_j: f64) -> f64 {
    if s_i <= 0.0 || s_j <= 0.0 {
        0.0
    } else {
        harmonic_interface_opacity(s_i, s_j, d_i, d_j).unwrap_or(0.0)
    }
}

/// Boundary data frozen over a step for one non-reflective face.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureFace {
    pub face: usize,
    pub cell: usize,
    pub side: Side,
    /// φ_{1/2} = (4πI_bc + φ_kⁿ)/2.
    pub phi_half: f64,
    pub t_half: f64,
    pub b_half: Vec<f64>,
    pub dcoef_half: Vec<f64>,
    /// πI_bc,g, the inflow per unit area and time.
    pub inflow: Vec<f64>,
}

impl ClosureFace {
    /// π B_{g,1/2}, the equilibrium outflow intensity moment.
    pub fn half_outflow(&self, g: usize) -> f64 {
        0.25 * self.b_half[g] * self.phi_half
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryClosure {
    pub faces: Vec<ClosureFace>,
}

impl BoundaryClosure {
    pub fn build(problem: &Problem, t_old: &[f64]) -> Result<Self, SolverError> {
        let consts = &problem.consts;
        let grid = &problem.grid;
        let groups = problem.groups();
        let mut faces = Vec::new();
        for (f, face) in problem.mesh.boundary_faces() {
            let side = face.side.expect("boundary face has a side");
            let kind = problem.boundaries.get(side);
            if kind.is_reflective() {
                continue;
            }
            let cell = face.interior_cell();
            let t_bc = kind.inflow_temperature().unwrap_or(0.0);
            // 4πI_bc integrates b_g(T_bc)·acT_bc⁴ over groups.
            let phi_bc = consts.phi(t_bc);
            let phi_half = 0.5 * (phi_bc + consts.phi(t_old[cell]));
            let t_half = consts.temperature_from_phi(phi_half);
            let (b_half, dcoef_half) = if t_half > 0.0 {
                let table = PlanckTable::evaluate(grid, t_half)?;
                (table.b, table.dcoef)
            } else {
                (vec![0.0; groups], vec![0.0; groups])
            };
            let inflow = if t_bc > 0.0 {
                let table = PlanckTable::evaluate(grid, t_bc)?;
                table.b.iter().map(|b| 0.25 * b * phi_bc).collect()
            } else {
                vec![0.0; groups]
            };
            faces.push(ClosureFace { face: f, cell, side, phi_half, t_half, b_half, dcoef_half, inflow });
        }
        Ok(Self { faces })
    }

    /// Per-face (row) and group energies of the ghost boundary source.
    pub fn ghost_energies(&self, problem: &Problem, dt: f64) -> Vec<f64> {
        let groups = problem.groups();
        let mut out = Vec::with_capacity(self.faces.len() * groups);
        for cf in &self.faces {
            let area = problem.mesh.face(cf.face).area;
            out.extend((0..groups).map(|g| cf.half_outflow(g) * dt * area));
        }
        out
    }

    /// Per-face (row) and group energies of the physical inflow source.
    pub fn inflow_energies(&self, problem: &Problem, dt: f64) -> Vec<f64> {
        let groups = problem.groups();
        let mut out = Vec::with_capacity(self.faces.len() * groups);
        for cf in &self.faces {
            let area = problem.mesh.face(cf.face).area;
            out.extend((0..groups).map(|g| cf.inflow[g] * dt * area));
        }
        out
    }

    pub fn face_ids(&self) -> Vec<usize> {
        self.faces.iter().map(|cf| cf.face).collect()
    }
}

/// Cell- and face-wise coefficient fields at one temperature iterate.
#[derive(Debug, Clone, Default)]
pub struct Coefficients {
    pub temperature: Vec<f64>,
    pub sigma: Vec<f64>,
    pub b: Vec<f64>,
    pub dcoef: Vec<f64>,
    pub theta: Vec<f64>,
    pub chi: Vec<f64>,
    pub beta: Vec<f64>,
    /// D per face and group; zero on reflective faces.
    pub face_d: Vec<f64>,
}

impl Coefficients {
    pub fn evaluate(
        problem: &Problem,
        temps: &[f64],
        dt: f64,
        form: ThetaForm,
        closure: &BoundaryClosure,
    ) -> Result<Self, SolverError> {
        let groups = problem.groups();
        let n = problem.cells();
        let consts = &problem.consts;
        let c = consts.c;
        let mesh = &problem.mesh;
        let temperature: Vec<f64> = temps.iter().map(|&t| t.max(TEMPERATURE_FLOOR)).collect();
        let mut sigma = vec![0.0; n * groups];
        let mut b = vec![0.0; n * groups];
        let mut dcoef = vec![0.0; n * groups];
        sigma
            .par_chunks_mut(groups)
            .zip(b.par_chunks_mut(groups))
            .zip(dcoef.par_chunks_mut(groups))
            .enumerate()
            .try_for_each(|(cell, ((s, bb), dd))| -> Result<(), SolverError> {
                let t = temperature[cell];
                crate::physics::group_opacities(&problem.material(cell).opacity, &problem.grid, t, s)?;
                let table = PlanckTable::evaluate(&problem.grid, t)?;
                bb.copy_from_slice(&table.b);
                dd.copy_from_slice(&table.dcoef);
                Ok(())
            })?;
        let theta: Vec<f64> = sigma.iter().map(|&s| weight_theta(s, c, dt, form)).collect();
        let chi_v: Vec<f64> = sigma.iter().map(|&s| chi(s, c, dt)).collect();
        let beta: Vec<f64> = (0..n)
            .map(|i| 4.0 * consts.a * consts.c_planck * temperature[i].powi(3) / problem.cv(i))
            .collect();

        let mut face_d = vec![0.0; mesh.num_faces() * groups];
        face_d.par_chunks_mut(groups).enumerate().try_for_each(|(f, out)| -> Result<(), SolverError> {
            let face = mesh.face(f);
            let (Some(i), Some(j)) = (face.lower, face.upper) else {
                return Ok(());
            };
            let t_ij =
                interface_temperature(temperature[i], temperature[j], face.half_lower, face.half_upper);
            let table = PlanckTable::evaluate(&problem.grid, t_ij.max(TEMPERATURE_FLOOR))?;
            for g in 0..groups {
                let s_ij = interface_opacity(
                    sigma[i * groups + g],
                    sigma[j * groups + g],
                    face.half_lower,
                    face.half_upper,
                );
                let th = 0.5 * (theta[i * groups + g] + theta[j * groups + g]);
                out[g] = diffusion_coefficient(th, s_ij, c, dt, table.dcoef[g]);
            }
            Ok(())
        })?;
        for cf in &closure.faces {
            let k = cf.cell;
            for g in 0..groups {
                let s = sigma[k * groups + g];
                let th = theta[k * groups + g];
                // Half-range second moment: 1/(6σ) instead of 1/(3σ).
                face_d[cf.face * groups + g] = 0.5 * diffusion_coefficient(th, s, c, dt, cf.dcoef_half[g]);
            }
        }
        Ok(Self { temperature, sigma, b, dcoef, theta, chi: chi_v, beta, face_d })
    }
}

/// Convective flux divergence per unit volume, `cell * G + g`.
///
/// Tallies are energies over the step; they are converted to rates here.
pub fn convective_divergence(
    problem: &Problem,
    coef: &Coefficients,
    tallies: Option<&TallySet>,
    closure: &BoundaryClosure,
    dt: f64,
) -> Vec<f64> {
    let groups = problem.groups();
    let mesh = &problem.mesh;
    let c = problem.consts.c;
    let mut div = vec![0.0; problem.cells() * groups];
    if let Some(t) = tallies {
        for (f, face) in mesh.faces().iter().enumerate() {
            let interior = face.interior_cell();
            let lower = face.lower.unwrap_or(interior);
            let upper = face.upper.unwrap_or(interior);
            for g in 0..groups {
                let idx = f * groups + g;
                let fc = (t.flux[idx]
                    - (1.0 - coef.theta[lower * groups + g]) * t.ghost_plus[idx]
                    - (1.0 - coef.theta[upper * groups + g]) * t.ghost_minus[idx])
                    / dt;
                if let Some(i) = face.lower {
                    div[i * groups + g] += fc;
                }
                if let Some(j) = face.upper {
                    div[j * groups + g] -= fc;
                }
            }
        }
    }
    for cf in &closure.faces {
        let area = mesh.face(cf.face).area;
        let k = cf.cell;
        for g in 0..groups {
            let s = coef.sigma[k * groups + g];
            let th = coef.theta[k * groups + g];
            let outflow = cf.half_outflow(g) * (1.0 - th * decay_average(c * s * dt));
            div[k * groups + g] += (outflow - cf.inflow[g]) * area;
        }
    }
    for (cell, chunk) in div.chunks_mut(groups).enumerate() {
        let v = mesh.volume(cell);
        chunk.iter_mut().for_each(|x| *x /= v);
    }
    div
}

/// Diffusive outflow per unit volume, Σ_f D(φ_i − φ_nb)|S|/(dist ΔV).
pub fn diffusive_divergence(
    problem: &Problem,
    coef: &Coefficients,
    phi: &[f64],
    closure: &BoundaryClosure,
) -> Vec<f64> {
    let groups = problem.groups();
    let mesh = &problem.mesh;
    let mut div = vec![0.0; problem.cells() * groups];
    for (f, face) in mesh.faces().iter().enumerate() {
        let (Some(i), Some(j)) = (face.lower, face.upper) else {
            continue;
        };
        let w = face.area / face.distance();
        for g in 0..groups {
            let flow = coef.face_d[f * groups + g] * w * (phi[i] - phi[j]);
            div[i * groups + g] += flow;
            div[j * groups + g] -= flow;
        }
    }
    for cf in &closure.faces {
        let face = mesh.face(cf.face);
        let w = face.area / face.distance();
        let k = cf.cell;
        for g in 0..groups {
            div[k * groups + g] += coef.face_d[cf.face * groups + g] * w * (phi[k] - cf.phi_half);
        }
    }
    for (cell, chunk) in div.chunks_mut(groups).enumerate() {
        let v = mesh.volume(cell);
        chunk.iter_mut().for_each(|x| *x /= v);
    }
    div
}

/// Assembles the prediction system for φ^{k+1/2}.
pub fn prediction_system(
    problem: &Problem,
    coef: &Coefficients,
    conv: &[f64],
    t_old: &[f64],
    rho_old: &[f64],
    closure: &BoundaryClosure,
    dt: f64,
) -> (CsrMatrix, Vec<f64>) {
    let groups = problem.groups();
    let mesh = &problem.mesh;
    let consts = &problem.consts;
    let c = consts.c;
    let n = problem.cells();
    let mut closure_of = vec![None; mesh.num_faces()];
    for (r, cf) in closure.faces.iter().enumerate() {
        closure_of[cf.face] = Some(r);
    }
    let mut m = CsrMatrix::with_rows(n);
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let gi = i * groups..(i + 1) * groups;
        let chi = &coef.chi[gi.clone()];
        let v = mesh.volume(i);
        let inv_bdt = 1.0 / (coef.beta[i] * dt);
        let mut diag =
            inv_bdt + chi.iter().zip(&coef.b[gi.clone()]).map(|(x, b)| x * b).sum::<f64>() / (c * dt);
        let mut r = inv_bdt * consts.phi(t_old[i]);
        for g in 0..groups {
            r += chi[g] * (rho_old[i * groups + g] / (c * dt) - conv[i * groups + g]);
        }
        for (f, _) in mesh.cell_faces(i) {
            let face = mesh.face(f);
            let w = face.area / (face.distance() * v);
            let coupling: f64 = (0..groups).map(|g| chi[g] * coef.face_d[f * groups + g]).sum::<f64>() * w;
            match mesh.neighbor(i, f) {
                Some(j) => {
                    diag += coupling;
                    if coupling != 0.0 {
                        m.push(j, -coupling);
                    }
                }
                None => {
                    if let Some(row) = closure_of[f] {
                        diag += coupling;
                        r += coupling * closure.faces[row].phi_half;
                    }
                }
            }
        }
        m.diag[i] = diag;
        m.finish_row();
        rhs[i] = r;
    }
    (m, rhs)
}

pub fn solve_prediction(m: &CsrMatrix, rhs: &[f64], guess: &[f64]) -> Result<Vec<f64>, SolverError> {
    if m.is_tridiagonal() {
        Ok(solve_tridiagonal(m, rhs))
    } else {
        bicgstab(m, rhs, guess, LINEAR_TOL, 10 * m.n().max(10))
    }
}

/// One per-cell correction equation T + κ Σ_g χ_g b_g(T) T⁴ = A.
#[derive(Debug, Clone, Copy)]
pub struct CorrectionEquation<'a> {
    pub grid: &'a FrequencyGroupGrid,
    pub kappa: f64,
    pub chi: &'a [f64],
    pub rhs: f64,
}

impl CorrectionEquation<'_> {
    /// Residual and its analytic derivative.
    pub fn eval(&self, t: f64, table: &mut PlanckTable) -> Result<(f64, f64), SolverError> {
        table.fill(self.grid, t)?;
        let t3 = t * t * t;
        let sb: f64 = self.chi.iter().zip(&table.b).map(|(x, b)| x * b).sum();
        let sd: f64 = self.chi.iter().zip(&table.dcoef).map(|(x, d)| x * d).sum();
        Ok((t + self.kappa * sb * t3 * t - self.rhs, 1.0 + 4.0 * self.kappa * sd * t3))
    }

    /// Safeguarded Newton; returns the root and iteration count.
    pub fn solve(&self, guess: f64) -> Result<(f64, usize), f64> {
        if self.rhs <= TEMPERATURE_FLOOR {
            return Ok((TEMPERATURE_FLOOR, 0));
        }
        let mut table = PlanckTable::new(self.grid);
        // f(0) = −A < 0 and f(A) ≥ 0 bracket the root.
        let (mut lo, mut hi) = (0.0, self.rhs);
        let mut t = if guess > 0.0 && guess < hi { guess } else { 0.5 * hi };
        let mut residual = f64::INFINITY;
        for it in 1..=NEWTON_MAX {
            let (f, df) = self.eval(t, &mut table).map_err(|_| residual)?;
            residual = f;
            if f == 0.0 {
                return Ok((t, it));
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let mut step = f / df;
            let mut next = t - step;
            while next <= 0.0 {
                step *= 0.5;
                next = t - step;
            }
            if next < lo || next > hi {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() < NEWTON_TOL || hi - lo < NEWTON_TOL {
                return Ok((next, it));
            }
            t = next;
        }
        Err(residual)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardSettings {
    pub gamma: f64,
    pub max_iter: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self { gamma: 1e-8, max_iter: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct MacroInput<'a> {
    pub problem: &'a Problem,
    pub dt: f64,
    /// Tⁿ per cell.
    pub temperature: &'a [f64],
    /// ρⁿ per `cell * G + g`.
    pub rho: &'a [f64],
    pub tallies: Option<&'a TallySet>,
    pub closure: &'a BoundaryClosure,
    pub theta_form: ThetaForm,
}

#[derive(Debug, Clone, Default)]
pub struct MacroOutput {
    pub temperature: Vec<f64>,
    /// ρ^{n+1} from the elimination formula.
    pub rho: Vec<f64>,
    /// Last predicted φ^{k+1/2}.
    pub phi_half: Vec<f64>,
    pub iterations: usize,
    /// Volume-weighted L1 increment per iteration.
    pub increments: Vec<f64>,
    /// Cells whose correction right side fell below the floor.
    pub floored: usize,
}

/// Per-cell correction right sides A_i.
fn correction_rhs(input: &MacroInput, coef: &Coefficients, conv: &[f64], diff: &[f64]) -> Vec<f64> {
    let p = input.problem;
    let groups = p.groups();
    let c = p.consts.c;
    (0..p.cells())
        .map(|i| {
            let s: f64 = (0..groups)
                .map(|g| {
                    let k = i * groups + g;
                    coef.chi[k] * (input.rho[k] / (c * input.dt) - conv[k] - diff[k])
                })
                .sum();
            input.temperature[i] + input.dt / p.cv(i) * s
        })
        .collect()
}

/// Picard predictor-corrector loop for one time step.
pub fn picard_solve(input: &MacroInput, settings: &PicardSettings) -> Result<MacroOutput, SolverError> {
    let p = input.problem;
    let consts = &p.consts;
    let groups = p.groups();
    let n = p.cells();
    let dt = input.dt;
    let mut t_k: Vec<f64> = input.temperature.iter().map(|&t| t.max(TEMPERATURE_FLOOR)).collect();
    let mut out = MacroOutput::default();
    loop {
        out.iterations += 1;
        let coef = Coefficients::evaluate(p, &t_k, dt, input.theta_form, input.closure)?;
        let conv = convective_divergence(p, &coef, input.tallies, input.closure, dt);
        let (m, rhs) = prediction_system(p, &coef, &conv, input.temperature, input.rho, input.closure, dt);
        debug_assert!(m.is_m_matrix_like(), "prediction matrix lost diagonal dominance");
        let guess: Vec<f64> = t_k.iter().map(|&t| consts.phi(t)).collect();
        let phi_half = solve_prediction(&m, &rhs, &guess)?;
        let t_half: Vec<f64> = phi_half
            .iter()
            .map(|&ph| consts.temperature_from_phi(ph.max(0.0)).max(TEMPERATURE_FLOOR))
            .collect();

        let coef_h = Coefficients::evaluate(p, &t_half, dt, input.theta_form, input.closure)?;
        let conv_h = convective_divergence(p, &coef_h, input.tallies, input.closure, dt);
        let diff_h = diffusive_divergence(p, &coef_h, &phi_half, input.closure);
        let a_rhs = correction_rhs(input, &coef_h, &conv_h, &diff_h);
        let t_new: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let eq = CorrectionEquation {
                    grid: &p.grid,
                    kappa: consts.a * consts.c_planck / (consts.c * p.cv(i)),
                    chi: &coef_h.chi[i * groups..(i + 1) * groups],
                    rhs: a_rhs[i],
                };
                eq.solve(t_half[i])
                    .map(|(t, _)| t)
                    .map_err(|residual| SolverError::Newton { cell: i, residual })
            })
            .collect::<Result<_, _>>()?;
        let floored = a_rhs.iter().filter(|&&a| a <= TEMPERATURE_FLOOR).count();
        if floored > 0 {
            log::warn!("{floored} cells clamped to the temperature floor in the correction");
        }
        let increment: f64 = (0..n).map(|i| (t_new[i] - t_k[i]).abs() * p.mesh.volume(i)).sum();
        out.increments.push(increment);
        log::debug!("picard iteration {} increment {:e}", out.iterations, increment);
        t_k = t_new;
        let done = increment < settings.gamma;
        if done || out.iterations >= settings.max_iter {
            if !done {
                return Err(SolverError::Picard { iterations: out.iterations, increment });
            }
            out.floored = floored;
            out.rho = eliminate_rho(input, &coef_h, &conv_h, &diff_h, &t_k)?;
            out.temperature = t_k;
            out.phi_half = phi_half;
            return Ok(out);
        }
    }
}

/// ρ^{n+1} = [ρⁿ/(cΔt) − div + σ b φ]/(1/(cΔt) + σ).
fn eliminate_rho(
    input: &MacroInput,
    coef: &Coefficients,
    conv: &[f64],
    diff: &[f64],
    temps: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let p = input.problem;
    let groups = p.groups();
    let c = p.consts.c;
    let dt = input.dt;
    let mut rho = vec![0.0; p.cells() * groups];
    let mut table = PlanckTable::new(&p.grid);
    for (i, &t) in temps.iter().enumerate() {
        table.fill(&p.grid, t)?;
        let phi = p.consts.phi(t);
        for g in 0..groups {
            let k = i * groups + g;
            let s = coef.sigma[k];
            rho[k] =
                (input.rho[k] / (c * dt) - conv[k] - diff[k] + s * table.b[g] * phi) / (1.0 / (c * dt) + s);
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryKind, BoundarySpec, Geometry, Mesh, SlabRegion};
    use crate::physics::{OpacityModel, PhysicalConstants};
    use crate::problem::Material;

    fn slab(cells: usize, boundaries: BoundarySpec, sigma: f64) -> Problem {
        let mesh = Mesh::build(&Geometry::Slab {
            regions: vec![SlabRegion { x0: 0.0, x1: 1.0, cells: Some(cells), dx: None, material: 0 }],
        })
        .unwrap();
        Problem {
            consts: PhysicalConstants::default(),
            grid: FrequencyGroupGrid::gray(),
            mesh,
            materials: vec![Material { opacity: OpacityModel::Constant { sigma0: sigma }, cv: 0.3 }],
            boundaries,
        }
    }

    #[test]
    fn theta_forms_and_limits() {
        assert_eq!(weight_theta(0.0, 29.98, 1.0, ThetaForm::Exp), 1.0);
        assert_eq!(weight_theta(0.0, 29.98, 1.0, ThetaForm::InvExp), 1.0);
        assert!(weight_theta(1e9, 29.98, 1.0, ThetaForm::Exp) < 1e-300);
        assert!(weight_theta(1e9, 29.98, 1.0, ThetaForm::InvExp) < 1e-9);
        let s = 2f64.ln() / (29.98 * 0.1);
        assert!((weight_theta(s, 29.98, 0.1, ThetaForm::Exp) - 0.5).abs() < 1e-15);
        assert_eq!(diffusion_coefficient(1.0, 0.0, 29.98, 1.0, 1.0), 0.0);
        let small = diffusion_coefficient(weight_theta(1e-9, 1.0, 1.0, ThetaForm::Exp), 1e-9, 1.0, 1.0, 1.0);
        assert!(small < 1e-9);
        let thick = diffusion_coefficient(0.0, 1e6, 1.0, 1.0, 1.0);
        assert!((thick * 3e6 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = slab(5, BoundarySpec::reflective(), 10.0);
        let t = vec![1.0; 5];
        let phi = p.consts.phi(1.0);
        let rho: Vec<f64> = (0..5).map(|_| PlanckTable::evaluate(&p.grid, 1.0).unwrap().b[0] * phi).collect();
        let closure = BoundaryClosure::build(&p, &t).unwrap();
        let input = MacroInput {
            problem: &p,
            dt: 0.01,
            temperature: &t,
            rho: &rho,
            tallies: None,
            closure: &closure,
            theta_form: ThetaForm::Exp,
        };
        let out = picard_solve(&input, &PicardSettings::default()).unwrap();
        assert_eq!(out.iterations, 1);
        for &ti in &out.temperature {
            assert!((ti - 1.0).abs() < 1e-12);
        }
        for (r, r0) in out.rho.iter().zip(&rho) {
            assert!((r - r0).abs() < 1e-12 * r0);
        }
    }

    #[test]
    fn newton_gray_example() {
        let grid = FrequencyGroupGrid::gray();
        let eq = CorrectionEquation { grid: &grid, kappa: 1.0, chi: &[1.0], rhs: 2.0 };
        let (t, _) = eq.solve(0.3).unwrap();
        assert!((t - 1.0).abs() < 1e-10);
        let lin = CorrectionEquation { chi: &[0.0], ..eq };
        assert_eq!(lin.solve(1.0).unwrap().0, 2.0);
    }

    #[test]
    fn closure_faces_skip_reflective_sides() {
        let spec = BoundarySpec {
            left: BoundaryKind::Planck { temperature: 1.0 },
            right: BoundaryKind::Vacuum,
            ..BoundarySpec::reflective()
        };
        let p = slab(4, spec, 1.0);
        let c = BoundaryClosure::build(&p, &[0.5; 4]).unwrap();
        assert_eq!(c.faces.len(), 2);
        assert!(c.faces[1].inflow.iter().all(|&x| x == 0.0));
        let e = c.inflow_energies(&p, 0.0025);
        let expected = 0.0025 * p.consts.a * p.consts.c / 4.0;
        assert!((e[0] - expected).abs() < 1e-8 * expected);
    }
}
