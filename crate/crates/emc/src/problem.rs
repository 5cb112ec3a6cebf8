//! Static problem description shared by every solver.

use serde::{Deserialize, Serialize};

use crate::error::PhysicsError;
use crate::mesh::{BoundarySpec, Mesh};
use crate::physics::{group_opacities, FrequencyGroupGrid, OpacityModel, PhysicalConstants, PlanckTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub opacity: OpacityModel,
    /// Heat capacity in GJ/cm³/keV.
    pub cv: f64,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub consts: PhysicalConstants,
    pub grid: FrequencyGroupGrid,
    pub mesh: Mesh,
    pub materials: Vec<Material>,
    pub boundaries: BoundarySpec,
}

impl Problem {
    pub fn groups(&self) -> usize {
        self.grid.len()
    }

    pub fn cells(&self) -> usize {
        self.mesh.num_cells()
    }

    pub fn material(&self, cell: usize) -> &Material {
        &self.materials[self.mesh.material(cell)]
    }

    pub fn cv(&self, cell: usize) -> f64 {
        self.material(cell).cv
    }

    /// σ_g per cell, laid out as `cell * G + g`.
    pub fn opacity_field(&self, temps: &[f64], out: &mut Vec<f64>) -> Result<(), PhysicsError> {
        let g = self.groups();
        out.resize(temps.len() * g, 0.0);
        for (cell, (&t, chunk)) in temps.iter().zip(out.chunks_mut(g)).enumerate() {
            group_opacities(&self.material(cell).opacity, &self.grid, t, chunk)?;
        }
        Ok(())
    }

    /// b_g and derivative coefficients per cell, laid out as `cell * G + g`.
    pub fn planck_field(
        &self,
        temps: &[f64],
        b: &mut Vec<f64>,
        dcoef: &mut Vec<f64>,
    ) -> Result<(), PhysicsError> {
        let g = self.groups();
        b.resize(temps.len() * g, 0.0);
        dcoef.resize(temps.len() * g, 0.0);
        let mut table = PlanckTable::new(&self.grid);
        for (cell, &t) in temps.iter().enumerate() {
            table.fill(&self.grid, t)?;
            b[cell * g..(cell + 1) * g].copy_from_slice(&table.b);
            dcoef[cell * g..(cell + 1) * g].copy_from_slice(&table.dcoef);
        }
        Ok(())
    }

    /// Material internal energy Σ C_v T ΔV.
    pub fn material_energy(&self, temps: &[f64]) -> f64 {
        temps.iter().enumerate().map(|(c, &t)| self.cv(c) * t * self.mesh.volume(c)).sum()
    }

    /// Min cell width for the CFL number cΔt/min(Δx, Δy).
    pub fn cfl(&self, dt: f64) -> f64 {
        self.consts.c * dt / self.mesh.min_width()
    }
}
