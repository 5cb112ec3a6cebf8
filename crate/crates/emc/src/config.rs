//! Run configuration files and the benchmark presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionScheme;
use crate::driver::{RunSettings, SolverKind};
use crate::error::ConfigError;
use crate::macro_solver::{PicardSettings, ThetaForm};
use crate::mesh::{BoundaryKind, BoundarySpec, Geometry, MaterialBox, Mesh, SlabRegion};
use crate::physics::{FrequencyGroupGrid, OpacityModel, PhysicalConstants};
use crate::problem::{Material, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLayout {
    /// One group over the whole spectrum.
    Gray,
    Log,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub spacing: GroupLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<f64>,
}

impl GroupConfig {
    pub fn gray() -> Self {
        Self { spacing: GroupLayout::Gray, count: None, min: None, max: None, edges: Vec::new() }
    }

    pub fn log(count: usize, min: f64, max: f64) -> Self {
        Self {
            spacing: GroupLayout::Log,
            count: Some(count),
            min: Some(min),
            max: Some(max),
            edges: Vec::new(),
        }
    }

    pub fn build(&self) -> Result<FrequencyGroupGrid, ConfigError> {
        let missing = |k: &str| ConfigError::Invalid(format!("groups.{k} is required for log spacing"));
        Ok(match self.spacing {
            GroupLayout::Gray => FrequencyGroupGrid::gray(),
            GroupLayout::Log => FrequencyGroupGrid::logarithmic(
                self.count.ok_or_else(|| missing("count"))?,
                self.min.ok_or_else(|| missing("min"))?,
                self.max.ok_or_else(|| missing("max"))?,
            )?,
            GroupLayout::Explicit => FrequencyGroupGrid::new(self.edges.clone())?,
        })
    }
}

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    1
}

/// Everything needed to set up and run one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    /// Time step Δt in ns.
    pub dt: f64,
    /// End time in ns.
    pub t_end: f64,
    /// Particle budget per step.
    pub budget: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub theta_form: ThetaForm,
    #[serde(default = "default_true")]
    pub tilt: bool,
    #[serde(default)]
    pub imc_tilt: bool,
    /// Stratified source sampling; false draws every particle independently.
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default)]
    pub roulette: bool,
    #[serde(default)]
    pub diffusion_scheme: DiffusionScheme,
    #[serde(default)]
    pub snapshot_every: usize,
    /// Initial material and radiation temperature in keV.
    pub initial_temperature: f64,
    /// y positions of 2D lineouts written next to each snapshot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lineouts: Vec<f64>,
    #[serde(default)]
    pub picard: PicardSettings,
    #[serde(default)]
    pub constants: PhysicalConstants,
    pub groups: GroupConfig,
    pub boundaries: BoundarySpec,
    pub materials: Vec<Material>,
    pub geometry: Geometry,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) {
            return bad(format!("t_end must be nonnegative, got {}", self.t_end));
        }
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must be at most {}, got {}", i64::MAX, self.seed));
        }
        if !(self.picard.gamma > 0.0) {
            return bad(format!("picard.gamma must be positive, got {}", self.picard.gamma));
        }
        if self.picard.max_iter == 0 {
            return bad("picard.max_iter must be at least 1".into());
        }
        if !(self.initial_temperature > 0.0) {
            return bad(format!("initial_temperature must be positive, got {}", self.initial_temperature));
        }
        if self.materials.is_empty() {
            return bad("at least one material is required".into());
        }
        for (i, m) in self.materials.iter().enumerate() {
            if !(m.cv > 0.0) {
                return bad(format!("material {i}: cv must be positive"));
            }
            if !(m.opacity.sigma0() >= 0.0) {
                return bad(format!("material {i}: sigma0 must be nonnegative"));
            }
        }
        let used = match &self.geometry {
            Geometry::Slab { regions } => regions.iter().map(|r| r.material).max(),
            Geometry::Grid { default_material, boxes, .. } => {
                boxes.iter().map(|b| b.material).chain([*default_material]).max()
            }
        };
        if used.is_some_and(|m| m >= self.materials.len()) {
            return bad(format!(
                "geometry references material {} of {}",
                used.unwrap(),
                self.materials.len()
            ));
        }
        self.boundaries.validate()?;
        self.groups.build()?;
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem, ConfigError> {
        self.validate()?;
        Ok(Problem {
            consts: self.constants,
            grid: self.groups.build()?,
            mesh: Mesh::build(&self.geometry)?,
            materials: self.materials.clone(),
            boundaries: self.boundaries,
        })
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            dt: self.dt,
            t_end: self.t_end,
            particles: self.budget,
            seed: self.seed,
            solver: self.solver,
            theta_form: self.theta_form,
            tilt: self.tilt,
            imc_tilt: self.imc_tilt,
            stratified: self.stratified,
            picard: self.picard,
            roulette: self.roulette,
            diffusion_scheme: self.diffusion_scheme,
            snapshot_every: self.snapshot_every,
        }
    }

    pub fn initial_field(&self, cells: usize) -> Vec<f64> {
        vec![self.initial_temperature; cells]
    }
}

pub const PRESETS: [&str; 7] = [
    "infinite-medium",
    "marshak-thin",
    "marshak-thick",
    "marshak-hetero-a",
    "marshak-hetero-b",
    "larsen",
    "hohlraum",
];

fn slab(regions: &[(f64, f64, f64, usize)]) -> Geometry {
    Geometry::Slab {
        regions: regions
            .iter()
            .map(|&(x0, x1, dx, material)| SlabRegion { x0, x1, cells: None, dx: Some(dx), material })
            .collect(),
    }
}

fn planck(t: f64) -> BoundaryKind {
    BoundaryKind::Planck { temperature: t }
}

fn one_sided(left: BoundaryKind, right: BoundaryKind) -> BoundarySpec {
    BoundarySpec { left, right, ..BoundarySpec::reflective() }
}

fn marshak_material(sigma0: f64) -> Material {
    Material { opacity: OpacityModel::PowThreeSqrtT { sigma0 }, cv: 0.1 }
}

fn base(name: &str, dt: f64, t_end: f64, t0: f64, groups: GroupConfig) -> RunConfig {
    RunConfig {
        name: name.to_string(),
        dt,
        t_end,
        budget: 2_000_000,
        seed: 1,
        solver: SolverKind::Emc,
        theta_form: ThetaForm::Exp,
        tilt: true,
        imc_tilt: false,
        stratified: true,
        roulette: false,
        diffusion_scheme: DiffusionScheme::Implicit,
        snapshot_every: 0,
        initial_temperature: t0,
        lineouts: Vec::new(),
        picard: PicardSettings::default(),
        constants: PhysicalConstants::default(),
        groups,
        boundaries: BoundarySpec::reflective(),
        materials: Vec::new(),
        geometry: slab(&[(0.0, 1.0, 1.0, 0)]),
    }
}

fn hohlraum_geometry(h: f64) -> Geometry {
    let wall = |x0, x1, y0, y1| MaterialBox { x0, x1, y0, y1, material: 1 };
    Geometry::Grid {
        lx: 1.4,
        ly: 0.65,
        nx: (1.4 / h).round() as usize,
        ny: (0.65 / h).round() as usize,
        default_material: 0,
        boxes: vec![
            wall(0.0, 1.4, 0.6, 0.65),
            wall(1.35, 1.4, 0.0, 0.65),
            wall(0.0, 0.05, 0.25, 0.65),
            wall(0.45, 0.95, 0.0, 0.5),
        ],
    }
}

/// Full-scale benchmark parameters.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let marshak_groups = || GroupConfig::log(25, 1e-3, 100.0);
    let cfg = match name {
        "infinite-medium" => RunConfig {
            materials: vec![Material {
                opacity: OpacityModel::GrayPower { sigma0: 300.0, power: 3.0 },
                cv: 0.3,
            }],
            geometry: slab(&[(0.0, 1.0, 0.02, 0)]),
            ..base(name, 0.0025, 1.0, 1.0, GroupConfig::gray())
        },
        "marshak-thin" | "marshak-thick" => {
            let sigma0 = if name == "marshak-thin" { 10.0 } else { 1000.0 };
            RunConfig {
                materials: vec![marshak_material(sigma0)],
                geometry: slab(&[(0.0, 5.0, 0.005, 0)]),
                boundaries: one_sided(planck(1.0), BoundaryKind::Reflective),
                ..base(name, 0.0025, 1.0, 1e-3, marshak_groups())
            }
        }
        "marshak-hetero-a" => RunConfig {
            materials: vec![marshak_material(10.0), marshak_material(1000.0)],
            geometry: slab(&[(0.0, 2.0, 0.02, 0), (2.0, 3.0, 0.005, 1)]),
            boundaries: one_sided(planck(1.0), BoundaryKind::Reflective),
            ..base(name, 0.00125, 1.0, 1e-3, marshak_groups())
        },
        "marshak-hetero-b" => RunConfig {
            materials: vec![marshak_material(1000.0), marshak_material(10.0)],
            geometry: slab(&[(0.0, 0.5, 0.005, 0), (0.5, 1.5, 0.02, 1)]),
            boundaries: one_sided(planck(1.0), BoundaryKind::Reflective),
            ..base(name, 0.00125, 5.0, 1e-3, marshak_groups())
        },
        "larsen" => {
            let m = |sigma0| Material { opacity: OpacityModel::LarsenType { sigma0 }, cv: 0.05109 };
            RunConfig {
                materials: vec![m(1.0), m(1000.0)],
                geometry: slab(&[(0.0, 2.0, 0.2, 0), (2.0, 3.0, 0.02, 1), (3.0, 4.0, 0.1, 0)]),
                boundaries: one_sided(planck(1.0), BoundaryKind::Vacuum),
                ..base(name, 0.005, 0.9, 1e-3, GroupConfig::log(50, 1e-5, 10.0))
            }
        }
        "hohlraum" => RunConfig {
            budget: 6_000_000,
            materials: vec![
                Material { opacity: OpacityModel::Constant { sigma0: 1e-8 }, cv: 1e-4 },
                Material { opacity: OpacityModel::LarsenType { sigma0: 1000.0 }, cv: 0.3 },
            ],
            geometry: hohlraum_geometry(0.005),
            boundaries: BoundarySpec {
                left: planck(0.3),
                right: planck(1e-3),
                bottom: BoundaryKind::Reflective,
                top: planck(1e-3),
            },
            lineouts: vec![0.45, 0.65],
            ..base(name, 0.0025, 10.0, 1e-3, GroupConfig::log(50, 1e-5, 10.0))
        },
        _ => return Err(ConfigError::UnknownPreset(name.to_string())),
    };
    Ok(cfg)
}

/// CI-sized variant of a preset: smaller budget, coarser mesh, earlier end time.
///
/// | preset | budget | mesh | t_end |
/// |---|---|---|---|
/// | infinite-medium | 2e5 | 50 cells | 0.25 (100 steps) |
/// | marshak-thin / thick | 2e5 | cells / 4 | 0.3 |
/// | marshak-hetero-a / b | 2e5 | cells / 4 per region | 0.3 |
/// | larsen | 1e5 | unchanged (70 cells) | 0.3 |
/// | hohlraum | 1e5 | Δx = 0.025 | 0.1 |
pub fn desk_preset(name: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = preset(name)?;
    let coarsen = |g: &mut Geometry, k: f64| {
        if let Geometry::Slab { regions } = g {
            for r in regions {
                let n = ((r.x1 - r.x0) / r.dx.unwrap_or(r.x1 - r.x0) / k).round().max(1.0);
                r.cells = Some(n as usize);
                r.dx = None;
            }
        }
    };
    match name {
        "infinite-medium" => {
            cfg.budget = 200_000;
            cfg.t_end = 0.25;
        }
        "larsen" => {
            cfg.budget = 100_000;
            cfg.t_end = 0.3;
        }
        "hohlraum" => {
            cfg.budget = 100_000;
            cfg.t_end = 0.1;
            cfg.geometry = hohlraum_geometry(0.025);
        }
        _ => {
            cfg.budget = 200_000;
            cfg.t_end = 0.3;
            coarsen(&mut cfg.geometry, 4.0);
        }
    }
    cfg.name = format!("{name}-desk");
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        for name in PRESETS {
            for cfg in [preset(name).unwrap(), desk_preset(name).unwrap()] {
                let p = cfg.problem().unwrap();
                assert!(p.cells() > 0, "{name}");
                assert!(cfg.budget <= 6_000_000);
            }
        }
        assert!(matches!(preset("nope"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn preset_meshes() {
        let cells = |n: &str| preset(n).unwrap().problem().unwrap().cells();
        assert_eq!(cells("infinite-medium"), 50);
        assert_eq!(cells("larsen"), 70);
        assert_eq!(cells("marshak-thick"), 1000);
        assert_eq!(cells("marshak-hetero-a"), 100 + 200);
        assert_eq!(cells("hohlraum"), 280 * 130);
        let larsen = preset("larsen").unwrap();
        assert_eq!(larsen.problem().unwrap().groups(), 50);
        assert_eq!(larsen.dt, 0.005);
        assert_eq!(larsen.t_end, 0.9);
    }

    #[test]
    fn desk_is_smaller() {
        for name in PRESETS {
            let (full, desk) = (preset(name).unwrap(), desk_preset(name).unwrap());
            assert!(desk.budget * 10 <= full.budget, "{name}");
            assert!(desk.t_end < full.t_end, "{name}");
        }
    }

    #[test]
    fn toml_round_trip() {
        for name in PRESETS {
            let cfg = desk_preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg, "{name}\n{text}");
        }
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = desk_preset("larsen").unwrap();
        cfg.dt = 0.0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let mut cfg = desk_preset("larsen").unwrap();
        cfg.picard.gamma = 0.0;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml("dt = 1").is_err());
    }
}
