//! Time stepping: one EMC step, the run loop, snapshots and checkpoints.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{diffusion_step, DiffusionScheme};
use crate::error::{Error, SolverError, TransportError};
use crate::macro_solver::{
    picard_solve, BoundaryClosure, MacroInput, PicardSettings, ThetaForm, TEMPERATURE_FLOOR,
};
use crate::physics::PlanckTable;
use crate::problem::Problem;
use crate::rng::RngStream;
use crate::transport::{
    allocate, relabel_census, roulette_census, sample_surface, sample_volume, track_batch, Particle,
    SourceBatch, SourceTag, SurfaceSource, TallySet, TiltField, TrackContext, VolumeSource,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Emc,
    Imc,
    Diffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dt: f64,
    pub t_end: f64,
    /// Particles sampled per step, split across source classes.
    pub particles: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub theta_form: ThetaForm,
    pub tilt: bool,
    /// Tilted emission in the IMC baseline.
    pub imc_tilt: bool,
    /// Stratified (Kronecker) source sampling within each bucket.
    pub stratified: bool,
    pub picard: PicardSettings,
    /// Census roulette once the census exceeds four budgets.
    pub roulette: bool,
    pub diffusion_scheme: DiffusionScheme,
    /// Snapshot every this many steps; 0 keeps only the first and last.
    pub snapshot_every: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            dt: 0.0025,
            t_end: 0.0,
            particles: 10_000,
            seed: 1,
            solver: SolverKind::Emc,
            theta_form: ThetaForm::Exp,
            tilt: true,
            imc_tilt: false,
            stratified: true,
            picard: PicardSettings::default(),
            roulette: false,
            diffusion_scheme: DiffusionScheme::Implicit,
            snapshot_every: 0,
        }
    }
}

impl RunSettings {
    pub fn num_steps(&self) -> usize {
        if self.t_end <= 0.0 {
            return 0;
        }
        let n = self.t_end / self.dt;
        let whole = n.round();
        if (n - whole).abs() <= 1e-9 * n.max(1.0) {
            whole as usize
        } else {
            n.ceil() as usize
        }
    }

    /// End time of step `k` (1-based); the last step ends exactly at t_end.
    pub fn step_end(&self, k: usize) -> f64 {
        if k >= self.num_steps() {
            self.t_end
        } else {
            k as f64 * self.dt
        }
    }
}

/// Everything that evolves from step to step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub step: u64,
    pub time: f64,
    pub temperature: Vec<f64>,
    pub census: Vec<Particle>,
}

/// Running energy balance over a whole run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub initial: f64,
    pub injected: f64,
    pub leaked: f64,
    /// Emission removed from the material minus emission energy sampled.
    pub emission_deficit: f64,
    pub roulette: f64,
    /// Energy added by clamping temperatures to the floor.
    pub floor: f64,
}

impl EnergyLedger {
    pub fn expected(&self) -> f64 {
        self.initial + self.injected - self.leaked - self.emission_deficit + self.roulette + self.floor
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub time: f64,
    pub dt: f64,
    pub picard_iterations: usize,
    pub picard_increments: Vec<f64>,
    /// Per-group energies of all non-ghost particles this step.
    pub sampled: Vec<f64>,
    pub absorbed: Vec<f64>,
    pub census: Vec<f64>,
    pub leaked: Vec<f64>,
    /// True if particles may change group in flight.
    pub regrouping: bool,
    pub particles: usize,
    pub events: u64,
    pub scatters: u64,
    pub floored: usize,
    pub seconds: f64,
}

impl StepReport {
    /// Relative mismatch of sampled = absorbed + census + leaked, per group
    /// (or in total when particles can change group).
    pub fn conservation_error(&self) -> f64 {
        let rel = |s: f64, a: f64, c: f64, l: f64| {
            let scale = s.abs().max(a + c + l);
            if scale > 0.0 {
                (s - a - c - l).abs() / scale
            } else {
                0.0
            }
        };
        if self.regrouping {
            let sum = |v: &[f64]| v.iter().sum::<f64>();
            return rel(sum(&self.sampled), sum(&self.absorbed), sum(&self.census), sum(&self.leaked));
        }
        (0..self.sampled.len())
            .map(|g| rel(self.sampled[g], self.absorbed[g], self.census[g], self.leaked[g]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub time: f64,
    pub groups: usize,
    pub temperature: Vec<f64>,
    pub radiation_temperature: Vec<f64>,
    /// ρ_g per `cell * G + g`.
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub state: State,
    pub ledger: EnergyLedger,
}

/// Census energy per `cell * G + g`.
pub fn census_energy(census: &[Particle], cells: usize, groups: usize) -> Vec<f64> {
    let mut e = vec![0.0; cells * groups];
    for p in census {
        e[p.cell as usize * groups + p.group as usize] += p.weight;
    }
    e
}

/// Equilibrium radiation energy b_g φ ΔV / c per `cell * G + g`.
pub(crate) fn equilibrium_energy(problem: &Problem, temps: &[f64]) -> Result<Vec<f64>, SolverError> {
    let groups = problem.groups();
    let mut out = vec![0.0; problem.cells() * groups];
    let mut table = PlanckTable::new(&problem.grid);
    for (i, &t) in temps.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        table.fill(&problem.grid, t)?;
        let scale = problem.consts.phi(t) * problem.mesh.volume(i) / problem.consts.c;
        for g in 0..groups {
            out[i * groups + g] = table.b[g] * scale;
        }
    }
    Ok(out)
}

/// Splits the step budget over source classes in proportion to energy.
pub(crate) fn class_budget(class_energy: &[f64], n: usize) -> Vec<usize> {
    allocate(class_energy, n)
}

/// Applies T^{n+1} = Tⁿ + Σ_g (E^A − E^R)/(C_v ΔV), clamping to the floor.
/// Returns the number of clamped cells and the energy they gained.
pub(crate) fn update_temperature(
    problem: &Problem,
    temps: &mut [f64],
    absorbed: &[f64],
    emitted: &[f64],
) -> (usize, f64) {
    let groups = problem.groups();
    let mut floored = 0;
    let mut added = 0.0;
    for (i, t) in temps.iter_mut().enumerate() {
        let net: f64 = (0..groups).map(|g| absorbed[i * groups + g] - emitted[i * groups + g]).sum();
        let heat = problem.cv(i) * problem.mesh.volume(i);
        let next = *t + net / heat;
        if next < TEMPERATURE_FLOOR {
            floored += 1;
            added += (TEMPERATURE_FLOOR - next) * heat;
            *t = TEMPERATURE_FLOOR;
        } else {
            *t = next;
        }
    }
    if floored > 0 {
        log::warn!("{floored} cells clamped to the temperature floor");
    }
    (floored, added)
}

pub(crate) fn transport_err(step: u64) -> impl Fn(TransportError) -> Error {
    move |source| Error::Transport { step: step as usize, source }
}

pub(crate) fn solver_err(step: u64) -> impl Fn(SolverError) -> Error {
    move |source| Error::Solver { step: step as usize, source }
}

/// Sampled energy per group of a set of batches.
pub(crate) fn batch_energy(batches: &[&SourceBatch], groups: usize) -> Vec<f64> {
    let mut e = vec![0.0; groups];
    for b in batches {
        for g in 0..groups {
            e[g] += b.energy[g];
        }
    }
    e
}

pub struct Simulation {
    pub problem: Problem,
    pub settings: RunSettings,
    pub state: State,
    pub ledger: EnergyLedger,
    pub reports: Vec<StepReport>,
    rng: RngStream,
}

impl Simulation {
    /// Starts from material and radiation in equilibrium at `initial`.
    pub fn new(problem: Problem, settings: RunSettings, initial: Vec<f64>) -> Result<Self, Error> {
        let rng = RngStream::new(settings.seed);
        let census = if settings.solver == SolverKind::Diffusion {
            Vec::new()
        } else {
            let energies = equilibrium_energy(&problem, &initial).map_err(solver_err(0))?;
            let src = VolumeSource {
                energies: &energies,
                tag: SourceTag::Census,
                t0: 0.0,
                t1: 0.0,
                tilt: None,
                stratified: settings.stratified,
            };
            sample_volume(&problem.mesh, problem.groups(), &src, settings.particles, &rng, 0).particles
        };
        let state = State { step: 0, time: 0.0, temperature: initial, census };
        let mut sim =
            Self { problem, settings, state, ledger: EnergyLedger::default(), reports: Vec::new(), rng };
        sim.ledger.initial = sim.total_energy();
        Ok(sim)
    }

    pub fn restore(problem: Problem, settings: RunSettings, checkpoint: Checkpoint) -> Self {
        Self {
            rng: RngStream::new(checkpoint.seed),
            problem,
            settings,
            state: checkpoint.state,
            ledger: checkpoint.ledger,
            reports: Vec::new(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { seed: self.rng.seed(), state: self.state.clone(), ledger: self.ledger.clone() }
    }

    pub fn rng(&self) -> &RngStream {
        &self.rng
    }

    /// Radiation energy per `cell * G + g`.
    pub fn radiation_energy(&self) -> Vec<f64> {
        match self.settings.solver {
            SolverKind::Diffusion => {
                equilibrium_energy(&self.problem, &self.state.temperature).unwrap_or_default()
            }
            _ => census_energy(&self.state.census, self.problem.cells(), self.problem.groups()),
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.radiation_energy().iter().sum::<f64>() + self.problem.material_energy(&self.state.temperature)
    }

    /// Relative gap between the energy on hand and the ledger's expectation.
    pub fn ledger_error(&self) -> f64 {
        let (actual, expected) = (self.total_energy(), self.ledger.expected());
        let scale = actual.abs().max(expected.abs());
        if scale > 0.0 {
            (actual - expected).abs() / scale
        } else {
            0.0
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let p = &self.problem;
        let groups = p.groups();
        let energy = self.radiation_energy();
        let c = p.consts.c;
        let mut rho = vec![0.0; energy.len()];
        let mut t_r = vec![0.0; p.cells()];
        for i in 0..p.cells() {
            let v = p.mesh.volume(i);
            let mut total = 0.0;
            for g in 0..groups {
                rho[i * groups + g] = c * energy[i * groups + g] / v;
                total += energy[i * groups + g];
            }
            t_r[i] = p.consts.temperature_from_phi(c * total / v);
        }
        Snapshot {
            step: self.state.step,
            time: self.state.time,
            groups,
            temperature: self.state.temperature.clone(),
            radiation_temperature: t_r,
            rho,
        }
    }

    pub fn finished(&self) -> bool {
        self.state.step as usize >= self.settings.num_steps()
    }

    pub fn step(&mut self) -> Result<&StepReport, Error> {
        let k = self.state.step as usize + 1;
        let t_end = self.settings.step_end(k);
        let dt = t_end - self.state.time;
        let start = Instant::now();
        let mut report = match self.settings.solver {
            SolverKind::Emc => self.emc_step(dt)?,
            SolverKind::Imc => crate::imc::imc_step(self, dt)?,
            SolverKind::Diffusion => {
                let out = diffusion_step(
                    &self.problem,
                    &self.state.temperature,
                    dt,
                    self.settings.diffusion_scheme,
                    &self.settings.picard,
                )
                .map_err(solver_err(k as u64))?;
                self.state.temperature = out.temperature;
                StepReport { picard_iterations: out.iterations, ..StepReport::default() }
            }
        };
        self.state.step = k as u64;
        self.state.time = t_end;
        report.step = k as u64;
        report.time = t_end;
        report.dt = dt;
        report.seconds = start.elapsed().as_secs_f64();
        log::info!(
            "step {k} t={t_end:.6} picard={} particles={} conservation={:.2e}",
            report.picard_iterations,
            report.particles,
            report.conservation_error()
        );
        self.reports.push(report);
        Ok(self.reports.last().expect("just pushed"))
    }

    /// Steps to t_end, passing every scheduled snapshot to `observe`.
    pub fn run(&mut self, mut observe: impl FnMut(&Snapshot)) -> Result<(), Error> {
        observe(&self.snapshot());
        let every = self.settings.snapshot_every;
        while !self.finished() {
            self.step()?;
            let k = self.state.step as usize;
            if self.finished() || (every > 0 && k.is_multiple_of(every)) {
                observe(&self.snapshot());
            }
        }
        Ok(())
    }

    /// Census particles carried into the step as this step's census source.
    pub(crate) fn take_census(&mut self) -> SourceBatch {
        let mut particles = std::mem::take(&mut self.state.census);
        relabel_census(&mut particles);
        let energy = crate::transport::group_energy(&particles, self.problem.groups());
        SourceBatch { particles, energy }
    }

    pub(crate) fn store_census(&mut self, mut census: Vec<Particle>, step: u64) {
        census.retain(|p| !p.tag.is_ghost());
        let target = self.settings.particles;
        if self.settings.roulette && census.len() > 4 * target {
            let cells = self.problem.cells();
            let groups = self.problem.groups();
            self.ledger.roulette += roulette_census(&mut census, cells, groups, target, &self.rng, step);
        }
        self.state.census = census;
    }

    fn emc_step(&mut self, dt: f64) -> Result<StepReport, Error> {
        let step = self.state.step + 1;
        let terr = transport_err(step);
        let serr = solver_err(step);
        let p = &self.problem;
        let groups = p.groups();
        let cells = p.cells();
        let t0 = self.state.time;
        let t1 = t0 + dt;
        let t_old = self.state.temperature.clone();
        let stratified = self.settings.stratified;

        // (1) opacities and Planck data at Tⁿ
        let mut sigma_old = Vec::new();
        p.opacity_field(&t_old, &mut sigma_old).map_err(|e| serr(e.into()))?;
        let (mut b_old, mut d_old) = (Vec::new(), Vec::new());
        p.planck_field(&t_old, &mut b_old, &mut d_old).map_err(|e| serr(e.into()))?;
        let closure = BoundaryClosure::build(p, &t_old).map_err(&serr)?;

        // (2) sources known at tⁿ
        let ghost_census_e = equilibrium_energy(p, &t_old).map_err(&serr)?;
        let inflow_e = closure.inflow_energies(p, dt);
        let ghost_bc_e = closure.ghost_energies(p, dt);
        let faces = closure.face_ids();
        let emission_estimate: f64 = (0..cells * groups)
            .map(|k| {
                sigma_old[k] * b_old[k] * p.consts.phi(t_old[k / groups]) * p.mesh.volume(k / groups) * dt
            })
            .sum();
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let budget = class_budget(
            &[sum(&inflow_e), sum(&ghost_census_e), sum(&ghost_bc_e), emission_estimate],
            self.settings.particles,
        );
        let rng = &self.rng;
        let boundary = sample_surface(
            &p.mesh,
            groups,
            &SurfaceSource {
                faces: &faces,
                energies: &inflow_e,
                tag: SourceTag::Boundary,
                t0,
                t1,
                stratified,
            },
            budget[0],
            rng,
            step,
        );
        let ghost_census = sample_volume(
            &p.mesh,
            groups,
            &VolumeSource {
                energies: &ghost_census_e,
                tag: SourceTag::GhostCensus,
                t0,
                t1: t0,
                tilt: None,
                stratified,
            },
            budget[1],
            rng,
            step,
        );
        let ghost_bc = sample_surface(
            &p.mesh,
            groups,
            &SurfaceSource {
                faces: &faces,
                energies: &ghost_bc_e,
                tag: SourceTag::GhostBoundary,
                t0,
                t1,
                stratified,
            },
            budget[2],
            rng,
            step,
        );
        let census_in = self.take_census();
        let p = &self.problem;
        let rho_old: Vec<f64> = census_energy(&census_in.particles, cells, groups)
            .iter()
            .enumerate()
            .map(|(k, e)| p.consts.c * e / p.mesh.volume(k / groups))
            .collect();
        let mut sampled = batch_energy(&[&census_in, &boundary], groups);
        let mut n_particles = census_in.particles.len()
            + boundary.particles.len()
            + ghost_census.particles.len()
            + ghost_bc.particles.len();

        // (3) track with σ(Tⁿ)
        let ctx = TrackContext {
            mesh: &p.mesh,
            boundaries: &p.boundaries,
            groups,
            absorption: &sigma_old,
            scatter: None,
            c: p.consts.c,
            t_end: t1,
            step,
            rng: &self.rng,
        };
        let mut phase1 = TallySet::for_mesh(&p.mesh, groups);
        let mut all = census_in.particles;
        all.extend(boundary.particles);
        all.extend(ghost_census.particles);
        all.extend(ghost_bc.particles);
        let mut census = track_batch(&ctx, all, &mut phase1).map_err(&terr)?;

        // (4) macro solve
        let input = MacroInput {
            problem: p,
            dt,
            temperature: &t_old,
            rho: &rho_old,
            tallies: Some(&phase1),
            closure: &closure,
            theta_form: self.settings.theta_form,
        };
        let macro_out = picard_solve(&input, &self.settings.picard).map_err(&serr)?;
        let t_new = &macro_out.temperature;

        // (5)-(7) emission from T^{n+1}
        let mut sigma_new = Vec::new();
        p.opacity_field(t_new, &mut sigma_new).map_err(|e| serr(e.into()))?;
        let (mut b_new, mut d_new) = (Vec::new(), Vec::new());
        p.planck_field(t_new, &mut b_new, &mut d_new).map_err(|e| serr(e.into()))?;
        let planck_field: Vec<f64> =
            (0..cells * groups).map(|k| b_new[k] * p.consts.phi(t_new[k / groups])).collect();
        let emission_e: Vec<f64> = (0..cells * groups)
            .map(|k| sigma_new[k] * planck_field[k] * p.mesh.volume(k / groups) * dt)
            .collect();
        let tilt = self.settings.tilt.then(|| TiltField::from_field(&p.mesh, &planck_field, groups));
        let emission = sample_volume(
            &p.mesh,
            groups,
            &VolumeSource {
                energies: &emission_e,
                tag: SourceTag::Emission,
                t0,
                t1,
                tilt: tilt.as_ref(),
                stratified,
            },
            budget[3],
            &self.rng,
            step,
        );
        let emitted_used = if emission.particles.is_empty() { vec![0.0; cells * groups] } else { emission_e };
        for g in 0..groups {
            sampled[g] += emission.energy[g];
        }
        n_particles += emission.particles.len();

        // (8) track emission with σ(T^{n+1})
        let ctx = TrackContext { absorption: &sigma_new, ..ctx };
        let mut phase2 = TallySet::for_mesh(&p.mesh, groups);
        census.extend(track_batch(&ctx, emission.particles, &mut phase2).map_err(&terr)?);
        let mut total = phase1;
        total.add(&phase2);

        // (9) material update from tallies
        let mut temps = t_old;
        let (floored, added) = update_temperature(p, &mut temps, &total.absorbed, &emitted_used);
        let injected: f64 = boundary.energy.iter().sum();
        let leaked: f64 = total.leaked.iter().sum();
        let deficit = emitted_used.iter().sum::<f64>() - emission.energy.iter().sum::<f64>();
        let report = StepReport {
            picard_iterations: macro_out.iterations,
            picard_increments: macro_out.increments,
            sampled,
            absorbed: total.absorbed_by_group(),
            census: total.census_by_group(),
            leaked: total.leaked_by_group(),
            regrouping: false,
            particles: n_particles,
            events: total.events,
            scatters: total.scatters,
            floored,
            ..StepReport::default()
        };
        self.ledger.injected += injected;
        self.ledger.leaked += leaked;
        self.ledger.emission_deficit += deficit;
        self.ledger.floor += added;
        self.state.temperature = temps;
        self.store_census(census, step);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule_hits_end_time() {
        let s = RunSettings { dt: 0.1, t_end: 0.35, ..RunSettings::default() };
        assert_eq!(s.num_steps(), 4);
        assert_eq!(s.step_end(3), 0.30000000000000004);
        assert_eq!(s.step_end(4), 0.35);
        let s = RunSettings { dt: 0.0025, t_end: 0.25, ..RunSettings::default() };
        assert_eq!(s.num_steps(), 100);
        assert_eq!(s.step_end(100), 0.25);
        let s = RunSettings { t_end: 0.0, ..RunSettings::default() };
        assert_eq!(s.num_steps(), 0);
    }

    #[test]
    fn conservation_error_per_group() {
        let r = StepReport {
            sampled: vec![1.0, 2.0],
            absorbed: vec![0.5, 1.0],
            census: vec![0.5, 0.5],
            leaked: vec![0.0, 0.5],
            ..StepReport::default()
        };
        assert_eq!(r.conservation_error(), 0.0);
        let r = StepReport { regrouping: true, absorbed: vec![1.0, 0.5], ..r };
        assert_eq!(r.conservation_error(), 0.0);
    }
}
