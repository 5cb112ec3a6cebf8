//! Fleck–Cummings Implicit Monte Carlo baseline.

use crate::driver::{
    batch_energy, census_energy, class_budget, solver_err, transport_err, update_temperature, Simulation,
    StepReport,
};
use crate::error::Error;
use crate::macro_solver::BoundaryClosure;
use crate::transport::{
    sample_surface, sample_volume, track_batch, ScatterModel, SourceTag, SurfaceSource, TallySet, TiltField,
    TrackContext, VolumeSource,
};

/// Fully implicit Fleck factor f = 1/(1 + βcσ_PΔt).
pub fn fleck_factor(beta: f64, c: f64, sigma_p: f64, dt: f64) -> f64 {
    1.0 / (1.0 + beta * c * sigma_p * dt)
}

pub(crate) fn imc_step(sim: &mut Simulation, dt: f64) -> Result<StepReport, Error> {
    let step = sim.state.step + 1;
    let terr = transport_err(step);
    let serr = solver_err(step);
    let groups = sim.problem.groups();
    let cells = sim.problem.cells();
    let t0 = sim.state.time;
    let t1 = t0 + dt;
    let t_old = sim.state.temperature.clone();
    let stratified = sim.settings.stratified;
    let census_in = sim.take_census();
    let p = &sim.problem;
    let consts = &p.consts;

    let mut sigma = Vec::new();
    p.opacity_field(&t_old, &mut sigma).map_err(|e| serr(e.into()))?;
    let (mut b, mut dcoef) = (Vec::new(), Vec::new());
    p.planck_field(&t_old, &mut b, &mut dcoef).map_err(|e| serr(e.into()))?;

    let mut absorption = vec![0.0; cells * groups];
    let mut rate = vec![0.0; cells * groups];
    let mut cdf = vec![0.0; cells * groups];
    let mut emission_e = vec![0.0; cells * groups];
    let mut planck_field = vec![0.0; cells * groups];
    for i in 0..cells {
        let row = i * groups..(i + 1) * groups;
        let phi = consts.phi(t_old[i]);
        let sigma_p: f64 = sigma[row.clone()].iter().zip(&b[row.clone()]).map(|(s, x)| s * x).sum();
        let beta = 4.0 * consts.a * consts.c_planck * t_old[i].powi(3) / (consts.c * p.cv(i));
        let f = fleck_factor(beta, consts.c, sigma_p, dt);
        let mut acc = 0.0;
        for k in row.clone() {
            absorption[k] = f * sigma[k];
            rate[k] = (1.0 - f) * sigma[k];
            planck_field[k] = b[k] * phi;
            emission_e[k] = f * sigma[k] * planck_field[k] * p.mesh.volume(i) * dt;
            acc += sigma[k] * b[k];
            cdf[k] = acc;
        }
        if acc > 0.0 {
            cdf[row].iter_mut().for_each(|x| *x /= acc);
        }
    }
    let scatter = ScatterModel { rate, group_cdf: cdf };

    let closure = BoundaryClosure::build(p, &t_old).map_err(&serr)?;
    let faces = closure.face_ids();
    let inflow_e = closure.inflow_energies(p, dt);
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let budget = class_budget(&[sum(&inflow_e), sum(&emission_e)], sim.settings.particles);
    let boundary = sample_surface(
        &p.mesh,
        groups,
        &SurfaceSource { faces: &faces, energies: &inflow_e, tag: SourceTag::Boundary, t0, t1, stratified },
        budget[0],
        sim.rng(),
        step,
    );
    let tilt = sim.settings.imc_tilt.then(|| TiltField::from_field(&p.mesh, &planck_field, groups));
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
        budget[1],
        sim.rng(),
        step,
    );
    let emitted_used = if emission.particles.is_empty() { vec![0.0; cells * groups] } else { emission_e };
    let sampled = batch_energy(&[&census_in, &boundary, &emission], groups);
    let deficit = sum(&emitted_used) - sum(&emission.energy);
    let injected = sum(&boundary.energy);

    let ctx = TrackContext {
        mesh: &p.mesh,
        boundaries: &p.boundaries,
        groups,
        absorption: &absorption,
        scatter: Some(&scatter),
        c: consts.c,
        t_end: t1,
        step,
        rng: sim.rng(),
    };
    let mut tally = TallySet::for_mesh(&p.mesh, groups);
    let mut all = census_in.particles;
    all.extend(boundary.particles);
    all.extend(emission.particles);
    let n_particles = all.len();
    let census = track_batch(&ctx, all, &mut tally).map_err(&terr)?;

    let mut temps = t_old;
    let (floored, added) = update_temperature(p, &mut temps, &tally.absorbed, &emitted_used);
    debug_assert_eq!(census_energy(&census, cells, groups).len(), cells * groups);
    let report = StepReport {
        picard_iterations: 0,
        sampled,
        absorbed: tally.absorbed_by_group(),
        census: tally.census_by_group(),
        leaked: tally.leaked_by_group(),
        regrouping: true,
        particles: n_particles,
        events: tally.events,
        scatters: tally.scatters,
        floored,
        ..StepReport::default()
    };
    sim.ledger.injected += injected;
    sim.ledger.leaked += sum(&tally.leaked);
    sim.ledger.emission_deficit += deficit;
    sim.ledger.floor += added;
    sim.state.temperature = temps;
    sim.store_census(census, step);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fleck_factor_bounds() {
        assert_eq!(fleck_factor(1.0, 29.98, 0.0, 1.0), 1.0);
        let a = fleck_factor(0.5, 29.98, 10.0, 0.01);
        let b = fleck_factor(0.5, 29.98, 100.0, 0.01);
        assert!(a > b && b > 0.0 && a < 1.0);
        let thick = fleck_factor(2.0, 29.98, 1e4, 0.01);
        assert!((thick * 2.0 * 29.98 * 1e4 * 0.01 - 1.0).abs() < 1e-3);
    }
}
