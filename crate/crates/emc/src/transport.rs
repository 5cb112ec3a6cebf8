//! Particle sources, tracking with continuous deposition, and tallies.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::TransportError;
use crate::mesh::{BoundaryKind, BoundarySpec, Mesh, Side};
use crate::rng::{RngStream, StreamClass};

/// Particles are dropped once their weight falls below this fraction of
/// the birth weight; the remainder is deposited locally.
pub const KILL_FRACTION: f64 = 1e-4;

/// Hard cap on tracking events per particle.
pub const MAX_EVENTS: usize = 100_000_000;

/// Particles per deterministic work chunk.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Census,
    Boundary,
    GhostCensus,
    GhostBoundary,
    Emission,
}

impl SourceTag {
    pub fn is_ghost(self) -> bool {
        matches!(self, SourceTag::GhostCensus | SourceTag::GhostBoundary)
    }

    fn stream(self) -> StreamClass {
        match self {
            SourceTag::Census => StreamClass::Census,
            SourceTag::Boundary => StreamClass::Boundary,
            SourceTag::GhostCensus => StreamClass::GhostCensus,
            SourceTag::GhostBoundary => StreamClass::GhostBoundary,
            SourceTag::Emission => StreamClass::Emission,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pos: [f64; 2],
    /// 1D uses `dir[0] = μ`; 2D uses (ξ, η) with the out-of-plane
    /// component in `dir[2]`.
    pub dir: [f64; 3],
    pub group: u32,
    pub cell: u32,
    pub weight: f64,
    pub birth_weight: f64,
    pub time: f64,
    pub tag: SourceTag,
    /// Index within its source class for this step; keys the stream used
    /// for any in-flight random decisions.
    pub id: u64,
}

/// Per-step tallies. Energies in GJ; face entries hold summed signed
/// weights, which become fluxes after division by Δt.
#[derive(Debug, Clone, PartialEq)]
pub struct TallySet {
    pub groups: usize,
    /// E^I per `cell * G + g` (real particles reaching census).
    pub census: Vec<f64>,
    /// E^A per `cell * G + g`.
    pub absorbed: Vec<f64>,
    /// Signed real-particle weight crossing each face, per `face * G + g`.
    pub flux: Vec<f64>,
    /// Ghost weight crossing along +axis (nonnegative).
    pub ghost_plus: Vec<f64>,
    /// Ghost weight crossing along −axis, stored with its negative sign.
    pub ghost_minus: Vec<f64>,
    /// Real-particle leakage per `side * G + g`.
    pub leaked: Vec<f64>,
    pub events: u64,
    pub scatters: u64,
}

impl TallySet {
    pub fn new(cells: usize, faces: usize, groups: usize) -> Self {
        Self {
            groups,
            census: vec![0.0; cells * groups],
            absorbed: vec![0.0; cells * groups],
            flux: vec![0.0; faces * groups],
            ghost_plus: vec![0.0; faces * groups],
            ghost_minus: vec![0.0; faces * groups],
            leaked: vec![0.0; 4 * groups],
            events: 0,
            scatters: 0,
        }
    }

    pub fn for_mesh(mesh: &Mesh, groups: usize) -> Self {
        Self::new(mesh.num_cells(), mesh.num_faces(), groups)
    }

    pub fn clear(&mut self) {
        for v in [
            &mut self.census,
            &mut self.absorbed,
            &mut self.flux,
            &mut self.ghost_plus,
            &mut self.ghost_minus,
            &mut self.leaked,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.events = 0;
        self.scatters = 0;
    }

    /// Elementwise accumulate; the caller fixes the summation order.
    pub fn add(&mut self, other: &TallySet) {
        fn acc(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        acc(&mut self.census, &other.census);
        acc(&mut self.absorbed, &other.absorbed);
        acc(&mut self.flux, &other.flux);
        acc(&mut self.ghost_plus, &other.ghost_plus);
        acc(&mut self.ghost_minus, &other.ghost_minus);
        acc(&mut self.leaked, &other.leaked);
        self.events += other.events;
        self.scatters += other.scatters;
    }

    pub fn census_by_group(&self) -> Vec<f64> {
        by_group(&self.census, self.groups)
    }

    pub fn absorbed_by_group(&self) -> Vec<f64> {
        by_group(&self.absorbed, self.groups)
    }

    pub fn leaked_by_group(&self) -> Vec<f64> {
        by_group(&self.leaked, self.groups)
    }

    pub fn leaked_on(&self, side: Side) -> f64 {
        let g = self.groups;
        self.leaked[side.index() * g..(side.index() + 1) * g].iter().sum()
    }
}

/// Sums a `k * G + g` field over k.
pub fn by_group(field: &[f64], groups: usize) -> Vec<f64> {
    let mut out = vec![0.0; groups];
    for chunk in field.chunks(groups) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

/// Largest-remainder apportionment of `n` particles to buckets in
/// proportion to their energies. Ties go to the lower index.
pub fn allocate(energies: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = energies.iter().filter(|e| **e > 0.0).sum();
    let mut counts = vec![0usize; energies.len()];
    if n == 0 || !(total > 0.0) {
        return counts;
    }
    let mut assigned = 0usize;
    let mut rema: Vec<(f64, usize)> = Vec::with_capacity(energies.len());
    for (k, &e) in energies.iter().enumerate() {
        if e > 0.0 {
            let exact = e / total * n as f64;
            let whole = exact.floor();
            counts[k] = whole as usize;
            assigned += counts[k];
            rema.push((exact - whole, k));
        }
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in rema.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Per-particle weight for each bucket. Energy of buckets that received
/// no particles is moved to the largest-energy bucket that did.
pub fn bucket_weights(energies: &[f64], counts: &[usize]) -> Vec<f64> {
    let mut residual = 0.0;
    let mut largest: Option<usize> = None;
    for (k, (&e, &n)) in energies.iter().zip(counts).enumerate() {
        if n == 0 {
            if e > 0.0 {
                residual += e;
            }
        } else if largest.is_none_or(|l| e > energies[l]) {
            largest = Some(k);
        }
    }
    let mut w: Vec<f64> =
        energies.iter().zip(counts).map(|(&e, &n)| if n > 0 { e / n as f64 } else { 0.0 }).collect();
    if let Some(l) = largest {
        w[l] = (energies[l] + residual) / counts[l] as f64;
    }
    w
}

pub fn isotropic(dim: usize, rng: &mut impl Rng) -> [f64; 3] {
    isotropic_from(dim, rng.gen(), rng.gen())
}

/// Isotropic direction from two uniforms (μ, azimuth).
pub fn isotropic_from(dim: usize, u_mu: f64, u_phi: f64) -> [f64; 3] {
    let mu = 2.0 * u_mu - 1.0;
    if dim == 1 {
        return [mu, 0.0, 0.0];
    }
    let phi = 2.0 * PI * u_phi;
    let s = (1.0 - mu * mu).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), mu]
}

/// Direction entering the domain through `side`, distributed ∝ |Ω·n|.
pub fn inward(side: Side, dim: usize, rng: &mut impl Rng) -> [f64; 3] {
    inward_from(side, dim, rng.gen(), rng.gen())
}

pub fn inward_from(side: Side, dim: usize, u_cos: f64, u_phi: f64) -> [f64; 3] {
    let cos = u_cos.sqrt();
    let normal = -side.outward_sign() * cos;
    if dim == 1 {
        return [normal, 0.0, 0.0];
    }
    let phi = 2.0 * PI * u_phi;
    let s = (1.0 - cos * cos).max(0.0).sqrt();
    let (t1, t2) = (s * phi.cos(), s * phi.sin());
    match side.axis() {
        0 => [normal, t1, t2],
        _ => [t1, normal, t2],
    }
}

/// Additive-recurrence steps 1/g^(d+1), with g the real root of x⁴ = x + 1
/// (slabs: direction, x, time).
const KRONECKER_1D: [f64; 3] = [0.8191725133961645, 0.6710436067037893, 0.5497004779019703];

/// As above with g the real root of x⁶ = x + 1 (grids: all five coordinates).
const KRONECKER_2D: [f64; 5] =
    [0.8812714616335696, 0.7766393890897682, 0.6844301295853426, 0.6031687406857282, 0.5315553977157913];

/// Point `j` of a bucket's randomly shifted Kronecker set. Each point is
/// uniform on the unit cube for a uniform shift, while the set as a whole
/// is spread far more evenly than independent draws. Coordinates are used
/// as [direction, x, time, azimuth, y].
pub fn bucket_point(shift: &[f64; 5], j: usize, dim: usize) -> [f64; 5] {
    let steps: &[f64] = if dim == 1 { &KRONECKER_1D } else { &KRONECKER_2D };
    let mut q = *shift;
    for (d, a) in steps.iter().enumerate() {
        q[d] = (shift[d] + j as f64 * a).fract();
    }
    q
}

fn bucket_shift(rng: &RngStream, step: u64, tag: SourceTag, b: usize) -> [f64; 5] {
    let mut r = rng.bucket(step, tag.stream(), b as u64);
    [r.gen(), r.gen(), r.gen(), r.gen(), r.gen()]
}

/// Unit-cube point for particle `k`, the `j`-th of bucket `b`.
#[allow(clippy::too_many_arguments)]
fn source_point(
    rng: &RngStream,
    step: u64,
    tag: SourceTag,
    b: usize,
    j: usize,
    k: usize,
    dim: usize,
    stratified: bool,
) -> [f64; 5] {
    if stratified {
        bucket_point(&bucket_shift(rng, step, tag, b), j, dim)
    } else {
        let mut r = rng.particle(step, tag.stream(), k as u64);
        [r.gen(), r.gen(), r.gen(), r.gen(), r.gen()]
    }
}

/// Clamps a source slope so the tilted PDF stays nonnegative.
pub fn clamp_slope(s: f64, mean: f64, width: f64) -> f64 {
    let limit = 2.0 * mean.max(0.0) / width;
    s.clamp(-limit, limit)
}

/// Dimensionless tilt k = sΔx/B̄ of a clamped slope. Clamping k again keeps
/// rounding from pushing |k| past 2.
pub fn tilt_factor(s: f64, mean: f64, width: f64) -> f64 {
    (clamp_slope(s, mean, width) * width / mean).clamp(-2.0, 2.0)
}

/// Tilted PDF on the cell in units of 1/Δx, as a function of the relative
/// coordinate r = (x − x_i)/Δx ∈ [−½, ½] and k = sΔx/B̄.
pub fn tilted_pdf(r: f64, k: f64) -> f64 {
    1.0 + k * r
}

/// Inverse-CDF sample of the tilted PDF; |k| ≤ 2.
pub fn sample_tilted(u: f64, k: f64) -> f64 {
    let q = u - 0.5 + k / 8.0;
    let disc = (1.0 + 2.0 * k * q).max(0.0);
    (2.0 * q / (1.0 + disc.sqrt())).clamp(-0.5, 0.5)
}

/// Dimensionless one-sided tilt slopes k = sΔx/B̄ per `cell * G + g`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltField {
    pub groups: usize,
    /// [axis][0 = backward, 1 = forward]
    pub k: [[Vec<f64>; 2]; 2],
}

impl TiltField {
    /// One-sided slopes of a cell-average field. Domain edges get zero
    /// slope on the side without a neighbour.
    pub fn from_field(mesh: &Mesh, field: &[f64], groups: usize) -> Self {
        let n = mesh.num_cells() * groups;
        let mut k = [[vec![0.0; n], vec![0.0; n]], [vec![0.0; n], vec![0.0; n]]];
        for cell in 0..mesh.num_cells() {
            let w = mesh.width(cell);
            for axis in 0..mesh.dimension() {
                for (dir, high) in [(0usize, false), (1usize, true)] {
                    let f = mesh.cell_face(cell, axis, high);
                    let Some(nb) = mesh.neighbor(cell, f) else { continue };
                    let dist = 0.5 * (w[axis] + mesh.width(nb)[axis]);
                    for g in 0..groups {
                        let mean = field[cell * groups + g];
                        if !(mean > 0.0) {
                            continue;
                        }
                        let other = field[nb * groups + g];
                        let s = if high { (other - mean) / dist } else { (mean - other) / dist };
                        k[axis][dir][cell * groups + g] = tilt_factor(s, mean, w[axis]);
                    }
                }
            }
        }
        Self { groups, k }
    }

    /// Slopes selected by direction sign, jointly scaled in 2D so that
    /// |k_x| + |k_y| ≤ 2.
    pub fn select(&self, idx: usize, dir: &[f64; 3], dim: usize) -> [f64; 2] {
        let kx = self.k[0][(dir[0] > 0.0) as usize][idx];
        if dim == 1 {
            return [kx, 0.0];
        }
        let ky = self.k[1][(dir[1] > 0.0) as usize][idx];
        let sum = kx.abs() + ky.abs();
        if sum > 2.0 {
            [2.0 * kx / sum, 2.0 * ky / sum]
        } else {
            [kx, ky]
        }
    }
}

/// Position inside a cell, uniform or linearly tilted.
pub fn sample_in_cell(mesh: &Mesh, cell: usize, k: [f64; 2], rng: &mut impl Rng) -> [f64; 2] {
    sample_in_cell_from(mesh, cell, k, rng.gen(), rng.gen())
}

pub fn sample_in_cell_from(mesh: &Mesh, cell: usize, k: [f64; 2], ux: f64, uy: f64) -> [f64; 2] {
    let o = mesh.origin(cell);
    let w = mesh.width(cell);
    let rx = sample_tilted(ux, k[0]);
    let x = (o[0] + (rx + 0.5) * w[0]).clamp(o[0], o[0] + w[0]);
    if mesh.dimension() == 1 {
        return [x, 0.0];
    }
    // conditional of y given x for the linear PDF 1 + kx rx + ky ry
    let ky = k[1] / (1.0 + k[0] * rx).max(f64::MIN_POSITIVE);
    let ry = sample_tilted(uy, ky.clamp(-2.0, 2.0));
    let y = (o[1] + (ry + 0.5) * w[1]).clamp(o[1], o[1] + w[1]);
    [x, y]
}

/// A batch of newly sampled particles with its energy bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct SourceBatch {
    pub particles: Vec<Particle>,
    /// Sampled energy per group (sum of birth weights).
    pub energy: Vec<f64>,
}

/// Source buckets defined on (cell, group) pairs.
pub struct VolumeSource<'a> {
    pub energies: &'a [f64],
    pub tag: SourceTag,
    /// Birth times uniform in [t0, t1]; a point if t0 == t1.
    pub t0: f64,
    pub t1: f64,
    pub tilt: Option<&'a TiltField>,
    /// Spread each bucket's particles with a shifted Kronecker set instead
    /// of independent draws.
    pub stratified: bool,
}

/// Source buckets defined on (boundary face, group) pairs.
pub struct SurfaceSource<'a> {
    /// Face index for each bucket row; `energies` is `row * G + g`.
    pub faces: &'a [usize],
    pub energies: &'a [f64],
    pub tag: SourceTag,
    pub t0: f64,
    pub t1: f64,
    pub stratified: bool,
}

fn bucket_of(prefix: &[usize], k: usize) -> usize {
    prefix.partition_point(|&p| p <= k) - 1
}

fn prefix_sum(counts: &[usize]) -> Vec<usize> {
    let mut p = Vec::with_capacity(counts.len() + 1);
    p.push(0);
    let mut acc = 0;
    for &c in counts {
        acc += c;
        p.push(acc);
    }
    p
}

pub fn sample_volume(
    mesh: &Mesh,
    groups: usize,
    src: &VolumeSource<'_>,
    n: usize,
    rng: &RngStream,
    step: u64,
) -> SourceBatch {
    let counts = allocate(src.energies, n);
    let weights = bucket_weights(src.energies, &counts);
    let prefix = prefix_sum(&counts);
    let total = prefix[prefix.len() - 1];
    let dim = mesh.dimension();
    let particles: Vec<Particle> = (0..total)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|k| {
            let b = bucket_of(&prefix, k);
            let (cell, g) = (b / groups, b % groups);
            let q = source_point(rng, step, src.tag, b, k - prefix[b], k, dim, src.stratified);
            let dir = isotropic_from(dim, q[0], q[3]);
            let slopes = src.tilt.map_or([0.0, 0.0], |t| t.select(b, &dir, dim));
            let pos = sample_in_cell_from(mesh, cell, slopes, q[1], q[4]);
            let time = src.t0 + (src.t1 - src.t0) * q[2];
            Particle {
                pos,
                dir,
                group: g as u32,
                cell: cell as u32,
                weight: weights[b],
                birth_weight: weights[b],
                time,
                tag: src.tag,
                id: k as u64,
            }
        })
        .collect();
    let energy = group_energy(&particles, groups);
    SourceBatch { particles, energy }
}

pub fn sample_surface(
    mesh: &Mesh,
    groups: usize,
    src: &SurfaceSource<'_>,
    n: usize,
    rng: &RngStream,
    step: u64,
) -> SourceBatch {
    let counts = allocate(src.energies, n);
    let weights = bucket_weights(src.energies, &counts);
    let prefix = prefix_sum(&counts);
    let total = prefix[prefix.len() - 1];
    let dim = mesh.dimension();
    let particles: Vec<Particle> = (0..total)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|k| {
            let b = bucket_of(&prefix, k);
            let (row, g) = (b / groups, b % groups);
            let face = mesh.face(src.faces[row]);
            let side = face.side.expect("surface sources live on boundary faces");
            let cell = face.interior_cell();
            let q = source_point(rng, step, src.tag, b, k - prefix[b], k, dim, src.stratified);
            let dir = inward_from(side, dim, q[0], q[3]);
            let mut pos = [face.coord, 0.0];
            if dim == 2 {
                let o = mesh.origin(cell);
                let w = mesh.width(cell);
                let along = 1 - face.axis;
                pos[face.axis] = face.coord;
                pos[along] = (o[along] + w[along] * q[1]).clamp(o[along], o[along] + w[along]);
            }
            let time = src.t0 + (src.t1 - src.t0) * q[2];
            Particle {
                pos,
                dir,
                group: g as u32,
                cell: cell as u32,
                weight: weights[b],
                birth_weight: weights[b],
                time,
                tag: src.tag,
                id: k as u64,
            }
        })
        .collect();
    let energy = group_energy(&particles, groups);
    SourceBatch { particles, energy }
}

pub fn group_energy(particles: &[Particle], groups: usize) -> Vec<f64> {
    let mut e = vec![0.0; groups];
    for p in particles {
        e[p.group as usize] += p.weight;
    }
    e
}

/// Effective scattering used by the IMC baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterModel {
    /// (1 − f)σ_g per `cell * G + g`.
    pub rate: Vec<f64>,
    /// Normalized cumulative re-emission spectrum per `cell * G + g`.
    pub group_cdf: Vec<f64>,
}

pub struct TrackContext<'a> {
    pub mesh: &'a Mesh,
    pub boundaries: &'a BoundarySpec,
    pub groups: usize,
    /// Continuous-deposition opacity per `cell * G + g`.
    pub absorption: &'a [f64],
    pub scatter: Option<&'a ScatterModel>,
    pub c: f64,
    pub t_end: f64,
    pub step: u64,
    pub rng: &'a RngStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Census,
    Killed,
    Leaked,
}

enum Event {
    Face { axis: usize, high: bool },
    Census,
    Kill,
    Scatter,
}

/// Tracks one particle to census, leakage or termination.
pub fn track(
    ctx: &TrackContext<'_>,
    p: &mut Particle,
    rng: &mut ChaCha8Rng,
    tally: &mut TallySet,
) -> Result<Fate, TransportError> {
    let mesh = ctx.mesh;
    let dim = mesh.dimension();
    let groups = ctx.groups;
    let ghost = p.tag.is_ghost();
    let threshold = KILL_FRACTION * p.birth_weight;
    let mut cell = p.cell as usize;
    let mut origin = mesh.origin(cell);
    let mut width = mesh.width(cell);
    for _ in 0..MAX_EVENTS {
        tally.events += 1;
        let g = p.group as usize;
        let idx = cell * groups + g;
        let sigma = ctx.absorption[idx];

        let mut d = f64::INFINITY;
        let mut event = Event::Census;
        for axis in 0..dim {
            let u = p.dir[axis];
            let (dist, high) = if u > 0.0 {
                ((origin[axis] + width[axis] - p.pos[axis]) / u, true)
            } else if u < 0.0 {
                ((origin[axis] - p.pos[axis]) / u, false)
            } else {
                continue;
            };
            let dist = dist.max(0.0);
            if dist < d {
                d = dist;
                event = Event::Face { axis, high };
            }
        }
        let d_census = (ctx.c * (ctx.t_end - p.time)).max(0.0);
        if d_census <= d {
            d = d_census;
            event = Event::Census;
        }
        if sigma > 0.0 {
            let d_kill = (p.weight / threshold).ln() / sigma;
            if d_kill < d {
                d = d_kill.max(0.0);
                event = Event::Kill;
            }
        }
        if let Some(sc) = ctx.scatter {
            let rate = sc.rate[idx];
            if rate > 0.0 {
                let d_s = -(1.0 - rng.gen::<f64>()).ln() / rate;
                if d_s < d {
                    d = d_s;
                    event = Event::Scatter;
                }
            }
        }

        let deposit = if sigma > 0.0 { -p.weight * (-sigma * d).exp_m1() } else { 0.0 };
        p.weight -= deposit;
        if !ghost {
            tally.absorbed[idx] += deposit;
        }
        for axis in 0..dim {
            p.pos[axis] += d * p.dir[axis];
        }
        p.time += d / ctx.c;

        match event {
            Event::Census => {
                p.time = ctx.t_end;
                if !ghost {
                    tally.census[idx] += p.weight;
                }
                p.cell = cell as u32;
                return Ok(Fate::Census);
            }
            Event::Kill => {
                if !ghost {
                    tally.absorbed[idx] += p.weight;
                }
                p.weight = 0.0;
                return Ok(Fate::Killed);
            }
            Event::Scatter => {
                let sc = ctx.scatter.expect("scatter event requires a model");
                tally.scatters += 1;
                p.dir = isotropic(dim, rng);
                let cdf = &sc.group_cdf[cell * groups..(cell + 1) * groups];
                let u: f64 = rng.gen();
                p.group = cdf.partition_point(|&c| c <= u).min(groups - 1) as u32;
            }
            Event::Face { axis, high } => {
                let f = mesh.cell_face(cell, axis, high);
                let face = mesh.face(f);
                p.pos[axis] = face.coord;
                let next = mesh.neighbor(cell, f);
                if next.is_none() {
                    let side = face.side.ok_or(TransportError::Escaped { cell, position: p.pos })?;
                    if let BoundaryKind::Reflective = ctx.boundaries.get(side) {
                        p.dir[axis] = -p.dir[axis];
                        continue;
                    }
                }
                let fidx = f * groups + g;
                if ghost {
                    if high {
                        tally.ghost_plus[fidx] += p.weight;
                    } else {
                        tally.ghost_minus[fidx] -= p.weight;
                    }
                } else {
                    tally.flux[fidx] += if high { p.weight } else { -p.weight };
                }
                match next {
                    Some(n) => {
                        cell = n;
                        origin = mesh.origin(cell);
                        width = mesh.width(cell);
                        check_inside(mesh, cell, p)?;
                    }
                    None => {
                        if !ghost {
                            let side = face.side.expect("checked above");
                            tally.leaked[side.index() * groups + g] += p.weight;
                        }
                        p.weight = 0.0;
                        return Ok(Fate::Leaked);
                    }
                }
            }
        }
    }
    Err(TransportError::Runaway(MAX_EVENTS))
}

fn check_inside(mesh: &Mesh, cell: usize, p: &Particle) -> Result<(), TransportError> {
    let o = mesh.origin(cell);
    let w = mesh.width(cell);
    for axis in 0..mesh.dimension() {
        let tol = 1e-9 * w[axis];
        if p.pos[axis] < o[axis] - tol || p.pos[axis] > o[axis] + w[axis] + tol || !p.pos[axis].is_finite() {
            return Err(TransportError::Escaped { cell, position: p.pos });
        }
    }
    Ok(())
}

/// Tracks a batch in fixed-size chunks and returns the census survivors
/// in input order. Tallies are accumulated chunk by chunk in order, so the
/// result is independent of the thread count.
pub fn track_batch(
    ctx: &TrackContext<'_>,
    particles: Vec<Particle>,
    tally: &mut TallySet,
) -> Result<Vec<Particle>, TransportError> {
    let cells = ctx.mesh.num_cells();
    let faces = ctx.mesh.num_faces();
    let wave = rayon::current_num_threads().max(1);
    let mut census = Vec::new();
    let mut scratch: Vec<TallySet> = Vec::new();
    let chunks: Vec<&[Particle]> = particles.chunks(CHUNK).collect();
    for wave_chunks in chunks.chunks(wave) {
        while scratch.len() < wave_chunks.len() {
            scratch.push(TallySet::new(cells, faces, ctx.groups));
        }
        let results: Vec<Result<Vec<Particle>, TransportError>> = wave_chunks
            .par_iter()
            .zip(scratch.par_iter_mut())
            .map(|(chunk, local)| {
                local.clear();
                let mut survivors = Vec::new();
                for p in chunk.iter() {
                    let mut q = *p;
                    let mut rng = ctx.rng.tracking(ctx.step, q.tag.stream(), q.id);
                    if track(ctx, &mut q, &mut rng, local)? == Fate::Census {
                        survivors.push(q);
                    }
                }
                Ok(survivors)
            })
            .collect();
        for (res, local) in results.into_iter().zip(scratch.iter()) {
            census.extend(res?);
            tally.add(local);
        }
    }
    Ok(census)
}

/// Turns carried census particles into this step's census source,
/// reindexing them in list order.
pub fn relabel_census(census: &mut [Particle]) {
    for (k, p) in census.iter_mut().enumerate() {
        p.tag = SourceTag::Census;
        p.id = k as u64;
    }
}

/// Weight-window roulette on the census list: in each (cell, group)
/// bucket, particles lighter than the bucket's target weight survive with
/// probability w/target and are promoted to the target. Expected energy
/// per bucket is preserved. Returns the energy change (new − old).
pub fn roulette_census(
    census: &mut Vec<Particle>,
    cells: usize,
    groups: usize,
    target_count: usize,
    rng: &RngStream,
    step: u64,
) -> f64 {
    if census.len() <= target_count || target_count == 0 {
        return 0.0;
    }
    let mut energy = vec![0.0; cells * groups];
    let mut count = vec![0usize; cells * groups];
    for p in census.iter() {
        let b = p.cell as usize * groups + p.group as usize;
        energy[b] += p.weight;
        count[b] += 1;
    }
    let total: f64 = energy.iter().sum();
    let before = total;
    let mut out = Vec::with_capacity(target_count);
    for (k, p) in census.iter().enumerate() {
        let b = p.cell as usize * groups + p.group as usize;
        // bucket share of the target population, at least one particle
        let share = ((energy[b] / total) * target_count as f64).max(1.0);
        let w_target = energy[b] / share.min(count[b] as f64);
        if p.weight >= w_target {
            out.push(*p);
            continue;
        }
        let mut r = rng.particle(step, StreamClass::Roulette, k as u64);
        if r.gen::<f64>() < p.weight / w_target {
            let mut q = *p;
            q.weight = w_target;
            q.birth_weight = q.birth_weight.max(w_target);
            out.push(q);
        }
    }
    *census = out;
    census.iter().map(|p| p.weight).sum::<f64>() - before
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Geometry, SlabRegion};

    fn slab(n: usize, len: f64) -> Mesh {
        Mesh::build(&Geometry::Slab {
            regions: vec![SlabRegion { x0: 0.0, x1: len, cells: Some(n), dx: None, material: 0 }],
        })
        .unwrap()
    }

    fn ctx<'a>(
        mesh: &'a Mesh,
        b: &'a BoundarySpec,
        sigma: &'a [f64],
        rng: &'a RngStream,
    ) -> TrackContext<'a> {
        TrackContext {
            mesh,
            boundaries: b,
            groups: 1,
            absorption: sigma,
            scatter: None,
            c: 1.0,
            t_end: 100.0,
            step: 0,
            rng,
        }
    }

    fn particle(x: f64, mu: f64, w: f64, cell: u32) -> Particle {
        Particle {
            pos: [x, 0.0],
            dir: [mu, 0.0, 0.0],
            group: 0,
            cell,
            weight: w,
            birth_weight: w,
            time: 0.0,
            tag: SourceTag::Emission,
            id: 0,
        }
    }

    #[test]
    fn free_streaming_crosses_unchanged() {
        let mesh = slab(2, 2.0);
        let b = BoundarySpec { left: BoundaryKind::Vacuum, ..BoundarySpec::reflective() };
        let b = BoundarySpec { right: BoundaryKind::Vacuum, ..b };
        let sigma = [0.0, 0.0];
        let rng = RngStream::new(1);
        let c = ctx(&mesh, &b, &sigma, &rng);
        let mut t = TallySet::for_mesh(&mesh, 1);
        let mut p = particle(0.5, 1.0, 1.0, 0);
        let fate = track(&c, &mut p, &mut rng.particle(0, StreamClass::Emission, 0), &mut t).unwrap();
        assert_eq!(fate, Fate::Leaked);
        assert_eq!(t.flux[1], 1.0);
        assert_eq!(t.flux[2], 1.0);
        assert_eq!(t.leaked_on(Side::Right), 1.0);
        assert_eq!(t.absorbed[0], 0.0);
    }

    #[test]
    fn deposits_half_over_ln2() {
        let mesh = slab(2, 2.0);
        let b = BoundarySpec::reflective();
        let sigma = [std::f64::consts::LN_2, 0.0];
        let rng = RngStream::new(1);
        let mut c = ctx(&mesh, &b, &sigma, &rng);
        c.t_end = 1.5;
        let mut t = TallySet::for_mesh(&mesh, 1);
        let mut p = particle(0.0, 1.0, 2.0, 0);
        let fate = track(&c, &mut p, &mut rng.particle(0, StreamClass::Emission, 0), &mut t).unwrap();
        assert_eq!(fate, Fate::Census);
        assert!((t.absorbed[0] - 1.0).abs() < 1e-15);
        assert!((t.flux[1] - 1.0).abs() < 1e-15);
        assert!((t.census[1] - 1.0).abs() < 1e-15);
        assert!((p.pos[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn termination_rule() {
        let mesh = slab(1, 100.0);
        let b = BoundarySpec::reflective();
        let sigma = [1.0];
        let rng = RngStream::new(1);
        let c = ctx(&mesh, &b, &sigma, &rng);
        let mut t = TallySet::for_mesh(&mesh, 1);
        let mut p = particle(1.0, 1.0, 1.0, 0);
        let fate = track(&c, &mut p, &mut rng.particle(0, StreamClass::Emission, 0), &mut t).unwrap();
        assert_eq!(fate, Fate::Killed);
        // continuous part deposits 1 − 1e-4, the residual is dropped locally
        assert!((p.pos[0] - 1.0 - 1e4f64.ln()).abs() < 1e-12);
        assert!((t.absorbed[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reflection_does_not_tally() {
        let mesh = slab(1, 1.0);
        let b = BoundarySpec::reflective();
        let sigma = [0.0];
        let rng = RngStream::new(1);
        let mut c = ctx(&mesh, &b, &sigma, &rng);
        c.t_end = 3.25;
        let mut t = TallySet::for_mesh(&mesh, 1);
        let mut p = particle(0.5, 1.0, 1.0, 0);
        track(&c, &mut p, &mut rng.particle(0, StreamClass::Emission, 0), &mut t).unwrap();
        assert_eq!(t.flux, vec![0.0, 0.0]);
        assert!((p.pos[0] - 0.25).abs() < 1e-12);
        assert!(p.dir[0] < 0.0);
    }

    #[test]
    fn ghosts_only_touch_ghost_tallies() {
        let mesh = slab(3, 3.0);
        let b = BoundarySpec {
            left: BoundaryKind::Vacuum,
            right: BoundaryKind::Vacuum,
            ..BoundarySpec::reflective()
        };
        let sigma = [0.3; 3];
        let rng = RngStream::new(1);
        let mut c = ctx(&mesh, &b, &sigma, &rng);
        c.t_end = 2.0;
        let mut t = TallySet::for_mesh(&mesh, 1);
        for (mu, tag) in
            [(1.0, SourceTag::GhostCensus), (-1.0, SourceTag::GhostBoundary), (0.3, SourceTag::GhostCensus)]
        {
            let mut p = particle(1.5, mu, 1.0, 1);
            p.tag = tag;
            track(&c, &mut p, &mut rng.particle(0, StreamClass::Emission, 0), &mut t).unwrap();
        }
        assert!(t.absorbed.iter().chain(&t.census).chain(&t.leaked).chain(&t.flux).all(|&v| v == 0.0));
        assert!(t.ghost_plus[2] > 0.0 && t.ghost_minus[1] < 0.0);
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(&[3.0, 1.0], 4), vec![3, 1]);
        assert_eq!(allocate(&[1.0, 1.0, 1.0], 2), vec![1, 1, 0]);
        assert_eq!(allocate(&[0.0, 0.0], 5), vec![0, 0]);
        let w = bucket_weights(&[1.0, 1.0, 1.0], &[1, 1, 0]);
        assert_eq!(w, vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn tilted_sampling_limits() {
        assert_eq!(sample_tilted(0.25, 0.0), -0.25);
        // k = 2: pdf 1 + 2r vanishes at r = -1/2
        assert!((sample_tilted(0.0, 2.0) + 0.5).abs() < 1e-15);
        assert!((sample_tilted(1.0, -2.0) - 0.5).abs() < 1e-15);
        assert_eq!(clamp_slope(10.0, 1.0, 0.5), 4.0);
        assert_eq!(tilted_pdf(0.5, 2.0), 2.0);
        assert_eq!(tilted_pdf(-0.5, 2.0), 0.0);
    }
}
