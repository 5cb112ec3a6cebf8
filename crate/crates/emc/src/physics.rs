//! Planck integrals, multigroup coefficients and opacity models.
//!
//! Photon energies `e` and temperatures `T` are both in keV, so the
//! dimensionless frequency is `x = e / T`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::PhysicsError;

/// 15/π⁴, the normalization of ∫₀^∞ x³/(eˣ−1) dx.
const PLANCK_NORM: f64 = 15.0 / (PI * PI * PI * PI);

/// Split point between the small-x Bernoulli series and the large-x
/// exponential series for the incomplete Planck integral.
const SERIES_SPLIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Particle speed in cm/ns.
    pub c: f64,
    /// Radiation constant in GJ/cm³/keV⁴.
    pub a: f64,
    /// Light speed entering the Planck normalization `∫B = a c T⁴/4π`.
    ///
    /// Equal to `c` except under the diffusive scaling used by the
    /// asymptotic tests, where only the transport speed is scaled.
    pub c_planck: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { c: 29.98, a: 0.01372, c_planck: 29.98 }
    }
}

impl PhysicalConstants {
    /// `a c T⁴` with the Planck light speed.
    pub fn phi(&self, t: f64) -> f64 {
        self.a * self.c_planck * t.powi(4)
    }

    /// Inverse of [`phi`](Self::phi); nonpositive input maps to zero.
    pub fn temperature_from_phi(&self, phi: f64) -> f64 {
        if phi <= 0.0 {
            0.0
        } else {
            (phi / (self.a * self.c_planck)).powf(0.25)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSpacing {
    Logarithmic,
    Explicit,
}

/// Photon-energy group edges in keV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGroupGrid {
    edges: Vec<f64>,
    spacing: GroupSpacing,
}

impl FrequencyGroupGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self, PhysicsError> {
        if edges.len() < 2 {
            return Err(PhysicsError::InvalidGrid("at least one group (two edges) is required".into()));
        }
        if edges.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(PhysicsError::InvalidGrid("group edges must be positive and finite".into()));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PhysicsError::InvalidGrid("group edges must be strictly increasing".into()));
        }
        Ok(Self { edges, spacing: GroupSpacing::Explicit })
    }

    pub fn logarithmic(groups: usize, e_min: f64, e_max: f64) -> Result<Self, PhysicsError> {
        if groups == 0 {
            return Err(PhysicsError::InvalidGrid("group count must be >= 1".into()));
        }
        if !(e_min > 0.0) || !(e_max > e_min) {
            return Err(PhysicsError::InvalidGrid(format!("need 0 < e_min < e_max, got [{e_min}, {e_max}]")));
        }
        let (l0, l1) = (e_min.ln(), e_max.ln());
        let mut edges: Vec<f64> =
            (0..=groups).map(|k| (l0 + (l1 - l0) * k as f64 / groups as f64).exp()).collect();
        edges[0] = e_min;
        edges[groups] = e_max;
        let mut grid = Self::new(edges)?;
        grid.spacing = GroupSpacing::Logarithmic;
        Ok(grid)
    }

    /// Single group spanning `[1e-6, 1e4]` keV, enough to hold the whole
    /// spectrum for temperatures between roughly 1e-3 and 10 keV.
    pub fn gray() -> Self {
        Self::new(vec![1e-6, 1e4]).expect("static gray grid")
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn spacing(&self) -> GroupSpacing {
        self.spacing
    }

    pub fn bounds(&self, g: usize) -> (f64, f64) {
        (self.edges[g], self.edges[g + 1])
    }
}

fn check_temperature(t: f64) -> Result<(), PhysicsError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(PhysicsError::Domain { quantity: "temperature", value: t })
    }
}

/// Spectral Planck intensity B(e, T), normalized so ∫₀^∞ B de = acT⁴/4π.
pub fn planck(e: f64, t: f64, consts: &PhysicalConstants) -> Result<f64, PhysicsError> {
    if !(e > 0.0) {
        return Err(PhysicsError::Domain { quantity: "photon energy", value: e });
    }
    check_temperature(t)?;
    let k = PLANCK_NORM * consts.a * consts.c_planck / (4.0 * PI);
    Ok(k * e.powi(3) / (e / t).exp_m1())
}

/// Even Bernoulli coefficients B_{2m}/(2m)! for m = 1.., computed from ζ(2m).
fn bernoulli_over_factorial() -> &'static [f64] {
    use std::sync::OnceLock;
    static COEFFS: OnceLock<Vec<f64>> = OnceLock::new();
    COEFFS.get_or_init(|| {
        (1..=30)
            .map(|m| {
                let two_m = 2 * m;
                let s = two_m as f64;
                let n = 64.0_f64;
                let head: f64 = (1..64).map(|k| (k as f64).powi(-two_m)).sum();
                // Euler–Maclaurin tail from n to infinity
                let tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s * n.powf(-s - 1.0) / 12.0
                    - s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0;
                let zeta = head + tail;
                let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
                sign * 2.0 * zeta / (2.0 * PI).powi(two_m)
            })
            .collect()
    })
}

/// (15/π⁴) ∫₀^x t³/(eᵗ−1) dt for `x <= SERIES_SPLIT`.
fn lower_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let x2 = x * x;
    let mut sum = x * x2 / 3.0 - x2 * x2 / 8.0;
    let mut pow = x2 * x; // x^{2m+3} starts at x^5
    for (k, c) in bernoulli_over_factorial().iter().enumerate() {
        pow *= x2;
        let denom = (2 * (k + 1) + 3) as f64;
        let term = c * pow / denom;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    PLANCK_NORM * sum
}

/// (15/π⁴) ∫ₓ^∞ t³/(eᵗ−1) dt for `x >= SERIES_SPLIT`.
fn upper_tail(x: f64) -> f64 {
    let mut sum = 0.0;
    for n in 1..200 {
        let nf = n as f64;
        let decay = (-nf * x).exp();
        if decay == 0.0 {
            break;
        }
        let poly = x * x * x / nf + 3.0 * x * x / (nf * nf) + 6.0 * x / nf.powi(3) + 6.0 / nf.powi(4);
        let term = decay * poly;
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    PLANCK_NORM * sum
}

/// Normalized Planck mass between `x1 < x2`, evaluated without
/// cancellation in either tail.
fn planck_mass(x1: f64, x2: f64) -> f64 {
    if x2 <= x1 {
        return 0.0;
    }
    if x1 >= SERIES_SPLIT {
        upper_tail(x1) - upper_tail(x2)
    } else if x2 <= SERIES_SPLIT {
        lower_tail(x2) - lower_tail(x1)
    } else {
        (lower_tail(SERIES_SPLIT) - lower_tail(x1)) + (upper_tail(SERIES_SPLIT) - upper_tail(x2))
    }
}

/// x⁴/(eˣ−1), the Leibniz boundary term of the group derivative.
fn edge_term(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let d = x.exp_m1();
    if d.is_infinite() {
        0.0
    } else {
        x.powi(4) / d
    }
}

/// b_g = 4πB_g/(acT⁴).
pub fn group_fraction(grid: &FrequencyGroupGrid, g: usize, t: f64) -> Result<f64, PhysicsError> {
    check_temperature(t)?;
    let (e1, e2) = grid.bounds(g);
    Ok(planck_mass(e1 / t, e2 / t))
}

/// B_g(T) = ∫ B de over group g.
pub fn group_planck(
    grid: &FrequencyGroupGrid,
    g: usize,
    t: f64,
    consts: &PhysicalConstants,
) -> Result<f64, PhysicsError> {
    Ok(group_fraction(grid, g, t)? * consts.phi(t) / (4.0 * PI))
}

/// The coefficient b_g + (T/4)∂b_g/∂T = π ∂B_g/∂T / (acT³).
pub fn derivative_coefficient(grid: &FrequencyGroupGrid, g: usize, t: f64) -> Result<f64, PhysicsError> {
    check_temperature(t)?;
    let (e1, e2) = grid.bounds(g);
    let (x1, x2) = (e1 / t, e2 / t);
    Ok(planck_mass(x1, x2) + 0.25 * PLANCK_NORM * (edge_term(x1) - edge_term(x2)))
}

/// ∂B_g/∂T.
pub fn group_planck_derivative(
    grid: &FrequencyGroupGrid,
    g: usize,
    t: f64,
    consts: &PhysicalConstants,
) -> Result<f64, PhysicsError> {
    let coef = derivative_coefficient(grid, g, t)?;
    Ok(coef * consts.a * consts.c_planck * t.powi(3) / PI)
}

/// Per-group b_g and derivative coefficients at one temperature.
///
/// Edge tails are evaluated once and shared between neighbouring groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanckTable {
    pub b: Vec<f64>,
    pub dcoef: Vec<f64>,
}

impl PlanckTable {
    pub fn new(grid: &FrequencyGroupGrid) -> Self {
        Self { b: vec![0.0; grid.len()], dcoef: vec![0.0; grid.len()] }
    }

    pub fn evaluate(grid: &FrequencyGroupGrid, t: f64) -> Result<Self, PhysicsError> {
        let mut table = Self::new(grid);
        table.fill(grid, t)?;
        Ok(table)
    }

    pub fn fill(&mut self, grid: &FrequencyGroupGrid, t: f64) -> Result<(), PhysicsError> {
        check_temperature(t)?;
        let edges = grid.edges();
        let split_low = lower_tail(SERIES_SPLIT);
        let split_high = upper_tail(SERIES_SPLIT);
        // Each edge stores whichever tail is accurate at that x.
        let mut prev_x = edges[0] / t;
        let mut prev_tail = if prev_x < SERIES_SPLIT { lower_tail(prev_x) } else { upper_tail(prev_x) };
        let mut prev_edge = edge_term(prev_x);
        for g in 0..grid.len() {
            let x = edges[g + 1] / t;
            let tail = if x < SERIES_SPLIT { lower_tail(x) } else { upper_tail(x) };
            let edge = edge_term(x);
            let mass = match (prev_x < SERIES_SPLIT, x < SERIES_SPLIT) {
                (true, true) => tail - prev_tail,
                (false, false) => prev_tail - tail,
                (true, false) => (split_low - prev_tail) + (split_high - tail),
                (false, true) => unreachable!("edges are increasing"),
            };
            self.b[g] = mass;
            self.dcoef[g] = mass + 0.25 * PLANCK_NORM * (prev_edge - edge);
            prev_x = x;
            prev_tail = tail;
            prev_edge = edge;
        }
        Ok(())
    }
}

/// Frequency-dependent absorption opacity models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum OpacityModel {
    /// σ = σ0.
    Constant { sigma0: f64 },
    /// σ = σ0 / (e³ √T).
    PowThreeSqrtT { sigma0: f64 },
    /// σ = σ0 (1 − e^{−e/T}) / e³.
    LarsenType { sigma0: f64 },
    /// Frequency-independent σ = σ0 / T^p.
    GrayPower { sigma0: f64, power: f64 },
}

impl OpacityModel {
    pub fn sigma0(&self) -> f64 {
        match *self {
            OpacityModel::Constant { sigma0 }
            | OpacityModel::PowThreeSqrtT { sigma0 }
            | OpacityModel::LarsenType { sigma0 }
            | OpacityModel::GrayPower { sigma0, .. } => sigma0,
        }
    }

    /// Spectral opacity σ(e, T).
    pub fn spectral(&self, e: f64, t: f64) -> Result<f64, PhysicsError> {
        check_temperature(t)?;
        Ok(match *self {
            OpacityModel::Constant { sigma0 } => sigma0,
            OpacityModel::PowThreeSqrtT { sigma0 } => sigma0 / (e.powi(3) * t.sqrt()),
            OpacityModel::LarsenType { sigma0 } => sigma0 * (-(-e / t).exp_m1()) / e.powi(3),
            OpacityModel::GrayPower { sigma0, power } => sigma0 / t.powf(power),
        })
    }
}

/// Flat group average of σ over [e1, e2].
pub fn group_opacity(
    model: &OpacityModel,
    grid: &FrequencyGroupGrid,
    g: usize,
    t: f64,
) -> Result<f64, PhysicsError> {
    check_temperature(t)?;
    let (e1, e2) = grid.bounds(g);
    Ok(match *model {
        OpacityModel::Constant { sigma0 } => sigma0,
        OpacityModel::PowThreeSqrtT { sigma0 } => sigma0 / t.sqrt() * inverse_cube_mean(e1, e2),
        OpacityModel::LarsenType { sigma0 } => sigma0 * larsen_integral(e1 / t, e2 / t) / (t * t * (e2 - e1)),
        OpacityModel::GrayPower { sigma0, power } => sigma0 / t.powf(power),
    })
}

/// Fills σ_g for every group at temperature `t`.
pub fn group_opacities(
    model: &OpacityModel,
    grid: &FrequencyGroupGrid,
    t: f64,
    out: &mut [f64],
) -> Result<(), PhysicsError> {
    check_temperature(t)?;
    match *model {
        OpacityModel::Constant { sigma0 } => out.iter_mut().for_each(|s| *s = sigma0),
        OpacityModel::GrayPower { sigma0, power } => {
            let s0 = sigma0 / t.powf(power);
            out.iter_mut().for_each(|s| *s = s0)
        }
        OpacityModel::PowThreeSqrtT { sigma0 } => {
            let scale = sigma0 / t.sqrt();
            for (g, s) in out.iter_mut().enumerate() {
                let (e1, e2) = grid.bounds(g);
                *s = scale * inverse_cube_mean(e1, e2);
            }
        }
        OpacityModel::LarsenType { .. } => {
            for (g, s) in out.iter_mut().enumerate() {
                *s = group_opacity(model, grid, g, t)?;
            }
        }
    }
    Ok(())
}

/// (1/(e2−e1)) ∫ e⁻³ de.
fn inverse_cube_mean(e1: f64, e2: f64) -> f64 {
    // 1/(2e1²) − 1/(2e2²) = (e2−e1)(e2+e1)/(2 e1² e2²)
    (e1 + e2) / (2.0 * e1 * e1 * e2 * e2)
}

/// ∫_{x1}^{x2} (1 − e^{−t}) t⁻³ dt.
fn larsen_integral(x1: f64, x2: f64) -> f64 {
    if x2 <= x1 {
        return 0.0;
    }
    if x2 <= 1.0 {
        larsen_small(x2) - larsen_small(x1)
    } else if x1 >= 1.0 {
        larsen_tail(x1) - larsen_tail(x2)
    } else {
        (larsen_small(1.0) - larsen_small(x1)) + (larsen_tail(1.0) - larsen_tail(x2))
    }
}

/// Antiderivative of (1 − e^{−x})/x³ from its power series, valid for x ≤ 1.
fn larsen_small(x: f64) -> f64 {
    let mut sum = -1.0 / x - 0.5 * x.ln();
    let mut pow = 1.0; // x^{k-2}
    let mut fact = 2.0; // k!
    for k in 3..40 {
        pow *= x;
        fact *= k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * pow / ((k - 2) as f64 * fact);
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// ∫ₓ^∞ (1 − e^{−t}) t⁻³ dt = (1/2 − E₃(x))/x² for x ≥ 1.
fn larsen_tail(x: f64) -> f64 {
    (0.5 - expint(3, x)) / (x * x)
}

/// Generalized exponential integral Eₙ(x) for x ≥ 1 by continued fraction.
fn expint(n: u32, x: f64) -> f64 {
    if x > 700.0 {
        return 0.0;
    }
    let nm1 = n as f64 - 1.0;
    let tiny = 1e-300;
    let mut b = x + n as f64;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (nm1 + i as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}

/// Discrete Rosseland mean: 1/σ_R = Σ (1/σ_g) ∂B_g/∂T / Σ ∂B_g/∂T.
pub fn rosseland_mean(grid: &FrequencyGroupGrid, sigma: &[f64], t: f64) -> Result<f64, PhysicsError> {
    let table = PlanckTable::evaluate(grid, t)?;
    rosseland_from_weights(sigma, &table.dcoef)
}

/// Rosseland mean with explicit ∂B_g/∂T weights (any common scale).
pub fn rosseland_from_weights(sigma: &[f64], weights: &[f64]) -> Result<f64, PhysicsError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&s, &w) in sigma.iter().zip(weights) {
        if !(s > 0.0) {
            return Err(PhysicsError::Domain { quantity: "group opacity", value: s });
        }
        num += w;
        den += w / s;
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(PhysicsError::Domain { quantity: "Rosseland weight sum", value: den })
    }
}

/// Planck mean σ_P = Σ σ_g b_g.
pub fn planck_mean(sigma: &[f64], b: &[f64]) -> f64 {
    sigma.iter().zip(b).map(|(s, b)| s * b).sum()
}
