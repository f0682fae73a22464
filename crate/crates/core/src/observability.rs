//! Exponential Gramians, observability constants, canonical-product
//! interpolants and the small-time observation scaling experiment.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::control::{boundary_observation, exp_integral, interval_fourier, ControlKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::FluidParams;
use crate::quadrature::Composite;
use crate::spectral::{self, CubicRoots, ModeEigenSystem};
use crate::C64;

/// 2π Σ 1/|β_j|.
pub fn minimal_time(p: &FluidParams) -> Result<f64> {
    Ok(minimal_time_from_roots(&spectral::solve_beta_cubic(p)?))
}

pub fn minimal_time_from_roots(r: &CubicRoots) -> f64 {
    2.0 * PI * r.beta.iter().map(|b| 1.0 / b.abs()).sum::<f64>()
}

/// Gram matrix of a finite exponential family on [0, T].
#[derive(Clone, Debug, Serialize)]
pub struct ExpGram {
    pub indices: Vec<(i64, usize)>,
    pub horizon: f64,
    #[serde(skip)]
    pub entries: DMatrix<C64>,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl ExpGram {
    /// Entries ∫₀ᵀ e^{μ_a s} conj(e^{μ_b s}) ds.
    pub fn new(indices: Vec<(i64, usize)>, exponents: &[C64], t: f64) -> Self {
        let m = exponents.len();
        let entries = DMatrix::from_fn(m, m, |a, b| exp_integral(exponents[a] + exponents[b].conj(), t));
        let ev = linalg::hermitian_eigenvalues(&entries);
        ExpGram {
            indices,
            horizon: t,
            entries,
            eig_min: ev.first().copied().unwrap_or(0.0),
            eig_max: ev.last().copied().unwrap_or(0.0),
        }
    }

    pub fn hermitian_defect(&self) -> f64 {
        linalg::hermitian_defect(&self.entries)
    }
}

/// Same entries by composite Gauss–Legendre, for cross-checking.
pub fn exp_gram_by_quadrature(exponents: &[C64], t: f64, panels: usize, order: usize) -> DMatrix<C64> {
    let q = Composite::new(0.0, t, panels, order);
    let m = exponents.len();
    let mut g = DMatrix::from_element(m, m, C64::new(0.0, 0.0));
    for (s, w) in q.nodes.iter().zip(&q.weights) {
        let e: Vec<C64> = exponents.iter().map(|mu| (mu * *s).exp()).collect();
        for a in 0..m {
            for b in 0..m {
                g[(a, b)] += e[a] * e[b].conj() * *w;
            }
        }
    }
    g
}

/// Modes 1 ≤ |n| ≤ N with their eigen-data, in the order −N..N.
fn mode_systems(p: &FluidParams, big_n: usize) -> Result<Vec<ModeEigenSystem>> {
    let roots = spectral::solve_beta_cubic(p)?;
    let ns: Vec<i64> = spectral::modes(big_n).collect();
    ns.par_iter().map(|&n| ModeEigenSystem::compute(p, &roots, n)).collect()
}

/// ExpGram over the conjugate eigenvalues λ̄_n^l, 1 ≤ |n| ≤ N.
pub fn exp_gram_for_modes(p: &FluidParams, big_n: usize, t: f64) -> Result<ExpGram> {
    let sys = mode_systems(p, big_n)?;
    let mut idx = Vec::new();
    let mut mu = Vec::new();
    for s in &sys {
        for l in 0..3 {
            idx.push((s.n, l));
            mu.push(s.lambdas[l].conj());
        }
    }
    Ok(ExpGram::new(idx, &mu, t))
}

/// Extreme eigenvalues of the exponential Gram (numerical frame constants).
pub fn ingham_frame_bounds(p: &FluidParams, big_n: usize, t: f64) -> Result<(f64, f64)> {
    let g = exp_gram_for_modes(p, big_n, t)?;
    Ok((g.eig_min, g.eig_max))
}

// ---------------------------------------------------------------------------
// Canonical product

/// Complex logarithm accumulator: value = exp(re) · e^{i im}.
#[derive(Clone, Copy, Debug)]
struct LogC {
    re: f64,
    im: f64,
}

impl LogC {
    fn one() -> Self {
        LogC { re: 0.0, im: 0.0 }
    }

    fn mul(&mut self, z: C64) {
        let r = z.norm();
        if r == 0.0 {
            self.re = f64::NEG_INFINITY;
        } else {
            self.re += r.ln();
            self.im += z.arg();
        }
    }

    fn div(&mut self, z: C64) {
        self.re -= z.norm().ln();
        self.im -= z.arg();
    }

    fn value(self) -> C64 {
        if self.re == f64::NEG_INFINITY {
            return C64::new(0.0, 0.0);
        }
        C64::from_polar(self.re.exp(), self.im)
    }
}

/// Truncated P(z) = z³ ∏_{1≤|n|≤K, j} (1 − z/(iλ̄_n^j)).
#[derive(Clone, Debug)]
pub struct CanonicalProduct {
    pub truncation: usize,
    pub beta: [f64; 3],
    ns: Vec<i64>,
    /// iλ̄_n^j, one triple per entry of `ns`.
    sites: Vec<[C64; 3]>,
}

impl CanonicalProduct {
    pub fn new(p: &FluidParams, k: usize) -> Result<Self> {
        let roots = spectral::solve_beta_cubic(p)?;
        let ns: Vec<i64> = spectral::modes(k).collect();
        let sites = ns
            .par_iter()
            .map(|&n| {
                let lam = spectral::mode_eigenvalues(p, &roots, n)?;
                Ok([0, 1, 2].map(|j| C64::new(0.0, 1.0) * lam[j].conj()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CanonicalProduct { truncation: k, beta: roots.beta, ns, sites })
    }

    pub fn site(&self, n: i64, j: usize) -> Option<C64> {
        self.pos(n).map(|k| self.sites[k][j])
    }

    fn pos(&self, n: i64) -> Option<usize> {
        self.ns.iter().position(|&m| m == n)
    }

    /// ln of the branch factor β_j P_j(z/β_j) = z ∏_n (1 − z/(iλ̄_n^j)).
    fn branch_log(&self, j: usize, z: C64, skip: Option<usize>) -> LogC {
        let mut acc = LogC::one();
        acc.mul(z);
        for (k, s) in self.sites.iter().enumerate() {
            if Some(k) != skip {
                acc.mul(C64::new(1.0, 0.0) - z / s[j]);
            }
        }
        acc
    }

    /// (ln|P(z)|, arg P(z)).
    pub fn log_value(&self, z: C64) -> (f64, f64) {
        let mut acc = LogC::one();
        for j in 0..3 {
            let b = self.branch_log(j, z, None);
            acc.re += b.re;
            acc.im += b.im;
        }
        (acc.re, acc.im)
    }

    pub fn value(&self, z: C64) -> C64 {
        let (re, im) = self.log_value(z);
        LogC { re, im }.value()
    }

    fn log_r(&self, n_pos: usize, j: usize, z: C64) -> LogC {
        // P(z) with the factor of site (n, j) removed.
        let mut acc = LogC::one();
        for l in 0..3 {
            let skip = if l == j { Some(n_pos) } else { None };
            let b = self.branch_log(l, z, skip);
            acc.re += b.re;
            acc.im += b.im;
        }
        acc
    }

    /// P′ at the zero iλ̄_n^j.
    pub fn derivative_at(&self, n: i64, j: usize) -> Option<C64> {
        let k = self.pos(n)?;
        let s = self.sites[k][j];
        let mut r = self.log_r(k, j, s);
        r.div(-s);
        Some(r.value())
    }

    /// Ψ_n^j(z) = P(z)/((z − iλ̄_n^j) P′(iλ̄_n^j)).
    pub fn psi(&self, n: i64, j: usize, z: C64) -> Option<C64> {
        let k = self.pos(n)?;
        let s = self.sites[k][j];
        let num = self.log_r(k, j, z);
        let den = self.log_r(k, j, s);
        Some(LogC { re: num.re - den.re, im: num.im - den.im }.value())
    }

    /// max |P(x)| over a uniform grid of [−x_max, x_max].
    pub fn real_axis_bound(&self, x_max: f64, samples: usize) -> f64 {
        (0..samples)
            .map(|k| {
                let x = -x_max + 2.0 * x_max * k as f64 / (samples - 1).max(1) as f64;
                self.log_value(C64::new(x, 0.0)).0.exp()
            })
            .fold(0.0, f64::max)
    }

    /// max |Ψ_n^j(iλ̄_k^l) − δ| over sites with |k| ≤ interior.
    pub fn kronecker_deviation(&self, n: i64, j: usize, interior: usize) -> Option<f64> {
        let mut dev: f64 = 0.0;
        for (k, m) in self.ns.iter().enumerate() {
            if m.unsigned_abs() as usize > interior {
                continue;
            }
            for l in 0..3 {
                let v = self.psi(n, j, self.sites[k][l])?;
                let want = if *m == n && l == j { 1.0 } else { 0.0 };
                dev = dev.max((v - want).norm());
            }
        }
        Some(dev)
    }
}

pub fn canonical_product(p: &FluidParams, z: C64, k: usize) -> Result<C64> {
    Ok(CanonicalProduct::new(p, k)?.value(z))
}

pub fn psi_interpolant(p: &FluidParams, site: (i64, usize), z: C64, k: usize) -> Result<C64> {
    let cp = CanonicalProduct::new(p, k)?;
    cp.psi(site.0, site.1, z)
        .ok_or_else(|| Error::Validation(vec![format!("site n = {} outside truncation {k}", site.0)]))
}

/// max over a real grid of |Ψ^K − Ψ^{2K}| for one site.
pub fn psi_refinement_deviation(
    p: &FluidParams,
    site: (i64, usize),
    k: usize,
    grid: &[f64],
) -> Result<f64> {
    let a = CanonicalProduct::new(p, k)?;
    let b = CanonicalProduct::new(p, 2 * k)?;
    let bad = || Error::Validation(vec![format!("site n = {} outside truncation {k}", site.0)]);
    let mut dev: f64 = 0.0;
    for &x in grid {
        let z = C64::new(x, 0.0);
        let va = a.psi(site.0, site.1, z).ok_or_else(bad)?;
        let vb = b.psi(site.0, site.1, z).ok_or_else(bad)?;
        dev = dev.max((va - vb).norm());
    }
    Ok(dev)
}

// ---------------------------------------------------------------------------
// Observability constants

#[derive(Clone, Debug, Serialize)]
pub struct ObservabilityReport {
    pub big_n: usize,
    pub horizon: f64,
    /// Control kind name or the interval "l1,l2".
    pub label: String,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub cond: f64,
}

/// Terminal Z-norm Gram G_ba = ⟨ξ*_a, ξ*_b⟩ (block diagonal by mode).
fn adjoint_gram(p: &FluidParams, sys: &[ModeEigenSystem]) -> DMatrix<C64> {
    let m = 3 * sys.len();
    let mut g = DMatrix::from_element(m, m, C64::new(0.0, 0.0));
    for (k, s) in sys.iter().enumerate() {
        for a in 0..3 {
            for b in 0..3 {
                g[(3 * k + b, 3 * k + a)] = spectral::z_inner(p, &s.xi_star(a), &s.xi_star(b));
            }
        }
    }
    g
}

/// Q_ba = conj(w_b) w_a ∫₀ᵀ e^{(λ̄_a+λ_b)s} ds · ∫_O e^{i(n_a−n_b)x} dx.
///
/// With `interval = None` the spatial factor is dropped (scalar outputs).
pub fn observation_form(
    weights: &[C64],
    lam_bar: &[C64],
    ns: &[i64],
    t: f64,
    interval: Option<(f64, f64)>,
) -> DMatrix<C64> {
    let m = weights.len();
    let rows: Vec<Vec<C64>> = (0..m)
        .into_par_iter()
        .map(|b| {
            (0..m)
                .map(|a| {
                    let space = match interval {
                        Some((l1, l2)) => interval_fourier(ns[a] - ns[b], l1, l2),
                        None => C64::new(1.0, 0.0),
                    };
                    weights[b].conj() * weights[a] * exp_integral(lam_bar[a] + lam_bar[b].conj(), t) * space
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(m, m, |b, a| rows[b][a])
}

/// Extreme generalized eigenvalues of Q x = λ G x.
pub fn pencil_extremes(q: &DMatrix<C64>, g: &DMatrix<C64>) -> Result<(f64, f64)> {
    let ev = linalg::generalized_hermitian_eigenvalues(q, g)?;
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0);
    Ok((lo, hi))
}

fn report(big_n: usize, t: f64, label: String, q: &DMatrix<C64>, g: &DMatrix<C64>) -> Result<ObservabilityReport> {
    let (lo, hi) = pencil_extremes(q, g)?;
    Ok(ObservabilityReport {
        big_n,
        horizon: t,
        label,
        lambda_min: lo,
        lambda_max: hi,
        cond: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    })
}

fn check_interval(o: (f64, f64)) -> Result<()> {
    let (l1, l2) = o;
    if !(0.0 <= l1 && l1 < l2 && l2 <= 2.0 * PI) {
        return Err(Error::Validation(vec![format!("interval ({l1}, {l2}) must satisfy 0 ≤ l1 < l2 ≤ 2π")]));
    }
    Ok(())
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Validation(vec!["horizon T must be positive".into()]));
    }
    Ok(())
}

/// Density observed on [0, T] × O against the terminal Z-norm, 1 ≤ |n| ≤ N.
pub fn interior_observability_constant(
    p: &FluidParams,
    big_n: usize,
    t: f64,
    o: (f64, f64),
) -> Result<ObservabilityReport> {
    check_horizon(t)?;
    check_interval(o)?;
    let sys = mode_systems(p, big_n)?;
    let (mut w, mut lam, mut ns) = (Vec::new(), Vec::new(), Vec::new());
    for s in &sys {
        for l in 0..3 {
            w.push(s.xi_star(l)[0]);
            lam.push(s.lambdas[l].conj());
            ns.push(s.n);
        }
    }
    let q = observation_form(&w, &lam, &ns, t, Some(o));
    let g = adjoint_gram(p, &sys);
    report(big_n, t, format!("{},{}", o.0, o.1), &q, &g)
}

/// Boundary trace observed on [0, T] against the terminal Z-norm, 1 ≤ |n| ≤ N.
pub fn boundary_observability_constant(
    p: &FluidParams,
    big_n: usize,
    t: f64,
    kind: ControlKind,
) -> Result<ObservabilityReport> {
    check_horizon(t)?;
    let sys = mode_systems(p, big_n)?;
    let (mut w, mut lam, mut ns) = (Vec::new(), Vec::new(), Vec::new());
    for s in &sys {
        for l in 0..3 {
            w.push(boundary_observation(p, kind, s, l)?);
            lam.push(s.lambdas[l].conj());
            ns.push(s.n);
        }
    }
    let q = observation_form(&w, &lam, &ns, t, None);
    let g = adjoint_gram(p, &sys);
    let label = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    report(big_n, t, label, &q, &g)
}

// ---------------------------------------------------------------------------
// Small-time scaling experiment

/// Bump endpoints are snapped to multiples of 2π/CENTER_GRID so that the
/// phases e^{−in s} are exact.
const CENTER_GRID: i64 = 1024;
/// Depth of the deformed contour s = x − i c (1 − x²).
const CONTOUR_DEPTH: f64 = 0.5;

/// exp(−1/(1−s²)), s = (x − center)/half_width, with support endpoints on
/// the grid 2π k / 1024.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Bump {
    pub left_slot: i64,
    pub right_slot: i64,
}

impl Bump {
    /// Largest grid-aligned bump inside [a, b].
    pub fn inside(a: f64, b: f64) -> Result<Self> {
        let g = 2.0 * PI / CENTER_GRID as f64;
        let left_slot = (a / g).ceil() as i64;
        let right_slot = (b / g).floor() as i64;
        if right_slot <= left_slot {
            return Err(Error::Validation(vec![format!("support [{a}, {b}] too short for a bump")]));
        }
        Ok(Bump { left_slot, right_slot })
    }

    pub fn support(&self) -> (f64, f64) {
        let g = 2.0 * PI / CENTER_GRID as f64;
        (self.left_slot as f64 * g, self.right_slot as f64 * g)
    }

    pub fn half_width(&self) -> f64 {
        let (a, b) = self.support();
        0.5 * (b - a)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        let s = (x - 0.5 * (a + b)) / self.half_width();
        if s.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - s * s)).exp()
        }
    }

    fn phase(slot: i64, n: i64) -> f64 {
        // −n·(2π slot/1024) reduced exactly.
        let r = (n.rem_euclid(CENTER_GRID) * slot.rem_euclid(CENTER_GRID)).rem_euclid(CENTER_GRID);
        -2.0 * PI * r as f64 / CENTER_GRID as f64
    }

    /// a_n = (1/2π) ∫ e^{−inx} bump(x) dx as (ln|a_n|, arg a_n), n ≥ 1.
    ///
    /// The right half of the reference integral is taken along a contour in
    /// the lower half plane through the endpoint saddles; the left half is
    /// its conjugate.
    pub fn log_fourier(&self, n: i64) -> (f64, f64) {
        assert!(n >= 1);
        let h = self.half_width();
        let om = n as f64 * h;
        let r = half_integral_log(om);
        // a_n = (h/2π) [e^{−in s1} R + e^{−in s0} conj(R)]
        let p1 = Self::phase(self.right_slot, n) + r.im;
        let p0 = Self::phase(self.left_slot, n) - r.im;
        let z = C64::from_polar(1.0, p1) + C64::from_polar(1.0, p0);
        let lz = z.norm();
        let mag = if lz == 0.0 { f64::NEG_INFINITY } else { (h / (2.0 * PI)).ln() + r.re + lz.ln() };
        (mag, z.arg())
    }
}

/// Nodes per unit of the double-exponential variable, scaled by 1 + ω^{1/4}
/// to follow the endpoint saddles.
const DE_DENSITY: f64 = 16.0;

/// ln of ∫₀¹ exp(iω(1−x) − ωc(1−x²) − 1/((1−x²)g)) (1 + 2icx) dx,
/// g = 1 + 2icx + c²(1−x²), by double-exponential quadrature on [0, 1].
fn half_integral_log(om: f64) -> LogC {
    half_integral_log_with(om, DE_DENSITY)
}

fn half_integral_log_with(om: f64, density: f64) -> LogC {
    let step = 1.0 / (density * (1.0 + om.powf(0.25)));
    // Coarse scan to locate the window where the integrand matters.
    let coarse = 8.0 * step;
    let mc = (3.0 / coarse).ceil() as i64;
    let scan: Vec<(f64, f64)> = (-mc..=mc)
        .filter_map(|k| de_node(om, k as f64 * coarse).map(|nd| (k as f64 * coarse, nd.0.re)))
        .collect();
    let top = scan.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let live: Vec<f64> = scan.iter().filter(|s| s.1 >= top - 100.0).map(|s| s.0).collect();
    let lo = live.first().copied().unwrap_or(-3.0) - 2.0 * coarse;
    let hi = live.last().copied().unwrap_or(3.0) + 2.0 * coarse;

    let ka = (lo / step).floor() as i64;
    let kb = (hi / step).ceil() as i64;
    let nodes: Vec<(C64, C64)> = (ka..=kb).filter_map(|k| de_node(om, k as f64 * step)).collect();
    let peak = nodes.iter().map(|n| n.0.re).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = C64::new(0.0, 0.0);
    for (expo, w) in nodes {
        // |weight| is O(1), so the exponent alone decides negligibility.
        if expo.re >= peak - 80.0 {
            sum += (expo - peak).exp() * w;
        }
    }
    let mut out = LogC { re: peak, im: 0.0 };
    out.mul(sum * step);
    out
}

/// Exponent and weight (per unit step) of the double-exponential node at t.
fn de_node(om: f64, t: f64) -> Option<(C64, C64)> {
    let c = CONTOUR_DEPTH;
    let u = 0.5 * PI * t.sinh();
    let ch = u.cosh();
    // 1 − x = e^{−u}/(2 cosh u), x = e^{u}/(2 cosh u)
    let one_minus = (-u).exp() / (2.0 * ch);
    let x = u.exp() / (2.0 * ch);
    if !(one_minus > 0.0) || !x.is_finite() {
        return None;
    }
    let q = one_minus * (1.0 + x);
    let g = C64::new(1.0 + c * c * q, 2.0 * c * x);
    let expo = C64::new(-om * c * q, om * one_minus) - 1.0 / (g * q);
    let w = C64::new(1.0, 2.0 * c * x) * (0.25 * PI * t.cosh() / (ch * ch));
    Some((expo, w))
}

#[derive(Clone, Debug, Serialize)]
pub struct LackResult {
    pub n_list: Vec<usize>,
    /// ∫₀ᵀ∫_O(|σ|²+|v|²+|S̃|²) over the terminal Z-norm², per N.
    pub ratios: Vec<f64>,
    /// Least-squares slope of ln ratio against ln N.
    pub slope: f64,
    /// Branch (0-based) carrying the terminal data.
    pub branch: usize,
    /// Highest |n| retained per N.
    pub truncation: Vec<usize>,
    pub support: (f64, f64),
}

#[derive(Clone, Copy, Debug)]
pub struct LackOptions {
    /// Gauss–Legendre panels (8 points each) per unit time.
    pub panels_per_unit: usize,
    /// Data with ln-amplitude below the peak minus this are dropped.
    pub tail_drop: f64,
}

impl Default for LackOptions {
    fn default() -> Self {
        LackOptions { panels_per_unit: 4, tail_drop: 40.0 }
    }
}

/// Branch with the slowest transport speed min_j |β_j|.
pub fn slowest_branch(roots: &CubicRoots) -> usize {
    (0..3)
        .min_by(|&a, &b| roots.beta[a].abs().partial_cmp(&roots.beta[b].abs()).unwrap())
        .unwrap()
}

/// Bump whose transported support over [0, T] stays in the larger gap
/// outside O. Fails when the gap is shorter than |β̂|T.
pub fn admissible_profile(roots: &CubicRoots, t: f64, o: (f64, f64)) -> Result<Bump> {
    let beta = roots.beta[slowest_branch(roots)];
    let sweep = beta.abs() * t;
    let (l1, l2) = o;
    let (g0, g1) = if l1 >= 2.0 * PI - l2 { (0.0, l1) } else { (l2, 2.0 * PI) };
    let avail = (g1 - g0) - sweep;
    if !(avail > 0.0) {
        return Err(Error::HypothesisViolated(format!(
            "|beta| T = {sweep:.6} is not below the largest gap {:.6} outside O",
            g1 - g0
        )));
    }
    let margin = 0.1 * avail;
    let len = 0.8 * avail;
    // The data travels with speed β: x(t) = x_T + β(T − t).
    let s0 = if beta > 0.0 { g0 + margin } else { g0 + margin + sweep };
    Bump::inside(s0, s0 + len)
}

struct LackTables {
    /// (ln|a_n|, arg a_n) for n = 1..
    coeff: Vec<(f64, f64)>,
    /// λ_n and α_n on the chosen branch for n = 1..
    lambda: Vec<C64>,
    alpha: Vec<[C64; 3]>,
}

impl LackTables {
    fn extend(&mut self, p: &FluidParams, roots: &CubicRoots, bump: &Bump, branch: usize, k: usize) -> Result<()> {
        let start = self.coeff.len() + 1;
        if k < start {
            return Ok(());
        }
        let ns: Vec<i64> = (start as i64..=k as i64).collect();
        let new: Vec<((f64, f64), (C64, [C64; 3]))> = ns
            .par_iter()
            .map(|&n| {
                let sys = ModeEigenSystem::compute(p, roots, n)?;
                Ok((bump.log_fourier(n), (sys.lambdas[branch], sys.xi_star_coeffs[branch])))
            })
            .collect::<Result<Vec<_>>>()?;
        for (c, (l, a)) in new {
            self.coeff.push(c);
            self.lambda.push(l);
            self.alpha.push(a);
        }
        Ok(())
    }
}

fn log_pn(big_n: usize, n: i64) -> f64 {
    let nn = big_n as i64;
    (-nn..=nn).map(|j| ((n - j) as f64).abs().ln()).sum()
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Observation-to-terminal energy ratios of adjoint data built from the
/// profile's Fourier coefficients multiplied by P^N(n) = ∏_{|j|≤N}(n − j).
pub fn lack_experiment(p: &FluidParams, n_list: &[usize], t: f64, o: (f64, f64)) -> Result<LackResult> {
    check_horizon(t)?;
    check_interval(o)?;
    let roots = spectral::solve_beta_cubic(p)?;
    let bump = admissible_profile(&roots, t, o)?;
    lack_experiment_with(p, n_list, t, o, bump, LackOptions::default())
}

/// As `lack_experiment` with an explicit profile and no hypothesis check.
pub fn lack_experiment_with(
    p: &FluidParams,
    n_list: &[usize],
    t: f64,
    o: (f64, f64),
    bump: Bump,
    opts: LackOptions,
) -> Result<LackResult> {
    check_horizon(t)?;
    check_interval(o)?;
    if n_list.is_empty() {
        return Err(Error::EmptyInput);
    }
    let roots = spectral::solve_beta_cubic(p)?;
    let branch = slowest_branch(&roots);
    let mut tables = LackTables { coeff: Vec::new(), lambda: Vec::new(), alpha: Vec::new() };
    let wz = spectral::z_weights(p);
    let quad = Composite::with_density(0.0, t, opts.panels_per_unit, 8);
    let mut planner = FftPlanner::<f64>::new();
    let mut ratios = Vec::new();
    let mut truncation = Vec::new();

    for &big_n in n_list {
        // Grow the table until the tail of a_n P^N(n) falls below the drop.
        let mut k = (64 * (big_n + 1)).max(256);
        let (amp, kk) = loop {
            tables.extend(p, &roots, &bump, branch, k)?;
            let logs: Vec<f64> = (big_n + 1..=k)
                .map(|n| tables.coeff[n - 1].0 + log_pn(big_n, n as i64))
                .collect();
            let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tail = logs[logs.len() * 3 / 4..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if tail < peak - opts.tail_drop {
                let last = logs.iter().rposition(|&l| l >= peak - opts.tail_drop).unwrap();
                let kk = big_n + 1 + last;
                let amp: Vec<C64> = (big_n + 1..=kk)
                    .map(|n| {
                        let (_, ph) = tables.coeff[n - 1];
                        C64::from_polar((logs[n - big_n - 1] - peak).exp(), ph)
                    })
                    .collect();
                break (amp, kk);
            }
            k *= 2;
        };
        truncation.push(kk);

        // (n, A_n, λ̄_n, α_n) for both signs. For −n: a → conj(a), P^N → −P^N,
        // λ → conj(λ), α → conj(α).
        let mut data: Vec<(i64, C64, C64, [C64; 3])> = Vec::with_capacity(2 * amp.len());
        for (i, a) in amp.iter().enumerate() {
            let n = big_n + 1 + i;
            let lam = tables.lambda[n - 1];
            let al = tables.alpha[n - 1];
            data.push((n as i64, *a, lam.conj(), al));
            data.push((-(n as i64), -a.conj(), lam, al.map(|z| z.conj())));
        }
        let terminal: f64 = data
            .iter()
            .map(|(_, a, _, al)| {
                2.0 * PI * a.norm_sqr() * (0..3).map(|c| wz[c] * al[c].norm_sqr()).sum::<f64>()
            })
            .sum();

        let m = (2 * kk + 2).next_power_of_two().max(2 * CENTER_GRID as usize);
        let fft = planner.plan_fft_inverse(m);
        let num: f64 = quad
            .nodes
            .par_iter()
            .zip(&quad.weights)
            .map(|(&s, &w)| w * observed_energy(&data, t - s, m, &fft, o))
            .sum();
        ratios.push(num / terminal);
    }

    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::NumericalFailure(format!("non-positive observation ratio in {ratios:?}")));
    }
    let xs: Vec<f64> = n_list.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let slope = if n_list.len() > 1 { fit_slope(&xs, &ys) } else { f64::NAN };
    Ok(LackResult {
        n_list: n_list.to_vec(),
        ratios,
        slope,
        branch,
        truncation,
        support: bump.support(),
    })
}

/// ∫_O (|σ|² + |v|² + |S̃|²) of Σ A_n e^{λ̄_n τ} α_n e^{inx}, τ = T − t.
fn observed_energy(
    data: &[(i64, C64, C64, [C64; 3])],
    tau: f64,
    m: usize,
    fft: &Arc<dyn Fft<f64>>,
    o: (f64, f64),
) -> f64 {
    let dx = 2.0 * PI / m as f64;
    let j0 = (o.0 / dx).ceil() as usize;
    let j1 = ((o.1 / dx).floor() as usize).min(m - 1);
    let mut total = 0.0;
    let mut buf = vec![C64::new(0.0, 0.0); m];
    let amp: Vec<C64> = data.iter().map(|(_, a, lb, _)| a * (lb * tau).exp()).collect();
    for c in 0..3 {
        buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for ((n, _, _, al), a) in data.iter().zip(&amp) {
            buf[n.rem_euclid(m as i64) as usize] += a * al[c];
        }
        fft.process(&mut buf);
        total += buf[j0..=j1].iter().map(|z| z.norm_sqr()).sum::<f64>() * dx;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FluidParams;

    fn p1() -> FluidParams {
        FluidParams::unit()
    }

    #[test]
    fn minimal_time_unit_parameters() {
        let t0 = minimal_time(&p1()).unwrap();
        assert!((t0 - 21.95).abs() < 0.01, "{t0}");
        let mut r = spectral::solve_beta_cubic(&p1()).unwrap();
        r.beta = r.beta.map(|b| 2.0 * b);
        assert!((minimal_time_from_roots(&r) - 0.5 * t0).abs() < 1e-12);
    }

    #[test]
    fn fourier_exponents_are_orthogonal_on_two_pi() {
        let idx: Vec<(i64, usize)> = (-6..=6).map(|n| (n, 0)).collect();
        let mu: Vec<C64> = idx.iter().map(|(n, _)| C64::new(0.0, *n as f64)).collect();
        let g = ExpGram::new(idx, &mu, 2.0 * PI);
        for a in 0..13 {
            for b in 0..13 {
                let want = if a == b { 2.0 * PI } else { 0.0 };
                assert!((g.entries[(a, b)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn exp_gram_matches_quadrature() {
        let g = exp_gram_for_modes(&p1(), 4, 3.0).unwrap();
        let mu: Vec<C64> = g
            .indices
            .iter()
            .map(|&(n, l)| ModeEigenSystem::compute(&p1(), &spectral::solve_beta_cubic(&p1()).unwrap(), n).unwrap().lambdas[l].conj())
            .collect();
        let q = exp_gram_by_quadrature(&mu, 3.0, 96, 8);
        let err = (&g.entries - &q).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(g.hermitian_defect() < 1e-12);
        let t0 = minimal_time(&p1()).unwrap();
        assert!(exp_gram_for_modes(&p1(), 4, 1.1 * t0).unwrap().eig_min > 0.0);
    }

    #[test]
    fn canonical_product_zeros_and_origin() {
        let cp = CanonicalProduct::new(&p1(), 16).unwrap();
        let eps = C64::new(1e-4, 2e-4);
        let r = cp.value(eps) / (eps * eps * eps);
        assert!((r - 1.0).norm() < 1e-2, "{r}");
        for n in [-16, -3, 1, 9, 16] {
            for j in 0..3 {
                let s = cp.site(n, j).unwrap();
                // Compare against the product scale at a nearby point.
                let near = cp.value(s + 0.1).norm();
                assert!(cp.value(s).norm() <= 1e-10 * near.max(1e-300), "n={n} j={j}");
                assert!(cp.derivative_at(n, j).unwrap().norm() > 0.0);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let cp = CanonicalProduct::new(&p1(), 12).unwrap();
        let s = cp.site(3, 1).unwrap();
        let h = 1e-6;
        let fd = (cp.value(s + h) - cp.value(s - h)) / (2.0 * h);
        let d = cp.derivative_at(3, 1).unwrap();
        assert!((fd - d).norm() < 1e-6 * d.norm(), "{fd} vs {d}");
    }

    #[test]
    fn interpolant_kronecker_and_refinement() {
        let cp = CanonicalProduct::new(&p1(), 64).unwrap();
        let dev = cp.kronecker_deviation(5, 0, 32).unwrap();
        assert!(dev < 1e-6, "{dev}");
        let one = cp.psi(5, 0, cp.site(5, 0).unwrap()).unwrap();
        assert!((one - 1.0).norm() < 1e-8);
        let grid: Vec<f64> = (0..41).map(|k| -10.0 + 0.5 * k as f64).collect();
        let d1 = psi_refinement_deviation(&p1(), (2, 1), 16, &grid).unwrap();
        let d2 = psi_refinement_deviation(&p1(), (2, 1), 32, &grid).unwrap();
        assert!(d2 < d1, "{d1} {d2}");
        assert!(cp.real_axis_bound(40.0, 401).is_finite());
    }

    #[test]
    fn fourier_pencil_gives_horizon() {
        let ns: Vec<i64> = (-5..=5).collect();
        let w = vec![C64::new(1.0, 0.0); ns.len()];
        let lam = vec![C64::new(0.0, 0.0); ns.len()];
        let q = observation_form(&w, &lam, &ns, 1.7, Some((0.0, 2.0 * PI)));
        let g = DMatrix::<C64>::identity(ns.len(), ns.len()) * C64::new(2.0 * PI, 0.0);
        let (lo, hi) = pencil_extremes(&q, &g).unwrap();
        assert!((lo - 1.7).abs() < 1e-12 && (hi - 1.7).abs() < 1e-12);
    }

    #[test]
    fn interior_constant_shrinks_with_the_interval() {
        let t = 4.0;
        let big = interior_observability_constant(&p1(), 3, t, (0.0, PI)).unwrap();
        let small = interior_observability_constant(&p1(), 3, t, (0.5, 2.0)).unwrap();
        assert!(big.lambda_min > 0.0);
        assert!(small.lambda_min < big.lambda_min);
        assert!(small.lambda_max <= big.lambda_max * (1.0 + 1e-12));
    }

    #[test]
    fn single_mode_boundary_constant() {
        let p = p1();
        let sys = mode_systems(&p, 1).unwrap();
        let s = &sys[1];
        let o = boundary_observation(&p, ControlKind::BoundaryDensity, s, 2).unwrap();
        let lam = s.lambdas[2];
        let t = 2.5;
        let q = observation_form(&[o], &[lam.conj()], &[s.n], t, None);
        let nrm = spectral::z_inner(&p, &s.xi_star(2), &s.xi_star(2));
        let g = DMatrix::from_element(1, 1, nrm);
        let (lo, _) = pencil_extremes(&q, &g).unwrap();
        let want = o.norm_sqr() * ((2.0 * lam.re * t).exp() - 1.0) / (2.0 * lam.re) / nrm.re;
        assert!((lo - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn bump_coefficients_match_direct_quadrature() {
        let bump = Bump::inside(3.9, 5.7).unwrap();
        let (a, b) = bump.support();
        let q = Composite::new(a, b, 400, 8);
        for n in [1i64, 4, 11, 25] {
            let direct: C64 = q.integrate(|x| C64::from_polar(bump.eval(x), -(n as f64) * x)) / (2.0 * PI);
            let (lm, ph) = bump.log_fourier(n);
            let got = C64::from_polar(lm.exp(), ph);
            assert!((got - direct).norm() < 1e-10 * direct.norm() + 1e-16, "n={n} {got} {direct}");
        }
    }

    #[test]
    fn bump_coefficients_refine_at_large_n() {
        let bump = Bump::inside(3.9, 5.7).unwrap();
        for n in [300.0, 3000.0, 80000.0] {
            let om = n * bump.half_width();
            let a = half_integral_log(om);
            let b = half_integral_log_with(om, 4.0 * DE_DENSITY);
            assert!((a.re - b.re).abs() < 1e-11, "{} {}", a.re, b.re);
            assert!((a.im - b.im).abs() < 1e-10);
            // No windowing: every node on [−3, 3].
            let step = 1.0 / (DE_DENSITY * (1.0 + om.powf(0.25)));
            let m = (3.0 / step).ceil() as i64;
            let nodes: Vec<(C64, C64)> = (-m..=m).filter_map(|k| de_node(om, k as f64 * step)).collect();
            let peak = nodes.iter().map(|n| n.0.re).fold(f64::NEG_INFINITY, f64::max);
            let full: C64 = nodes.iter().map(|(e, w)| (e - peak).exp() * w).sum::<C64>() * step;
            assert!((peak + full.norm().ln() - a.re).abs() < 1e-12);
        }
    }

    #[test]
    fn hypothesis_violation_is_reported() {
        let err = lack_experiment(&p1(), &[4], 20.0, (0.0, PI)).unwrap_err();
        assert!(matches!(err, Error::HypothesisViolated(_)));
    }

    #[test]
    fn profile_inside_window_is_fully_observed() {
        let o = (0.0, PI);
        let bump = Bump::inside(0.8, 2.3).unwrap();
        let res = lack_experiment_with(&p1(), &[2, 4], 0.5, o, bump, LackOptions::default()).unwrap();
        for r in &res.ratios {
            assert!(*r > 0.05 && *r < 1.0, "{r}");
        }
    }

    #[test]
    fn admissible_profile_sweep_avoids_window() {
        let roots = spectral::solve_beta_cubic(&p1()).unwrap();
        let t = 2.0;
        let o = (0.0, PI);
        let bump = admissible_profile(&roots, t, o).unwrap();
        let beta = roots.beta[slowest_branch(&roots)];
        let (a, b) = bump.support();
        let (lo, hi) = (a.min(a + beta * t), b.max(b + beta * t));
        assert!(lo > o.1 && hi < 2.0 * PI, "{lo} {hi}");
        let res = lack_experiment(&p1(), &[2, 3], t, o).unwrap();
        assert!(res.ratios.iter().all(|r| *r > 0.0));
    }
}
