//! Exact control synthesis: minimal-norm everywhere control mode by mode,
//! and HUM controls for boundary and localized interior actuation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, energy_norm, ModalBasis, ModeBasis, QuadratureConfig, SpectralState};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::FluidParams;
use crate::quadrature::Composite;
use crate::spectral::{ModeEigenSystem, CubicRoots};
use crate::C64;

const I: C64 = C64::new(0.0, 1.0);

/// Denominators below this use the analytic limit of (e^{Tz} − 1)/z.
pub const RESONANCE_THRESHOLD: f64 = 1e-14;
/// HUM Gramians beyond this condition number are rejected.
pub const COND_LIMIT: f64 = 1e14;

/// ∫₀ᵀ e^{zt} dt.
pub fn exp_integral(z: C64, t: f64) -> C64 {
    let zt = z * t;
    if z.norm() < RESONANCE_THRESHOLD {
        return C64::new(t, 0.0);
    }
    if zt.norm() < 0.1 {
        // Series of (e^{w} − 1)/w.
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for k in 2..20 {
            term *= zt / k as f64;
            sum += term;
        }
        return sum * t;
    }
    (zt.exp() - 1.0) / z
}

/// Where a control acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    EverywhereDensity,
    LocalizedDensity,
    BoundaryDensity,
    BoundaryVelocity,
    BoundaryStress,
}

impl ControlKind {
    pub fn is_boundary(self) -> bool {
        matches!(
            self,
            ControlKind::BoundaryDensity | ControlKind::BoundaryVelocity | ControlKind::BoundaryStress
        )
    }
}

/// Smallest-to-largest singular value ratios of [λI − A | B] per eigenvalue.
#[derive(Clone, Debug, Serialize)]
pub struct HautusReport {
    pub n: i64,
    pub rank: usize,
    pub sigma_ratios: Vec<f64>,
}

/// Rank of [λI − A | B] at each λ, with a relative singular-value floor.
pub fn hautus_rank(
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    lambdas: &[C64],
    tol_rank: f64,
) -> std::result::Result<Vec<f64>, C64> {
    let d = a.nrows();
    let mut out = Vec::new();
    for &l in lambdas {
        let mut h = DMatrix::zeros(d, d + b.ncols());
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] = if i == j { l } else { C64::new(0.0, 0.0) } - a[(i, j)];
            }
            for j in 0..b.ncols() {
                h[(i, d + j)] = b[(i, j)];
            }
        }
        let sv = h.singular_values();
        let max = sv.max();
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        if ratio <= tol_rank {
            return Err(l);
        }
        out.push(ratio);
    }
    Ok(out)
}

/// Density actuation in φ-coordinates: (√b, 0, 0).
pub fn density_input(p: &FluidParams) -> Vector3<C64> {
    Vector3::new(C64::new(p.b().sqrt(), 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0))
}

pub fn hautus_check(p: &FluidParams, roots: &CubicRoots, n: i64) -> Result<HautusReport> {
    const TOL_RANK: f64 = 1e-10;
    if n == 0 {
        // On Z_m the zero mode is the scalar density mean: A_0 = 0, B_0 = √b.
        let a = DMatrix::from_element(1, 1, C64::new(0.0, 0.0));
        let b = DMatrix::from_element(1, 1, C64::new(p.b().sqrt(), 0.0));
        let r = hautus_rank(&a, &b, &[C64::new(0.0, 0.0)], TOL_RANK)
            .map_err(|l| Error::RankDeficient { n, lambda: (l.re, l.im) })?;
        return Ok(HautusReport { n, rank: 1, sigma_ratios: r });
    }
    let sys = ModeEigenSystem::compute(p, roots, n)?;
    let a3 = crate::spectral::mode_matrix(p, n)?;
    let a = DMatrix::from_fn(3, 3, |i, j| a3[(i, j)]);
    let bv = density_input(p);
    let b = DMatrix::from_fn(3, 1, |i, _| bv[i]);
    let r = hautus_rank(&a, &b, &sys.lambdas, TOL_RANK)
        .map_err(|l| Error::RankDeficient { n, lambda: (l.re, l.im) })?;
    Ok(HautusReport { n, rank: 3, sigma_ratios: r })
}

/// B_n in modal coordinates: b√(2π)/conj(ψ_{n,l}).
pub fn mode_control_operator(p: &FluidParams, sys: &ModeEigenSystem) -> Vector3<C64> {
    let s = p.b() * (2.0 * PI).sqrt();
    Vector3::from_fn(|l, _| C64::new(s, 0.0) / sys.psi[l].conj())
}

/// Per-mode Gramian data for everywhere density control.
#[derive(Clone, Debug)]
pub struct ModeControlData {
    pub n: i64,
    pub b_n: Vector3<C64>,
    pub w: Matrix3<C64>,
    pub w_inv: Matrix3<C64>,
    pub cond: f64,
}

/// W^{ij} = 2πb²(e^{T(λ_i+λ̄_j)} − 1)/((λ_i+λ̄_j) conj(ψ_i) ψ_j).
pub fn gramian_closed_form(p: &FluidParams, sys: &ModeEigenSystem, t: f64) -> Result<ModeControlData> {
    let b = p.b();
    let lam = sys.lambdas;
    let psi = sys.psi;
    let w = Matrix3::from_fn(|i, j| {
        let z = lam[i] + lam[j].conj();
        let e = if i == j {
            // Real diagonal form.
            C64::new(exp_integral(C64::new(2.0 * lam[i].re, 0.0), t).re, 0.0)
        } else {
            exp_integral(z, t)
        };
        e * (2.0 * PI * b * b) / (psi[i].conj() * psi[j])
    });
    let w_inv = w
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure(format!("singular Gramian at mode {}", sys.n)))?;
    let sv = w.singular_values();
    Ok(ModeControlData {
        n: sys.n,
        b_n: mode_control_operator(p, sys),
        w,
        w_inv,
        cond: sv.max() / sv.min(),
    })
}

/// Large-|n| limit of the diagonal Gramian entry on branch l.
pub fn gramian_diagonal_limit(p: &FluidParams, roots: &CubicRoots, l: usize, t: f64) -> f64 {
    let (b, u, rho, k, mu) = (p.b(), p.u_s, p.rho_s, p.kappa, p.mu);
    let bl = roots.beta[l];
    let w = roots.omega[l];
    let theta2 = b + (bl + u).powi(2) / rho + mu * (bl + u).powi(2) / (k * rho * rho * bl * bl);
    b * b * (1.0 - (-2.0 * t * w).exp()) / (2.0 * w * theta2)
}

/// Minimal-norm density control of one mode, f(t) = Σ_l g_l e^{λ̄_l(T−t)}.
#[derive(Clone, Debug, Serialize)]
pub struct ModeControl {
    pub n: i64,
    pub horizon: f64,
    pub exponents: [C64; 3],
    pub amplitudes: [C64; 3],
    /// ∫₀ᵀ |f|² dt.
    pub norm_sq: f64,
}

impl ModeControl {
    pub fn eval(&self, t: f64) -> C64 {
        (0..3)
            .map(|l| self.amplitudes[l] * (self.exponents[l] * (self.horizon - t)).exp())
            .sum()
    }
}

/// f_n(t) = −B_n^H e^{(T−t)Λ^H} W⁻¹ (e^{TΛ} d0 − d1), steering d0 to d1.
pub fn minimal_control_mode(
    data: &ModeControlData,
    sys: &ModeEigenSystem,
    t: f64,
    d0: &Vector3<C64>,
    d1: &Vector3<C64>,
) -> ModeControl {
    let e = Vector3::from_fn(|l, _| (sys.lambdas[l] * t).exp() * d0[l]) - d1;
    let eta = data.w_inv * e;
    let amplitudes = std::array::from_fn(|l| -data.b_n[l].conj() * eta[l]);
    let norm_sq = (eta.adjoint() * data.w * eta)[(0, 0)].re;
    ModeControl {
        n: data.n,
        horizon: t,
        exponents: sys.lambdas.map(|l| l.conj()),
        amplitudes,
        norm_sq,
    }
}

/// Everywhere density control assembled over all retained modes.
#[derive(Clone, Debug, Serialize)]
pub struct EverywhereControl {
    pub horizon: f64,
    /// Constant control of the mean density.
    pub zero_mode: C64,
    pub modes: Vec<ModeControl>,
    pub max_cond: f64,
    /// max_n ‖f_n‖ / ‖z_{0,n}‖ over modes with nonzero data.
    pub max_gain: f64,
}

impl EverywhereControl {
    /// Density forcing coefficient of mode n at time t.
    pub fn coefficient(&self, n: i64, t: f64) -> C64 {
        if n == 0 {
            return self.zero_mode;
        }
        let big_n = self.modes.len() as i64 / 2;
        let i = if n < 0 { n + big_n } else { n + big_n - 1 };
        self.modes[i as usize].eval(t)
    }

    pub fn norm(&self) -> f64 {
        let s: f64 = self.modes.iter().map(|m| m.norm_sq).sum();
        (s + self.zero_mode.norm_sqr() * self.horizon).sqrt()
    }

    pub fn forcing(&self) -> impl Fn(i64, f64) -> [C64; 3] + Sync + '_ {
        move |n, t| [self.coefficient(n, t), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]
    }
}

/// Steers state0 (in Z_m) to target (default zero) at time T.
pub fn synthesize_everywhere_control(
    basis: &ModalBasis,
    state0: &SpectralState,
    target: Option<&SpectralState>,
    t: f64,
) -> Result<EverywhereControl> {
    let p = &basis.params;
    let zero = SpectralState::zeros(state0.big_n, state0.subspace);
    let target = target.unwrap_or(&zero);
    let results: Vec<(ModeControl, f64, f64)> = basis
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|m| {
            let data = gramian_closed_form(p, &m.sys, t)?;
            let n = m.sys.n;
            let d0 = m.to_modal(p, &state0.get(n));
            let d1 = m.to_modal(p, &target.get(n));
            let ctl = minimal_control_mode(&data, &m.sys, t, &d0, &d1);
            let z0n = crate::spectral::z_inner(p, &state0.get(n), &state0.get(n)).re.sqrt() / (2.0 * PI).sqrt();
            let gain = if z0n > 0.0 { ctl.norm_sq.sqrt() / z0n } else { 0.0 };
            Ok((ctl, data.cond, gain))
        })
        .collect::<Result<Vec<_>>>()?;
    let sb = p.b().sqrt();
    let d00 = basis.zero_modal(state0);
    let d01 = basis.zero_modal(target);
    Ok(EverywhereControl {
        horizon: t,
        zero_mode: -(d00 - d01) / (sb * t),
        max_cond: results.iter().map(|r| r.1).fold(0.0, f64::max),
        max_gain: results.iter().map(|r| r.2).fold(0.0, f64::max),
        modes: results.into_iter().map(|r| r.0).collect(),
    })
}

/// Forward-evolves with the control and returns ‖z(T) − target‖.
pub fn everywhere_residual(
    basis: &ModalBasis,
    state0: &SpectralState,
    target: Option<&SpectralState>,
    ctl: &EverywhereControl,
    quad: QuadratureConfig,
) -> f64 {
    let f = ctl.forcing();
    let (_, fin) = dynamics::evolve(basis, state0, ctl.horizon, Some(&f), 1, quad);
    let diff = match target {
        Some(z1) => fin.sub(z1),
        None => fin,
    };
    energy_norm(&diff, &basis.params)
}

/// B*ξ*_{n,l}: boundary trace functional applied to an adjoint eigenvector.
pub fn boundary_observation(p: &FluidParams, kind: ControlKind, sys: &ModeEigenSystem, l: usize) -> Result<C64> {
    let a = sys.xi_star_coeffs[l];
    let ps = sys.psi[l];
    let (b, u, rho) = (p.b(), p.u_s, p.rho_s);
    let v = match kind {
        ControlKind::BoundaryDensity => (a[0] * (b * u) + a[1] * (b * rho)) / ps,
        ControlKind::BoundaryVelocity => (a[0] * (b * rho) + a[1] * (rho * u) - a[2]) / ps,
        ControlKind::BoundaryStress => -a[1] / ps,
        _ => return Err(Error::Validation(vec!["boundary observation needs a boundary kind".into()])),
    };
    if v.norm() < 1e-13 {
        return Err(Error::ObservationVanished { n: sys.n, branch: l + 1 });
    }
    Ok(v)
}

/// One exponential in a HUM family: e^{λ t} dynamics with observation weight.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ModalIndex {
    pub n: i64,
    /// Branch 0..3; 0 for the zero mode or the mean constraint.
    pub l: usize,
    pub lambda: C64,
}

/// Modal coordinates of a state in the order (zero mode?), −N..N, l = 0..3.
pub fn modal_vector(basis: &ModalBasis, state: &SpectralState, include_zero: bool) -> Vec<C64> {
    let p = &basis.params;
    let mut v = Vec::new();
    if include_zero {
        v.push(basis.zero_modal(state));
    }
    for m in basis.iter() {
        let d = m.to_modal(p, &state.get(m.sys.n));
        v.extend(d.iter().copied());
    }
    v
}

/// Inverse of `modal_vector`; velocity and stress means are set to zero.
pub fn state_from_modal(basis: &ModalBasis, v: &[C64], include_zero: bool, subspace: dynamics::Subspace) -> SpectralState {
    let p = &basis.params;
    let mut s = SpectralState::zeros(basis.big_n, subspace);
    let mut k = 0;
    if include_zero {
        s.set(0, [v[0] / p.b().sqrt(), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        k = 1;
    }
    for m in basis.iter() {
        let d = Vector3::new(v[k], v[k + 1], v[k + 2]);
        k += 3;
        s.set(m.sys.n, m.from_modal(p, &d));
    }
    s
}

fn modal_indices(basis: &ModalBasis, include_zero: bool) -> Vec<ModalIndex> {
    let mut idx = Vec::new();
    if include_zero {
        idx.push(ModalIndex { n: 0, l: 0, lambda: C64::new(0.0, 0.0) });
    }
    for m in basis.iter() {
        for l in 0..3 {
            idx.push(ModalIndex { n: m.sys.n, l, lambda: m.sys.lambdas[l] });
        }
    }
    idx
}

/// Result of a HUM solve.
#[derive(Clone, Debug, Serialize)]
pub struct HumControl {
    pub kind: ControlKind,
    pub horizon: f64,
    pub indices: Vec<ModalIndex>,
    /// Observation weights (b_a for boundary kinds).
    pub weights: Vec<C64>,
    /// Dual coefficients η.
    pub eta: Vec<C64>,
    pub cond: f64,
    /// Interval O for localized controls.
    pub interval: Option<(f64, f64)>,
    /// Whether a zero-mean constraint was appended (last entry of `eta`).
    pub zero_mean: bool,
    pub norm: f64,
}

impl HumControl {
    /// Boundary control q(t) = Σ η_a b_a e^{λ̄_a(T−t)} (+ η_c for the mean constraint).
    pub fn boundary_value(&self, t: f64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (k, idx) in self.indices.iter().enumerate() {
            s += self.eta[k] * self.weights[k] * (idx.lambda.conj() * (self.horizon - t)).exp();
        }
        if self.zero_mean {
            s += self.eta[self.indices.len()];
        }
        s
    }

    /// Projection of the localized control 1_O f onto e^{inx}/√(2π).
    pub fn localized_coefficient(&self, p: &FluidParams, n: i64, t: f64) -> C64 {
        let (l1, l2) = self.interval.expect("localized control");
        let mut s = C64::new(0.0, 0.0);
        for (k, idx) in self.indices.iter().enumerate() {
            let time = (idx.lambda.conj() * (self.horizon - t)).exp();
            s += self.eta[k] * self.weights[k] * time * interval_fourier(idx.n - n, l1, l2);
        }
        s * (p.b() / (2.0 * PI).sqrt())
    }

    /// Samples of the emitted scalar control on a uniform grid.
    pub fn sample(&self, p: &FluidParams, samples: usize) -> Vec<(f64, C64)> {
        (0..samples)
            .map(|k| {
                let t = self.horizon * k as f64 / (samples - 1).max(1) as f64;
                let v = if self.kind.is_boundary() {
                    self.boundary_value(t)
                } else {
                    self.localized_coefficient(p, 0, t)
                };
                (t, v)
            })
            .collect()
    }
}

/// ∫_{l1}^{l2} e^{ikx} dx.
pub fn interval_fourier(k: i64, l1: f64, l2: f64) -> C64 {
    if k == 0 {
        return C64::new(l2 - l1, 0.0);
    }
    let kf = k as f64;
    ((I * kf * l2).exp() - (I * kf * l1).exp()) / (I * kf)
}

fn hum_solve(w: &DMatrix<C64>, rhs: &DVector<C64>) -> Result<(DVector<C64>, f64)> {
    let ev = linalg::hermitian_eigenvalues(w);
    let cond = if ev[0] > 0.0 { ev[ev.len() - 1] / ev[0] } else { f64::INFINITY };
    if !(cond <= COND_LIMIT) {
        return Err(Error::IllConditioned { cond, limit: COND_LIMIT });
    }
    Ok((linalg::solve_hpd(w, rhs)?, cond))
}

/// Boundary HUM Gramian entries conj(b_a) b_b ∫₀ᵀ e^{(λ_a+λ̄_b)t} dt, with an
/// optional mean-constraint row (λ = 0, weight 1).
pub fn boundary_gramian(
    basis: &ModalBasis,
    kind: ControlKind,
    t: f64,
    zero_mean: bool,
) -> Result<(Vec<ModalIndex>, Vec<C64>, DMatrix<C64>)> {
    let p = &basis.params;
    let idx = modal_indices(basis, false);
    let mut weights = Vec::with_capacity(idx.len());
    for m in basis.iter() {
        for l in 0..3 {
            weights.push(boundary_observation(p, kind, &m.sys, l)?);
        }
    }
    let mut lam: Vec<C64> = idx.iter().map(|i| i.lambda).collect();
    let mut wts = weights.clone();
    if zero_mean {
        lam.push(C64::new(0.0, 0.0));
        wts.push(C64::new(1.0, 0.0));
    }
    let dim = lam.len();
    let w = DMatrix::from_fn(dim, dim, |a, b| wts[a].conj() * wts[b] * exp_integral(lam[a] + lam[b].conj(), t));
    Ok((idx, weights, linalg::hermitize(&w)))
}

/// HUM boundary control steering state0 ∈ Z_{m,m} to target (default 0).
pub fn synthesize_boundary_control(
    basis: &ModalBasis,
    state0: &SpectralState,
    target: Option<&SpectralState>,
    t: f64,
    kind: ControlKind,
    zero_mean: bool,
) -> Result<HumControl> {
    if !kind.is_boundary() {
        return Err(Error::Validation(vec!["kind must be a boundary placement".into()]));
    }
    let (idx, weights, w) = boundary_gramian(basis, kind, t, zero_mean)?;
    let c0 = modal_vector(basis, state0, false);
    let c1 = match target {
        Some(z1) => modal_vector(basis, z1, false),
        None => vec![C64::new(0.0, 0.0); c0.len()],
    };
    let mut rhs: Vec<C64> = idx
        .iter()
        .zip(c0.iter().zip(&c1))
        .map(|(i, (a, b))| -((i.lambda * t).exp() * a - b))
        .collect();
    if zero_mean {
        rhs.push(C64::new(0.0, 0.0));
    }
    let rhs = DVector::from_vec(rhs);
    let (eta, cond) = hum_solve(&w, &rhs)?;
    let norm = (eta.adjoint() * &w * &eta)[(0, 0)].re.max(0.0).sqrt();
    Ok(HumControl {
        kind,
        horizon: t,
        indices: idx,
        weights,
        eta: eta.iter().copied().collect(),
        cond,
        interval: None,
        zero_mean,
        norm,
    })
}

/// Localized density-control Gramian over {ξ_0} ∪ {ξ_{n,l}}.
pub fn localized_gramian(
    basis: &ModalBasis,
    t: f64,
    interval: (f64, f64),
) -> (Vec<ModalIndex>, Vec<C64>, DMatrix<C64>) {
    let p = &basis.params;
    let b = p.b();
    let idx = modal_indices(basis, true);
    // Density component of ξ*_a is w_a e^{i n_a x}.
    let mut weights = vec![C64::new(1.0 / (2.0 * PI * b).sqrt(), 0.0)];
    for m in basis.iter() {
        for l in 0..3 {
            weights.push(C64::new(1.0, 0.0) / m.sys.psi[l]);
        }
    }
    let (l1, l2) = interval;
    let dim = idx.len();
    let w = DMatrix::from_fn(dim, dim, |a, c| {
        let ia = idx[a];
        let ic = idx[c];
        weights[a].conj() * weights[c] * (b * b) * exp_integral(ia.lambda + ic.lambda.conj(), t) * interval_fourier(ic.n - ia.n, l1, l2)
    });
    (idx, weights, linalg::hermitize(&w))
}

/// HUM control f·1_O acting on the density, steering state0 ∈ Z_m.
pub fn synthesize_localized_control(
    basis: &ModalBasis,
    state0: &SpectralState,
    target: Option<&SpectralState>,
    t: f64,
    interval: (f64, f64),
) -> Result<HumControl> {
    let (l1, l2) = interval;
    if !(0.0 <= l1 && l1 < l2 && l2 <= 2.0 * PI) {
        return Err(Error::Validation(vec!["interval must satisfy 0 ≤ l1 < l2 ≤ 2π".into()]));
    }
    let (idx, weights, w) = localized_gramian(basis, t, interval);
    let c0 = modal_vector(basis, state0, true);
    let c1 = match target {
        Some(z1) => modal_vector(basis, z1, true),
        None => vec![C64::new(0.0, 0.0); c0.len()],
    };
    let rhs = DVector::from_iterator(
        idx.len(),
        idx.iter().zip(c0.iter().zip(&c1)).map(|(i, (a, b))| -((i.lambda * t).exp() * a - b)),
    );
    let (eta, cond) = hum_solve(&w, &rhs)?;
    let norm = (eta.adjoint() * &w * &eta)[(0, 0)].re.max(0.0).sqrt();
    Ok(HumControl {
        kind: ControlKind::LocalizedDensity,
        horizon: t,
        indices: idx,
        weights,
        eta: eta.iter().copied().collect(),
        cond,
        interval: Some(interval),
        zero_mean: false,
        norm,
    })
}

/// Independent forward check of a boundary control: integrates each modal
/// ODE c′ = λc + conj(b) q by composite Gauss–Legendre and measures
/// ‖z(T) − target‖ in Z.
pub fn boundary_residual(
    basis: &ModalBasis,
    state0: &SpectralState,
    target: Option<&SpectralState>,
    ctl: &HumControl,
    quad: QuadratureConfig,
) -> f64 {
    let t = ctl.horizon;
    let rule = Composite::with_density(0.0, t, quad.panels_per_unit, quad.order);
    let qv: Vec<C64> = rule.nodes.iter().map(|&s| ctl.boundary_value(s)).collect();
    let c0 = modal_vector(basis, state0, false);
    let cf: Vec<C64> = ctl
        .indices
        .par_iter()
        .enumerate()
        .map(|(k, idx)| {
            let mut acc = C64::new(0.0, 0.0);
            for ((&s, &w), q) in rule.nodes.iter().zip(&rule.weights).zip(&qv) {
                acc += (idx.lambda * (t - s)).exp() * q * w;
            }
            (idx.lambda * t).exp() * c0[k] + ctl.weights[k].conj() * acc
        })
        .collect();
    let fin = state_from_modal(basis, &cf, false, dynamics::Subspace::Zmm);
    let diff = match target {
        Some(z1) => fin.sub(z1),
        None => fin,
    };
    energy_norm(&diff, &basis.params)
}

/// ∫₀ᵀ q dt of a boundary control, by quadrature.
pub fn boundary_mean(ctl: &HumControl, quad: QuadratureConfig) -> C64 {
    let rule = Composite::with_density(0.0, ctl.horizon, quad.panels_per_unit, quad.order);
    rule.nodes.iter().zip(&rule.weights).map(|(&s, &w)| ctl.boundary_value(s) * w).sum()
}

/// Independent forward check of a localized control through the φ-space
/// propagators and the Fourier projection of 1_O f.
pub fn localized_residual(
    basis: &ModalBasis,
    state0: &SpectralState,
    target: Option<&SpectralState>,
    ctl: &HumControl,
    quad: QuadratureConfig,
) -> f64 {
    let p = basis.params;
    let f = |n: i64, s: f64| [ctl.localized_coefficient(&p, n, s), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
    let (_, fin) = dynamics::evolve(basis, state0, ctl.horizon, Some(&f), 1, quad);
    let diff = match target {
        Some(z1) => fin.sub(z1),
        None => fin,
    };
    energy_norm(&diff, &p)
}

/// Mode-level helper used by tests and the CLI: ∫₀ᵀ e^{tA_n} b b^H e^{tA_n^H} dt
/// by Gauss–Legendre on the matrix exponential, mapped to modal coordinates.
pub fn gramian_by_quadrature(p: &FluidParams, mode: &ModeBasis, t: f64, quad: QuadratureConfig) -> Result<Matrix3<C64>> {
    let a = crate::spectral::mode_matrix(p, mode.sys.n)?;
    let b = density_input(p);
    let rule = Composite::with_density(0.0, t, quad.panels_per_unit, quad.order);
    let mut acc = Matrix3::zeros();
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let e = (a * C64::new(s, 0.0)).exp() * b;
        acc += e * e.adjoint() * C64::new(w, 0.0);
    }
    Ok(mode.gamma * acc * mode.gamma.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Subspace;
    use crate::spectral::solve_beta_cubic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_integral_limits() {
        assert_eq!(exp_integral(C64::new(0.0, 0.0), 2.0), C64::new(2.0, 0.0));
        let z = C64::new(-0.3, 4.0);
        let direct = ((z * 1.5).exp() - 1.0) / z;
        assert!((exp_integral(z, 1.5) - direct).norm() < 1e-15);
        let small = C64::new(1e-9, -2e-9);
        assert!((exp_integral(small, 1.0) - C64::new(1.0, 0.0) - small * 0.5).norm() < 1e-15);
    }

    #[test]
    fn hautus_full_rank() {
        let p = FluidParams::unit();
        let r = solve_beta_cubic(&p).unwrap();
        for n in 1..=64 {
            assert_eq!(hautus_check(&p, &r, n).unwrap().rank, 3);
            assert_eq!(hautus_check(&p, &r, -n).unwrap().rank, 3);
        }
        assert_eq!(hautus_check(&p, &r, 0).unwrap().rank, 1);
    }

    #[test]
    fn hautus_detects_degenerate_input() {
        let c = |x: f64| C64::new(x, 0.0);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![c(-1.0), c(-2.0), c(-3.0)]));
        let b = DMatrix::from_column_slice(3, 1, &[c(1.0), c(0.0), c(1.0)]);
        let err = hautus_rank(&a, &b, &[c(-1.0), c(-2.0), c(-3.0)], 1e-10).unwrap_err();
        assert_eq!(err, c(-2.0));
    }

    #[test]
    fn control_operator_is_gamma_times_input() {
        let basis = ModalBasis::new(&FluidParams::unit(), 200).unwrap();
        let p = basis.params;
        let mut cb: f64 = 0.0;
        for m in basis.iter() {
            let bn = mode_control_operator(&p, &m.sys);
            let g = m.gamma * density_input(&p);
            assert!((bn - g).norm() < 1e-12 * bn.norm());
            cb = cb.max(bn.norm());
        }
        assert!(cb.is_finite() && cb < 10.0);
        let b100 = mode_control_operator(&p, &basis.mode(100).sys);
        let b200 = mode_control_operator(&p, &basis.mode(200).sys);
        for l in 0..3 {
            assert!((b100[l].norm() - b200[l].norm()).abs() < 1e-2 * b200[l].norm());
        }
    }

    #[test]
    fn gramian_matches_quadrature() {
        let basis = ModalBasis::new(&FluidParams::unit(), 3).unwrap();
        let p = basis.params;
        let m = basis.mode(3);
        let w = gramian_closed_form(&p, &m.sys, 1.0).unwrap().w;
        let q = gramian_by_quadrature(&p, m, 1.0, QuadratureConfig::default()).unwrap();
        assert!((w - q).norm() < 1e-8);
        let herm = (w - w.adjoint()).norm();
        assert!(herm < 1e-12);
    }

    #[test]
    fn minimal_control_kills_mode() {
        let basis = ModalBasis::new(&FluidParams::unit(), 5).unwrap();
        let p = basis.params;
        let m = basis.mode(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut z0 = SpectralState::zeros(5, Subspace::Zmm);
        z0.set(5, std::array::from_fn(|_| C64::new(rand::Rng::gen_range(&mut rng, -1.0..1.0), 0.5)));
        let data = gramian_closed_form(&p, &m.sys, 1.0).unwrap();
        let d0 = m.to_modal(&p, &z0.get(5));
        let ctl = minimal_control_mode(&data, &m.sys, 1.0, &d0, &Vector3::zeros());
        let f = |n: i64, t: f64| {
            let v = if n == 5 { ctl.eval(t) } else { C64::new(0.0, 0.0) };
            [v, C64::new(0.0, 0.0), C64::new(0.0, 0.0)]
        };
        let (_, fin) = dynamics::evolve(&basis, &z0, 1.0, Some(&f), 1, QuadratureConfig::default());
        assert!(energy_norm(&fin, &p) <= 1e-10 * energy_norm(&z0, &p));
        // Closed-form norm agrees with quadrature of |f|².
        let rule = Composite::new(0.0, 1.0, 64, 8);
        let q: f64 = rule.integrate(|t| ctl.eval(t).norm_sqr());
        assert!((q - ctl.norm_sq).abs() < 1e-10 * q);
    }

    #[test]
    fn zero_mode_control_is_constant() {
        let basis = ModalBasis::new(&FluidParams::unit(), 2).unwrap();
        let mut z0 = SpectralState::zeros(2, Subspace::Zm);
        // c·ξ_0 with c = 0.8: ρ-coefficient c/√b · (1/√(2π)) · √(2π).
        z0.set(0, [C64::new(0.8, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        let ctl = synthesize_everywhere_control(&basis, &z0, None, 2.0).unwrap();
        assert!((ctl.zero_mode - C64::new(-0.8 / 2.0, 0.0)).norm() < 1e-15);
        let g = gramian_closed_form(&basis.params, &basis.mode(1).sys, 2.0).unwrap();
        assert!(g.cond.is_finite());
    }

    #[test]
    fn zero_state_gives_zero_control() {
        let basis = ModalBasis::new(&FluidParams::unit(), 4).unwrap();
        let z0 = SpectralState::zeros(4, Subspace::Zm);
        let ctl = synthesize_everywhere_control(&basis, &z0, None, 1.0).unwrap();
        assert_eq!(ctl.norm(), 0.0);
        let h = synthesize_boundary_control(&basis, &SpectralState::zeros(4, Subspace::Zmm), None, 30.0, ControlKind::BoundaryDensity, true).unwrap();
        assert!(h.eta.iter().all(|e| e.norm() == 0.0));
    }

    #[test]
    fn boundary_observation_identities() {
        let p = FluidParams::with_b(1.3, 0.8, 1.7, 0.6, 1.1);
        let r = solve_beta_cubic(&p).unwrap();
        let b = p.b();
        for n in [-4, 1, 7, 30] {
            let sys = ModeEigenSystem::compute(&p, &r, n).unwrap();
            let nf = n as f64;
            for l in 0..3 {
                let lb = sys.lambdas[l].conj();
                let dens = boundary_observation(&p, ControlKind::BoundaryDensity, &sys, l).unwrap();
                let want = lb * b / (sys.psi[l] * I * nf);
                assert!((dens - want).norm() < 1e-10 * want.norm());
                let vel = boundary_observation(&p, ControlKind::BoundaryVelocity, &sys, l).unwrap();
                let want = -(lb * (lb - I * nf * p.u_s)) / (sys.psi[l] * nf * nf);
                assert!((vel - want).norm() < 1e-10 * want.norm(), "{vel} vs {want}");
                let st = boundary_observation(&p, ControlKind::BoundaryStress, &sys, l).unwrap();
                assert!((st + sys.xi_star_coeffs[l][1] / sys.psi[l]).norm() < 1e-15);
                assert!(st.norm() > 0.0);
            }
        }
    }

    #[test]
    fn full_interval_localized_matches_everywhere() {
        let basis = ModalBasis::new(&FluidParams::unit(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z0 = SpectralState::random(3, Subspace::Zm, &mut rng);
        let t = 1.5;
        let ev = synthesize_everywhere_control(&basis, &z0, None, t).unwrap();
        let lc = synthesize_localized_control(&basis, &z0, None, t, (0.0, 2.0 * PI)).unwrap();
        let p = basis.params;
        for n in -3..=3 {
            for s in [0.0, 0.4, 1.2] {
                let a = ev.coefficient(n, s);
                let b = lc.localized_coefficient(&p, n, s);
                assert!((a - b).norm() < 1e-8 * (1.0 + a.norm()), "n={n} {a} {b}");
            }
        }
        let q = QuadratureConfig::default();
        let r1 = everywhere_residual(&basis, &z0, None, &ev, q);
        let r2 = localized_residual(&basis, &z0, None, &lc, q);
        assert!((r1 - r2).abs() < 1e-8);
    }
}
