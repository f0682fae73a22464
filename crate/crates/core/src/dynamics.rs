//! Truncated states, exact modal propagation, forced and adjoint evolution.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::FluidParams;
use crate::quadrature::Composite;
use crate::spectral::{
    gamma_matrix, mode_matrix, solve_beta_cubic, xi_zero, CubicRoots, ModeEigenSystem,
    SpectralTolerances,
};
use crate::C64;

/// Above this Γ_n condition number propagation uses the matrix exponential.
pub const GAMMA_COND_FALLBACK: f64 = 1e8;

/// Which closed subspace of Z a state is declared to live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Subspace {
    Z,
    /// Zero-mean velocity and stress.
    Zm,
    /// All three components zero-mean.
    Zmm,
}

/// Fourier coefficients of (ρ, u, S) on e^{inx}/√(2π), −N ≤ n ≤ N.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub big_n: usize,
    coeffs: Vec<[C64; 3]>,
    pub subspace: Subspace,
    /// Set when the caller built the state with c_{−n} = conj(c_n).
    pub real_valued: bool,
}

impl SpectralState {
    pub fn zeros(big_n: usize, subspace: Subspace) -> Self {
        SpectralState {
            big_n,
            coeffs: vec![[C64::new(0.0, 0.0); 3]; 2 * big_n + 1],
            subspace,
            real_valued: false,
        }
    }

    pub fn get(&self, n: i64) -> [C64; 3] {
        self.coeffs[(n + self.big_n as i64) as usize]
    }

    pub fn set(&mut self, n: i64, v: [C64; 3]) {
        let i = (n + self.big_n as i64) as usize;
        self.coeffs[i] = v;
    }

    /// Zeroes whatever the declared subspace forbids.
    pub fn project(&mut self) {
        let z = C64::new(0.0, 0.0);
        let i0 = self.big_n;
        match self.subspace {
            Subspace::Z => {}
            Subspace::Zm => {
                self.coeffs[i0][1] = z;
                self.coeffs[i0][2] = z;
            }
            Subspace::Zmm => self.coeffs[i0] = [z; 3],
        }
    }

    /// Whether the n = 0 coefficient respects the declared subspace.
    pub fn satisfies_subspace(&self) -> bool {
        let c0 = self.get(0);
        match self.subspace {
            Subspace::Z => true,
            Subspace::Zm => c0[1].norm() == 0.0 && c0[2].norm() == 0.0,
            Subspace::Zmm => c0.iter().all(|v| v.norm() == 0.0),
        }
    }

    /// Seeded random state with unit-scale coefficients.
    pub fn random<R: rand::Rng>(big_n: usize, subspace: Subspace, rng: &mut R) -> Self {
        let mut s = Self::zeros(big_n, subspace);
        for c in s.coeffs.iter_mut() {
            for v in c.iter_mut() {
                *v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        s.project();
        s
    }

    pub fn scale(&self, a: C64) -> Self {
        let mut s = self.clone();
        for c in s.coeffs.iter_mut() {
            for v in c.iter_mut() {
                *v *= a;
            }
        }
        s
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut s = self.clone();
        for (c, o) in s.coeffs.iter_mut().zip(&other.coeffs) {
            for k in 0..3 {
                c[k] -= o[k];
            }
        }
        s
    }

    /// Unweighted L² norms of ρ, u, S.
    pub fn component_norms(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for c in &self.coeffs {
            for k in 0..3 {
                acc[k] += c[k].norm_sqr();
            }
        }
        acc.map(f64::sqrt)
    }
}

pub fn energy_norm(state: &SpectralState, p: &FluidParams) -> f64 {
    let w = crate::spectral::z_weights(p);
    let n2 = state.component_norms();
    (0..3).map(|k| w[k] * n2[k] * n2[k]).sum::<f64>().sqrt()
}

/// Z inner product of two states of equal truncation.
pub fn state_inner(p: &FluidParams, a: &SpectralState, b: &SpectralState) -> C64 {
    let w = crate::spectral::z_weights(p);
    a.coeffs
        .iter()
        .zip(&b.coeffs)
        .map(|(x, y)| (0..3).map(|k| x[k] * y[k].conj() * w[k]).sum::<C64>())
        .sum()
}

/// Coefficient triple → coordinates in the orthonormal φ basis.
pub fn to_phi(p: &FluidParams, c: &[C64; 3]) -> Vector3<C64> {
    let w = crate::spectral::z_weights(p);
    Vector3::new(c[0] * w[0].sqrt(), c[1] * w[1].sqrt(), c[2] * w[2].sqrt())
}

pub fn from_phi(p: &FluidParams, v: &Vector3<C64>) -> [C64; 3] {
    let w = crate::spectral::z_weights(p);
    [v[0] / w[0].sqrt(), v[1] / w[1].sqrt(), v[2] / w[2].sqrt()]
}

/// Eigen-data of one mode together with Γ_n and its inverse.
#[derive(Clone, Debug)]
pub struct ModeBasis {
    pub sys: ModeEigenSystem,
    pub gamma: Matrix3<C64>,
    pub gamma_inv: Matrix3<C64>,
    pub cond: f64,
    generator: Matrix3<C64>,
}

impl ModeBasis {
    pub fn new(p: &FluidParams, roots: &CubicRoots, n: i64, tol: &SpectralTolerances) -> Result<Self> {
        let sys = ModeEigenSystem::compute_with(p, roots, n, tol)?;
        let gamma = gamma_matrix(p, &sys).entries;
        // Columns of Γ⁻¹ are the direct eigenvectors in φ-coordinates.
        let gamma_inv = Matrix3::from_columns(&[sys.xi_phi(p, 0), sys.xi_phi(p, 1), sys.xi_phi(p, 2)]);
        let sv = gamma.singular_values();
        let cond = sv.max() / sv.min();
        Ok(ModeBasis {
            sys,
            gamma,
            gamma_inv,
            cond,
            generator: mode_matrix(p, n)?,
        })
    }

    pub fn lambdas(&self) -> [C64; 3] {
        self.sys.lambdas
    }

    /// e^{tA_n} acting on φ-coordinates.
    pub fn propagator(&self, t: f64) -> Matrix3<C64> {
        if self.cond > GAMMA_COND_FALLBACK {
            return (self.generator * C64::new(t, 0.0)).exp();
        }
        let d = Matrix3::from_diagonal(&Vector3::from_fn(|l, _| (self.sys.lambdas[l] * t).exp()));
        self.gamma_inv * d * self.gamma
    }

    /// Modal coordinates d = Γ_n c_φ of a physical coefficient triple.
    pub fn to_modal(&self, p: &FluidParams, c: &[C64; 3]) -> Vector3<C64> {
        self.gamma * to_phi(p, c)
    }

    pub fn from_modal(&self, p: &FluidParams, d: &Vector3<C64>) -> [C64; 3] {
        from_phi(p, &(self.gamma_inv * d))
    }
}

/// All mode bases with 1 ≤ |n| ≤ N, plus the asymptotic roots.
#[derive(Clone, Debug)]
pub struct ModalBasis {
    pub params: FluidParams,
    pub roots: CubicRoots,
    pub big_n: usize,
    modes: Vec<ModeBasis>,
}

impl ModalBasis {
    pub fn new(p: &FluidParams, big_n: usize) -> Result<Self> {
        Self::with_tolerances(p, big_n, &SpectralTolerances::default())
    }

    pub fn with_tolerances(p: &FluidParams, big_n: usize, tol: &SpectralTolerances) -> Result<Self> {
        let roots = solve_beta_cubic(p)?;
        let ns: Vec<i64> = crate::spectral::modes(big_n).collect();
        let modes = ns
            .par_iter()
            .map(|&n| ModeBasis::new(p, &roots, n, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModalBasis {
            params: *p,
            roots,
            big_n,
            modes,
        })
    }

    pub fn mode(&self, n: i64) -> &ModeBasis {
        assert!(n != 0 && n.unsigned_abs() as usize <= self.big_n);
        let nn = self.big_n as i64;
        let i = if n < 0 { n + nn } else { n + nn - 1 };
        &self.modes[i as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModeBasis> {
        self.modes.iter()
    }

    /// Coefficient of ξ_0 in a state, i.e. √b times the mean density coefficient.
    pub fn zero_modal(&self, state: &SpectralState) -> C64 {
        state.get(0)[0] * self.params.b().sqrt()
    }

    /// The n = 0 block evolves by diag(0, 0, −1/κ).
    pub fn propagate_zero(&self, c: &[C64; 3], t: f64) -> [C64; 3] {
        [c[0], c[1], c[2] * (-t / self.params.kappa).exp()]
    }

    /// Free evolution e^{tA} of a whole state.
    pub fn propagate(&self, state: &SpectralState, t: f64) -> SpectralState {
        let mut out = state.clone();
        out.set(0, self.propagate_zero(&state.get(0), t));
        for m in &self.modes {
            let n = m.sys.n;
            let v = m.propagator(t) * to_phi(&self.params, &state.get(n));
            out.set(n, from_phi(&self.params, &v));
        }
        out
    }
}

/// e^{tA_n} c for a single mode, via exact diagonalization.
pub fn propagate_mode(p: &FluidParams, mode: &ModeBasis, c: &[C64; 3], t: f64) -> [C64; 3] {
    from_phi(p, &(mode.propagator(t) * to_phi(p, c)))
}

/// Time-sampled energies (and optionally a scalar control).
#[derive(Clone, Debug, Default, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Z-norm squared.
    pub energies: Vec<f64>,
    pub norm_rho: Vec<f64>,
    pub norm_u: Vec<f64>,
    pub norm_s: Vec<f64>,
    pub control: Option<Vec<C64>>,
}

impl TrajectoryRecord {
    pub fn push(&mut self, p: &FluidParams, t: f64, s: &SpectralState) {
        let e = energy_norm(s, p);
        let c = s.component_norms();
        self.times.push(t);
        self.energies.push(e * e);
        self.norm_rho.push(c[0]);
        self.norm_u.push(c[1]);
        self.norm_s.push(c[2]);
    }
}

/// Quadrature resolution for forced evolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct QuadratureConfig {
    pub panels_per_unit: usize,
    pub order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            panels_per_unit: 64,
            order: 8,
        }
    }
}

/// Per-mode forcing: physical coefficient triple of mode n at time t.
pub type Forcing<'a> = dyn Fn(i64, f64) -> [C64; 3] + Sync + 'a;

/// Evolves `state0` over [0, T], recording at `records + 1` uniform times.
/// Unforced modes advance exactly; forcing enters by variation of constants
/// with composite Gauss–Legendre on each recording interval.
pub fn evolve(
    basis: &ModalBasis,
    state0: &SpectralState,
    t_end: f64,
    forcing: Option<&Forcing>,
    records: usize,
    quad: QuadratureConfig,
) -> (TrajectoryRecord, SpectralState) {
    let p = &basis.params;
    let records = records.max(1);
    let dt = t_end / records as f64;
    let mut traj = TrajectoryRecord::default();
    let mut state = state0.clone();
    traj.push(p, 0.0, &state);
    let rule = Composite::with_density(0.0, dt, quad.panels_per_unit, quad.order);
    for k in 0..records {
        let t0 = k as f64 * dt;
        let mut next = basis.propagate(&state, dt);
        if let Some(f) = forcing {
            let zero_inc = rule.nodes.iter().zip(&rule.weights).fold([C64::new(0.0, 0.0); 3], |acc, (&s, &w)| {
                let g = f(0, t0 + s);
                let e = basis.propagate_zero(&g, dt - s);
                [acc[0] + e[0] * w, acc[1] + e[1] * w, acc[2] + e[2] * w]
            });
            let c0 = next.get(0);
            next.set(0, [c0[0] + zero_inc[0], c0[1] + zero_inc[1], c0[2] + zero_inc[2]]);
            let incs: Vec<(i64, Vector3<C64>)> = basis
                .modes
                .par_iter()
                .map(|m| {
                    let n = m.sys.n;
                    let mut acc = Vector3::zeros();
                    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
                        acc += m.propagator(dt - s) * to_phi(p, &f(n, t0 + s)) * C64::new(w, 0.0);
                    }
                    (n, acc)
                })
                .collect();
            for (n, acc) in incs {
                let cur = to_phi(p, &next.get(n)) + acc;
                next.set(n, from_phi(p, &cur));
            }
        }
        state = next;
        traj.push(p, t0 + dt, &state);
    }
    (traj, state)
}

/// Backward adjoint solution Σ c_{n,l} e^{λ̄(T−t)} ξ*_{n,l} + c_0 ξ_0.
#[derive(Clone, Debug)]
pub struct AdjointSolution<'a> {
    pub basis: &'a ModalBasis,
    pub horizon: f64,
    /// Coefficient of ξ_0 (constant in time).
    pub c0: C64,
    /// Coefficients c_{n,l} indexed like the mode list.
    pub coeffs: Vec<[C64; 3]>,
}

/// Terminal data (given on the adjoint eigenbasis) ↦ adjoint trajectory.
pub fn evolve_adjoint<'a>(
    basis: &'a ModalBasis,
    c0: C64,
    coeffs: Vec<[C64; 3]>,
    horizon: f64,
) -> AdjointSolution<'a> {
    assert_eq!(coeffs.len(), 2 * basis.big_n);
    AdjointSolution {
        basis,
        horizon,
        c0,
        coeffs,
    }
}

impl AdjointSolution<'_> {
    /// Physical coefficients at time t.
    pub fn at(&self, t: f64) -> SpectralState {
        let p = &self.basis.params;
        let mut s = SpectralState::zeros(self.basis.big_n, Subspace::Z);
        let z0 = xi_zero(p);
        let r2 = (2.0 * PI).sqrt();
        s.set(0, [self.c0 * z0[0] * r2, C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        for (m, c) in self.basis.modes.iter().zip(&self.coeffs) {
            let mut v = [C64::new(0.0, 0.0); 3];
            for l in 0..3 {
                let amp = c[l] * (m.sys.lambdas[l].conj() * (self.horizon - t)).exp();
                let xs = m.sys.xi_star(l);
                for k in 0..3 {
                    v[k] += amp * xs[k] * r2;
                }
            }
            s.set(m.sys.n, v);
        }
        s
    }
}

/// Samples (ρ, u, S) at x_j = 2πj/M.
pub fn synthesize_physical(state: &SpectralState, m: usize) -> Result<Vec<[C64; 3]>> {
    let needed = 2 * state.big_n + 1;
    if m < needed {
        return Err(Error::GridTooCoarse { m, needed });
    }
    let nn = state.big_n as i64;
    let norm = 1.0 / (2.0 * PI).sqrt();
    Ok((0..m)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / m as f64;
            let mut v = [C64::new(0.0, 0.0); 3];
            for n in -nn..=nn {
                let e = C64::from_polar(norm, n as f64 * x);
                let c = state.get(n);
                for k in 0..3 {
                    v[k] += c[k] * e;
                }
            }
            v
        })
        .collect())
}

/// Inverse of `synthesize_physical` for band-limited samples.
pub fn analyze_physical(samples: &[[C64; 3]], big_n: usize, subspace: Subspace) -> Result<SpectralState> {
    let m = samples.len();
    let needed = 2 * big_n + 1;
    if m < needed {
        return Err(Error::GridTooCoarse { m, needed });
    }
    let mut s = SpectralState::zeros(big_n, subspace);
    let nn = big_n as i64;
    let scale = (2.0 * PI).sqrt() / m as f64;
    for n in -nn..=nn {
        let mut v = [C64::new(0.0, 0.0); 3];
        for (j, smp) in samples.iter().enumerate() {
            let e = C64::from_polar(scale, -(n as f64) * 2.0 * PI * j as f64 / m as f64);
            for k in 0..3 {
                v[k] += smp[k] * e;
            }
        }
        s.set(n, v);
    }
    Ok(s)
}

/// sup over |n| ≤ N and sampled t ∈ [0, t_max] of ‖e^{tA_n}‖.
pub fn semigroup_bound(basis: &ModalBasis, t_max: f64, samples: usize) -> f64 {
    let mut best: f64 = 1.0;
    for m in basis.iter() {
        for k in 0..=samples {
            let t = t_max * k as f64 / samples as f64;
            let e = m.propagator(t);
            let dm = DMatrix::from_fn(3, 3, |i, j| e[(i, j)]);
            best = best.max(linalg::spectral_norm(&dm));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_basis(n: usize) -> ModalBasis {
        ModalBasis::new(&FluidParams::unit(), n).unwrap()
    }

    #[test]
    fn constant_density_energy() {
        let p = FluidParams::unit();
        let mut s = SpectralState::zeros(2, Subspace::Zm);
        // ρ ≡ 1 has coefficient √(2π) on e^0/√(2π).
        s.set(0, [C64::new((2.0 * PI).sqrt(), 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        let e = energy_norm(&s, &p);
        assert!((e * e - 2.0 * PI).abs() < 1e-13);
        assert_eq!(energy_norm(&SpectralState::zeros(3, Subspace::Z), &p), 0.0);
    }

    #[test]
    fn eigenvector_state_has_unit_energy() {
        let b = unit_basis(6);
        let p = b.params;
        for n in [-6, -1, 3] {
            for l in 0..3 {
                let mut s = SpectralState::zeros(6, Subspace::Zmm);
                let xi = b.mode(n).sys.xi_coeffs[l];
                let r = (2.0 * PI).sqrt();
                s.set(n, [xi[0] * r, xi[1] * r, xi[2] * r]);
                assert!((energy_norm(&s, &p) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn propagator_matches_matrix_exponential() {
        let b = unit_basis(64);
        for n in [-64, -9, 1, 2, 17, 64] {
            let m = b.mode(n);
            for t in [0.0, 0.3, 2.5, -0.7] {
                let a = m.generator * C64::new(t, 0.0);
                let diff = (m.propagator(t) - a.exp()).norm();
                assert!(diff < 1e-10, "n={n} t={t} diff={diff}");
            }
        }
    }

    #[test]
    fn semigroup_law_on_random_triples() {
        let b = unit_basis(10);
        let p = b.params;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [-10, 4, 7] {
            let m = b.mode(n);
            let c: [C64; 3] = std::array::from_fn(|_| C64::new(rand::Rng::gen_range(&mut rng, -1.0..1.0), 0.2));
            let ab = propagate_mode(&p, m, &propagate_mode(&p, m, &c, 0.4), 1.1);
            let direct = propagate_mode(&p, m, &c, 1.5);
            for k in 0..3 {
                assert!((ab[k] - direct[k]).norm() < 1e-9);
            }
            let id = propagate_mode(&p, m, &c, 0.0);
            for k in 0..3 {
                assert!((id[k] - c[k]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn uniform_semigroup_bound() {
        let b = unit_basis(64);
        let c = semigroup_bound(&b, 5.0, 25);
        let _ = b.params;
        assert!(c.is_finite() && c >= 1.0 && c < 10.0, "C = {c}");
    }

    #[test]
    fn eigenmode_energy_decays_exponentially() {
        let b = unit_basis(4);
        let n = 3;
        let l = 1;
        let mut s = SpectralState::zeros(4, Subspace::Zmm);
        let r = (2.0 * PI).sqrt();
        let xi = b.mode(n).sys.xi_coeffs[l];
        s.set(n, xi.map(|v| v * r));
        let (traj, _) = evolve(&b, &s, 2.0, None, 20, QuadratureConfig::default());
        let re = b.mode(n).sys.lambdas[l].re;
        for (t, e) in traj.times.iter().zip(&traj.energies) {
            assert!((e - (2.0 * re * t).exp()).abs() < 1e-10);
        }
        assert!(traj.energies.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_in_zero_out() {
        let b = unit_basis(3);
        let s = SpectralState::zeros(3, Subspace::Zm);
        let f = |_: i64, _: f64| [C64::new(0.0, 0.0); 3];
        let (traj, fin) = evolve(&b, &s, 1.0, Some(&f), 4, QuadratureConfig::default());
        assert!(traj.energies.iter().all(|&e| e == 0.0));
        assert_eq!(energy_norm(&fin, &b.params), 0.0);
    }

    #[test]
    fn forced_evolution_self_converges() {
        let b = unit_basis(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SpectralState::random(5, Subspace::Z, &mut rng);
        let f = |n: i64, t: f64| {
            let a = (t * (1.0 + n as f64)).sin();
            [C64::new(a, 0.1 * t), C64::new(0.0, a * a), C64::new(t.cos(), 0.0)]
        };
        let q1 = QuadratureConfig { panels_per_unit: 8, order: 8 };
        let q2 = QuadratureConfig { panels_per_unit: 16, order: 8 };
        let (_, a) = evolve(&b, &s, 1.5, Some(&f), 3, q1);
        let (_, c) = evolve(&b, &s, 1.5, Some(&f), 3, q2);
        assert!(energy_norm(&a.sub(&c), &b.params) < 1e-10);
        // Order check with a coarse 2-point rule: halving h cuts the error ≥ 16×.
        let fine = evolve(&b, &s, 1.5, Some(&f), 3, QuadratureConfig { panels_per_unit: 64, order: 8 }).1;
        let e1 = energy_norm(&evolve(&b, &s, 1.5, Some(&f), 3, QuadratureConfig { panels_per_unit: 4, order: 2 }).1.sub(&fine), &b.params);
        let e2 = energy_norm(&evolve(&b, &s, 1.5, Some(&f), 3, QuadratureConfig { panels_per_unit: 8, order: 2 }).1.sub(&fine), &b.params);
        assert!(e1 / e2 > 14.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn zero_mode_mean_laws() {
        let b = unit_basis(2);
        let mut s = SpectralState::zeros(2, Subspace::Z);
        s.set(0, [C64::new(1.0, 0.0), C64::new(0.5, 0.0), C64::new(2.0, 0.0)]);
        for t in [0.5, 3.0] {
            let c = b.propagate(&s, t).get(0);
            assert!((c[1] - C64::new(0.5, 0.0)).norm() < 1e-15);
            assert!((c[2] * t.exp() - C64::new(2.0, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn adjoint_terminal_and_modulus() {
        let b = unit_basis(4);
        let p = b.params;
        let mut coeffs = vec![[C64::new(0.0, 0.0); 3]; 8];
        coeffs[5][2] = C64::new(1.0, 0.0); // n = 2, branch 3
        let adj = evolve_adjoint(&b, C64::new(0.0, 0.0), coeffs, 3.0);
        let e_t = energy_norm(&adj.at(3.0), &p);
        let m = b.mode(2);
        let want = energy_norm_of_triple(&p, &m.sys.xi_star(2));
        assert!((e_t - want).abs() < 1e-12);
        for t in [0.0, 1.0, 2.5] {
            let e = energy_norm(&adj.at(t), &p);
            let r = (m.sys.lambdas[2].re * (3.0 - t)).exp();
            assert!((e - r * want).abs() < 1e-12);
        }
    }

    fn energy_norm_of_triple(p: &FluidParams, v: &[C64; 3]) -> f64 {
        crate::spectral::z_inner(p, v, v).re.sqrt()
    }

    #[test]
    fn duality_pairing_is_constant() {
        // ⟨z(t), w(t)⟩ with z forward-free and w adjoint is independent of t.
        let b = unit_basis(3);
        let p = b.params;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z0 = SpectralState::random(3, Subspace::Zm, &mut rng);
        let coeffs: Vec<[C64; 3]> = (0..6)
            .map(|_| std::array::from_fn(|_| C64::new(rand::Rng::gen_range(&mut rng, -1.0..1.0), 0.3)))
            .collect();
        let adj = evolve_adjoint(&b, C64::new(0.7, 0.0), coeffs, 2.0);
        // The n = 0 velocity and stress are zero in Z_m so ξ_0 alone is dual there.
        let pair = |t: f64| state_inner(&p, &b.propagate(&z0, t), &adj.at(t));
        let p0 = pair(0.0);
        for t in [0.5, 1.3, 2.0] {
            assert!((pair(t) - p0).norm() < 1e-11 * (1.0 + p0.norm()));
        }
    }

    #[test]
    fn synthesis_roundtrip_and_reality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = SpectralState::random(16, Subspace::Z, &mut rng);
        let x = synthesize_physical(&s, 64).unwrap();
        let back = analyze_physical(&x, 16, Subspace::Z).unwrap();
        for n in -16..=16 {
            for k in 0..3 {
                assert!((back.get(n)[k] - s.get(n)[k]).norm() < 1e-12);
            }
        }
        let mut r = SpectralState::zeros(4, Subspace::Z);
        for n in 1..=4i64 {
            let v = [C64::new(n as f64, 1.0), C64::new(0.3, -0.2), C64::new(0.0, 2.0)];
            r.set(n, v);
            r.set(-n, v.map(|z| z.conj()));
        }
        r.set(0, [C64::new(0.4, 0.0); 3]);
        let x = synthesize_physical(&r, 16).unwrap();
        assert!(x.iter().all(|v| v.iter().all(|z| z.im.abs() < 1e-12)));
        let mut one = SpectralState::zeros(1, Subspace::Z);
        one.set(1, [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        let x = synthesize_physical(&one, 8).unwrap();
        let x1 = 2.0 * PI / 8.0;
        assert!((x[1][0] - C64::from_polar(1.0 / (2.0 * PI).sqrt(), x1)).norm() < 1e-15);
        assert!(matches!(synthesize_physical(&s, 32), Err(Error::GridTooCoarse { .. })));
    }
}
