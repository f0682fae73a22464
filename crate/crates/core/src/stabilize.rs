//! Gramian feedback with prescribed decay rate, in modal coordinates.
//!
//! States are carried as coefficients c_a on the direct eigenbasis ξ_a,
//! 1 ≤ |n| ≤ N, so the controlled dynamics read c′_a = λ_a c_a + conj(b_a) q.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::{self, boundary_observation, ControlKind};
use crate::dynamics::{ModalBasis, Subspace, SpectralState, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mp::{self, MpMatrix, Mpc};
use crate::model::FluidParams;
use crate::quadrature::Composite;
use crate::C64;

/// Condition limit for a double-precision solve; see `cond_limit`.
pub const COND_LIMIT: f64 = 1e14;
/// Relative dt vs dt/2 discrepancy tolerated at the final time.
pub const STEP_TOLERANCE: f64 = 1e-6;

/// max over 1 ≤ |n| ≤ N of −Re λ_n^l.
pub fn growth_threshold(p: &FluidParams, big_n: usize) -> Result<f64> {
    let basis = ModalBasis::new(p, big_n)?;
    Ok(growth_of(&basis))
}

fn growth_of(basis: &ModalBasis) -> f64 {
    basis
        .iter()
        .flat_map(|m| m.sys.lambdas.iter().map(|l| -l.re))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct FeedbackLaw {
    pub omega: f64,
    pub big_n: usize,
    pub kind: ControlKind,
    pub growth: f64,
    pub lambdas: Vec<C64>,
    /// B*ξ*_a over the modal indices.
    pub b_vec: Vec<C64>,
    /// M_ba = b_a conj(b_b)/(2ω + λ̄_a + λ_b).
    #[serde(skip)]
    pub m: DMatrix<C64>,
    pub cond_m: f64,
    /// ‖M⁻¹‖₂.
    pub inv_norm: f64,
    /// k with q = k·c, rounded from the multiprecision solve.
    pub gain_row: Vec<C64>,
    /// Spectrum of diag(λ) + conj(b) k.
    pub closed_loop_eigenvalues: Vec<C64>,
    #[serde(skip)]
    basis: ModalBasis,
    #[serde(skip)]
    k_mp: Vec<Mpc>,
    #[serde(skip)]
    mu_mp: Vec<Mpc>,
    #[serde(skip)]
    chol: MpMatrix,
}

/// Largest admissible cond(M): the double-precision limit `COND_LIMIT`
/// carried over to the `mp::PREC` working precision.
pub fn cond_limit() -> f64 {
    COND_LIMIT * 2f64.powi((mp::PREC - 53) as i32)
}

pub fn build_feedback(p: &FluidParams, big_n: usize, omega: f64, kind: ControlKind) -> Result<FeedbackLaw> {
    if !kind.is_boundary() {
        return Err(Error::Validation(vec![format!("feedback needs a boundary kind, got {kind:?}")]));
    }
    let basis = ModalBasis::new(p, big_n)?;
    let growth = growth_of(&basis);
    let threshold = growth.max(0.0);
    if !(omega > threshold) {
        return Err(Error::OmegaTooSmall { omega, threshold });
    }
    let mut lambdas = Vec::new();
    let mut b_vec = Vec::new();
    for mb in basis.iter() {
        for l in 0..3 {
            lambdas.push(mb.sys.lambdas[l]);
            b_vec.push(boundary_observation(p, kind, &mb.sys, l)?);
        }
    }
    let m = weighted_gramian(&lambdas, &b_vec, omega);
    let dim = lambdas.len();

    let lam: Vec<Mpc> = lambdas.iter().map(|l| Mpc::from_c64(*l)).collect();
    let b: Vec<Mpc> = b_vec.iter().map(|v| Mpc::from_c64(*v)).collect();
    let two_om = Mpc::from_c64(C64::new(2.0 * omega, 0.0));
    let m_mp: MpMatrix = (0..dim)
        .into_par_iter()
        .map(|r| (0..dim).map(|a| &(&b[a] * &b[r].conj()) / &(&(&two_om + &lam[a].conj()) + &lam[r])).collect())
        .collect();
    let chol = mp::cholesky(&m_mp)
        .ok_or_else(|| Error::NumericalFailure("weighted Gramian is not positive definite".into()))?;

    let inv_cols: Vec<Vec<C64>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![Mpc::zero(); dim];
            e[j] = Mpc::one();
            mp::cholesky_solve(&chol, &e).iter().map(Mpc::to_c64).collect()
        })
        .collect();
    let inv = DMatrix::from_fn(dim, dim, |r, c| inv_cols[c][r]);
    let inv_norm = *linalg::hermitian_eigenvalues(&inv).last().unwrap_or(&f64::INFINITY);
    let m_norm = *linalg::hermitian_eigenvalues(&m).last().unwrap_or(&0.0);
    let cond_m = m_norm * inv_norm;
    let limit = cond_limit();
    if !(cond_m <= limit) {
        return Err(Error::IllConditioned { cond: cond_m, limit });
    }

    // k = −bᵀM⁻¹ = −(M⁻¹ conj b)^H since M is Hermitian.
    let gb: Vec<Mpc> = b.iter().map(Mpc::conj).collect();
    let y = mp::cholesky_solve(&chol, &gb);
    let k_mp: Vec<Mpc> = y.iter().map(|v| -&v.conj()).collect();
    let gain_row = k_mp.iter().map(Mpc::to_c64).collect();

    let start: Vec<C64> = lambdas.iter().map(|l| -2.0 * omega - l.conj()).collect();
    let mu_mp = rank_one_spectrum(&lam, &gb, &k_mp, &start)?;
    let closed_loop_eigenvalues = mu_mp.iter().map(Mpc::to_c64).collect();
    Ok(FeedbackLaw {
        omega,
        big_n,
        kind,
        growth,
        lambdas,
        b_vec,
        m,
        cond_m,
        inv_norm,
        gain_row,
        closed_loop_eigenvalues,
        basis,
        k_mp,
        mu_mp,
        chol,
    })
}

/// Eigenvalues of diag(λ) + g k as the roots of the characteristic function
/// f(z) = 1 − Σ g_a k_a/(z − λ_a), refined by Newton from `start`. The result
/// is accepted only if every start converges to a distinct root, which then
/// accounts for the whole spectrum.
fn rank_one_spectrum(lam: &[Mpc], g: &[Mpc], k: &[Mpc], start: &[C64]) -> Result<Vec<Mpc>> {
    let w: Vec<Mpc> = g.iter().zip(k).map(|(g, k)| g * k).collect();
    let roots: Vec<Result<Mpc>> = start
        .par_iter()
        .map(|z0| {
            let mut z = Mpc::from_c64(*z0);
            for _ in 0..80 {
                let mut f = Mpc::one();
                let mut df = Mpc::zero();
                for (wa, la) in w.iter().zip(lam) {
                    let r = &Mpc::one() / &(&z - la);
                    let t = wa * &r;
                    f = &f - &t;
                    df = &df + &(&t * &r);
                }
                let step = &f / &df;
                z = &z - &step;
                if step.abs_f64() <= 1e-80 * (1.0 + z.abs_f64()) {
                    return Ok(z);
                }
            }
            Err(Error::NumericalFailure(format!("closed-loop root near {z0} did not converge")))
        })
        .collect();
    let roots = roots.into_iter().collect::<Result<Vec<_>>>()?;
    let zs: Vec<C64> = roots.iter().map(Mpc::to_c64).collect();
    let scale = zs.iter().map(|z| z.norm()).fold(1.0, f64::max);
    for i in 0..zs.len() {
        for j in 0..i {
            if (zs[i] - zs[j]).norm() <= 1e-10 * scale {
                return Err(Error::NumericalFailure("closed-loop roots coalesced".into()));
            }
        }
    }
    Ok(roots)
}

/// Closed-form M_ba = b_a conj(b_b)/(2ω + λ̄_a + λ_b).
pub fn weighted_gramian(lambdas: &[C64], b: &[C64], omega: f64) -> DMatrix<C64> {
    let k = lambdas.len();
    let rows: Vec<Vec<C64>> = (0..k)
        .into_par_iter()
        .map(|r| {
            (0..k)
                .map(|a| b[a] * b[r].conj() / (2.0 * omega + lambdas[a].conj() + lambdas[r]))
                .collect()
        })
        .collect();
    DMatrix::from_fn(k, k, |r, a| rows[r][a])
}

/// ∫₀^{T_big} e^{−2ωt} (e^{−tD} g)(e^{−tD} g)^H dt with g = conj(b), the
/// horizon chosen so the neglected tail is below 1e−12.
pub fn weighted_gramian_by_quadrature(lambdas: &[C64], b: &[C64], omega: f64) -> DMatrix<C64> {
    let min_rate = lambdas.iter().map(|l| 2.0 * omega + 2.0 * l.re).fold(f64::INFINITY, f64::min);
    let t_big = 12.0 * std::f64::consts::LN_10 / min_rate;
    let max_freq = lambdas.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
    let panels = ((t_big * (1.0 + max_freq)).ceil() as usize).max(16) * 2;
    let q = Composite::new(0.0, t_big, panels, 8);
    let k = lambdas.len();
    let mut m = DMatrix::from_element(k, k, C64::new(0.0, 0.0));
    for (t, w) in q.nodes.iter().zip(&q.weights) {
        let v: Vec<C64> = (0..k).map(|a| b[a].conj() * (-(lambdas[a] + omega) * *t).exp()).collect();
        for r in 0..k {
            for a in 0..k {
                m[(r, a)] += v[r] * v[a].conj() * *w;
            }
        }
    }
    m
}

impl FeedbackLaw {
    pub fn basis(&self) -> &ModalBasis {
        &self.basis
    }

    /// q = −bᵀ M⁻¹ c.
    pub fn gain(&self, c: &[C64]) -> C64 {
        let c: Vec<Mpc> = c.iter().map(|v| Mpc::from_c64(*v)).collect();
        mp::dot(&self.k_mp, &c).to_c64()
    }

    /// cᴴ M⁻¹ c, the Lyapunov function of the loop: it decays at least like e^{−2ωt}.
    pub fn lyapunov_energy(&self, c: &[C64]) -> f64 {
        let c: Vec<Mpc> = c.iter().map(|v| Mpc::from_c64(*v)).collect();
        let x = mp::cholesky_solve(&self.chol, &c);
        let cc: Vec<Mpc> = c.iter().map(Mpc::conj).collect();
        mp::dot(&cc, &x).to_c64().re
    }

    /// ‖b‖·‖M⁻¹‖, a bound on |q|/‖c‖.
    pub fn gain_bound(&self) -> f64 {
        linalg::vec_norm(&self.b_vec) * self.inv_norm
    }

    /// diag(λ) + conj(b) k in double precision.
    pub fn closed_loop_matrix(&self) -> DMatrix<C64> {
        let n = self.lambdas.len();
        DMatrix::from_fn(n, n, |r, a| {
            let d = if r == a { self.lambdas[a] } else { C64::new(0.0, 0.0) };
            d + self.b_vec[r].conj() * self.gain_row[a]
        })
    }

    pub fn closed_loop_abscissa(&self) -> f64 {
        self.closed_loop_eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// −2ω + ĝ: the abscissa the construction predicts.
    pub fn target_abscissa(&self) -> f64 {
        -2.0 * self.omega + self.growth
    }

    pub fn state_to_modal(&self, c: &SpectralState) -> Vec<C64> {
        control::modal_vector(&self.basis, c, false)
    }

    pub fn modal_to_state(&self, c: &[C64]) -> SpectralState {
        control::state_from_modal(&self.basis, c, false, Subspace::Zmm)
    }
}

/// Modal flow c(t) = V (e^{μt} ∘ α), kept in multiprecision. For the
/// closed loop V holds the eigenvectors g_a/(μ_j − λ_a); for the free flow
/// V is the identity and μ = λ.
struct Flow {
    v: Option<MpMatrix>,
    mu: Vec<Mpc>,
    alpha: Vec<Mpc>,
}

impl Flow {
    fn closed(law: &FeedbackLaw, c0: &[C64]) -> Result<Flow> {
        let lam: Vec<Mpc> = law.lambdas.iter().map(|l| Mpc::from_c64(*l)).collect();
        let g: Vec<Mpc> = law.b_vec.iter().map(|b| Mpc::from_c64(b.conj())).collect();
        let v: MpMatrix = (0..lam.len())
            .into_par_iter()
            .map(|a| law.mu_mp.iter().map(|mu| &g[a] / &(mu - &lam[a])).collect())
            .collect();
        let c0: Vec<Mpc> = c0.iter().map(|z| Mpc::from_c64(*z)).collect();
        let alpha = mp::solve(&v, &c0)?;
        Ok(Flow { v: Some(v), mu: law.mu_mp.clone(), alpha })
    }

    fn open(law: &FeedbackLaw, c0: &[C64]) -> Flow {
        Flow {
            v: None,
            mu: law.lambdas.iter().map(|l| Mpc::from_c64(*l)).collect(),
            alpha: c0.iter().map(|z| Mpc::from_c64(*z)).collect(),
        }
    }

    fn factors(&self, h: f64, cc: &mut astro_float::Consts) -> Vec<Mpc> {
        let h = Mpc::from_c64(C64::new(h, 0.0));
        self.mu.iter().map(|mu| (mu * &h).exp(cc)).collect()
    }

    fn state(&self, amp: &[Mpc]) -> Vec<Mpc> {
        match &self.v {
            None => amp.to_vec(),
            Some(v) => v.par_iter().map(|row| mp::dot(row, amp)).collect(),
        }
    }
}

/// Closed-loop modal coefficients c(t) at the given times.
pub fn closed_loop_modal(law: &FeedbackLaw, c0: &[C64], times: &[f64]) -> Result<Vec<Vec<C64>>> {
    let flow = Flow::closed(law, c0)?;
    let mut cc = mp::consts()?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let amp: Vec<Mpc> = flow.factors(t, &mut cc).iter().zip(&flow.alpha).map(|(e, a)| e * a).collect();
        out.push(flow.state(&amp).iter().map(Mpc::to_c64).collect());
    }
    Ok(out)
}

/// Largest step the default rule allows: 0.1 / max |λ_a|.
pub fn default_step(law: &FeedbackLaw) -> f64 {
    0.1 / law.lambdas.iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Simulate with records every `stride` steps; checked against a run at dt/2.
///
/// Each step multiplies the closed-loop modal amplitudes by e^{μ h}, which is
/// exact for the linear loop. The loop is so non-normal (transients of order
/// sqrt(cond M)) that the flow is carried at `mp::PREC` bits and only rounded
/// to double when a sample is recorded.
pub fn closed_loop_simulate(
    law: &FeedbackLaw,
    z0: &SpectralState,
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<TrajectoryRecord> {
    simulate(law, z0, t_end, dt, stride, true)
}

/// Same stepping with q ≡ 0.
pub fn open_loop_simulate(
    law: &FeedbackLaw,
    z0: &SpectralState,
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<TrajectoryRecord> {
    simulate(law, z0, t_end, dt, stride, false)
}

fn simulate(
    law: &FeedbackLaw,
    z0: &SpectralState,
    t_end: f64,
    dt: f64,
    stride: usize,
    feedback: bool,
) -> Result<TrajectoryRecord> {
    let mut errs = Vec::new();
    if !(t_end > 0.0 && t_end.is_finite()) {
        errs.push("T_end must be positive".to_string());
    }
    if !(dt > 0.0 && dt.is_finite()) {
        errs.push("dt must be positive".to_string());
    } else if dt > default_step(law) {
        errs.push(format!("dt {dt} does not resolve the fastest mode (max {})", default_step(law)));
    }
    if z0.big_n != law.big_n {
        errs.push(format!("state truncation {} differs from feedback truncation {}", z0.big_n, law.big_n));
    }
    if !z0.get(0).iter().all(|v| v.norm() == 0.0) {
        errs.push("initial state must have zero means (Zmm)".to_string());
    }
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let p = law.basis.params;
    let c0 = law.state_to_modal(z0);
    let flow = if feedback { Flow::closed(law, &c0)? } else { Flow::open(law, &c0) };
    let mut cc = mp::consts()?;
    let stride = stride.max(1);
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;

    let mut rec = TrajectoryRecord { control: Some(Vec::new()), ..Default::default() };
    let record = |rec: &mut TrajectoryRecord, t: f64, c: &[Mpc]| {
        let q = if feedback { mp::dot(&law.k_mp, c).to_c64() } else { C64::new(0.0, 0.0) };
        let c: Vec<C64> = c.iter().map(Mpc::to_c64).collect();
        rec.push(&p, t, &law.modal_to_state(&c));
        if let Some(v) = rec.control.as_mut() {
            v.push(q);
        }
    };

    let run = |h: f64, steps: usize, cc: &mut astro_float::Consts, mut each: Option<&mut dyn FnMut(usize, &[Mpc])>| {
        let f = flow.factors(h, cc);
        let mut amp = flow.alpha.clone();
        if let Some(cb) = each.as_mut() {
            cb(0, &amp);
        }
        for s in 1..=steps {
            for (a, e) in amp.iter_mut().zip(&f) {
                *a = &*a * e;
            }
            if let Some(cb) = each.as_mut() {
                if s % stride == 0 || s == steps {
                    cb(s, &amp);
                }
            }
        }
        flow.state(&amp)
    };

    let mut sample = |s: usize, amp: &[Mpc]| {
        let t = if s == steps { t_end } else { s as f64 * h };
        record(&mut rec, t, &flow.state(amp));
    };
    let fin = run(h, steps, &mut cc, Some(&mut sample));
    let half = run(0.5 * h, 2 * steps, &mut cc, None);
    let fin: Vec<C64> = fin.iter().map(Mpc::to_c64).collect();
    let half: Vec<C64> = half.iter().map(Mpc::to_c64).collect();
    let diff = linalg::vec_norm(&fin.iter().zip(&half).map(|(a, b)| a - b).collect::<Vec<_>>());
    let scale = linalg::vec_norm(&half);
    let rel = if scale > 0.0 { diff / scale } else { diff };
    if !(rel <= STEP_TOLERANCE) {
        return Err(Error::StepTooLarge { rel_change: rel });
    }
    Ok(rec)
}

/// −slope of ½ ln energy against t over [0.2, 0.9]·T_end. Underflowed or
/// non-positive energies shorten the window.
pub fn fit_decay_rate(traj: &TrajectoryRecord) -> Result<f64> {
    let t_end = traj.times.last().copied().ok_or(Error::EmptyInput)?;
    let (a, b) = (0.2 * t_end, 0.9 * t_end);
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.energies)
        .filter(|(t, e)| **t >= a && **t <= b && **e > f64::MIN_POSITIVE && e.is_finite())
        .map(|(t, e)| (*t, 0.5 * e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateWindow);
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateWindow);
    }
    Ok(-sxy / sxx)
}
