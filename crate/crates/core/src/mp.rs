//! Multiprecision complex arithmetic for the feedback module.
//!
//! The weighted Gramian of the truncated model is a Cauchy-like matrix whose
//! condition number reaches 1e20 and beyond at N = 8, so its solve, the
//! closed-loop spectrum and the closed-loop flow are carried at `PREC` bits.
//! Inputs and outputs stay `C64`; conversions are exact on the way in.

use std::ops::{Add, Div, Mul, Neg, Sub};

use astro_float::{BigFloat, Consts, RoundingMode, Sign};

use crate::error::{Error, Result};
use crate::C64;

/// Working precision in bits (about 115 decimal digits).
pub const PREC: usize = 384;
const RM: RoundingMode = RoundingMode::ToEven;

fn real(v: f64) -> BigFloat {
    BigFloat::from_f64(v, PREC)
}

/// Nearest double of a BigFloat (truncated to the top mantissa word).
pub fn to_f64(x: &BigFloat) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.is_inf_pos() {
        return f64::INFINITY;
    }
    if x.is_inf_neg() {
        return f64::NEG_INFINITY;
    }
    match x.as_raw_parts() {
        Some((m, _, s, e, _)) => {
            let top = match m.last() {
                Some(&w) if w != 0 => w,
                _ => return 0.0,
            };
            let next = if m.len() > 1 { m[m.len() - 2] } else { 0 };
            let frac = top as f64 / 2f64.powi(64) + next as f64 / 2f64.powi(128);
            let v = frac * 2f64.powi(e.clamp(-1100, 1100));
            if s == Sign::Neg {
                -v
            } else {
                v
            }
        }
        None => 0.0,
    }
}

/// Complex number with BigFloat parts.
#[derive(Clone, Debug)]
pub struct Mpc {
    pub re: BigFloat,
    pub im: BigFloat,
}

impl Mpc {
    pub fn zero() -> Self {
        Mpc { re: real(0.0), im: real(0.0) }
    }

    pub fn one() -> Self {
        Mpc { re: real(1.0), im: real(0.0) }
    }

    pub fn from_c64(z: C64) -> Self {
        Mpc { re: real(z.re), im: real(z.im) }
    }

    pub fn to_c64(&self) -> C64 {
        C64::new(to_f64(&self.re), to_f64(&self.im))
    }

    pub fn conj(&self) -> Self {
        Mpc { re: self.re.clone(), im: self.im.clone().neg() }
    }

    pub fn norm_sqr(&self) -> BigFloat {
        self.re.mul(&self.re, PREC, RM).add(&self.im.mul(&self.im, PREC, RM), PREC, RM)
    }

    /// |z| as a double; enough for pivoting and convergence tests.
    pub fn abs_f64(&self) -> f64 {
        to_f64(&self.norm_sqr()).sqrt()
    }

    pub fn scale(&self, s: &BigFloat) -> Self {
        Mpc { re: self.re.mul(s, PREC, RM), im: self.im.mul(s, PREC, RM) }
    }

    pub fn exp(&self, cc: &mut Consts) -> Self {
        let r = self.re.exp(PREC, RM, cc);
        Mpc {
            re: r.mul(&self.im.cos(PREC, RM, cc), PREC, RM),
            im: r.mul(&self.im.sin(PREC, RM, cc), PREC, RM),
        }
    }
}

macro_rules! forward {
    ($tr:ident, $f:ident, $imp:ident) => {
        impl $tr<&Mpc> for &Mpc {
            type Output = Mpc;
            fn $f(self, o: &Mpc) -> Mpc {
                $imp(self, o)
            }
        }
        impl $tr<Mpc> for Mpc {
            type Output = Mpc;
            fn $f(self, o: Mpc) -> Mpc {
                $imp(&self, &o)
            }
        }
    };
}

fn add(a: &Mpc, b: &Mpc) -> Mpc {
    Mpc { re: a.re.add(&b.re, PREC, RM), im: a.im.add(&b.im, PREC, RM) }
}

fn sub(a: &Mpc, b: &Mpc) -> Mpc {
    Mpc { re: a.re.sub(&b.re, PREC, RM), im: a.im.sub(&b.im, PREC, RM) }
}

fn mul(a: &Mpc, b: &Mpc) -> Mpc {
    let rr = a.re.mul(&b.re, PREC, RM);
    let ii = a.im.mul(&b.im, PREC, RM);
    let ri = a.re.mul(&b.im, PREC, RM);
    let ir = a.im.mul(&b.re, PREC, RM);
    Mpc { re: rr.sub(&ii, PREC, RM), im: ri.add(&ir, PREC, RM) }
}

fn div(a: &Mpc, b: &Mpc) -> Mpc {
    let d = b.norm_sqr();
    let num = mul(a, &b.conj());
    Mpc { re: num.re.div(&d, PREC, RM), im: num.im.div(&d, PREC, RM) }
}

forward!(Add, add, add);
forward!(Sub, sub, sub);
forward!(Mul, mul, mul);
forward!(Div, div, div);

impl Neg for &Mpc {
    type Output = Mpc;
    fn neg(self) -> Mpc {
        Mpc { re: self.re.clone().neg(), im: self.im.clone().neg() }
    }
}

pub fn consts() -> Result<Consts> {
    Consts::new().map_err(|e| Error::NumericalFailure(format!("multiprecision constants: {e:?}")))
}

pub type MpMatrix = Vec<Vec<Mpc>>;

pub fn dot(a: &[Mpc], b: &[Mpc]) -> Mpc {
    a.iter().zip(b).fold(Mpc::zero(), |s, (x, y)| &s + &(x * y))
}

/// Lower Cholesky factor of a Hermitian matrix, or None when a pivot is
/// not positive.
pub fn cholesky(m: &MpMatrix) -> Option<MpMatrix> {
    let n = m.len();
    let mut l = vec![vec![Mpc::zero(); n]; n];
    for j in 0..n {
        let mut d = m[j][j].re.clone();
        for k in 0..j {
            d = d.sub(&l[j][k].norm_sqr(), PREC, RM);
        }
        if !(to_f64(&d) > 0.0) {
            return None;
        }
        let s = d.sqrt(PREC, RM);
        let inv = real(1.0).div(&s, PREC, RM);
        l[j][j] = Mpc { re: s, im: real(0.0) };
        for i in j + 1..n {
            let mut v = m[i][j].clone();
            for k in 0..j {
                v = &v - &(&l[i][k] * &l[j][k].conj());
            }
            l[i][j] = v.scale(&inv);
        }
    }
    Some(l)
}

/// Solves L L^H x = rhs.
pub fn cholesky_solve(l: &MpMatrix, rhs: &[Mpc]) -> Vec<Mpc> {
    let n = l.len();
    let mut y = rhs.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] = &y[i] - &(&l[i][k] * &y[k]);
        }
        y[i] = &y[i] / &l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] = &y[i] - &(&l[k][i].conj() * &y[k]);
        }
        y[i] = &y[i] / &l[i][i];
    }
    y
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &MpMatrix, rhs: &[Mpc]) -> Result<Vec<Mpc>> {
    let n = a.len();
    let mut m = a.clone();
    let mut x = rhs.to_vec();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| m[i][c].abs_f64().total_cmp(&m[j][c].abs_f64()))
            .unwrap_or(c);
        if !(m[piv][c].abs_f64() > 0.0) {
            return Err(Error::NumericalFailure("singular multiprecision system".into()));
        }
        m.swap(c, piv);
        x.swap(c, piv);
        for r in c + 1..n {
            let f = &m[r][c] / &m[c][c];
            for k in c..n {
                let t = &f * &m[c][k];
                m[r][k] = &m[r][k] - &t;
            }
            let t = &f * &x[c];
            x[r] = &x[r] - &t;
        }
    }
    for r in (0..n).rev() {
        let mut v = x[r].clone();
        for k in r + 1..n {
            v = &v - &(&m[r][k] * &x[k]);
        }
        x[r] = &v / &m[r][r];
    }
    Ok(x)
}
