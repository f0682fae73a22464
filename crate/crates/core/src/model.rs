//! Physical parameters and the constants derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the linearized pressure slope is supplied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PressureSpec {
    /// Power law p = aρ^γ, giving b = aγρ_s^(γ−2).
    PowerLaw { a: f64, gamma: f64 },
    /// Effective coefficient b given directly.
    Direct { b: f64 },
}

/// Reference state and material constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidParams {
    pub rho_s: f64,
    pub u_s: f64,
    pub kappa: f64,
    pub mu: f64,
    #[serde(flatten)]
    pub pressure: PressureSpec,
}

/// Quantities every other module reads from the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub b: f64,
    pub big_d: f64,
    pub inv_kappa: f64,
}

impl FluidParams {
    /// The unit parameter set ρ_s = u_s = b = κ = μ = 1.
    pub fn unit() -> Self {
        FluidParams {
            rho_s: 1.0,
            u_s: 1.0,
            kappa: 1.0,
            mu: 1.0,
            pressure: PressureSpec::Direct { b: 1.0 },
        }
    }

    pub fn with_b(rho_s: f64, u_s: f64, b: f64, kappa: f64, mu: f64) -> Self {
        FluidParams {
            rho_s,
            u_s,
            kappa,
            mu,
            pressure: PressureSpec::Direct { b },
        }
    }

    /// Effective pressure coefficient b (no validation).
    pub fn b(&self) -> f64 {
        match self.pressure {
            PressureSpec::Direct { b } => b,
            PressureSpec::PowerLaw { a, gamma } => a * gamma * self.rho_s.powf(gamma - 2.0),
        }
    }

    /// μ/(κρ_s), the squared stress coupling.
    pub fn coupling(&self) -> f64 {
        self.mu / (self.kappa * self.rho_s)
    }
}

/// Lists every violated constraint; empty when the parameters are valid.
pub fn validate(p: &FluidParams) -> Vec<String> {
    let mut out = Vec::new();
    let mut positive = |name: &str, v: f64| {
        if !(v > 0.0) || !v.is_finite() {
            out.push(format!("{name} must be positive"));
        }
    };
    positive("rho_s", p.rho_s);
    positive("u_s", p.u_s);
    positive("kappa", p.kappa);
    positive("mu", p.mu);
    match p.pressure {
        PressureSpec::Direct { b } => positive("b", b),
        PressureSpec::PowerLaw { a, gamma } => {
            positive("a", a);
            if !(gamma >= 1.0) || !gamma.is_finite() {
                out.push("gamma must be ≥ 1".to_string());
            }
        }
    }
    out
}

/// Resolves b and evaluates the discriminant of the asymptotic cubic.
pub fn derive_constants(p: &FluidParams) -> Result<DerivedConstants> {
    let violations = validate(p);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let b = p.b();
    let (rho, u, k, mu) = (p.rho_s, p.u_s, p.kappa, p.mu);
    let shift = b * rho - u * u;
    let big_d = 4.0 * b * rho * shift * shift
        + mu * mu * u * u / (k * k * rho * rho)
        + 20.0 * mu * b * u * u / k
        + 12.0 * mu * b * b * rho / k
        + 12.0 * mu * mu * b / (k * k * rho)
        + 4.0 * mu.powi(3) / (k.powi(3) * rho.powi(3));
    Ok(DerivedConstants {
        b,
        big_d,
        inv_kappa: 1.0 / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_discriminant_is_49() {
        let d = derive_constants(&FluidParams::unit()).unwrap();
        // 0 + 1 + 20 + 12 + 12 + 4
        assert_eq!(d.big_d, 49.0);
        assert_eq!(d.b, 1.0);
        assert_eq!(d.inv_kappa, 1.0);
    }

    #[test]
    fn power_law_at_unit_values() {
        let p = FluidParams {
            pressure: PressureSpec::PowerLaw { a: 1.0, gamma: 1.0 },
            ..FluidParams::unit()
        };
        assert_eq!(derive_constants(&p).unwrap().b, 1.0);
    }

    #[test]
    fn power_law_matches_direct() {
        let (a, gamma, rho) = (0.7, 1.4, 2.3);
        let pl = FluidParams {
            rho_s: rho,
            pressure: PressureSpec::PowerLaw { a, gamma },
            ..FluidParams::unit()
        };
        let b = a * gamma * rho.powf(gamma - 2.0);
        let direct = FluidParams::with_b(rho, 1.0, b, 1.0, 1.0);
        let d1 = derive_constants(&pl).unwrap();
        let d2 = derive_constants(&direct).unwrap();
        assert!((d1.b - d2.b).abs() < 1e-15);
        assert!((d1.big_d - d2.big_d).abs() < 1e-12 * d2.big_d);
    }

    #[test]
    fn sonic_case_still_positive() {
        // bρ_s = u_s² kills the first term only.
        let p = FluidParams::with_b(2.0, 1.0, 0.5, 1.0, 1.0);
        let d = derive_constants(&p).unwrap();
        let terms = [
            0.0,
            1.0 / 4.0,
            20.0 * 0.5,
            12.0 * 0.25 * 2.0,
            12.0 * 0.5 / 2.0,
            4.0 / 8.0,
        ];
        assert!((d.big_d - terms.iter().sum::<f64>()).abs() < 1e-12);
        assert!(d.big_d > 0.0);
    }

    #[test]
    fn violations_are_named() {
        assert!(validate(&FluidParams::unit()).is_empty());
        let p = FluidParams {
            rho_s: -1.0,
            ..FluidParams::unit()
        };
        assert_eq!(validate(&p), vec!["rho_s must be positive".to_string()]);
        let p = FluidParams {
            pressure: PressureSpec::PowerLaw { a: 1.0, gamma: 0.5 },
            ..FluidParams::unit()
        };
        assert_eq!(validate(&p), vec!["gamma must be ≥ 1".to_string()]);
        assert!(matches!(derive_constants(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn config_roundtrip() {
        let p: FluidParams =
            serde_json::from_str(r#"{"rho_s":1,"u_s":1,"kappa":1,"mu":1,"b":2}"#).unwrap();
        assert_eq!(p.b(), 2.0);
        let q: FluidParams =
            serde_json::from_str(r#"{"rho_s":1,"u_s":1,"kappa":1,"mu":1,"a":2,"gamma":1.4}"#)
                .unwrap();
        assert!(matches!(q.pressure, PressureSpec::PowerLaw { .. }));
    }
}
