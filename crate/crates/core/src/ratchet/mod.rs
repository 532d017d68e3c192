//! Closed-form golden-rule rates and shadow-element elimination.
//!
//! All rates are in the caller's energy unit (ħ = 1).

mod shadow;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use shadow::{dress_operator, shadow_eliminate, ShadowChannel};

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    require(v.is_finite(), || format!("{name} = {v} is not finite"))
}

/// Raw golden-rule rate and its combination with the shadow decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenRule {
    pub gamma_raw: f64,
    pub gamma_total: f64,
}

/// `γ = Ω² M² ΓS / ((δE + ν)² + ΓS²/4)` and `Γ = (1/γ + 1/ΓS)⁻¹`.
pub fn golden_rule_rate(delta_e: f64, m: f64, omega: f64, nu: f64, gamma_s: f64) -> Result<GoldenRule> {
    for (n, v) in [("deltaE", delta_e), ("M", m), ("Omega", omega), ("nu", nu)] {
        finite(n, v)?;
    }
    require(gamma_s > 0.0 && gamma_s.is_finite(), || format!("GammaS = {gamma_s} must be positive"))?;
    let detuning = delta_e + nu;
    let gamma_raw = omega * omega * m * m * gamma_s / (detuning * detuning + gamma_s * gamma_s / 4.0);
    let gamma_total = if gamma_raw == 0.0 { 0.0 } else { 1.0 / (1.0 / gamma_raw + 1.0 / gamma_s) };
    Ok(GoldenRule { gamma_raw, gamma_total })
}

/// Repair and induced-error rates of the three-level refill scheme:
/// `ΓR = Ω²ΓS/(ν² + Ω² + ΓS²/4)`, `ΓE = 2Ω²ΓS/((ν+Δ)² + 2Ω² + ΓS²/4)`.
pub fn repair_error_rates(omega: f64, nu: f64, delta: f64, gamma_s: f64) -> Result<(f64, f64)> {
    for (n, v) in [("Omega", omega), ("nu", nu), ("Delta", delta)] {
        finite(n, v)?;
    }
    require(gamma_s > 0.0 && gamma_s.is_finite(), || format!("GammaS = {gamma_s} must be positive"))?;
    let o2 = omega * omega;
    let s2 = gamma_s * gamma_s / 4.0;
    let gr = o2 * gamma_s / (nu * nu + o2 + s2);
    let ge = 2.0 * o2 * gamma_s / ((nu + delta).powi(2) + 2.0 * o2 + s2);
    Ok((gr, ge))
}

/// Dispersive heating and cooling rates
/// `Γ± = κχ²n̄/((ΩR ± Δc)² + κ²/4) + 1/(2T2)`.
pub fn dispersive_rates(kappa: f64, chi: f64, nbar: f64, omega_r: f64, delta_c: f64, t2: f64) -> Result<(f64, f64)> {
    for (n, v) in [("chi", chi), ("OmegaR", omega_r), ("Delta_c", delta_c)] {
        finite(n, v)?;
    }
    require(kappa > 0.0 && kappa.is_finite(), || format!("kappa = {kappa} must be positive"))?;
    require(t2 > 0.0, || format!("T2 = {t2} must be positive"))?;
    require(nbar >= 0.0 && nbar.is_finite(), || format!("nbar = {nbar} must be >= 0"))?;
    let k2 = kappa * kappa / 4.0;
    let base = kappa * chi * chi * nbar;
    let dephase = 1.0 / (2.0 * t2);
    let plus = base / ((omega_r + delta_c).powi(2) + k2) + dephase;
    let minus = base / ((omega_r - delta_c).powi(2) + k2) + dephase;
    Ok((plus, minus))
}

/// Flat summary of closed-form rates for one parameter set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub gamma_raw: Option<f64>,
    pub gamma_total: Option<f64>,
    pub repair: Option<f64>,
    pub errors_induced: BTreeMap<String, f64>,
    pub logical: Option<f64>,
    pub inputs: BTreeMap<String, f64>,
    /// Non-fatal notes, e.g. a violated scale hierarchy.
    pub warnings: Vec<String>,
}

impl RateReport {
    /// `key=value` lines, inputs first. Values use the shortest exact decimal form.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.inputs {
            out.push_str(&format!("{k}={v:?}\n"));
        }
        let mut put = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{k}={v:?}\n"));
            }
        };
        put("gamma_raw", self.gamma_raw);
        put("gamma_total", self.gamma_total);
        put("GammaR", self.repair);
        for (k, v) in &self.errors_induced {
            put(k, Some(*v));
        }
        put("GammaL", self.logical);
        for (i, w) in self.warnings.iter().enumerate() {
            out.push_str(&format!("warning{}={}\n", i + 1, w));
        }
        out
    }

    fn input(mut self, k: &str, v: f64) -> Self {
        self.inputs.insert(k.to_string(), v);
        self
    }
}

/// Rates for the three-level refill scheme at the given parameters.
pub fn three_level_rates(delta: f64, omega: f64, nu: f64, gamma_p: f64, gamma_s: f64) -> Result<RateReport> {
    require(gamma_p >= 0.0 && gamma_p.is_finite(), || format!("GammaP = {gamma_p} must be >= 0"))?;
    let g = golden_rule_rate(0.0, 1.0, omega, nu, gamma_s)?;
    let (gr, ge) = repair_error_rates(omega, nu, delta, gamma_s)?;
    let mut r = RateReport::default()
        .input("Delta", delta)
        .input("Omega", omega)
        .input("nu", nu)
        .input("GammaP", gamma_p)
        .input("GammaS", gamma_s)
        .input("M", 1.0);
    r.gamma_raw = Some(g.gamma_raw);
    r.gamma_total = Some(g.gamma_total);
    r.repair = Some(gr);
    r.errors_induced.insert("GammaE".into(), ge);
    if gamma_p > 0.0 {
        let p = three_level_steady_population(gamma_p, gr, ge)?;
        r.errors_induced.insert("P1_formula".into(), p.p1);
        if p.clamped {
            r.warnings.push("P1 formula clamped to [0, 1]; outside the perturbative regime".into());
        }
    }
    if delta.abs() < 10.0 * omega.abs().max(gamma_s) {
        r.warnings.push("hierarchy Delta >> Omega, GammaS not satisfied".into());
    }
    Ok(r)
}

/// Bit-flip ring rates: `ΓR = Ω²ΓS/(Ω² + ΓS²/4)`, `ΓE0 = Ω²ΓS/(16J²)`,
/// `ΓE1 = Ω²ΓS/(64J²)` and
/// `ΓL = 6(ΓP + ΓE1)(ΓP + ΓE0)/(ΓP + ΓE0 + ΓR)`.
pub fn bitflip_rates(j: f64, omega: f64, gamma_s: f64, gamma_p: f64) -> Result<RateReport> {
    finite("Omega", omega)?;
    require(j != 0.0 && j.is_finite(), || format!("J = {j} must be non-zero"))?;
    require(gamma_s > 0.0 && gamma_s.is_finite(), || format!("GammaS = {gamma_s} must be positive"))?;
    require(gamma_p >= 0.0 && gamma_p.is_finite(), || format!("GammaP = {gamma_p} must be >= 0"))?;
    let o2 = omega * omega;
    let gr = o2 * gamma_s / (o2 + gamma_s * gamma_s / 4.0);
    let ge0 = o2 * gamma_s / (16.0 * j * j);
    let ge1 = o2 * gamma_s / (64.0 * j * j);
    let gl = 6.0 * (gamma_p + ge1) * (gamma_p + ge0) / (gamma_p + ge0 + gr);
    let g = golden_rule_rate(0.0, 1.0, omega, 0.0, gamma_s)?;
    let mut r = RateReport::default()
        .input("J", j)
        .input("Omega", omega)
        .input("GammaS", gamma_s)
        .input("GammaP", gamma_p);
    r.gamma_raw = Some(g.gamma_raw);
    r.gamma_total = Some(g.gamma_total);
    r.repair = Some(gr);
    r.errors_induced.insert("GammaE0".into(), ge0);
    r.errors_induced.insert("GammaE1".into(), ge1);
    r.logical = Some(gl);
    let (ja, oa) = (j.abs(), omega.abs());
    if oa > 0.1 * ja || gamma_s > 0.1 * ja {
        r.warnings.push("hierarchy J >> Omega, GammaS not satisfied".into());
    }
    if oa > 0.0 && !(0.1..=10.0).contains(&(oa / gamma_s)) {
        r.warnings.push("hierarchy Omega ~ GammaS not satisfied".into());
    }
    if gamma_p > 0.1 * oa.min(gamma_s) {
        r.warnings.push("hierarchy Omega, GammaS >> GammaP not satisfied".into());
    }
    Ok(r)
}

/// Result of [`three_level_steady_population`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyPopulation {
    pub p1: f64,
    pub clamped: bool,
}

/// `P1 ≈ 1 - ΓP/ΓR - ΓE/(2ΓP)`, clamped to `[0, 1]`.
///
/// `ΓR = ∞` and `ΓE = 0` are accepted as limits.
pub fn three_level_steady_population(gamma_p: f64, gamma_r: f64, gamma_e: f64) -> Result<SteadyPopulation> {
    require(gamma_p > 0.0 && gamma_p.is_finite(), || format!("GammaP = {gamma_p} must be positive"))?;
    require(gamma_r > 0.0, || format!("GammaR = {gamma_r} must be positive"))?;
    require(gamma_e >= 0.0 && gamma_e.is_finite(), || format!("GammaE = {gamma_e} must be >= 0"))?;
    let raw = 1.0 - gamma_p / gamma_r - gamma_e / (2.0 * gamma_p);
    let p1 = raw.clamp(0.0, 1.0);
    Ok(SteadyPopulation { p1, clamped: p1 != raw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn golden_rule_examples() {
        let g = golden_rule_rate(0.0, 1.0, 0.05, 0.0, 0.1).unwrap();
        assert_relative_eq!(g.gamma_raw, 0.1, max_relative = 1e-14);
        assert_relative_eq!(g.gamma_total, 0.05, max_relative = 1e-14);
        let on = golden_rule_rate(0.3, 1.0, 0.2, -0.3, 0.7).unwrap();
        assert_relative_eq!(on.gamma_raw, 4.0 * 0.04 / 0.7, max_relative = 1e-14);
        assert!(golden_rule_rate(0.0, 1.0, 0.1, 0.0, 0.0).is_err());
        assert_eq!(golden_rule_rate(0.0, 1.0, 0.0, 0.0, 1.0).unwrap().gamma_total, 0.0);
    }

    #[test]
    fn repair_rates() {
        let (gr, _) = repair_error_rates(0.05, 0.0, 20.0, 0.1).unwrap();
        assert_eq!(gr, 0.05);
        let (gr, ge) = repair_error_rates(0.3, 0.0, 0.0, 0.8).unwrap();
        let ratio = 2.0 * (0.09 + 0.16) / (0.18 + 0.16);
        assert_relative_eq!(ge / gr, ratio, max_relative = 1e-13);
        let (_, far) = repair_error_rates(0.3, 0.0, 1e8, 0.8).unwrap();
        assert!(far < 1e-15);
    }

    #[test]
    fn dispersive_examples() {
        let (k, chi, n, wr, t2) = (2.0, 0.3, 4.0, 5.0, 10.0);
        let (plus, minus) = dispersive_rates(k, chi, n, wr, -wr, t2).unwrap();
        assert_relative_eq!(plus, 4.0 * chi * chi * n / k + 1.0 / (2.0 * t2), max_relative = 1e-14);
        assert!(plus > minus);
        let (p0, m0) = dispersive_rates(k, 0.0, n, wr, 1.3, t2).unwrap();
        assert_eq!((p0, m0), (0.05, 0.05));
        assert!(dispersive_rates(0.0, chi, n, wr, 0.0, t2).is_err());
    }

    #[test]
    fn bitflip_examples() {
        let r = bitflip_rates(1.0, 0.05, 0.1, 1e-3).unwrap();
        assert_relative_eq!(r.repair.unwrap(), 0.05, max_relative = 1e-14);
        assert_relative_eq!(r.errors_induced["GammaE0"], 1.5625e-5, max_relative = 1e-14);
        assert_relative_eq!(r.errors_induced["GammaE1"], 3.90625e-6, max_relative = 1e-14);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
        let floor = bitflip_rates(1.0, 0.05, 0.1, 0.0).unwrap().logical.unwrap();
        let (ge0, ge1) = (1.5625e-5, 3.90625e-6);
        assert_relative_eq!(floor, 6.0 * ge1 * ge0 / (ge0 + 0.05), max_relative = 1e-13);
        assert!(floor > 0.0);
        let loud = bitflip_rates(1.0, 0.5, 0.1, 0.05).unwrap();
        assert!(!loud.warnings.is_empty());
    }

    #[test]
    fn report_table_is_key_value() {
        let t = bitflip_rates(1.0, 0.05, 0.1, 1e-3).unwrap().to_table();
        assert!(t.contains("GammaR=0.05\n") || t.contains("GammaR=0.05000000000000001\n"), "{t}");
        assert!(t.lines().all(|l| l.split_once('=').is_some()));
    }

    #[test]
    fn steady_population() {
        let p = three_level_steady_population(1.0, 100.0, 0.01).unwrap();
        assert_relative_eq!(p.p1, 0.985, max_relative = 1e-14);
        assert!(!p.clamped);
        let ideal = three_level_steady_population(0.01, f64::INFINITY, 0.0).unwrap();
        assert_eq!(ideal.p1, 1.0);
        let bad = three_level_steady_population(1e-3, 1e-3, 1.0).unwrap();
        assert!(bad.clamped && bad.p1 == 0.0);
    }

    proptest! {
        #[test]
        fn golden_rule_monotone_and_bounded(
            d1 in 0.0f64..10.0, extra in 1e-6f64..10.0, m in 0.1f64..2.0, om in 1e-3f64..1.0,
            nu in -5.0f64..5.0, gs in 1e-3f64..2.0,
        ) {
            let near = golden_rule_rate(d1 - nu, m, om, nu, gs).unwrap();
            let far = golden_rule_rate(d1 + extra - nu, m, om, nu, gs).unwrap();
            prop_assert!(far.gamma_raw < near.gamma_raw);
            prop_assert!(near.gamma_total < gs);
            prop_assert!(near.gamma_total <= near.gamma_raw);
        }

        #[test]
        fn dispersive_exchange_symmetry(k in 0.1f64..5.0, chi in 0.0f64..1.0, n in 0.0f64..10.0, wr in -5.0f64..5.0, dc in -5.0f64..5.0) {
            let (p, m) = dispersive_rates(k, chi, n, wr, dc, 3.0).unwrap();
            let (p2, m2) = dispersive_rates(k, chi, n, wr, -dc, 3.0).unwrap();
            prop_assert_eq!(p, m2);
            prop_assert_eq!(m, p2);
        }

        #[test]
        fn logical_rate_quadratic_regime(om in 0.02f64..0.08, gs in 0.05f64..0.2) {
            let r0 = bitflip_rates(1.0, om, gs, 0.0).unwrap();
            let emax = r0.errors_induced["GammaE0"].max(r0.errors_induced["GammaE1"]);
            let (lo, hi) = (10.0 * emax, 100.0 * emax);
            let gl = |gp: f64| bitflip_rates(1.0, om, gs, gp).unwrap().logical.unwrap();
            let slope = (gl(hi) / gl(lo)).ln() / (hi / lo).ln();
            prop_assert!((1.9..=2.1).contains(&slope), "slope {}", slope);
        }
    }
}
