//! Named models: parameter schemas, construction and closed-form rates.

use std::collections::BTreeMap;

use qratchet::analysis::transient_end;
use qratchet::models::{bitflip_ring, cat_two_photon, three_level_refill, vslq, LossChannel, ModelBundle};
use qratchet::ratchet::{bitflip_rates, dispersive_rates, golden_rule_rate, repair_error_rates, three_level_rates, RateReport};

use crate::fail::Failure;

#[derive(Clone, Copy)]
enum ParamDefault {
    Required,
    Value(f64),
    /// May be omitted; the model picks its own value.
    Optional,
}

use ParamDefault::{Optional, Required, Value};

type Schema = &'static [(&'static str, ParamDefault)];

const THREE_LEVEL: Schema = &[("Delta", Required), ("Omega", Required), ("nu", Value(0.0)), ("GammaP", Required), ("GammaS", Required)];
const BITFLIP: Schema = &[("J", Value(1.0)), ("Omega", Required), ("GammaP", Required), ("GammaS", Required), ("PureY", Value(0.0))];
const VSLQ: Schema = &[("W", Value(1.0)), ("delta", Required), ("Omega", Required), ("GammaP", Required), ("GammaS", Required)];
const CAT: Schema = &[("Omega2", Required), ("GammaP", Value(0.0)), ("Gamma2", Required), ("dim", Optional)];
const DISPERSIVE: Schema = &[("kappa", Required), ("chi", Required), ("nbar", Required), ("OmegaR", Required), ("DeltaC", Required), ("T2", Required)];
const GOLDEN: Schema = &[("deltaE", Value(0.0)), ("M", Value(1.0)), ("Omega", Required), ("nu", Value(0.0)), ("GammaS", Required)];

const MODELS: &[(&str, Schema)] = &[
    ("three_level_refill", THREE_LEVEL),
    ("bitflip_ring", BITFLIP),
    ("vslq", VSLQ),
    ("cat_two_photon", CAT),
    ("dispersive", DISPERSIVE),
    ("golden_rule", GOLDEN),
];

fn schema(name: &str) -> Result<Schema, Failure> {
    MODELS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s).ok_or_else(|| {
        let known: Vec<&str> = MODELS.iter().map(|(n, _)| *n).collect();
        Failure::Config(format!("unknown model `{name}` (known: {})", known.join(", ")))
    })
}

/// Only closed-form rates, no dynamics.
pub fn is_rate_only(name: &str) -> bool {
    matches!(name, "dispersive" | "golden_rule")
}

/// Checks keys against the schema and fills in defaults.
pub fn resolve_params(name: &str, given: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>, Failure> {
    let s = schema(name)?;
    for (k, v) in given {
        if !s.iter().any(|(n, _)| n == k) {
            let known: Vec<&str> = s.iter().map(|(n, _)| *n).collect();
            return Err(Failure::Config(format!("unknown parameter `{k}` for model `{name}` (known: {})", known.join(", "))));
        }
        if !v.is_finite() {
            return Err(Failure::Config(format!("parameter `{k}` must be finite")));
        }
    }
    let mut out = BTreeMap::new();
    for (k, d) in s {
        match (given.get(*k), d) {
            (Some(v), _) => {
                out.insert(k.to_string(), *v);
            }
            (None, Value(v)) => {
                out.insert(k.to_string(), *v);
            }
            (None, Required) => return Err(Failure::Config(format!("model `{name}` needs parameter `{k}`"))),
            (None, Optional) => {}
        }
    }
    Ok(out)
}

pub fn is_parameter(name: &str, key: &str) -> Result<bool, Failure> {
    Ok(schema(name)?.iter().any(|(n, _)| *n == key))
}

fn dim_param(v: Option<f64>) -> Result<Option<usize>, Failure> {
    match v {
        None => Ok(None),
        Some(d) if d >= 1.0 && d.fract() == 0.0 => Ok(Some(d as usize)),
        Some(d) => Err(Failure::Config(format!("dim = {d} must be a positive integer"))),
    }
}

pub fn build(name: &str, p: &BTreeMap<String, f64>) -> Result<ModelBundle, Failure> {
    let g = |k: &str| p[k];
    let b = match name {
        "three_level_refill" => three_level_refill(g("Delta"), g("Omega"), g("nu"), g("GammaP"), g("GammaS")),
        "bitflip_ring" => {
            let channel = if g("PureY") == 0.0 {
                LossChannel::Lowering
            } else if g("PureY") == 1.0 {
                LossChannel::PureY
            } else {
                return Err(Failure::Config(format!("PureY = {} must be 0 or 1", g("PureY"))));
            };
            bitflip_ring(g("J"), g("Omega"), g("GammaP"), g("GammaS"), channel)
        }
        "vslq" => vslq(g("W"), g("delta"), g("Omega"), g("GammaP"), g("GammaS")),
        "cat_two_photon" => cat_two_photon(g("Omega2"), g("GammaP"), g("Gamma2"), dim_param(p.get("dim").copied())?),
        other => return Err(Failure::Config(format!("model `{other}` has no dynamics; use task `rates`"))),
    };
    b.map_err(Failure::setup)
}

/// Closed-form rates: a flat map plus the text table.
pub struct Rates {
    pub values: BTreeMap<String, f64>,
    pub table: String,
}

fn from_report(r: RateReport) -> Rates {
    let mut values = BTreeMap::new();
    let mut put = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            values.insert(k.to_string(), v);
        }
    };
    put("gamma_raw", r.gamma_raw);
    put("gamma_total", r.gamma_total);
    put("GammaR", r.repair);
    for (k, v) in &r.errors_induced {
        put(k, Some(*v));
    }
    put("GammaL", r.logical);
    Rates { values, table: r.to_table() }
}

fn from_pairs(inputs: &BTreeMap<String, f64>, pairs: &[(&str, f64)]) -> Rates {
    let mut table = String::new();
    for (k, v) in inputs {
        table.push_str(&format!("{k}={v:?}\n"));
    }
    let mut values = BTreeMap::new();
    for (k, v) in pairs {
        table.push_str(&format!("{k}={v:?}\n"));
        values.insert(k.to_string(), *v);
    }
    Rates { values, table }
}

/// `None` for models without closed-form rates.
pub fn rates(name: &str, p: &BTreeMap<String, f64>) -> Result<Option<Rates>, Failure> {
    let g = |k: &str| p[k];
    let r = match name {
        "three_level_refill" => from_report(three_level_rates(g("Delta"), g("Omega"), g("nu"), g("GammaP"), g("GammaS")).map_err(Failure::setup)?),
        "bitflip_ring" => from_report(bitflip_rates(g("J"), g("Omega"), g("GammaS"), g("GammaP")).map_err(Failure::setup)?),
        "vslq" => {
            let (gr, ge) = repair_error_rates(g("Omega"), 0.0, g("delta"), g("GammaS")).map_err(Failure::setup)?;
            from_pairs(p, &[("GammaR", gr), ("GammaE", ge), ("omegaS", g("delta") / 2.0 + g("W"))])
        }
        "dispersive" => {
            let (plus, minus) = dispersive_rates(g("kappa"), g("chi"), g("nbar"), g("OmegaR"), g("DeltaC"), g("T2")).map_err(Failure::setup)?;
            from_pairs(p, &[("GammaPlus", plus), ("GammaMinus", minus)])
        }
        "golden_rule" => {
            let r = golden_rule_rate(g("deltaE"), g("M"), g("Omega"), g("nu"), g("GammaS")).map_err(Failure::setup)?;
            from_pairs(p, &[("gamma_raw", r.gamma_raw), ("gamma_total", r.gamma_total)])
        }
        _ => return Ok(None),
    };
    Ok(Some(r))
}

/// Default start of a decay fit: the end of the repair transient.
pub fn default_fit_start(name: &str, p: &BTreeMap<String, f64>) -> f64 {
    let repair = |nu: f64, delta: f64| repair_error_rates(p["Omega"], nu, delta, p["GammaS"]).map(|r| r.0).unwrap_or(0.0);
    match name {
        "three_level_refill" => transient_end(repair(p["nu"], p["Delta"]), p["Omega"]),
        "bitflip_ring" => transient_end(repair(0.0, 4.0 * p["J"]), p["Omega"]),
        "vslq" => transient_end(repair(0.0, p["delta"]), p["Omega"]),
        _ => 0.0,
    }
}
