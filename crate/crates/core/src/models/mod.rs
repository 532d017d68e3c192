//! Ready-made circuits with labelled states and operators.
//!
//! Parameter names follow the configuration keys used by the command-line
//! runner. Energies are in units of the model's own reference scale.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::dynamics::{CollapseOp, LindbladSystem};
use crate::hilbert::{
    coherent_tail_weight, default_boson_dim, embed, eye, ladder, number, parity, projector, sigma_x, sigma_y, sigma_z,
    HilbertSpace, Operator, PureState, COHERENT_TAIL_TOL,
};
use crate::ratchet::ShadowChannel;
use crate::{Error, Result, C64};

/// Primary-only description used by shadow elimination.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub primary: LindbladSystem,
    pub channels: Vec<ShadowChannel>,
    /// Embeds primary-space operators into the full space.
    pub primary_sites: Vec<usize>,
}

/// A model: its Lindblad system plus named states, operators and parameters.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub name: String,
    pub space: HilbertSpace,
    /// `None` for state-only bundles.
    pub system: Option<LindbladSystem>,
    pub states: BTreeMap<String, PureState>,
    pub ops: BTreeMap<String, Operator>,
    pub parameters: BTreeMap<String, f64>,
    pub reduction: Option<Reduction>,
}

impl ModelBundle {
    fn new(name: &str, space: HilbertSpace) -> Self {
        ModelBundle {
            name: name.to_string(),
            space,
            system: None,
            states: BTreeMap::new(),
            ops: BTreeMap::new(),
            parameters: BTreeMap::new(),
            reduction: None,
        }
    }

    pub fn state(&self, label: &str) -> Result<&PureState> {
        self.states.get(label).ok_or_else(|| Error::MissingLabel(label.to_string()))
    }

    pub fn op(&self, label: &str) -> Result<&Operator> {
        self.ops.get(label).ok_or_else(|| Error::MissingLabel(label.to_string()))
    }

    pub fn system(&self) -> Result<&LindbladSystem> {
        self.system
            .as_ref()
            .ok_or_else(|| Error::InvalidState(format!("model `{}` carries no dynamics", self.name)))
    }

    /// The Hamiltonian of the full system.
    pub fn hamiltonian(&self) -> Result<&Operator> {
        Ok(self.system()?.hamiltonian().base())
    }

    fn param(&mut self, k: &str, v: f64) {
        self.parameters.insert(k.to_string(), v);
    }

    fn add_op(&mut self, k: &str, op: Operator) {
        self.ops.insert(k.to_string(), op.with_label(k));
    }

    fn add_state(&mut self, k: &str, s: PureState) {
        self.states.insert(k.to_string(), s);
    }
}

fn check_finite(params: &[(&str, f64)]) -> Result<()> {
    for (k, v) in params {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{k} = {v} is not finite")));
        }
    }
    Ok(())
}

fn check_rate(k: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter(format!("{k} = {v} must be a finite rate >= 0")));
    }
    Ok(())
}

/// Three-level primary coupled to a two-level lossy shadow:
/// `H = Δ|2><2| + Ω(a† s† + a s) + ν s†s`, collapse `√ΓP a`, `√ΓS s`.
/// Basis order `[P, S]`.
pub fn three_level_refill(delta: f64, omega: f64, nu: f64, gamma_p: f64, gamma_s: f64) -> Result<ModelBundle> {
    check_finite(&[("Delta", delta), ("Omega", omega), ("nu", nu)])?;
    check_rate("GammaP", gamma_p)?;
    check_rate("GammaS", gamma_s)?;
    let space = HilbertSpace::new(&[3, 2])?;
    let a = embed(&ladder(3)?, 0, &space)?;
    let s = embed(&ladder(2)?, 1, &space)?;
    let p2 = embed(&projector(3, 2, 2)?, 0, &space)?;
    let h = &(&(&p2 * delta) + &(&(&(&a.dagger() * &s.dagger()) + &(&a * &s)) * omega)) + &(&(&s.dagger() * &s) * nu);
    let system = LindbladSystem::new(h, vec![CollapseOp::new(a.clone(), gamma_p), CollapseOp::new(s.clone(), gamma_s)])?;

    let mut b = ModelBundle::new("three_level", space.clone());
    for (k, v) in [("Delta", delta), ("Omega", omega), ("nu", nu), ("GammaP", gamma_p), ("GammaS", gamma_s)] {
        b.param(k, v);
    }
    b.add_state("target", PureState::basis(&space, &[1, 0])?);
    b.add_state("vacuum", PureState::basis(&space, &[0, 0])?);
    for lvl in 0..3 {
        b.add_op(&format!("P{lvl}"), embed(&projector(3, lvl, lvl)?, 0, &space)?);
    }
    b.add_op("n_P", embed(&number(3)?, 0, &space)?);
    b.add_op("n_S", embed(&number(2)?, 1, &space)?);
    b.add_op("a_P", a);
    b.add_op("a_S", s);

    let hp = &projector(3, 2, 2)? * delta;
    let primary = LindbladSystem::new(hp, vec![CollapseOp::new(ladder(3)?, gamma_p)])?;
    let a_dag = ladder(3)?.dagger().with_label("a_P†");
    b.reduction = if gamma_s > 0.0 {
        Some(Reduction {
            primary,
            channels: vec![ShadowChannel { op: a_dag, coupling: omega, nu, gamma_s }],
            primary_sites: vec![0],
        })
    } else {
        None
    };
    b.system = Some(system);
    Ok(b)
}

/// Loss channel on the bit-flip ring's primary qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossChannel {
    /// Physical photon loss `σ⁻ = |0><1|` at rate ΓP.
    Lowering,
    /// Only the correctable `σy/2` part of the loss, at rate ΓP.
    PureY,
}

/// Three primary qubits with `H_P = -J Σ σx σx` (all pairs), shadows with
/// `H_S = 2J Σ σz`, and `H_PS = Ω Σ (σxσx + σyσy)` between each primary and
/// its shadow. Basis order `[P1, P2, P3, S1, S2, S3]`; `σz` is `+1` on `|1>`.
pub fn bitflip_ring(j: f64, omega: f64, gamma_p: f64, gamma_s: f64, channel: LossChannel) -> Result<ModelBundle> {
    check_finite(&[("J", j), ("Omega", omega)])?;
    check_rate("GammaP", gamma_p)?;
    check_rate("GammaS", gamma_s)?;
    let space = HilbertSpace::new(&[2; 6])?;
    let on = |op: &Operator, site: usize| embed(op, site, &space);
    let (sx, sy, sz, sm) = (sigma_x(), sigma_y(), sigma_z(), ladder(2)?);

    let mut hp = Operator::zeros(&space);
    for (p, q) in [(0, 1), (1, 2), (0, 2)] {
        hp = &hp - &(&(&on(&sx, p)? * &on(&sx, q)?) * j);
    }
    let mut hs = Operator::zeros(&space);
    let mut hps = Operator::zeros(&space);
    for i in 0..3 {
        hs = &hs + &(&on(&sz, 3 + i)? * (2.0 * j));
        let xx = &on(&sx, i)? * &on(&sx, 3 + i)?;
        let yy = &on(&sy, i)? * &on(&sy, 3 + i)?;
        hps = &hps + &(&(&xx + &yy) * omega);
    }
    let h = &(&hp + &hs) + &hps;

    let mut collapse = Vec::new();
    for i in 0..3 {
        let l = match channel {
            LossChannel::Lowering => on(&sm, i)?,
            LossChannel::PureY => &on(&sy, i)? * 0.5,
        };
        collapse.push(CollapseOp::new(l.with_label(format!("loss_P{}", i + 1)), gamma_p));
    }
    for i in 0..3 {
        collapse.push(CollapseOp::new(on(&sm, 3 + i)?.with_label(format!("loss_S{}", i + 1)), gamma_s));
    }
    let system = LindbladSystem::new(h, collapse)?;

    let mut b = ModelBundle::new("bitflip_ring", space.clone());
    for (k, v) in [("J", j), ("Omega", omega), ("GammaP", gamma_p), ("GammaS", gamma_s)] {
        b.param(k, v);
    }
    b.param("PureY", if channel == LossChannel::PureY { 1.0 } else { 0.0 });
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let qubit = HilbertSpace::single(2)?;
    let plus = PureState::new(qubit.clone(), DVector::from_vec(vec![C64::new(r, 0.0), C64::new(r, 0.0)]))?;
    let minus = PureState::new(qubit.clone(), DVector::from_vec(vec![C64::new(r, 0.0), C64::new(-r, 0.0)]))?;
    let ground = PureState::basis(&qubit, &[0])?;
    let l0 = PureState::product(&[&plus, &plus, &plus, &ground, &ground, &ground])?;
    let l1 = PureState::product(&[&minus, &minus, &minus, &ground, &ground, &ground])?;
    b.add_state("logical_0", l0.clone());
    b.add_state("logical_1", l1.clone());
    b.add_state("initial", l1.clone());

    let xxx = &(&on(&sx, 0)? * &on(&sx, 1)?) * &on(&sx, 2)?;
    b.add_op("logical_z", xxx);
    for i in 0..3 {
        b.add_op(&format!("x{}", i + 1), on(&sx, i)?);
        b.add_op(&format!("n_S{}", i + 1), on(&number(2)?, 3 + i)?);
        b.add_op(&format!("a_P{}", i + 1), on(&sm, i)?);
    }
    let proj = (l0.to_density().matrix() + l1.to_density().matrix()).clone();
    b.add_op("logical_projector", Operator::new(space.clone(), proj, "")?);
    b.add_op("H_P", hp);

    let pspace = HilbertSpace::new(&[2; 3])?;
    let mut hp_small = Operator::zeros(&pspace);
    for (p, q) in [(0, 1), (1, 2), (0, 2)] {
        hp_small = &hp_small - &(&(&embed(&sx, p, &pspace)? * &embed(&sx, q, &pspace)?) * j);
    }
    let mut pc = Vec::new();
    let mut channels = Vec::new();
    for i in 0..3 {
        let l = match channel {
            LossChannel::Lowering => embed(&sm, i, &pspace)?,
            LossChannel::PureY => &embed(&sy, i, &pspace)? * 0.5,
        };
        pc.push(CollapseOp::new(l, gamma_p));
        // Ω(σxσx + σyσy) = 2Ω(σ⁻_P σ⁺_S + h.c.); shadow excitation costs 4J.
        channels.push(ShadowChannel { op: embed(&sm, i, &pspace)?, coupling: 2.0 * omega, nu: 4.0 * j, gamma_s });
    }
    if gamma_s > 0.0 {
        b.reduction = Some(Reduction { primary: LindbladSystem::new(hp_small, pc)?, channels, primary_sites: vec![0, 1, 2] });
    }
    b.system = Some(system);
    Ok(b)
}

/// Very small logical qubit: two three-level transmons `l, r` and two
/// two-level shadows. `H = -W X̃l X̃r + (δ/2)(P¹l + P¹r) + ωS Σ nS
/// + Ω Σ (a† aS† + a aS)` with `ωS = δ/2 + W`. Basis order `[l, r, Sl, Sr]`.
pub fn vslq(w: f64, delta: f64, omega: f64, gamma_p: f64, gamma_s: f64) -> Result<ModelBundle> {
    check_finite(&[("W", w), ("delta", delta), ("Omega", omega)])?;
    check_rate("GammaP", gamma_p)?;
    check_rate("GammaS", gamma_s)?;
    let space = HilbertSpace::new(&[3, 3, 2, 2])?;
    let on = |op: &Operator, site: usize| embed(op, site, &space);
    let xt = &projector(3, 0, 2)? + &projector(3, 2, 0)?;
    let zt = &projector(3, 0, 0)? - &projector(3, 2, 2)?;
    let p1 = projector(3, 1, 1)?;
    let a = ladder(3)?;
    let s = ladder(2)?;
    let omega_s = delta / 2.0 + w;

    let xl = on(&xt, 0)?;
    let xr = on(&xt, 1)?;
    let hp = &(&(&xl * &xr) * (-w)) + &(&(&on(&p1, 0)? + &on(&p1, 1)?) * (delta / 2.0));
    let mut h = hp.clone();
    let mut collapse = Vec::new();
    for i in 0..2 {
        let ai = on(&a, i)?;
        let si = on(&s, 2 + i)?;
        h = &h + &(&(&si.dagger() * &si) * omega_s);
        h = &h + &(&(&(&ai.dagger() * &si.dagger()) + &(&ai * &si)) * omega);
        collapse.push(CollapseOp::new(ai.with_label(format!("loss_{}", ["l", "r"][i])), gamma_p));
    }
    for i in 0..2 {
        collapse.push(CollapseOp::new(on(&s, 2 + i)?.with_label(format!("loss_S{}", ["l", "r"][i])), gamma_s));
    }
    let system = LindbladSystem::new(h, collapse)?;

    let mut b = ModelBundle::new("vslq", space.clone());
    for (k, v) in [("W", w), ("delta", delta), ("Omega", omega), ("GammaP", gamma_p), ("GammaS", gamma_s), ("omegaS", omega_s)] {
        b.param(k, v);
    }
    let z_l = &on(&zt, 0)? * &on(&zt, 1)?;
    let y_l = &(&xl * &z_l) * C64::new(0.0, 1.0);
    b.add_op("X_L", xl.clone());
    b.add_op("Y_L", y_l);
    b.add_op("Z_L", z_l);
    b.add_op("X_r", xr);
    b.add_op("H_P", hp);
    b.add_op("n_l", on(&number(3)?, 0)?);
    b.add_op("n_r", on(&number(3)?, 1)?);
    b.add_op("a_l", on(&a, 0)?);
    b.add_op("a_r", on(&a, 1)?);
    b.add_op("parity_l", on(&parity(3)?, 0)?);
    b.add_op("parity_r", on(&parity(3)?, 1)?);

    let amp = |terms: &[[usize; 2]]| -> Result<PureState> {
        let mut v = DVector::zeros(space.total_dim());
        for t in terms {
            v[space.index_of(&[t[0], t[1], 0, 0])?] = C64::new(1.0, 0.0);
        }
        PureState::new(space.clone(), v)
    };
    let l0 = amp(&[[0, 0], [2, 2]])?;
    let l1 = amp(&[[0, 2], [2, 0]])?;
    let plus = amp(&[[0, 0], [2, 2], [0, 2], [2, 0]])?;
    b.add_state("logical_0", l0);
    b.add_state("logical_1", l1);
    b.add_state("plus_L", plus.clone());
    b.add_state("initial", plus);

    let pspace = HilbertSpace::new(&[3, 3])?;
    let hp_small = &(&(&embed(&xt, 0, &pspace)? * &embed(&xt, 1, &pspace)?) * (-w))
        + &(&(&embed(&p1, 0, &pspace)? + &embed(&p1, 1, &pspace)?) * (delta / 2.0));
    let mut pc = Vec::new();
    let mut channels = Vec::new();
    for i in 0..2 {
        pc.push(CollapseOp::new(embed(&a, i, &pspace)?, gamma_p));
        channels.push(ShadowChannel { op: embed(&a.dagger(), i, &pspace)?, coupling: omega, nu: omega_s, gamma_s });
    }
    if gamma_s > 0.0 {
        b.reduction = Some(Reduction { primary: LindbladSystem::new(hp_small, pc)?, channels, primary_sites: vec![0, 1] });
    }
    b.system = Some(system);
    Ok(b)
}

/// Two-photon driven, two-photon damped cavity:
/// `H = Ω2 (a†a† + a a)`, collapse `√ΓP a` and `√Γ2 a a`.
///
/// The steady photon number is estimated as `2Ω2/Γ2`; the truncation (given
/// or defaulted) must hold a coherent state of that size.
pub fn cat_two_photon(omega2: f64, gamma_p: f64, gamma2: f64, dim: Option<usize>) -> Result<ModelBundle> {
    check_finite(&[("Omega2", omega2)])?;
    check_rate("GammaP", gamma_p)?;
    check_rate("Gamma2", gamma2)?;
    let nbar = if omega2 == 0.0 {
        0.0
    } else if gamma2 > 0.0 {
        2.0 * omega2.abs() / gamma2
    } else {
        return Err(Error::InvalidParameter("two-photon drive without two-photon loss has no bounded steady state".into()));
    };
    let alpha = C64::new(nbar.sqrt(), 0.0);
    let dim = match dim {
        Some(d) => {
            let tail = coherent_tail_weight(alpha, d);
            if tail >= COHERENT_TAIL_TOL {
                return Err(Error::Truncation { dim: d, tail_weight: tail });
            }
            d
        }
        None => default_boson_dim(alpha),
    };
    let space = HilbertSpace::single(dim)?;
    let a = ladder(dim)?;
    let a2 = &a * &a;
    let h = &(&a2.dagger() + &a2) * omega2;
    let system = LindbladSystem::new(h, vec![CollapseOp::new(a.clone(), gamma_p), CollapseOp::new(a2, gamma2)])?;
    let mut b = ModelBundle::new("cat_two_photon", space.clone());
    for (k, v) in [("Omega2", omega2), ("GammaP", gamma_p), ("Gamma2", gamma2), ("nbar", nbar), ("dim", dim as f64)] {
        b.param(k, v);
    }
    b.add_state("vacuum", PureState::basis(&space, &[0])?);
    b.add_state("initial", PureState::basis(&space, &[0])?);
    b.add_op("a", a);
    b.add_op("n", number(dim)?);
    b.add_op("parity", parity(dim)?);
    b.add_op("identity", eye(dim)?);
    b.system = Some(system);
    Ok(b)
}

/// Four-component cat code states on `dim` levels (defaulted from `α`).
///
/// `|0_L>` has support on `4n`, `|1_L>` on `4n+2`, and the error states
/// `|0_E>`, `|1_E>` on `4n+3` and `4n+1`. Error states stop at level
/// `dim - 2`, so `a|i_L>` normalised equals `|i_E>` exactly.
pub fn cat_states(alpha: C64, dim: Option<usize>) -> Result<ModelBundle> {
    if !alpha.re.is_finite() || !alpha.im.is_finite() || alpha.norm() == 0.0 {
        return Err(Error::InvalidParameter(format!("cat amplitude {alpha} must be finite and non-zero")));
    }
    let dim = match dim {
        Some(d) => {
            let tail = coherent_tail_weight(alpha, d);
            if tail >= COHERENT_TAIL_TOL {
                return Err(Error::Truncation { dim: d, tail_weight: tail });
            }
            d
        }
        None => default_boson_dim(alpha),
    };
    if dim < 8 {
        return Err(Error::InvalidDimension { dim, reason: "cat states need at least 8 levels" });
    }
    let space = HilbertSpace::single(dim)?;
    // c_n = α^n / sqrt(n!)
    let mut c = vec![C64::new(1.0, 0.0); dim];
    for n in 1..dim {
        c[n] = c[n - 1] * alpha / (n as f64).sqrt();
    }
    let pick = |residue: usize, top: usize| -> Result<PureState> {
        let v = DVector::from_fn(dim, |n, _| if n % 4 == residue && n <= top { c[n] } else { C64::new(0.0, 0.0) });
        PureState::new(space.clone(), v)
    };
    let mut b = ModelBundle::new("cat_states", space.clone());
    b.param("alpha_re", alpha.re);
    b.param("alpha_im", alpha.im);
    b.param("dim", dim as f64);
    b.add_state("logical_0", pick(0, dim - 1)?);
    b.add_state("logical_1", pick(2, dim - 1)?);
    b.add_state("error_0", pick(3, dim - 2)?);
    b.add_state("error_1", pick(1, dim - 2)?);
    b.add_op("a", ladder(dim)?);
    b.add_op("n", number(dim)?);
    b.add_op("parity", parity(dim)?);
    Ok(b)
}

/// Model names accepted by [`build`].
pub const MODEL_NAMES: [&str; 5] = ["three_level", "bitflip_ring", "vslq", "cat_two_photon", "cat_states"];
