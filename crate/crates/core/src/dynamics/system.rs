use std::fmt;
use std::sync::Arc;

use crate::hilbert::{HilbertSpace, Operator};
use crate::{Error, Result, C64};

/// Hermiticity tolerance applied to Hamiltonians.
pub const HAMILTONIAN_HERMITIAN_TOL: f64 = 1e-10;

/// Real, time-dependent scalar multiplying a Hermitian drive operator.
pub trait Coefficient: Send + Sync {
    fn value(&self, t: f64) -> f64;

    /// Value used by the integrator inside the segment whose midpoint is
    /// `seg_mid`. Smooth coefficients ignore the hint.
    fn value_in_segment(&self, t: f64, _seg_mid: f64) -> f64 {
        self.value(t)
    }

    /// Times where the coefficient jumps; the integrator stops there.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Smooth coefficient from a closure.
pub struct FnCoefficient<F>(pub F);

impl<F: Fn(f64) -> f64 + Send + Sync> Coefficient for FnCoefficient<F> {
    fn value(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// Piecewise-constant signal: `values[i]` on `[times[i], times[i+1])`, and
/// `values.last()` from `times.last()` onwards. Zero before `times[0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseConstant {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::InvalidParameter("piecewise signal needs one value per start time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("piecewise start times must increase strictly".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("piecewise values must be finite".into()));
        }
        Ok(PiecewiseConstant { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Coefficient for PiecewiseConstant {
    fn value(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 0.0,
            i => self.values[i - 1],
        }
    }

    fn value_in_segment(&self, _t: f64, seg_mid: f64) -> f64 {
        self.value(seg_mid)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.times.clone()
    }
}

/// One Hermitian operator scaled by a real time-dependent coefficient.
#[derive(Clone)]
pub struct DriveTerm {
    pub op: Operator,
    pub coefficient: Arc<dyn Coefficient>,
}

impl fmt::Debug for DriveTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriveTerm").field("op", &self.op.label()).finish()
    }
}

/// `H(t) = base + Σ c_k(t) O_k`.
#[derive(Clone, Debug)]
pub enum Hamiltonian {
    Static(Operator),
    Driven { base: Operator, terms: Vec<DriveTerm> },
}

impl Hamiltonian {
    pub fn base(&self) -> &Operator {
        match self {
            Hamiltonian::Static(h) => h,
            Hamiltonian::Driven { base, .. } => base,
        }
    }

    pub fn terms(&self) -> &[DriveTerm] {
        match self {
            Hamiltonian::Static(_) => &[],
            Hamiltonian::Driven { terms, .. } => terms,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        !self.terms().is_empty()
    }

    /// Sampled Hamiltonian at time `t`.
    pub fn at(&self, t: f64) -> Operator {
        let mut h = self.base().clone();
        for term in self.terms() {
            h = &h + &(&term.op * term.coefficient.value(t));
        }
        h
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.terms().iter().flat_map(|d| d.coefficient.breakpoints()).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

/// Collapse operator `L` with rate `γ`, entering as `γ D[L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollapseOp {
    pub op: Operator,
    pub rate: f64,
}

impl CollapseOp {
    pub fn new(op: Operator, rate: f64) -> Self {
        CollapseOp { op, rate }
    }
}

/// Hamiltonian plus weighted collapse operators on one space.
#[derive(Clone, Debug)]
pub struct LindbladSystem {
    space: HilbertSpace,
    hamiltonian: Hamiltonian,
    collapse: Vec<CollapseOp>,
}

impl LindbladSystem {
    pub fn new(hamiltonian: Operator, collapse: Vec<CollapseOp>) -> Result<Self> {
        Self::with_hamiltonian(Hamiltonian::Static(hamiltonian), collapse)
    }

    pub fn with_hamiltonian(hamiltonian: Hamiltonian, collapse: Vec<CollapseOp>) -> Result<Self> {
        let space = hamiltonian.base().space().clone();
        let check_h = |op: &Operator| -> Result<()> {
            if op.space() != &space {
                return Err(Error::SpaceMismatch(format!("{} vs {}", op.space(), space)));
            }
            let deviation = op.hermitian_deviation();
            if deviation > HAMILTONIAN_HERMITIAN_TOL {
                return Err(Error::NonHermitian { deviation });
            }
            Ok(())
        };
        check_h(hamiltonian.base())?;
        for term in hamiltonian.terms() {
            check_h(&term.op)?;
        }
        for c in &collapse {
            if c.op.space() != &space {
                return Err(Error::SpaceMismatch(format!("collapse `{}` on {}", c.op.label(), c.op.space())));
            }
            if !(c.rate >= 0.0) || !c.rate.is_finite() {
                return Err(Error::InvalidParameter(format!("rate {} for `{}` must be finite and >= 0", c.rate, c.op.label())));
            }
        }
        Ok(LindbladSystem { space, hamiltonian, collapse })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.hamiltonian
    }

    pub fn collapse_ops(&self) -> &[CollapseOp] {
        &self.collapse
    }

    pub fn is_time_dependent(&self) -> bool {
        self.hamiltonian.is_time_dependent()
    }

    /// Same system with extra drive terms on top of the current Hamiltonian.
    pub fn with_drives(&self, extra: Vec<DriveTerm>) -> Result<Self> {
        let (base, mut terms) = match &self.hamiltonian {
            Hamiltonian::Static(h) => (h.clone(), Vec::new()),
            Hamiltonian::Driven { base, terms } => (base.clone(), terms.clone()),
        };
        terms.extend(extra);
        Self::with_hamiltonian(Hamiltonian::Driven { base, terms }, self.collapse.clone())
    }

    /// Same system with extra collapse channels.
    pub fn with_collapse(&self, extra: Vec<CollapseOp>) -> Result<Self> {
        let mut c = self.collapse.clone();
        c.extend(extra);
        Self::with_hamiltonian(self.hamiltonian.clone(), c)
    }

    /// `H_eff = H_base - (i/2) Σ γ L†L`.
    pub fn effective_hamiltonian(&self) -> Operator {
        let mut m = self.hamiltonian.base().matrix().clone();
        for c in &self.collapse {
            if c.rate == 0.0 {
                continue;
            }
            let ldl = c.op.matrix().adjoint() * c.op.matrix();
            m -= ldl * C64::new(0.0, 0.5 * c.rate);
        }
        Operator::new(self.space.clone(), m, "H_eff").expect("same space")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{ladder, sigma_x, sigma_z};

    #[test]
    fn rejects_bad_systems() {
        let a = ladder(3).unwrap();
        assert!(matches!(LindbladSystem::new(a.clone(), vec![]), Err(Error::NonHermitian { .. })));
        let h = sigma_z();
        assert!(LindbladSystem::new(h.clone(), vec![CollapseOp::new(sigma_x(), -1.0)]).is_err());
        assert!(matches!(
            LindbladSystem::new(h, vec![CollapseOp::new(a, 1.0)]),
            Err(Error::SpaceMismatch(_))
        ));
    }

    #[test]
    fn piecewise_lookup() {
        let p = PiecewiseConstant::new(vec![0.0, 1.0, 2.0], vec![3.0, -1.0, 5.0]).unwrap();
        assert_eq!(p.value(-0.5), 0.0);
        assert_eq!(p.value(0.0), 3.0);
        assert_eq!(p.value(0.999), 3.0);
        assert_eq!(p.value(1.0), -1.0);
        assert_eq!(p.value(10.0), 5.0);
        assert_eq!(p.value_in_segment(1.0, 0.5), 3.0);
        assert!(PiecewiseConstant::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn sampled_hamiltonian() {
        let drive = DriveTerm { op: sigma_x(), coefficient: Arc::new(FnCoefficient(|t: f64| 2.0 * t)) };
        let h = Hamiltonian::Driven { base: sigma_z(), terms: vec![drive] };
        let at = h.at(0.25);
        assert_eq!(at.get(0, 1).re, 0.5);
        assert_eq!(at.get(1, 1).re, 1.0);
        assert!(h.is_time_dependent());
    }
}
