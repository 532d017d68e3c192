//! Deterministic Lindblad evolution and steady states.
//!
//! The generator is
//! `dρ/dt = -i[H, ρ] + Σ γ (L ρ L† - ½{L†L, ρ})`,
//! evaluated as `-i H_eff ρ + i ρ H_eff† + Σ γ L ρ L†` with
//! `H_eff = H - (i/2) Σ γ L†L`. Density matrices are flattened column-major
//! (column stacking), so `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

pub mod integrator;
mod series;
mod system;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::hilbert::{trace_product, DensityMatrix, HilbertSpace, Kernel, Operator};
use crate::{Error, Result, C64};

pub use integrator::{Dopri5, OdeRhs, StepStats, Tolerances};
pub use series::{linspace, validate_grid, Column, TimeSeries};
pub use system::{
    Coefficient, CollapseOp, DriveTerm, FnCoefficient, Hamiltonian, LindbladSystem, PiecewiseConstant,
    HAMILTONIAN_HERMITIAN_TOL,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

/// Evolution aborts when the smallest eigenvalue drops below this.
pub const POSITIVITY_ABORT: f64 = -1e-6;

struct Jump {
    l: Kernel,
    ldag: Kernel,
    rate: f64,
}

/// Precomputed right-hand side of the master equation on `vec(ρ)`.
///
/// Assumes a Hermitian argument, which every Runge–Kutta stage built from a
/// Hermitian initial state is.
pub struct LindbladKernel {
    n: usize,
    heff: Kernel,
    drives: Vec<(Kernel, Arc<dyn Coefficient>)>,
    jumps: Vec<Jump>,
    tmp: Vec<C64>,
    tmp_l: Vec<C64>,
}

impl LindbladKernel {
    pub fn new(sys: &LindbladSystem) -> Self {
        let n = sys.space().total_dim();
        let heff = Kernel::from_matrix(&(sys.effective_hamiltonian().matrix() * MINUS_I));
        let drives = sys
            .hamiltonian()
            .terms()
            .iter()
            .map(|d| (Kernel::from_matrix(&(d.op.matrix() * MINUS_I)), d.coefficient.clone()))
            .collect();
        let jumps = sys
            .collapse_ops()
            .iter()
            .filter(|c| c.rate > 0.0)
            .map(|c| Jump {
                l: Kernel::from_matrix(c.op.matrix()),
                ldag: Kernel::from_matrix(&c.op.matrix().adjoint()),
                rate: c.rate,
            })
            .collect();
        LindbladKernel { n, heff, drives, jumps, tmp: vec![ZERO; n * n], tmp_l: vec![ZERO; n * n] }
    }
}

impl OdeRhs for LindbladKernel {
    fn dim(&self) -> usize {
        self.n * self.n
    }

    fn eval(&mut self, t: f64, seg_mid: f64, rho: &[C64], out: &mut [C64]) {
        let n = self.n;
        let tmp = &mut self.tmp;
        tmp.fill(ZERO);
        self.heff.gemm_left(ONE, rho, n, tmp);
        for (k, c) in &self.drives {
            let v = c.value_in_segment(t, seg_mid);
            if v != 0.0 {
                k.gemm_left(C64::new(v, 0.0), rho, n, tmp);
            }
        }
        // Jump terms enter X at half weight so that out = X + X† is exactly
        // Hermitian. Any anti-Hermitian residue would otherwise grow under
        // this non-CP form of the generator.
        for jump in &self.jumps {
            let lr = &mut self.tmp_l;
            lr.fill(ZERO);
            jump.l.gemm_left(ONE, rho, n, lr);
            jump.ldag.gemm_right(C64::new(0.5 * jump.rate, 0.0), lr, n, tmp);
        }
        for j in 0..n {
            for i in 0..n {
                out[i + j * n] = tmp[i + j * n] + tmp[j + i * n].conj();
            }
        }
    }
}

/// `dρ/dt` at time `t`.
pub fn lindblad_rhs(sys: &LindbladSystem, rho: &DensityMatrix, t: f64) -> Result<DMatrix<C64>> {
    if rho.space() != sys.space() {
        return Err(Error::SpaceMismatch(format!("{} vs {}", rho.space(), sys.space())));
    }
    let n = sys.space().total_dim();
    let mut k = LindbladKernel::new(sys);
    let mut out = vec![ZERO; n * n];
    k.eval(t, t, rho.matrix().as_slice(), &mut out);
    Ok(DMatrix::from_vec(n, n, out))
}

/// Integration scheme for [`evolve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Dormand–Prince 5(4) with step-size control.
    Adaptive,
    /// Classical RK4 with a fixed step (shortened to land on output times).
    FixedRk4 { dt: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    pub tol: Tolerances,
    pub method: Method,
    /// Keep the density matrix at every output time.
    pub store_states: bool,
    /// Compute the minimum eigenvalue at every output time.
    pub check_positivity: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { tol: Tolerances::default(), method: Method::Adaptive, store_states: false, check_positivity: true }
    }
}

impl EvolveOptions {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.tol.rtol = rtol;
        self.tol.atol = rtol * 1e-2;
        self
    }
}

/// Invariant checks gathered over all output times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub max_trace_drift: f64,
    pub max_hermiticity_drift: f64,
    /// NaN when positivity checks were disabled.
    pub min_eigenvalue: f64,
    pub stats: StepStats,
    /// Sum of accepted local error estimates (Frobenius norm).
    pub error_estimate: f64,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub series: TimeSeries,
    pub states: Vec<DensityMatrix>,
    pub final_state: DensityMatrix,
    pub diagnostics: Diagnostics,
}

/// Output times merged with drive breakpoints, each tagged with whether it is
/// an output time.
pub(crate) fn segment_stops(tgrid: &[f64], breakpoints: &[f64]) -> Vec<(f64, bool)> {
    let (t0, t1) = (tgrid[0], *tgrid.last().unwrap());
    let mut stops: Vec<(f64, bool)> = tgrid.iter().map(|&t| (t, true)).collect();
    stops.extend(breakpoints.iter().filter(|&&b| b > t0 && b < t1).map(|&b| (b, false)));
    stops.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    stops.dedup_by(|b, a| a.0 == b.0);
    stops
}

struct Recorder<'a> {
    space: &'a HilbertSpace,
    observables: &'a [Operator],
    opts: &'a EvolveOptions,
    values: Vec<Vec<C64>>,
    states: Vec<DensityMatrix>,
    diag: Diagnostics,
}

impl Recorder<'_> {
    fn record(&mut self, t: f64, y: &[C64]) -> Result<()> {
        let n = self.space.total_dim();
        let m = DMatrix::from_column_slice(n, n, y);
        let tr = m.trace();
        self.diag.max_trace_drift = self.diag.max_trace_drift.max((tr - ONE).norm());
        let herm = (&m - m.adjoint()).iter().fold(0.0f64, |a, v| a.max(v.norm()));
        self.diag.max_hermiticity_drift = self.diag.max_hermiticity_drift.max(herm);
        if self.opts.check_positivity {
            let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
            let min = SymmetricEigen::new(h).eigenvalues.min();
            self.diag.min_eigenvalue = if self.diag.min_eigenvalue.is_nan() { min } else { self.diag.min_eigenvalue.min(min) };
            if min < POSITIVITY_ABORT {
                return Err(Error::PositivityViolation { t, min_eigenvalue: min });
            }
        }
        for (col, op) in self.values.iter_mut().zip(self.observables) {
            col.push(trace_product(&m, op.matrix()));
        }
        if self.opts.store_states {
            self.states.push(DensityMatrix::from_raw(self.space.clone(), m)?);
        }
        Ok(())
    }
}

/// Integrates from `tgrid[0]` and samples observables at every grid time.
pub fn evolve(
    sys: &LindbladSystem,
    rho0: &DensityMatrix,
    tgrid: &[f64],
    observables: &[Operator],
    opts: &EvolveOptions,
) -> Result<TimeSeries> {
    Ok(evolve_full(sys, rho0, tgrid, observables, opts)?.series)
}

/// [`evolve`] returning states and diagnostics as well.
pub fn evolve_full(
    sys: &LindbladSystem,
    rho0: &DensityMatrix,
    tgrid: &[f64],
    observables: &[Operator],
    opts: &EvolveOptions,
) -> Result<Evolution> {
    validate_grid(tgrid)?;
    let space = sys.space();
    if rho0.space() != space {
        return Err(Error::SpaceMismatch(format!("initial state on {} but system on {}", rho0.space(), space)));
    }
    for op in observables {
        if op.space() != space {
            return Err(Error::SpaceMismatch(format!("observable `{}` on {}", op.label(), op.space())));
        }
    }
    // Validates trace, Hermiticity and positivity of the initial state.
    DensityMatrix::new(space.clone(), rho0.matrix().clone())?;

    let stops = segment_stops(tgrid, &sys.hamiltonian().breakpoints());
    let mut rec = Recorder {
        space,
        observables,
        opts,
        values: vec![Vec::with_capacity(tgrid.len()); observables.len()],
        states: Vec::new(),
        diag: Diagnostics {
            max_trace_drift: 0.0,
            max_hermiticity_drift: 0.0,
            min_eigenvalue: f64::NAN,
            stats: StepStats::default(),
            error_estimate: 0.0,
        },
    };
    let kernel = LindbladKernel::new(sys);
    // Start from an exactly Hermitian vector; the kernel keeps it that way.
    let m0 = rho0.matrix();
    let h0 = (m0 + m0.adjoint()) * C64::new(0.5, 0.0);
    let y0 = h0.as_slice().to_vec();
    rec.record(tgrid[0], &y0)?;

    let final_y = match opts.method {
        Method::Adaptive => {
            let mut stepper = Dopri5::new(kernel, tgrid[0], y0, opts.tol);
            for w in stops.windows(2) {
                let (a, (b, is_output)) = (w[0].0, w[1]);
                stepper.set_segment_mid(0.5 * (a + b));
                stepper.advance_to(b)?;
                if is_output {
                    rec.record(b, stepper.y())?;
                }
            }
            rec.diag.stats = stepper.stats();
            rec.diag.error_estimate = stepper.error_estimate();
            stepper.y().to_vec()
        }
        Method::FixedRk4 { dt } => {
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter(format!("fixed step {dt} must be positive")));
            }
            let mut k = kernel;
            let mut y = y0;
            for w in stops.windows(2) {
                let (a, (b, is_output)) = (w[0].0, w[1]);
                let n_steps = ((b - a) / dt).ceil().max(1.0) as usize;
                let h = (b - a) / n_steps as f64;
                for i in 0..n_steps {
                    integrator::rk4_step(&mut k, a + i as f64 * h, 0.5 * (a + b), &mut y, h);
                }
                rec.diag.stats.accepted += n_steps;
                rec.diag.stats.rhs_evals += 4 * n_steps;
                if is_output {
                    rec.record(b, &y)?;
                }
            }
            y
        }
    };

    let n = space.total_dim();
    let final_state = DensityMatrix::from_raw(space.clone(), DMatrix::from_vec(n, n, final_y))?;
    let mut series = TimeSeries::new(tgrid.to_vec())?;
    for (op, vals) in observables.iter().zip(rec.values) {
        series.push_column(op.label(), vals, None)?;
    }
    let d = rec.diag;
    match opts.method {
        Method::Adaptive => {
            series.set_meta("method", "dopri5");
            series.set_meta("rtol", opts.tol.rtol);
            series.set_meta("atol", opts.tol.atol);
        }
        Method::FixedRk4 { dt } => {
            series.set_meta("method", "rk4");
            series.set_meta("dt", dt);
        }
    }
    series.set_meta("steps_accepted", d.stats.accepted);
    series.set_meta("steps_rejected", d.stats.rejected);
    series.set_meta("error_estimate", d.error_estimate);
    series.set_meta("max_trace_drift", d.max_trace_drift);
    series.set_meta("max_hermiticity_drift", d.max_hermiticity_drift);
    series.set_meta("min_eigenvalue", d.min_eigenvalue);
    Ok(Evolution { series, states: rec.states, final_state, diagnostics: d })
}

/// Superoperator on column-stacked `vec(ρ)` for a time-independent system.
pub fn liouvillian(sys: &LindbladSystem) -> Result<DMatrix<C64>> {
    if sys.is_time_dependent() {
        return Err(Error::InvalidParameter("liouvillian needs a time-independent system".into()));
    }
    let n = sys.space().total_dim();
    let id = DMatrix::<C64>::identity(n, n);
    let h = sys.hamiltonian().base().matrix();
    let mut l = (id.kronecker(h) - h.transpose().kronecker(&id)) * MINUS_I;
    for c in sys.collapse_ops() {
        if c.rate == 0.0 {
            continue;
        }
        let lm = c.op.matrix();
        let ldl = lm.adjoint() * lm;
        let g = C64::new(c.rate, 0.0);
        l += lm.conjugate().kronecker(lm) * g;
        l -= id.kronecker(&ldl) * (g * 0.5);
        l -= ldl.transpose().kronecker(&id) * (g * 0.5);
    }
    Ok(l)
}

/// Result of [`steady_state`].
#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    /// Dimension of the generator's null space.
    pub multiplicity: usize,
    /// True when `rho` is the projection of a supplied initial state.
    pub projected: bool,
    /// Frobenius norm of `dρ/dt` at `rho`.
    pub residual: f64,
}

/// Relative singular-value threshold for null directions.
pub const NULL_SPACE_REL_TOL: f64 = 1e-10;

/// Steady state from the null space of the Liouvillian.
///
/// A degenerate null space needs `initial`, which is then projected onto the
/// stationary manifold with the biorthogonal left/right null vectors.
pub fn steady_state(sys: &LindbladSystem, initial: Option<&DensityMatrix>) -> Result<SteadyState> {
    let n = sys.space().total_dim();
    let l = liouvillian(sys)?;
    let svd = SVD::new(l, true, true);
    let smax = svd.singular_values.max();
    let null: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= NULL_SPACE_REL_TOL * smax)
        .collect();
    let u = svd.u.as_ref().ok_or_else(|| Error::SteadyState("SVD without U".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::SteadyState("SVD without V".into()))?;
    let k = null.len();
    let (vec_rho, projected) = match k {
        0 => return Err(Error::SteadyState("generator has no null direction".into())),
        1 => (v_t.row(null[0]).adjoint(), false),
        _ => {
            let rho0 = initial.ok_or(Error::DegenerateSteadyState { multiplicity: k })?;
            if rho0.space() != sys.space() {
                return Err(Error::SpaceMismatch("initial state space".into()));
            }
            let r = DMatrix::from_fn(n * n, k, |i, j| v_t[(null[j], i)].conj());
            let u0 = DMatrix::from_fn(n * n, k, |i, j| u[(i, null[j])]);
            let m = u0.adjoint() * &r;
            let x0 = DVector::from_column_slice(rho0.matrix().as_slice());
            let c = m
                .lu()
                .solve(&(u0.adjoint() * x0))
                .ok_or_else(|| Error::SteadyState("left/right null vectors are not biorthogonalisable".into()))?;
            (r * c, true)
        }
    };
    let mut m = DMatrix::from_column_slice(n, n, vec_rho.as_slice());
    m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let tr = m.trace();
    if tr.norm() < 1e-14 {
        return Err(Error::SteadyState("null vector has zero trace".into()));
    }
    m /= tr;
    let rho = DensityMatrix::new(sys.space().clone(), m)?;
    let residual = lindblad_rhs(sys, &rho, 0.0)?.norm();
    Ok(SteadyState { rho, multiplicity: k, projected, residual })
}

/// Settings for [`steady_state_by_evolution`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyEvolutionOptions {
    /// Stop once `‖dρ/dt‖_F` falls below this.
    pub residual_tol: f64,
    pub t_max: f64,
    pub first_chunk: f64,
    pub tol: Tolerances,
}

impl Default for SteadyEvolutionOptions {
    fn default() -> Self {
        SteadyEvolutionOptions {
            residual_tol: 1e-10,
            t_max: 1e7,
            first_chunk: 1.0,
            tol: Tolerances { rtol: 1e-11, atol: 1e-13, ..Tolerances::default() },
        }
    }
}

/// Steady state by integrating until the generator residual is small.
pub fn steady_state_by_evolution(
    sys: &LindbladSystem,
    rho0: &DensityMatrix,
    opts: &SteadyEvolutionOptions,
) -> Result<SteadyState> {
    if sys.is_time_dependent() {
        return Err(Error::InvalidParameter("steady state needs a time-independent system".into()));
    }
    if rho0.space() != sys.space() {
        return Err(Error::SpaceMismatch("initial state space".into()));
    }
    let n = sys.space().total_dim();
    let mut probe = LindbladKernel::new(sys);
    let mut stepper = Dopri5::new(LindbladKernel::new(sys), 0.0, rho0.matrix().as_slice().to_vec(), opts.tol);
    let mut dy = vec![ZERO; n * n];
    let mut chunk = opts.first_chunk;
    let mut iterations = 0;
    loop {
        probe.eval(stepper.t(), stepper.t(), stepper.y(), &mut dy);
        let residual = dy.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if residual <= opts.residual_tol {
            let mut m = DMatrix::from_column_slice(n, n, stepper.y());
            m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
            let tr = m.trace();
            m /= tr;
            let rho = DensityMatrix::new(sys.space().clone(), m)?;
            return Ok(SteadyState { rho, multiplicity: 0, projected: false, residual });
        }
        if stepper.t() >= opts.t_max {
            return Err(Error::NonConvergence {
                iterations,
                reason: format!("residual {residual:.3e} above {:.1e} at t = {}", opts.residual_tol, stepper.t()),
            });
        }
        let target = (stepper.t() + chunk).min(opts.t_max);
        stepper.advance_to(target)?;
        chunk *= 1.5;
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{embed, ladder, number, projector, sigma_x, sigma_z, PureState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn decay(gamma: f64) -> LindbladSystem {
        let h = Operator::zeros(&HilbertSpace::single(2).unwrap());
        LindbladSystem::new(h, vec![CollapseOp::new(ladder(2).unwrap(), gamma)]).unwrap()
    }

    fn excited() -> DensityMatrix {
        PureState::basis(&HilbertSpace::single(2).unwrap(), &[1]).unwrap().to_density()
    }

    #[test]
    fn rhs_pure_decay() {
        let d = lindblad_rhs(&decay(0.7), &excited(), 0.0).unwrap();
        assert_relative_eq!(d[(1, 1)].re, -0.7, epsilon = 1e-15);
        assert_relative_eq!(d[(0, 0)].re, 0.7, epsilon = 1e-15);
        assert!(d.trace().norm() < 1e-15);
    }

    #[test]
    fn rhs_unitary_limit() {
        let sys = LindbladSystem::new(sigma_z(), vec![]).unwrap();
        let plus = PureState::new(
            HilbertSpace::single(2).unwrap(),
            DVector::from_vec(vec![ONE, C64::new(0.3, 0.8)]),
        )
        .unwrap()
        .to_density();
        let d = lindblad_rhs(&sys, &plus, 0.0).unwrap();
        let comm = (sigma_z().matrix() * plus.matrix() - plus.matrix() * sigma_z().matrix()) * MINUS_I;
        assert!((&d - comm).norm() < 1e-15);
        // d Tr(ρ²)/dt = 2 Tr(ρ dρ)
        assert!(trace_product(plus.matrix(), &d).norm() < 1e-15);
    }

    #[test]
    fn decay_closed_form() {
        let grid = linspace(0.0, 1.0, 11);
        let p1 = projector(2, 1, 1).unwrap().with_label("P1");
        let ts = evolve(&decay(1.0), &excited(), &grid, &[p1], &EvolveOptions::default()).unwrap();
        let p = ts.real("P1").unwrap();
        for (t, v) in grid.iter().zip(&p) {
            assert!((v - (-t).exp()).abs() < 1e-6);
        }
        assert_relative_eq!(p[10], 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn rabi_closed_form_both_methods() {
        let omega = 1.3;
        let sys = LindbladSystem::new(&sigma_x() * (omega / 2.0), vec![]).unwrap();
        let rho0 = PureState::basis(&HilbertSpace::single(2).unwrap(), &[0]).unwrap().to_density();
        let grid = linspace(0.0, 6.0, 25);
        let p1 = projector(2, 1, 1).unwrap();
        for method in [Method::Adaptive, Method::FixedRk4 { dt: 0.01 }] {
            let opts = EvolveOptions { method, ..Default::default() }.with_rtol(1e-10);
            let ev = evolve_full(&sys, &rho0, &grid, std::slice::from_ref(&p1), &opts).unwrap();
            let p = ev.series.real(p1.label()).unwrap();
            for (t, v) in grid.iter().zip(&p) {
                assert!((v - (omega * t / 2.0).sin().powi(2)).abs() < 1e-7, "{method:?} t={t}");
            }
            assert!((ev.final_state.purity() - 1.0).abs() < 1e-8, "{method:?} {}", ev.final_state.purity() - 1.0);
        }
    }

    #[test]
    fn piecewise_drive_matches_manual_segments() {
        // σx drive switched on at t = 1 for one unit of time.
        let drive = PiecewiseConstant::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.8, 0.0]).unwrap();
        let base = &sigma_z() * 0.2;
        let sys = LindbladSystem::with_hamiltonian(
            Hamiltonian::Driven { base: base.clone(), terms: vec![DriveTerm { op: sigma_x(), coefficient: Arc::new(drive) }] },
            vec![CollapseOp::new(ladder(2).unwrap(), 0.1)],
        )
        .unwrap();
        let rho0 = excited();
        let grid = vec![0.0, 0.5, 3.0];
        let p1 = projector(2, 1, 1).unwrap();
        let driven = evolve(&sys, &rho0, &grid, std::slice::from_ref(&p1), &EvolveOptions::default()).unwrap();

        let off = LindbladSystem::new(base.clone(), vec![CollapseOp::new(ladder(2).unwrap(), 0.1)]).unwrap();
        let on = LindbladSystem::new(&base + &(&sigma_x() * 0.8), vec![CollapseOp::new(ladder(2).unwrap(), 0.1)]).unwrap();
        let opts = EvolveOptions::default();
        let r1 = evolve_full(&off, &rho0, &[0.0, 1.0], &[], &opts).unwrap().final_state;
        let r2 = evolve_full(&on, &r1, &[1.0, 2.0], &[], &opts).unwrap().final_state;
        let r3 = evolve_full(&off, &r2, &[2.0, 3.0], &[], &opts).unwrap().final_state;
        let expect = r3.matrix()[(1, 1)].re;
        assert!((driven.real(p1.label()).unwrap()[2] - expect).abs() < 1e-7);
    }

    #[test]
    fn driven_two_level_steady_state() {
        let (omega, gamma) = (0.7, 0.4);
        let sys = LindbladSystem::new(&sigma_x() * (omega / 2.0), vec![CollapseOp::new(ladder(2).unwrap(), gamma)]).unwrap();
        let ss = steady_state(&sys, None).unwrap();
        assert_eq!(ss.multiplicity, 1);
        let p1 = ss.rho.matrix()[(1, 1)].re;
        let oracle = omega * omega / (2.0 * omega * omega + gamma * gamma);
        assert_relative_eq!(p1, oracle, epsilon = 1e-12);
        assert!(ss.residual < 1e-9);

        let evo = steady_state_by_evolution(&sys, &excited(), &SteadyEvolutionOptions::default()).unwrap();
        assert!((evo.rho.matrix() - ss.rho.matrix()).norm() < 1e-6);
    }

    #[test]
    fn lossy_mode_relaxes_to_vacuum() {
        let d = 4;
        let h = &number(d).unwrap() * 1.5;
        let sys = LindbladSystem::new(h, vec![CollapseOp::new(ladder(d).unwrap(), 0.3)]).unwrap();
        let ss = steady_state(&sys, None).unwrap();
        assert_relative_eq!(ss.rho.matrix()[(0, 0)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_manifold_needs_initial_state() {
        // Two independent qubits, only the first decays: the second keeps its state.
        let sp = HilbertSpace::new(&[2, 2]).unwrap();
        let l = embed(&ladder(2).unwrap(), 0, &sp).unwrap();
        let sys = LindbladSystem::new(Operator::zeros(&sp), vec![CollapseOp::new(l, 1.0)]).unwrap();
        match steady_state(&sys, None) {
            Err(Error::DegenerateSteadyState { multiplicity }) => assert_eq!(multiplicity, 4),
            other => panic!("expected degeneracy error, got {other:?}"),
        }
        let psi = PureState::new(sp.clone(), DVector::from_vec(vec![ZERO, ZERO, C64::new(0.6, 0.0), C64::new(0.0, 0.8)])).unwrap();
        let ss = steady_state(&sys, Some(&psi.to_density())).unwrap();
        assert!(ss.projected);
        // |1>(0.6|0> + 0.8i|1>) decays to |0>(0.6|0> + 0.8i|1>).
        let expect = PureState::new(sp.clone(), DVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8), ZERO, ZERO])).unwrap();
        assert!((ss.rho.matrix() - expect.to_density().matrix()).norm() < 1e-10);
        let evo = steady_state_by_evolution(&sys, &psi.to_density(), &SteadyEvolutionOptions::default()).unwrap();
        assert!((evo.rho.matrix() - ss.rho.matrix()).norm() < 1e-6);
    }

    #[test]
    fn liouvillian_matches_kernel() {
        let sp = HilbertSpace::new(&[3, 2]).unwrap();
        let a = embed(&ladder(3).unwrap(), 0, &sp).unwrap();
        let s = embed(&ladder(2).unwrap(), 1, &sp).unwrap();
        let h = (&(&a * &s.dagger()) + &(&a.dagger() * &s)).try_add(&embed(&number(3).unwrap(), 0, &sp).unwrap()).unwrap();
        let sys = LindbladSystem::new(h, vec![CollapseOp::new(a, 0.2), CollapseOp::new(s, 0.5)]).unwrap();
        let rho = PureState::new(sp.clone(), DVector::from_fn(6, |i, _| C64::new(i as f64, 1.0 - i as f64))).unwrap().to_density();
        let l = liouvillian(&sys).unwrap();
        let via_l = &l * DVector::from_column_slice(rho.matrix().as_slice());
        let via_k = lindblad_rhs(&sys, &rho, 0.0).unwrap();
        for (x, y) in via_l.iter().zip(via_k.iter()) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn positivity_violation_aborts() {
        // A non-physical initial matrix passes as raw but is rejected up front.
        let sp = HilbertSpace::single(2).unwrap();
        let bad = DensityMatrix::from_raw(sp, DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(1.1, 0.0), C64::new(-0.1, 0.0)]))).unwrap();
        assert!(evolve(&decay(1.0), &bad, &[0.0, 1.0], &[], &EvolveOptions::default()).is_err());
    }

    #[test]
    fn kernel_output_is_exactly_hermitian() {
        // Widely spread decay widths (two-photon loss in a large Fock space)
        // amplify any anti-Hermitian rounding residue exponentially.
        let n = 40;
        let a2 = ladder(n).unwrap().try_mul(&ladder(n).unwrap()).unwrap();
        let h = &(&a2 + &a2.dagger()) * 0.5;
        let sys = LindbladSystem::new(h, vec![CollapseOp::new(a2, 0.25)]).unwrap();
        let rho0 = PureState::basis(&HilbertSpace::single(n).unwrap(), &[0]).unwrap().to_density();
        let d = evolve_full(&sys, &rho0, &linspace(0.0, 20.0, 21), &[], &EvolveOptions::default()).unwrap().diagnostics;
        assert_eq!(d.max_hermiticity_drift, 0.0);
        assert!(d.min_eigenvalue > -1e-7, "{}", d.min_eigenvalue);
    }

    #[test]
    fn tolerance_halving_within_error_estimate() {
        let sp = HilbertSpace::new(&[3, 2]).unwrap();
        let a = embed(&ladder(3).unwrap(), 0, &sp).unwrap();
        let s = embed(&ladder(2).unwrap(), 1, &sp).unwrap();
        let h = (&(&a * &s) + &(&a.dagger() * &s.dagger())).try_add(&(&embed(&projector(3, 2, 2).unwrap(), 0, &sp).unwrap() * 3.0)).unwrap();
        let sys = LindbladSystem::new(h, vec![CollapseOp::new(a.clone(), 0.05), CollapseOp::new(s, 1.0)]).unwrap();
        let rho0 = PureState::basis(&sp, &[0, 0]).unwrap().to_density();
        let n = a.dagger().try_mul(&a).unwrap();
        let grid = linspace(0.0, 20.0, 5);
        let coarse = evolve_full(&sys, &rho0, &grid, std::slice::from_ref(&n), &EvolveOptions::default().with_rtol(1e-6)).unwrap();
        let fine = evolve_full(&sys, &rho0, &grid, std::slice::from_ref(&n), &EvolveOptions::default().with_rtol(5e-7)).unwrap();
        let diff = (coarse.series.columns[0].values[4] - fine.series.columns[0].values[4]).norm();
        assert!(diff < coarse.diagnostics.error_estimate, "{diff} vs {}", coarse.diagnostics.error_estimate);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn hygiene_on_random_two_mode_systems(
            g1 in 0.0f64..1.0, g2 in 0.0f64..1.0, w in -2.0f64..2.0, c in 0.0f64..1.5,
        ) {
            let sp = HilbertSpace::new(&[3, 2]).unwrap();
            let a = embed(&ladder(3).unwrap(), 0, &sp).unwrap();
            let s = embed(&ladder(2).unwrap(), 1, &sp).unwrap();
            let h = (&(&(&a * &s) + &(&a.dagger() * &s.dagger())) * c)
                .try_add(&(&embed(&number(3).unwrap(), 0, &sp).unwrap() * w)).unwrap();
            let sys = LindbladSystem::new(h, vec![CollapseOp::new(a, g1), CollapseOp::new(s, g2)]).unwrap();
            let rho0 = PureState::basis(&sp, &[1, 0]).unwrap().to_density();
            let opts = EvolveOptions::default().with_rtol(1e-10);
            let ev = evolve_full(&sys, &rho0, &linspace(0.0, 5.0, 11), &[], &opts).unwrap();
            prop_assert!(ev.diagnostics.max_trace_drift < 1e-8);
            prop_assert!(ev.diagnostics.max_hermiticity_drift < 1e-9);
            prop_assert!(ev.diagnostics.min_eigenvalue >= -1e-7);
            if g1 == 0.0 && g2 == 0.0 {
                prop_assert!((ev.final_state.purity() - 1.0).abs() < 1e-8);
            }
        }
    }
}
