//! Quantum-jump unraveling and low-frequency dephasing noise.
//!
//! A trajectory evolves an unnormalised state under
//! `H_eff = H - (i/2) Σ γ L†L`; a jump fires when `‖ψ‖²` falls to a uniform
//! random threshold, with the channel drawn with probability `∝ γ‖Lψ‖²`.

mod noise;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{
    segment_stops, validate_grid, Coefficient, Dopri5, EvolveOptions, LindbladSystem, OdeRhs, TimeSeries, Tolerances,
};
use crate::hilbert::{Kernel, Operator, PureState};
use crate::{Error, Result, C64};

pub use noise::{
    calibrate_dephasing, noisy_ensemble, ramsey_envelope, sample_low_freq_noise, NoiseRealization, NoisyEnsemble,
    RamseyParams, SpectrumParams, MIN_NOISE_REALIZATIONS,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

/// Relative bracket width at which jump-time root finding stops.
const JUMP_TIME_RTOL: f64 = 1e-10;

/// `dψ/dt = -i H_eff(t) ψ`.
struct SchrodingerKernel {
    n: usize,
    heff: Kernel,
    drives: Vec<(Kernel, Arc<dyn Coefficient>)>,
}

impl SchrodingerKernel {
    fn new(sys: &LindbladSystem) -> Self {
        let heff = Kernel::from_matrix(&(sys.effective_hamiltonian().matrix() * MINUS_I));
        let drives = sys
            .hamiltonian()
            .terms()
            .iter()
            .map(|d| (Kernel::from_matrix(&(d.op.matrix() * MINUS_I)), d.coefficient.clone()))
            .collect();
        SchrodingerKernel { n: sys.space().total_dim(), heff, drives }
    }
}

impl OdeRhs for SchrodingerKernel {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&mut self, t: f64, seg_mid: f64, y: &[C64], dy: &mut [C64]) {
        dy.fill(ZERO);
        self.heff.matvec(ONE, y, dy);
        for (k, c) in &self.drives {
            let v = c.value_in_segment(t, seg_mid);
            if v != 0.0 {
                k.matvec(C64::new(v, 0.0), y, dy);
            }
        }
    }
}

fn norm_sqr(y: &[C64]) -> f64 {
    y.iter().map(|v| v.norm_sqr()).sum()
}

/// A quantum jump: time and index into the system's collapse operators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryOptions {
    pub tol: Tolerances,
    /// Keep the normalised state at every output time.
    pub store_states: bool,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions { tol: EvolveOptions::default().tol, store_states: false }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub jumps: Vec<JumpEvent>,
    /// Observable expectation values at the output times.
    pub series: TimeSeries,
    pub states: Vec<PureState>,
    pub final_state: PureState,
}

/// Applies a jump in place: picks a channel and renormalises.
fn apply_jump(jumps: &[(usize, Kernel, f64)], psi: &mut Vec<C64>, u: f64) -> Result<usize> {
    let n = psi.len();
    let mut candidates = Vec::with_capacity(jumps.len());
    let mut total = 0.0;
    for (idx, l, rate) in jumps {
        let mut out = vec![ZERO; n];
        l.matvec(ONE, psi, &mut out);
        let w = rate * norm_sqr(&out);
        total += w;
        candidates.push((*idx, w, out));
    }
    if !(total > 0.0) {
        return Err(Error::InvalidState("jump requested but every channel has zero weight".into()));
    }
    let target = u * total;
    let mut acc = 0.0;
    let last = candidates.iter().rposition(|c| c.1 > 0.0).expect("positive total weight");
    for (k, (idx, w, out)) in candidates.into_iter().enumerate() {
        acc += w;
        if w > 0.0 && (target < acc || k == last) {
            let s = 1.0 / norm_sqr(&out).sqrt();
            *psi = out.into_iter().map(|v| v * s).collect();
            return Ok(idx);
        }
    }
    unreachable!("channel selection always terminates at the last positive weight")
}

/// Evolves one quantum-jump trajectory from `psi0` and samples the
/// observables at every grid time. Fully determined by `seed`.
pub fn run_trajectory(
    sys: &LindbladSystem,
    psi0: &PureState,
    tgrid: &[f64],
    observables: &[Operator],
    seed: u64,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryRecord> {
    validate_grid(tgrid)?;
    let space = sys.space();
    if psi0.space() != space {
        return Err(Error::SpaceMismatch(format!("initial state on {} but system on {}", psi0.space(), space)));
    }
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("initial state norm {} is not 1", psi0.norm())));
    }
    for op in observables {
        if op.space() != space {
            return Err(Error::SpaceMismatch(format!("observable `{}` on {}", op.label(), op.space())));
        }
    }
    let obs: Vec<Kernel> = observables.iter().map(Operator::kernel).collect();
    let jumps: Vec<(usize, Kernel, f64)> = sys
        .collapse_ops()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.rate > 0.0)
        .map(|(i, c)| (i, c.op.kernel(), c.rate))
        .collect();
    let n = space.total_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // In (0, 1] so ln is finite.
    let draw = |rng: &mut ChaCha8Rng| 1.0 - rng.random::<f64>();

    let mut values = vec![Vec::with_capacity(tgrid.len()); observables.len()];
    let mut states = Vec::new();
    let record = |y: &[C64], values: &mut Vec<Vec<C64>>, states: &mut Vec<PureState>| -> Result<()> {
        let nn = norm_sqr(y);
        let mut tmp = vec![ZERO; n];
        for (col, k) in values.iter_mut().zip(&obs) {
            tmp.fill(ZERO);
            k.matvec(ONE, y, &mut tmp);
            let ev: C64 = y.iter().zip(&tmp).map(|(a, b)| a.conj() * b).sum();
            col.push(ev / nn);
        }
        if opts.store_states {
            states.push(PureState::new(space.clone(), DVector::from_column_slice(y))?);
        }
        Ok(())
    };

    let y0 = psi0.amplitudes().as_slice().to_vec();
    record(&y0, &mut values, &mut states)?;
    let mut stepper = Dopri5::new(SchrodingerKernel::new(sys), tgrid[0], y0, opts.tol);
    let mut threshold = draw(&mut rng);
    let mut jump_log = Vec::new();

    for w in segment_stops(tgrid, &sys.hamiltonian().breakpoints()).windows(2) {
        let (a, (b, is_output)) = (w[0].0, w[1]);
        stepper.set_segment_mid(0.5 * (a + b));
        while stepper.t() < b {
            let t_prev = stepper.t();
            let y_prev = stepper.y().to_vec();
            stepper.step(b)?;
            let nn = norm_sqr(stepper.y());
            if !nn.is_finite() || nn == 0.0 {
                return Err(Error::NormUnderflow { t: stepper.t() });
            }
            if nn > threshold || jumps.is_empty() {
                continue;
            }
            // Locate the crossing of ln‖ψ‖² = ln r on [t_prev, t] by Illinois.
            let h_full = stepper.t() - t_prev;
            let target = threshold.ln();
            let mut y_hit = stepper.y().to_vec();
            stepper.reset(t_prev, &y_prev);
            let f0 = norm_sqr(&y_prev).ln() - target;
            let (mut lo, mut hi) = (0.0, h_full);
            let (mut flo, mut fhi) = (f0, nn.ln() - target);
            let mut side = 0i8;
            let mut iters = 0;
            while hi - lo > JUMP_TIME_RTOL * h_full && fhi != 0.0 && iters < 100 {
                iters += 1;
                let mid = if fhi != flo { lo + (hi - lo) * flo / (flo - fhi) } else { 0.5 * (lo + hi) };
                let mid = mid.clamp(lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo));
                let y = stepper.probe(mid);
                let f = norm_sqr(&y).ln() - target;
                if f > 0.0 {
                    lo = mid;
                    flo = f;
                    if side == 1 {
                        fhi *= 0.5;
                    }
                    side = 1;
                } else {
                    hi = mid;
                    fhi = f;
                    y_hit = y;
                    if side == -1 {
                        flo *= 0.5;
                    }
                    side = -1;
                }
            }
            let t_jump = t_prev + hi;
            if norm_sqr(&y_hit) == 0.0 {
                return Err(Error::NormUnderflow { t: t_jump });
            }
            let channel = apply_jump(&jumps, &mut y_hit, rng.random::<f64>())?;
            if jump_log.last().is_some_and(|j: &JumpEvent| j.time >= t_jump) {
                return Err(Error::InvalidState(format!("jump times not increasing at t = {t_jump}")));
            }
            jump_log.push(JumpEvent { time: t_jump, channel });
            stepper.reset(t_jump, &y_hit);
            threshold = draw(&mut rng);
        }
        if is_output {
            record(stepper.y(), &mut values, &mut states)?;
        }
    }

    let mut series = TimeSeries::new(tgrid.to_vec())?;
    for (op, vals) in observables.iter().zip(values) {
        series.push_column(op.label(), vals, None)?;
    }
    series.set_meta("seed", seed);
    series.set_meta("jumps", jump_log.len());
    let final_state = PureState::new(space.clone(), DVector::from_column_slice(stepper.y()))?;
    Ok(TrajectoryRecord { seed, jumps: jump_log, series, states, final_state })
}

/// Trajectory-averaged density matrices on a time grid.
#[derive(Clone, Debug)]
pub struct DensityMatrixSeries {
    pub times: Vec<f64>,
    pub mean: Vec<DMatrix<C64>>,
    pub std_err_re: Vec<DMatrix<f64>>,
    pub std_err_im: Vec<DMatrix<f64>>,
}

/// Mean and standard error of `samples[i][j]` over `i`, per `j`.
/// The standard error is NaN for a single sample.
fn mean_and_se<F: Fn(&C64) -> f64>(rows: &[&[C64]], f: F) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let m = rows[0].len();
    let mut mean = vec![0.0; m];
    for r in rows {
        for (acc, v) in mean.iter_mut().zip(r.iter()) {
            *acc += f(v);
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; m];
    for r in rows {
        for ((acc, v), mu) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *acc += (f(v) - mu).powi(2);
        }
    }
    let se = var.iter().map(|v| if rows.len() > 1 { (v / (n - 1.0) / n).sqrt() } else { f64::NAN }).collect();
    (mean, se)
}

fn run_many(
    sys: &LindbladSystem,
    psi0: &PureState,
    tgrid: &[f64],
    observables: &[Operator],
    n_traj: usize,
    seed_base: u64,
    opts: &TrajectoryOptions,
) -> Result<Vec<TrajectoryRecord>> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be at least 1".into()));
    }
    // Ordered collection keeps the reduction independent of scheduling.
    (0..n_traj as u64)
        .into_par_iter()
        .map(|i| run_trajectory(sys, psi0, tgrid, observables, seed_base.wrapping_add(i), opts))
        .collect()
}

/// Averages `n_traj` trajectories with seeds `seed_base + i`. Columns carry
/// the mean (real and imaginary parts averaged separately) and the standard
/// error of the real part.
pub fn ensemble_average(
    sys: &LindbladSystem,
    psi0: &PureState,
    tgrid: &[f64],
    observables: &[Operator],
    n_traj: usize,
    seed_base: u64,
    opts: &TrajectoryOptions,
) -> Result<TimeSeries> {
    let recs = run_many(sys, psi0, tgrid, observables, n_traj, seed_base, opts)?;
    let mut series = TimeSeries::new(tgrid.to_vec())?;
    for (k, op) in observables.iter().enumerate() {
        let rows: Vec<&[C64]> = recs.iter().map(|r| r.series.columns[k].values.as_slice()).collect();
        let (re, se) = mean_and_se(&rows, |v| v.re);
        let (im, _) = mean_and_se(&rows, |v| v.im);
        let vals = re.into_iter().zip(im).map(|(a, b)| C64::new(a, b)).collect();
        series.push_column(op.label(), vals, Some(se))?;
    }
    series.set_meta("n_traj", n_traj);
    series.set_meta("seed_base", seed_base);
    series.set_meta("total_jumps", recs.iter().map(|r| r.jumps.len()).sum::<usize>());
    Ok(series)
}

/// Element-wise average of `|ψ><ψ|` over trajectories at every grid time,
/// with standard errors of the real and imaginary parts.
pub fn ensemble_density(
    sys: &LindbladSystem,
    psi0: &PureState,
    tgrid: &[f64],
    n_traj: usize,
    seed_base: u64,
    opts: &TrajectoryOptions,
) -> Result<DensityMatrixSeries> {
    let opts = TrajectoryOptions { store_states: true, ..*opts };
    let recs = run_many(sys, psi0, tgrid, &[], n_traj, seed_base, &opts)?;
    let d = sys.space().total_dim();
    let nf = n_traj as f64;
    let mut out = DensityMatrixSeries { times: tgrid.to_vec(), mean: Vec::new(), std_err_re: Vec::new(), std_err_im: Vec::new() };
    for ti in 0..tgrid.len() {
        let mut sum = DMatrix::<C64>::zeros(d, d);
        let mut sq_re = DMatrix::<f64>::zeros(d, d);
        let mut sq_im = DMatrix::<f64>::zeros(d, d);
        for r in &recs {
            let v = r.states[ti].amplitudes();
            let p = v * v.adjoint();
            sq_re += p.map(|z| z.re * z.re);
            sq_im += p.map(|z| z.im * z.im);
            sum += p;
        }
        let mean = sum / C64::new(nf, 0.0);
        let se = |sq: DMatrix<f64>, m: DMatrix<f64>| {
            if n_traj < 2 {
                return DMatrix::from_element(d, d, f64::NAN);
            }
            DMatrix::from_fn(d, d, |i, j| ((sq[(i, j)] / nf - m[(i, j)].powi(2)).max(0.0) * nf / (nf - 1.0) / nf).sqrt())
        };
        out.std_err_re.push(se(sq_re, mean.map(|z| z.re)));
        out.std_err_im.push(se(sq_im, mean.map(|z| z.im)));
        out.mean.push(mean);
    }
    Ok(out)
}
