//! Explicit Runge–Kutta integrators on flat complex vectors.
//!
//! [`Dopri5`] is the Dormand–Prince 5(4) pair with first-same-as-last reuse
//! and a standard mixed absolute/relative RMS error norm. [`rk4_step`] is the
//! classical fixed-step method kept for reproducibility checks.

use crate::{Error, Result, C64};

/// Right-hand side of `dy/dt = f(t, y)`.
///
/// `seg_mid` is the midpoint of the integration segment that contains `t`;
/// piecewise-constant drives are evaluated there so that stage times landing
/// exactly on a breakpoint never pick up the next segment's value.
pub trait OdeRhs {
    fn dim(&self) -> usize;
    fn eval(&mut self, t: f64, seg_mid: f64, y: &[C64], dy: &mut [C64]);
}

/// Step-size control settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Steps smaller than `h_min_rel * max(|t|, 1)` count as underflow.
    pub h_min_rel: f64,
    /// Optional cap on the step size.
    pub h_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-10, h_min_rel: 1e-13, h_max: f64::INFINITY }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth-order weights minus the embedded fourth-order ones.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// `out = y + h * Σ a_k k_k`
fn combine(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    out.copy_from_slice(y);
    for &(a, k) in terms {
        if a == 0.0 {
            continue;
        }
        let s = h * a;
        for (o, &kv) in out.iter_mut().zip(k) {
            *o += kv * s;
        }
    }
}

/// Adaptive Dormand–Prince 5(4) stepper owning its state.
pub struct Dopri5<R: OdeRhs> {
    rhs: R,
    t: f64,
    y: Vec<C64>,
    k: [Vec<C64>; 7],
    ytmp: Vec<C64>,
    ynew: Vec<C64>,
    fsal_valid: bool,
    h: f64,
    tol: Tolerances,
    seg_mid: f64,
    stats: StepStats,
    err_accum: f64,
}

impl<R: OdeRhs> Dopri5<R> {
    pub fn new(rhs: R, t0: f64, y0: Vec<C64>, tol: Tolerances) -> Self {
        let n = rhs.dim();
        assert_eq!(y0.len(), n, "state length does not match the right-hand side");
        let k = std::array::from_fn(|_| vec![C64::new(0.0, 0.0); n]);
        Dopri5 {
            rhs,
            t: t0,
            y: y0,
            k,
            ytmp: vec![C64::new(0.0, 0.0); n],
            ynew: vec![C64::new(0.0, 0.0); n],
            fsal_valid: false,
            h: 0.0,
            tol,
            seg_mid: t0,
            stats: StepStats::default(),
            err_accum: 0.0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    pub fn rhs(&self) -> &R {
        &self.rhs
    }

    pub fn rhs_mut(&mut self) -> &mut R {
        self.fsal_valid = false;
        &mut self.rhs
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    /// Sum of accepted local error estimates, in the same units as `y`.
    pub fn error_estimate(&self) -> f64 {
        self.err_accum
    }

    /// Proposed size of the next step (0 before the first step).
    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Replace the state, e.g. after a quantum jump. Clears the FSAL cache.
    pub fn reset(&mut self, t: f64, y: &[C64]) {
        self.t = t;
        self.y.copy_from_slice(y);
        self.fsal_valid = false;
    }

    /// Rescale the state in place. Clears the FSAL cache.
    pub fn scale_state(&mut self, s: f64) {
        for v in &mut self.y {
            *v *= s;
        }
        self.fsal_valid = false;
    }

    pub fn set_segment_mid(&mut self, seg_mid: f64) {
        if seg_mid != self.seg_mid {
            self.seg_mid = seg_mid;
            self.fsal_valid = false;
        }
    }

    fn ensure_k1(&mut self) {
        if !self.fsal_valid {
            let (k1, _) = self.k.split_at_mut(1);
            self.rhs.eval(self.t, self.seg_mid, &self.y, &mut k1[0]);
            self.stats.rhs_evals += 1;
            self.fsal_valid = true;
        }
    }

    fn initial_step(&mut self) -> f64 {
        self.ensure_k1();
        let tol = self.tol;
        let sc = |v: C64| tol.atol + tol.rtol * v.norm();
        let n = self.y.len().max(1) as f64;
        let d0 = (self.y.iter().map(|&v| (v.norm() / sc(v)).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (self.y.iter().zip(&self.k[0]).map(|(&v, f)| (f.norm() / sc(v)).powi(2)).sum::<f64>() / n).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(tol.h_max);
        combine(&mut self.ytmp, &self.y, h0, &[(1.0, &self.k[0])]);
        let (head, tail) = self.k.split_at_mut(1);
        self.rhs.eval(self.t + h0, self.seg_mid, &self.ytmp, &mut tail[0]);
        self.stats.rhs_evals += 1;
        let d2 = (self
            .y
            .iter()
            .zip(head[0].iter().zip(&tail[0]))
            .map(|(&v, (a, b))| ((b - a).norm() / sc(v)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(tol.h_max)
    }

    /// Runs the six stages for step size `h`, leaving the fifth-order result
    /// in `ynew` and `k[6] = f(t + h, ynew)`.
    fn stages(&mut self, h: f64) {
        let t = self.t;
        let sm = self.seg_mid;
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let y = &self.y;
        let yt = &mut self.ytmp;
        combine(yt, y, h, &[(A21, k1)]);
        self.rhs.eval(t + C2 * h, sm, yt, k2);
        combine(yt, y, h, &[(A31, k1), (A32, k2)]);
        self.rhs.eval(t + C3 * h, sm, yt, k3);
        combine(yt, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
        self.rhs.eval(t + C4 * h, sm, yt, k4);
        combine(yt, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
        self.rhs.eval(t + C5 * h, sm, yt, k5);
        combine(yt, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
        self.rhs.eval(t + h, sm, yt, k6);
        combine(&mut self.ynew, y, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
        self.rhs.eval(t + h, sm, &self.ynew, k7);
        self.stats.rhs_evals += 6;
    }

    /// Returns (normalised RMS error, absolute Frobenius error).
    fn error_norm(&self, h: f64) -> (f64, f64) {
        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let mut acc = 0.0;
        let mut abs = 0.0;
        for i in 0..self.y.len() {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let sc = self.tol.atol + self.tol.rtol * self.y[i].norm().max(self.ynew[i].norm());
            let en = e.norm_sqr();
            acc += en / (sc * sc);
            abs += en;
        }
        ((acc / self.y.len().max(1) as f64).sqrt(), abs.sqrt())
    }

    /// Takes one accepted step, never going past `t_max`. Returns the step size used.
    pub fn step(&mut self, t_max: f64) -> Result<f64> {
        if self.h == 0.0 {
            self.h = self.initial_step();
        }
        self.ensure_k1();
        loop {
            let remaining = t_max - self.t;
            if remaining <= 0.0 {
                return Ok(0.0);
            }
            let clipped = self.h >= remaining;
            let h = if clipped { remaining } else { self.h };
            let h_min = self.tol.h_min_rel * self.t.abs().max(1.0);
            if h < h_min && !clipped {
                return Err(Error::StepUnderflow { t: self.t, h });
            }
            self.stages(h);
            let (err, abs_err) = self.error_norm(h);
            if !err.is_finite() {
                self.stats.rejected += 1;
                self.h = h * 0.2;
                continue;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                self.stats.accepted += 1;
                self.err_accum += abs_err;
                self.t = if clipped { t_max } else { self.t + h };
                std::mem::swap(&mut self.y, &mut self.ynew);
                self.k.swap(0, 6);
                // A clipped step says nothing about the natural step size.
                let proposal = (h * fac).min(self.tol.h_max);
                if !clipped || proposal > self.h {
                    self.h = proposal;
                }
                return Ok(h);
            }
            self.stats.rejected += 1;
            self.h = h * fac.min(1.0);
        }
    }

    /// Integrate up to exactly `t_target`.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        while self.t < t_target {
            self.step(t_target)?;
        }
        Ok(())
    }

    /// Fifth-order solution at `t + h` from the current state, without
    /// touching the stepper. `h` should not exceed the last accepted step.
    pub fn probe(&mut self, h: f64) -> Vec<C64> {
        self.ensure_k1();
        self.stages(h);
        // stages overwrote k[6] only; FSAL k[0] is still valid for (t, y).
        self.ynew.clone()
    }
}

/// One classical RK4 step of size `h`.
pub fn rk4_step<R: OdeRhs>(rhs: &mut R, t: f64, seg_mid: f64, y: &mut [C64], h: f64) {
    let n = y.len();
    let z = C64::new(0.0, 0.0);
    let mut k1 = vec![z; n];
    let mut k2 = vec![z; n];
    let mut k3 = vec![z; n];
    let mut k4 = vec![z; n];
    let mut tmp = vec![z; n];
    rhs.eval(t, seg_mid, y, &mut k1);
    combine(&mut tmp, y, h, &[(0.5, &k1)]);
    rhs.eval(t + 0.5 * h, seg_mid, &tmp, &mut k2);
    combine(&mut tmp, y, h, &[(0.5, &k2)]);
    rhs.eval(t + 0.5 * h, seg_mid, &tmp, &mut k3);
    combine(&mut tmp, y, h, &[(1.0, &k3)]);
    rhs.eval(t + h, seg_mid, &tmp, &mut k4);
    for i in 0..n {
        y[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// dy/dt = λ y with complex λ.
    struct Linear(C64);

    impl OdeRhs for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&mut self, _t: f64, _m: f64, y: &[C64], dy: &mut [C64]) {
            dy[0] = self.0 * y[0];
        }
    }

    /// dy/dt = cos(t), exercising explicit time dependence.
    struct Forced;

    impl OdeRhs for Forced {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&mut self, t: f64, _m: f64, _y: &[C64], dy: &mut [C64]) {
            dy[0] = C64::new(t.cos(), 0.0);
        }
    }

    #[test]
    fn exponential_to_tolerance() {
        let lam = C64::new(-0.5, 3.0);
        let mut s = Dopri5::new(Linear(lam), 0.0, vec![C64::new(1.0, 0.0)], Tolerances::default());
        s.advance_to(4.0).unwrap();
        let exact = (lam * 4.0).exp();
        assert!((s.y()[0] - exact).norm() < 1e-7);
        assert_eq!(s.t(), 4.0);
        assert!(s.stats().accepted > 5);
    }

    #[test]
    fn explicit_time_dependence() {
        let mut s = Dopri5::new(Forced, 0.0, vec![C64::new(0.0, 0.0)], Tolerances::default());
        s.advance_to(2.5).unwrap();
        assert!((s.y()[0].re - 2.5f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn probe_matches_short_step() {
        let lam = C64::new(-1.0, 0.0);
        let mut s = Dopri5::new(Linear(lam), 0.0, vec![C64::new(1.0, 0.0)], Tolerances::default());
        s.step(10.0).unwrap();
        let t0 = s.t();
        let y = s.probe(0.01);
        assert!((y[0] - (-(t0 + 0.01)).exp()).norm() < 1e-9);
        assert_eq!(s.t(), t0);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let lam = C64::new(-1.0, 2.0);
        let err = |n: usize| {
            let mut y = vec![C64::new(1.0, 0.0)];
            let h = 1.0 / n as f64;
            let mut r = Linear(lam);
            for i in 0..n {
                rk4_step(&mut r, i as f64 * h, 0.0, &mut y, h);
            }
            (y[0] - lam.exp()).norm()
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let lam = C64::new(-0.1, 5.0);
        let run = |rtol: f64| {
            let tol = Tolerances { rtol, atol: rtol * 1e-2, ..Tolerances::default() };
            let mut s = Dopri5::new(Linear(lam), 0.0, vec![C64::new(1.0, 0.0)], tol);
            s.advance_to(10.0).unwrap();
            (s.y()[0] - (lam * 10.0).exp()).norm()
        };
        assert!(run(1e-10) < run(1e-6));
    }
}
