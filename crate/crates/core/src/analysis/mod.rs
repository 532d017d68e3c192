//! Post-processing: decay fits, fidelities, error-correction condition
//! reports, Ramsey times and statistical checks.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::TimeSeries;
use crate::hilbert::{DensityMatrix, Operator, PureState};
use crate::models::ModelBundle;
use crate::trajectories::{ramsey_envelope, RamseyParams};
use crate::{Error, Result, C64};

/// Fewest samples accepted by [`fit_decay`].
pub const MIN_FIT_POINTS: usize = 10;

/// Samples per decade in the initial rate scan.
const SCAN_PER_DECADE: usize = 20;

/// Time range used for a fit; `None` ends default to the series ends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub start: Option<f64>,
    pub end: Option<f64>,
}

impl FitWindow {
    pub fn new(start: f64, end: f64) -> Self {
        FitWindow { start: Some(start), end: Some(end) }
    }

    /// Starts after the repair transient, at `max(5/ΓR, 3/Ω)`.
    pub fn after_transient(gamma_r: f64, omega: f64) -> Self {
        FitWindow { start: Some(transient_end(gamma_r, omega)), end: None }
    }
}

/// `max(5/ΓR, 3/Ω)`; infinite rates or couplings contribute nothing.
pub fn transient_end(gamma_r: f64, omega: f64) -> f64 {
    let part = |x: f64, k: f64| if x > 0.0 && x.is_finite() { k / x } else { 0.0 };
    part(gamma_r, 5.0).max(part(omega.abs(), 3.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Offset {
    Free,
    Fixed(f64),
}

/// Least-squares fit of `A e^{-Γ (t - t_start)} + C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    /// Amplitude at `t_start`.
    pub amplitude: f64,
    pub offset: f64,
    pub offset_fixed: bool,
    pub fit_window: (f64, f64),
    pub n_points: usize,
    pub residual_rms: f64,
    /// 95% half-width on the rate (profile likelihood, symmetrised).
    pub rate_half_width: f64,
    /// False when the data move against the fitted trend by more than the noise.
    pub monotone: bool,
}

impl DecayFit {
    pub fn lifetime(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn to_map(&self, prefix: &str) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert(format!("{prefix}rate"), self.rate);
        m.insert(format!("{prefix}rate_half_width"), self.rate_half_width);
        m.insert(format!("{prefix}amplitude"), self.amplitude);
        m.insert(format!("{prefix}offset"), self.offset);
        m.insert(format!("{prefix}window_start"), self.fit_window.0);
        m.insert(format!("{prefix}window_end"), self.fit_window.1);
        m.insert(format!("{prefix}residual_rms"), self.residual_rms);
        m.insert(format!("{prefix}monotone"), if self.monotone { 1.0 } else { 0.0 });
        m
    }
}

struct LinearPart {
    amp: f64,
    off: f64,
    ssr: f64,
}

/// Best amplitude and offset for a fixed rate.
fn project(t: &[f64], y: &[f64], t0: f64, rate: f64, offset: Offset) -> LinearPart {
    let e: Vec<f64> = t.iter().map(|&ti| (-rate * (ti - t0)).exp()).collect();
    let (amp, off) = match offset {
        Offset::Fixed(c) => {
            let num: f64 = e.iter().zip(y).map(|(a, b)| a * (b - c)).sum();
            let den: f64 = e.iter().map(|a| a * a).sum();
            (if den > 0.0 { num / den } else { 0.0 }, c)
        }
        Offset::Free => {
            let n = t.len() as f64;
            let (se, see) = (e.iter().sum::<f64>(), e.iter().map(|a| a * a).sum::<f64>());
            let (sy, sey) = (y.iter().sum::<f64>(), e.iter().zip(y).map(|(a, b)| a * b).sum::<f64>());
            let det = see * n - se * se;
            if det.abs() <= 1e-14 * see * n {
                (0.0, sy / n)
            } else {
                ((sey * n - se * sy) / det, (see * sy - se * sey) / det)
            }
        }
    };
    let ssr = e.iter().zip(y).map(|(a, b)| (amp * a + off - b).powi(2)).sum();
    LinearPart { amp, off, ssr }
}

/// Fits a single exponential to the real part of `observable` inside `window`.
pub fn fit_decay(series: &TimeSeries, observable: &str, window: FitWindow, offset: Offset) -> Result<DecayFit> {
    let values = series.real(observable)?;
    let (ts, te) = (
        window.start.unwrap_or(series.times[0]),
        window.end.unwrap_or(*series.times.last().unwrap()),
    );
    let sel: Vec<usize> = (0..series.times.len()).filter(|&i| series.times[i] >= ts && series.times[i] <= te).collect();
    if sel.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!("window [{ts}, {te}] holds {} points, need {MIN_FIT_POINTS}", sel.len())));
    }
    let t: Vec<f64> = sel.iter().map(|&i| series.times[i]).collect();
    let y: Vec<f64> = sel.iter().map(|&i| values[i]).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite samples in the fit window".into()));
    }
    let t0 = t[0];
    let span = t[t.len() - 1] - t0;
    let dt_min = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);

    // Coarse scan in log-rate, then golden section on the bracketing cell.
    let (lo, hi) = ((1e-6 / span).ln(), (100.0 / dt_min).ln());
    let n_scan = (((hi - lo) / std::f64::consts::LN_10) * SCAN_PER_DECADE as f64).ceil() as usize + 1;
    let grid: Vec<f64> = (0..n_scan).map(|k| lo + (hi - lo) * k as f64 / (n_scan - 1) as f64).collect();
    let ssr = |lr: f64| project(&t, &y, t0, lr.exp(), offset).ssr;
    let scan: Vec<f64> = grid.iter().map(|&g| ssr(g)).collect();
    let best = (0..n_scan).min_by(|&a, &b| scan[a].total_cmp(&scan[b])).unwrap();
    if best == 0 || best == n_scan - 1 {
        return Err(Error::NonConvergence {
            iterations: n_scan,
            reason: format!("best rate at the edge of the scanned range [{:.3e}, {:.3e}]", lo.exp(), hi.exp()),
        });
    }
    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (ssr(x1), ssr(x2));
    for _ in 0..200 {
        if b - a < 1e-13 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = ssr(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = ssr(x2);
        }
    }
    let mut rate = (0.5 * (a + b)).exp();
    let mut lin = project(&t, &y, t0, rate, offset);

    // Gauss–Newton polish on the full model.
    let free = matches!(offset, Offset::Free);
    for _ in 0..5 {
        let (jtj, jtr) = normal_equations(&t, &y, t0, lin.amp, rate, lin.off, free);
        let Some(step) = jtj.try_inverse().map(|inv| inv * jtr) else { break };
        let trial_rate = rate + step[1];
        if !(trial_rate > 0.0) {
            break;
        }
        let trial = project(&t, &y, t0, trial_rate, offset);
        if trial.ssr <= lin.ssr {
            rate = trial_rate;
            lin = trial;
        } else {
            break;
        }
    }
    if !rate.is_finite() {
        return Err(Error::NonConvergence { iterations: 0, reason: "rate is not finite".into() });
    }

    let n_par = if free { 3 } else { 2 };
    let dof = sel.len().saturating_sub(n_par).max(1);
    let s2 = lin.ssr / dof as f64;
    let (jtj, _) = normal_equations(&t, &y, t0, lin.amp, rate, lin.off, free);
    let var_rate = jtj.try_inverse().map_or(f64::INFINITY, |inv| inv[(1, 1)] * s2);
    let tq = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::Fit(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    let residual_rms = (lin.ssr / sel.len() as f64).sqrt();
    let wald = tq * var_rate.max(0.0).sqrt();
    let rate_half_width = profile_half_width(&t, &y, t0, rate, lin.ssr, offset, tq * tq / dof as f64, wald);

    // Trend sign of A e^{-Γt} is -sign(A).
    let trend = -lin.amp.signum();
    let noise = residual_rms.max(1e-12 * y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let monotone = y.windows(2).all(|w| (w[1] - w[0]) * trend >= -3.0 * noise);

    Ok(DecayFit {
        rate,
        amplitude: lin.amp,
        offset: lin.off,
        offset_fixed: !free,
        fit_window: (t0, t[t.len() - 1]),
        n_points: sel.len(),
        residual_rms,
        rate_half_width,
        monotone,
    })
}

/// Symmetric half-width from the profile-likelihood interval
/// `{Γ : SSR(Γ) <= SSR_min (1 + F/dof)}`, taking the wider side. Falls back
/// to the Wald half-width when the profile does not close.
#[allow(clippy::too_many_arguments)]
fn profile_half_width(t: &[f64], y: &[f64], t0: f64, rate: f64, ssr_min: f64, offset: Offset, rel: f64, wald: f64) -> f64 {
    if ssr_min == 0.0 || !(wald > 0.0 && wald.is_finite()) {
        return if wald.is_finite() { wald } else { f64::INFINITY };
    }
    let level = ssr_min * (1.0 + rel);
    let excess = |g: f64| project(t, y, t0, g, offset).ssr - level;
    let side = |dir: f64| -> Option<f64> {
        let mut w = wald;
        let mut inner = rate;
        for _ in 0..60 {
            let g = rate + dir * w;
            if g <= 0.0 {
                return None;
            }
            if excess(g) > 0.0 {
                let (mut a, mut b) = (inner, g);
                for _ in 0..80 {
                    let m = 0.5 * (a + b);
                    if excess(m) > 0.0 {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                return Some((0.5 * (a + b) - rate).abs());
            }
            inner = g;
            w *= 2.0;
        }
        None
    };
    match (side(-1.0), side(1.0)) {
        (Some(a), Some(b)) => a.max(b),
        (None, Some(b)) => b.max(wald),
        (Some(a), None) => a.max(wald),
        (None, None) => wald,
    }
}

/// `JᵀJ` and `Jᵀr` for parameters `(A, Γ, C)`; the `C` row is decoupled
/// (identity) when the offset is fixed.
fn normal_equations(t: &[f64], y: &[f64], t0: f64, amp: f64, rate: f64, off: f64, free: bool) -> (Matrix3<f64>, Vector3<f64>) {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (&ti, &yi) in t.iter().zip(y) {
        let e = (-rate * (ti - t0)).exp();
        let j = Vector3::new(e, -amp * (ti - t0) * e, if free { 1.0 } else { 0.0 });
        let r = yi - (amp * e + off);
        jtj += j * j.transpose();
        jtr += j * r;
    }
    if !free {
        jtj[(2, 2)] = 1.0;
    }
    (jtj, jtr)
}

/// Lifetime fit plus its sensitivity to the window start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeReport {
    pub fit: DecayFit,
    /// `(window start, fitted rate)` for half and double the nominal start.
    pub window_sensitivity: Vec<(f64, f64)>,
    /// Largest relative deviation of the alternative-window rates.
    pub relative_spread: f64,
}

/// Logical lifetime from the decay of `observable`: nominal fit on `window`,
/// refitted with the start moved to half and twice its value.
pub fn logical_lifetime(series: &TimeSeries, observable: &str, window: FitWindow, offset: Offset) -> Result<LifetimeReport> {
    let fit = fit_decay(series, observable, window, offset)?;
    let t_first = series.times[0];
    let start = fit.fit_window.0;
    let mut window_sensitivity = Vec::new();
    let mut spread = 0.0f64;
    for k in [0.5, 2.0] {
        let s = t_first + (start - t_first) * k;
        if s == start {
            continue;
        }
        if let Ok(alt) = fit_decay(series, observable, FitWindow { start: Some(s), ..window }, offset) {
            spread = spread.max((alt.rate / fit.rate - 1.0).abs());
            window_sensitivity.push((s, alt.rate));
        }
    }
    Ok(LifetimeReport { fit, window_sensitivity, relative_spread: spread })
}

/// `<target|ρ|target>`.
pub fn fidelity(rho: &DensityMatrix, target: &PureState) -> Result<f64> {
    rho.population(target)
}

/// Error-correction conditions for one error operator `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResidual {
    pub label: String,
    /// `|<0_L|a†a|0_L> - <1_L|a†a|1_L>|`.
    pub diagonal: f64,
    /// `|<1_L|a†a|0_L>|`.
    pub off_diagonal: f64,
    /// `|<0_L|a|0_L> - <1_L|a|1_L>| + |<1_L|a|0_L>| + |<0_L|a|1_L>|`: nonzero
    /// when part of `a` acts within the code space instead of leaving it.
    pub in_code_action: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QecReport {
    pub modes: Vec<ModeResidual>,
    /// `|<0_L|H|0_L> - <1_L|H|1_L>| + |<1_L|H|0_L>|` for the primary
    /// Hamiltonian, when the bundle has one.
    pub logical_splitting: Option<f64>,
    pub max_diagonal: f64,
    pub max_off_diagonal: f64,
    pub warnings: Vec<String>,
}

/// Residuals below this are reported as satisfied.
pub const QEC_TOL: f64 = 1e-12;

fn sandwich(a: &PureState, op: &Operator, b: &PureState) -> Result<C64> {
    let v = op.apply(b)?;
    Ok(a.amplitudes().dotc(&v))
}

/// Checks `<0_L|a†a|0_L> = <1_L|a†a|1_L>` and `<1_L|a†a|0_L> = 0` for every
/// error operator, plus degeneracy of the logical pair under `H_P` (or the
/// full Hamiltonian when no primary part is labelled).
pub fn qec_condition_check(bundle: &ModelBundle, error_ops: &[Operator]) -> Result<QecReport> {
    let l0 = bundle.state("logical_0")?;
    let l1 = bundle.state("logical_1")?;
    let mut modes = Vec::new();
    let mut warnings = Vec::new();
    for a in error_ops {
        let ada = &a.dagger() * a;
        let d = (sandwich(l0, &ada, l0)? - sandwich(l1, &ada, l1)?).norm();
        let o = sandwich(l1, &ada, l0)?.norm();
        let lin = (sandwich(l0, a, l0)? - sandwich(l1, a, l1)?).norm()
            + sandwich(l1, a, l0)?.norm()
            + sandwich(l0, a, l1)?.norm();
        if lin > QEC_TOL {
            warnings.push(format!(
                "`{}` acts inside the code space (residual {lin:.3e}); its in-code component dephases the logical qubit",
                a.label()
            ));
        }
        modes.push(ModeResidual { label: a.label().to_string(), diagonal: d, off_diagonal: o, in_code_action: lin });
    }
    let h = match bundle.ops.get("H_P") {
        Some(h) => Some(h),
        None => bundle.system.as_ref().map(|s| s.hamiltonian().base()),
    };
    let logical_splitting = match h {
        Some(h) => Some((sandwich(l0, h, l0)? - sandwich(l1, h, l1)?).norm() + sandwich(l1, h, l0)?.norm()),
        None => None,
    };
    let max_diagonal = modes.iter().map(|m| m.diagonal).fold(0.0, f64::max);
    let max_off_diagonal = modes.iter().map(|m| m.off_diagonal).fold(0.0, f64::max);
    Ok(QecReport { modes, logical_splitting, max_diagonal, max_off_diagonal, warnings })
}

/// First time `values` falls to `level`, linearly interpolated.
pub fn envelope_crossing(times: &[f64], values: &[f64], level: f64) -> Option<f64> {
    if values.first().is_some_and(|&v| v <= level) {
        return times.first().copied();
    }
    for i in 1..values.len().min(times.len()) {
        if values[i] <= level {
            let (v0, v1) = (values[i - 1], values[i]);
            let f = if v0 == v1 { 1.0 } else { (v0 - level) / (v0 - v1) };
            return Some(times[i - 1] + f * (times[i] - times[i - 1]));
        }
    }
    None
}

/// Ramsey `T2R`: `1/e` point of the realization-averaged contrast.
pub fn ramsey_t2(params: &RamseyParams) -> Result<f64> {
    let env = ramsey_envelope(params)?;
    envelope_crossing(&env.times, &env.real("contrast")?, (-1.0f64).exp())
        .ok_or_else(|| Error::Fit(format!("Ramsey contrast stays above 1/e up to t = {}", params.t_max)))
}

/// One-sample Kolmogorov–Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Asymptotic Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS test of `samples` against `Exp(rate)`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> Result<KsResult> {
    if samples.is_empty() || !(rate > 0.0) {
        return Err(Error::InvalidParameter("KS test needs samples and a positive rate".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let f = 1.0 - (-rate * v.max(0.0)).exp();
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    });
    let sn = n.sqrt();
    Ok(KsResult { statistic: d, p_value: kolmogorov_q((sn + 0.12 + 0.11 / sn) * d), n: x.len() })
}

/// Periodogram slope of an ensemble of equally sampled real signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub slope: f64,
    pub intercept: f64,
    /// Log-binned `(frequency, power)` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
}

/// Averages Hann-windowed periodograms over `signals` (sample step `dt`) and
/// fits `log10 S = slope · log10 f + c` over `[f_lo, f_hi]` on logarithmic bins.
pub fn spectral_slope(signals: &[Vec<f64>], dt: f64, f_lo: f64, f_hi: f64) -> Result<SpectrumFit> {
    let n = signals.first().map_or(0, Vec::len);
    if n < 16 || signals.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidParameter("need equally long signals of at least 16 samples".into()));
    }
    if !(f_lo > 0.0 && f_hi > f_lo && dt > 0.0) {
        return Err(Error::InvalidParameter("invalid frequency band".into()));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
    let mut power = vec![0.0; n / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for s in signals {
        let mean = s.iter().sum::<f64>() / n as f64;
        for ((b, &v), &w) in buf.iter_mut().zip(s).zip(&window) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
    }
    let df = 1.0 / (n as f64 * dt);
    let bins_per_decade = 8.0;
    let mut acc: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    for (k, &p) in power.iter().enumerate().skip(1) {
        let f = k as f64 * df;
        if f < f_lo || f > f_hi {
            continue;
        }
        let bin = (f.log10() * bins_per_decade).floor() as i64;
        let e = acc.entry(bin).or_insert((0.0, 0.0, 0));
        e.0 += f.log10();
        e.1 += p;
        e.2 += 1;
    }
    let points: Vec<(f64, f64)> = acc.values().map(|&(lf, p, c)| (10f64.powf(lf / c as f64), p / c as f64)).collect();
    if points.len() < 3 {
        return Err(Error::Fit("fewer than three frequency bins inside the band".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(SpectrumFit { slope, intercept: my - slope * mx, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::linspace;
    use crate::hilbert::HilbertSpace;
    use crate::models::{bitflip_ring, cat_states, vslq, LossChannel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr_normal::normal;

    mod rand_distr_normal {
        use rand::Rng;
        /// Box–Muller standard normal.
        pub fn normal(rng: &mut impl Rng) -> f64 {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    fn series(t: Vec<f64>, y: Vec<f64>) -> TimeSeries {
        let mut s = TimeSeries::new(t).unwrap();
        s.push_column("y", y.into_iter().map(|v| C64::new(v, 0.0)).collect(), None).unwrap();
        s
    }

    #[test]
    fn exact_exponential() {
        let t = linspace(0.0, 300.0, 61);
        let y = t.iter().map(|t| 0.8 * (-0.01 * t).exp() + 0.1).collect();
        let f = fit_decay(&series(t, y), "y", FitWindow::default(), Offset::Free).unwrap();
        assert!((f.rate - 0.01).abs() < 1e-6 * 0.01, "{}", f.rate);
        assert!((f.offset - 0.1).abs() < 1e-8);
        assert!(f.monotone);
    }

    #[test]
    fn two_rate_curve_windowed() {
        // Fast transient at 3Γ then slow decay at Γ_L.
        let (gp, gl) = (1e-2, 4e-4);
        let t = linspace(0.0, 4000.0, 401);
        let y: Vec<f64> = t.iter().map(|t| 0.95 * (-gl * t).exp() + 0.05 * (-3.0 * gp * t).exp()).collect();
        let s = series(t, y);
        let f = fit_decay(&s, "y", FitWindow { start: Some(5.0 / gp), end: None }, Offset::Fixed(0.0)).unwrap();
        assert!((f.rate / gl - 1.0).abs() < 0.05);
        let rep = logical_lifetime(&s, "y", FitWindow { start: Some(5.0 / gp), end: None }, Offset::Fixed(0.0)).unwrap();
        assert_eq!(rep.window_sensitivity.len(), 2);
    }

    #[test]
    fn too_few_points() {
        let t = linspace(0.0, 1.0, 9);
        let y = t.iter().map(|t| (-t).exp()).collect();
        assert!(matches!(fit_decay(&series(t, y), "y", FitWindow::default(), Offset::Free), Err(Error::Fit(_))));
    }

    #[test]
    fn non_monotone_is_flagged() {
        let t = linspace(0.0, 10.0, 21);
        let y = t.iter().enumerate().map(|(i, t)| (-0.3 * t).exp() + if i == 15 { 0.3 } else { 0.0 }).collect();
        let f = fit_decay(&series(t, y), "y", FitWindow::default(), Offset::Free).unwrap();
        assert!(!f.monotone);
    }

    #[test]
    fn transient_window_start() {
        assert_eq!(transient_end(0.05, 0.05), 100.0);
        assert_eq!(transient_end(1.0, 0.1), 30.0);
        assert_eq!(FitWindow::after_transient(0.05, 0.05).start, Some(100.0));
    }

    #[test]
    fn confidence_interval_coverage() {
        // Coverage of the 95% half-width over 1000 noisy seeds must be
        // binomially consistent with 0.95 (±2.2σ).
        let t = linspace(0.0, 50.0, 51);
        let n = 1000;
        let hits = (0..n)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let y = t.iter().map(|t| (-0.05 * t).exp() + 0.01 * normal(&mut rng)).collect();
                let f = fit_decay(&series(t.clone(), y), "y", FitWindow::default(), Offset::Free).unwrap();
                (f.rate - 0.05).abs() <= f.rate_half_width
            })
            .count();
        assert!((935..=965).contains(&hits), "{hits}");
    }

    #[test]
    fn fidelity_limits() {
        let sp = HilbertSpace::new(&[2, 3]).unwrap();
        let psi = PureState::basis(&sp, &[1, 2]).unwrap();
        assert!((fidelity(&psi.to_density(), &psi).unwrap() - 1.0).abs() < 1e-15);
        assert!((fidelity(&DensityMatrix::maximally_mixed(&sp), &psi).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn fidelity_is_linear_in_rho(lambda in 0.0..1.0f64, a in 0usize..4, b in 0usize..4) {
            let sp = HilbertSpace::new(&[2, 2]).unwrap();
            let r = std::f64::consts::FRAC_1_SQRT_2;
            let target = PureState::new(sp.clone(), nalgebra::DVector::from_fn(4, |i, _| if i < 2 { C64::new(r, 0.0) } else { C64::new(0.0, 0.0) })).unwrap();
            let ra = PureState::basis(&sp, &sp.levels_of(a)).unwrap().to_density();
            let rb = DensityMatrix::maximally_mixed(&sp);
            let mixed = DensityMatrix::mix(lambda, &ra, &rb).unwrap();
            let lhs = fidelity(&mixed, &target).unwrap();
            let rhs = lambda * fidelity(&ra, &target).unwrap() + (1.0 - lambda) * fidelity(&rb, &target).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-14, "{} {}", lhs, rhs);
            let _ = b;
        }
    }

    #[test]
    fn vslq_conditions_exact() {
        let b = vslq(1.0, 12.0, 0.1, 1e-3, 0.2).unwrap();
        let rep = qec_condition_check(&b, &[b.op("a_l").unwrap().clone(), b.op("a_r").unwrap().clone()]).unwrap();
        assert!(rep.max_diagonal < 1e-12 && rep.max_off_diagonal < 1e-12);
        assert!(rep.logical_splitting.unwrap() < 1e-12);
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn cat_conditions_match_closed_form() {
        // <n> on the 4n and 4n+2 cats: x (sinh x ∓ sin x) / (cosh x ± cos x), x = |α|².
        for alpha in [1.5, 2.0, 2.5] {
            let b = cat_states(C64::new(alpha, 0.0), None).unwrap();
            let rep = qec_condition_check(&b, &[b.op("a").unwrap().clone()]).unwrap();
            let x: f64 = alpha * alpha;
            let n0 = x * (x.sinh() - x.sin()) / (x.cosh() + x.cos());
            let n1 = x * (x.sinh() + x.sin()) / (x.cosh() - x.cos());
            assert!((rep.max_diagonal - (n0 - n1).abs()).abs() < 1e-8, "alpha {alpha}: {rep:?}");
            assert!(rep.max_diagonal <= 4.0 * 2f64.sqrt() * x * (-x).exp() * 1.2);
            assert_eq!(rep.max_off_diagonal, 0.0);
            assert!(rep.warnings.is_empty());
        }
    }

    #[test]
    fn bitflip_flags_in_code_action() {
        let b = bitflip_ring(1.0, 0.05, 1e-3, 0.1, LossChannel::Lowering).unwrap();
        let ops: Vec<Operator> = (1..=3).map(|i| b.op(&format!("a_P{i}")).unwrap().clone()).collect();
        let rep = qec_condition_check(&b, &ops).unwrap();
        assert!(rep.max_diagonal < 1e-12 && rep.max_off_diagonal < 1e-12);
        assert!(rep.modes.iter().all(|m| (m.in_code_action - 1.0).abs() < 1e-12));
        assert_eq!(rep.warnings.len(), 3);
        assert!(rep.logical_splitting.unwrap() < 1e-12);
    }

    #[test]
    fn envelope_crossing_interpolates() {
        assert_eq!(envelope_crossing(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.0], 0.25), Some(1.5));
        assert_eq!(envelope_crossing(&[0.0, 1.0], &[1.0, 0.9], 0.5), None);
    }

    #[test]
    fn ks_accepts_matching_and_rejects_wrong_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..2000).map(|_| -(1.0 - rand::Rng::random::<f64>(&mut rng)).ln() / 2.0).collect();
        assert!(ks_exponential(&x, 2.0).unwrap().p_value > 0.01);
        assert!(ks_exponential(&x, 3.0).unwrap().p_value < 1e-6);
    }

    #[test]
    fn white_noise_slope_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sig: Vec<Vec<f64>> = (0..50).map(|_| (0..1024).map(|_| normal(&mut rng)).collect()).collect();
        let f = spectral_slope(&sig, 1.0, 0.01, 0.4).unwrap();
        assert!(f.slope.abs() < 0.1, "{}", f.slope);
    }

    #[test]
    fn zero_noise_ramsey_never_decays() {
        let q = RamseyParams::for_scale(10.0, 1.0, 0.0, 1).unwrap();
        assert!(matches!(ramsey_t2(&q), Err(Error::Fit(_))));
    }
}
