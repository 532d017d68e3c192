//! Low-frequency dephasing noise as a sum of random telegraph processes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::envelope_crossing;
use crate::dynamics::{evolve_full, validate_grid, DriveTerm, EvolveOptions, LindbladSystem, PiecewiseConstant, TimeSeries};
use crate::hilbert::{DensityMatrix, Operator};
use crate::{Error, Result, C64};

/// Minimum ensemble size for Ramsey calibration and noisy ensembles.
pub const MIN_NOISE_REALIZATIONS: usize = 400;

/// Samples per period of the fastest telegraph corner.
const STEPS_PER_FMAX_PERIOD: f64 = 20.0;

/// `1/f^α` noise between `f_min` and `f_max` with RMS `amplitude`
/// (energy units), built from `per_decade` telegraph processes per decade.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumParams {
    pub alpha: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub amplitude: f64,
    pub per_decade: usize,
    /// Share of the variance carried by one extra telegraph process at
    /// `telegraph_rate`; 0 gives pure `1/f^α`.
    pub telegraph_fraction: f64,
    pub telegraph_rate: f64,
}

impl SpectrumParams {
    pub fn new(alpha: f64, f_min: f64, f_max: f64, amplitude: f64) -> Result<Self> {
        let p = SpectrumParams { alpha, f_min, f_max, amplitude, per_decade: 3, telegraph_fraction: 0.0, telegraph_rate: f_min };
        p.validate()?;
        Ok(p)
    }

    /// Band derived from an output grid: `f_min = 1/(10 T)` and `f_max` at
    /// the grid's Nyquist frequency.
    pub fn for_grid(alpha: f64, amplitude: f64, tgrid: &[f64]) -> Result<Self> {
        validate_grid(tgrid)?;
        if tgrid.len() < 2 {
            return Err(Error::InvalidParameter("noise band needs a grid with at least two points".into()));
        }
        let span = tgrid[tgrid.len() - 1] - tgrid[0];
        let dt = tgrid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        Self::new(alpha, 1.0 / (10.0 * span), 0.5 / dt, amplitude)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_max > self.f_min && self.f_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise band [{}, {}] must satisfy 0 < f_min < f_max", self.f_min, self.f_max)));
        }
        if !(0.5..=1.5).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("spectral exponent {} outside [0.5, 1.5]", self.alpha)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise amplitude {} must be finite and >= 0", self.amplitude)));
        }
        if self.per_decade == 0 {
            return Err(Error::InvalidParameter("need at least one telegraph process per decade".into()));
        }
        if !(0.0..=1.0).contains(&self.telegraph_fraction) || !(self.telegraph_rate > 0.0) {
            return Err(Error::InvalidParameter("telegraph mixture needs fraction in [0, 1] and a positive rate".into()));
        }
        Ok(())
    }

    /// Corner frequencies and RMS weights of the component processes,
    /// normalised so the summed variance is 1.
    pub fn components(&self) -> Vec<(f64, f64)> {
        let decades = (self.f_max / self.f_min).log10();
        let n = ((decades * self.per_decade as f64).round() as usize).max(1) + 1;
        let mut comps: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let f = self.f_min * (self.f_max / self.f_min).powf(k as f64 / (n - 1) as f64);
                // Log-spaced Lorentzians with variance ∝ f^{1-α} sum to 1/f^α.
                (f, f.powf(1.0 - self.alpha))
            })
            .collect();
        let total: f64 = comps.iter().map(|c| c.1).sum();
        let share = 1.0 - self.telegraph_fraction;
        for c in &mut comps {
            c.1 = (share * c.1 / total).sqrt();
        }
        if self.telegraph_fraction > 0.0 {
            comps.push((self.telegraph_rate, self.telegraph_fraction.sqrt()));
        }
        comps
    }

    /// Uniform sampling step that resolves the fastest component.
    pub fn sample_step(&self) -> f64 {
        1.0 / (STEPS_PER_FMAX_PERIOD * self.f_max.max(self.telegraph_rate))
    }
}

/// Piecewise-constant dephasing signals, one per channel, on a fine grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    /// Start times of the constant pieces.
    pub times: Vec<f64>,
    /// `h_values[channel][i]` holds on `[times[i], times[i+1])`.
    pub h_values: Vec<Vec<f64>>,
    pub seed: u64,
    pub spectrum: SpectrumParams,
}

impl NoiseRealization {
    pub fn coefficient(&self, channel: usize) -> Result<PiecewiseConstant> {
        let v = self
            .h_values
            .get(channel)
            .ok_or_else(|| Error::InvalidParameter(format!("noise channel {channel} out of range")))?;
        PiecewiseConstant::new(self.times.clone(), v.clone())
    }
}

/// Fine grid covering `[t0, t1]` with step at most `dt_max`; returns the
/// start times and the step.
fn fine_grid(t0: f64, t1: f64, dt_max: f64) -> (Vec<f64>, f64) {
    let n = ((t1 - t0) / dt_max).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / n as f64;
    ((0..n).map(|i| t0 + i as f64 * dt).collect(), dt)
}

/// One stationary telegraph sum of unit variance sampled every `dt`.
fn telegraph_sum(comps: &[(f64, f64)], n: usize, dt: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for &(f, w) in comps {
        // Flip rate λ = π f puts the Lorentzian corner at f.
        let lambda = std::f64::consts::PI * f;
        let p_flip = 0.5 * (1.0 - (-2.0 * lambda * dt).exp());
        let mut s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for v in out.iter_mut() {
            *v += w * s;
            if rng.random::<f64>() < p_flip {
                s = -s;
            }
        }
    }
    out
}

/// Independent noise signals for `n_channels` qubits over the span of
/// `tgrid`. Reproducible bit-for-bit from `(params, tgrid, seed)`.
pub fn sample_low_freq_noise(params: &SpectrumParams, tgrid: &[f64], n_channels: usize, seed: u64) -> Result<NoiseRealization> {
    params.validate()?;
    validate_grid(tgrid)?;
    let t1 = *tgrid.last().unwrap();
    let t1 = if t1 > tgrid[0] { t1 } else { tgrid[0] + params.sample_step() };
    let (times, dt) = fine_grid(tgrid[0], t1, params.sample_step());
    let comps = params.components();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_values = (0..n_channels)
        .map(|_| {
            let mut h = telegraph_sum(&comps, times.len(), dt, &mut rng);
            h.iter_mut().for_each(|v| *v *= params.amplitude);
            h
        })
        .collect();
    Ok(NoiseRealization { times, h_values, seed, spectrum: *params })
}

/// Single-qubit free-induction decay under `h(t) σz/2` dephasing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamseyParams {
    pub spectrum: SpectrumParams,
    /// Energy relaxation time; the envelope gains a factor `e^{-t/(2 T1)}`.
    pub t1: Option<f64>,
    pub t_max: f64,
    pub n_times: usize,
    pub n_realizations: usize,
    pub seed: u64,
}

impl RamseyParams {
    /// Defaults sized for a decay near `t_scale`: window `3 t_scale`, 301
    /// output times, 400 realizations, band from the output grid.
    pub fn for_scale(t_scale: f64, alpha: f64, amplitude: f64, seed: u64) -> Result<Self> {
        if !(t_scale > 0.0 && t_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("time scale {t_scale} must be positive")));
        }
        let t_max = 3.0 * t_scale;
        let n_times = 301;
        let grid = crate::dynamics::linspace(0.0, t_max, n_times);
        Ok(RamseyParams {
            spectrum: SpectrumParams::for_grid(alpha, amplitude, &grid)?,
            t1: None,
            t_max,
            n_times,
            n_realizations: MIN_NOISE_REALIZATIONS,
            seed,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        crate::dynamics::linspace(0.0, self.t_max, self.n_times)
    }

    fn validate(&self) -> Result<()> {
        self.spectrum.validate()?;
        if !(self.t_max > 0.0) || self.n_times < 2 || self.n_realizations == 0 {
            return Err(Error::InvalidParameter("Ramsey run needs t_max > 0, two times and one realization".into()));
        }
        if self.t1.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::InvalidParameter("T1 must be positive".into()));
        }
        Ok(())
    }
}

/// Accumulated phase at unit amplitude, per realization and output time.
/// The phase is linear in the amplitude, so envelopes at any amplitude reuse it.
fn unit_phases(p: &RamseyParams) -> Result<Vec<Vec<f64>>> {
    p.validate()?;
    let times = p.times();
    let unit = SpectrumParams { amplitude: 1.0, ..p.spectrum };
    (0..p.n_realizations as u64)
        .into_par_iter()
        .map(|i| {
            let real = sample_low_freq_noise(&unit, &times, 1, p.seed.wrapping_add(i))?;
            let h = &real.h_values[0];
            let dt = real.times.get(1).map_or(p.t_max, |t1| t1 - real.times[0]);
            let mut out = Vec::with_capacity(times.len());
            let mut phase = 0.0;
            let mut k = 0;
            for &t in &times {
                while k < h.len() && real.times[k] + dt <= t + 1e-12 * p.t_max {
                    phase += h[k] * dt;
                    k += 1;
                }
                // Partial piece up to t.
                let partial = if k < h.len() { (t - real.times[k]).max(0.0) * h[k] } else { 0.0 };
                out.push(phase + partial);
            }
            Ok(out)
        })
        .collect()
}

fn envelope_from_phases(phases: &[Vec<f64>], times: &[f64], amplitude: f64, t1: Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = phases.len() as f64;
    let mut mean = vec![0.0; times.len()];
    let mut sq = vec![0.0; times.len()];
    for ph in phases {
        for (j, &p) in ph.iter().enumerate() {
            let c = (amplitude * p).cos();
            mean[j] += c;
            sq[j] += c * c;
        }
    }
    let mut se = vec![f64::NAN; times.len()];
    for j in 0..times.len() {
        mean[j] /= n;
        if phases.len() > 1 {
            se[j] = ((sq[j] / n - mean[j] * mean[j]).max(0.0) / (n - 1.0)).sqrt();
        }
        if let Some(t1) = t1 {
            let f = (-times[j] / (2.0 * t1)).exp();
            mean[j] *= f;
            se[j] *= f;
        }
    }
    (mean, se)
}

/// Ramsey contrast `<σx(t)>` averaged over noise realizations, as column
/// `contrast` with standard errors.
pub fn ramsey_envelope(p: &RamseyParams) -> Result<TimeSeries> {
    let phases = unit_phases(p)?;
    let times = p.times();
    let (mean, se) = envelope_from_phases(&phases, &times, p.spectrum.amplitude, p.t1);
    let mut ts = TimeSeries::new(times)?;
    ts.push_column("contrast", mean.into_iter().map(|v| C64::new(v, 0.0)).collect(), Some(se))?;
    ts.set_meta("n_realizations", p.n_realizations);
    ts.set_meta("seed", p.seed);
    ts.set_meta("amplitude", p.spectrum.amplitude);
    Ok(ts)
}

/// Noise amplitude whose Ramsey envelope reaches `1/e` at `target_t2r`.
///
/// `qubit.spectrum.amplitude` is ignored. Realizations are shared across
/// trial amplitudes, so the search is a bisection on a monotone function.
pub fn calibrate_dephasing(target_t2r: f64, qubit: &RamseyParams) -> Result<f64> {
    if !(target_t2r > 0.0 && target_t2r.is_finite()) {
        return Err(Error::InvalidParameter(format!("target T2R {target_t2r} must be positive")));
    }
    if qubit.n_realizations < MIN_NOISE_REALIZATIONS {
        return Err(Error::InvalidParameter(format!("calibration needs at least {MIN_NOISE_REALIZATIONS} realizations")));
    }
    if qubit.t_max <= target_t2r {
        return Err(Error::InvalidParameter("Ramsey window must extend past the target T2R".into()));
    }
    let times = qubit.times();
    let phases = unit_phases(qubit)?;
    let level = (-1.0f64).exp();
    // None when the envelope stays above 1/e over the window.
    let t2 = |amp: f64| -> Option<f64> {
        let (env, _) = envelope_from_phases(&phases, &times, amp, qubit.t1);
        envelope_crossing(&times, &env, level)
    };
    let slower = |amp: f64| t2(amp).is_none_or(|t| t > target_t2r);
    if !slower(0.0) {
        return Err(Error::NonConvergence { iterations: 0, reason: "relaxation alone is faster than the target T2R".into() });
    }
    let mut hi = 1.0 / target_t2r;
    let mut lo = 0.0;
    let mut iterations = 0;
    while slower(hi) {
        lo = hi;
        hi *= 2.0;
        iterations += 1;
        if iterations > 200 {
            return Err(Error::NonConvergence { iterations, reason: "could not bracket the target T2R".into() });
        }
    }
    while hi - lo > 1e-6 * hi {
        iterations += 1;
        if iterations > 400 {
            return Err(Error::NonConvergence { iterations, reason: "bisection on the noise amplitude stalled".into() });
        }
        let mid = 0.5 * (lo + hi);
        if slower(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Mean observables over independent dephasing-noise realizations.
#[derive(Clone, Debug)]
pub struct NoisyEnsemble {
    pub series: TimeSeries,
    pub n_realizations: usize,
    pub min_eigenvalue: f64,
    pub max_trace_drift: f64,
    pub max_hermiticity_drift: f64,
}

/// Lindblad evolution with `h_k(t) O_k` added for each noise operator,
/// one independent signal per operator and realization (seed `seed_base + i`).
#[allow(clippy::too_many_arguments)]
pub fn noisy_ensemble(
    sys: &LindbladSystem,
    rho0: &DensityMatrix,
    tgrid: &[f64],
    observables: &[Operator],
    noise_ops: &[Operator],
    spectrum: &SpectrumParams,
    n_realizations: usize,
    seed_base: u64,
    opts: &EvolveOptions,
) -> Result<NoisyEnsemble> {
    if n_realizations == 0 {
        return Err(Error::InvalidParameter("need at least one noise realization".into()));
    }
    for op in noise_ops {
        if !op.is_hermitian(1e-12) {
            return Err(Error::NonHermitian { deviation: op.hermitian_deviation() });
        }
    }
    let runs: Vec<_> = (0..n_realizations as u64)
        .into_par_iter()
        .map(|i| {
            let noise = sample_low_freq_noise(spectrum, tgrid, noise_ops.len(), seed_base.wrapping_add(i))?;
            let terms = noise_ops
                .iter()
                .enumerate()
                .map(|(k, op)| Ok(DriveTerm { op: op.clone(), coefficient: Arc::new(noise.coefficient(k)?) }))
                .collect::<Result<Vec<_>>>()?;
            evolve_full(&sys.with_drives(terms)?, rho0, tgrid, observables, opts)
        })
        .collect::<Result<_>>()?;
    let n = n_realizations as f64;
    let mut series = TimeSeries::new(tgrid.to_vec())?;
    for (k, op) in observables.iter().enumerate() {
        let mut mean = vec![C64::new(0.0, 0.0); tgrid.len()];
        let mut sq = vec![0.0; tgrid.len()];
        for r in &runs {
            for (j, v) in r.series.columns[k].values.iter().enumerate() {
                mean[j] += v;
                sq[j] += v.re * v.re;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let se = mean
            .iter()
            .zip(&sq)
            .map(|(m, s)| if n_realizations > 1 { ((s / n - m.re * m.re).max(0.0) / (n - 1.0)).sqrt() } else { f64::NAN })
            .collect();
        series.push_column(op.label(), mean, Some(se))?;
    }
    let fold = |f: fn(&crate::dynamics::Diagnostics) -> f64, min: bool| {
        runs.iter().map(|r| f(&r.diagnostics)).fold(if min { f64::INFINITY } else { 0.0 }, |a, b| if min { a.min(b) } else { a.max(b) })
    };
    let out = NoisyEnsemble {
        n_realizations,
        min_eigenvalue: fold(|d| d.min_eigenvalue, true),
        max_trace_drift: fold(|d| d.max_trace_drift, false),
        max_hermiticity_drift: fold(|d| d.max_hermiticity_drift, false),
        series,
    };
    let mut series = out.series;
    series.set_meta("n_realizations", n_realizations);
    series.set_meta("seed_base", seed_base);
    series.set_meta("noise_f_min", spectrum.f_min);
    series.set_meta("noise_f_max", spectrum.f_max);
    series.set_meta("noise_amplitude", spectrum.amplitude);
    series.set_meta("min_eigenvalue", out.min_eigenvalue);
    Ok(NoisyEnsemble { series, ..out })
}
