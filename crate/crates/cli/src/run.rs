//! Task execution and output files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qratchet::analysis::{fit_decay, DecayFit, FitWindow, Offset};
use qratchet::dynamics::{evolve_full, steady_state, EvolveOptions, TimeSeries, Tolerances};
use qratchet::hilbert::{expectation, Operator};
use qratchet::models::ModelBundle;
use qratchet::trajectories::{ensemble_average, noisy_ensemble, SpectrumParams, TrajectoryOptions};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Task};
use crate::fail::Failure;
use crate::model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Run,
    Sweep,
    Rates,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Everything computed at one parameter point.
#[derive(Default)]
struct PointOutput {
    series: Option<TimeSeries>,
    steady: Vec<(String, f64)>,
    rates: Option<model::Rates>,
    fit: Option<DecayFit>,
    diagnostics: BTreeMap<String, f64>,
    model_parameters: BTreeMap<String, f64>,
}

/// Loads, validates and runs a config. Returns the files written.
pub fn execute(path: &Path, mode: Mode, ov: &Overrides) -> Result<Vec<PathBuf>, Failure> {
    let mut cfg = crate::config::load(path)?;
    apply_mode(&mut cfg, mode)?;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.output.dir = Some(o.display().to_string());
    }
    cfg.check_shape()?;
    cfg.model.params = model::resolve_params(&cfg.model.name, &cfg.model.params)?;
    let base = prepare(&cfg)?;

    let dir = PathBuf::from(cfg.output.dir.clone().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let mut manifest = json!({
        "tool": "qratchet",
        "version": qratchet::VERSION,
        "config": serde_json::to_value(&cfg).map_err(|e| Failure::Config(e.to_string()))?,
    });

    if cfg.task == Task::Sweep {
        let sweep = run_sweep(&cfg, &dir, &mut written)?;
        manifest["sweep"] = sweep;
    } else {
        let out = evaluate(&cfg, &cfg.model.params, base.as_ref())?;
        if let Some(s) = &out.series {
            let p = dir.join(format!("{}.csv", cfg.name));
            write_series(&p, s)?;
            written.push(p);
        } else if !out.steady.is_empty() {
            let p = dir.join(format!("{}.csv", cfg.name));
            write_steady(&p, &out.steady)?;
            written.push(p);
        }
        if let Some(r) = &out.rates {
            let p = dir.join(format!("{}.rates.txt", cfg.name));
            std::fs::write(&p, &r.table).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
            written.push(p);
            manifest["rates"] = json!(r.values);
        }
        if let Some(f) = &out.fit {
            manifest["fit"] = fit_json(f);
        }
        if !out.diagnostics.is_empty() {
            manifest["diagnostics"] = json!(out.diagnostics);
        }
        if !out.model_parameters.is_empty() {
            manifest["model_parameters"] = json!(out.model_parameters);
        }
        if let Some(s) = &out.series {
            manifest["series_metadata"] = json!(s.metadata);
        }
    }

    let mp = dir.join(format!("{}.manifest.json", cfg.name));
    let names: Vec<String> = written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    manifest["outputs"] = json!(names);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Io(e.to_string()))? + "\n";
    std::fs::write(&mp, text).map_err(|e| Failure::Io(format!("{}: {e}", mp.display())))?;
    written.push(mp);
    Ok(written)
}

fn apply_mode(cfg: &mut ExperimentConfig, mode: Mode) -> Result<(), Failure> {
    match mode {
        Mode::Run => {}
        Mode::Sweep => {
            if cfg.task != Task::Sweep {
                return Err(Failure::Config(format!("`sweep` needs task `sweep`, config has `{}`", cfg.task.name())));
            }
        }
        Mode::Rates => {
            match &mut cfg.sweep {
                Some(s) if cfg.task == Task::Sweep => s.task = Task::Rates,
                _ => cfg.task = Task::Rates,
            }
            cfg.fit = None;
            cfg.noise = None;
        }
    }
    Ok(())
}

/// Builds the model once at the base point and resolves every label, so
/// that a bad config fails before any computation.
fn prepare(cfg: &ExperimentConfig) -> Result<Option<ModelBundle>, Failure> {
    let name = &cfg.model.name;
    if let Some(s) = &cfg.sweep {
        if !model::is_parameter(name, &s.parameter)? {
            return Err(Failure::Config(format!("sweep parameter `{}` is not a parameter of `{name}`", s.parameter)));
        }
    }
    if model::is_rate_only(name) {
        if cfg.point_task() != Task::Rates {
            return Err(Failure::Config(format!("model `{name}` supports task `rates` only")));
        }
        model::rates(name, &cfg.model.params)?;
        return Ok(None);
    }
    let b = model::build(name, &cfg.model.params)?;
    if cfg.point_task() != Task::Rates {
        observables(&b, &cfg.observables)?;
        initial_label(cfg, &b)?;
        if let Some(n) = &cfg.noise {
            observables(&b, &n.ops)?;
        }
    }
    Ok(Some(b))
}

fn observables(b: &ModelBundle, labels: &[String]) -> Result<Vec<Operator>, Failure> {
    labels
        .iter()
        .map(|l| {
            b.op(l).map(|o| o.clone().with_label(l.as_str())).map_err(|_| {
                let known: Vec<&str> = b.ops.keys().map(String::as_str).collect();
                Failure::Config(format!("model `{}` has no observable `{l}` (known: {})", b.name, known.join(", ")))
            })
        })
        .collect()
}

fn initial_label(cfg: &ExperimentConfig, b: &ModelBundle) -> Result<String, Failure> {
    let label = match &cfg.initial_state {
        Some(l) => l.clone(),
        None => ["initial", "vacuum"].iter().find(|l| b.states.contains_key(**l)).map(|l| l.to_string()).unwrap_or_default(),
    };
    if b.states.contains_key(&label) {
        Ok(label)
    } else {
        let known: Vec<&str> = b.states.keys().map(String::as_str).collect();
        Err(Failure::Config(format!("model `{}` has no state `{label}` (known: {})", b.name, known.join(", "))))
    }
}

fn evolve_options(cfg: &ExperimentConfig) -> EvolveOptions {
    let tol = Tolerances { rtol: cfg.tolerances.rtol, atol: cfg.tolerances.atol, ..Tolerances::default() };
    EvolveOptions { tol, ..EvolveOptions::default() }
}

fn evaluate(cfg: &ExperimentConfig, params: &BTreeMap<String, f64>, prebuilt: Option<&ModelBundle>) -> Result<PointOutput, Failure> {
    let name = &cfg.model.name;
    let mut out = PointOutput { rates: model::rates(name, params)?, ..Default::default() };
    let task = cfg.point_task();
    if task == Task::Rates {
        return Ok(out);
    }
    let built;
    let b = match prebuilt {
        Some(b) if &cfg.model.params == params => b,
        _ => {
            built = model::build(name, params)?;
            &built
        }
    };
    out.model_parameters = b.parameters.clone();
    let sys = b.system().map_err(Failure::setup)?;
    let obs = observables(b, &cfg.observables)?;
    let psi0 = b.state(&initial_label(cfg, b)?).map_err(Failure::setup)?;
    let opts = evolve_options(cfg);
    let d = &mut out.diagnostics;

    match task {
        Task::Evolve => {
            let grid = cfg.grid.as_ref().unwrap().times();
            let rho0 = psi0.to_density();
            if let Some(n) = &cfg.noise {
                let mut spectrum = SpectrumParams::for_grid(n.alpha, n.amplitude, &grid).map_err(Failure::setup)?;
                spectrum.f_min = n.f_min.unwrap_or(spectrum.f_min);
                spectrum.f_max = n.f_max.unwrap_or(spectrum.f_max);
                spectrum.telegraph_fraction = n.telegraph_fraction;
                spectrum.validate().map_err(Failure::setup)?;
                let noise_ops = observables(b, &n.ops)?;
                let ens = noisy_ensemble(sys, &rho0, &grid, &obs, &noise_ops, &spectrum, n.realizations, cfg.seed, &opts)
                    .map_err(Failure::numeric)?;
                d.insert("realizations".into(), ens.n_realizations as f64);
                d.insert("min_eigenvalue".into(), ens.min_eigenvalue);
                d.insert("max_trace_drift".into(), ens.max_trace_drift);
                d.insert("max_hermiticity_drift".into(), ens.max_hermiticity_drift);
                d.insert("noise_f_min".into(), spectrum.f_min);
                d.insert("noise_f_max".into(), spectrum.f_max);
                out.series = Some(ens.series);
            } else {
                let ev = evolve_full(sys, &rho0, &grid, &obs, &opts).map_err(Failure::numeric)?;
                let g = ev.diagnostics;
                d.insert("min_eigenvalue".into(), g.min_eigenvalue);
                d.insert("max_trace_drift".into(), g.max_trace_drift);
                d.insert("max_hermiticity_drift".into(), g.max_hermiticity_drift);
                d.insert("error_estimate".into(), g.error_estimate);
                d.insert("steps_accepted".into(), g.stats.accepted as f64);
                d.insert("steps_rejected".into(), g.stats.rejected as f64);
                out.series = Some(ev.series);
            }
        }
        Task::Trajectories => {
            let grid = cfg.grid.as_ref().unwrap().times();
            let n = cfg.trajectories.as_ref().unwrap().count;
            let topts = TrajectoryOptions { tol: opts.tol, ..TrajectoryOptions::default() };
            out.series = Some(ensemble_average(sys, psi0, &grid, &obs, n, cfg.seed, &topts).map_err(Failure::numeric)?);
        }
        Task::Steady => {
            let ss = steady_state(sys, Some(&psi0.to_density())).map_err(Failure::numeric)?;
            d.insert("multiplicity".into(), ss.multiplicity as f64);
            d.insert("residual".into(), ss.residual);
            for (label, op) in cfg.observables.iter().zip(&obs) {
                let v = expectation(op, &ss.rho).map_err(Failure::numeric)?;
                out.steady.push((label.clone(), v.re));
            }
        }
        Task::Rates | Task::Sweep => unreachable!(),
    }

    if let (Some(f), Some(series)) = (&cfg.fit, &out.series) {
        let start = f.start.unwrap_or_else(|| model::default_fit_start(name, params));
        let window = FitWindow { start: Some(start), end: f.end };
        let offset = f.fixed_offset.map_or(Offset::Free, Offset::Fixed);
        out.fit = Some(fit_decay(series, &f.observable, window, offset).map_err(Failure::numeric)?);
    }
    Ok(out)
}

fn fit_json(f: &DecayFit) -> Value {
    let mut v = json!(f.to_map(""));
    v["monotone"] = json!(f.monotone);
    v["offset_fixed"] = json!(f.offset_fixed);
    v["window_start"] = json!(f.fit_window.0);
    v["window_end"] = json!(f.fit_window.1);
    v
}

fn io_err(p: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", p.display()))
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t`, one column per observable (real part), then standard errors when present.
fn write_series(path: &Path, s: &TimeSeries) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut header = vec!["t".to_string()];
    header.extend(s.columns.iter().map(|c| c.name.clone()));
    header.extend(s.columns.iter().filter(|c| c.std_err.is_some()).map(|c| format!("{}_se", c.name)));
    writeln!(w, "{}", header.join(",")).map_err(io_err(path))?;
    for (i, t) in s.times.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(s.columns.iter().map(|c| num(c.values[i].re)));
        row.extend(s.columns.iter().filter_map(|c| c.std_err.as_ref()).map(|se| num(se[i])));
        writeln!(w, "{}", row.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Steady-state values as a single row at `t = inf`.
fn write_steady(path: &Path, values: &[(String, f64)]) -> Result<(), Failure> {
    let mut header = vec!["t".to_string()];
    header.extend(values.iter().map(|(k, _)| k.clone()));
    let mut row = vec![num(f64::INFINITY)];
    row.extend(values.iter().map(|(_, v)| num(*v)));
    std::fs::write(path, format!("{}\n{}\n", header.join(","), row.join(","))).map_err(io_err(path))
}

/// Derived quantities reported per sweep point, in column order.
fn point_row(out: &PointOutput) -> Vec<(String, f64)> {
    let mut row = Vec::new();
    if let Some(f) = &out.fit {
        row.push(("fit_rate".to_string(), f.rate));
        row.push(("fit_rate_half_width".to_string(), f.rate_half_width));
    }
    if let Some(s) = &out.series {
        for c in &s.columns {
            row.push((format!("final_{}", c.name), c.values.last().map_or(f64::NAN, |v| v.re)));
        }
    }
    for (k, v) in &out.steady {
        row.push((format!("steady_{k}"), *v));
    }
    if let Some(r) = &out.rates {
        row.extend(r.values.iter().map(|(k, v)| (format!("formula_{k}"), *v)));
    }
    row
}

/// Runs the points in declared order, flushing each row as it completes.
fn run_sweep(cfg: &ExperimentConfig, dir: &Path, written: &mut Vec<PathBuf>) -> Result<Value, Failure> {
    let s = cfg.sweep.as_ref().unwrap();
    let path = dir.join(format!("{}.csv", cfg.name));
    let mut file = File::create(&path).map_err(io_err(&path))?;
    written.push(path.clone());
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for &value in &s.values {
        let mut params = cfg.model.params.clone();
        params.insert(s.parameter.clone(), value);
        let out = evaluate(cfg, &params, None)?;
        let row = point_row(&out);
        let keys = header.get_or_insert_with(|| {
            let h: Vec<String> = row.iter().map(|(k, _)| k.clone()).collect();
            let line = std::iter::once(s.parameter.clone()).chain(h.iter().cloned()).collect::<Vec<_>>().join(",");
            let _ = writeln!(file, "{line}");
            h
        });
        let lookup: BTreeMap<&str, f64> = row.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let cells: Vec<String> = std::iter::once(num(value)).chain(keys.iter().map(|k| num(*lookup.get(k.as_str()).unwrap_or(&f64::NAN)))).collect();
        writeln!(file, "{}", cells.join(",")).map_err(io_err(&path))?;
        file.flush().map_err(io_err(&path))?;
        let mut entry = json!({ s.parameter.as_str(): value });
        for (k, v) in &row {
            entry[k] = json!(v);
        }
        if let Some(f) = &out.fit {
            entry["monotone"] = json!(f.monotone);
        }
        rows.push((value, out.fit.as_ref().map(|f| f.rate), entry));
    }
    let mut v = json!({
        "parameter": s.parameter,
        "points": rows.iter().map(|r| r.2.clone()).collect::<Vec<_>>(),
    });
    let pairs: Option<Vec<(f64, f64)>> = rows.iter().map(|(x, r, _)| r.filter(|r| *r > 0.0 && *x > 0.0).map(|r| (*x, r))).collect();
    if let Some(p) = pairs.filter(|p| p.len() >= 2) {
        v["loglog_slope_fit_rate"] = json!(loglog_slope(&p));
    }
    Ok(v)
}

fn loglog_slope(p: &[(f64, f64)]) -> f64 {
    let n = p.len() as f64;
    let (mx, my) = p.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln() / n, b + y.ln() / n));
    let sxy: f64 = p.iter().map(|(x, y)| (x.ln() - mx) * (y.ln() - my)).sum();
    let sxx: f64 = p.iter().map(|(x, _)| (x.ln() - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_slope_of_power_law() {
        let p: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|x: &f64| (*x, 3.0 * x.powf(1.9))).collect();
        assert!((loglog_slope(&p) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn rates_mode_retargets_sweeps() {
        let mut cfg = crate::config::parse(
            r#"{"name": "s", "model": {"name": "golden_rule", "params": {"Omega": 0.05, "GammaS": 0.1}},
                "task": "sweep", "sweep": {"parameter": "nu", "values": [0.0], "task": "steady"}}"#,
        )
        .unwrap();
        apply_mode(&mut cfg, Mode::Rates).unwrap();
        assert_eq!(cfg.task, Task::Sweep);
        assert_eq!(cfg.sweep.unwrap().task, Task::Rates);
    }
}
