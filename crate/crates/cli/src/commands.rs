//! Subcommand execution. Every command resolves its whole configuration
//! before touching the output directory.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use nrtl_ident::estimation::{fit_wls, parameter_ci, FitOptions, MeasurementSet};
use nrtl_ident::model::{DesignMatrix, ParameterMask};
use nrtl_ident::montecarlo::{
    mc_replicates, nrtl_bounds, soed_initial_design, soed_replicates, summarize_mc, summarize_soed, Grids, McReport,
    ParameterScenario, RegularizationScenario, ScenarioConfig,
};
use nrtl_ident::oed::{design_next, DesignOptions};
use nrtl_ident::sensitivity::{ResponseSpec, ResponseVariable, VleModel, P_BOUNDS, X1L_BOUNDS};
use nrtl_ident::thermo::{bubble_point, Mixture, NrtlParams, N_NRTL};
use nrtl_ident::model::linspace;

use crate::config::{
    check_alpha_bounds, check_design, find_measurement, find_mixture, param_indices, param_names, parameter_scenarios,
    regularization_scenarios, ConfigError, RunConfig, StudySection,
};
use crate::output::{num, opt, write_json, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] nrtl_ident::Error),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError(msg.into()))
}

/// Resolved command-line context.
pub struct Invocation {
    pub config: RunConfig,
    pub config_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub scenarios: Vec<String>,
}

impl Invocation {
    fn prepare_output(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

const PARAM_UNITS: [&str; N_NRTL] = ["dimless", "K", "dimless", "K", "dimless"];

fn param_headers() -> Vec<String> {
    param_names()
        .iter()
        .zip(PARAM_UNITS)
        .map(|(n, u)| format!("{n}_{u}"))
        .collect()
}

fn response_header(v: ResponseVariable, prefix: &str) -> String {
    format!("{prefix}{}_{}", v.name(), v.unit_suffix())
}

const RESPONSES: [ResponseVariable; 2] = [ResponseVariable::VaporFraction, ResponseVariable::Temperature];

pub fn vle(inv: &Invocation) -> Result<(), CliError> {
    let sec = inv.config.vle.as_ref().ok_or_else(|| bad("missing [vle] section"))?;
    let mixtures = inv.config.mixtures()?;
    let m = find_mixture(&mixtures, &sec.mixture)?;
    let pressures = sec.pressures.clone().unwrap_or_else(|| vec![1e5]);
    if pressures.is_empty() || pressures.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(bad("vle: pressures must be positive"));
    }
    if sec.points < 2 {
        return Err(bad("vle: at least two composition points required"));
    }
    let out = inv.prepare_output()?;
    let mut table = Table::new(["x1L_molmol", "P_Pa", "T_K", "x1V_molmol", "gamma1_dimless", "gamma2_dimless"]);
    for &p in &pressures {
        for x in linspace(0.0, 1.0, sec.points) {
            let s = bubble_point(x, p, m)?;
            table.push(vec![num(s.x1l), num(s.p), num(s.t), num(s.x1v), num(s.gamma1), num(s.gamma2)]);
        }
    }
    table.write(&out.join("vle.csv"))?;
    write_json(
        &out.join("summary.json"),
        &json!({ "command": "vle", "mixture": m.label, "pressures_Pa": pressures, "points": sec.points }),
    )?;
    Ok(())
}

/// Measurements read from a CSV with `x1L_molmol`, `P_Pa` and one column per
/// measured variable.
fn read_dataset(path: &Path, spec: &ResponseSpec) -> Result<MeasurementSet, CliError> {
    let fail = |msg: String| bad(format!("data {}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| fail(format!("missing column {name}")));
    let ix = column("x1L_molmol")?;
    let ip = column("P_Pa")?;
    let iy: Vec<usize> = spec
        .variables()
        .iter()
        .map(|&v| column(&response_header(v, "")))
        .collect::<Result<_, _>>()?;
    let mut design = DesignMatrix::empty(2);
    let mut values = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let field = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("row {}: non-numeric field", line + 1)))
        };
        design.push(&[field(ix)?, field(ip)?]);
        for &i in &iy {
            values.push(field(i)?);
        }
    }
    if design.is_empty() {
        return Err(fail("no data rows".into()));
    }
    design
        .check_bounds(&[X1L_BOUNDS, P_BOUNDS])
        .map_err(|e| fail(e.to_string()))?;
    MeasurementSet::new(design, values, spec.len()).map_err(|e| fail(e.to_string()))
}

fn mask_without(fixed: &[String]) -> Result<ParameterMask, CliError> {
    Ok(ParameterMask::without(N_NRTL, &param_indices(fixed)?))
}

pub fn fit(inv: &Invocation) -> Result<(), CliError> {
    let sec = inv.config.fit.as_ref().ok_or_else(|| bad("missing [fit] section"))?;
    let mixtures = inv.config.mixtures()?;
    let measurements = inv.config.measurements()?;
    let m = find_mixture(&mixtures, &sec.mixture)?;
    let spec = find_measurement(&measurements, &sec.measurement)?;
    let data = read_dataset(&inv.config_dir.join(&sec.data), spec)?;
    let bounds = nrtl_bounds(check_alpha_bounds(sec.alpha_bounds)?);
    let theta0 = sec.initial.unwrap_or_else(|| m.nrtl.to_array());
    if !bounds.contains(&theta0) {
        return Err(bad("fit: initial guess outside parameter bounds"));
    }
    let mask = mask_without(&sec.fixed)?;
    if !(sec.beta > 0.0 && sec.beta < 1.0) {
        return Err(bad("fit: beta must lie in (0, 1)"));
    }
    let model = VleModel::new(m.clone(), spec.clone());
    let out = inv.prepare_output()?;

    let fit = fit_wls(&model, &theta0, &bounds, &mask, &data, &FitOptions::default())?;
    let active = fit.mask.active_indices();
    let (std, half) = match &fit.covariance {
        Some(c) => {
            let hw = parameter_ci(c, fit.dof, sec.beta)?;
            let mut std = vec![None; N_NRTL];
            let mut half = vec![None; N_NRTL];
            for (k, &j) in active.iter().enumerate() {
                std[j] = Some(c[(k, k)].sqrt());
                half[j] = Some(hw[k]);
            }
            (std, half)
        }
        None => (vec![None; N_NRTL], vec![None; N_NRTL]),
    };
    let mut header = vec!["quantity".to_string()];
    header.extend(param_headers());
    let mut table = Table::new(header);
    let row = |name: &str, v: Vec<String>| std::iter::once(name.to_string()).chain(v).collect::<Vec<_>>();
    table.push(row("estimate", fit.theta.iter().copied().map(num).collect()));
    table.push(row("std_dev", std.iter().copied().map(opt).collect()));
    table.push(row("ci_half_width", half.iter().copied().map(opt).collect()));
    table.write(&out.join("fit_parameters.csv"))?;

    let ny = spec.len();
    let mut header = vec!["x1L_molmol".to_string(), "P_Pa".to_string()];
    for &v in spec.variables() {
        header.push(response_header(v, "measured_"));
        header.push(response_header(v, "fitted_"));
    }
    let mut pred = Table::new(header);
    for (i, u) in data.design.rows().enumerate() {
        let mut r = vec![num(u[0]), num(u[1])];
        for k in 0..ny {
            r.push(num(data.values[i * ny + k]));
            r.push(num(fit.predictions[i * ny + k]));
        }
        pred.push(r);
    }
    pred.write(&out.join("fit_predictions.csv"))?;

    let names = param_names();
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "fit",
            "mixture": m.label,
            "measurement": sec.measurement,
            "converged": fit.converged,
            "iterations": fit.n_iter,
            "objective": fit.phi,
            "dof": fit.dof,
            "theta": names.iter().zip(&fit.theta).map(|(n, v)| (n.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
            "estimated": active.iter().map(|&j| names[j].clone()).collect::<Vec<_>>(),
            "covariance": fit.covariance.as_ref().map(|c| c.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()),
            "ci_half_width": half,
            "s_y": spec.variables().iter().zip(&fit.s_y).map(|(v, s)| (v.name().to_string(), json!(s))).collect::<serde_json::Map<_, _>>(),
        }),
    )?;
    if !fit.converged {
        return Err(nrtl_ident::Error::Convergence("estimation reached the iteration cap".into()).into());
    }
    fit.covariance()?;
    Ok(())
}

pub fn oed(inv: &Invocation) -> Result<(), CliError> {
    let sec = inv.config.oed.as_ref().ok_or_else(|| bad("missing [oed] section"))?;
    let mixtures = inv.config.mixtures()?;
    let measurements = inv.config.measurements()?;
    let m = find_mixture(&mixtures, &sec.mixture)?;
    let spec = find_measurement(&measurements, &sec.measurement)?;
    let theta = sec.theta.unwrap_or_else(|| m.nrtl.to_array());
    NrtlParams::from_slice(&theta).map_err(|e| bad(format!("oed: {e}")))?;
    let design = match &sec.design {
        Some(rows) => check_design(rows)?,
        None => soed_initial_design(),
    };
    let mask = mask_without(&sec.fixed)?;
    if sec.n_new == 0 || sec.n_starts == 0 {
        return Err(bad("oed: n_new and n_starts must be at least 1"));
    }
    let opts = DesignOptions {
        criterion: sec.criterion,
        n_new: sec.n_new,
        n_starts: sec.n_starts,
        ..DesignOptions::default()
    };
    let model = VleModel::new(m.clone(), spec.clone());
    let out = inv.prepare_output()?;
    let cand = design_next(&model, &design, &theta, &mask, &opts)?;
    let mut table = Table::new(["x1L_molmol", "P_Pa"]);
    for u in cand.u_new.rows() {
        table.push(vec![num(u[0]), num(u[1])]);
    }
    table.write(&out.join("oed_design.csv"))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "oed",
            "mixture": m.label,
            "measurement": sec.measurement,
            "criterion": cand.criterion,
            "value": cand.value,
            "start_index": cand.start_index,
            "start_values": cand.start_values.iter().map(|v| v.is_finite().then_some(*v)).collect::<Vec<_>>(),
        }),
    )?;
    Ok(())
}

struct Scenario {
    label: String,
    mixture: Mixture,
    measurement: String,
    spec: ResponseSpec,
    parameters: ParameterScenario,
    regularization: RegularizationScenario,
}

fn plan_study(inv: &Invocation, sec: &StudySection, sequential: bool) -> Result<Vec<Scenario>, CliError> {
    let mixtures = inv.config.mixtures()?;
    let measurements = inv.config.measurements()?;
    let mix: Vec<&Mixture> = match &sec.mixtures {
        Some(labels) => labels.iter().map(|l| find_mixture(&mixtures, l)).collect::<Result<_, _>>()?,
        None => mixtures.iter().collect(),
    };
    let meas: Vec<(&String, &ResponseSpec)> = match &sec.measurements {
        Some(labels) => labels
            .iter()
            .map(|l| find_measurement(&measurements, l).map(|s| (l, s)))
            .collect::<Result<_, _>>()?,
        None => measurements.iter().map(|(l, s)| (l, s)).collect(),
    };
    let params = parameter_scenarios(&sec.parameters)?;
    let regs = regularization_scenarios(&sec.regularization)?;
    if !sequential && regs.contains(&RegularizationScenario::GoWithOed) {
        return Err(bad("GO-OED regularization applies to soed only"));
    }
    if sec.n_mc == 0 {
        return Err(bad("n_mc must be at least 1"));
    }
    if !(sec.noise_scale >= 0.0 && sec.noise_scale.is_finite()) {
        return Err(bad("noise_scale must be non-negative"));
    }
    if !(sec.beta > 0.0 && sec.beta < 1.0) {
        return Err(bad("beta must lie in (0, 1)"));
    }
    if sequential && sec.n_starts == 0 {
        return Err(bad("n_starts must be at least 1"));
    }
    let names = param_names();
    let mut out = Vec::new();
    for m in &mix {
        for (ml, spec) in &meas {
            for p in &params {
                for r in &regs {
                    let label = format!("{}/{}/{}/{}", m.label, ml, p.label(&names), r.label());
                    if inv.scenarios.is_empty() || inv.scenarios.contains(&label) {
                        out.push(Scenario {
                            label,
                            mixture: (*m).clone(),
                            measurement: ml.to_string(),
                            spec: (*spec).clone(),
                            parameters: *p,
                            regularization: *r,
                        });
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(bad("no scenario matches the --scenario filter"));
    }
    Ok(out)
}

fn scenario_config(inv: &Invocation, sec: &StudySection, sc: &Scenario, alpha: (f64, f64)) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(&sc.label, sc.mixture.nrtl.to_array().to_vec(), nrtl_bounds(alpha), sec.n_mc, inv.seed);
    cfg.parameters = sc.parameters;
    cfg.regularization = sc.regularization;
    cfg.thresholds = sec.thresholds;
    cfg.beta = sec.beta;
    cfg.noise_scale = sec.noise_scale;
    cfg
}

fn summary_header(with_iteration: bool) -> Vec<String> {
    let mut h: Vec<String> = ["scenario", "mixture", "measurement", "parameters", "regularization"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if with_iteration {
        h.push("iteration_id".into());
    }
    h.extend(
        [
            "n_mc_count",
            "n_success_count",
            "n_failed_count",
            "failure_alarm",
            "w_bar_dimless",
            "q95_theta_dimless",
            "q95_y_dimless",
        ]
        .map(String::from),
    );
    for v in RESPONSES {
        h.push(format!("q95_{}_dimless", v.name()));
    }
    for v in RESPONSES {
        h.push(response_header(v, "s_bar_"));
    }
    for v in RESPONSES {
        h.push(response_header(v, "sigma_bar_"));
    }
    h.extend(["n_identifiable_mean_count", "n_identifiable_std_count"].map(String::from));
    if with_iteration {
        h.push("d_u_dimless".into());
    }
    h
}

fn summary_row(sc: &Scenario, r: &McReport, with_iteration: bool) -> Vec<String> {
    let mut row = vec![
        sc.label.clone(),
        sc.mixture.label.clone(),
        sc.measurement.clone(),
        sc.parameters.label(&param_names()),
        sc.regularization.label(),
    ];
    if with_iteration {
        row.push(r.iteration.map(|i| i.to_string()).unwrap_or_default());
    }
    row.extend([
        r.n_mc.to_string(),
        r.n_success.to_string(),
        r.n_failed.to_string(),
        r.failure_alarm.to_string(),
        opt(r.w_bar),
        opt(r.q95_theta),
        opt(r.q95_y),
    ]);
    let per = |values: &[Option<f64>]| -> Vec<String> {
        RESPONSES
            .iter()
            .map(|v| {
                r.response_names
                    .iter()
                    .position(|n| n == v.name())
                    .and_then(|k| values[k])
                    .map(num)
                    .unwrap_or_default()
            })
            .collect()
    };
    row.extend(per(&r.q95_y_by_response));
    row.extend(per(&r.s_bar));
    row.extend(per(&r.sigma_bar));
    row.push(opt(r.n_identifiable_mean));
    row.push(opt(r.n_identifiable_std));
    if with_iteration {
        row.push(opt(r.d_u));
    }
    row
}

#[derive(Serialize)]
struct StudySummary<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    scenarios: Vec<T>,
}

pub fn mc(inv: &Invocation) -> Result<(), CliError> {
    let sec = inv.config.mc.as_ref().ok_or_else(|| bad("missing [mc] section"))?;
    let plan = plan_study(inv, sec, false)?;
    let alpha = check_alpha_bounds(sec.alpha_bounds.unwrap_or([0.0, 2.0]))?;
    let (measurement, prediction) = inv.config.grids()?;
    let grids = Grids { measurement, prediction };
    let out = inv.prepare_output()?;

    let mut summary = Table::new(summary_header(false));
    let mut header = vec!["scenario".to_string(), "replicate_id".to_string(), "status".to_string()];
    header.extend(param_headers());
    header.extend(RESPONSES.map(|v| response_header(v, "s_")));
    header.push("n_identifiable_count".into());
    let mut replicates = Table::new(header);
    let mut reports = Vec::new();
    for sc in &plan {
        let model = VleModel::new(sc.mixture.clone(), sc.spec.clone());
        let cfg = scenario_config(inv, sec, sc, alpha);
        let outcomes = mc_replicates(&model, &cfg, &grids)?;
        let report = summarize_mc(&model, &cfg, &outcomes)?;
        for (i, o) in outcomes.iter().enumerate() {
            let mut row = vec![sc.label.clone(), i.to_string()];
            match o {
                Ok(rec) => {
                    row.push("ok".into());
                    row.extend(rec.theta.iter().copied().map(num));
                    row.extend(RESPONSES.iter().map(|v| sc.spec.position(*v).map(|k| num(rec.s_y[k])).unwrap_or_default()));
                    row.push(rec.n_identifiable.to_string());
                }
                Err(_) => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(String::new(), N_NRTL + RESPONSES.len() + 1));
                }
            }
            replicates.push(row);
        }
        summary.push(summary_row(sc, &report, false));
        reports.push(report);
    }
    summary.write(&out.join("mc_summary.csv"))?;
    replicates.write(&out.join("mc_replicates.csv"))?;
    write_json(
        &out.join("summary.json"),
        &StudySummary {
            command: "mc",
            seed: inv.seed,
            scenarios: reports,
        },
    )?;
    Ok(())
}

pub fn soed(inv: &Invocation) -> Result<(), CliError> {
    let sec = inv.config.soed.as_ref().ok_or_else(|| bad("missing [soed] section"))?;
    let plan = plan_study(inv, sec, true)?;
    let alpha = check_alpha_bounds(sec.alpha_bounds.unwrap_or([0.1, 0.6]))?;
    let (_, prediction) = inv.config.grids()?;
    let init = soed_initial_design();
    let opts = DesignOptions {
        criterion: sec.criterion,
        n_starts: sec.n_starts,
        ..DesignOptions::default()
    };
    let out = inv.prepare_output()?;

    let mut summary = Table::new(summary_header(true));
    let mut designs = Table::new(["scenario", "replicate_id", "iteration_id", "x1L_molmol", "P_Pa"]);
    let mut reports = Vec::new();
    for sc in &plan {
        let model = VleModel::new(sc.mixture.clone(), sc.spec.clone());
        let cfg = scenario_config(inv, sec, sc, alpha);
        let outcomes = soed_replicates(&model, &cfg, &init, &prediction, sec.iterations, &opts)?;
        let per_iter = summarize_soed(&model, &cfg, &outcomes, sec.iterations)?;
        for (i, o) in outcomes.iter().enumerate() {
            if let Ok(rep) = o {
                for (k, u) in rep.designs.iter().enumerate() {
                    designs.push(vec![sc.label.clone(), i.to_string(), (k / opts.n_new + 1).to_string(), num(u[0]), num(u[1])]);
                }
            }
        }
        for r in &per_iter {
            summary.push(summary_row(sc, r, true));
        }
        reports.push(per_iter);
    }
    summary.write(&out.join("soed_summary.csv"))?;
    designs.write(&out.join("soed_designs.csv"))?;
    write_json(
        &out.join("summary.json"),
        &StudySummary {
            command: "soed",
            seed: inv.seed,
            scenarios: reports,
        },
    )?;
    Ok(())
}
