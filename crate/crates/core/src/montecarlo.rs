//! Monte Carlo harnesses: plain replicate studies with optional parameter
//! fixing and subset-selection regularization, and the sequential
//! design/estimation loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_wls, parameter_ci, prediction_sigma, FitOptions, FitResult, MeasurementSet};
use crate::model::{linspace, stacked_jacobian, stacked_response, DesignMatrix, Model, ParameterBounds, ParameterMask};
use crate::oed::{design_next, DesignOptions};
use crate::regularization::{regularize, RegularizationMethod, Thresholds};
use crate::sensitivity::{scale_sensitivity, ResponseSpec, ResponseVariable, Scaling, P_BOUNDS, X1L_BOUNDS};
use crate::stats::{centered_discrepancy, mean, shapiro_wilk_w, std_dev, t_quantile, RngStream};
use crate::thermo::NrtlParam;

/// Measurement and prediction grids of a replicate study.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub measurement: DesignMatrix,
    pub prediction: DesignMatrix,
}

impl Grids {
    /// 20 liquid fractions at 0.5 and 1.5 bar for fitting, the same
    /// fractions at 1 bar for prediction.
    pub fn vle_default() -> Self {
        let x = linspace(X1L_BOUNDS.0, X1L_BOUNDS.1, 20);
        let mut measurement = DesignMatrix::empty(2);
        for p in [P_BOUNDS.0, P_BOUNDS.1] {
            for &xi in &x {
                measurement.push(&[xi, p]);
            }
        }
        let mut prediction = DesignMatrix::empty(2);
        for &xi in &x {
            prediction.push(&[xi, 1e5]);
        }
        Self {
            measurement,
            prediction,
        }
    }
}

/// Initial design of the sequential loop.
pub fn soed_initial_design() -> DesignMatrix {
    DesignMatrix::from_rows(&[
        [0.05, 0.5e5],
        [0.95, 0.5e5],
        [0.05, 1.5e5],
        [0.95, 1.5e5],
        [0.5, 1e5],
        [0.65, 1e5],
    ])
}

/// Parameter box for replicate studies of NRTL fits.
pub fn nrtl_bounds(alpha: (f64, f64)) -> ParameterBounds {
    ParameterBounds {
        lower: vec![-100.0, -1.5e5, -100.0, -1.5e5, alpha.0],
        upper: vec![100.0, 1.5e5, 100.0, 1.5e5, alpha.1],
    }
}

/// The four combinations of measured variables and noise levels.
pub fn measurement_scenarios() -> Vec<(&'static str, ResponseSpec)> {
    use ResponseVariable::{Temperature, VaporFraction};
    let make = |v: Vec<ResponseVariable>, s: (f64, f64)| ResponseSpec::new(v, s.0, s.1).expect("valid spec");
    let default = (0.001, 0.03);
    let precise = (0.0002, 0.01);
    vec![
        ("worst", make(vec![VaporFraction], default)),
        ("x1V-precise", make(vec![VaporFraction], precise)),
        ("x1V-T-default", make(vec![VaporFraction, Temperature], default)),
        ("best", make(vec![VaporFraction, Temperature], precise)),
    ]
}

/// Which parameters are estimated and at what value the others are held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParameterScenario {
    All,
    /// fixed at its true value
    FixTrue(usize),
    /// fixed at `factor ×` its true value
    FixPerturbed { index: usize, factor: f64 },
    /// fixed at a given value
    FixValue { index: usize, value: f64 },
}

impl ParameterScenario {
    fn fixed(&self, theta_true: &[f64]) -> Option<(usize, f64)> {
        match *self {
            ParameterScenario::All => None,
            ParameterScenario::FixTrue(j) => Some((j, theta_true[j])),
            ParameterScenario::FixPerturbed { index, factor } => Some((index, theta_true[index] * factor)),
            ParameterScenario::FixValue { index, value } => Some((index, value)),
        }
    }

    pub fn mask(&self, n_params: usize) -> ParameterMask {
        match self.fixed(&vec![0.0; n_params]) {
            None => ParameterMask::all(n_params),
            Some((j, _)) => ParameterMask::without(n_params, &[j]),
        }
    }

    /// Start vector with the fixed entry overwritten.
    pub fn start(&self, theta_true: &[f64], theta_init: &[f64]) -> Vec<f64> {
        let mut s = theta_init.to_vec();
        if let Some((j, v)) = self.fixed(theta_true) {
            s[j] = v;
        }
        s
    }

    pub fn label(&self, names: &[String]) -> String {
        match *self {
            ParameterScenario::All => "All".into(),
            ParameterScenario::FixTrue(j) => format!("{}*", names[j]),
            ParameterScenario::FixPerturbed { index, factor } => format!("{}x{factor}", names[index]),
            ParameterScenario::FixValue { index, value } => format!("{}={value}", names[index]),
        }
    }

    /// Inverse of [`ParameterScenario::label`].
    pub fn from_label(label: &str, names: &[String]) -> Option<Self> {
        if label == "All" {
            return Some(ParameterScenario::All);
        }
        let index = |n: &str| names.iter().position(|m| m == n);
        if let Some(n) = label.strip_suffix('*') {
            return index(n).map(ParameterScenario::FixTrue);
        }
        if let Some((n, v)) = label.split_once('=') {
            let value = v.parse().ok()?;
            return index(n).map(|index| ParameterScenario::FixValue { index, value });
        }
        let (n, f) = label.rsplit_once('x')?;
        let factor = f.parse().ok()?;
        index(n).map(|index| ParameterScenario::FixPerturbed { index, factor })
    }

    fn validate(&self, n_params: usize) -> Result<()> {
        match *self {
            ParameterScenario::All => Ok(()),
            ParameterScenario::FixTrue(j)
            | ParameterScenario::FixPerturbed { index: j, .. }
            | ParameterScenario::FixValue { index: j, .. }
                if j >= n_params =>
            {
                Err(Error::Domain(format!("fixed parameter index {j} out of range")))
            }
            _ => Ok(()),
        }
    }
}

/// The sixteen NRTL parameter scenarios: all estimated, each parameter fixed
/// at its true value, each A/B parameter at 0.8 and 1.2 times its true value,
/// and α at 0.1 and 0.6.
pub fn nrtl_parameter_scenarios() -> Vec<ParameterScenario> {
    let mut v = vec![ParameterScenario::All];
    v.extend(NrtlParam::ALL.iter().map(|p| ParameterScenario::FixTrue(p.index())));
    for p in &NrtlParam::ALL[..4] {
        for factor in [0.8, 1.2] {
            v.push(ParameterScenario::FixPerturbed {
                index: p.index(),
                factor,
            });
        }
    }
    for value in [0.1, 0.6] {
        v.push(ParameterScenario::FixValue {
            index: NrtlParam::Alpha.index(),
            value,
        });
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RegularizationScenario {
    #[default]
    None,
    /// subset selection before the refit
    Pe(RegularizationMethod),
    /// GO subset selection in both estimation and design
    GoWithOed,
}

impl RegularizationScenario {
    fn method(self) -> Option<RegularizationMethod> {
        match self {
            RegularizationScenario::None => None,
            RegularizationScenario::Pe(m) => Some(m),
            RegularizationScenario::GoWithOed => Some(RegularizationMethod::Go),
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "None" => Some(RegularizationScenario::None),
            "GO-OED" => Some(RegularizationScenario::GoWithOed),
            _ => RegularizationMethod::ALL
                .into_iter()
                .find(|m| m.name() == label)
                .map(RegularizationScenario::Pe),
        }
    }

    pub fn label(self) -> String {
        match self {
            RegularizationScenario::None => "None".into(),
            RegularizationScenario::Pe(m) => m.name().into(),
            RegularizationScenario::GoWithOed => "GO-OED".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub label: String,
    pub theta_true: Vec<f64>,
    /// Starting point of every fit; the true values when `None`.
    pub theta_init: Option<Vec<f64>>,
    pub bounds: ParameterBounds,
    pub parameters: ParameterScenario,
    pub regularization: RegularizationScenario,
    pub thresholds: Thresholds,
    pub n_mc: usize,
    pub seed: u64,
    /// confidence level of intervals and bands
    pub beta: f64,
    /// multiplier on the model noise levels when generating data
    pub noise_scale: f64,
    pub fit: FitOptions,
}

impl ScenarioConfig {
    pub fn new(label: &str, theta_true: Vec<f64>, bounds: ParameterBounds, n_mc: usize, seed: u64) -> Self {
        Self {
            label: label.to_string(),
            theta_true,
            theta_init: None,
            bounds,
            parameters: ParameterScenario::All,
            regularization: RegularizationScenario::None,
            thresholds: Thresholds::default(),
            n_mc,
            seed,
            beta: 0.95,
            noise_scale: 1.0,
            fit: FitOptions::default(),
        }
    }

    fn validate<M: Model + ?Sized>(&self, model: &M) -> Result<()> {
        let np = model.n_params();
        if self.theta_true.len() != np || self.bounds.len() != np {
            return Err(Error::Shape(format!("scenario {}: parameter vectors must have {np} entries", self.label)));
        }
        if let Some(init) = &self.theta_init {
            if init.len() != np {
                return Err(Error::Shape(format!("scenario {}: initial guess has wrong length", self.label)));
            }
        }
        if self.n_mc == 0 {
            return Err(Error::Domain(format!("scenario {}: N_MC must be at least 1", self.label)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Domain(format!("scenario {}: confidence level outside (0, 1)", self.label)));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Domain(format!("scenario {}: noise scale must be non-negative", self.label)));
        }
        self.parameters.validate(np)
    }

    fn start(&self) -> Vec<f64> {
        let init = self.theta_init.as_ref().unwrap_or(&self.theta_true);
        let s = self.parameters.start(&self.theta_true, init);
        s.iter().enumerate().map(|(j, &v)| self.bounds.clamp(j, v)).collect()
    }
}

/// Outcome of one replicate at one estimation step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    /// Final estimate, full parameter vector.
    pub theta: Vec<f64>,
    /// Parameters estimated in the final fit.
    pub estimated: Vec<bool>,
    /// Whether the true value lies in the confidence interval, for estimated entries.
    pub theta_hits: Vec<Option<bool>>,
    /// Band coverage on the prediction grid, stacked experiment-major.
    pub prediction_hits: Vec<bool>,
    /// Linearized prediction standard deviations on the prediction grid.
    pub prediction_sigma: Vec<f64>,
    /// Residual-based noise estimate per response.
    pub s_y: Vec<f64>,
    pub n_identifiable: usize,
}

/// Aggregated metrics of a replicate study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub label: String,
    pub iteration: Option<usize>,
    pub n_mc: usize,
    pub n_success: usize,
    pub n_failed: usize,
    /// more than 10 % of replicates failed
    pub failure_alarm: bool,
    pub w_bar: Option<f64>,
    pub q95_theta: Option<f64>,
    pub q95_y: Option<f64>,
    pub q95_y_by_response: Vec<Option<f64>>,
    pub s_bar: Vec<Option<f64>>,
    pub sigma_bar: Vec<Option<f64>>,
    pub d_u: Option<f64>,
    pub n_identifiable_mean: Option<f64>,
    pub n_identifiable_std: Option<f64>,
    pub theta_mean: Vec<Option<f64>>,
    pub theta_std: Vec<Option<f64>>,
    pub param_names: Vec<String>,
    pub response_names: Vec<String>,
}

/// Naming and bookkeeping for [`compute_metrics`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportContext<'a> {
    pub label: &'a str,
    pub iteration: Option<usize>,
    pub n_mc: usize,
    pub param_names: Vec<String>,
    pub response_names: Vec<String>,
    /// parameters whose marginals enter the normality metric
    pub scenario_mask: &'a ParameterMask,
    /// bounds used to map designs into the unit cube
    pub control_bounds: Vec<(f64, f64)>,
}

fn ratio(hits: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut n, mut k) = (0usize, 0usize);
    for h in hits {
        n += 1;
        k += usize::from(h);
    }
    (n > 0).then(|| k as f64 / n as f64)
}

/// Aggregates replicate records. `designs` holds the pooled proposed
/// experiments in control units when discrepancy is wanted.
pub fn compute_metrics(ctx: &ReportContext<'_>, records: &[ReplicateRecord], designs: Option<&[Vec<f64>]>) -> Result<McReport> {
    let np = ctx.param_names.len();
    let ny = ctx.response_names.len();
    let n_success = records.len();
    let n_failed = ctx.n_mc.saturating_sub(n_success);

    let column = |j: usize| records.iter().map(|r| r.theta[j]).collect::<Vec<_>>();
    let w: Vec<f64> = ctx
        .scenario_mask
        .active_indices()
        .into_iter()
        .filter_map(|j| {
            let v = column(j);
            (v.len() >= 3).then(|| shapiro_wilk_w(&v).ok()).flatten()
        })
        .collect();
    let w_bar = mean(w);

    let q95_theta = ratio(records.iter().flat_map(|r| r.theta_hits.iter().filter_map(|h| *h)));
    let q95_y = ratio(records.iter().flat_map(|r| r.prediction_hits.iter().copied()));
    let q95_y_by_response = (0..ny)
        .map(|k| ratio(records.iter().flat_map(|r| r.prediction_hits.iter().skip(k).step_by(ny).copied())))
        .collect();
    let s_bar = (0..ny).map(|k| mean(records.iter().map(|r| r.s_y[k]))).collect();
    let sigma_bar = (0..ny)
        .map(|k| mean(records.iter().flat_map(|r| r.prediction_sigma.iter().skip(k).step_by(ny).copied())))
        .collect();
    let counts: Vec<f64> = records.iter().map(|r| r.n_identifiable as f64).collect();
    let (theta_mean, theta_std) = (0..np)
        .map(|j| {
            let v = column(j);
            (mean(v.iter().copied()), (!v.is_empty()).then(|| std_dev(&v)))
        })
        .unzip();

    let d_u = match designs {
        Some(pts) if !pts.is_empty() => {
            let unit: Vec<Vec<f64>> = pts
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&ctx.control_bounds)
                        .map(|(&v, &(lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
                        .collect()
                })
                .collect();
            Some(centered_discrepancy(&unit)?)
        }
        _ => None,
    };

    Ok(McReport {
        label: ctx.label.to_string(),
        iteration: ctx.iteration,
        n_mc: ctx.n_mc,
        n_success,
        n_failed,
        failure_alarm: n_failed as f64 > 0.1 * ctx.n_mc as f64,
        w_bar,
        q95_theta,
        q95_y,
        q95_y_by_response,
        s_bar,
        sigma_bar,
        d_u,
        n_identifiable_mean: mean(counts.iter().copied()),
        n_identifiable_std: (!counts.is_empty()).then(|| std_dev(&counts)),
        theta_mean,
        theta_std,
        param_names: ctx.param_names.clone(),
        response_names: ctx.response_names.clone(),
    })
}

/// `y_true + noise_scale·σ·z` for every stacked row.
fn perturb(y_true: &[f64], sigma: &[f64], noise_scale: f64, stream: &mut RngStream) -> Vec<f64> {
    y_true
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let z = stream.standard_normal();
            y + noise_scale * sigma[r % sigma.len()] * z
        })
        .collect()
}

struct Scored {
    record: ReplicateRecord,
    fit: FitResult,
}

/// Fit, optional subset selection and refit, then intervals and bands.
fn estimate_and_score<M: Model + ?Sized>(
    model: &M,
    cfg: &ScenarioConfig,
    data: &MeasurementSet,
    start: &[f64],
    prediction: &DesignMatrix,
    y_true_pred: &[f64],
) -> std::result::Result<Scored, String> {
    let scenario_mask = cfg.parameters.mask(model.n_params());
    let first = fit_wls(model, start, &cfg.bounds, &scenario_mask, data, &cfg.fit).map_err(|e| e.to_string())?;
    if !first.converged {
        return Err("estimation did not converge".into());
    }
    let mut n_identifiable = scenario_mask.n_active();
    let fit = match cfg.regularization.method() {
        None => first,
        Some(method) => {
            let sigma = model.sigma();
            let th = first.active_theta();
            let s_noise = scale_sensitivity(&first.jacobian, &th, Scaling::Noise(&sigma)).map_err(|e| e.to_string())?;
            let s_yao = scale_sensitivity(&first.jacobian, &th, Scaling::Yao(&first.predictions)).map_err(|e| e.to_string())?;
            let ident = regularize(method, &s_noise, &s_yao, &cfg.thresholds);
            n_identifiable = ident.identifiable.len();
            let reduced = scenario_mask.restrict_to(&ident.identifiable);
            if reduced == scenario_mask {
                first
            } else {
                let refit = fit_wls(model, &first.theta, &cfg.bounds, &reduced, data, &cfg.fit).map_err(|e| e.to_string())?;
                if !refit.converged {
                    return Err("refit after subset selection did not converge".into());
                }
                refit
            }
        }
    };
    let cov = fit.covariance().map_err(|e| e.to_string())?;
    let hw = parameter_ci(cov, fit.dof, cfg.beta).map_err(|e| e.to_string())?;
    let mut theta_hits = vec![None; model.n_params()];
    for (k, j) in fit.mask.active_indices().into_iter().enumerate() {
        theta_hits[j] = Some((fit.theta[j] - cfg.theta_true[j]).abs() <= hw[k]);
    }
    let (y_pred, s_pred) = stacked_jacobian(model, prediction, &fit.theta, &fit.mask).map_err(|e| e.to_string())?;
    let t = t_quantile(fit.dof, 0.5 * (1.0 + cfg.beta)).map_err(|e| e.to_string())?;
    let ny = model.n_responses();
    let mut prediction_sigma_all = Vec::with_capacity(y_pred.len());
    let mut prediction_hits = Vec::with_capacity(y_pred.len());
    for i in 0..prediction.len() {
        let block = s_pred.rows(i * ny, ny).clone_owned();
        for (k, sd) in prediction_sigma(&block, cov).into_iter().enumerate() {
            let r = i * ny + k;
            prediction_hits.push((y_pred[r] - y_true_pred[r]).abs() <= sd * t);
            prediction_sigma_all.push(sd);
        }
    }
    Ok(Scored {
        record: ReplicateRecord {
            theta: fit.theta.clone(),
            estimated: fit.mask.flags().to_vec(),
            theta_hits,
            prediction_hits,
            prediction_sigma: prediction_sigma_all,
            s_y: fit.s_y.clone(),
            n_identifiable,
        },
        fit,
    })
}

/// Per-replicate outcomes of a replicate study, in replicate order.
pub fn mc_replicates<M: Model + ?Sized>(
    model: &M,
    cfg: &ScenarioConfig,
    grids: &Grids,
) -> Result<Vec<std::result::Result<ReplicateRecord, String>>> {
    cfg.validate(model)?;
    let bounds = model.control_bounds();
    grids.measurement.check_bounds(&bounds)?;
    grids.prediction.check_bounds(&bounds)?;
    let y_true = stacked_response(model, &grids.measurement, &cfg.theta_true)?;
    let y_true_pred = stacked_response(model, &grids.prediction, &cfg.theta_true)?;
    let sigma = model.sigma();
    let ny = model.n_responses();
    let start = cfg.start();
    Ok((0..cfg.n_mc as u64)
        .into_par_iter()
        .map(|r| {
            let mut stream = RngStream::new(cfg.seed, r);
            let ym = perturb(&y_true, &sigma, cfg.noise_scale, &mut stream);
            let data = MeasurementSet::new(grids.measurement.clone(), ym, ny).map_err(|e| e.to_string())?;
            estimate_and_score(model, cfg, &data, &start, &grids.prediction, &y_true_pred).map(|s| s.record)
        })
        .collect())
}

fn context<'a, M: Model + ?Sized>(
    model: &M,
    cfg: &'a ScenarioConfig,
    mask: &'a ParameterMask,
    iteration: Option<usize>,
) -> ReportContext<'a> {
    ReportContext {
        label: &cfg.label,
        iteration,
        n_mc: cfg.n_mc,
        param_names: model.param_names(),
        response_names: model.response_names(),
        scenario_mask: mask,
        control_bounds: model.control_bounds(),
    }
}

/// Aggregates the outcomes of [`mc_replicates`]; failed replicates only count.
pub fn summarize_mc<M: Model + ?Sized>(
    model: &M,
    cfg: &ScenarioConfig,
    outcomes: &[std::result::Result<ReplicateRecord, String>],
) -> Result<McReport> {
    let records: Vec<ReplicateRecord> = outcomes.iter().filter_map(|o| o.as_ref().ok().cloned()).collect();
    let mask = cfg.parameters.mask(model.n_params());
    compute_metrics(&context(model, cfg, &mask, None), &records, None)
}

/// Replicate study on fixed grids.
pub fn run_mc<M: Model + ?Sized>(model: &M, cfg: &ScenarioConfig, grids: &Grids) -> Result<McReport> {
    let outcomes = mc_replicates(model, cfg, grids)?;
    summarize_mc(model, cfg, &outcomes)
}

/// Per-replicate history of the sequential loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SoedReplicate {
    /// one record per iteration
    pub records: Vec<ReplicateRecord>,
    /// proposed experiments in control units, one per iteration
    pub designs: Vec<Vec<f64>>,
}

/// Sequential estimation/design replicates, in replicate order.
pub fn soed_replicates<M: Model + ?Sized>(
    model: &M,
    cfg: &ScenarioConfig,
    init_design: &DesignMatrix,
    prediction: &DesignMatrix,
    n_iterations: usize,
    design: &DesignOptions,
) -> Result<Vec<std::result::Result<SoedReplicate, String>>> {
    cfg.validate(model)?;
    let bounds = model.control_bounds();
    init_design.check_bounds(&bounds)?;
    prediction.check_bounds(&bounds)?;
    let y_true_init = stacked_response(model, init_design, &cfg.theta_true)?;
    let y_true_pred = stacked_response(model, prediction, &cfg.theta_true)?;
    let sigma = model.sigma();
    let ny = model.n_responses();
    let start = cfg.start();
    let scenario_mask = cfg.parameters.mask(model.n_params());
    let n_steps = n_iterations.max(1);

    Ok((0..cfg.n_mc as u64)
        .into_par_iter()
        .map(|r| {
            let mut stream = RngStream::new(cfg.seed, r);
            let ym = perturb(&y_true_init, &sigma, cfg.noise_scale, &mut stream);
            let mut data = MeasurementSet::new(init_design.clone(), ym, ny).map_err(|e| e.to_string())?;
            let mut theta_start = start.clone();
            let mut out = SoedReplicate {
                records: Vec::with_capacity(n_steps),
                designs: Vec::with_capacity(n_iterations),
            };
            for it in 0..n_steps {
                let scored = estimate_and_score(model, cfg, &data, &theta_start, prediction, &y_true_pred)
                    .map_err(|e| format!("iteration {}: {e}", it + 1))?;
                out.records.push(scored.record);
                if n_iterations == 0 {
                    break;
                }
                let theta_hat = scored.fit.theta;
                let design_mask = match cfg.regularization {
                    RegularizationScenario::GoWithOed => &scored.fit.mask,
                    _ => &scenario_mask,
                };
                if design_mask.n_active() == 0 {
                    return Err(format!("iteration {}: no identifiable parameter left for design", it + 1));
                }
                let cand = design_next(model, &data.design, &theta_hat, design_mask, design)
                    .map_err(|e| format!("iteration {}: {e}", it + 1))?;
                let y_new = stacked_response(model, &cand.u_new, &cfg.theta_true).map_err(|e| e.to_string())?;
                let ym_new = perturb(&y_new, &sigma, cfg.noise_scale, &mut stream);
                let new = MeasurementSet::new(cand.u_new.clone(), ym_new, ny).map_err(|e| e.to_string())?;
                out.designs.extend(cand.u_new.rows().map(|row| row.to_vec()));
                data.append(&new);
                theta_start = theta_hat;
            }
            Ok(out)
        })
        .collect())
}

/// Sequential estimation/design study; one report per iteration. With
/// `n_iterations = 0` the initial design is fitted once and no experiment is
/// designed.
pub fn run_soed_pe<M: Model + ?Sized>(
    model: &M,
    cfg: &ScenarioConfig,
    init_design: &DesignMatrix,
    prediction: &DesignMatrix,
    n_iterations: usize,
    design: &DesignOptions,
) -> Result<Vec<McReport>> {
    let outcomes = soed_replicates(model, cfg, init_design, prediction, n_iterations, design)?;
    summarize_soed(model, cfg, &outcomes, n_iterations)
}

/// One report per iteration from the outcomes of [`soed_replicates`]. The
/// discrepancy at iteration `i` pools the experiments proposed up to `i`.
pub fn summarize_soed<M: Model + ?Sized>(
    model: &M,
    cfg: &ScenarioConfig,
    outcomes: &[std::result::Result<SoedReplicate, String>],
    n_iterations: usize,
) -> Result<Vec<McReport>> {
    let ok: Vec<&SoedReplicate> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let mask = cfg.parameters.mask(model.n_params());
    (0..n_iterations.max(1))
        .map(|it| {
            let records: Vec<ReplicateRecord> = ok.iter().map(|rep| rep.records[it].clone()).collect();
            let pooled: Vec<Vec<f64>> = ok
                .iter()
                .flat_map(|rep| {
                    let per_step = rep.designs.len() / n_iterations.max(1);
                    rep.designs.iter().take((it + 1) * per_step).cloned()
                })
                .collect();
            let designs = (n_iterations > 0).then_some(pooled.as_slice());
            compute_metrics(&context(model, cfg, &mask, Some(it + 1)), &records, designs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearSurrogate;

    fn linear_cfg(n_mc: usize) -> ScenarioConfig {
        ScenarioConfig::new("linear", vec![0.5, 2.0], ParameterBounds::unbounded(2), n_mc, 42)
    }

    fn linear_grids() -> Grids {
        Grids {
            measurement: DesignMatrix::new(1, linspace(0.0, 1.0, 20)).unwrap(),
            prediction: DesignMatrix::new(1, linspace(0.025, 0.975, 20)).unwrap(),
        }
    }

    #[test]
    fn sixteen_nrtl_parameter_scenarios() {
        let s = nrtl_parameter_scenarios();
        assert_eq!(s.len(), 16);
        let names: Vec<String> = crate::thermo::NRTL_NAMES.iter().map(|s| s.to_string()).collect();
        assert_eq!(s[5].label(&names), "alpha*");
        assert_eq!(s[15].label(&names), "alpha=0.6");
        for sc in &s {
            assert_eq!(ParameterScenario::from_label(&sc.label(&names), &names), Some(*sc));
        }
        assert_eq!(ParameterScenario::from_label("gamma*", &names), None);
        for r in [RegularizationScenario::None, RegularizationScenario::GoWithOed, RegularizationScenario::Pe(RegularizationMethod::Svd)] {
            assert_eq!(RegularizationScenario::from_label(&r.label()), Some(r));
        }
    }

    #[test]
    fn noiseless_single_replicate() {
        let mut cfg = linear_cfg(1);
        cfg.noise_scale = 0.0;
        let r = run_mc(&LinearSurrogate { sigma: 0.1 }, &cfg, &linear_grids()).unwrap();
        assert_eq!(r.q95_y, Some(1.0));
        assert_eq!(r.q95_theta, Some(1.0));
        assert_eq!(r.s_bar, vec![Some(0.0)]);
        assert_eq!(r.theta_mean, vec![Some(0.5), Some(2.0)]);
        assert_eq!(r.w_bar, None);
    }

    #[test]
    fn saturated_and_centre_metrics() {
        let mask = ParameterMask::all(1);
        let ctx = ReportContext {
            label: "t",
            iteration: None,
            n_mc: 2,
            param_names: vec!["p".into()],
            response_names: vec!["y".into()],
            scenario_mask: &mask,
            control_bounds: vec![(0.0, 1.0), (0.0, 2.0)],
        };
        let rec = ReplicateRecord {
            theta: vec![1.0],
            estimated: vec![true],
            theta_hits: vec![Some(true)],
            prediction_hits: vec![true, true],
            prediction_sigma: vec![0.1, 0.3],
            s_y: vec![0.2],
            n_identifiable: 1,
        };
        let centre = vec![vec![0.5, 1.0]];
        let r = compute_metrics(&ctx, &[rec.clone(), rec], Some(&centre)).unwrap();
        assert_eq!(r.q95_theta, Some(1.0));
        assert_eq!(r.q95_y, Some(1.0));
        assert!((r.sigma_bar[0].unwrap() - 0.2).abs() < 1e-15);
        assert!((r.d_u.unwrap() - 5.0 / 12.0).abs() < 1e-12);
        assert!(!r.failure_alarm);
    }

    #[test]
    fn reproducible_reports() {
        let model = LinearSurrogate { sigma: 0.1 };
        let a = run_mc(&model, &linear_cfg(30), &linear_grids()).unwrap();
        let b = run_mc(&model, &linear_cfg(30), &linear_grids()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_success, 30);
    }

    #[test]
    fn zero_iterations_matches_single_study() {
        let model = LinearSurrogate { sigma: 0.1 };
        let grids = linear_grids();
        let cfg = linear_cfg(12);
        let soed = run_soed_pe(&model, &cfg, &grids.measurement, &grids.prediction, 0, &DesignOptions::default()).unwrap();
        assert_eq!(soed.len(), 1);
        let mut mc = run_mc(&model, &cfg, &grids).unwrap();
        mc.iteration = Some(1);
        assert_eq!(soed[0], mc);
    }

    #[test]
    fn soed_accumulates_designs() {
        let model = LinearSurrogate { sigma: 0.1 };
        let cfg = linear_cfg(4);
        let init = DesignMatrix::new(1, vec![0.4, 0.5, 0.6]).unwrap();
        let pred = DesignMatrix::new(1, linspace(0.0, 1.0, 5)).unwrap();
        let reps = soed_replicates(&model, &cfg, &init, &pred, 3, &DesignOptions::default()).unwrap();
        for rep in reps {
            let rep = rep.unwrap();
            assert_eq!(rep.records.len(), 3);
            assert_eq!(rep.designs.len(), 3);
            // The linear model is best informed at the ends of the interval.
            assert!(rep.designs.iter().all(|u| u[0] == 0.0 || u[0] == 1.0));
        }
    }
}
