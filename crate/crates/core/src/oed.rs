//! Classical design criteria and a multistart search for the next
//! experiment(s).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fisher_information, invert_information};
use crate::model::{linspace, stacked_jacobian, DesignMatrix, Model, ParameterMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Criterion {
    /// trace of the covariance
    #[default]
    A,
    /// determinant of the covariance
    D,
    /// largest covariance eigenvalue
    E,
}

/// Criterion of an information matrix; `+∞` when it cannot be inverted.
pub fn criterion_from_information(fim: &DMatrix<f64>, criterion: Criterion) -> f64 {
    let Ok(c) = invert_information(fim) else {
        return f64::INFINITY;
    };
    match criterion {
        Criterion::A => c.trace(),
        Criterion::D => {
            let eig = SymmetricEigen::new(c);
            eig.eigenvalues.iter().product()
        }
        Criterion::E => SymmetricEigen::new(c).eigenvalues.max(),
    }
}

/// Criterion of the covariance `(SᵀC_M⁻¹S)⁻¹` of a stacked sensitivity matrix.
pub fn criterion_value(s_total: &DMatrix<f64>, sigma: &[f64], criterion: Criterion) -> f64 {
    criterion_from_information(&fisher_information(s_total, sigma), criterion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    pub criterion: Criterion,
    pub n_new: usize,
    pub n_starts: usize,
    pub max_iter: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            criterion: Criterion::A,
            n_new: 1,
            n_starts: 21,
            max_iter: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignCandidate {
    pub u_new: DesignMatrix,
    pub criterion: Criterion,
    pub value: f64,
    pub start_index: usize,
    /// Local optimum reached from every start (`+∞` for failed starts).
    pub start_values: Vec<f64>,
}

/// Uniform start lattice over the control box in unit coordinates. Two
/// controls use three levels of the second control times `n / 3` levels of
/// the first when `n` is a multiple of three.
pub fn start_lattice(n_controls: usize, n_starts: usize) -> Result<Vec<Vec<f64>>> {
    match n_controls {
        1 => Ok(linspace(0.0, 1.0, n_starts).into_iter().map(|v| vec![v]).collect()),
        2 => {
            let (n_second, n_first) = if n_starts >= 3 && n_starts % 3 == 0 {
                (3, n_starts / 3)
            } else {
                (1, n_starts)
            };
            let second = if n_second == 1 { vec![0.5] } else { linspace(0.0, 1.0, n_second) };
            let first = linspace(0.0, 1.0, n_first);
            Ok(second
                .iter()
                .flat_map(|&b| first.iter().map(move |&a| vec![a, b]))
                .collect())
        }
        d => Err(Error::Shape(format!("start lattice supports 1 or 2 controls, got {d}"))),
    }
}

struct Objective<'a, M: Model + ?Sized> {
    model: &'a M,
    theta: &'a [f64],
    mask: &'a ParameterMask,
    sigma: Vec<f64>,
    fim_exp: DMatrix<f64>,
    bounds: Vec<(f64, f64)>,
    criterion: Criterion,
    n_new: usize,
}

impl<M: Model + ?Sized> Objective<'_, M> {
    fn controls(&self, z: &[f64]) -> DesignMatrix {
        let d = self.bounds.len();
        let values = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = self.bounds[i % d];
                if v >= 1.0 {
                    hi
                } else {
                    lo + (hi - lo) * v.max(0.0)
                }
            })
            .collect();
        DesignMatrix::new(d, values).expect("design width")
    }

    /// Criterion value at unit coordinates `z`; `+∞` when infeasible.
    fn value(&self, z: &[f64]) -> f64 {
        let design = self.controls(z);
        match stacked_jacobian(self.model, &design, self.theta, self.mask) {
            Ok((_, s)) => {
                let fim = &self.fim_exp + fisher_information(&s, &self.sigma);
                criterion_from_information(&fim, self.criterion)
            }
            Err(_) => f64::INFINITY,
        }
    }

    fn log_value(&self, z: &[f64]) -> f64 {
        let v = self.value(z);
        if v > 0.0 {
            v.ln()
        } else if v == 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    }

    fn dim(&self) -> usize {
        self.n_new * self.bounds.len()
    }
}

const FD_STEP: f64 = 1e-6;

fn gradient<M: Model + ?Sized>(obj: &Objective<'_, M>, z: &[f64], f0: f64) -> Option<DVector<f64>> {
    let n = z.len();
    let mut g = DVector::zeros(n);
    let mut zp = z.to_vec();
    for i in 0..n {
        let xi = z[i];
        let (a, b) = ((xi - FD_STEP).max(0.0), (xi + FD_STEP).min(1.0));
        zp[i] = b;
        let fb = if b == xi { f0 } else { obj.log_value(&zp) };
        zp[i] = a;
        let fa = if a == xi { f0 } else { obj.log_value(&zp) };
        zp[i] = xi;
        let gi = (fb - fa) / (b - a);
        if !gi.is_finite() {
            return None;
        }
        g[i] = gi;
    }
    Some(g)
}

fn project(z: &mut [f64]) {
    for v in z {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Projected BFGS with Armijo backtracking on `[0, 1]^n`.
fn local_search<M: Model + ?Sized>(obj: &Objective<'_, M>, z0: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
    let n = z0.len();
    let mut z = z0.to_vec();
    let mut f = obj.log_value(&z);
    if !f.is_finite() {
        return (z, f);
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let Some(mut g) = gradient(obj, &z, f) else {
        return (z, f);
    };
    for _ in 0..max_iter {
        // Coordinates pinned at a face with the gradient pointing outward.
        let pinned: Vec<bool> = (0..n)
            .map(|i| (z[i] <= 0.0 && g[i] > 0.0) || (z[i] >= 1.0 && g[i] < 0.0))
            .collect();
        let free_grad: f64 = (0..n).filter(|&i| !pinned[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if free_grad <= 1e-10 {
            break;
        }
        let mut hr = h.clone();
        for i in 0..n {
            if pinned[i] {
                for j in 0..n {
                    hr[(i, j)] = 0.0;
                    hr[(j, i)] = 0.0;
                }
            }
        }
        let mut dir = -(&hr * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = DVector::from_fn(n, |i, _| if pinned[i] { 0.0 } else { -g[i] });
        }
        // Scale the first trial so no coordinate moves more than half the box.
        let mut t = (0.5 / dir.amax().max(1e-300)).min(1.0);
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            project(&mut trial);
            let step: f64 = trial.iter().zip(&z).zip(g.iter()).map(|((a, b), gi)| (a - b) * gi).sum();
            let ft = obj.log_value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step && ft < f {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((zn, fnew)) = accepted else {
            break;
        };
        let Some(gn) = gradient(obj, &zn, fnew) else {
            z = zn;
            f = fnew;
            break;
        };
        let s = DVector::from_fn(n, |i, _| zn[i] - z[i]);
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            h = &a * &h * a.transpose() + &s * s.transpose() * rho;
        }
        let small_step = s.amax() <= 1e-10;
        let small_change = (f - fnew).abs() <= 1e-12 * f.abs().max(1.0);
        z = zn;
        f = fnew;
        g = gn;
        if small_step || small_change {
            break;
        }
    }
    (z, f)
}

/// Multistart search for `n_new` experiments minimizing the criterion of
/// the combined design `U_exp ∪ U_new`.
pub fn design_next<M: Model + ?Sized>(
    model: &M,
    u_exp: &DesignMatrix,
    theta: &[f64],
    mask: &ParameterMask,
    options: &DesignOptions,
) -> Result<DesignCandidate> {
    if mask.n_active() == 0 {
        return Err(Error::Domain("design needs at least one active parameter".into()));
    }
    if options.n_new == 0 || options.n_starts == 0 {
        return Err(Error::Domain("design needs at least one new point and one start".into()));
    }
    let (_, s_exp) = stacked_jacobian(model, u_exp, theta, mask)?;
    let sigma = model.sigma();
    let obj = Objective {
        model,
        theta,
        mask,
        fim_exp: fisher_information(&s_exp, &sigma),
        sigma,
        bounds: model.control_bounds(),
        criterion: options.criterion,
        n_new: options.n_new,
    };
    let lattice = start_lattice(obj.bounds.len(), options.n_starts)?;
    let stride = (options.n_starts / options.n_new).max(1);
    let starts: Vec<Vec<f64>> = (0..options.n_starts)
        .map(|s| {
            (0..options.n_new)
                .flat_map(|k| lattice[(s + k * stride) % options.n_starts].iter().copied())
                .collect()
        })
        .collect();
    debug_assert!(starts.iter().all(|z| z.len() == obj.dim()));

    let results: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|z0| local_search(&obj, z0, options.max_iter))
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, (_, lv)) in results.iter().enumerate() {
        if lv.is_nan() || *lv == f64::INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| *lv < b) {
            best = Some((i, *lv));
        }
    }
    let start_values: Vec<f64> = results
        .iter()
        .map(|(_, lv)| if lv.is_finite() { lv.exp() } else { f64::INFINITY })
        .collect();
    let Some((idx, _)) = best else {
        let reasons = format!("criterion infinite or undefined at all {} local searches", results.len());
        return Err(Error::DesignFailed {
            starts: options.n_starts,
            reasons,
        });
    };
    let u_new = obj.controls(&results[idx].0);
    let value = obj.value(&results[idx].0);
    Ok(DesignCandidate {
        u_new,
        criterion: options.criterion,
        value,
        start_index: idx,
        start_values,
    })
}
