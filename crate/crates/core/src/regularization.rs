//! Subset selection: split the columns of a scaled sensitivity matrix into
//! identifiable and non-identifiable parameters.
//!
//! All indices are column positions of the matrix handed in, i.e. positions
//! in the active-parameter list of the caller.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegularizationMethod {
    /// eigenvalue thresholding of the information matrix
    E,
    /// rank from the singular values, order from pivoted QR
    Svd,
    /// forward selection on Yao-scaled columns
    Fs,
    /// exhaustive determinant maximization
    Go,
}

impl RegularizationMethod {
    pub const ALL: [RegularizationMethod; 4] = [
        RegularizationMethod::E,
        RegularizationMethod::Go,
        RegularizationMethod::Svd,
        RegularizationMethod::Fs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegularizationMethod::E => "E",
            RegularizationMethod::Svd => "SVD",
            RegularizationMethod::Fs => "FS",
            RegularizationMethod::Go => "GO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub eigenvalue: f64,
    pub condition: f64,
    pub forward_selection: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eigenvalue: 1e-3,
            condition: 1e3,
            forward_selection: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostics {
    /// Information-matrix eigenvalues of the retained set, ascending.
    Eigenvalues(Vec<f64>),
    /// Singular values of the full matrix, descending.
    SingularValues(Vec<f64>),
    /// Deflated column norm of every selection step, in pivot order.
    ColumnMagnitudes(Vec<f64>),
    /// Information-matrix determinant of the chosen subset.
    SubsetDeterminant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiabilityResult {
    /// ascending
    pub identifiable: Vec<usize>,
    /// ascending
    pub fixed: Vec<usize>,
    /// Every column, most identifiable first.
    pub ranking: Vec<usize>,
    pub diagnostics: Diagnostics,
}

impl IdentifiabilityResult {
    fn from_ranking(ranking: Vec<usize>, n_identifiable: usize, diagnostics: Diagnostics) -> Self {
        let mut identifiable = ranking[..n_identifiable].to_vec();
        let mut fixed = ranking[n_identifiable..].to_vec();
        identifiable.sort_unstable();
        fixed.sort_unstable();
        Self {
            identifiable,
            fixed,
            ranking,
            diagnostics,
        }
    }
}

const TIE_TOL: f64 = 1e-10;

/// Iteratively drops the parameter dominating the eigenvector of the
/// smallest eigenvalue of `SᵀS` until that eigenvalue reaches `eps`.
pub fn regularize_e(s: &DMatrix<f64>, eps: f64) -> IdentifiabilityResult {
    let fim = s.transpose() * s;
    let mut keep: Vec<usize> = (0..s.ncols()).collect();
    let mut removed = Vec::new();
    let mut eigenvalues = Vec::new();
    while !keep.is_empty() {
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |i, j| fim[(keep[i], keep[j])]);
        let eig = SymmetricEigen::new(sub);
        let (imin, lmin) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, l)| if l < acc.1 { (i, l) } else { acc });
        if lmin >= eps {
            let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            eigenvalues = ev;
            break;
        }
        let v = eig.eigenvectors.column(imin);
        let vmax = v.amax();
        let pos = (0..keep.len())
            .find(|&k| v[k].abs() >= vmax * (1.0 - TIE_TOL))
            .unwrap_or(0);
        removed.push(keep.remove(pos));
    }
    let n_id = keep.len();
    let mut ranking = keep;
    ranking.extend(removed.iter().rev());
    IdentifiabilityResult::from_ranking(ranking, n_id, Diagnostics::Eigenvalues(eigenvalues))
}

/// Greedy column selection by largest deflated Euclidean norm with
/// Householder deflation. Returns the pivot order and the norm at each step.
pub(crate) fn pivot_order(s: &DMatrix<f64>) -> Vec<(usize, f64)> {
    let (m, n) = s.shape();
    let mut a = s.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let norms: Vec<f64> = (k..n)
            .map(|j| if k < m { a.view((k, j), (m - k, 1)).norm() } else { 0.0 })
            .collect();
        let best = norms.iter().copied().fold(0.0, f64::max);
        // Ties go to the lowest original index among the candidates.
        let p = (k..n)
            .filter(|&j| norms[j - k] >= best * (1.0 - TIE_TOL))
            .min_by_key(|&j| perm[j])
            .unwrap_or(k);
        a.swap_columns(k, p);
        perm.swap(k, p);
        out.push((perm[k], norms[p - k]));
        if k >= m || best == 0.0 {
            continue;
        }
        // Householder reflection zeroing a[k+1.., k].
        let x = a.view((k, k), (m - k, 1)).clone_owned();
        let alpha = -x[0].signum() * x.norm();
        let mut v = x;
        v[0] -= alpha;
        let vn2 = v.norm_squared();
        if vn2 > 0.0 {
            for j in k..n {
                let mut col = a.view_mut((k, j), (m - k, 1));
                let d = v.dot(&col) * 2.0 / vn2;
                col -= &v * d;
            }
        }
    }
    out
}

/// Rank from the singular-value ratio, order from column-pivoted QR.
pub fn regularize_svd(s: &DMatrix<f64>, max_condition: f64) -> IdentifiabilityResult {
    let mut sv: Vec<f64> = s.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let r = match sv.first() {
        Some(&s1) if s1 > 0.0 => sv.iter().take_while(|&&v| v > 0.0 && s1 / v <= max_condition).count(),
        _ => 0,
    };
    let ranking: Vec<usize> = pivot_order(s).into_iter().map(|(j, _)| j).collect();
    IdentifiabilityResult::from_ranking(ranking, r, Diagnostics::SingularValues(sv))
}

/// Forward selection on Yao-scaled sensitivities: accept pivots while the
/// deflated norm is at least `eps`. May select nothing.
pub fn regularize_fs(s_yao: &DMatrix<f64>, eps: f64) -> IdentifiabilityResult {
    let order = pivot_order(s_yao);
    let n_id = order.iter().take_while(|(_, norm)| *norm >= eps).count();
    let magnitudes = order.iter().map(|&(_, v)| v).collect();
    let ranking = order.into_iter().map(|(j, _)| j).collect();
    IdentifiabilityResult::from_ranking(ranking, n_id, Diagnostics::ColumnMagnitudes(magnitudes))
}

/// Largest supported column count for the exhaustive search.
pub const GO_MAX_COLUMNS: usize = 20;

fn subset_det(fim: &DMatrix<f64>, cols: &[usize]) -> f64 {
    DMatrix::from_fn(cols.len(), cols.len(), |i, j| fim[(cols[i], cols[j])]).determinant()
}

/// `true` when subset `a` (with determinant `da`) beats the incumbent `b`.
fn go_better(da: f64, a: &[usize], db: f64, b: &[usize]) -> bool {
    let scale = da.abs().max(db.abs());
    if (da - db).abs() > 1e-12 * scale {
        return da > db;
    }
    if a.len() != b.len() {
        return a.len() > b.len();
    }
    a < b
}

/// Exhaustive search for the column subset of largest `det(S_Jᵀ S_J)`.
/// Ties go to the larger subset, then to the lexicographically smaller one.
///
/// # Panics
/// When the matrix has more than [`GO_MAX_COLUMNS`] columns.
pub fn regularize_go(s: &DMatrix<f64>) -> IdentifiabilityResult {
    let n = s.ncols();
    assert!(n <= GO_MAX_COLUMNS, "exhaustive subset search limited to {GO_MAX_COLUMNS} columns");
    if n == 0 {
        return IdentifiabilityResult::from_ranking(Vec::new(), 0, Diagnostics::SubsetDeterminant(0.0));
    }
    let fim = s.transpose() * s;
    let mut best: Vec<usize> = Vec::new();
    let mut best_det = f64::NEG_INFINITY;
    let mut cols = Vec::with_capacity(n);
    for bits in 1u32..(1u32 << n) {
        cols.clear();
        cols.extend((0..n).filter(|&j| bits & (1 << j) != 0));
        let d = subset_det(&fim, &cols);
        if best.is_empty() || go_better(d, &cols, best_det, &best) {
            best_det = d;
            best.clone_from(&cols);
        }
    }
    let n_id = best.len();
    let mut ranking = best.clone();
    ranking.extend((0..n).filter(|j| !best.contains(j)));
    IdentifiabilityResult::from_ranking(ranking, n_id, Diagnostics::SubsetDeterminant(best_det))
}

pub fn regularize(
    method: RegularizationMethod,
    s_noise: &DMatrix<f64>,
    s_yao: &DMatrix<f64>,
    thresholds: &Thresholds,
) -> IdentifiabilityResult {
    match method {
        RegularizationMethod::E => regularize_e(s_noise, thresholds.eigenvalue),
        RegularizationMethod::Svd => regularize_svd(s_noise, thresholds.condition),
        RegularizationMethod::Fs => regularize_fs(s_yao, thresholds.forward_selection),
        RegularizationMethod::Go => regularize_go(s_noise),
    }
}
