//! Binary NRTL activity coefficients, Wagner vapor pressures and the isobaric
//! bubble-point problem under the ideal-vapor isofugacity condition
//! `x^V_i·P = x^L_i·γ_i·P^s_i`.

use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::error::{Error, Result};

/// Number of binary NRTL parameters.
pub const N_NRTL: usize = 5;

/// Parameter names in vector order.
pub const NRTL_NAMES: [&str; N_NRTL] = ["A12", "B12", "A21", "B21", "alpha"];

/// Binary NRTL parameters with `τ_ij = A_ij + B_ij/T` and a shared
/// nonrandomness `α`.
///
/// The vector layout used by estimation and sensitivity code is
/// `[A12, B12, A21, B21, α]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrtlParams {
    pub a12: f64,
    /// kelvin
    pub b12: f64,
    pub a21: f64,
    /// kelvin
    pub b21: f64,
    pub alpha: f64,
}

/// Positions of the NRTL parameters in the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NrtlParam {
    A12,
    B12,
    A21,
    B21,
    Alpha,
}

impl NrtlParam {
    pub const ALL: [NrtlParam; N_NRTL] = [
        NrtlParam::A12,
        NrtlParam::B12,
        NrtlParam::A21,
        NrtlParam::B21,
        NrtlParam::Alpha,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        NRTL_NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name().eq_ignore_ascii_case(name))
    }
}

impl NrtlParams {
    pub fn new(a12: f64, b12: f64, a21: f64, b21: f64, alpha: f64) -> Self {
        Self {
            a12,
            b12,
            a21,
            b21,
            alpha,
        }
    }

    pub fn to_array(&self) -> [f64; N_NRTL] {
        [self.a12, self.b12, self.a21, self.b21, self.alpha]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != N_NRTL {
            return Err(Error::Shape(format!(
                "NRTL parameter vector has {} entries, expected {N_NRTL}",
                v.len()
            )));
        }
        Ok(Self::new(v[0], v[1], v[2], v[3], v[4]))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Parameters of the same mixture with the component labels exchanged.
    pub fn swapped(&self) -> Self {
        Self::new(self.a21, self.b21, self.a12, self.b12, self.alpha)
    }
}

/// `(τ12, τ21)` at temperature `t`.
pub fn tau_eval(t: f64, p: &NrtlParams) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    let [a12, b12, a21, b21, _] = p.to_array();
    Ok(tau_generic(t, &[a12, b12, a21, b21]))
}

#[inline]
fn tau_generic<R: Real>(t: R, p: &[R; 4]) -> (R, R) {
    (p[0] + p[1] / t, p[2] + p[3] / t)
}

/// `(ln γ1, ln γ2)` for arbitrary scalar types; `theta` is `[A12, B12, A21, B21, α]`.
#[inline]
pub(crate) fn ln_gamma_generic<R: Real>(x1: f64, t: R, theta: &[R; N_NRTL]) -> (R, R) {
    let x2 = 1.0 - x1;
    let (tau12, tau21) = tau_generic(t, &[theta[0], theta[1], theta[2], theta[3]]);
    let alpha = theta[4];
    let g12 = (-(alpha * tau12)).exp();
    let g21 = (-(alpha * tau21)).exp();
    // x1 + x2·G21 and x2 + x1·G12
    let d21 = g21 * x2 + x1;
    let d12 = g12 * x1 + x2;
    let r21 = g21 / d21;
    let r12 = g12 / d12;
    let ln_g1 = (tau21 * r21 * r21 + tau12 * g12 / (d12 * d12)) * (x2 * x2);
    let ln_g2 = (tau12 * r12 * r12 + tau21 * g21 / (d21 * d21)) * (x1 * x1);
    (ln_g1, ln_g2)
}

/// `(γ1, γ2)` from the binary NRTL expressions.
pub fn activity_coefficients(x1l: f64, t: f64, p: &NrtlParams) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&x1l) {
        return Err(Error::Domain(format!("liquid mole fraction {x1l} outside [0, 1]")));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    let (l1, l2) = ln_gamma_generic(x1l, t, &p.to_array());
    Ok((l1.exp(), l2.exp()))
}

/// Pure component with a reduced Wagner (2.5, 5) vapor-pressure correlation
/// `ln(P^s/Pc) = (a·τ + b·τ^1.5 + c·τ^2.5 + d·τ^5)/Tr`, `τ = 1 − Tr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureComponent {
    pub name: String,
    /// critical temperature, K
    pub tc: f64,
    /// critical pressure, Pa
    pub pc: f64,
    /// Wagner coefficients (a, b, c, d)
    pub wagner: [f64; 4],
    /// lower end of the validity range, K
    pub t_min: f64,
    /// upper end of the validity range, K
    pub t_max: f64,
}

impl PureComponent {
    pub fn new(name: &str, tc: f64, pc: f64, wagner: [f64; 4], t_min: f64, t_max: f64) -> Result<Self> {
        let c = Self {
            name: name.to_string(),
            tc,
            pc,
            wagner,
            t_min,
            t_max,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.tc, self.pc, self.t_min, self.t_max]
            .iter()
            .chain(self.wagner.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(format!("component {}: non-finite coefficient", self.name)));
        }
        if !(self.tc > 0.0 && self.pc > 0.0) {
            return Err(Error::Domain(format!(
                "component {}: Tc and Pc must be positive",
                self.name
            )));
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max <= self.tc) {
            return Err(Error::Domain(format!(
                "component {}: need 0 < T_min < T_max <= Tc",
                self.name
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn ln_psat<R: Real>(&self, t: R) -> R {
        let [a, b, c, d] = self.wagner;
        let tr = t / self.tc;
        let tau = -(tr - 1.0);
        let sq = tau.sqrt();
        let tau2 = tau * tau;
        let poly = tau * a + tau * sq * b + tau2 * sq * c + tau2 * tau2 * tau * d;
        poly / tr + self.pc.ln()
    }

    /// Temperature at which the vapor pressure equals `p`, clamped to the
    /// validity range when `p` lies outside the covered pressure span.
    pub fn saturation_temperature(&self, p: f64) -> f64 {
        let target = p.ln();
        let f = |t: f64| self.ln_psat(t) - target;
        let (lo, hi) = (self.t_min, self.t_max);
        let (flo, fhi) = (f(lo), f(hi));
        if flo >= 0.0 {
            return lo;
        }
        if fhi <= 0.0 {
            return hi;
        }
        brent(f, lo, hi, flo, fhi, 1e-12, 200).unwrap_or(0.5 * (lo + hi))
    }
}

/// Saturation pressure of `c` at `t`, Pa.
pub fn vapor_pressure(c: &PureComponent, t: f64) -> Result<f64> {
    if !(t >= c.t_min && t <= c.t_max) {
        return Err(Error::Range {
            what: "T",
            value: t,
            min: c.t_min,
            max: c.t_max,
        });
    }
    Ok(c.ln_psat(t).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AzeotropeType {
    #[default]
    None,
    PressureMax,
    PressureMin,
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub label: String,
    pub component1: PureComponent,
    pub component2: PureComponent,
    pub nrtl: NrtlParams,
    #[serde(default)]
    pub azeotrope: AzeotropeType,
}

impl Mixture {
    pub fn new(
        label: &str,
        component1: PureComponent,
        component2: PureComponent,
        nrtl: NrtlParams,
        azeotrope: AzeotropeType,
    ) -> Result<Self> {
        let m = Self {
            label: label.to_string(),
            component1,
            component2,
            nrtl,
            azeotrope,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.component1.validate()?;
        self.component2.validate()?;
        if self.component1 == self.component2 || self.component1.name == self.component2.name {
            return Err(Error::Domain(format!(
                "mixture {}: components must be distinct",
                self.label
            )));
        }
        if !self.nrtl.is_finite() {
            return Err(Error::Domain(format!("mixture {}: non-finite NRTL parameter", self.label)));
        }
        let (lo, hi) = self.temperature_range();
        if lo >= hi {
            return Err(Error::Domain(format!(
                "mixture {}: component validity ranges do not overlap",
                self.label
            )));
        }
        Ok(())
    }

    /// Joint validity range of both vapor-pressure correlations.
    pub fn temperature_range(&self) -> (f64, f64) {
        (
            self.component1.t_min.max(self.component2.t_min),
            self.component1.t_max.min(self.component2.t_max),
        )
    }

    /// The same system with components 1 and 2 exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            label: format!("{} (swapped)", self.label),
            component1: self.component2.clone(),
            component2: self.component1.clone(),
            nrtl: self.nrtl.swapped(),
            azeotrope: self.azeotrope,
        }
    }

    pub fn with_nrtl(&self, nrtl: NrtlParams) -> Self {
        Self {
            nrtl,
            ..self.clone()
        }
    }
}

/// Bubble-point state of a binary liquid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VleState {
    pub x1l: f64,
    /// Pa
    pub p: f64,
    /// K
    pub t: f64,
    pub x1v: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl VleState {
    /// Relative isofugacity residuals `|x^V_i·P − x^L_i·γ_i·P^s_i| / P` for both components.
    pub fn isofugacity_residuals(&self, m: &Mixture) -> Result<[f64; 2]> {
        let ps1 = vapor_pressure(&m.component1, self.t)?;
        let ps2 = vapor_pressure(&m.component2, self.t)?;
        let r1 = (self.x1v * self.p - self.x1l * self.gamma1 * ps1).abs() / self.p;
        let r2 = ((1.0 - self.x1v) * self.p - (1.0 - self.x1l) * self.gamma2 * ps2).abs() / self.p;
        Ok([r1, r2])
    }
}

/// Scaled bubble-point residual `(Σ x_i γ_i P^s_i − P)/P` and the vapor
/// fraction, generic for sensitivity propagation. The vapor fraction is
/// normalized by the partial-pressure sum so it stays inside [0, 1]; at the
/// root this equals `x1 γ1 P^s_1 / P` and has the same total derivative.
#[inline]
pub(crate) fn bubble_residual<R: Real>(
    x1: f64,
    p: f64,
    t: R,
    theta: &[R; N_NRTL],
    m: &Mixture,
) -> (R, R) {
    let (l1, l2) = ln_gamma_generic(x1, t, theta);
    let ln_p = p.ln();
    let k1 = (l1 + m.component1.ln_psat(t) - ln_p).exp();
    let k2 = (l2 + m.component2.ln_psat(t) - ln_p).exp();
    let y1 = k1 * x1;
    let sum = y1 + k2 * (1.0 - x1);
    (sum - 1.0, y1 / sum)
}

/// Widening of the pure-component saturation bracket, K.
const BRACKET_MARGIN: f64 = 20.0;
const RESIDUAL_TOL: f64 = 1e-15;

/// Solve the isobaric bubble-point temperature and vapor composition for the
/// mixture's own NRTL parameters.
pub fn bubble_point(x1l: f64, p: f64, m: &Mixture) -> Result<VleState> {
    bubble_point_with(x1l, p, &m.nrtl, m)
}

/// Bubble point with NRTL parameters overriding those stored on the mixture.
pub fn bubble_point_with(x1l: f64, p: f64, nrtl: &NrtlParams, m: &Mixture) -> Result<VleState> {
    if !(0.0..=1.0).contains(&x1l) {
        return Err(Error::Domain(format!("liquid mole fraction {x1l} outside [0, 1]")));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Domain(format!("pressure must be positive, got {p}")));
    }
    let theta = nrtl.to_array();
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("non-finite NRTL parameter".into()));
    }
    let (t_lo_valid, t_hi_valid) = m.temperature_range();
    let ts1 = m.component1.saturation_temperature(p);
    let ts2 = m.component2.saturation_temperature(p);
    let t_lo = (ts1.min(ts2) - BRACKET_MARGIN).max(t_lo_valid);
    let t_hi = (ts1.max(ts2) + BRACKET_MARGIN).min(t_hi_valid);

    let f = |t: f64| bubble_residual(x1l, p, t, &theta, m).0;
    let (f_lo, f_hi) = (f(t_lo), f(t_hi));
    if !(f_lo.is_finite() && f_hi.is_finite()) || f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::Bracket {
            t_low: t_lo,
            t_high: t_hi,
            f_low: f_lo * p,
            f_high: f_hi * p,
        });
    }
    let t = brent(f, t_lo, t_hi, f_lo, f_hi, RESIDUAL_TOL, 200)
        .ok_or_else(|| Error::Convergence(format!("bubble point at x1L = {x1l}, P = {p} Pa")))?;
    let (r, y1) = bubble_residual(x1l, p, t, &theta, m);
    if !(r.abs() <= 1e-10) {
        return Err(Error::Convergence(format!(
            "bubble point at x1L = {x1l}, P = {p} Pa (residual {r:e})"
        )));
    }
    let (l1, l2) = ln_gamma_generic(x1l, t, &theta);
    Ok(VleState {
        x1l,
        p,
        t,
        x1v: y1,
        gamma1: l1.exp(),
        gamma2: l2.exp(),
    })
}

/// Brent's bracketed root finder. Stops when `|f| <= ftol` or the bracket has
/// collapsed to a few ulps.
pub(crate) fn brent<F: Fn(f64) -> f64>(
    f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    ftol: f64,
    max_iter: usize,
) -> Option<f64> {
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs();
        let m = 0.5 * (c - b);
        if fb.abs() <= ftol || m.abs() <= tol {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn ideal(m: &Mixture) -> Mixture {
        m.with_nrtl(NrtlParams::new(0.0, 0.0, 0.0, 0.0, 0.3))
    }

    #[test]
    fn tau_hand_value() {
        let p = NrtlParams::new(0.568, -54.8, -0.915, 882.0, 0.3);
        let (t12, t21) = tau_eval(300.0, &p).unwrap();
        assert!((t12 - 0.385_333_333_333_333_3).abs() < 1e-12);
        assert!((t21 - 2.025).abs() < 1e-12);
    }

    #[test]
    fn tau_zero_and_constant_cases() {
        let zero = NrtlParams::new(0.0, 0.0, 0.0, 0.0, 0.3);
        for t in [200.0, 350.0, 500.0] {
            assert_eq!(tau_eval(t, &zero).unwrap(), (0.0, 0.0));
        }
        let c = NrtlParams::new(0.4, 0.0, -0.2, 0.0, 0.3);
        assert_eq!(tau_eval(250.0, &c).unwrap(), tau_eval(410.0, &c).unwrap());
        assert_eq!(tau_eval(250.0, &c).unwrap(), (0.4, -0.2));
    }

    #[test]
    fn tau_rejects_non_positive_temperature() {
        let p = NrtlParams::new(0.0, 0.0, 0.0, 0.0, 0.3);
        assert!(matches!(tau_eval(0.0, &p), Err(Error::Domain(_))));
        assert!(matches!(tau_eval(-3.0, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn ideal_mixture_has_unit_activity() {
        let p = NrtlParams::new(0.0, 0.0, 0.0, 0.0, 0.47);
        for i in 0..=10 {
            let x = f64::from(i) / 10.0;
            let (g1, g2) = activity_coefficients(x, 330.0, &p).unwrap();
            assert_eq!((g1, g2), (1.0, 1.0));
        }
    }

    #[test]
    fn pure_component_limits() {
        let p = fixtures::ethbenz_like().nrtl;
        let (g1, _) = activity_coefficients(1.0, 340.0, &p).unwrap();
        let (_, g2) = activity_coefficients(0.0, 340.0, &p).unwrap();
        assert!((g1 - 1.0).abs() <= 1e-10);
        assert!((g2 - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn infinite_dilution_limit() {
        let p = fixtures::ethbenz_like().nrtl;
        let t = 345.0;
        let (t12, t21) = tau_eval(t, &p).unwrap();
        let expected = t21 + t12 * (-p.alpha * t12).exp();
        let (g1, _) = activity_coefficients(1e-8, t, &p).unwrap();
        assert!((g1.ln() - expected).abs() < 1e-6, "{} vs {expected}", g1.ln());
    }

    #[test]
    fn activity_rejects_bad_composition() {
        let p = fixtures::ethbenz_like().nrtl;
        assert!(matches!(activity_coefficients(1.2, 340.0, &p), Err(Error::Domain(_))));
        assert!(matches!(activity_coefficients(-0.1, 340.0, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn gibbs_duhem_holds() {
        let p = fixtures::ethbenz_like().nrtl;
        let t = 340.0;
        let h = 1e-5;
        for i in 1..=20 {
            let x = f64::from(i) / 21.0;
            let lg = |x: f64| {
                let (a, b) = activity_coefficients(x, t, &p).unwrap();
                (a.ln(), b.ln())
            };
            let (p1, p2) = lg(x + h);
            let (m1, m2) = lg(x - h);
            let d1 = (p1 - m1) / (2.0 * h);
            let d2 = (p2 - m2) / (2.0 * h);
            let sum = x * d1 + (1.0 - x) * d2;
            assert!(sum.abs() <= 1e-6, "x = {x}: {sum}");
        }
    }

    #[test]
    fn vapor_pressure_critical_identity_and_monotonicity() {
        let m = fixtures::ethbenz_like();
        let mut c = m.component1.clone();
        c.t_max = c.tc;
        assert!((vapor_pressure(&c, c.tc).unwrap() - c.pc).abs() <= 1e-9 * c.pc);
        let mut last = 0.0;
        let mut t = c.t_min;
        while t <= c.t_max {
            let ps = vapor_pressure(&c, t).unwrap();
            assert!(ps > last);
            last = ps;
            t += 1.0;
        }
    }

    #[test]
    fn vapor_pressure_range_error() {
        let c = fixtures::ethbenz_like().component2;
        assert!(matches!(
            vapor_pressure(&c, c.t_min - 1.0),
            Err(Error::Range { what: "T", .. })
        ));
    }

    #[test]
    fn pure_bubble_point_is_saturation() {
        let m = fixtures::ethbenz_like();
        let p = 1.0e5;
        let s = bubble_point(1.0, p, &m).unwrap();
        assert_eq!(s.x1v, 1.0);
        let ps = vapor_pressure(&m.component1, s.t).unwrap();
        assert!((ps - p).abs() / p < 1e-12);
    }

    #[test]
    fn raoult_reduction() {
        let m = ideal(&fixtures::ethbenz_like());
        let p = 0.8e5;
        let x = 0.37;
        let s = bubble_point(x, p, &m).unwrap();
        let ps1 = vapor_pressure(&m.component1, s.t).unwrap();
        let ps2 = vapor_pressure(&m.component2, s.t).unwrap();
        assert!(((x * ps1 + (1.0 - x) * ps2) - p).abs() / p < 1e-12);
        assert!((s.x1v - x * ps1 / p).abs() < 1e-14);
    }

    #[test]
    fn bracket_failure_reports_interval() {
        let m = fixtures::ethbenz_like();
        // Pressure far above the covered saturation span.
        let err = bubble_point(0.5, 1e9, &m).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }), "{err}");
    }

    #[test]
    fn swap_symmetry() {
        let m = fixtures::ethbenz_like();
        let s = m.swapped();
        for (x, p) in [(0.1, 0.5e5), (0.45, 1.0e5), (0.93, 1.5e5)] {
            let a = bubble_point(x, p, &m).unwrap();
            let b = bubble_point(1.0 - x, p, &s).unwrap();
            assert!((a.t - b.t).abs() <= 1e-9 * a.t);
            assert!((a.x1v - (1.0 - b.x1v)).abs() <= 1e-9);
        }
    }
}
