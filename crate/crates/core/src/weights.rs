//! A_p constants over Zygmund rectangles and the two-regime power weights.
//!
//! The power weight
//!   w(x) = |x1 x2|^{alpha-gamma} |x3|^gamma   if |x3| <= |x1 x2|,
//!          |x1 x2|^{alpha-delta} |x3|^delta   if |x3| >= |x1 x2|
//! is piecewise multiplicative, so its integral over an axis-parallel box
//! reduces, after splitting at the surface |x3| = |x1 x2|, to iterated 1D
//! power (and log) integrals. We evaluate those in closed form; an improper
//! endpoint with a non-integrable exponent surfaces as +infinity, which the
//! sweep drivers report as divergence. Custom weights fall back to
//! surface-split adaptive quadrature.

use crate::util::{adaptive_boxes, fit_drop_transient, ols_fit, Box3, OlsFit};
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("weight undefined on a coordinate hyperplane")]
    DomainZero,
    #[error("average diverges on this box")]
    Diverging,
    #[error("weight must be positive")]
    NonPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerWeightSpec {
    pub gamma: f64,
    pub alpha: f64,
    pub delta: f64,
}

impl PowerWeightSpec {
    pub fn new(gamma: f64, alpha: f64, delta: f64) -> Self {
        Self { gamma, alpha, delta }
    }

    pub fn eval(&self, x1: f64, x2: f64, x3: f64) -> Result<f64, WeightError> {
        if x1 == 0.0 || x2 == 0.0 || x3 == 0.0 {
            return Err(WeightError::DomainZero);
        }
        let s = (x1 * x2).abs();
        let t = x3.abs();
        Ok(if t <= s {
            s.powf(self.alpha - self.gamma) * t.powf(self.gamma)
        } else {
            s.powf(self.alpha - self.delta) * t.powf(self.delta)
        })
    }

    /// Exponents of w^{-1/(p-1)}, again a two-regime power weight.
    pub fn dual(&self, p: f64) -> Self {
        let q = -1.0 / (p - 1.0);
        Self { gamma: q * self.gamma, alpha: q * self.alpha, delta: q * self.delta }
    }

    /// Membership in A_{p,Z} per the power-weight characterization:
    /// gamma in (-1, p-1), alpha in (gamma-1, gamma+p-1),
    /// delta in (alpha-(p-1), alpha+1).
    pub fn admissible(&self, p: f64) -> bool {
        assert!(p > 1.0 && p.is_finite());
        let (g, a, d) = (self.gamma, self.alpha, self.delta);
        g > -1.0 && g < p - 1.0 && a > g - 1.0 && a < g + p - 1.0 && d > a - (p - 1.0) && d < a + 1.0
    }

    /// Integral over an arbitrary axis-parallel box; +infinity if divergent.
    pub fn box_integral(&self, lo: [f64; 3], hi: [f64; 3]) -> f64 {
        // even in each variable: fold everything into the positive octant
        let pieces = |a: f64, b: f64| -> Vec<(f64, f64)> {
            if a < 0.0 && b > 0.0 {
                vec![(0.0, -a), (0.0, b)]
            } else if b <= 0.0 {
                vec![(-b, -a)]
            } else {
                vec![(a, b)]
            }
        };
        let mut total = 0.0;
        for &(a1, b1) in &pieces(lo[0], hi[0]) {
            for &(a2, b2) in &pieces(lo[1], hi[1]) {
                for &(a3, b3) in &pieces(lo[2], hi[2]) {
                    total += self.box_integral_positive([a1, a2, a3], [b1, b2, b3]);
                    if total.is_infinite() {
                        return f64::INFINITY;
                    }
                }
            }
        }
        total
    }

    pub fn box_avg(&self, lo: [f64; 3], hi: [f64; 3]) -> f64 {
        let vol: f64 = (0..3).map(|d| hi[d] - lo[d]).product();
        self.box_integral(lo, hi) / vol
    }

    /// Closed-form integral over a box in the closed positive octant.
    fn box_integral_positive(&self, a: [f64; 3], b: [f64; 3]) -> f64 {
        let (g, al, d) = (self.gamma, self.alpha, self.delta);
        let (a3, b3) = (a[2], b[2]);
        // x3 near zero sits in the gamma regime as soon as s = x1 x2 > 0
        if a3 == 0.0 && g <= -1.0 {
            return f64::INFINITY;
        }
        let mut total = 0.0;

        // high region: s >= b3, pure gamma regime
        let c_high = power_integral(g, a3, b3);
        if c_high.is_infinite() {
            return f64::INFINITY;
        }
        total += c_high * g_integral(al - g, false, b3, f64::INFINITY, a, b);

        // low region: s <= a3, pure delta regime
        if a3 > 0.0 {
            let c_low = power_integral(d, a3, b3);
            if c_low.is_infinite() {
                return f64::INFINITY;
            }
            total += c_low * g_integral(al - d, false, 0.0, a3, a, b);
        }

        // band a3 < s < b3: the x3 integral splits at x3 = s
        // s^{al-g} (P_g(s) - P_g(a3)) + s^{al-d} (P_d(b3) - P_d(s))
        let mut terms: Vec<(f64, f64, bool)> = Vec::new(); // (coef, exponent, with_log)
        if is_log_exponent(g) {
            terms.push((1.0, al + 1.0, true));
            terms.push((-a3.ln(), al + 1.0, false));
        } else {
            terms.push((1.0 / (g + 1.0), al + 1.0, false));
            let pa = if a3 == 0.0 { 0.0 } else { a3.powf(g + 1.0) / (g + 1.0) };
            if pa != 0.0 {
                terms.push((-pa, al - g, false));
            }
        }
        if is_log_exponent(d) {
            terms.push((-1.0, al + 1.0, true));
            terms.push((b3.ln(), al + 1.0, false));
        } else {
            terms.push((-1.0 / (d + 1.0), al + 1.0, false));
            terms.push((b3.powf(d + 1.0) / (d + 1.0), al - d, false));
        }
        for (coef, e, with_log) in terms {
            if coef == 0.0 {
                continue;
            }
            let v = g_integral(e, with_log, a3, b3, a, b);
            if v.is_infinite() {
                return f64::INFINITY;
            }
            total += coef * v;
        }
        total
    }
}

fn is_log_exponent(e: f64) -> bool {
    (e + 1.0).abs() < 1e-9
}

/// Int_a^b x^e dx, allowing a = 0 (improper); +infinity when divergent.
fn power_integral(e: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if is_log_exponent(e) {
        if a == 0.0 {
            return f64::INFINITY;
        }
        return (b / a).ln();
    }
    let p = e + 1.0;
    if a == 0.0 {
        if p <= 0.0 {
            return f64::INFINITY;
        }
        return b.powf(p) / p;
    }
    (b.powf(p) - a.powf(p)) / p
}

// ---------------------------------------------------------------------------
// The 2D building block: Int over {x in [a1,b1]x[a2,b2], lo <= x1 x2 <= hi}
// of (x1 x2)^e (ln(x1 x2))^{0 or 1}, in closed form.
// ---------------------------------------------------------------------------

/// coef * x^pow * ln(x)^logp
#[derive(Debug, Clone, Copy)]
struct PowLog {
    coef: f64,
    pow: f64,
    logp: u8,
}

#[derive(Debug, Clone, Copy)]
enum Bound {
    Const(f64),
    /// value c / x1
    Scaled(f64),
}

impl Bound {
    fn value_at(&self, x1: f64) -> f64 {
        match *self {
            Bound::Const(c) => c,
            Bound::Scaled(c) => c / x1,
        }
    }
}

/// Terms representing P_e(bound(x1)) with P_e the antiderivative of x^e.
/// None marks a divergent evaluation (bound value 0 with non-integrable e).
fn p_terms(e: f64, bnd: Bound) -> Option<Vec<PowLog>> {
    match bnd {
        Bound::Const(c) => {
            if is_log_exponent(e) {
                if c == 0.0 {
                    return None;
                }
                Some(vec![PowLog { coef: c.ln(), pow: 0.0, logp: 0 }])
            } else if c == 0.0 {
                if e + 1.0 > 0.0 {
                    Some(vec![])
                } else {
                    None
                }
            } else {
                Some(vec![PowLog { coef: c.powf(e + 1.0) / (e + 1.0), pow: 0.0, logp: 0 }])
            }
        }
        Bound::Scaled(c) => {
            debug_assert!(c > 0.0);
            if is_log_exponent(e) {
                Some(vec![
                    PowLog { coef: c.ln(), pow: 0.0, logp: 0 },
                    PowLog { coef: -1.0, pow: 0.0, logp: 1 },
                ])
            } else {
                Some(vec![PowLog { coef: c.powf(e + 1.0) / (e + 1.0), pow: -(e + 1.0), logp: 0 }])
            }
        }
    }
}

/// Terms for Q_e(bound(x1)) with Q_e the antiderivative of x^e ln x.
fn q_terms(e: f64, bnd: Bound) -> Option<Vec<PowLog>> {
    match bnd {
        Bound::Const(c) => {
            if c == 0.0 {
                return if !is_log_exponent(e) && e + 1.0 > 0.0 { Some(vec![]) } else { None };
            }
            let q = if is_log_exponent(e) {
                0.5 * c.ln() * c.ln()
            } else {
                let p = e + 1.0;
                c.powf(p) * (c.ln() / p - 1.0 / (p * p))
            };
            Some(vec![PowLog { coef: q, pow: 0.0, logp: 0 }])
        }
        Bound::Scaled(c) => {
            debug_assert!(c > 0.0);
            if is_log_exponent(e) {
                // ln^2(c/x)/2 = (ln c - ln x)^2 / 2
                let lc = c.ln();
                Some(vec![
                    PowLog { coef: 0.5 * lc * lc, pow: 0.0, logp: 0 },
                    PowLog { coef: -lc, pow: 0.0, logp: 1 },
                    PowLog { coef: 0.5, pow: 0.0, logp: 2 },
                ])
            } else {
                let p = e + 1.0;
                let cp = c.powf(p);
                Some(vec![
                    PowLog { coef: cp * (c.ln() / p - 1.0 / (p * p)), pow: -p, logp: 0 },
                    PowLog { coef: -cp / p, pow: -p, logp: 1 },
                ])
            }
        }
    }
}

/// Antiderivative of coef * x^pow * ln(x)^logp evaluated at x > 0.
fn powlog_antideriv(t: &PowLog, x: f64) -> f64 {
    let p = t.pow + 1.0;
    if p.abs() < 1e-9 {
        let l = x.ln();
        return t.coef * match t.logp {
            0 => l,
            1 => 0.5 * l * l,
            _ => l * l * l / 3.0,
        };
    }
    let xp = x.powf(p);
    let l = x.ln();
    t.coef
        * xp
        * match t.logp {
            0 => 1.0 / p,
            1 => l / p - 1.0 / (p * p),
            _ => l * l / p - 2.0 * l / (p * p) + 2.0 / (p * p * p),
        }
}

/// Int_a^b of a PowLog term list; a may be 0. None = divergent.
fn integrate_powlog(terms: &[PowLog], a: f64, b: f64) -> Option<f64> {
    let mut s = 0.0;
    for t in terms {
        if t.coef == 0.0 {
            continue;
        }
        let upper = powlog_antideriv(t, b);
        let lower = if a == 0.0 {
            if t.pow + 1.0 > 1e-9 {
                0.0
            } else {
                return None;
            }
        } else {
            powlog_antideriv(t, a)
        };
        s += upper - lower;
    }
    Some(s)
}

/// The region integral described above; +infinity when divergent.
fn g_integral(e: f64, with_log: bool, lo: f64, hi: f64, a: [f64; 3], b: [f64; 3]) -> f64 {
    let (a1, b1, a2, b2) = (a[0], b[0], a[1], b[1]);
    if hi <= lo || b1 <= a1 || b2 <= a2 {
        return 0.0;
    }
    let mut brk = vec![a1, b1];
    for &(num, den) in &[(lo, b2), (lo, a2), (hi, b2), (hi, a2)] {
        if den > 0.0 && num > 0.0 && num.is_finite() {
            let x = num / den;
            if x > a1 && x < b1 {
                brk.push(x);
            }
        }
    }
    brk.sort_by(|x, y| x.partial_cmp(y).unwrap());
    brk.dedup();
    let mut total = 0.0;
    for seg in brk.windows(2) {
        let (p, q) = (seg[0], seg[1]);
        let xm = 0.5 * (p + q);
        let upper = if hi.is_infinite() || hi / xm >= b2 { Bound::Const(b2) } else { Bound::Scaled(hi) };
        let lower = if lo <= 0.0 || lo / xm <= a2 { Bound::Const(a2) } else { Bound::Scaled(lo) };
        if upper.value_at(xm) <= lower.value_at(xm) {
            continue;
        }
        let mut terms: Vec<PowLog> = Vec::new();
        let (pu, pl) = match (p_terms(e, upper), p_terms(e, lower)) {
            (Some(u), Some(l)) => (u, l),
            _ => return f64::INFINITY,
        };
        if with_log {
            // x2-integral of x2^e ln(x1 x2) = ln(x1) dP_e + dQ_e
            for (src, sign) in [(&pu, 1.0), (&pl, -1.0)] {
                for t in src.iter() {
                    terms.push(PowLog { coef: sign * t.coef, pow: t.pow, logp: t.logp + 1 });
                }
            }
            let (qu, ql) = match (q_terms(e, upper), q_terms(e, lower)) {
                (Some(u), Some(l)) => (u, l),
                _ => return f64::INFINITY,
            };
            for (src, sign) in [(&qu, 1.0), (&ql, -1.0)] {
                for t in src.iter() {
                    terms.push(PowLog { coef: sign * t.coef, ..*t });
                }
            }
        } else {
            for (src, sign) in [(&pu, 1.0), (&pl, -1.0)] {
                for t in src.iter() {
                    terms.push(PowLog { coef: sign * t.coef, ..*t });
                }
            }
        }
        // multiply by x1^e
        for t in &mut terms {
            t.pow += e;
        }
        match integrate_powlog(&terms, p, q) {
            Some(v) => total += v,
            None => return f64::INFINITY,
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Weight functions
// ---------------------------------------------------------------------------

pub type WeightEval = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// A positive weight given in closed form or numerically.
#[derive(Clone)]
pub enum WeightFunction {
    Flat,
    Power(PowerWeightSpec),
    Custom(WeightEval),
}

impl std::fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Flat => write!(f, "Flat"),
            Self::Power(s) => write!(f, "Power({s:?})"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl WeightFunction {
    pub fn power(gamma: f64, alpha: f64, delta: f64) -> Self {
        Self::Power(PowerWeightSpec::new(gamma, alpha, delta))
    }

    pub fn eval(&self, x1: f64, x2: f64, x3: f64) -> Result<f64, WeightError> {
        match self {
            Self::Flat => Ok(1.0),
            Self::Power(s) => s.eval(x1, x2, x3),
            Self::Custom(f) => {
                let v = f(x1, x2, x3);
                if v > 0.0 {
                    Ok(v)
                } else {
                    Err(WeightError::NonPositive)
                }
            }
        }
    }

    /// The dual weight w^{-1/(p-1)}.
    pub fn dual(&self, p: f64) -> Self {
        match self {
            Self::Flat => Self::Flat,
            Self::Power(s) => Self::Power(s.dual(p)),
            Self::Custom(f) => {
                let f = f.clone();
                let q = -1.0 / (p - 1.0);
                Self::Custom(Arc::new(move |x1, x2, x3| f(x1, x2, x3).powf(q)))
            }
        }
    }

    /// Average over an axis-parallel box. Power weights use the closed form;
    /// custom weights use adaptive quadrature on sub-boxes split along the
    /// slab that contains the surface |x3| = |x1 x2|.
    pub fn avg(&self, lo: [f64; 3], hi: [f64; 3]) -> Result<f64, WeightError> {
        match self {
            Self::Flat => Ok(1.0),
            Self::Power(s) => {
                let v = s.box_avg(lo, hi);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(WeightError::Diverging)
                }
            }
            Self::Custom(f) => {
                let mut cuts = vec![lo[2], hi[2]];
                for c in [lo[0] * lo[1], lo[0] * hi[1], hi[0] * lo[1], hi[0] * hi[1]] {
                    for s in [c, -c] {
                        if s > lo[2] && s < hi[2] {
                            cuts.push(s);
                        }
                    }
                }
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                cuts.dedup();
                let boxes: Vec<Box3> = cuts
                    .windows(2)
                    .map(|w| Box3 { lo: [lo[0], lo[1], w[0]], hi: [hi[0], hi[1], w[1]] })
                    .collect();
                let r = adaptive_boxes(&mut |x, y, z| f(x, y, z), &boxes, 1e-6, 0.0, 8000);
                if !r.value.is_finite() || (!r.converged && r.err > 1e-3 * r.value.abs()) {
                    return Err(WeightError::Diverging);
                }
                let vol: f64 = (0..3).map(|d| hi[d] - lo[d]).product();
                Ok(r.value / vol)
            }
        }
    }
}

/// Cell averages of a weight on the window grid, for weighted norms.
pub fn cell_averages(
    w: &WeightFunction,
    l1: u32,
    l2: u32,
) -> Result<crate::grid::GridFunction3D, WeightError> {
    let mut g = crate::grid::GridFunction3D::zeros(l1, l2);
    let (n1, n2, n3) = (g.n1(), g.n2(), g.n3());
    let (h1, h2, h3) = g.cell_widths();
    for c1 in 0..n1 {
        for c2 in 0..n2 {
            for c3 in 0..n3 {
                let lo = [c1 as f64 * h1, c2 as f64 * h2, c3 as f64 * h3];
                let hi = [lo[0] + h1, lo[1] + h2, lo[2] + h3];
                let v = w.avg(lo, hi)?;
                let id = g.idx(c1, c2, c3);
                g.values_mut()[id] = v;
            }
        }
    }
    Ok(g)
}

/// CLI selector: "flat" or "pw:<gamma>,<alpha>,<delta>".
pub fn parse_weight(s: &str) -> Option<WeightFunction> {
    if s == "flat" {
        return Some(WeightFunction::Flat);
    }
    let rest = s.strip_prefix("pw:")?;
    let parts: Vec<f64> = rest.split(',').map(|t| t.trim().parse().ok()).collect::<Option<_>>()?;
    if parts.len() != 3 {
        return None;
    }
    Some(WeightFunction::power(parts[0], parts[1], parts[2]))
}

/// Muckenhoupt-type product <w>_R <w^{1-p'}>_R^{p-1} on one box.
pub fn ap_product(w: &WeightFunction, p: f64, lo: [f64; 3], hi: [f64; 3]) -> Result<f64, WeightError> {
    let u = w.avg(lo, hi)?;
    let v = w.dual(p).avg(lo, hi)?;
    Ok(u * v.powf(p - 1.0))
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Stabilized,
    Diverging,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApReport {
    pub constant_estimate: f64,
    /// (depth, running sup); the running sup is nondecreasing.
    pub sweep_trace: Vec<(u32, f64)>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
pub struct BoxR {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// Zygmund boxes of the special shape: each axis either [0,t] or [c, c+t]
/// with c >= t, t1 t2 = t3, over a geometric mesh. Returns the boxes whose
/// mesh parameters first appear at exactly this depth.
pub fn special_rectangles(depth: u32) -> Vec<BoxR> {
    assert!(depth >= 1);
    let d = depth as i32;
    let mut out = Vec::new();
    let axis_options = |t: f64, d: i32| -> Vec<(f64, i32)> {
        // (left endpoint, mesh level of this option); c = t * 2^e
        let mut v = vec![(0.0, 0)];
        for e in 0..=d {
            v.push((t * 2f64.powi(e), e));
        }
        v
    };
    for u in -d..=d {
        for v in -d..=d {
            let t1 = 2f64.powi(u);
            let t2 = 2f64.powi(v);
            let t3 = t1 * t2;
            for &(c1, e1) in &axis_options(t1, d) {
                for &(c2, e2) in &axis_options(t2, d) {
                    for &(c3, e3) in &axis_options(t3, d) {
                        let level = u.abs().max(v.abs()).max(e1).max(e2).max(e3);
                        if level != d {
                            continue; // emitted at an earlier depth
                        }
                        out.push(BoxR {
                            lo: [c1, c2, c3],
                            hi: [c1 + t1, c2 + t2, c3 + t3],
                        });
                    }
                }
            }
        }
    }
    out
}

/// Truncated A_{p,Z} estimate: running sup of the Muckenhoupt product over a
/// depth-indexed generator of boxes. Stabilized when the consecutive-depth
/// ratio drops below 1.05; diverging on a divergent average or on growth by
/// a factor >= 2 across two depth steps.
pub fn apz_constant_with(
    w: &WeightFunction,
    p: f64,
    generator: impl Fn(u32) -> Vec<BoxR>,
    max_depth: u32,
) -> ApReport {
    let mut sup = 0.0f64;
    let mut trace: Vec<(u32, f64)> = Vec::new();
    for depth in 1..=max_depth {
        for b in generator(depth) {
            match ap_product(w, p, b.lo, b.hi) {
                Ok(v) => sup = sup.max(v),
                Err(_) => {
                    trace.push((depth, f64::INFINITY));
                    return ApReport {
                        constant_estimate: f64::INFINITY,
                        sweep_trace: trace,
                        verdict: Verdict::Diverging,
                    };
                }
            }
        }
        trace.push((depth, sup));
    }
    let n = trace.len();
    let two_step_growth = (2..n).any(|i| trace[i].1 >= 2.0 * trace[i - 2].1 && trace[i - 2].1 > 0.0);
    let last_ratio = if n >= 2 && trace[n - 2].1 > 0.0 {
        trace[n - 1].1 / trace[n - 2].1
    } else {
        f64::INFINITY
    };
    let verdict = if two_step_growth || last_ratio >= 1.05 {
        Verdict::Diverging
    } else {
        Verdict::Stabilized
    };
    ApReport { constant_estimate: sup, sweep_trace: trace, verdict }
}

/// Default sweep over the special rectangle family (valid for weights even
/// in each coordinate, which all built-in families are).
pub fn apz_constant(w: &WeightFunction, p: f64, max_depth: u32) -> ApReport {
    apz_constant_with(w, p, special_rectangles, max_depth)
}

/// The eccentricity-probe rectangles R(eps) = (0, sqrt(eps))^2 x (eps, 1).
pub fn ecc_probe_box(eps: f64) -> BoxR {
    let s = eps.sqrt();
    BoxR { lo: [0.0, 0.0, eps], hi: [s, s, 1.0] }
}

pub fn ecc_of_box(b: &BoxR) -> f64 {
    let l1 = b.hi[0] - b.lo[0];
    let l2 = b.hi[1] - b.lo[1];
    let l3 = b.hi[2] - b.lo[2];
    let lam = l3 / (l1 * l2);
    lam.max(1.0 / lam)
}

#[derive(Debug, Clone, Serialize)]
pub struct EccGrowthReport {
    /// (log2 ecc, log2 <w>_R <w^{-1}>_R)
    pub points: Vec<(f64, f64)>,
    pub fit: OlsFit,
}

/// Least-squares slope of log <w>_R <w^{-1}>_R against log ecc_Z(R) over the
/// probe family R(eps).
pub fn ecc_growth_slope(w: &WeightFunction, eps_list: &[f64]) -> Result<EccGrowthReport, WeightError> {
    let mut points = Vec::new();
    for &eps in eps_list {
        let b = ecc_probe_box(eps);
        let prod = ap_product(w, 2.0, b.lo, b.hi)?;
        points.push((ecc_of_box(&b).log2(), prod.log2()));
    }
    let fit = fit_drop_transient(&points);
    Ok(EccGrowthReport { points, fit })
}

#[derive(Debug, Clone, Serialize)]
pub struct EccCheckReport {
    /// (ecc, ratio) with ratio = <w>^{1/p} <w^{1-p'}>^{1/p'} / ecc^theta
    pub ratios: Vec<(f64, f64)>,
    pub max_ratio: f64,
    /// slope of log2 ratio vs log2 ecc: positive means the necessary
    /// condition fails along this sweep
    pub divergence_exponent: f64,
}

/// Necessary-condition probe: bounded ratios are required for uniform
/// weighted estimates of kernels with decay exponent theta.
pub fn necessary_ecc_check(
    w: &WeightFunction,
    p: f64,
    theta: f64,
    boxes: &[BoxR],
) -> Result<EccCheckReport, WeightError> {
    let pp = p / (p - 1.0);
    let mut ratios = Vec::new();
    let mut points = Vec::new();
    for b in boxes {
        let u = w.avg(b.lo, b.hi)?;
        let v = w.dual(p).avg(b.lo, b.hi)?;
        let ecc = ecc_of_box(b);
        let ratio = u.powf(1.0 / p) * v.powf(1.0 / pp) / ecc.powf(theta);
        ratios.push((ecc, ratio));
        points.push((ecc.log2(), ratio.log2()));
    }
    let fit = fit_drop_transient(&points);
    let max_ratio = ratios.iter().fold(0.0f64, |m, r| m.max(r.1));
    Ok(EccCheckReport { ratios, max_ratio, divergence_exponent: fit.slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ADM: PowerWeightSpec = PowerWeightSpec { gamma: 0.0, alpha: 0.5, delta: 1.0 };

    #[test]
    fn eval_two_regimes() {
        // branches agree where |x3| = |x1 x2|
        assert!((ADM.eval(1.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        // (1/2, 1/2, 1/8): s = 1/4 >= 1/8, gamma regime
        let v = ADM.eval(0.5, 0.5, 0.125).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(ADM.eval(0.0, 1.0, 1.0).unwrap_err(), WeightError::DomainZero);
    }

    #[test]
    fn dual_is_pointwise_power() {
        let p = 2.5;
        let dual = ADM.dual(p);
        for (x1, x2, x3) in [(0.3, 1.7, 0.2), (2.0, 0.1, 5.0), (0.9, 0.8, 0.7)] {
            let lhs = dual.eval(x1, x2, x3).unwrap();
            let rhs = ADM.eval(x1, x2, x3).unwrap().powf(-1.0 / (p - 1.0));
            assert!((lhs - rhs).abs() < 1e-12 * rhs.abs());
        }
    }

    #[test]
    fn admissibility_examples() {
        assert!(ADM.admissible(2.0));
        assert!(!PowerWeightSpec::new(0.0, 0.5, 2.5).admissible(2.0)); // delta >= alpha+1
        assert!(!PowerWeightSpec::new(1.5, 0.0, 0.0).admissible(2.0)); // gamma >= p-1
    }

    #[test]
    fn pure_region_box_is_product_of_power_integrals() {
        // box inside |x3| <= |x1 x2|: gamma regime only, exact separable form
        let spec = PowerWeightSpec::new(0.25, 0.75, 1.25);
        let lo = [1.0, 1.0, 0.125];
        let hi = [2.0, 2.0, 0.25];
        let got = spec.box_integral(lo, hi);
        let e = spec.alpha - spec.gamma;
        let want = power_integral(e, 1.0, 2.0).powi(2) * power_integral(spec.gamma, 0.125, 0.25);
        assert!((got - want).abs() < 1e-13 * want);
    }

    #[test]
    fn unit_cube_against_midpoint_oracle() {
        // Brute-force 200^3 midpoint oracle in graded coordinates x = u^2
        // (dx = 2u du), which makes the integrable x^{-1/2}-type edges of the
        // two-regime weight bounded so the rule actually converges. Both
        // regime restrictions are accumulated separately and summed.
        let n = 200;
        let h = 1.0 / n as f64;
        let mut low = 0.0; // |x3| <= |x1 x2|
        let mut high = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (u, v, t) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h);
                    let (x, y, z) = (u * u, v * v, t * t);
                    let jac = 8.0 * u * v * t;
                    let w = ADM.eval(x, y, z).unwrap() * jac;
                    if z <= x * y {
                        low += w;
                    } else {
                        high += w;
                    }
                }
            }
        }
        let oracle = (low + high) * h * h * h;
        let got = ADM.box_integral([0.0; 3], [1.0; 3]);
        // hand value for (gamma, alpha, delta) = (0, 0.5, 1):
        // Int = 1/2 (Int s^{3/2} + Int s^{-1/2}) over the unit square = 2.08
        assert!((got - 2.08).abs() < 1e-12);
        assert!(
            (got - oracle).abs() < 1e-3 * oracle,
            "closed form {got} vs midpoint {oracle}"
        );
    }

    #[test]
    fn negative_coordinates_fold() {
        let spec = PowerWeightSpec::new(0.2, 0.4, 0.9);
        let sym = spec.box_integral([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]);
        let oct = spec.box_integral([0.0; 3], [1.0; 3]);
        assert!((sym - 8.0 * oct).abs() < 1e-12 * sym);
    }

    #[test]
    fn divergent_exponents_signal_infinity() {
        // gamma <= -1 makes x3 -> 0 non-integrable
        let bad = PowerWeightSpec::new(-1.2, 0.0, 0.0);
        assert!(bad.box_integral([0.0; 3], [1.0; 3]).is_infinite());
        // delta >= alpha+1 makes x1 -> 0 non-integrable (x3 above the surface)
        let bad = PowerWeightSpec::new(0.0, 0.5, 2.5);
        assert!(bad.box_integral([0.0; 3], [1.0; 3]).is_infinite());
        // but boxes away from the hyperplanes stay finite
        assert!(bad.box_integral([1.0; 3], [2.0; 3]).is_finite());
    }

    #[test]
    fn custom_weight_avg_matches_power_route() {
        let w = WeightFunction::Power(ADM);
        let c = WeightFunction::Custom(Arc::new(|x, y, z| {
            ADM.eval(x, y, z).unwrap_or(f64::NAN)
        }));
        let lo = [0.25, 0.5, 0.125];
        let hi = [1.0, 1.5, 2.0];
        let a = w.avg(lo, hi).unwrap();
        let b = c.avg(lo, hi).unwrap();
        assert!((a - b).abs() < 1e-5 * a);
    }

    #[test]
    fn flat_weight_constant_one() {
        let r = apz_constant(&WeightFunction::Flat, 2.0, 3);
        assert_eq!(r.verdict, Verdict::Stabilized);
        assert!((r.constant_estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn special_rectangles_shapes() {
        let boxes = special_rectangles(1);
        assert!(!boxes.is_empty());
        for b in &boxes {
            let t1 = b.hi[0] - b.lo[0];
            let t2 = b.hi[1] - b.lo[1];
            let t3 = b.hi[2] - b.lo[2];
            assert_eq!(t1 * t2, t3);
            for d in 0..3 {
                assert!(b.lo[d] == 0.0 || b.lo[d] >= b.hi[d] - b.lo[d]);
            }
        }
        // depth 1 does not re-emit the depth-0-style unit cube; the cube
        // appears exactly once across depths
        let all: Vec<BoxR> =
            (1..=2).flat_map(special_rectangles).collect();
        let cubes = all
            .iter()
            .filter(|b| b.lo == [0.0; 3] && b.hi == [1.0; 3])
            .count();
        assert_eq!(cubes, 0); // unit cube has mesh level 0, never re-emitted
    }

    #[test]
    fn admissible_weight_stabilizes_inadmissible_diverges() {
        let good = WeightFunction::Power(ADM);
        let r = apz_constant(&good, 2.0, 6);
        assert_eq!(r.verdict, Verdict::Stabilized, "trace {:?}", r.sweep_trace);
        assert!(r.constant_estimate.is_finite());
        let bad = WeightFunction::power(0.0, 0.5, 2.5);
        let r = apz_constant(&bad, 2.0, 6);
        assert_eq!(r.verdict, Verdict::Diverging);
    }

    #[test]
    fn running_sup_is_monotone() {
        let r = apz_constant(&WeightFunction::Power(ADM), 2.0, 5);
        for w in r.sweep_trace.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn ecc_growth_matches_delta_minus_one() {
        // delta = 2.7 family: slope = delta - 1 = 1.7
        let eta: f64 = 0.1;
        let w = WeightFunction::power(1.0 - eta, 2.0 - 2.0 * eta, 3.0 - 3.0 * eta);
        let eps: Vec<f64> = (2..=10).map(|k| 2f64.powi(-k)).collect();
        let rep = ecc_growth_slope(&w, &eps).unwrap();
        assert!(
            (rep.fit.slope - 1.7).abs() < 0.1,
            "slope {} trace {:?}",
            rep.fit.slope,
            rep.points
        );
        // flat weight: slope 0
        let rep = ecc_growth_slope(&WeightFunction::Flat, &eps).unwrap();
        assert!(rep.fit.slope.abs() < 1e-9);
    }

    #[test]
    fn necessary_check_exponents() {
        let eps: Vec<f64> = (2..=10).map(|k| 2f64.powi(-k)).collect();
        let boxes: Vec<BoxR> = eps.iter().map(|&e| ecc_probe_box(e)).collect();
        // theta = 0.5 against delta = 2.7: exponent (delta-1)/2 - theta = 0.35
        let eta = 0.1;
        let w = WeightFunction::power(1.0 - eta, 2.0 - 2.0 * eta, 3.0 - 3.0 * eta);
        let rep = necessary_ecc_check(&w, 2.0, 0.5, &boxes).unwrap();
        assert!((rep.divergence_exponent - 0.35).abs() < 0.1, "{}", rep.divergence_exponent);
        // theta = 1 against delta = 1.5: bounded
        let w = WeightFunction::power(0.5, 1.0, 1.5);
        let rep = necessary_ecc_check(&w, 2.0, 1.0, &boxes).unwrap();
        assert!(rep.divergence_exponent <= 0.05, "{}", rep.divergence_exponent);
    }
}
