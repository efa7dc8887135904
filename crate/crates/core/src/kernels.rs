//! Concrete kernels invariant under Zygmund dilations and numerical
//! checkers for their size, smoothness and cancellation conditions.
//!
//! Pairings of a convolution kernel against tensor products of step
//! functions reduce to 3D integrals of K(u) c1(u1) c2(u2) c3(u3) with
//! piecewise-linear correlation profiles c_i. Kernels declare a parity per
//! axis; folding the profiles onto u_i > 0 with the matching sign both
//! halves the domain and cancels the non-absolutely-integrable part of odd
//! kernels analytically, so the remaining integrand is integrable and plain
//! adaptive quadrature applies.

use crate::util::{
    adaptive_1d, adaptive_2d, adaptive_boxes, correlate_steps, Box3, PiecewiseLinear, QuadResult,
    StepFn,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel evaluated on the singular set")]
    Singular,
    #[error("configuration error: {0}")]
    Config(String),
}

/// Decay relative to the surface |x1 x2| = |x3|.
pub fn d_theta(x1: f64, x2: f64, x3: f64, theta: f64) -> f64 {
    let a = (x1 * x2).abs() / x3.abs();
    (a + 1.0 / a).powf(-theta)
}

/// Logarithmic variant D_1(x) log(|x1 x2|/|x3| + |x3|/|x1 x2|).
pub fn d_log(x1: f64, x2: f64, x3: f64) -> f64 {
    let a = (x1 * x2).abs() / x3.abs();
    let s = a + 1.0 / a;
    s.ln() / s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Parity {
    Even,
    Odd,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DecayMode {
    Theta,
    Log,
}

// ---------------------------------------------------------------------------
// The bump profile
// ---------------------------------------------------------------------------

/// phi(x) = A (2 psi(x/2) - psi(x/4)) with psi(u) = exp(-1/(1-u^2)) on
/// |u| < 1. The scaling makes the integral vanish identically
/// (Int 2 psi(./2) = Int psi(./4)), A normalizes min over [-1,1] to 1,
/// and the support is contained in [-4, 4].
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    amplitude: f64,
}

fn psi(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

fn bump_raw(x: f64) -> f64 {
    2.0 * psi(x / 2.0) - psi(x / 4.0)
}

impl Bump {
    pub fn build() -> Self {
        // golden-section minimization of the even raw profile on [0, 1]
        let phi = |x: f64| bump_raw(x);
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let inv = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv * (b - a);
        let mut d = a + inv * (b - a);
        for _ in 0..200 {
            if phi(c) < phi(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - inv * (b - a);
            d = a + inv * (b - a);
        }
        let m = phi(0.5 * (a + b)).min(phi(1.0)).min(phi(0.0));
        Self { amplitude: 1.0 / m }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * bump_raw(x)
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

// ---------------------------------------------------------------------------
// Kernel specification
// ---------------------------------------------------------------------------

pub type KernelEval = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelForm {
    /// sign(x1 x2) / (x1^2 x2^2 + x3^2)
    NagelWainger,
    /// D_theta(t) prod (1/t_i) phi(x_i / t_i) with the built bump profile
    BumpProduct { t: [f64; 3] },
    Custom { eval: KernelEval, parity: [Parity; 3], label: String },
}

impl std::fmt::Debug for KernelForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NagelWainger => write!(f, "NagelWainger"),
            Self::BumpProduct { t } => write!(f, "BumpProduct(t={t:?})"),
            Self::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub form: KernelForm,
    pub theta: f64,
    pub alpha1: f64,
    pub alpha23: f64,
    pub decay: DecayMode,
    bump: Bump,
}

impl KernelSpec {
    pub fn nagel_wainger() -> Self {
        Self {
            form: KernelForm::NagelWainger,
            theta: 1.0,
            alpha1: 1.0,
            alpha23: 1.0,
            decay: DecayMode::Theta,
            bump: Bump::build(),
        }
    }

    pub fn bump_product(t: [f64; 3], theta: f64) -> Self {
        assert!(t.iter().all(|&v| v > 0.0));
        Self {
            form: KernelForm::BumpProduct { t },
            theta,
            alpha1: 1.0,
            alpha23: 1.0,
            decay: DecayMode::Theta,
            bump: Bump::build(),
        }
    }

    pub fn custom(eval: KernelEval, parity: [Parity; 3], label: &str, theta: f64, alpha1: f64, alpha23: f64) -> Self {
        Self {
            form: KernelForm::Custom { eval, parity, label: label.to_string() },
            theta,
            alpha1,
            alpha23,
            decay: DecayMode::Theta,
            bump: Bump::build(),
        }
    }

    pub fn bump(&self) -> &Bump {
        &self.bump
    }

    pub fn parity(&self) -> [Parity; 3] {
        match &self.form {
            KernelForm::NagelWainger => [Parity::Odd, Parity::Odd, Parity::Even],
            KernelForm::BumpProduct { .. } => [Parity::Even; 3],
            KernelForm::Custom { parity, .. } => *parity,
        }
    }

    /// Closed-form value off the singular set {x1 x2 x3 = 0}.
    pub fn eval(&self, x1: f64, x2: f64, x3: f64) -> Result<f64, KernelError> {
        if x1 == 0.0 || x2 == 0.0 || x3 == 0.0 {
            return Err(KernelError::Singular);
        }
        Ok(self.eval_unchecked(x1, x2, x3))
    }

    fn eval_unchecked(&self, x1: f64, x2: f64, x3: f64) -> f64 {
        match &self.form {
            KernelForm::NagelWainger => {
                let s = (x1 * x2).signum();
                s / (x1 * x1 * x2 * x2 + x3 * x3)
            }
            KernelForm::BumpProduct { t } => {
                d_theta(t[0], t[1], t[2], self.theta)
                    * (self.bump.eval(x1 / t[0]) / t[0])
                    * (self.bump.eval(x2 / t[1]) / t[1])
                    * (self.bump.eval(x3 / t[2]) / t[2])
            }
            KernelForm::Custom { eval, .. } => eval(x1, x2, x3),
        }
    }

    /// Radius of the kernel support per axis, when compactly supported.
    pub fn support_radius(&self) -> Option<[f64; 3]> {
        match &self.form {
            KernelForm::BumpProduct { t } => Some([4.0 * t[0], 4.0 * t[1], 4.0 * t[2]]),
            _ => None,
        }
    }

    /// The decay factor used on the right-hand side of the conditions.
    pub fn decay_factor(&self, x1: f64, x2: f64, x3: f64) -> f64 {
        match self.decay {
            DecayMode::Theta => d_theta(x1, x2, x3, self.theta),
            DecayMode::Log => d_log(x1, x2, x3),
        }
    }
}

// ---------------------------------------------------------------------------
// Pairings against tensor step functions
// ---------------------------------------------------------------------------

fn snap_zero(mut w: PiecewiseLinear) -> PiecewiseLinear {
    let m = w.max_abs();
    for v in &mut w.vals {
        if v.abs() <= 1e-14 * m.max(1e-300) {
            *v = 0.0;
        }
    }
    w
}

/// Fold a correlation profile to u > 0 with the kernel's parity on that
/// axis: Even adds the reflection, Odd subtracts it. For odd axes the folded
/// profile vanishes linearly at 0, which is exactly the cancellation that
/// makes the principal value integrable.
fn fold_profile(c: &PiecewiseLinear, parity: Parity) -> Vec<(f64, PiecewiseLinear)> {
    match parity {
        Parity::Even => vec![(1.0, snap_zero(c.add_scaled(&c.reflect(), 1.0).clip_nonneg()))],
        Parity::Odd => vec![(1.0, snap_zero(c.add_scaled(&c.reflect(), -1.0).clip_nonneg()))],
        Parity::None => vec![
            (1.0, c.clip_nonneg()),
            (-1.0, c.reflect().clip_nonneg()),
        ],
    }
}

fn profile_boxes(w: &PiecewiseLinear, extra_cuts: &[f64]) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = w.nodes.clone();
    if let Some((lo, hi)) = w.support() {
        for &c in extra_cuts {
            if c > lo && c < hi {
                cuts.push(c);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    cuts.windows(2).map(|s| (s[0], s[1])).collect()
}

/// Int K(u) w1(u1) w2(u2) w3(u3) du over R^3 for a convolution kernel, by
/// parity folding plus adaptive tensor quadrature. `cuts` lists extra
/// per-axis breakpoints (e.g. truncation radii).
pub fn pair_convolution(
    spec: &KernelSpec,
    weights: [&PiecewiseLinear; 3],
    cuts: [&[f64]; 3],
    tol_rel: f64,
    tol_abs: f64,
) -> QuadResult {
    pair_convolution_budget(spec, weights, cuts, tol_rel, tol_abs, 20_000)
}

pub fn pair_convolution_budget(
    spec: &KernelSpec,
    weights: [&PiecewiseLinear; 3],
    cuts: [&[f64]; 3],
    tol_rel: f64,
    tol_abs: f64,
    max_refine: usize,
) -> QuadResult {
    let support = spec.support_radius();
    let parity = spec.parity();
    let mut total = 0.0;
    let mut err = 0.0;
    let mut converged = true;
    let folded: [Vec<(f64, PiecewiseLinear)>; 3] = [
        fold_profile(weights[0], parity[0]),
        fold_profile(weights[1], parity[1]),
        fold_profile(weights[2], parity[2]),
    ];
    // sign of the kernel pulled to the positive orthant is already inside
    // the folded profiles for Even/Odd axes; None axes carry explicit signs
    for (s1, w1) in &folded[0] {
        for (s2, w2) in &folded[1] {
            for (s3, w3) in &folded[2] {
                if w1.max_abs() == 0.0 || w2.max_abs() == 0.0 || w3.max_abs() == 0.0 {
                    continue;
                }
                let clip = |segs: Vec<(f64, f64)>, axis: usize| -> Vec<(f64, f64)> {
                    match support {
                        None => segs,
                        Some(rad) => segs
                            .into_iter()
                            .filter_map(|(a, b)| {
                                let hi = b.min(rad[axis]);
                                if hi > a {
                                    Some((a, hi))
                                } else {
                                    None
                                }
                            })
                            .collect(),
                    }
                };
                let mut c1 = cuts[0].to_vec();
                let mut c2 = cuts[1].to_vec();
                let mut c3 = cuts[2].to_vec();
                if let Some(rad) = support {
                    c1.push(rad[0]);
                    c2.push(rad[1]);
                    c3.push(rad[2]);
                }
                let seg1 = clip(profile_boxes(w1, &c1), 0);
                let seg2 = clip(profile_boxes(w2, &c2), 1);
                let seg3 = clip(profile_boxes(w3, &c3), 2);
                let mut boxes = Vec::new();
                for &(a1, b1) in &seg1 {
                    for &(a2, b2) in &seg2 {
                        for &(a3, b3) in &seg3 {
                            boxes.push(Box3 { lo: [a1, a2, a3], hi: [b1, b2, b3] });
                        }
                    }
                }
                let (e1, e2, e3) = (*s1, *s2, *s3);
                let r = adaptive_boxes(
                    &mut |u1, u2, u3| {
                        let k = spec.eval_unchecked(e1 * u1, e2 * u2, e3 * u3);
                        k * w1.eval(u1) * w2.eval(u2) * w3.eval(u3)
                    },
                    &boxes,
                    tol_rel,
                    tol_abs,
                    max_refine,
                );
                total += e1 * e2 * e3 * r.value;
                err += r.err;
                converged &= r.converged;
            }
        }
    }
    QuadResult { value: total, err, converged }
}

/// Shift-coefficient pairing against the continuous kernel:
/// <T(h0_{I1 dot+ n1} x h^sig_{I23}), h_{I1} x h0_{I23 dot+ n23}>
/// for I = [0, l1] x [0, l2] x [0, l3] (the value is translation invariant).
pub fn shift_coefficient(
    spec: &KernelSpec,
    ell: [f64; 3],
    n: [i64; 3],
    sig: (u8, u8),
    tol_abs: f64,
) -> QuadResult {
    let haar = |l: f64, s: u8| if s == 0 { StepFn::haar0(0.0, l) } else { StepFn::haar1(0.0, l) };
    let shifted = |f: &StepFn, d: f64| StepFn::new(f.breaks.iter().map(|b| b + d).collect(), f.vals.clone());
    // f side
    let f1 = shifted(&haar(ell[0], 0), n[0] as f64 * ell[0]);
    let f2 = haar(ell[1], sig.0);
    let f3 = haar(ell[2], sig.1);
    // g side
    let g1 = haar(ell[0], 1);
    let g2 = shifted(&haar(ell[1], 0), n[1] as f64 * ell[1]);
    let g3 = shifted(&haar(ell[2], 0), n[2] as f64 * ell[2]);
    let c1 = correlate_steps(&f1, &g1);
    let c2 = correlate_steps(&f2, &g2);
    let c3 = correlate_steps(&f3, &g3);
    pair_convolution(spec, [&c1, &c2, &c3], [&[], &[], &[]], 1e-7, tol_abs)
}

// ---------------------------------------------------------------------------
// Condition checkers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// |K| <= D / prod |z_i|
    Size,
    /// first difference in x1
    Mixed1,
    /// first difference in (x2, x3)
    Mixed23,
    /// double difference
    Holder,
    /// all differences D^{a1} D^{a2} D^{a3}, sum a_i <= 2, single exponent
    RHan,
    /// truncated triple integral bounded
    C1a,
    /// truncated double integrals against one difference
    C1j,
    /// truncated x1 integral against (2,3) differences
    C2b,
    /// partial kernel size bound
    PartialSize,
    /// partial kernel Holder bound
    PartialHolder,
    /// |<T 1_I, 1_I>| <= |I| over Zygmund boxes
    Wbp,
}

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "size" => Self::Size,
            "mixed-1" => Self::Mixed1,
            "mixed-23" => Self::Mixed23,
            "holder" => Self::Holder,
            "r" => Self::RHan,
            "c1a" => Self::C1a,
            "c1j" => Self::C1j,
            "c2b" => Self::C2b,
            "partial-size" => Self::PartialSize,
            "partial-holder" => Self::PartialHolder,
            "wbp" => Self::Wbp,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplePlan {
    pub samples: usize,
    pub seed: u64,
    /// log2 of the smallest and largest sampled scales
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self { samples: 10_000, seed: 1, scale_lo: -8.0, scale_hi: 8.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub sup_ratio: f64,
    /// the sample realizing the sup (coordinates, then increments if any)
    pub argmax: Vec<f64>,
    pub samples: usize,
    /// samples whose quadrature failed to converge
    pub failures: usize,
}

struct PlanRng {
    rng: ChaCha8Rng,
    lo: f64,
    hi: f64,
}

impl PlanRng {
    fn new(plan: &SamplePlan) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(plan.seed), lo: plan.scale_lo, hi: plan.scale_hi }
    }

    /// log-uniform magnitude with a random sign
    fn coord(&mut self) -> f64 {
        let e = self.rng.gen_range(self.lo..self.hi);
        let s = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        s * 2f64.powf(e)
    }

    /// increment with |h| <= |x|/2, log-uniform down to 2^-6 |x|
    fn increment(&mut self, x: f64) -> f64 {
        let e = self.rng.gen_range(-6.0..-1.0);
        let s = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        s * x.abs() * 2f64.powf(e)
    }

    fn positive(&mut self) -> f64 {
        2f64.powf(self.rng.gen_range(self.lo..self.hi))
    }
}

/// Composite difference D^{a1}_{h1} D^{a2}_{h2} D^{a3}_{h3} K at z, where
/// D^1 is the forward difference and D^0 negation.
fn composite_difference(spec: &KernelSpec, z: [f64; 3], a: [u8; 3], h: [f64; 3]) -> f64 {
    let mut total = 0.0;
    let bits = |m: usize, i: usize| (m >> i) & 1;
    for m in 0..8usize {
        // term with shift pattern m: include h_i when bit set; only allowed
        // where a_i = 1. a_i = 0 contributes the constant factor -1.
        let mut ok = true;
        let mut coef = 1.0;
        let mut p = z;
        for i in 0..3 {
            if bits(m, i) == 1 {
                if a[i] == 1 {
                    p[i] += h[i];
                } else {
                    ok = false;
                    break;
                }
            } else {
                coef *= if a[i] == 1 { -1.0 } else { -1.0 };
                // both a_i = 1 (unshifted part of the difference) and
                // a_i = 0 (negation) carry the factor -1
            }
        }
        if !ok {
            continue;
        }
        total += coef * spec.eval_unchecked(p[0], p[1], p[2]);
    }
    total
}

/// Truncated integral of K over {delta_i < |x_i| < r_i for i in `axes`}
/// with the remaining coordinates fixed, after applying the composite
/// difference in the fixed coordinates. Uses parity to collapse symmetric
/// ranges of odd axes to an exact zero.
#[allow(clippy::too_many_arguments)]
fn truncated_integral(
    spec: &KernelSpec,
    axes: &[usize],
    delta: [f64; 3],
    r: [f64; 3],
    fixed: [f64; 3],
    a: [u8; 3],
    h: [f64; 3],
    tol_rel: f64,
    tol_abs: f64,
) -> QuadResult {
    // bump products factor into 1D integrals: the integrated axes give
    // truncated profile masses, fixed axes pointwise difference factors
    if let KernelForm::BumpProduct { t } = &spec.form {
        let t = *t;
        let mut value = d_theta(t[0], t[1], t[2], spec.theta);
        let mut err = 0.0;
        let mut conv = true;
        for i in 0..3 {
            if axes.contains(&i) {
                let hi = r[i].min(4.0 * t[i]);
                if hi <= delta[i] {
                    return QuadResult { value: 0.0, err: 0.0, converged: true };
                }
                let q = adaptive_1d(
                    &mut |x| spec.bump.eval(x / t[i]) / t[i],
                    delta[i],
                    hi,
                    tol_rel,
                    tol_abs,
                );
                value *= 2.0 * q.value; // phi is even
                err += q.err;
                conv &= q.converged;
            } else {
                // D^{a_i}: forward difference for a_i = 1, negation for 0
                let base = spec.bump.eval(fixed[i] / t[i]) / t[i];
                let factor = if a[i] == 1 {
                    spec.bump.eval((fixed[i] + h[i]) / t[i]) / t[i] - base
                } else {
                    -base
                };
                value *= factor;
            }
        }
        return QuadResult { value, err, converged: conv };
    }
    let parity = spec.parity();
    let mut r = r;
    if let Some(rad) = spec.support_radius() {
        for &i in axes {
            r[i] = r[i].min(rad[i]);
            if r[i] <= delta[i] {
                return QuadResult { value: 0.0, err: 0.0, converged: true };
            }
        }
        // fixed coordinates outside the support make the integrand vanish
        for i in 0..3 {
            if !axes.contains(&i) && fixed[i].abs() >= rad[i] + h[i].abs() {
                return QuadResult { value: 0.0, err: 0.0, converged: true };
            }
        }
    }
    if axes.iter().any(|&i| parity[i] == Parity::Odd) {
        // differences act only on non-integrated axes, so the integrand is
        // odd along that integrated axis and the symmetric range vanishes
        return QuadResult { value: 0.0, err: 0.0, converged: true };
    }
    // multiplicity 2 per Even integrated axis, octant sum for None
    let mut factor = 1.0;
    let mut sign_sets: Vec<Vec<f64>> = vec![vec![1.0]];
    for &i in axes {
        match parity[i] {
            Parity::Even => factor *= 2.0,
            Parity::None => {
                let mut next = Vec::new();
                for s in &sign_sets {
                    for sg in [1.0, -1.0] {
                        let mut t = s.clone();
                        t.push(sg);
                        next.push(t);
                    }
                }
                sign_sets = next;
                continue;
            }
            Parity::Odd => unreachable!(),
        }
        for s in &mut sign_sets {
            s.push(1.0);
        }
    }
    let eval_at = |coords: [f64; 3]| composite_difference(spec, coords, a, h);
    let mut total = 0.0;
    let mut err = 0.0;
    let mut conv = true;
    for signs in &sign_sets {
        let r = match axes.len() {
            1 => {
                let i = axes[0];
                adaptive_1d(
                    &mut |x| {
                        let mut c = fixed;
                        c[i] = signs[1] * x;
                        eval_at(c)
                    },
                    delta[i],
                    r[i],
                    tol_rel,
                    tol_abs,
                )
            }
            2 => {
                let (i, j) = (axes[0], axes[1]);
                adaptive_2d(
                    &mut |x, y| {
                        let mut c = fixed;
                        c[i] = signs[1] * x;
                        c[j] = signs[signs.len() - 1] * y;
                        eval_at(c)
                    },
                    &[(delta[i], r[i], delta[j], r[j])],
                    tol_rel,
                    tol_abs,
                    1500,
                )
            }
            _ => {
                let b = Box3 { lo: [delta[0], delta[1], delta[2]], hi: [r[0], r[1], r[2]] };
                adaptive_boxes(
                    &mut |x, y, z| {
                        let c = [signs[1] * x, signs[2] * y, signs[3] * z];
                        eval_at(c)
                    },
                    &[b],
                    tol_rel,
                    tol_abs,
                    2500,
                )
            }
        };
        total += r.value;
        err += r.err;
        conv &= r.converged;
    }
    QuadResult { value: factor * total, err: factor * err, converged: conv }
}

/// Partial kernel of a convolution kernel in the first variable:
/// K_{I1}(u2, u3) = Int over I1 x I1 of K(s - t, u2, u3) ds dt,
/// a tent-weighted 1D integral. Exactly zero for kernels odd in x1.
pub fn partial_kernel_x1(
    spec: &KernelSpec,
    len1: f64,
    u2: f64,
    u3: f64,
    tol_rel: f64,
    tol_abs: f64,
) -> QuadResult {
    if spec.parity()[0] == Parity::Odd {
        return QuadResult { value: 0.0, err: 0.0, converged: true };
    }
    // Int (len1 - |v|)_+ K(v, u2, u3) dv
    let even = spec.parity()[0] == Parity::Even;
    let r = adaptive_1d(
        &mut |v| {
            let tent = len1 - v.abs();
            let k = spec.eval_unchecked(v, u2, u3)
                + if even { 0.0 } else { spec.eval_unchecked(-v, u2, u3) };
            tent * if even { 2.0 * k } else { k }
        },
        0.0,
        len1,
        tol_rel,
        tol_abs,
    );
    r
}

pub fn check_condition(spec: &KernelSpec, condition: Condition, plan: &SamplePlan) -> ConditionReport {
    let mut rng = PlanRng::new(plan);
    let mut sup = 0.0f64;
    let mut argmax = Vec::new();
    let mut failures = 0usize;
    let mut record = |ratio: f64, sample: Vec<f64>, sup: &mut f64, argmax: &mut Vec<f64>| {
        if ratio > *sup {
            *sup = ratio;
            *argmax = sample;
        }
    };
    for _ in 0..plan.samples {
        match condition {
            Condition::Size => {
                let z = [rng.coord(), rng.coord(), rng.coord()];
                let k = spec.eval_unchecked(z[0], z[1], z[2]);
                let rhs = spec.decay_factor(z[0], z[1], z[2]) / (z[0] * z[1] * z[2]).abs();
                record(k.abs() / rhs, z.to_vec(), &mut sup, &mut argmax);
            }
            Condition::Mixed1 => {
                let z = [rng.coord(), rng.coord(), rng.coord()];
                let h = rng.increment(z[0]);
                let diff = spec.eval_unchecked(z[0] + h, z[1], z[2]) - spec.eval_unchecked(z[0], z[1], z[2]);
                let rhs = (h.abs() / z[0].abs()).powf(spec.alpha1) * spec.decay_factor(z[0], z[1], z[2])
                    / (z[0] * z[1] * z[2]).abs();
                record(diff.abs() / rhs, vec![z[0], z[1], z[2], h], &mut sup, &mut argmax);
            }
            Condition::Mixed23 => {
                let z = [rng.coord(), rng.coord(), rng.coord()];
                let h2 = rng.increment(z[1]);
                let h3 = rng.increment(z[2]);
                let diff =
                    spec.eval_unchecked(z[0], z[1] + h2, z[2] + h3) - spec.eval_unchecked(z[0], z[1], z[2]);
                let rhs = (h2.abs() / z[1].abs() + h3.abs() / z[2].abs()).powf(spec.alpha23)
                    * spec.decay_factor(z[0], z[1], z[2])
                    / (z[0] * z[1] * z[2]).abs();
                record(diff.abs() / rhs, vec![z[0], z[1], z[2], h2, h3], &mut sup, &mut argmax);
            }
            Condition::Holder => {
                let z = [rng.coord(), rng.coord(), rng.coord()];
                let h1 = rng.increment(z[0]);
                let h2 = rng.increment(z[1]);
                let h3 = rng.increment(z[2]);
                let diff = spec.eval_unchecked(z[0] + h1, z[1] + h2, z[2] + h3)
                    - spec.eval_unchecked(z[0] + h1, z[1], z[2])
                    - spec.eval_unchecked(z[0], z[1] + h2, z[2] + h3)
                    + spec.eval_unchecked(z[0], z[1], z[2]);
                let rhs = (h1.abs() / z[0].abs()).powf(spec.alpha1)
                    * (h2.abs() / z[1].abs() + h3.abs() / z[2].abs()).powf(spec.alpha23)
                    * spec.decay_factor(z[0], z[1], z[2])
                    / (z[0] * z[1] * z[2]).abs();
                record(diff.abs() / rhs, vec![z[0], z[1], z[2], h1, h2, h3], &mut sup, &mut argmax);
            }
            Condition::RHan => {
                let z = [rng.coord(), rng.coord(), rng.coord()];
                let h = [rng.increment(z[0]), rng.increment(z[1]), rng.increment(z[2])];
                let alpha = spec.alpha1;
                for m in 0..8u8 {
                    let a = [(m & 1), (m >> 1) & 1, (m >> 2) & 1];
                    if a.iter().map(|&x| x as u32).sum::<u32>() > 2 {
                        continue;
                    }
                    let d = composite_difference(spec, z, a, h);
                    let mut rhs = spec.decay_factor(z[0], z[1], z[2]);
                    for i in 0..3 {
                        rhs *= h[i].abs().powf(a[i] as f64 * alpha)
                            / z[i].abs().powf(1.0 + a[i] as f64 * alpha);
                    }
                    record(
                        d.abs() / rhs,
                        vec![z[0], z[1], z[2], h[0], h[1], h[2], m as f64],
                        &mut sup,
                        &mut argmax,
                    );
                }
            }
            Condition::C1a => {
                let mut delta = [0.0; 3];
                let mut r = [0.0; 3];
                for i in 0..3 {
                    let (a, b) = (rng.positive(), rng.positive());
                    delta[i] = a.min(b);
                    r[i] = a.max(b) * 2.0;
                }
                let q =
                    truncated_integral(spec, &[0, 1, 2], delta, r, [0.0; 3], [0; 3], [0.0; 3], 1e-6, 1e-8);
                // composite difference with a = 0 is -K; the sign is
                // irrelevant for the bound
                if !q.converged {
                    failures += 1;
                }
                record(
                    q.value.abs(),
                    vec![delta[0], delta[1], delta[2], r[0], r[1], r[2]],
                    &mut sup,
                    &mut argmax,
                );
            }
            Condition::C1j => {
                for j in 0..3usize {
                    let axes: Vec<usize> = (0..3).filter(|&i| i != j).collect();
                    let mut delta = [0.0; 3];
                    let mut r = [0.0; 3];
                    for &i in &axes {
                        let (a, b) = (rng.positive(), rng.positive());
                        delta[i] = a.min(b);
                        r[i] = a.max(b) * 2.0;
                    }
                    let mut fixed = [0.0; 3];
                    fixed[j] = rng.coord();
                    for aj in [0u8, 1] {
                        let mut a = [0u8; 3];
                        a[j] = aj;
                        let mut h = [0.0; 3];
                        h[j] = rng.increment(fixed[j]);
                        let rhs = h[j].abs().powf(aj as f64 * spec.alpha1)
                            / fixed[j].abs().powf(1.0 + aj as f64 * spec.alpha1);
                        let q =
                            truncated_integral(spec, &axes, delta, r, fixed, a, h, 1e-6, 1e-8 * rhs);
                        if !q.converged {
                            failures += 1;
                        }
                        record(
                            q.value.abs() / rhs,
                            vec![j as f64, fixed[j], h[j], aj as f64],
                            &mut sup,
                            &mut argmax,
                        );
                    }
                }
            }
            Condition::C2b => {
                let (a, b) = (rng.positive(), rng.positive());
                let delta1 = a.min(b);
                let r1 = a.max(b) * 2.0;
                let x2 = rng.coord();
                let x3 = rng.coord();
                for (a2, a3) in [(0u8, 0u8), (1, 0), (0, 1)] {
                    let h = [0.0, rng.increment(x2), rng.increment(x3)];
                    let mut rhs = spec.decay_factor(delta1, x2, x3) + spec.decay_factor(r1, x2, x3);
                    rhs *= h[1].abs().powf(a2 as f64 * spec.alpha23)
                        / x2.abs().powf(1.0 + a2 as f64 * spec.alpha23);
                    rhs *= h[2].abs().powf(a3 as f64 * spec.alpha23)
                        / x3.abs().powf(1.0 + a3 as f64 * spec.alpha23);
                    let q = truncated_integral(
                        spec,
                        &[0],
                        [delta1, 0.0, 0.0],
                        [r1, 0.0, 0.0],
                        [0.0, x2, x3],
                        [0, a2, a3],
                        h,
                        1e-6,
                        1e-8 * rhs,
                    );
                    if !q.converged {
                        failures += 1;
                    }
                    record(
                        q.value.abs() / rhs,
                        vec![delta1, r1, x2, x3, a2 as f64, a3 as f64],
                        &mut sup,
                        &mut argmax,
                    );
                }
            }
            Condition::PartialSize => {
                let len1 = rng.positive();
                let (u2, u3) = (rng.coord(), rng.coord());
                let rhs = len1 * spec.decay_factor(len1, u2, u3) / (u2 * u3).abs();
                let q = partial_kernel_x1(spec, len1, u2, u3, 1e-6, 1e-8 * rhs);
                if !q.converged {
                    failures += 1;
                }
                record(q.value.abs() / rhs, vec![len1, u2, u3], &mut sup, &mut argmax);
            }
            Condition::PartialHolder => {
                let len1 = rng.positive();
                let (u2, u3) = (rng.coord(), rng.coord());
                let h2 = rng.increment(u2);
                let h3 = rng.increment(u3);
                let rhs = (h2.abs() / u2.abs() + h3.abs() / u3.abs()).powf(spec.alpha23)
                    * len1
                    * spec.decay_factor(len1, u2, u3)
                    / (u2 * u3).abs();
                let q1 = partial_kernel_x1(spec, len1, u2 + h2, u3 + h3, 1e-7, 1e-9 * rhs);
                let q0 = partial_kernel_x1(spec, len1, u2, u3, 1e-7, 1e-9 * rhs);
                if !(q0.converged && q1.converged) {
                    failures += 1;
                }
                record((q1.value - q0.value).abs() / rhs, vec![len1, u2, u3, h2, h3], &mut sup, &mut argmax);
            }
            Condition::Wbp => {
                // Zygmund box: l3 = l1 l2; <T 1_I, 1_I> is a tent pairing
                let l1 = rng.positive();
                let l2 = rng.positive();
                let l3 = l1 * l2;
                let tent = |l: f64| PiecewiseLinear { nodes: vec![-l, 0.0, l], vals: vec![0.0, l, 0.0] };
                let (t1, t2, t3) = (tent(l1), tent(l2), tent(l3));
                let q = pair_convolution_budget(
                    spec,
                    [&t1, &t2, &t3],
                    [&[], &[], &[]],
                    1e-6,
                    1e-8 * l1 * l2 * l3,
                    4000,
                );
                if !q.converged {
                    failures += 1;
                }
                record(q.value.abs() / (l1 * l2 * l3), vec![l1, l2, l3], &mut sup, &mut argmax);
            }
        }
    }
    ConditionReport { condition, sup_ratio: sup, argmax, samples: plan.samples, failures }
}

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Truncation {
    pub eps: [f64; 3],
    pub n: [f64; 3],
}

impl Truncation {
    pub fn none() -> Self {
        Self { eps: [0.0; 3], n: [f64::INFINITY; 3] }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub kernel: String,
    pub truncation: Truncation,
    pub tol: f64,
    /// effective inner cutoff recorded when singular cells are zeroed
    pub effective_eps: [f64; 3],
    pub nonconverged_entries: usize,
}

/// Cell-averaged convolution matrix in difference form: the entry for cell
/// difference d is the average of K(x - y) over (x, y) in the cell pair.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    l1: u32,
    l2: u32,
    qtable: Vec<f64>,
    dims: [usize; 3],
    pub provenance: Provenance,
}

pub fn discretize(
    spec: &KernelSpec,
    l1: u32,
    l2: u32,
    trunc: Truncation,
    tol: f64,
) -> Result<DiscreteOperator, KernelError> {
    let l3 = l1 + l2;
    let n = [1usize << l1, 1usize << l2, 1usize << l3];
    let h = [
        0.5f64.powi(l1 as i32),
        0.5f64.powi(l2 as i32),
        0.5f64.powi(l3 as i32),
    ];
    for i in 0..3 {
        if trunc.eps[i] > h[i] {
            return Err(KernelError::Config(format!(
                "inner truncation {} coarser than a cell ({}) on axis {}",
                trunc.eps[i],
                h[i],
                i + 1
            )));
        }
        if trunc.n[i] <= trunc.eps[i] {
            return Err(KernelError::Config("empty truncation range".into()));
        }
    }
    let parity = spec.parity();
    let dims = [2 * n[0] - 1, 2 * n[1] - 1, 2 * n[2] - 1];
    let mut qtable = vec![0.0; dims[0] * dims[1] * dims[2]];
    let mut effective_eps = [0.0; 3];
    let mut nonconverged = 0usize;
    // truncated kernel for the quadrature
    let trunc_spec = {
        let base = spec.clone();
        let t = trunc;
        KernelSpec {
            form: KernelForm::Custom {
                eval: Arc::new(move |x1, x2, x3| {
                    let inside = x1.abs() > t.eps[0]
                        && x1.abs() < t.n[0]
                        && x2.abs() > t.eps[1]
                        && x2.abs() < t.n[1]
                        && x3.abs() > t.eps[2]
                        && x3.abs() < t.n[2];
                    if inside {
                        base.eval_unchecked(x1, x2, x3)
                    } else {
                        0.0
                    }
                }),
                parity,
                label: "truncated".into(),
            },
            ..spec.clone()
        }
    };
    let tent = |hw: f64, center: f64| PiecewiseLinear {
        nodes: vec![center - hw, center, center + hw],
        vals: vec![0.0, 1.0 / hw, 0.0],
    };
    // compute the non-negative difference octant and extend by parity
    let at = |d: [i64; 3]| -> usize {
        let i0 = (d[0] + n[0] as i64 - 1) as usize;
        let i1 = (d[1] + n[1] as i64 - 1) as usize;
        let i2 = (d[2] + n[2] as i64 - 1) as usize;
        (i0 * dims[1] + i1) * dims[2] + i2
    };
    for d1 in 0..n[0] as i64 {
        for d2 in 0..n[1] as i64 {
            for d3 in 0..n[2] as i64 {
                let skip_singular = (0..3).any(|i| {
                    parity[i] == Parity::None && [d1, d2, d3][i] == 0 && {
                        true
                    }
                });
                let value = if skip_singular {
                    for i in 0..3 {
                        if parity[i] == Parity::None && [d1, d2, d3][i] == 0 {
                            effective_eps[i] = h[i];
                        }
                    }
                    0.0
                } else {
                    let w1 = tent(h[0], d1 as f64 * h[0]);
                    let w2 = tent(h[1], d2 as f64 * h[1]);
                    let w3 = tent(h[2], d3 as f64 * h[2]);
                    let cuts: [Vec<f64>; 3] = [
                        vec![trunc.eps[0], trunc.n[0]],
                        vec![trunc.eps[1], trunc.n[1]],
                        vec![trunc.eps[2], trunc.n[2]],
                    ];
                    let q = pair_convolution_budget(
                        &trunc_spec,
                        [&w1, &w2, &w3],
                        [&cuts[0], &cuts[1], &cuts[2]],
                        tol,
                        1e-14,
                        400,
                    );
                    if !q.converged {
                        nonconverged += 1;
                    }
                    q.value
                };
                // reflections: parity gives the sign per axis flip
                for s1 in [1i64, -1] {
                    for s2 in [1i64, -1] {
                        for s3 in [1i64, -1] {
                            let d = [s1 * d1, s2 * d2, s3 * d3];
                            let mut v = value;
                            for (i, s) in [s1, s2, s3].iter().enumerate() {
                                if *s == -1 {
                                    match parity[i] {
                                        Parity::Odd => v = -v,
                                        Parity::Even => {}
                                        Parity::None => v = f64::NAN,
                                    }
                                }
                            }
                            if !v.is_nan() {
                                qtable[at(d)] = v;
                            }
                        }
                    }
                }
            }
        }
    }
    // parity None: fill the remaining octants directly
    if parity.contains(&Parity::None) {
        for d1 in -(n[0] as i64 - 1)..n[0] as i64 {
            for d2 in -(n[1] as i64 - 1)..n[1] as i64 {
                for d3 in -(n[2] as i64 - 1)..n[2] as i64 {
                    if d1 >= 0 && d2 >= 0 && d3 >= 0 {
                        continue;
                    }
                    let idx = at([d1, d2, d3]);
                    if qtable[idx] != 0.0 {
                        continue;
                    }
                    let w1 = tent(h[0], d1 as f64 * h[0]);
                    let w2 = tent(h[1], d2 as f64 * h[1]);
                    let w3 = tent(h[2], d3 as f64 * h[2]);
                    let touches_singular = (0..3).any(|i| parity[i] == Parity::None && [d1, d2, d3][i] == 0);
                    if touches_singular {
                        continue;
                    }
                    let cuts: [Vec<f64>; 3] = [
                        vec![trunc.eps[0], trunc.n[0]],
                        vec![trunc.eps[1], trunc.n[1]],
                        vec![trunc.eps[2], trunc.n[2]],
                    ];
                    let q = pair_convolution_budget(
                        &trunc_spec,
                        [&w1, &w2, &w3],
                        [&cuts[0], &cuts[1], &cuts[2]],
                        tol,
                        1e-14,
                        400,
                    );
                    if !q.converged {
                        nonconverged += 1;
                    }
                    qtable[idx] = q.value;
                }
            }
        }
    }
    Ok(DiscreteOperator {
        l1,
        l2,
        qtable,
        dims,
        provenance: Provenance {
            kernel: format!("{:?}", spec.form),
            truncation: trunc,
            tol,
            effective_eps,
            nonconverged_entries: nonconverged,
        },
    })
}

impl DiscreteOperator {
    pub fn levels(&self) -> (u32, u32) {
        (self.l1, self.l2)
    }

    pub fn entry(&self, d: [i64; 3]) -> f64 {
        let n = [1i64 << self.l1, 1i64 << self.l2, 1i64 << (self.l1 + self.l2)];
        for i in 0..3 {
            if d[i].abs() >= n[i] {
                return 0.0;
            }
        }
        let i0 = (d[0] + n[0] - 1) as usize;
        let i1 = (d[1] + n[1] - 1) as usize;
        let i2 = (d[2] + n[2] - 1) as usize;
        self.qtable[(i0 * self.dims[1] + i1) * self.dims[2] + i2]
    }

    /// (Tf)(c) = sum_{c'} q(c - c') f(c') |cell| (non-periodic).
    pub fn apply(&self, f: &crate::grid::GridFunction3D) -> crate::grid::GridFunction3D {
        assert_eq!(f.levels(), (self.l1, self.l2, self.l1 + self.l2));
        let (n1, n2, n3) = (f.n1(), f.n2(), f.n3());
        let meas = f.cell_measure();
        let mut out = crate::grid::GridFunction3D::zeros(self.l1, self.l2);
        for c1 in 0..n1 {
            for c2 in 0..n2 {
                for c3 in 0..n3 {
                    let mut s = 0.0;
                    for b1 in 0..n1 {
                        for b2 in 0..n2 {
                            for b3 in 0..n3 {
                                let q = self.entry([
                                    c1 as i64 - b1 as i64,
                                    c2 as i64 - b2 as i64,
                                    c3 as i64 - b3 as i64,
                                ]);
                                if q != 0.0 {
                                    s += q * f.get(b1, b2, b3);
                                }
                            }
                        }
                    }
                    let id = out.idx(c1, c2, c3);
                    out.values_mut()[id] = s * meas;
                }
            }
        }
        out
    }

    pub fn pairing(&self, f: &crate::grid::GridFunction3D, g: &crate::grid::GridFunction3D) -> f64 {
        self.apply(f).inner(g)
    }

    /// Binary matrix + JSON provenance.
    pub fn save(&self, path_prefix: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut bin = std::fs::File::create(path_prefix.with_extension("bin"))?;
        for v in &self.qtable {
            bin.write_all(&v.to_le_bytes())?;
        }
        let meta = serde_json::json!({
            "levels": [self.l1, self.l2],
            "dims": self.dims,
            "provenance": self.provenance,
        });
        std::fs::write(path_prefix.with_extension("json"), serde_json::to_string_pretty(&meta)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_factor_values() {
        // D_theta = 2^{-theta} exactly on the Zygmund surface
        assert!((d_theta(1.0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((d_theta(0.5, 0.5, 0.25, 0.7) - 2f64.powf(-0.7)).abs() < 1e-15);
        // D_theta(1,1,2) at theta = 1: (1/2 + 2)^{-1} = 0.4
        assert!((d_theta(1.0, 1.0, 2.0, 1.0) - 0.4).abs() < 1e-15);
        // D_theta <= 1 on a mesh
        for i in -6..=6 {
            for j in -6..=6 {
                let v = d_theta(2f64.powi(i), 1.0, 2f64.powi(j), 0.6);
                assert!(v <= 1.0);
            }
        }
    }

    #[test]
    fn d_log_dominated_by_powers() {
        // log t <= t^g / g gives D_log <= D_{1-g} / g
        for g in [0.25f64, 0.5, 0.75] {
            let mut sup = 0.0f64;
            for i in -12..=12 {
                for j in -12..=12 {
                    let (x, z) = (2f64.powi(i), 2f64.powi(j));
                    let v = d_log(x, 1.0, z) / d_theta(x, 1.0, z, 1.0 - g);
                    sup = sup.max(v);
                }
            }
            assert!(sup <= 1.0 / g + 1e-12, "g={g}: sup {sup}");
            assert!(sup > 0.0);
        }
    }

    #[test]
    fn nw_values_and_antisymmetry() {
        let nw = KernelSpec::nagel_wainger();
        assert_eq!(nw.eval(1.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(nw.eval(-1.0, 1.0, 1.0).unwrap(), -0.5);
        for (x, y, z) in [(0.3, -1.5, 0.7), (2.0, 0.25, -4.0)] {
            let v = nw.eval(x, y, z).unwrap();
            assert_eq!(nw.eval(-x, y, z).unwrap(), -v);
            assert_eq!(nw.eval(x, -y, z).unwrap(), -v);
            assert_eq!(nw.eval(x, y, -z).unwrap(), v);
        }
        assert!(nw.eval(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn bump_profile_properties() {
        let b = Bump::build();
        // integral vanishes by the scaling identity; quadrature confirms
        let q = adaptive_1d(&mut |x| b.eval(x), -4.0, 4.0, 0.0, 1e-12);
        assert!(q.value.abs() <= 1e-10, "integral {}", q.value);
        // min over [-1,1] is 1 after normalization
        let mut min = f64::INFINITY;
        for i in 0..=1000 {
            let x = -1.0 + 2.0 * i as f64 / 1000.0;
            min = min.min(b.eval(x));
        }
        assert!((min - 1.0).abs() < 1e-9, "min {min}");
        // support inside [-4, 4]
        assert_eq!(b.eval(4.0), 0.0);
        assert_eq!(b.eval(-4.1), 0.0);
    }

    #[test]
    fn nw_size_ratio_is_one() {
        // |K_NW| |z1 z2 z3| / D_1(z) = 1 identically
        let nw = KernelSpec::nagel_wainger();
        let rep = check_condition(&nw, Condition::Size, &SamplePlan { samples: 500, ..Default::default() });
        assert!((rep.sup_ratio - 1.0).abs() < 1e-12, "{}", rep.sup_ratio);
    }

    #[test]
    fn nw_cancellation_integrals_vanish() {
        let nw = KernelSpec::nagel_wainger();
        let plan = SamplePlan { samples: 50, ..Default::default() };
        for cond in [Condition::C1a, Condition::C1j, Condition::C2b, Condition::Wbp] {
            let rep = check_condition(&nw, cond, &plan);
            assert!(rep.sup_ratio <= 1e-10, "{cond:?}: {}", rep.sup_ratio);
            assert_eq!(rep.failures, 0);
        }
    }

    #[test]
    fn nw_partial_kernels_vanish() {
        let nw = KernelSpec::nagel_wainger();
        let plan = SamplePlan { samples: 20, ..Default::default() };
        let rep = check_condition(&nw, Condition::PartialSize, &plan);
        assert_eq!(rep.sup_ratio, 0.0);
    }

    #[test]
    fn bump_conditions_bounded() {
        for t in [[1.0, 1.0, 1.0], [4.0, 1.0, 1.0], [1.0, 1.0, 16.0]] {
            let spec = KernelSpec::bump_product(t, 0.5);
            let plan = SamplePlan { samples: 60, seed: 3, ..Default::default() };
            for (cond, ceiling) in [
                (Condition::RHan, 2000.0),
                (Condition::C1a, 50.0),
                (Condition::C2b, 4000.0),
            ] {
                let rep = check_condition(&spec, cond, &plan);
                assert!(
                    rep.sup_ratio.is_finite() && rep.sup_ratio < ceiling,
                    "{cond:?} t {t:?}: {}",
                    rep.sup_ratio
                );
            }
        }
    }

    #[test]
    fn convolution_lower_bound_tent_pairing() {
        // Phi * 1_R >= <1_R>_R = 1 on R when phi >= 1 on [-1,1]: check the
        // pure product (no decay factor) pairing at the center of R
        let b = Bump::build();
        let l = [0.5f64, 2.0, 1.0];
        // (Phi * 1_R)(center) = prod Int_{|y|<l_i/2} phi(y/l_i)/l_i dy >= 1
        let mut prod = 1.0;
        for li in l {
            let q = adaptive_1d(&mut |y| b.eval(y / li) / li, -li / 2.0, li / 2.0, 1e-10, 0.0);
            prod *= q.value;
        }
        assert!(prod >= 1.0 - 1e-9, "{prod}");
    }

    #[test]
    fn shift_coefficient_identical_identical_vanishes_for_nw() {
        let nw = KernelSpec::nagel_wainger();
        let q = shift_coefficient(&nw, [1.0, 1.0, 1.0], [0, 0, 0], (1, 1), 1e-12);
        assert!(q.value.abs() <= 1e-12, "{}", q.value);
    }

    #[test]
    fn shift_coefficient_decays_in_n3() {
        // super-Zygmund direction: |c| ~ n3^{-(1+theta)} for NW (theta = 1)
        let nw = KernelSpec::nagel_wainger();
        let c4 = shift_coefficient(&nw, [1.0, 1.0, 1.0], [0, 0, 4], (1, 0), 1e-13).value.abs();
        let c8 = shift_coefficient(&nw, [1.0, 1.0, 1.0], [0, 0, 8], (1, 0), 1e-13).value.abs();
        let measured = (c4 / c8).log2() / 1.0; // per doubling
        assert!((measured - 2.0).abs() < 0.4, "decay/doubling {measured}, c4 {c4}, c8 {c8}");
    }

    #[test]
    fn discretize_zero_kernel() {
        let zero = KernelSpec::custom(
            Arc::new(|_, _, _| 0.0),
            [Parity::Even; 3],
            "zero",
            1.0,
            1.0,
            1.0,
        );
        let op = discretize(&zero, 1, 1, Truncation::none(), 1e-6).unwrap();
        let f = crate::grid::GridFunction3D::constant(1, 1, 1.0);
        assert!(op.apply(&f).max_abs() == 0.0);
    }

    #[test]
    fn discretize_translation_invariance_and_antisymmetry() {
        let nw = KernelSpec::nagel_wainger();
        let op = discretize(&nw, 2, 1, Truncation::none(), 1e-6).unwrap();
        // entries depend only on the cell difference by construction; the
        // x1 parity makes the zero plane vanish identically
        for d2 in -1i64..=1 {
            for d3 in -3i64..=3 {
                assert_eq!(op.entry([0, d2, d3]), 0.0);
                for d1 in 1i64..4 {
                    assert_eq!(op.entry([-d1, d2, d3]), -op.entry([d1, d2, d3]));
                }
            }
        }
        // <T 1_I, 1_I> = 0 for a centered symmetric box
        let mut f = crate::grid::GridFunction3D::zeros(2, 1);
        let (n1, n2, n3) = (f.n1(), f.n2(), f.n3());
        for c1 in n1 / 4..3 * n1 / 4 {
            for c2 in 0..n2 {
                for c3 in n3 / 4..3 * n3 / 4 {
                    let id = f.idx(c1, c2, c3);
                    f.values_mut()[id] = 1.0;
                }
            }
        }
        let p = op.pairing(&f, &f);
        assert!(p.abs() <= 1e-10, "{p}");
    }

    #[test]
    fn truncation_config_errors() {
        let nw = KernelSpec::nagel_wainger();
        // inner cutoff coarser than a cell
        let bad = Truncation { eps: [0.5, 0.0, 0.0], n: [f64::INFINITY; 3] };
        assert!(discretize(&nw, 2, 2, bad, 1e-5).is_err());
    }
}
