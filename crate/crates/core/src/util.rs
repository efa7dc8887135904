//! Shared numerics: compensated summation, least squares, piecewise-linear
//! correlation profiles and adaptive Gauss-Legendre quadrature.

/// Pairwise (tree) summation. Keeps accumulated rounding at O(log n) ulps,
/// which the 1e-12 reconstruction tolerances rely on.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual of the fit.
    pub residual: f64,
}

/// Ordinary least squares y = slope*x + intercept.
pub fn ols_fit(points: &[(f64, f64)]) -> OlsFit {
    assert!(points.len() >= 2, "need at least two points for a line fit");
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n;
    let mut ss = 0.0;
    for &(x, y) in points {
        let r = y - (slope * x + intercept);
        ss += r * r;
    }
    OlsFit { slope, intercept, residual: (ss / n).sqrt() }
}

/// OLS on log-log style point sets with the two smallest abscissae dropped
/// (transient regime); falls back to a plain fit when too few points.
pub fn fit_drop_transient(points: &[(f64, f64)]) -> OlsFit {
    if points.len() < 5 {
        return ols_fit(points);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    ols_fit(&sorted[2..])
}

// ---------------------------------------------------------------------------
// Step functions and their correlations
// ---------------------------------------------------------------------------

/// Piecewise constant function with compact support: value `vals[i]` on
/// `[breaks[i], breaks[i+1])`, zero outside `[breaks[0], breaks[last])`.
#[derive(Debug, Clone)]
pub struct StepFn {
    pub breaks: Vec<f64>,
    pub vals: Vec<f64>,
}

impl StepFn {
    pub fn new(breaks: Vec<f64>, vals: Vec<f64>) -> Self {
        assert_eq!(breaks.len(), vals.len() + 1);
        Self { breaks, vals }
    }

    /// Indicator normalized as the non-cancellative Haar h0 = |J|^{-1/2} 1_J.
    pub fn haar0(a: f64, b: f64) -> Self {
        let s = (b - a).sqrt().recip();
        Self::new(vec![a, b], vec![s])
    }

    /// Cancellative Haar h1 = |J|^{-1/2} (1_left - 1_right).
    pub fn haar1(a: f64, b: f64) -> Self {
        let s = (b - a).sqrt().recip();
        Self::new(vec![a, 0.5 * (a + b), b], vec![s, -s])
    }

    pub fn indicator(a: f64, b: f64) -> Self {
        Self::new(vec![a, b], vec![1.0])
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < self.breaks[0] || x >= *self.breaks.last().unwrap() {
            return 0.0;
        }
        // partition_point: first break > x, minus one gives the segment
        let i = self.breaks.partition_point(|&b| b <= x);
        self.vals[i - 1]
    }

    pub fn integral(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.vals.len() {
            s += self.vals[i] * (self.breaks[i + 1] - self.breaks[i]);
        }
        s
    }
}

/// Continuous piecewise-linear function: value `vals[i]` at `nodes[i]`,
/// linear in between, zero outside the node range.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    pub nodes: Vec<f64>,
    pub vals: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if n == 0 || x <= self.nodes[0] || x >= self.nodes[n - 1] {
            return 0.0;
        }
        let i = self.nodes.partition_point(|&b| b <= x);
        let (x0, x1) = (self.nodes[i - 1], self.nodes[i]);
        let t = (x - x0) / (x1 - x0);
        self.vals[i - 1] * (1.0 - t) + self.vals[i] * t
    }

    /// u -> f(-u).
    pub fn reflect(&self) -> Self {
        let nodes = self.nodes.iter().rev().map(|x| -x).collect();
        let vals = self.vals.iter().rev().cloned().collect();
        Self { nodes, vals }
    }

    /// Pointwise f + s*g on the merged node set.
    pub fn add_scaled(&self, g: &PiecewiseLinear, s: f64) -> Self {
        let mut nodes: Vec<f64> = self.nodes.iter().chain(g.nodes.iter()).cloned().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup();
        let vals = nodes.iter().map(|&x| {
            // exact at nodes; eval() treats node points as left limits which
            // is fine for continuous piecewise-linear data
            self.eval_at_node(x) + s * g.eval_at_node(x)
        }).collect();
        Self { nodes, vals }
    }

    fn eval_at_node(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if n == 0 || x < self.nodes[0] || x > self.nodes[n - 1] {
            return 0.0;
        }
        if let Some(i) = self.nodes.iter().position(|&b| b == x) {
            return self.vals[i];
        }
        self.eval(x)
    }

    /// Restriction to x >= 0 (drops everything left of zero, inserting a node
    /// at zero if the support straddles it).
    pub fn clip_nonneg(&self) -> Self {
        if self.nodes.is_empty() || self.nodes[0] >= 0.0 {
            return self.clone();
        }
        if *self.nodes.last().unwrap() <= 0.0 {
            return Self { nodes: vec![], vals: vec![] };
        }
        let mut nodes = vec![0.0];
        let mut vals = vec![self.eval(0.0)];
        for (i, &x) in self.nodes.iter().enumerate() {
            if x > 0.0 {
                nodes.push(x);
                vals.push(self.vals[i]);
            }
        }
        Self { nodes, vals }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        if self.nodes.is_empty() {
            None
        } else {
            Some((self.nodes[0], *self.nodes.last().unwrap()))
        }
    }
}

/// Cross-correlation  c(u) = Int g(x) f(x - u) dx  of two step functions.
/// The result is piecewise linear with kinks at differences of breakpoints.
pub fn correlate_steps(f: &StepFn, g: &StepFn) -> PiecewiseLinear {
    let mut nodes: Vec<f64> = Vec::new();
    for &bg in &g.breaks {
        for &bf in &f.breaks {
            nodes.push(bg - bf);
        }
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (a.abs() + b.abs()).max(1e-300));
    let eval = |u: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..g.vals.len() {
            let (ga, gb) = (g.breaks[i], g.breaks[i + 1]);
            for j in 0..f.vals.len() {
                let (fa, fb) = (f.breaks[j] + u, f.breaks[j + 1] + u);
                let lo = ga.max(fa);
                let hi = gb.min(fb);
                if hi > lo {
                    s += g.vals[i] * f.vals[j] * (hi - lo);
                }
            }
        }
        s
    };
    let vals = nodes.iter().map(|&u| eval(u)).collect();
    PiecewiseLinear { nodes, vals }
}

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature
// ---------------------------------------------------------------------------

pub const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
pub const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];
pub const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
pub const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gl8_w_fixed() -> [f64; 8] {
    // symmetric weights; the table above keeps the symmetric listing readable
    [
        0.101_228_536_290_376_3,
        0.222_381_034_453_374_5,
        0.313_706_645_877_887_3,
        0.362_683_783_378_362,
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ]
}

pub fn gl5_interval(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for i in 0..5 {
        s += GL5_W[i] * f(c + h * GL5_X[i]);
    }
    s * h
}

pub fn gl8_interval(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let w = gl8_w_fixed();
    let mut s = 0.0;
    for i in 0..8 {
        s += w[i] * f(c + h * GL8_X[i]);
    }
    s * h
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub err: f64,
    pub converged: bool,
}

/// Adaptive 1D quadrature by interval bisection, error from GL5 vs GL8.
pub fn adaptive_1d(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol_rel: f64, tol_abs: f64) -> QuadResult {
    struct Seg {
        a: f64,
        b: f64,
        val: f64,
        err: f64,
    }
    let estimate = |f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64| -> (f64, f64) {
        let v5 = gl5_interval(f, a, b);
        let v8 = gl8_interval(f, a, b);
        (v8, (v8 - v5).abs())
    };
    let (v, e) = estimate(f, a, b);
    let mut segs = vec![Seg { a, b, val: v, err: e }];
    for _ in 0..2000 {
        let total: f64 = segs.iter().map(|s| s.val).sum();
        let toterr: f64 = segs.iter().map(|s| s.err).sum();
        if toterr <= tol_abs.max(tol_rel * total.abs()) {
            return QuadResult { value: total, err: toterr, converged: true };
        }
        // split the worst segment
        let (imax, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).unwrap())
            .unwrap();
        let s = segs.swap_remove(imax);
        let m = 0.5 * (s.a + s.b);
        let (v1, e1) = estimate(f, s.a, m);
        let (v2, e2) = estimate(f, m, s.b);
        segs.push(Seg { a: s.a, b: m, val: v1, err: e1 });
        segs.push(Seg { a: m, b: s.b, val: v2, err: e2 });
    }
    let total: f64 = segs.iter().map(|s| s.val).sum();
    let toterr: f64 = segs.iter().map(|s| s.err).sum();
    QuadResult { value: total, err: toterr, converged: false }
}

/// Adaptive 2D quadrature over rectangles, same scheme as `adaptive_boxes`.
pub fn adaptive_2d(
    f: &mut dyn FnMut(f64, f64) -> f64,
    rects: &[(f64, f64, f64, f64)],
    tol_rel: f64,
    tol_abs: f64,
    max_refine: usize,
) -> QuadResult {
    let boxes: Vec<Box3> = rects
        .iter()
        .map(|&(a1, b1, a2, b2)| Box3 { lo: [a1, a2, 0.0], hi: [b1, b2, 1.0] })
        .collect();
    adaptive_boxes(&mut |x, y, _| f(x, y), &boxes, tol_rel, tol_abs, max_refine)
}

#[derive(Debug, Clone, Copy)]
pub struct Box3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

fn gl_box(f: &mut dyn FnMut(f64, f64, f64) -> f64, b: &Box3, fine: bool) -> f64 {
    let (xs, ws): (&[f64], Vec<f64>) = if fine {
        (&GL8_X, gl8_w_fixed().to_vec())
    } else {
        (&GL5_X, GL5_W.to_vec())
    };
    let mut c = [0.0; 3];
    let mut h = [0.0; 3];
    for d in 0..3 {
        c[d] = 0.5 * (b.lo[d] + b.hi[d]);
        h[d] = 0.5 * (b.hi[d] - b.lo[d]);
    }
    let mut s = 0.0;
    for (i, &xi) in xs.iter().enumerate() {
        let x = c[0] + h[0] * xi;
        for (j, &xj) in xs.iter().enumerate() {
            let y = c[1] + h[1] * xj;
            let wij = ws[i] * ws[j];
            for (k, &xk) in xs.iter().enumerate() {
                let z = c[2] + h[2] * xk;
                s += wij * ws[k] * f(x, y, z);
            }
        }
    }
    s * h[0] * h[1] * h[2]
}

/// Adaptive quadrature of `f` over a list of boxes. Boxes are refined by
/// halving the widest axis of the currently worst box, errors estimated by
/// the GL5/GL8 difference. Deterministic for a fixed input.
pub fn adaptive_boxes(
    f: &mut dyn FnMut(f64, f64, f64) -> f64,
    boxes: &[Box3],
    tol_rel: f64,
    tol_abs: f64,
    max_refine: usize,
) -> QuadResult {
    struct Cell {
        b: Box3,
        val: f64,
        err: f64,
    }
    let estimate = |f: &mut dyn FnMut(f64, f64, f64) -> f64, b: &Box3| -> (f64, f64) {
        let v5 = gl_box(f, b, false);
        let v8 = gl_box(f, b, true);
        (v8, (v8 - v5).abs())
    };
    let mut cells: Vec<Cell> = Vec::with_capacity(boxes.len());
    for b in boxes {
        if (0..3).any(|d| b.hi[d] <= b.lo[d]) {
            continue;
        }
        let (v, e) = estimate(f, b);
        cells.push(Cell { b: *b, val: v, err: e });
    }
    for _ in 0..max_refine {
        let total: f64 = pairwise_sum(&cells.iter().map(|c| c.val).collect::<Vec<_>>());
        let toterr: f64 = cells.iter().map(|c| c.err).sum();
        if toterr <= tol_abs.max(tol_rel * total.abs()) {
            return QuadResult { value: total, err: toterr, converged: true };
        }
        let (imax, _) = cells
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).unwrap())
            .unwrap();
        let cell = cells.swap_remove(imax);
        // split along the axis that reduces the error estimate the most
        let mut best: Option<(f64, Cell, Cell)> = None;
        for d in 0..3 {
            let mid = 0.5 * (cell.b.lo[d] + cell.b.hi[d]);
            let mut b1 = cell.b;
            b1.hi[d] = mid;
            let mut b2 = cell.b;
            b2.lo[d] = mid;
            let (v1, e1) = estimate(f, &b1);
            let (v2, e2) = estimate(f, &b2);
            if best.as_ref().map_or(true, |(e, _, _)| e1 + e2 < *e) {
                best = Some((e1 + e2, Cell { b: b1, val: v1, err: e1 }, Cell { b: b2, val: v2, err: e2 }));
            }
        }
        let (_, c1, c2) = best.expect("three axes tried");
        cells.push(c1);
        cells.push(c2);
    }
    let total: f64 = pairwise_sum(&cells.iter().map(|c| c.val).collect::<Vec<_>>());
    let toterr: f64 = cells.iter().map(|c| c.err).sum();
    QuadResult { value: total, err: toterr, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn ols_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 - 2.0)).collect();
        let fit = ols_fit(&pts);
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!((fit.intercept + 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn correlation_of_indicators_is_tent() {
        let f = StepFn::indicator(0.0, 1.0);
        let c = correlate_steps(&f, &f);
        // peak 1 at u = 0, support [-1, 1]
        assert!((c.eval(0.0) - 1.0).abs() < 1e-14);
        assert!((c.eval(0.5) - 0.5).abs() < 1e-14);
        assert_eq!(c.eval(1.2), 0.0);
    }

    #[test]
    fn haar_correlation_mass() {
        // corr(h0_I, h1_I) has integral 0 and integral over u>0 equal -1/4 of |I|
        let h0 = StepFn::haar0(0.0, 1.0);
        let h1 = StepFn::haar1(0.0, 1.0);
        let c = correlate_steps(&h0, &h1);
        let mut total = 0.0;
        let mut pos = 0.0;
        let n = 40000;
        for i in 0..n {
            let u = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            total += c.eval(u) * 2.0 / n as f64;
            if u > 0.0 {
                pos += c.eval(u) * 2.0 / n as f64;
            }
        }
        assert!(total.abs() < 1e-6);
        assert!((pos + 0.25).abs() < 1e-4);
    }

    #[test]
    fn adaptive_1d_smooth() {
        let r = adaptive_1d(&mut |x| x.exp(), 0.0, 1.0, 1e-12, 0.0);
        assert!(r.converged);
        assert!((r.value - (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn adaptive_boxes_polynomial() {
        let b = Box3 { lo: [0.0; 3], hi: [1.0, 2.0, 1.0] };
        let r = adaptive_boxes(&mut |x, y, z| x * y + z * z, &[b], 1e-12, 0.0, 100);
        assert!(r.converged);
        // Int = (1/2)(2) (1) + (1)(2)(1/3) = 1 + 2/3
        assert!((r.value - (1.0 + 2.0 / 3.0)).abs() < 1e-10);
    }

    #[test]
    fn adaptive_boxes_integrable_singularity() {
        // 1/sqrt(x) near the face x=0: integrable, needs refinement
        let b = Box3 { lo: [0.0; 3], hi: [1.0; 3] };
        let r = adaptive_boxes(&mut |x, _, _| x.sqrt().recip(), &[b], 1e-6, 0.0, 4000);
        assert!((r.value - 2.0).abs() < 1e-4);
    }
}
