//! Haar systems and Zygmund martingale differences on the window.
//!
//! The x1 direction carries the usual one-dimensional dyadic structure. In
//! (x2, x3) the martingale difference on a rectangle I^{2,3} is the
//! one-parameter difference: both axes refine together, so
//! Delta_{I23} = Delta_2 Delta_3 + E_2 Delta_3 + Delta_2 E_3. The Zygmund
//! difference of a rectangle I = I1 x I2 x I3 with l(I1) l(I2) = l(I3) is
//! Delta_{I,Z} = Delta_{I1} Delta_{I23}, a rank-3 orthogonal projection with
//! Haar basis h_{I1} (x) h^eta_{I23}, eta in {01, 10, 11}.

use crate::dyadic::DyadicInterval;
use crate::grid::{axis_cells, GridFunction3D};
use crate::util::pairwise_sum;
use crate::zyg::ZygRectangle;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MraError {
    #[error("interval at level {0} has no children at grid level {1}")]
    Resolution(u32, u32),
    #[error("side lengths must match (levels {0} vs {1})")]
    ShapeMismatch(u32, u32),
}

/// Haar signature for the (2,3) block; (0,0) is the non-cancellative average.
pub type Sig23 = (u8, u8);

pub const CANCELLATIVE_SIGS: [Sig23; 3] = [(0, 1), (1, 0), (1, 1)];

/// Standard-grid interval (zero shift offset).
pub fn std_interval(level: u32, index: u64) -> DyadicInterval {
    DyadicInterval { level, index, offset_num: 0, offset_log_den: 0 }
}

/// 1D Haar profile on the axis grid: h^0 = |J|^{-1/2} 1_J,
/// h^1 = |J|^{-1/2} (1_left - 1_right). Unit L2 norm on the line.
pub fn haar1d_profile(i: &DyadicInterval, sig: u8, axis_level: u32) -> Vec<f64> {
    assert!(sig <= 1);
    if sig == 1 {
        assert!(i.level < axis_level, "cancellative Haar needs children");
    }
    let n = 1usize << axis_level;
    let mut p = vec![0.0; n];
    let run = axis_cells(i, axis_level);
    let scale = 2f64.powi(i.level as i32).sqrt(); // |J|^{-1/2}
    let half = run.len / 2;
    for (t, c) in run.iter().enumerate() {
        p[c] = if sig == 0 {
            scale
        } else if t < half {
            scale
        } else {
            -scale
        };
    }
    p
}

/// Tensor product of per-axis profiles.
pub fn tensor(l1: u32, l2: u32, p1: &[f64], p2: &[f64], p3: &[f64]) -> GridFunction3D {
    let mut f = GridFunction3D::zeros(l1, l2);
    let (n1, n2, n3) = (f.n1(), f.n2(), f.n3());
    assert!(p1.len() == n1 && p2.len() == n2 && p3.len() == n3);
    let vals = f.values_mut();
    for c1 in 0..n1 {
        if p1[c1] == 0.0 {
            continue;
        }
        for c2 in 0..n2 {
            let v12 = p1[c1] * p2[c2];
            if v12 == 0.0 {
                continue;
            }
            let base = (c1 * n2 + c2) * n3;
            for c3 in 0..n3 {
                vals[base + c3] = v12 * p3[c3];
            }
        }
    }
    f
}

/// Full Zygmund Haar function h_{I,Z} = h_{I1} (x) h^eta_{I23} as a grid
/// function on the (l1, l2) window.
pub fn haar_z_fn(l1: u32, l2: u32, r: &ZygRectangle, sig: Sig23) -> GridFunction3D {
    let a = r.axes();
    let p1 = haar1d_profile(&a[0], 1, l1);
    let p2 = haar1d_profile(&a[1], sig.0, l2);
    let p3 = haar1d_profile(&a[2], sig.1, l1 + l2);
    tensor(l1, l2, &p1, &p2, &p3)
}

/// out += c * h_{I,Z}^sig, touching only the support cells.
fn add_haar_scaled(out: &mut GridFunction3D, r: &ZygRectangle, sig: Sig23, c: f64) {
    let (l1, l2, l3) = out.levels();
    let a = r.axes();
    let p1 = haar1d_profile(&a[0], 1, l1);
    let p2 = haar1d_profile(&a[1], sig.0, l2);
    let p3 = haar1d_profile(&a[2], sig.1, l3);
    let r1 = axis_cells(&a[0], l1);
    let r2 = axis_cells(&a[1], l2);
    let r3 = axis_cells(&a[2], l3);
    let (n2, n3) = (out.n2(), out.n3());
    let vals = out.values_mut();
    for c1 in r1.iter() {
        for c2 in r2.iter() {
            let v12 = c * p1[c1] * p2[c2];
            let base = (c1 * n2 + c2) * n3;
            for c3 in r3.iter() {
                vals[base + c3] += v12 * p3[c3];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Localized averaging / difference operators
// ---------------------------------------------------------------------------

/// E_I f along one axis: the average over I, supported on I.
pub fn e_axis(f: &GridFunction3D, axis: usize, i: &DyadicInterval) -> GridFunction3D {
    let (l1, l2, l3) = f.levels();
    let lv = [l1, l2, l3][axis];
    let run = axis_cells(i, lv);
    let mut out = GridFunction3D::zeros(l1, l2);
    let (n1, n2, n3) = (f.n1(), f.n2(), f.n3());
    match axis {
        0 => {
            for c2 in 0..n2 {
                for c3 in 0..n3 {
                    let mut s = 0.0;
                    for c1 in run.iter() {
                        s += f.get(c1, c2, c3);
                    }
                    let avg = s / run.len as f64;
                    for c1 in run.iter() {
                        let id = out.idx(c1, c2, c3);
                        out.values_mut()[id] = avg;
                    }
                }
            }
        }
        1 => {
            for c1 in 0..n1 {
                for c3 in 0..n3 {
                    let mut s = 0.0;
                    for c2 in run.iter() {
                        s += f.get(c1, c2, c3);
                    }
                    let avg = s / run.len as f64;
                    for c2 in run.iter() {
                        let id = out.idx(c1, c2, c3);
                        out.values_mut()[id] = avg;
                    }
                }
            }
        }
        2 => {
            for c1 in 0..n1 {
                for c2 in 0..n2 {
                    let mut s = 0.0;
                    for c3 in run.iter() {
                        s += f.get(c1, c2, c3);
                    }
                    let avg = s / run.len as f64;
                    for c3 in run.iter() {
                        let id = out.idx(c1, c2, c3);
                        out.values_mut()[id] = avg;
                    }
                }
            }
        }
        _ => panic!("axis out of range"),
    }
    out
}

/// Martingale difference along one axis, supported on I: children averages
/// minus the average over I.
pub fn delta_axis(f: &GridFunction3D, axis: usize, i: &DyadicInterval) -> Result<GridFunction3D, MraError> {
    let (l1, l2, l3) = f.levels();
    let lv = [l1, l2, l3][axis];
    if i.level + 1 > lv {
        return Err(MraError::Resolution(i.level, lv));
    }
    let coarse = e_axis(f, axis, i);
    let left = DyadicInterval { level: i.level + 1, index: 2 * i.index, ..*i };
    let right = DyadicInterval { level: i.level + 1, index: 2 * i.index + 1, ..*i };
    let mut out = e_axis(f, axis, &left);
    let r = e_axis(f, axis, &right);
    out.add_scaled_in_place(&r, 1.0);
    out.add_scaled_in_place(&coarse, -1.0);
    Ok(out)
}

/// One-parameter averaging operator on the rectangle I2 x I3 (acts on the
/// (x2,x3) slice for every x1).
pub fn e_23(f: &GridFunction3D, i2: &DyadicInterval, i3: &DyadicInterval) -> GridFunction3D {
    let (l1, l2, l3) = f.levels();
    let r2 = axis_cells(i2, l2);
    let r3 = axis_cells(i3, l3);
    let mut out = GridFunction3D::zeros(l1, l2);
    for c1 in 0..f.n1() {
        let mut s = 0.0;
        for c2 in r2.iter() {
            for c3 in r3.iter() {
                s += f.get(c1, c2, c3);
            }
        }
        let avg = s / (r2.len * r3.len) as f64;
        for c2 in r2.iter() {
            for c3 in r3.iter() {
                let id = out.idx(c1, c2, c3);
                out.values_mut()[id] = avg;
            }
        }
    }
    out
}

/// One-parameter martingale difference on the rectangle I2 x I3: the four
/// child-rectangle averages minus the rectangle average. This is not the
/// bi-parameter difference Delta_2 Delta_3.
pub fn delta_23(f: &GridFunction3D, i2: &DyadicInterval, i3: &DyadicInterval) -> Result<GridFunction3D, MraError> {
    let (_, l2, l3) = f.levels();
    if i2.level + 1 > l2 {
        return Err(MraError::Resolution(i2.level, l2));
    }
    if i3.level + 1 > l3 {
        return Err(MraError::Resolution(i3.level, l3));
    }
    let mut out = f.scaled(0.0);
    for s2 in 0..2u64 {
        for s3 in 0..2u64 {
            let c2 = DyadicInterval { level: i2.level + 1, index: 2 * i2.index + s2, ..*i2 };
            let c3 = DyadicInterval { level: i3.level + 1, index: 2 * i3.index + s3, ..*i3 };
            out.add_scaled_in_place(&e_23(f, &c2, &c3), 1.0);
        }
    }
    out.add_scaled_in_place(&e_23(f, i2, i3), -1.0);
    Ok(out)
}

/// Zygmund martingale difference Delta_{I,Z} = Delta_{I1} Delta_{I23},
/// supported on I.
pub fn delta_z(f: &GridFunction3D, r: &ZygRectangle) -> Result<GridFunction3D, MraError> {
    let a = r.axes();
    let d23 = delta_23(f, &a[1], &a[2])?;
    delta_axis(&d23, 0, &a[0])
}

// ---------------------------------------------------------------------------
// Level projections (conditional expectations) used by resolutions
// ---------------------------------------------------------------------------

/// Conditional expectation onto x1-level-j intervals (standard grid).
pub fn project_x1(f: &GridFunction3D, j: u32) -> GridFunction3D {
    let (l1, l2, _) = f.levels();
    assert!(j <= l1);
    let block = 1usize << (l1 - j);
    let mut out = GridFunction3D::zeros(l1, l2);
    let (n1, n2, n3) = (f.n1(), f.n2(), f.n3());
    for b in 0..(n1 / block) {
        for c2 in 0..n2 {
            for c3 in 0..n3 {
                let mut s = 0.0;
                for t in 0..block {
                    s += f.get(b * block + t, c2, c3);
                }
                let avg = s / block as f64;
                for t in 0..block {
                    let id = out.idx(b * block + t, c2, c3);
                    out.values_mut()[id] = avg;
                }
            }
        }
    }
    out
}

/// Sum of Delta_{I1} over the level-j intervals.
pub fn diff_x1(f: &GridFunction3D, j: u32) -> GridFunction3D {
    project_x1(f, j + 1).sub(&project_x1(f, j))
}

/// Conditional expectation onto rectangles of x2-level j2 and x3-level j3.
pub fn project_23(f: &GridFunction3D, j2: u32, j3: u32) -> GridFunction3D {
    let (l1, l2, l3) = f.levels();
    assert!(j2 <= l2 && j3 <= l3);
    let b2 = 1usize << (l2 - j2);
    let b3 = 1usize << (l3 - j3);
    let mut out = GridFunction3D::zeros(l1, l2);
    let (n1, n2, n3) = (f.n1(), f.n2(), f.n3());
    for c1 in 0..n1 {
        for q2 in 0..(n2 / b2) {
            for q3 in 0..(n3 / b3) {
                let mut s = 0.0;
                for t2 in 0..b2 {
                    for t3 in 0..b3 {
                        s += f.get(c1, q2 * b2 + t2, q3 * b3 + t3);
                    }
                }
                let avg = s / (b2 * b3) as f64;
                for t2 in 0..b2 {
                    for t3 in 0..b3 {
                        let id = out.idx(c1, q2 * b2 + t2, q3 * b3 + t3);
                        out.values_mut()[id] = avg;
                    }
                }
            }
        }
    }
    out
}

/// Sum of the one-parameter differences Delta_{I23} over rectangles with
/// x2-level j2, x3-level j3 (both axes refine together).
pub fn diff_23(f: &GridFunction3D, j2: u32, j3: u32) -> GridFunction3D {
    project_23(f, j2 + 1, j3 + 1).sub(&project_23(f, j2, j3))
}

// ---------------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------------

/// All Zygmund rectangles of the window whose martingale difference is
/// representable: level(I1) <= l1-1, level(I2) <= l2-1.
pub fn window_rects(l1: u32, l2: u32) -> Vec<ZygRectangle> {
    let mut out = Vec::new();
    for j1 in 0..l1 {
        for j2 in 0..l2 {
            for m1 in 0..(1u64 << j1) {
                for m2 in 0..(1u64 << j2) {
                    for m3 in 0..(1u64 << (j1 + j2)) {
                        out.push(
                            ZygRectangle::new([
                                std_interval(j1, m1),
                                std_interval(j2, m2),
                                std_interval(j1 + j2, m3),
                            ])
                            .expect("levels add"),
                        );
                    }
                }
            }
        }
    }
    out
}

/// Random element of the cancellative span: uniform coefficients on every
/// window rectangle and signature. On this span the window expansions close
/// without coarse-scale terms.
pub fn random_cancellative(l1: u32, l2: u32, seed: u64) -> GridFunction3D {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut f = GridFunction3D::zeros(l1, l2);
    for r in window_rects(l1, l2) {
        for sig in CANCELLATIVE_SIGS {
            add_haar_scaled(&mut f, &r, sig, rng.gen_range(-1.0..1.0));
        }
    }
    f
}

#[derive(Debug, Clone)]
pub struct ZygCoeff {
    pub rect: ZygRectangle,
    pub sig: Sig23,
    pub value: f64,
}

/// Haar coefficients over the window family together with the coarse-scale
/// remainder. On the finite window the one-parameter filtration in (x2,x3)
/// bottoms out at rectangles of full x2 width, so the averaging terms that a
/// bi-infinite expansion would push to infinity are kept in `remainder`.
#[derive(Debug, Clone)]
pub struct ZygExpansion {
    pub coeffs: Vec<ZygCoeff>,
    pub remainder: GridFunction3D,
}

pub fn expand_z(f: &GridFunction3D) -> ZygExpansion {
    let (l1, l2, _) = f.levels();
    let mut coeffs = Vec::new();
    let mut sum = GridFunction3D::zeros(l1, l2);
    for r in window_rects(l1, l2) {
        for sig in CANCELLATIVE_SIGS {
            let h = haar_z_fn(l1, l2, &r, sig);
            let value = f.inner(&h);
            coeffs.push(ZygCoeff { rect: r, sig, value });
            add_haar_scaled(&mut sum, &r, sig, value);
        }
    }
    ZygExpansion { coeffs, remainder: f.sub(&sum) }
}

impl ZygExpansion {
    pub fn reconstruct(&self, l1: u32, l2: u32) -> GridFunction3D {
        let mut out = self.remainder.clone();
        assert_eq!(out.levels(), (l1, l2, l1 + l2));
        for c in &self.coeffs {
            add_haar_scaled(&mut out, &c.rect, c.sig, c.value);
        }
        out
    }

    pub fn coeff_sq_sum(&self) -> f64 {
        let sq: Vec<f64> = self.coeffs.iter().map(|c| c.value * c.value).collect();
        pairwise_sum(&sq)
    }
}

// ---------------------------------------------------------------------------
// H functions (shift building blocks)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HVariant {
    /// h0_I - h0_J
    AvgIminusJ,
    /// h0_J - h0_I
    AvgJminusI,
    /// the cancellative Haar on I
    HaarI,
    /// the cancellative Haar on J
    HaarJ,
}

pub const H_VARIANTS: [HVariant; 4] =
    [HVariant::AvgIminusJ, HVariant::AvgJminusI, HVariant::HaarI, HVariant::HaarJ];

/// H function for a single axis: supported on I u J, constant on children,
/// |H| <= |I|^{-1/2}, zero mean.
pub fn build_h1(
    i: &DyadicInterval,
    j: &DyadicInterval,
    variant: HVariant,
    axis_level: u32,
) -> Result<Vec<f64>, MraError> {
    if i.level != j.level {
        return Err(MraError::ShapeMismatch(i.level, j.level));
    }
    let n = 1usize << axis_level;
    let mut p = vec![0.0; n];
    let acc = |p: &mut Vec<f64>, q: &Vec<f64>, s: f64| {
        for (a, b) in p.iter_mut().zip(q) {
            *a += s * b;
        }
    };
    match variant {
        HVariant::AvgIminusJ => {
            acc(&mut p, &haar1d_profile(i, 0, axis_level), 1.0);
            acc(&mut p, &haar1d_profile(j, 0, axis_level), -1.0);
        }
        HVariant::AvgJminusI => {
            acc(&mut p, &haar1d_profile(j, 0, axis_level), 1.0);
            acc(&mut p, &haar1d_profile(i, 0, axis_level), -1.0);
        }
        HVariant::HaarI => {
            if i.level + 1 > axis_level {
                return Err(MraError::Resolution(i.level, axis_level));
            }
            acc(&mut p, &haar1d_profile(i, 1, axis_level), 1.0);
        }
        HVariant::HaarJ => {
            if j.level + 1 > axis_level {
                return Err(MraError::Resolution(j.level, axis_level));
            }
            acc(&mut p, &haar1d_profile(j, 1, axis_level), 1.0);
        }
    }
    Ok(p)
}

/// H function on the (2,3) rectangle, stored as a short sum of tensor terms.
#[derive(Debug, Clone)]
pub struct H23 {
    pub terms: Vec<(Vec<f64>, Vec<f64>)>,
}

impl H23 {
    pub fn eval(&self, c2: usize, c3: usize) -> f64 {
        self.terms.iter().map(|(p2, p3)| p2[c2] * p3[c3]).sum()
    }
}

pub fn build_h23(
    i23: (&DyadicInterval, &DyadicInterval),
    j23: (&DyadicInterval, &DyadicInterval),
    variant: HVariant,
    sig: Sig23,
    l2: u32,
    l3: u32,
) -> Result<H23, MraError> {
    if i23.0.level != j23.0.level {
        return Err(MraError::ShapeMismatch(i23.0.level, j23.0.level));
    }
    if i23.1.level != j23.1.level {
        return Err(MraError::ShapeMismatch(i23.1.level, j23.1.level));
    }
    let h0 = |iv2: &DyadicInterval, iv3: &DyadicInterval| {
        (haar1d_profile(iv2, 0, l2), haar1d_profile(iv3, 0, l3))
    };
    let hc = |iv2: &DyadicInterval, iv3: &DyadicInterval| -> Result<(Vec<f64>, Vec<f64>), MraError> {
        if sig.0 == 1 && iv2.level + 1 > l2 {
            return Err(MraError::Resolution(iv2.level, l2));
        }
        if sig.1 == 1 && iv3.level + 1 > l3 {
            return Err(MraError::Resolution(iv3.level, l3));
        }
        Ok((haar1d_profile(iv2, sig.0, l2), haar1d_profile(iv3, sig.1, l3)))
    };
    let neg = |(p2, p3): (Vec<f64>, Vec<f64>)| (p2.iter().map(|v| -v).collect(), p3);
    let terms = match variant {
        HVariant::AvgIminusJ => vec![h0(i23.0, i23.1), neg(h0(j23.0, j23.1))],
        HVariant::AvgJminusI => vec![h0(j23.0, j23.1), neg(h0(i23.0, i23.1))],
        HVariant::HaarI => vec![hc(i23.0, i23.1)?],
        HVariant::HaarJ => vec![hc(j23.0, j23.1)?],
    };
    Ok(H23 { terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_f(l1: u32, l2: u32, seed: u64) -> GridFunction3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1usize << (2 * (l1 + l2));
        GridFunction3D::from_values(l1, l2, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn haar_sign_pattern_and_norms() {
        // h1 on [0,1): +1 left, -1 right
        let p = haar1d_profile(&std_interval(0, 0), 1, 2);
        assert_eq!(p, vec![1.0, 1.0, -1.0, -1.0]);
        // zero mean and unit L2 norm for every interval and signature 1
        for level in 0..2u32 {
            for index in 0..(1u64 << level) {
                let p = haar1d_profile(&std_interval(level, index), 1, 3);
                let mean: f64 = p.iter().sum::<f64>() / 8.0;
                assert!(mean.abs() < 1e-15);
                let norm: f64 = p.iter().map(|v| v * v).sum::<f64>() / 8.0;
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn haar_z_norm_one_all_signatures() {
        let r = ZygRectangle::new([std_interval(1, 1), std_interval(1, 0), std_interval(2, 3)]).unwrap();
        for sig in CANCELLATIVE_SIGS {
            let h = haar_z_fn(2, 2, &r, sig);
            assert!((h.norm_l2() - 1.0).abs() < 1e-12, "sig {sig:?}");
        }
    }

    #[test]
    fn delta_z_reproduces_haar_and_kills_others() {
        // Lemma-style check: Delta_{I,Z} h_{J,Z} = h_{I,Z} iff I = J else 0.
        let (l1, l2) = (2, 2);
        let rects = window_rects(l1, l2);
        for ri in &rects {
            let h = haar_z_fn(l1, l2, ri, (1, 1));
            for rj in &rects {
                let d = delta_z(&h, rj).unwrap();
                if ri == rj {
                    assert!(d.sub(&h).max_abs() < 1e-12);
                } else {
                    assert!(d.max_abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn one_parameter_difference_splits() {
        // Delta_{I23} = Delta_2 Delta_3 + E_2 Delta_3 + Delta_2 E_3
        let f = random_f(2, 2, 7);
        let i2 = std_interval(1, 1);
        let i3 = std_interval(2, 2);
        let lhs = delta_23(&f, &i2, &i3).unwrap();
        let d2d3 = delta_axis(&delta_axis(&f, 2, &i3).unwrap(), 1, &i2).unwrap();
        let e2d3 = e_axis(&delta_axis(&f, 2, &i3).unwrap(), 1, &i2);
        let d2e3 = delta_axis(&e_axis(&f, 2, &i3), 1, &i2).unwrap();
        let rhs = d2d3.add(&e2d3).add(&d2e3);
        assert!(lhs.sub(&rhs).max_abs() < 1e-12);
    }

    #[test]
    fn delta_z_has_zero_marginals() {
        let f = random_f(2, 2, 9);
        let r = ZygRectangle::new([std_interval(1, 0), std_interval(1, 1), std_interval(2, 2)]).unwrap();
        let d = delta_z(&f, &r).unwrap();
        // integral in x1 vanishes for each (x2,x3)
        for c2 in 0..d.n2() {
            for c3 in 0..d.n3() {
                let s: f64 = (0..d.n1()).map(|c1| d.get(c1, c2, c3)).sum();
                assert!(s.abs() < 1e-12);
            }
        }
        // integral in (x2,x3) vanishes for each x1
        for c1 in 0..d.n1() {
            let mut s = 0.0;
            for c2 in 0..d.n2() {
                for c3 in 0..d.n3() {
                    s += d.get(c1, c2, c3);
                }
            }
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn delta_z_self_adjoint() {
        let f = random_f(2, 2, 11);
        let g = random_f(2, 2, 13);
        let r = ZygRectangle::new([std_interval(0, 0), std_interval(1, 1), std_interval(1, 0)]).unwrap();
        let df = delta_z(&f, &r).unwrap();
        let dg = delta_z(&g, &r).unwrap();
        assert!((df.inner(&g) - f.inner(&dg)).abs() < 1e-13);
    }

    #[test]
    fn expansion_reconstructs_and_parseval() {
        let (l1, l2) = (2, 2);
        for seed in 0..5u64 {
            let f = random_f(l1, l2, seed);
            let ex = expand_z(&f);
            let rec = ex.reconstruct(l1, l2);
            let rel = rec.sub(&f).max_abs() / f.max_abs();
            assert!(rel < 1e-12);
            let total = f.norm_l2().powi(2);
            let parts = ex.coeff_sq_sum() + ex.remainder.norm_l2().powi(2);
            assert!((total - parts).abs() <= 1e-12 * total);
        }
    }

    #[test]
    fn expansion_of_single_haar() {
        let (l1, l2) = (2, 2);
        let r = ZygRectangle::new([std_interval(1, 0), std_interval(0, 0), std_interval(1, 1)]).unwrap();
        let f = haar_z_fn(l1, l2, &r, (0, 1));
        let ex = expand_z(&f);
        let mut nonzero = 0;
        for c in &ex.coeffs {
            if c.value.abs() > 1e-12 {
                nonzero += 1;
                assert_eq!(c.rect, r);
                assert_eq!(c.sig, (0, 1));
                assert!((c.value - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(nonzero, 1);
        assert!(ex.remainder.max_abs() < 1e-12);
    }

    #[test]
    fn expansion_of_constant_is_remainder() {
        let f = GridFunction3D::constant(2, 2, 1.0);
        let ex = expand_z(&f);
        assert!(ex.coeffs.iter().all(|c| c.value.abs() < 1e-13));
        assert!(ex.remainder.sub(&f).max_abs() < 1e-13);
    }

    #[test]
    fn remainder_is_orthogonal_to_cancellative_span() {
        let f = random_f(2, 2, 21);
        let ex = expand_z(&f);
        let re = expand_z(&ex.remainder);
        assert!(re.coeffs.iter().all(|c| c.value.abs() < 1e-12));
    }

    #[test]
    fn h_function_properties() {
        let l = 3u32;
        let i = std_interval(2, 1);
        let j = std_interval(2, 3);
        for variant in H_VARIANTS {
            let p = build_h1(&i, &j, variant, l).unwrap();
            // zero mean
            let mean: f64 = p.iter().sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-14);
            // bound |H| <= |I|^{-1/2} = 2
            assert!(p.iter().all(|v| v.abs() <= 2.0 + 1e-14));
            // support in I u J (cells 2,3 and 6,7 at grid level 3)
            for (c, v) in p.iter().enumerate() {
                if v.abs() > 0.0 {
                    assert!((2..4).contains(&c) || (6..8).contains(&c));
                }
            }
        }
        // I = J makes the difference variants vanish
        let z = build_h1(&i, &i, HVariant::AvgIminusJ, l).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        // mismatched lengths
        assert!(build_h1(&std_interval(1, 0), &j, HVariant::HaarI, l).is_err());
    }

    #[test]
    fn h23_properties() {
        let (l2, l3) = (2u32, 3u32);
        let i23 = (std_interval(1, 0), std_interval(2, 1));
        let j23 = (std_interval(1, 1), std_interval(2, 3));
        for variant in H_VARIANTS {
            let h = build_h23((&i23.0, &i23.1), (&j23.0, &j23.1), variant, (1, 1), l2, l3).unwrap();
            let mut mean = 0.0;
            let mut maxabs = 0.0f64;
            for c2 in 0..(1 << l2) {
                for c3 in 0..(1 << l3) {
                    let v = h.eval(c2, c3);
                    mean += v;
                    maxabs = maxabs.max(v.abs());
                }
            }
            assert!((mean / 32.0).abs() < 1e-14);
            // |I23| = 2^{-1} * 2^{-2} = 1/8, bound sqrt(8)
            assert!(maxabs <= 8f64.sqrt() + 1e-12);
        }
    }
}
