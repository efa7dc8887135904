//! Maximal operators, Zygmund square functions, the restricted blocks
//! U_{K,k}, dyadic Zygmund shifts Q_k, and weighted norms.

use crate::grid::{axis_cells, GridFunction3D};
use crate::mra::{diff_x1, diff_23, haar_z_fn, std_interval, window_rects, Sig23};
use crate::util::pairwise_sum;
use crate::zyg::{LatticeFamily, Rect3, ZygRectangle};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OpError {
    #[error("window too shallow for complexity ({0}, {1}, {2})")]
    WindowTooShallow(u32, u32, u32),
    #[error("weight must be positive on every cell")]
    NonPositiveWeight,
}

// ---------------------------------------------------------------------------
// Maximal operators
// ---------------------------------------------------------------------------

/// Dyadic box sums of |f| for every level triple, built by merging halves so
/// that every box sum is a fixed summation tree over its cells. Identical
/// boxes reached through different operators then compare bit-for-bit, which
/// keeps the pointwise domination checks free of spurious rounding
/// violations.
struct BoxSums {
    l1: u32,
    l2: u32,
    l3: u32,
    tables: std::collections::BTreeMap<(u32, u32, u32), Vec<f64>>,
}

impl BoxSums {
    fn new(f: &GridFunction3D) -> Self {
        let (l1, l2, l3) = f.levels();
        let mut tables = std::collections::BTreeMap::new();
        tables.insert((l1, l2, l3), f.values().iter().map(|v| v.abs()).collect::<Vec<f64>>());
        let merge = |fine: &Vec<f64>, d1: usize, d2: usize, d3: usize, axis: usize| -> Vec<f64> {
            // halve the number of blocks along `axis`
            let (o1, o2, o3) = match axis {
                0 => (d1 / 2, d2, d3),
                1 => (d1, d2 / 2, d3),
                _ => (d1, d2, d3 / 2),
            };
            let mut out = vec![0.0; o1 * o2 * o3];
            for a in 0..o1 {
                for b in 0..o2 {
                    for c in 0..o3 {
                        let (f1, f2) = match axis {
                            0 => ((2 * a * d2 + b) * d3 + c, ((2 * a + 1) * d2 + b) * d3 + c),
                            1 => ((a * d2 + 2 * b) * d3 + c, (a * d2 + 2 * b + 1) * d3 + c),
                            _ => ((a * d2 + b) * d3 + 2 * c, (a * d2 + b) * d3 + 2 * c + 1),
                        };
                        out[(a * o2 + b) * o3 + c] = fine[f1] + fine[f2];
                    }
                }
            }
            out
        };
        // reduce along x3 first, then x2, then x1: each coarser table is a
        // deterministic pairwise tree over the cells
        for j3 in (0..l3).rev() {
            let fine = tables[&(l1, l2, j3 + 1)].clone();
            tables.insert((l1, l2, j3), merge(&fine, 1 << l1, 1 << l2, 1 << (j3 + 1), 2));
        }
        for j3 in 0..=l3 {
            for j2 in (0..l2).rev() {
                let fine = tables[&(l1, j2 + 1, j3)].clone();
                tables.insert((l1, j2, j3), merge(&fine, 1 << l1, 1 << (j2 + 1), 1 << j3, 1));
            }
            for j2 in 0..=l2 {
                for j1 in (0..l1).rev() {
                    let fine = tables[&(j1 + 1, j2, j3)].clone();
                    tables.insert((j1, j2, j3), merge(&fine, 1 << (j1 + 1), 1 << j2, 1 << j3, 0));
                }
            }
        }
        Self { l1, l2, l3, tables }
    }

    fn table(&self, shape: (u32, u32, u32)) -> &Vec<f64> {
        assert!(shape.0 <= self.l1 && shape.1 <= self.l2 && shape.2 <= self.l3);
        &self.tables[&shape]
    }
}

/// Cell-block shapes of a family on the window. A grid function is constant
/// on finest cells, so a family rectangle finer than the grid along an axis
/// has the same average as its cell-aligned hull; such virtual levels are
/// clamped to one cell and duplicates dropped. Without them the pointwise
/// domination of the sub-Zygmund maximal function by the composition with
/// the one-parameter maximal function would be cut off by the window.
fn level_shapes(f: &GridFunction3D, family: LatticeFamily) -> Vec<(u32, u32, u32)> {
    let (l1, l2, l3) = f.levels();
    let mut seen = std::collections::BTreeSet::new();
    let mut shapes = Vec::new();
    for j1 in 0..=l3 {
        for j2 in 0..=l3 {
            for j3 in match family {
                LatticeFamily::Zygmund => {
                    if j1 + j2 <= l3 {
                        vec![j1 + j2]
                    } else {
                        vec![]
                    }
                }
                LatticeFamily::Dilated(k) => {
                    let j3 = j1 as i64 + j2 as i64 - k;
                    if (0..=l3 as i64).contains(&j3) {
                        vec![j3 as u32]
                    } else {
                        vec![]
                    }
                }
                LatticeFamily::SubZygmund => {
                    if j1 + j2 <= l3 {
                        ((j1 + j2)..=l3).collect()
                    } else {
                        vec![]
                    }
                }
                LatticeFamily::Full => (0..=l3).collect(),
            } {
                let eff = (j1.min(l1), j2.min(l2), j3.min(l3));
                if seen.insert(eff) {
                    shapes.push(eff);
                }
            }
        }
    }
    shapes
}

/// Pointwise sup of |f|-averages over the rectangles of the family (standard
/// grids) containing each cell. Averages are exact dyadic cell sums divided
/// by power-of-two counts.
pub fn maximal(f: &GridFunction3D, family: LatticeFamily) -> GridFunction3D {
    let (l1, l2, _) = f.levels();
    let (n1, n2, n3) = (f.n1(), f.n2(), f.n3());
    let sums = BoxSums::new(f);
    let mut out = GridFunction3D::zeros(l1, l2);
    for (j1, j2, j3) in level_shapes(f, family) {
        let (b1, b2, b3) = (n1 >> j1, n2 >> j2, n3 >> j3);
        let count = (b1 * b2 * b3) as f64;
        let table = sums.table((j1, j2, j3));
        let (d2, d3) = (n2 / b2, n3 / b3);
        for q1 in 0..(n1 / b1) {
            for q2 in 0..d2 {
                for q3 in 0..d3 {
                    let avg = table[(q1 * d2 + q2) * d3 + q3] / count;
                    for c1 in q1 * b1..(q1 + 1) * b1 {
                        for c2 in q2 * b2..(q2 + 1) * b2 {
                            for c3 in q3 * b3..(q3 + 1) * b3 {
                                let id = out.idx(c1, c2, c3);
                                let v = &mut out.values_mut()[id];
                                if avg > *v {
                                    *v = avg;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Dyadic maximal function in the first variable only.
pub fn maximal_d1(f: &GridFunction3D) -> GridFunction3D {
    let (l1, l2, _) = f.levels();
    let (n1, n2, n3) = (f.n1(), f.n2(), f.n3());
    let mut out = GridFunction3D::zeros(l1, l2);
    for c2 in 0..n2 {
        for c3 in 0..n3 {
            // dyadic sums along x1 by pairwise merging
            let mut level: Vec<f64> = (0..n1).map(|c1| f.get(c1, c2, c3).abs()).collect();
            let mut j = l1 as i64;
            loop {
                let b = n1 >> j;
                for (q, s) in level.iter().enumerate() {
                    let avg = s / b as f64;
                    for c1 in q * b..(q + 1) * b {
                        let id = out.idx(c1, c2, c3);
                        let v = &mut out.values_mut()[id];
                        if avg > *v {
                            *v = avg;
                        }
                    }
                }
                if j == 0 {
                    break;
                }
                level = level.chunks_exact(2).map(|w| w[0] + w[1]).collect();
                j -= 1;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Square functions
// ---------------------------------------------------------------------------

/// S_Z f = (sum over window Zygmund rectangles of |Delta_{I,Z} f|^2)^{1/2}.
pub fn square_function_z(f: &GridFunction3D) -> GridFunction3D {
    let (l1, l2, _) = f.levels();
    let mut acc = GridFunction3D::zeros(l1, l2);
    for j1 in 0..l1 {
        for j2 in 0..l2 {
            let d = diff_x1(&diff_23(f, j2, j1 + j2), j1);
            for (a, b) in acc.values_mut().iter_mut().zip(d.values()) {
                *a += b * b;
            }
        }
    }
    acc.map(f64::sqrt)
}

/// Complexity vector of a shift / U-block.
pub type Complexity = (u32, u32, u32);

/// Admissible (x1-level, x2-level) pairs of Zygmund differences entering
/// U_{K,k} for a K of levels (g1, g2): l(L1) >= 2^{-k1} l(K1) with L1 inside
/// K1, and 2^{-k1} l(K2) <= 2^{k2} l(L2) <= 2^{max(k2,k3)} l(K2).
fn u_level_ranges(k: Complexity, g1: u32, g2: u32, l1: u32, l2: u32) -> Vec<(u32, u32)> {
    let (k1, k2, k3) = k;
    let lo1 = g1;
    let hi1 = (g1 + k1).min(l1.saturating_sub(1));
    let lo2 = (g2 + k2).saturating_sub(k2.max(k3));
    let hi2 = (g2 + k1 + k2).min(l2.saturating_sub(1));
    let mut v = Vec::new();
    for j1 in lo1..=hi1 {
        for j2 in lo2..=hi2 {
            v.push((j1, j2));
        }
    }
    v
}

/// K-shapes (g1, g2, g3) of the lattice D_{2^{-k1-k2+k3}} inside the window.
pub fn u_parent_shapes(k: Complexity, l1: u32, l2: u32) -> Vec<(u32, u32, u32)> {
    let (k1, k2, k3) = k;
    let l3 = l1 + l2;
    let mut v = Vec::new();
    for g1 in 0..=l1 {
        for g2 in 0..=l2 {
            let g3 = g1 as i64 + g2 as i64 + k1 as i64 + k2 as i64 - k3 as i64;
            if (0..=l3 as i64).contains(&g3) {
                v.push((g1, g2, g3 as u32));
            }
        }
    }
    v
}

/// U_{K,k} f for one parent rectangle K (given as a standard-grid Rect3 whose
/// levels satisfy g3 = g1 + g2 + k1 + k2 - k3).
pub fn u_block(f: &GridFunction3D, parent: &Rect3, k: Complexity) -> GridFunction3D {
    let (l1, l2, l3) = f.levels();
    let (g1, g2, g3) = parent.levels();
    assert_eq!(
        g3 as i64,
        g1 as i64 + g2 as i64 + k.0 as i64 + k.1 as i64 - k.2 as i64,
        "parent must lie in the dilated lattice matching k"
    );
    let mut sum = GridFunction3D::zeros(l1, l2);
    for (j1, j2) in u_level_ranges(k, g1, g2, l1, l2) {
        sum.add_scaled_in_place(&diff_x1(&diff_23(f, j2, j1 + j2), j1), 1.0);
    }
    // cut to K
    let runs = [
        axis_cells(&parent.axes[0], l1),
        axis_cells(&parent.axes[1], l2),
        axis_cells(&parent.axes[2], l3),
    ];
    let mut out = GridFunction3D::zeros(l1, l2);
    for c1 in runs[0].iter() {
        for c2 in runs[1].iter() {
            for c3 in runs[2].iter() {
                let id = out.idx(c1, c2, c3);
                out.values_mut()[id] = sum.get(c1, c2, c3);
            }
        }
    }
    out
}

/// U_k f = (sum over K of |U_{K,k} f|^2)^{1/2}. Parents of one shape tile
/// the window, so the sum collapses to one masked term per shape.
pub fn u_square(f: &GridFunction3D, k: Complexity) -> GridFunction3D {
    let (l1, l2, _) = f.levels();
    let mut acc = GridFunction3D::zeros(l1, l2);
    for (g1, g2, _g3) in u_parent_shapes(k, l1, l2) {
        let mut sum = GridFunction3D::zeros(l1, l2);
        let mut any = false;
        for (j1, j2) in u_level_ranges(k, g1, g2, l1, l2) {
            sum.add_scaled_in_place(&diff_x1(&diff_23(f, j2, j1 + j2), j1), 1.0);
            any = true;
        }
        if !any {
            continue;
        }
        for (a, b) in acc.values_mut().iter_mut().zip(sum.values()) {
            *a += b * b;
        }
    }
    acc.map(f64::sqrt)
}

/// The complexity-decay weight 2^{-k1 a1 - k2 min(a23, th) - max(k3-k1-k2,0) th}.
pub fn phi(k: Complexity, theta: f64, alpha1: f64, alpha23: f64) -> f64 {
    let (k1, k2, k3) = (k.0 as f64, k.1 as f64, k.2 as f64);
    let e = -k1 * alpha1 - k2 * alpha23.min(theta) - (k3 - k1 - k2).max(0.0) * theta;
    2f64.powf(e)
}

/// (sum |f|^p w |cell|)^{1/p} for a cellwise weight.
pub fn lpw_norm(f: &GridFunction3D, p: f64, w_cells: &GridFunction3D) -> Result<f64, OpError> {
    assert_eq!(f.levels(), w_cells.levels());
    if w_cells.values().iter().any(|&w| w <= 0.0) {
        return Err(OpError::NonPositiveWeight);
    }
    let terms: Vec<f64> = f
        .values()
        .iter()
        .zip(w_cells.values())
        .map(|(v, w)| v.abs().powf(p) * w)
        .collect();
    Ok((pairwise_sum(&terms) * f.cell_measure()).powf(1.0 / p))
}

// ---------------------------------------------------------------------------
// Zygmund shifts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftForm {
    /// <f, H_{I1,J1} x H_{I23,J23}> <g, h_{J,Z}>
    Form1,
    /// <f, h_{I,Z}> <g, H_{I1,J1} x H_{I23,J23}>
    Form2,
    /// <f, H_{I1,J1} x h_{I23}> <g, h_{J1} x H_{I23,J23}>
    Form3,
    /// <f, h_{I1} x H_{I23,J23}> <g, H_{I1,J1} x h_{J23}>
    Form4,
}

impl ShiftForm {
    pub fn from_index(i: u32) -> Option<Self> {
        match i {
            1 => Some(Self::Form1),
            2 => Some(Self::Form2),
            3 => Some(Self::Form3),
            4 => Some(Self::Form4),
            _ => None,
        }
    }
}

/// How the H function of a factor is chosen for each (I, J).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HSelect {
    /// h0 differences for distinct intervals, the cancellative Haar when
    /// I = J (where the difference would vanish identically).
    Auto,
    Fixed(crate::mra::HVariant),
}

#[derive(Debug, Clone)]
pub enum CoeffRule {
    /// a_{IJK} = |I|/|K| for every admissible triple.
    Maximal,
    /// |a_{IJK}| = |I|/|K| with a deterministic pseudo-random sign.
    MaximalRandomSign { seed: u64 },
    /// a_{IJK} uniform in [-|I|/|K|, |I|/|K|], deterministic in the key.
    RandomInBound { seed: u64 },
    /// Explicit sparse table keyed by (K index, I offset, J offset) within a
    /// shape; entries are clamped to the normalization bound.
    Table(std::collections::BTreeMap<TripleKey, f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TripleKey {
    pub shape: (u32, u32),
    pub k_index: (u64, u64, u64),
    pub i_off: (u32, u32, u32),
    pub j_off: (u32, u32, u32),
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn key_hash(seed: u64, key: &TripleKey) -> u64 {
    let mut h = splitmix(seed ^ 0x5851f42d4c957f2d);
    for v in [
        key.shape.0 as u64,
        key.shape.1 as u64,
        key.k_index.0,
        key.k_index.1,
        key.k_index.2,
        key.i_off.0 as u64,
        key.i_off.1 as u64,
        key.i_off.2 as u64,
        key.j_off.0 as u64,
        key.j_off.1 as u64,
        key.j_off.2 as u64,
    ] {
        h = splitmix(h ^ v);
    }
    h
}

impl CoeffRule {
    fn coeff(&self, key: &TripleKey, bound: f64) -> f64 {
        match self {
            Self::Maximal => bound,
            Self::MaximalRandomSign { seed } => {
                if key_hash(*seed, key) & 1 == 0 {
                    bound
                } else {
                    -bound
                }
            }
            Self::RandomInBound { seed } => {
                let u = key_hash(*seed, key) as f64 / u64::MAX as f64;
                (2.0 * u - 1.0) * bound
            }
            Self::Table(t) => t.get(key).copied().unwrap_or(0.0).clamp(-bound, bound),
        }
    }
}

/// A Zygmund shift Q_k: complexity, pairing form, coefficient rule and
/// H-variant selectors, on the standard window lattice of the given caps.
#[derive(Debug, Clone)]
pub struct ShiftSpec {
    pub k: Complexity,
    pub form: ShiftForm,
    pub rule: CoeffRule,
    pub h1_select: HSelect,
    pub h23_select: HSelect,
    /// Haar signature used for the cancellative (2,3) factors.
    pub sig: Sig23,
    pub l1: u32,
    pub l2: u32,
}

/// K-shapes (g1, g2, g3) admissible for the shift inside the window: the
/// children I, J must support cancellative Haar factors.
pub fn shift_shapes(k: Complexity, l1: u32, l2: u32) -> Vec<(u32, u32, u32)> {
    let (k1, k2, k3) = k;
    let mut v = Vec::new();
    if l1 < k1 + 1 || l2 < k2 + 1 {
        return v;
    }
    for g1 in 0..=(l1 - 1 - k1) {
        for g2 in 0..=(l2 - 1 - k2) {
            let g3 = g1 as i64 + g2 as i64 + k1 as i64 + k2 as i64 - k3 as i64;
            if g3 >= 0 {
                v.push((g1, g2, g3 as u32));
            }
        }
    }
    v
}

pub fn make_shift(
    k: Complexity,
    form: ShiftForm,
    rule: CoeffRule,
    l1: u32,
    l2: u32,
) -> Result<ShiftSpec, OpError> {
    if shift_shapes(k, l1, l2).is_empty() {
        return Err(OpError::WindowTooShallow(k.0, k.1, k.2));
    }
    Ok(ShiftSpec {
        k,
        form,
        rule,
        h1_select: HSelect::Auto,
        h23_select: HSelect::Auto,
        sig: (1, 1),
        l1,
        l2,
    })
}

/// One factor of a pairing: (sign, child offset, cancellative?).
type FactorTerm = (f64, u32, bool);

fn factor_terms(which: FactorSpec, select: HSelect, i: u32, j: u32, axis23: bool) -> Vec<FactorTerm> {
    use crate::mra::HVariant::*;
    match which {
        FactorSpec::HaarAtI => vec![(1.0, i, true)],
        FactorSpec::HaarAtJ => vec![(1.0, j, true)],
        FactorSpec::H => {
            let variant = match select {
                HSelect::Fixed(v) => v,
                HSelect::Auto => {
                    if i == j {
                        HaarI
                    } else if axis23 {
                        AvgJminusI
                    } else {
                        AvgIminusJ
                    }
                }
            };
            match variant {
                AvgIminusJ => vec![(1.0, i, false), (-1.0, j, false)],
                AvgJminusI => vec![(1.0, j, false), (-1.0, i, false)],
                HaarI => vec![(1.0, i, true)],
                HaarJ => vec![(1.0, j, true)],
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum FactorSpec {
    H,
    HaarAtI,
    HaarAtJ,
}

/// (f-side axis1, f-side axis23, g-side axis1, g-side axis23)
fn form_factors(form: ShiftForm) -> [FactorSpec; 4] {
    use FactorSpec::*;
    match form {
        ShiftForm::Form1 => [H, H, HaarAtJ, HaarAtJ],
        ShiftForm::Form2 => [HaarAtI, HaarAtI, H, H],
        ShiftForm::Form3 => [H, HaarAtI, HaarAtJ, H],
        ShiftForm::Form4 => [HaarAtI, H, H, HaarAtJ],
    }
}

/// Per-parent pairing tables: [cancellative?][axis] -> child-indexed values.
struct KTables {
    // [t1][t23] with t = 0 avg, 1 haar; child index c1 * 4^{k23} + c23
    data: [[Vec<f64>; 2]; 2],
    n23: usize,
}

fn child_sign(t_in_child: usize, cells_per_child: usize, cancellative: bool) -> f64 {
    if !cancellative || t_in_child < cells_per_child / 2 {
        1.0
    } else {
        -1.0
    }
}

impl ShiftSpec {
    fn child_counts(&self) -> (usize, usize, usize) {
        (1usize << self.k.0, 1usize << self.k.1, 1usize << self.k.2)
    }

    /// |I|/|K| normalization bound.
    pub fn coeff_bound(&self) -> f64 {
        0.5f64.powi((self.k.0 + self.k.1 + self.k.2) as i32)
    }

    fn tables(
        &self,
        f: &GridFunction3D,
        shape: (u32, u32, u32),
        pos: (u64, u64, u64),
    ) -> KTables {
        let (l1, l2, l3) = f.levels();
        let (g1, g2, g3) = shape;
        let (c1n, c2n, c3n) = self.child_counts();
        let n23 = c2n * c3n;
        let ktot = c1n * n23;
        let mut data = [[vec![0.0; ktot], vec![0.0; ktot]], [vec![0.0; ktot], vec![0.0; ktot]]];
        let run1 = axis_cells(&std_interval(g1, pos.0), l1);
        let run2 = axis_cells(&std_interval(g2, pos.1), l2);
        let run3 = axis_cells(&std_interval(g3, pos.2), l3);
        let cpc1 = run1.len / c1n;
        let cpc2 = run2.len / c2n;
        let cpc3 = run3.len / c3n;
        // child Haar normalizations |child|^{-1/2} per axis
        let s1 = 2f64.powi((g1 + self.k.0) as i32).sqrt();
        let s23 = 2f64.powi((g2 + self.k.1) as i32).sqrt() * 2f64.powi((g3 + self.k.2) as i32).sqrt();
        let meas = f.cell_measure();
        for (t1, c1) in run1.iter().enumerate() {
            let b1 = t1 / cpc1;
            let sign1_haar = child_sign(t1 % cpc1, cpc1, true);
            for (t2, c2) in run2.iter().enumerate() {
                let b2 = t2 / cpc2;
                let sign2 = child_sign(t2 % cpc2, cpc2, self.sig.0 == 1);
                for (t3, c3) in run3.iter().enumerate() {
                    let b3 = t3 / cpc3;
                    let sign3 = child_sign(t3 % cpc3, cpc3, self.sig.1 == 1);
                    let v = f.get(c1, c2, c3) * meas;
                    let idx = b1 * n23 + b2 * c3n + b3;
                    // axis1 avg / haar, axis23 avg (h0 x h0) / haar (h^sig)
                    data[0][0][idx] += v * s1 * s23;
                    data[0][1][idx] += v * s1 * s23 * sign2 * sign3;
                    data[1][0][idx] += v * s1 * sign1_haar * s23;
                    data[1][1][idx] += v * s1 * sign1_haar * s23 * sign2 * sign3;
                }
            }
        }
        KTables { data, n23 }
    }

    fn scatter(
        &self,
        out: &mut GridFunction3D,
        acc: &KTables,
        shape: (u32, u32, u32),
        pos: (u64, u64, u64),
    ) {
        let (l1, l2, l3) = out.levels();
        let (g1, g2, g3) = shape;
        let (c1n, c2n, c3n) = self.child_counts();
        let n23 = c2n * c3n;
        let run1 = axis_cells(&std_interval(g1, pos.0), l1);
        let run2 = axis_cells(&std_interval(g2, pos.1), l2);
        let run3 = axis_cells(&std_interval(g3, pos.2), l3);
        let cpc1 = run1.len / c1n;
        let cpc2 = run2.len / c2n;
        let cpc3 = run3.len / c3n;
        let s1 = 2f64.powi((g1 + self.k.0) as i32).sqrt();
        let s23 = 2f64.powi((g2 + self.k.1) as i32).sqrt() * 2f64.powi((g3 + self.k.2) as i32).sqrt();
        for (t1, c1) in run1.iter().enumerate() {
            let b1 = t1 / cpc1;
            let sign1_haar = child_sign(t1 % cpc1, cpc1, true);
            for (t2, c2) in run2.iter().enumerate() {
                let b2 = t2 / cpc2;
                let sign2 = child_sign(t2 % cpc2, cpc2, self.sig.0 == 1);
                for (t3, c3) in run3.iter().enumerate() {
                    let b3 = t3 / cpc3;
                    let sign3 = child_sign(t3 % cpc3, cpc3, self.sig.1 == 1);
                    let idx = b1 * n23 + b2 * c3n + b3;
                    let mut v = 0.0;
                    v += acc.data[0][0][idx] * s1 * s23;
                    v += acc.data[0][1][idx] * s1 * s23 * sign2 * sign3;
                    v += acc.data[1][0][idx] * s1 * sign1_haar * s23;
                    v += acc.data[1][1][idx] * s1 * sign1_haar * s23 * sign2 * sign3;
                    let id = out.idx(c1, c2, c3);
                    out.values_mut()[id] += v;
                }
            }
        }
    }

    fn apply_impl(&self, f: &GridFunction3D, transpose: bool) -> GridFunction3D {
        assert_eq!(f.levels(), (self.l1, self.l2, self.l1 + self.l2), "resolution mismatch");
        let (c1n, c2n, c3n) = self.child_counts();
        let n23 = c2n * c3n;
        let bound = self.coeff_bound();
        let [f1, f23, g1s, g23s] = form_factors(self.form);
        let (pair1, pair23, out1, out23) = if transpose {
            (g1s, g23s, f1, f23)
        } else {
            (f1, f23, g1s, g23s)
        };
        let mut out = GridFunction3D::zeros(self.l1, self.l2);
        for shape in shift_shapes(self.k, self.l1, self.l2) {
            let (g1, g2, g3) = shape;
            for m1 in 0..(1u64 << g1) {
                for m2 in 0..(1u64 << g2) {
                    for m3 in 0..(1u64 << g3) {
                        let pos = (m1, m2, m3);
                        let ff = self.tables(f, shape, pos);
                        let mut acc = KTables {
                            data: [
                                [vec![0.0; c1n * n23], vec![0.0; c1n * n23]],
                                [vec![0.0; c1n * n23], vec![0.0; c1n * n23]],
                            ],
                            n23,
                        };
                        for i1 in 0..c1n as u32 {
                            for i2 in 0..c2n as u32 {
                                for i3 in 0..c3n as u32 {
                                    for j1 in 0..c1n as u32 {
                                        for j2 in 0..c2n as u32 {
                                            for j3 in 0..c3n as u32 {
                                                let key = TripleKey {
                                                    shape: (g1, g2),
                                                    k_index: pos,
                                                    i_off: (i1, i2, i3),
                                                    j_off: (j1, j2, j3),
                                                };
                                                let a = self.rule.coeff(&key, bound);
                                                if a == 0.0 {
                                                    continue;
                                                }
                                                let i23 = (i2 as usize) * c3n + i3 as usize;
                                                let j23 = (j2 as usize) * c3n + j3 as usize;
                                                // pairing value against the input side
                                                let t1s = factor_terms(pair1, self.h1_select, i1, j1, false);
                                                let t23s = factor_terms(
                                                    pair23,
                                                    self.h23_select,
                                                    i23 as u32,
                                                    j23 as u32,
                                                    true,
                                                );
                                                let mut pv = 0.0;
                                                for &(s1, c1, h1) in &t1s {
                                                    for &(s2, c23, h23) in &t23s {
                                                        pv += s1
                                                            * s2
                                                            * ff.data[h1 as usize][h23 as usize]
                                                                [c1 as usize * n23 + c23 as usize];
                                                    }
                                                }
                                                if pv == 0.0 {
                                                    continue;
                                                }
                                                // scatter into the output side
                                                let o1s = factor_terms(out1, self.h1_select, i1, j1, false);
                                                let o23s = factor_terms(
                                                    out23,
                                                    self.h23_select,
                                                    i23 as u32,
                                                    j23 as u32,
                                                    true,
                                                );
                                                for &(s1, c1, h1) in &o1s {
                                                    for &(s2, c23, h23) in &o23s {
                                                        acc.data[h1 as usize][h23 as usize]
                                                            [c1 as usize * n23 + c23 as usize] +=
                                                            a * pv * s1 * s2;
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        self.scatter(&mut out, &acc, shape, pos);
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, f: &GridFunction3D) -> GridFunction3D {
        self.apply_impl(f, false)
    }

    /// Adjoint with respect to the unweighted pairing.
    pub fn apply_adjoint(&self, g: &GridFunction3D) -> GridFunction3D {
        self.apply_impl(g, true)
    }

    /// Every admissible (K, I, J) triple with its coefficient.
    pub fn coefficients(&self) -> Vec<(TripleKey, f64)> {
        let (c1n, c2n, c3n) = self.child_counts();
        let bound = self.coeff_bound();
        let mut v = Vec::new();
        for (g1, g2, g3) in shift_shapes(self.k, self.l1, self.l2) {
            for m1 in 0..(1u64 << g1) {
                for m2 in 0..(1u64 << g2) {
                    for m3 in 0..(1u64 << g3) {
                        for i1 in 0..c1n as u32 {
                            for i2 in 0..c2n as u32 {
                                for i3 in 0..c3n as u32 {
                                    for j1 in 0..c1n as u32 {
                                        for j2 in 0..c2n as u32 {
                                            for j3 in 0..c3n as u32 {
                                                let key = TripleKey {
                                                    shape: (g1, g2),
                                                    k_index: (m1, m2, m3),
                                                    i_off: (i1, i2, i3),
                                                    j_off: (j1, j2, j3),
                                                };
                                                v.push((key, self.rule.coeff(&key, bound)));
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        v
    }
}

/// Operator norm on L^2(w) by power iteration on Q*_w Q, where
/// Q*_w = w^{-1} Q^T w. Stops after `iters` steps or when the Rayleigh
/// quotient stagnates below `tol` relative change.
pub fn shift_norm_weighted(
    spec: &ShiftSpec,
    w_cells: &GridFunction3D,
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<f64, OpError> {
    if w_cells.values().iter().any(|&w| w <= 0.0) {
        return Err(OpError::NonPositiveWeight);
    }
    let (l1, l2, _) = w_cells.levels();
    let n = w_cells.len();
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let h = splitmix(seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15));
            h as f64 / u64::MAX as f64 - 0.5
        })
        .collect();
    let wvals = w_cells.values().to_vec();
    let wnorm = |x: &[f64]| -> f64 {
        x.iter().zip(&wvals).map(|(a, w)| a * a * w).sum::<f64>().sqrt()
    };
    let nv = wnorm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut last = 0.0;
    for _ in 0..iters {
        let vf = GridFunction3D::from_values(l1, l2, v.clone());
        let qv = spec.apply(&vf);
        let lam = {
            let num: f64 = qv.values().iter().zip(&wvals).map(|(a, w)| a * a * w).sum();
            let den: f64 = v.iter().zip(&wvals).map(|(a, w)| a * a * w).sum();
            num / den
        };
        // t = w^{-1} Q^T (w . Qv)
        let wq = GridFunction3D::from_values(
            l1,
            l2,
            qv.values().iter().zip(&wvals).map(|(a, w)| a * w).collect(),
        );
        let qt = spec.apply_adjoint(&wq);
        let mut t: Vec<f64> = qt.values().iter().zip(&wvals).map(|(a, w)| a / w).collect();
        let tn = wnorm(&t);
        if tn == 0.0 {
            return Ok(0.0);
        }
        t.iter_mut().for_each(|x| *x /= tn);
        v = t;
        if lam > 0.0 && (lam - last).abs() <= tol * lam {
            return Ok(lam.sqrt());
        }
        last = lam;
    }
    Ok(last.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mra::delta_z;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_f(l1: u32, l2: u32, seed: u64) -> GridFunction3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1usize << (2 * (l1 + l2));
        GridFunction3D::from_values(l1, l2, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn random_nonneg(l1: u32, l2: u32, seed: u64) -> GridFunction3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1usize << (2 * (l1 + l2));
        GridFunction3D::from_values(l1, l2, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
    }

    #[test]
    fn maximal_of_constant() {
        let f = GridFunction3D::constant(2, 2, 3.5);
        for fam in [LatticeFamily::Zygmund, LatticeFamily::SubZygmund, LatticeFamily::Full] {
            let m = maximal(&f, fam);
            assert!(m.values().iter().all(|&v| (v - 3.5).abs() < 1e-14));
        }
    }

    #[test]
    fn dilated_maximal_dominated_by_lambda_times_zygmund() {
        for seed in 0..5u64 {
            let f = random_nonneg(3, 3, seed);
            let mz = maximal(&f, LatticeFamily::Zygmund);
            for k in 0..=3i64 {
                let ml = maximal(&f, LatticeFamily::Dilated(k));
                let lam = 2f64.powi(k as i32);
                for (a, b) in ml.values().iter().zip(mz.values()) {
                    assert!(*a <= lam * b, "violation at lambda {lam}");
                }
            }
        }
    }

    #[test]
    fn sub_maximal_dominated_by_composition() {
        for seed in 0..5u64 {
            let f = random_nonneg(3, 3, seed);
            let lhs = maximal(&f, LatticeFamily::SubZygmund);
            let rhs = maximal_d1(&maximal(&f, LatticeFamily::Zygmund));
            for (a, b) in lhs.values().iter().zip(rhs.values()) {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn square_function_of_single_haar() {
        let r = ZygRectangle::new([std_interval(1, 0), std_interval(1, 1), std_interval(2, 1)]).unwrap();
        let h = haar_z_fn(2, 2, &r, (1, 1));
        let s = square_function_z(&h);
        let habs = h.map(f64::abs);
        assert!(s.sub(&habs).max_abs() < 1e-12);
        // constants are killed
        let c = GridFunction3D::constant(2, 2, 1.0);
        assert!(square_function_z(&c).max_abs() < 1e-13);
    }

    #[test]
    fn square_function_parseval() {
        for seed in 0..5u64 {
            let f = random_f(2, 2, seed);
            let s = square_function_z(&f);
            let ex = crate::mra::expand_z(&f);
            let lhs = s.norm_l2().powi(2) + ex.remainder.norm_l2().powi(2);
            let rhs = f.norm_l2().powi(2);
            assert!((lhs - rhs).abs() < 1e-12 * rhs);
        }
    }

    #[test]
    fn u_block_zero_complexity() {
        // k = 0: U_{K,0} = 1_K sum over L with L1 = K1, l(L2) = l(K2)
        let f = random_f(3, 3, 2);
        let k = (0u32, 0u32, 0u32);
        let parent = Rect3 {
            axes: [std_interval(1, 1), std_interval(1, 0), std_interval(2, 2)],
        };
        let u = u_block(&f, &parent, k);
        // direct route: sum Delta_{L,Z} over L1 = K1, lev(L2) = 1, cut to K
        let mut direct = GridFunction3D::zeros(3, 3);
        for m2 in 0..2u64 {
            for m3 in 0..4u64 {
                let l = ZygRectangle::new([std_interval(1, 1), std_interval(1, m2), std_interval(2, m3)])
                    .unwrap();
                direct.add_scaled_in_place(&delta_z(&f, &l).unwrap(), 1.0);
            }
        }
        let runs = [
            axis_cells(&parent.axes[0], 3),
            axis_cells(&parent.axes[1], 3),
            axis_cells(&parent.axes[2], 6),
        ];
        let mut masked = GridFunction3D::zeros(3, 3);
        for c1 in runs[0].iter() {
            for c2 in runs[1].iter() {
                for c3 in runs[2].iter() {
                    let id = masked.idx(c1, c2, c3);
                    masked.values_mut()[id] = direct.get(c1, c2, c3);
                }
            }
        }
        assert!(u.sub(&masked).max_abs() < 1e-12);
    }

    #[test]
    fn u_square_counting_bound() {
        for seed in 0..3u64 {
            let f = random_f(3, 3, seed);
            let fnorm = f.norm_l2().powi(2);
            for k1 in 0..=2u32 {
                for k2 in 0..=2u32 {
                    for k3 in 0..=2u32 {
                        let u = u_square(&f, (k1, k2, k3));
                        let lhs = u.norm_l2().powi(2);
                        let bound = (k1 + 1) as f64 * (k1 + k2.max(k3) + 1) as f64 * fnorm;
                        assert!(
                            lhs <= bound * (1.0 + 1e-12),
                            "k=({k1},{k2},{k3}): {lhs} > {bound}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi((0, 0, 0), 1.0, 1.0, 1.0), 1.0);
        assert_eq!(phi((1, 0, 0), 0.7, 1.0, 0.3), 0.5);
        assert_eq!(phi((0, 0, 3), 1.0, 1.0, 1.0), 0.125);
    }

    #[test]
    fn lpw_norm_basics() {
        let f = random_f(2, 2, 5);
        let w = GridFunction3D::constant(2, 2, 1.0);
        let n2 = lpw_norm(&f, 2.0, &w).unwrap();
        assert!((n2 - f.norm_l2()).abs() < 1e-13);
        // scaling
        let n2c = lpw_norm(&f.scaled(-3.0), 2.0, &w).unwrap();
        assert!((n2c - 3.0 * n2).abs() < 1e-12);
        // nonpositive weight rejected
        let wbad = GridFunction3D::zeros(2, 2);
        assert_eq!(lpw_norm(&f, 2.0, &wbad).unwrap_err(), OpError::NonPositiveWeight);
    }

    #[test]
    fn holder_pairing_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let f = random_f(2, 2, rng.gen());
            let g = random_f(2, 2, rng.gen());
            let w = GridFunction3D::from_values(
                2,
                2,
                (0..256).map(|_| rng.gen_range(0.1..2.0)).collect(),
            );
            let p = 3.0;
            let pp = p / (p - 1.0);
            let wd = w.map(|v| v.powf(1.0 - pp));
            let lhs = f.inner(&g).abs();
            let rhs = lpw_norm(&f, p, &w).unwrap() * lpw_norm(&g, pp, &wd).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_complexity_maximal_shift_is_diagonal() {
        // k = 0, form 1, maximal coefficients: a_{IIK} = 1 and the operator
        // acts as sum_I <f, h_{I,Z}> h_{I,Z} over the window family
        let spec = make_shift((0, 0, 0), ShiftForm::Form1, CoeffRule::Maximal, 2, 2).unwrap();
        assert_eq!(spec.coeff_bound(), 1.0);
        let f = random_f(2, 2, 3);
        let qf = spec.apply(&f);
        let mut want = GridFunction3D::zeros(2, 2);
        for r in window_rects(2, 2) {
            let h = haar_z_fn(2, 2, &r, (1, 1));
            want.add_scaled_in_place(&h, f.inner(&h));
        }
        assert!(qf.sub(&want).max_abs() < 1e-12);
    }

    #[test]
    fn shift_linearity() {
        let spec = make_shift(
            (1, 1, 2),
            ShiftForm::Form3,
            CoeffRule::RandomInBound { seed: 5 },
            3,
            3,
        )
        .unwrap();
        let f = random_f(3, 3, 1);
        let g = random_f(3, 3, 2);
        let lhs = spec.apply(&f.add(&g.scaled(2.5)));
        let rhs = spec.apply(&f).add(&spec.apply(&g).scaled(2.5));
        assert!(lhs.sub(&rhs).max_abs() < 1e-11);
    }

    #[test]
    fn shift_single_coefficient_matches_brute_force() {
        // one nonzero coefficient: Qf = a <f, F_IJ> G_IJ
        let mut table = std::collections::BTreeMap::new();
        let key = TripleKey {
            shape: (0, 0),
            k_index: (0, 0, 0),
            i_off: (1, 0, 2),
            j_off: (0, 1, 1),
        };
        table.insert(key, 0.05);
        let spec = ShiftSpec {
            k: (1, 1, 2),
            form: ShiftForm::Form3,
            rule: CoeffRule::Table(table),
            h1_select: HSelect::Auto,
            h23_select: HSelect::Auto,
            sig: (1, 1),
            l1: 3,
            l2: 3,
        };
        let f = random_f(3, 3, 9);
        let qf = spec.apply(&f);
        // brute force: F = (h0_{I1} - h0_{J1}) x h_{I23},
        //              G = h_{J1} x (h0_{J23} - h0_{I23})
        let i1 = std_interval(1, 1);
        let j1 = std_interval(1, 0);
        let i2 = std_interval(1, 0);
        let j2 = std_interval(1, 1);
        let i3 = std_interval(2, 2);
        let j3 = std_interval(2, 1);
        let p1f = crate::mra::build_h1(&i1, &j1, crate::mra::HVariant::AvgIminusJ, 3).unwrap();
        let h23f = crate::mra::build_h23((&i2, &i3), (&i2, &i3), crate::mra::HVariant::HaarI, (1, 1), 3, 6)
            .unwrap();
        let mut ffun = GridFunction3D::zeros(3, 3);
        for (p2, p3) in &h23f.terms {
            ffun.add_scaled_in_place(&crate::mra::tensor(3, 3, &p1f, p2, p3), 1.0);
        }
        let p1g = crate::mra::haar1d_profile(&j1, 1, 3);
        let h23g = crate::mra::build_h23((&i2, &i3), (&j2, &j3), crate::mra::HVariant::AvgJminusI, (1, 1), 3, 6)
            .unwrap();
        let mut gfun = GridFunction3D::zeros(3, 3);
        for (p2, p3) in &h23g.terms {
            gfun.add_scaled_in_place(&crate::mra::tensor(3, 3, &p1g, p2, p3), 1.0);
        }
        let want = gfun.scaled(0.05 * f.inner(&ffun));
        assert!(
            qf.sub(&want).max_abs() < 1e-12,
            "diff {}",
            qf.sub(&want).max_abs()
        );
    }

    #[test]
    fn coefficients_respect_bound_and_count() {
        let spec = make_shift(
            (1, 1, 2),
            ShiftForm::Form1,
            CoeffRule::RandomInBound { seed: 11 },
            3,
            3,
        )
        .unwrap();
        let bound = spec.coeff_bound();
        let coeffs = spec.coefficients();
        assert!(coeffs.iter().all(|(_, a)| a.abs() <= bound));
        // per parent: (2^1 2^1 2^2)^2 = 256 pairs; parents: shapes (g1,g2)
        // in {0,1}^2 with g3 = g1+g2, so sum 2^{2(g1+g2)} = 1+4+4+16 = 25
        assert_eq!(coeffs.len(), 25 * 256);
    }

    #[test]
    fn adjoint_pairing_identity() {
        let spec = make_shift(
            (1, 1, 0),
            ShiftForm::Form4,
            CoeffRule::RandomInBound { seed: 23 },
            3,
            3,
        )
        .unwrap();
        let f = random_f(3, 3, 4);
        let g = random_f(3, 3, 5);
        let lhs = spec.apply(&f).inner(&g);
        let rhs = f.inner(&spec.apply_adjoint(&g));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1e-3));
    }

    #[test]
    fn form1_adjoint_is_symmetric_form() {
        use crate::mra::HVariant;
        let q1 = ShiftSpec {
            k: (1, 1, 1),
            form: ShiftForm::Form1,
            rule: CoeffRule::Maximal,
            h1_select: HSelect::Fixed(HVariant::AvgIminusJ),
            h23_select: HSelect::Fixed(HVariant::AvgJminusI),
            sig: (1, 1),
            l1: 3,
            l2: 3,
        };
        let q2 = ShiftSpec {
            form: ShiftForm::Form2,
            h1_select: HSelect::Fixed(HVariant::AvgJminusI),
            h23_select: HSelect::Fixed(HVariant::AvgIminusJ),
            ..q1.clone()
        };
        let f = random_f(3, 3, 6);
        let g = random_f(3, 3, 7);
        let lhs = q1.apply(&f).inner(&g);
        let rhs = f.inner(&q2.apply(&g));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1e-6));
    }

    #[test]
    fn unweighted_norm_sanity_bound() {
        // artifact bound for zero-complexity maximal shifts: ||Q|| <= 4
        for form in [ShiftForm::Form1, ShiftForm::Form2, ShiftForm::Form3, ShiftForm::Form4] {
            let spec = make_shift((0, 0, 0), form, CoeffRule::Maximal, 2, 2).unwrap();
            let w = GridFunction3D::constant(2, 2, 1.0);
            let n = shift_norm_weighted(&spec, &w, 50, 1e-6, 1).unwrap();
            assert!(n <= 4.0 + 1e-9, "form {form:?}: {n}");
        }
    }

    #[test]
    fn window_too_shallow() {
        assert_eq!(
            make_shift((3, 0, 0), ShiftForm::Form1, CoeffRule::Maximal, 2, 2).unwrap_err(),
            OpError::WindowTooShallow(3, 0, 0)
        );
    }
}
