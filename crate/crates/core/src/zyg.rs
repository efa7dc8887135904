//! Zygmund rectangles and the dilated rectangle families.
//!
//! A triple of dyadic intervals (I1, I2, I3) is a Zygmund rectangle when
//! l(I1) l(I2) = l(I3). The family D_lambda relaxes this to
//! lambda l(I1) l(I2) = l(I3) for a dyadic lambda = 2^k; sub-Zygmund
//! rectangles have l(I3) <= l(I1) l(I2).

use crate::dyadic::{DyadicInterval, LatticeError, ShiftedGrid};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RectError {
    #[error("axes do not satisfy the Zygmund relation: levels ({0}, {1}, {2})")]
    NotZygmund(u32, u32, u32),
    #[error("hull axis would be coarser than the window")]
    WindowOverflow,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// General tri-parameter dyadic rectangle, no aspect constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect3 {
    pub axes: [DyadicInterval; 3],
}

impl Rect3 {
    pub fn levels(&self) -> (u32, u32, u32) {
        (self.axes[0].level, self.axes[1].level, self.axes[2].level)
    }

    pub fn volume(&self) -> f64 {
        0.5f64.powi((self.axes[0].level + self.axes[1].level + self.axes[2].level) as i32)
    }
}

/// Rectangle with the Zygmund side-length constraint
/// level(I3) = level(I1) + level(I2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZygRectangle {
    rect: Rect3,
}

impl ZygRectangle {
    pub fn new(axes: [DyadicInterval; 3]) -> Result<Self, RectError> {
        if axes[0].level + axes[1].level != axes[2].level {
            return Err(RectError::NotZygmund(axes[0].level, axes[1].level, axes[2].level));
        }
        Ok(Self { rect: Rect3 { axes } })
    }

    pub fn axes(&self) -> &[DyadicInterval; 3] {
        &self.rect.axes
    }

    pub fn as_rect(&self) -> &Rect3 {
        &self.rect
    }

    pub fn levels(&self) -> (u32, u32, u32) {
        self.rect.levels()
    }
}

/// Exponent e with l(I3) = 2^e l(I1) l(I2), i.e. lambda = 2^e.
pub fn lambda_exp(r: &Rect3) -> i64 {
    let (g1, g2, g3) = r.levels();
    g1 as i64 + g2 as i64 - g3 as i64
}

/// lambda = l(I3) / (l(I1) l(I2)); equals 1 exactly on Zygmund rectangles.
pub fn lambda_class(r: &Rect3) -> f64 {
    2f64.powi(lambda_exp(r) as i32)
}

/// Zygmund eccentricity max(lambda, 1/lambda) >= 1.
pub fn ecc_z(r: &Rect3) -> f64 {
    2f64.powi(lambda_exp(r).unsigned_abs() as i32)
}

/// Smallest containing Zygmund rectangle obtained by widening one axis to a
/// lattice ancestor: the third axis if lambda < 1, the first if lambda > 1.
/// Its volume is exactly ecc_z(r) * |r|.
pub fn zygmund_hull(r: &Rect3, grids: &[&ShiftedGrid; 3]) -> Result<ZygRectangle, RectError> {
    let e = lambda_exp(r);
    let (g1, g2, g3) = r.levels();
    let mut axes = r.axes;
    if e > 0 {
        // third side is longer than l1*l2: widen the first axis to level g3-g2
        if (g3 as i64) < g2 as i64 {
            return Err(RectError::WindowOverflow);
        }
        axes[0] = grids[0].k_parent(&r.axes[0], (g1 as i64 - (g3 as i64 - g2 as i64)) as u32)?;
    } else if e < 0 {
        // third side too short: widen it to level g1+g2
        axes[2] = grids[2].k_parent(&r.axes[2], (g3 - (g1 + g2)) as u32)?;
    }
    ZygRectangle::new(axes)
}

/// Componentwise k-parent. For a Zygmund input the result lies in
/// D_{2^{-k1-k2+k3}}.
pub fn rect_k_parent(
    i: &ZygRectangle,
    kvec: (u32, u32, u32),
    grids: &[&ShiftedGrid; 3],
) -> Result<Rect3, RectError> {
    let a = i.axes();
    Ok(Rect3 {
        axes: [
            grids[0].k_parent(&a[0], kvec.0)?,
            grids[1].k_parent(&a[1], kvec.1)?,
            grids[2].k_parent(&a[2], kvec.2)?,
        ],
    })
}

/// Per-axis level caps for finite-window enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelCaps {
    pub l1: u32,
    pub l2: u32,
    pub l3: u32,
}

impl LevelCaps {
    /// Zygmund-compatible caps: l3 = l1 + l2.
    pub fn zygmund(l1: u32, l2: u32) -> Self {
        Self { l1, l2, l3: l1 + l2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeFamily {
    /// lambda = 1.
    Zygmund,
    /// lambda = 2^k, k in Z.
    Dilated(i64),
    /// l3 <= l1*l2, the union of Dilated(2^k) over k <= 0.
    SubZygmund,
    /// All tri-parameter rectangles.
    Full,
}

impl LatticeFamily {
    /// CLI selector: "zyg", "dil:<k>", "sub", "full".
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zyg" => Some(Self::Zygmund),
            "sub" => Some(Self::SubZygmund),
            "full" => Some(Self::Full),
            _ => s.strip_prefix("dil:").and_then(|k| k.parse().ok().map(Self::Dilated)),
        }
    }

    fn third_levels(&self, j1: u32, j2: u32, caps: &LevelCaps) -> Vec<u32> {
        let s = j1 as i64 + j2 as i64;
        match self {
            Self::Zygmund => vec![s as u32].into_iter().filter(|&j| j <= caps.l3).collect(),
            Self::Dilated(k) => {
                let j3 = s - k;
                if j3 >= 0 && j3 <= caps.l3 as i64 {
                    vec![j3 as u32]
                } else {
                    vec![]
                }
            }
            Self::SubZygmund => ((s as u32)..=caps.l3).collect(),
            Self::Full => (0..=caps.l3).collect(),
        }
    }
}

/// Every rectangle of the family inside the window, exactly once, in
/// lexicographic order of (level1, level2, level3, index triple).
pub fn enumerate(
    family: LatticeFamily,
    grids: &[&ShiftedGrid; 3],
    caps: LevelCaps,
) -> Vec<Rect3> {
    assert!(caps.l1 <= grids[0].l_max() && caps.l2 <= grids[1].l_max() && caps.l3 <= grids[2].l_max());
    let mut out = Vec::new();
    for j1 in 0..=caps.l1 {
        for j2 in 0..=caps.l2 {
            for j3 in family.third_levels(j1, j2, &caps) {
                for m1 in 0..(1u64 << j1) {
                    for m2 in 0..(1u64 << j2) {
                        for m3 in 0..(1u64 << j3) {
                            out.push(Rect3 {
                                axes: [
                                    grids[0].interval(j1, m1).expect("capped"),
                                    grids[1].interval(j2, m2).expect("capped"),
                                    grids[2].interval(j3, m3).expect("capped"),
                                ],
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_grids(l: u32) -> (ShiftedGrid, ShiftedGrid, ShiftedGrid) {
        (ShiftedGrid::standard(l), ShiftedGrid::standard(l), ShiftedGrid::standard(l))
    }

    fn rect(grids: &[&ShiftedGrid; 3], levels: (u32, u32, u32)) -> Rect3 {
        Rect3 {
            axes: [
                grids[0].interval(levels.0, 0).unwrap(),
                grids[1].interval(levels.1, 0).unwrap(),
                grids[2].interval(levels.2, 0).unwrap(),
            ],
        }
    }

    #[test]
    fn lambda_and_ecc_examples() {
        let (a, b, c) = std_grids(6);
        let g = [&a, &b, &c];
        assert_eq!(lambda_class(&rect(&g, (1, 2, 3))), 1.0);
        assert_eq!(ecc_z(&rect(&g, (1, 2, 3))), 1.0);
        assert_eq!(lambda_class(&rect(&g, (1, 1, 1))), 2.0);
        assert_eq!(ecc_z(&rect(&g, (1, 1, 1))), 2.0);
        assert_eq!(lambda_class(&rect(&g, (0, 0, 3))), 0.125);
        assert_eq!(ecc_z(&rect(&g, (0, 0, 3))), 8.0);
    }

    #[test]
    fn hull_examples() {
        let (a, b, c) = std_grids(6);
        let g = [&a, &b, &c];
        // already Zygmund: unchanged
        let z = rect(&g, (1, 2, 3));
        assert_eq!(*zygmund_hull(&z, &g).unwrap().as_rect(), z);
        // lambda = 2: widen the first axis to full length, volume doubles
        let r = rect(&g, (1, 1, 1));
        let h = zygmund_hull(&r, &g).unwrap();
        assert_eq!(h.levels(), (0, 1, 1));
        assert_eq!(h.as_rect().volume(), ecc_z(&r) * r.volume());
        // lambda = 1/2: widen the third axis to level 2
        let r = rect(&g, (1, 1, 3));
        let h = zygmund_hull(&r, &g).unwrap();
        assert_eq!(h.levels(), (1, 1, 2));
        assert_eq!(h.as_rect().volume(), ecc_z(&r) * r.volume());
        // overflow: g3 < g2 forces an axis coarser than the window
        let r = rect(&g, (3, 2, 1));
        assert_eq!(zygmund_hull(&r, &g).unwrap_err(), RectError::WindowOverflow);
    }

    #[test]
    fn hull_volume_identity_sweep() {
        let (a, b, c) = std_grids(6);
        let g = [&a, &b, &c];
        for r in enumerate(LatticeFamily::Full, &g, LevelCaps { l1: 2, l2: 2, l3: 4 }) {
            match zygmund_hull(&r, &g) {
                Ok(h) => {
                    assert_eq!(h.as_rect().volume(), ecc_z(&r) * r.volume());
                    assert_eq!(lambda_exp(h.as_rect()), 0);
                }
                Err(RectError::WindowOverflow) => {
                    let (_, g2, g3) = r.levels();
                    assert!(g3 < g2);
                }
                Err(e) => panic!("unexpected {e}"),
            }
        }
    }

    #[test]
    fn rect_k_parent_levels() {
        let (a, b, c) = std_grids(8);
        let g = [&a, &b, &c];
        let i = ZygRectangle::new([
            a.interval(2, 1).unwrap(),
            b.interval(2, 2).unwrap(),
            c.interval(4, 7).unwrap(),
        ])
        .unwrap();
        let p = rect_k_parent(&i, (0, 0, 0), &g).unwrap();
        assert_eq!(p, *i.as_rect());
        let p = rect_k_parent(&i, (1, 1, 2), &g).unwrap();
        assert_eq!(p.levels(), (1, 1, 2));
        assert_eq!(lambda_exp(&p), 0);
        let i = ZygRectangle::new([
            a.interval(3, 0).unwrap(),
            b.interval(3, 0).unwrap(),
            c.interval(6, 0).unwrap(),
        ])
        .unwrap();
        let p = rect_k_parent(&i, (2, 2, 0), &g).unwrap();
        assert_eq!(lambda_class(&p), 2f64.powi(-4));
    }

    #[test]
    fn zygmund_count_caps22() {
        let (a, b, c) = std_grids(4);
        let g = [&a, &b, &c];
        let rects = enumerate(LatticeFamily::Zygmund, &g, LevelCaps::zygmund(2, 2));
        assert_eq!(rects.len(), 441);
        // closed form: (1 + 4 + 16)^2
        let closed: u64 = (0..=2u32)
            .flat_map(|j1| (0..=2u32).map(move |j2| 1u64 << (2 * (j1 + j2))))
            .sum();
        assert_eq!(rects.len() as u64, closed);
    }

    #[test]
    fn dilated_one_matches_zygmund_after_shift() {
        let (a, b, c) = std_grids(4);
        let g = [&a, &b, &c];
        let caps = LevelCaps::zygmund(2, 2);
        assert_eq!(
            enumerate(LatticeFamily::Dilated(0), &g, caps),
            enumerate(LatticeFamily::Zygmund, &g, caps)
        );
    }

    #[test]
    fn dilated_can_be_empty() {
        let (a, b, c) = std_grids(4);
        let g = [&a, &b, &c];
        let caps = LevelCaps { l1: 0, l2: 0, l3: 4 };
        assert!(enumerate(LatticeFamily::Dilated(1), &g, caps).is_empty());
    }

    #[test]
    fn sub_zygmund_filter() {
        let (a, b, c) = std_grids(4);
        let g = [&a, &b, &c];
        let caps = LevelCaps { l1: 1, l2: 1, l3: 1 };
        for r in enumerate(LatticeFamily::SubZygmund, &g, caps) {
            let (j1, j2, j3) = r.levels();
            assert!(j3 >= j1 + j2);
        }
    }

    #[test]
    fn ecc_is_max_of_lambda_and_inverse() {
        let (a, b, c) = std_grids(4);
        let g = [&a, &b, &c];
        for r in enumerate(LatticeFamily::Full, &g, LevelCaps { l1: 2, l2: 2, l3: 4 }) {
            let l = lambda_class(&r);
            assert_eq!(ecc_z(&r), l.max(1.0 / l));
        }
    }

    #[test]
    fn family_selector_parse() {
        assert_eq!(LatticeFamily::parse("zyg"), Some(LatticeFamily::Zygmund));
        assert_eq!(LatticeFamily::parse("dil:-2"), Some(LatticeFamily::Dilated(-2)));
        assert_eq!(LatticeFamily::parse("sub"), Some(LatticeFamily::SubZygmund));
        assert_eq!(LatticeFamily::parse("full"), Some(LatticeFamily::Full));
        assert_eq!(LatticeFamily::parse("nope"), None);
    }
}
