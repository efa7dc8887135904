//! Functions constant on the finest dyadic cells of the unit window.
//!
//! A `GridFunction3D` stores one value per cell of the 2^l1 x 2^l2 x 2^l3
//! grid on [0,1)^3, with l3 = l1 + l2 so that every Zygmund rectangle of the
//! window is a union of cells. Integrals are exact cell-measure-weighted
//! sums; inner products use tree summation.

use crate::dyadic::DyadicInterval;
use crate::util::pairwise_sum;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction3D {
    l1: u32,
    l2: u32,
    l3: u32,
    values: Vec<f64>,
}

/// Contiguous run of cells along one axis, wrapping modulo `n`.
#[derive(Debug, Clone, Copy)]
pub struct CellRun {
    pub start: usize,
    pub len: usize,
    pub n: usize,
}

impl CellRun {
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |t| (self.start + t) % self.n)
    }

    /// At most two contiguous spans [a, b) covering the run without wrap.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        if self.start + self.len <= self.n {
            vec![(self.start, self.start + self.len)]
        } else {
            vec![(self.start, self.n), (0, self.start + self.len - self.n)]
        }
    }
}

/// Cells covered by a lattice interval at axis resolution 2^axis_level.
pub fn axis_cells(i: &DyadicInterval, axis_level: u32) -> CellRun {
    assert!(i.level <= axis_level, "interval finer than the grid");
    assert!(
        i.offset_log_den <= axis_level || i.offset_num.trailing_zeros() >= i.offset_log_den - axis_level || i.offset_num == 0,
        "interval offset not representable at this resolution"
    );
    let n = 1usize << axis_level;
    let off = if i.offset_log_den <= axis_level {
        (i.offset_num as usize) << (axis_level - i.offset_log_den)
    } else {
        (i.offset_num >> (i.offset_log_den - axis_level)) as usize
    };
    let start = ((i.index as usize) << (axis_level - i.level)) + off;
    CellRun { start: start % n, len: 1 << (axis_level - i.level), n }
}

impl GridFunction3D {
    pub fn zeros(l1: u32, l2: u32) -> Self {
        let l3 = l1 + l2;
        let n = 1usize << (l1 + l2 + l3);
        Self { l1, l2, l3, values: vec![0.0; n] }
    }

    pub fn constant(l1: u32, l2: u32, c: f64) -> Self {
        let mut f = Self::zeros(l1, l2);
        f.values.iter_mut().for_each(|v| *v = c);
        f
    }

    pub fn from_fn(l1: u32, l2: u32, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut g = Self::zeros(l1, l2);
        let (n1, n2, n3) = (g.n1(), g.n2(), g.n3());
        for c1 in 0..n1 {
            for c2 in 0..n2 {
                for c3 in 0..n3 {
                    let i = g.idx(c1, c2, c3);
                    g.values[i] = f(c1, c2, c3);
                }
            }
        }
        g
    }

    pub fn from_values(l1: u32, l2: u32, values: Vec<f64>) -> Self {
        let l3 = l1 + l2;
        assert_eq!(values.len(), 1usize << (l1 + l2 + l3));
        Self { l1, l2, l3, values }
    }

    pub fn levels(&self) -> (u32, u32, u32) {
        (self.l1, self.l2, self.l3)
    }

    pub fn n1(&self) -> usize {
        1 << self.l1
    }
    pub fn n2(&self) -> usize {
        1 << self.l2
    }
    pub fn n3(&self) -> usize {
        1 << self.l3
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn idx(&self, c1: usize, c2: usize, c3: usize) -> usize {
        (c1 * self.n2() + c2) * self.n3() + c3
    }

    #[inline]
    pub fn get(&self, c1: usize, c2: usize, c3: usize) -> f64 {
        self.values[self.idx(c1, c2, c3)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Lebesgue measure of one cell.
    pub fn cell_measure(&self) -> f64 {
        0.5f64.powi((self.l1 + self.l2 + self.l3) as i32)
    }

    /// Cell widths per axis.
    pub fn cell_widths(&self) -> (f64, f64, f64) {
        (
            0.5f64.powi(self.l1 as i32),
            0.5f64.powi(self.l2 as i32),
            0.5f64.powi(self.l3 as i32),
        )
    }

    /// Cell center coordinates.
    pub fn cell_center(&self, c1: usize, c2: usize, c3: usize) -> (f64, f64, f64) {
        let (h1, h2, h3) = self.cell_widths();
        ((c1 as f64 + 0.5) * h1, (c2 as f64 + 0.5) * h2, (c3 as f64 + 0.5) * h3)
    }

    /// Int f g dx, exact cell sum with tree summation.
    pub fn inner(&self, g: &GridFunction3D) -> f64 {
        assert_eq!(self.levels(), g.levels());
        let prods: Vec<f64> = self.values.iter().zip(&g.values).map(|(a, b)| a * b).collect();
        pairwise_sum(&prods) * self.cell_measure()
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn integral(&self) -> f64 {
        pairwise_sum(&self.values) * self.cell_measure()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| c * v).collect(), ..*self }
    }

    pub fn add(&self, g: &GridFunction3D) -> Self {
        assert_eq!(self.levels(), g.levels());
        Self {
            values: self.values.iter().zip(&g.values).map(|(a, b)| a + b).collect(),
            ..*self
        }
    }

    pub fn sub(&self, g: &GridFunction3D) -> Self {
        assert_eq!(self.levels(), g.levels());
        Self {
            values: self.values.iter().zip(&g.values).map(|(a, b)| a - b).collect(),
            ..*self
        }
    }

    pub fn add_scaled_in_place(&mut self, g: &GridFunction3D, c: f64) {
        assert_eq!(self.levels(), g.levels());
        for (a, b) in self.values.iter_mut().zip(&g.values) {
            *a += c * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|v| f(*v)).collect(), ..*self }
    }

    /// Binary serialization: one JSON header line, then little-endian f64s in
    /// row-major (x1, x2, x3) order.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        let header = serde_json::json!({
            "levels": [self.l1, self.l2, self.l3],
            "layout": "row-major-x1x2x3",
            "dtype": "f64-le",
            "count": self.values.len(),
        });
        writeln!(file, "{header}")?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "missing header"))?;
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let levels = header["levels"]
            .as_array()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad levels"))?;
        let l1 = levels[0].as_u64().unwrap() as u32;
        let l2 = levels[1].as_u64().unwrap() as u32;
        let count = header["count"].as_u64().unwrap() as usize;
        let data = &bytes[nl + 1..];
        if data.len() != count * 8 {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "length mismatch"));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self::from_values(l1, l2, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::ShiftedGrid;

    #[test]
    fn inner_product_of_constants() {
        let f = GridFunction3D::constant(2, 1, 3.0);
        let g = GridFunction3D::constant(2, 1, 2.0);
        assert!((f.inner(&g) - 6.0).abs() < 1e-15);
        assert!((f.integral() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn axis_cells_wrap() {
        let g = ShiftedGrid::new(crate::dyadic::ShiftPattern::new(vec![1, 0]), 2);
        let i = g.interval(0, 0).unwrap(); // starts at 1/2, wraps
        let run = axis_cells(&i, 2);
        assert_eq!(run.start, 2);
        assert_eq!(run.len, 4);
        assert_eq!(run.spans(), vec![(2, 4), (0, 2)]);
    }

    #[test]
    fn save_load_roundtrip() {
        let f = GridFunction3D::from_fn(2, 2, |a, b, c| (a * 31 + b * 7 + c) as f64);
        let dir = std::env::temp_dir().join("zygmund_grid_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.grid");
        f.save(&path).unwrap();
        let g = GridFunction3D::load(&path).unwrap();
        assert_eq!(f, g);
    }
}
