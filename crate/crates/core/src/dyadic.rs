//! Shifted dyadic lattices on the unit torus.
//!
//! A shift pattern omega in {0,1}^{L_max} moves the standard grid at level j
//! by sum_{i > j} 2^{-i} omega_i (mod 1). All endpoints are dyadic rationals
//! held as integers in units of 2^{-L_max}, so lattice combinatorics are
//! exact. Goodness of an interval is measured against its k-th parent in
//! unwrapped parent-relative coordinates.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("k-parent would cross level 0 (level {level}, k {k})")]
    LevelUnderflow { level: u32, k: u32 },
    #[error("level {0} exceeds the grid's finest level {1}")]
    LevelTooFine(u32, u32),
    #[error("goodness is only defined for k >= 2 (got {0})")]
    GoodnessComplexity(u32),
}

/// Shift bits indexed by scale: `bits[i-1]` is the bit for scale 2^{-i},
/// i = 1..=L_max. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftPattern {
    bits: Vec<u8>,
}

impl ShiftPattern {
    pub fn new(bits: Vec<u8>) -> Self {
        assert!(bits.iter().all(|&b| b <= 1), "shift bits must be 0 or 1");
        Self { bits }
    }

    pub fn zeros(l_max: u32) -> Self {
        Self { bits: vec![0; l_max as usize] }
    }

    /// Pattern from the low bits of `code` (bit i-1 of `code` is the level-i bit).
    pub fn from_code(code: u64, l_max: u32) -> Self {
        Self { bits: (1..=l_max).map(|i| ((code >> (i - 1)) & 1) as u8).collect() }
    }

    pub fn len(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bit for scale 2^{-i}, 1-indexed.
    pub fn bit(&self, i: u32) -> u8 {
        self.bits[(i - 1) as usize]
    }
}

/// Dyadic interval of the lattice: left endpoint index*2^{-level} + offset
/// (mod 1), side length exactly 2^{-level}. The offset is the accumulated
/// shift of its level, a dyadic rational num/2^{log_den}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DyadicInterval {
    pub level: u32,
    pub index: u64,
    pub offset_num: u64,
    pub offset_log_den: u32,
}

impl DyadicInterval {
    pub fn side_len(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    /// Left endpoint in [0,1).
    pub fn left(&self) -> f64 {
        let off = self.offset_num as f64 / (1u64 << self.offset_log_den) as f64;
        let x = self.index as f64 * self.side_len() + off;
        x - x.floor()
    }
}

/// Translation by n side lengths along the torus: I + n*l(I) (mod 1).
pub fn translate_dot(i: &DyadicInterval, n: i64) -> DyadicInterval {
    let m = 1i64 << i.level;
    let idx = (i.index as i64 + n).rem_euclid(m) as u64;
    DyadicInterval { index: idx, ..*i }
}

/// All intervals of levels 0..=l_max of one shifted lattice, periodic wrap.
#[derive(Debug, Clone)]
pub struct ShiftedGrid {
    pattern: ShiftPattern,
    l_max: u32,
}

/// Exhaustive goodness statistics over the shift bits that decide goodness.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GoodnessReport {
    pub total_patterns: u64,
    pub good_patterns: u64,
    pub probability_num: u64,
    pub probability_den: u64,
}

pub fn build_lattice(pattern: ShiftPattern, l_max: u32) -> ShiftedGrid {
    ShiftedGrid::new(pattern, l_max)
}

impl ShiftedGrid {
    pub fn new(pattern: ShiftPattern, l_max: u32) -> Self {
        assert!(l_max >= 1, "need at least one level");
        assert_eq!(pattern.len(), l_max, "pattern length must equal L_max");
        Self { pattern, l_max }
    }

    pub fn standard(l_max: u32) -> Self {
        Self::new(ShiftPattern::zeros(l_max), l_max)
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn pattern(&self) -> &ShiftPattern {
        &self.pattern
    }

    /// Window size in finest units.
    fn window(&self) -> u64 {
        1u64 << self.l_max
    }

    /// Offset of level j in units of 2^{-l_max}: sum_{i>j} 2^{l_max-i} bit_i.
    pub fn level_offset_units(&self, level: u32) -> u64 {
        let mut off = 0u64;
        for i in (level + 1)..=self.l_max {
            off += (self.pattern.bit(i) as u64) << (self.l_max - i);
        }
        off
    }

    pub fn interval(&self, level: u32, index: u64) -> Result<DyadicInterval, LatticeError> {
        if level > self.l_max {
            return Err(LatticeError::LevelTooFine(level, self.l_max));
        }
        debug_assert!(index < (1u64 << level));
        Ok(DyadicInterval {
            level,
            index,
            offset_num: self.level_offset_units(level),
            offset_log_den: self.l_max,
        })
    }

    pub fn intervals_at_level(&self, level: u32) -> impl Iterator<Item = DyadicInterval> + '_ {
        let off = self.level_offset_units(level);
        (0..(1u64 << level)).map(move |index| DyadicInterval {
            level,
            index,
            offset_num: off,
            offset_log_den: self.l_max,
        })
    }

    /// Left endpoint in finest units, wrapped into [0, 2^l_max).
    pub fn start_units(&self, i: &DyadicInterval) -> u64 {
        let w = self.window();
        ((i.index << (self.l_max - i.level)) + self.level_offset_units(i.level)) & (w - 1)
    }

    /// The k-th parent: the unique level-(level-k) lattice interval containing `i`.
    pub fn k_parent(&self, i: &DyadicInterval, k: u32) -> Result<DyadicInterval, LatticeError> {
        if k > i.level {
            return Err(LatticeError::LevelUnderflow { level: i.level, k });
        }
        let lp = i.level - k;
        let w = self.window();
        let rel = (self.start_units(i) + w - self.level_offset_units(lp)) & (w - 1);
        let index = rel >> (self.l_max - lp);
        self.interval(lp, index)
    }

    /// Position of `i` inside its k-th parent, in units of l(i): 0..2^k-1.
    fn slot_in_parent(&self, i: &DyadicInterval, k: u32) -> Result<u64, LatticeError> {
        let p = self.k_parent(i, k)?;
        let w = self.window();
        let rel = (self.start_units(i) + w - self.start_units(&p)) & (w - 1);
        Ok(rel >> (self.l_max - i.level))
    }

    /// d(I, boundary of I^{(k)}) >= 2^{k-2} l(I), distances taken in the
    /// unwrapped coordinates of the parent.
    pub fn is_k_good(&self, i: &DyadicInterval, k: u32) -> Result<bool, LatticeError> {
        if k < 2 {
            return Err(LatticeError::GoodnessComplexity(k));
        }
        let r = self.slot_in_parent(i, k)?;
        let q = 1u64 << (k - 2);
        let slots = 1u64 << k;
        Ok(r >= q && slots - 1 - r >= q)
    }

    /// JSON dump: array of (level, index, offset_numerator, offset_denominator).
    pub fn to_json(&self) -> String {
        let mut rows: Vec<(u32, u64, u64, u64)> = Vec::new();
        for level in 0..=self.l_max {
            for i in self.intervals_at_level(level) {
                let (mut num, mut den) = (i.offset_num, 1u64 << i.offset_log_den);
                while num % 2 == 0 && den > 1 && num > 0 {
                    num /= 2;
                    den /= 2;
                }
                if num == 0 {
                    den = 1;
                }
                rows.push((level, i.index, num, den));
            }
        }
        serde_json::to_string(&rows).expect("serializable")
    }
}

/// Exhaustively enumerate the 2^k shift bits for scales in
/// (level-k, level] that decide k-goodness of the level-`level` interval
/// with the given standard index. Other bits do not matter.
pub fn goodness_probability(level: u32, k: u32, index: u64) -> Result<GoodnessReport, LatticeError> {
    if k < 2 {
        return Err(LatticeError::GoodnessComplexity(k));
    }
    if k > level {
        return Err(LatticeError::LevelUnderflow { level, k });
    }
    let total = 1u64 << k;
    let mut good = 0u64;
    for code in 0..total {
        // bits for scales level-k+1 ..= level; all others zero
        let mut bits = vec![0u8; level as usize];
        for (t, bit) in bits.iter_mut().enumerate().take(level as usize).skip((level - k) as usize) {
            *bit = ((code >> (t - (level - k) as usize)) & 1) as u8;
        }
        let grid = ShiftedGrid::new(ShiftPattern::new(bits), level);
        let i = grid.interval(level, index)?;
        if grid.is_k_good(&i, k)? {
            good += 1;
        }
    }
    let g = gcd(good.max(1), total);
    Ok(GoodnessReport {
        total_patterns: total,
        good_patterns: good,
        probability_num: good / g,
        probability_den: total / g,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
