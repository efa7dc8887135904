//! Numerical workbench for dyadic multiresolution analysis adapted to
//! Zygmund dilations: shifted lattices, Zygmund rectangles and martingale
//! differences, A_{p,Z} weights, maximal and square functions, dyadic
//! Zygmund shifts, and checkers for the kernel conditions of singular
//! integrals invariant under (x1, x2, x3) -> (s x1, t x2, st x3).

pub mod dyadic;
pub mod experiments;
pub mod grid;
pub mod kernels;
pub mod mra;
pub mod operators;
pub mod util;
pub mod weights;
pub mod zyg;
