//! Independent reference implementations used to cross-check voxrca-core in
//! tests. Everything here is written from the definitions, by enumeration
//! where possible, and deliberately avoids the code paths of the crate under
//! test: texture features come from direct pair/run/zone/dependence
//! enumeration, the network forward pass from naive nested-loop convolution,
//! linear solves from nalgebra, and eigenvalues of the co-occurrence Q
//! matrix from a general (non-symmetric) eigensolver.

pub mod netcheck;
pub mod radiomics;
pub mod stats;
