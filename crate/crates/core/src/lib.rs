//! Desk-scale multi-modal volumetric lesion analysis with concept-based
//! explanations: synthetic PET/CT-like phantom generation, a two-stage
//! detect-then-filter pipeline built on a small 3D CNN, native radiomics
//! concept extraction, regression-concept-vector explanations, and
//! FROC/ROC evaluation.

pub mod concepts;
pub mod evalx;
pub mod neuralnet;
pub mod pipeline;
pub mod rcax;
pub mod phantom;
pub mod plot;
pub mod volgrid;
