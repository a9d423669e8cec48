//! Dual-spatial hyperspectral classification.
//!
//! A cube is band-normalized and reduced by group averaging. One branch
//! smooths it into a structural profile (local polynomial TV fits solved by
//! split Bregman, compacted with kernel PCA) and classifies that; the other
//! classifies the reduced cube directly and refines the probabilities with an
//! extended random walker guided by the cube's first kernel principal
//! component. The two probability stacks are fused by a weighted argmax.
//!
//! Algorithms are generic over [`Real`]; the aliases below fix `f64`, the
//! precision used by the pipeline and the command-line tool.

// `!(x > 0.0)` is used on purpose so NaN fails validation; index loops mirror
// the textbook linear algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod decision;
pub mod dimred;
pub mod erw;
pub mod error;
pub mod io;
pub mod kclassify;
pub mod kpca;
pub mod linalg;
pub mod pipeline;
pub mod prep;
pub mod raster;
pub mod scalar;
pub mod spfilter;
pub mod synth;

pub use error::{Error, Result};
pub use raster::LabelMap;
pub use scalar::Real;

pub type HsiCube = raster::HsiCube<f64>;
pub type ProbStack = raster::ProbStack<f64>;
pub type KpcaModel = kpca::KpcaModel<f64>;
pub type TrainedClassifier = kclassify::TrainedClassifier<f64>;
pub type GridLaplacian = erw::GridLaplacian<f64>;
pub type SyntheticScene = synth::SyntheticScene<f64>;
