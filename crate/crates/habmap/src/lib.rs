//! Fine-grained land-cover classification from multi-channel raster data
//! using sparse single-pixel annotations.
//!
//! The toolkit combines two classifiers over georeferenced raster stacks:
//! a pixel-based random forest ([`forest`]) and a region-based convolutional
//! network that labels only the center pixel of a patch ([`nnet`]). Their
//! probability outputs are blended into an ensemble ([`inference`]), which
//! also drives full-raster map production. Training supports coarse-taxonomy
//! pretraining, transfer with layer freezing, unsupervised pretraining by
//! mutual-information clustering, and semi-supervised Noisy Student
//! distillation ([`ssl`]).
//!
//! Supporting modules: [`raster`] (data model, standardization, NDVI
//! aggregates, patch extraction), [`dataset`] (annotations, taxonomies,
//! overlap-aware splits), [`metrics`] (multiclass evaluation and cross-fold
//! aggregation), [`synth`] (seeded synthetic benchmarks), and [`plot`]
//! (SVG rendering of curves and confusion matrices).
//!
//! Everything stochastic is driven by explicit seeds; reruns with identical
//! inputs and seeds produce byte-identical artifacts.

pub mod dataset;
pub mod forest;
pub mod inference;
pub mod metrics;
pub mod nnet;
pub mod plot;
pub mod raster;
pub mod rng;
pub mod ssl;
pub mod synth;
