//! Spectral density approximations and polynomial filter design for
//! consensus iterations on directed block-model networks.

pub mod consensus;
pub mod error;
pub mod filter;
pub mod girko;
pub mod graph_models;
pub mod grid;
pub mod rng;
pub mod spectral;

pub use consensus::{ComparisonRow, ComparisonTable, FilterKind, Trajectory};
pub use error::{Error, Result};
pub use filter::{Filter, Region, SamplePoints};
pub use girko::{CanonicalSolution, DensityReport, DiagonalSolution};
pub use graph_models::{DirectedGraph, IterationMatrix, MeanSpectrum, SbmConfig, VarianceProfile};
pub use grid::{DensityGrid, GridSpec, Plane};
pub use spectral::{ConsensusProjector, MatrixKind, SpectrumSample};
