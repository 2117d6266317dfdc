//! Visual place recognition with region-specialized ensembles of compact
//! random-projection classifiers.
//!
//! A query image is sliced by several grids into regions; every region is
//! classified by its own group of classifiers, and their top-K scores are
//! summed into a vote over reference places.
//!
//! ```no_run
//! use regiondroso::{datasets, Ensemble, EnsembleConfig};
//!
//! let spec = datasets::SynthSpec { n_places: 50, ..Default::default() };
//! let (reference, query, _gt) = datasets::generate_synthetic(&spec)?;
//! let mut ensemble = Ensemble::build(EnsembleConfig::default(), reference.len())?;
//! ensemble.train_all(&reference.images)?;
//! let hit = ensemble.localize(&query.images[7])?;
//! println!("place {} (confidence {:.3})", hit.place, hit.confidence);
//! # Ok::<(), regiondroso::Error>(())
//! ```

pub mod datasets;
pub mod drosonet;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod image;
pub mod model_io;
pub mod par;
pub mod partition;
pub mod voting;

pub use drosonet::{DrosoNet, DrosoNetConfig, ScoreVector};
pub use ensemble::{Ensemble, EnsembleConfig};
pub use error::{Error, Result};
pub use image::{GrayImage, InputVector};
pub use par::Schedule;
pub use partition::{GridSpec, PartitionPlan};
pub use voting::Retrieval;
