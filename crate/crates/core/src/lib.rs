//! Relation-aware self-supervised embeddings for vector map features.

pub mod autodiff;
pub mod checks;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod index;
pub mod losses;
pub mod model;
pub mod probes;
pub mod relations;
pub mod rng;
pub mod synthcity;
pub mod topology_oracle;
pub mod train;
pub mod windows;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/overview.md")]
pub mod book_overview {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/geoentities.md")]
pub mod book_geoentities {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/windows.md")]
pub mod book_windows {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/encoders.md")]
pub mod book_encoders {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
pub mod book_model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/objectives.md")]
pub mod book_objectives {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
pub mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/probes.md")]
pub mod book_probes {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}
