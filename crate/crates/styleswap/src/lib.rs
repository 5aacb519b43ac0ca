//! Unpaired image-to-image translation through surgery on pre-trained
//! style-based generators.
//!
//! The library turns a generator trained on one image domain into a
//! generator for another domain without ever training the two domains
//! jointly: fine-tune with the mapping network frozen, swap coarse
//! synthesis blocks back in from the base model, and measure how far the
//! result drifted with a Monte-Carlo model distance. Images enter the
//! latent space through optimization-based inversion, optionally
//! constrained to the semantic basis spanned by the eigenvectors of the
//! stacked style affines.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod generator;
pub mod imageio;
pub mod latent;
pub mod linalg;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod surgery;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
