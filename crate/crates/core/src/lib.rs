//! Cycle-consistent variational autoencoder for non-parallel spectral
//! voice conversion.
//!
//! The toolkit models per-frame vocoder features (excitation plus
//! mel-cepstra) with a pair of recurrent networks: an encoder producing a
//! diagonal-Gaussian latent per frame and a decoder conditioned on a
//! binary speaker code. Training recycles converted spectra back through
//! the encoder/decoder for a configurable number of cycles so that the
//! conversion path — which non-parallel data cannot supervise directly —
//! is optimized through cyclic reconstruction.
//!
//! Crate layout mirrors the pipeline:
//!
//! - [`autodiff`]: reverse-mode tape with a finite-difference checker
//! - [`features`]: feature files, corpus statistics, excitation transform,
//!   synthetic corpus generation
//! - [`net`]: the recurrent spectral model (dilated context, GRU with
//!   output feedback, fixed normalization)
//! - [`objective`]: variational and cycle-consistent losses
//! - [`trainer`]: Glorot init, Adam, segmentation, the epoch loop,
//!   checkpointing
//! - [`eval`]: conversion plus DTW/MCD/GV-postfilter/latent-cosine metrics

pub mod autodiff;
pub mod features;
pub mod net;
pub mod objective;
pub mod rng;
pub mod trainer;

pub mod eval;
