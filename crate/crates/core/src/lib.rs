//! Multiview contrastive learning for high-content screening.
//!
//! The crate bundles the contrastive objectives ([`losses`]), the image
//! reduction pipeline for Cell Painting style screens ([`preprocess`]), the two
//! embedding evaluations ([`retrieval`], [`batch_effect`]) and a small
//! two-tower training harness on synthetic data ([`toy_train`]). The
//! `hcs-contrast` binary exposes each stage as a subcommand ([`cli`]).

pub mod batch_effect;
pub mod cli;
pub mod config;
pub mod losses;
pub mod preprocess;
pub mod retrieval;
pub mod seeding;
pub mod toy_train;
