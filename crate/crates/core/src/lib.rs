//! Core of the collaborative AR authoring relay: geometry kernels, the
//! authored scene model, localization, spatial captures, annotations, the
//! wire protocol and session persistence.

pub mod geometry;
pub mod canonical;
pub mod ids;
pub mod scene;
pub mod capture;
pub mod localization;
pub mod annotation;
pub mod protocol;
pub mod state;
pub mod persistence;
