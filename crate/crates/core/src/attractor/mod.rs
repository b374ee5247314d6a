//! Synthetic dataset family built from five chaotic attractors.
//!
//! Each class is one dynamical system. Samples are integrated with a fixed
//! step RK5 scheme, passed through a random per-channel sine transform,
//! rescaled so that channel means and the global peak carry no class
//! information, and optionally corrupted with white noise (SD2, SD3).

pub mod generate;
pub mod rk5;
pub mod systems;

pub use generate::{
    apply_transform, corrupt, generate_dataset, generate_sample, rescale, sample_instance, Corruption,
    GenerationConfig, RawSample, TransformIntervals, TransformParams, Variant, NOISE_STD,
};
pub use systems::{integrate_system, Dynamics, Interval, SystemId, SystemSpec, DUFFING_OMEGA};
