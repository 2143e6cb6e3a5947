//! Minimal DDPM: schedule, MLP denoiser, training and reverse samplers.

pub mod checkpoint;
mod denoiser;
mod sampler;
mod schedule;
mod train;

pub use denoiser::{timestep_embedding, Denoiser, DenoiserDims, Layers, NoisePredictor};
pub use sampler::{
    default_record_every, predict_x0, reconstruct_trajectories, reconstruct_trajectory,
    reverse_step, run_chains, sample_from, SamplerConfig, SamplerKind, Trajectory,
};
pub(crate) use sampler::standard_normal_row;
pub use schedule::NoiseSchedule;
pub use train::{train, Adam, TrainConfig, TrainOutcome};
