//! Analytic densities, noise schedules and score-matching objectives.
//!
//! The Gaussian-mixture family is closed under Gaussian smoothing, which
//! makes it the ground truth for every score-model check in the crate.

mod losses;
mod mixture;
mod schedule;

pub use losses::{
    combined_dsm_loss, combined_dsm_terms, dae_loss, dae_score_relation, dsm_loss, level_weight,
    perturb, theorem1_check, CoupledDenoiser, Denoiser, FnDenoiser, IdentityDenoiser,
    Theorem1Report,
};
pub use mixture::{GaussianMixture, GmmScore, MixtureComponent, MixtureSpec};
pub use schedule::{NoiseSchedule, ScheduleSpec};
