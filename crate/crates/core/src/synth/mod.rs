//! Synthetic households: appliance activation models summed into a noisy
//! mains signal, with the per-appliance traces kept as ground truth.

mod appliance;
mod household;

pub use appliance::{ApplianceKind, ApplianceModel, Phase};
pub use household::{
    mix_seed, simulate_fleet, simulate_household, simulate_household_at, Fleet, FleetConfig, Household, NoiseModel,
    SplitFractions, DEFAULT_PERIOD, DEFAULT_START,
};
