//! Parameters, layers and the optimizer shared by the networks in this crate.

mod layers;
mod optim;
mod params;

pub use layers::{Conv2d, GroupNorm};
pub use optim::{Adam, AdamConfig};
pub use params::{check_same_layout, ParamBuilder, ParamStore};
