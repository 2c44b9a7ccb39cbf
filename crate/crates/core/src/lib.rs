//! Energy-efficient cross-layer resource allocation for synchronous CDMA uplinks.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: the real-valued chip-rate signal model, SINR/MSE evaluation,
//!   MMSE receivers and the efficiency/utility functions.
//! * [`tmse`]: alternating receiver/spreading-code iterations minimising the
//!   total MSE, with the norm-constrained code update.
//! * [`game`]: non-cooperative utility-maximisation games (power only,
//!   power + receiver, power + receiver + codes).
//! * [`multicell`]: the same games with several access points, each user
//!   served by its strongest one.
//! * [`lsa`]: large-system analysis: asymptotic SINR fixed points, the
//!   distributed power-control rule, profile prediction and the social optimum.
//! * [`channel`]: Rayleigh fading with uniform path loss, binary spreading
//!   codes, and the discretised CDF of squared gains with its inverse.
//! * [`experiment`]: configuration-driven Monte Carlo runner producing CSV tables.

pub mod channel;
pub mod error;
pub mod experiment;
pub mod game;
pub mod lsa;
pub mod model;
pub mod multicell;
pub mod roots;
pub mod tmse;
pub mod units;

pub use error::{Error, Result};

pub use game::{GameConfig, GameVariant};
pub use model::{GameOutcome, NetworkState, SystemConfig};
