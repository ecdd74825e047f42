//! Change-detection based controller switching for finite MDPs whose
//! transition kernel changes once, at a geometrically distributed time.
//!
//! The pipeline is:
//!
//! 1. [`mdp`]: solve a discounted-cost optimal policy for each mode.
//! 2. [`chain`]: stationary distributions and mixing of the four induced
//!    chains (policy `i` run under mode `j`).
//! 3. [`regret`]: the false-alarm/delay tradeoff coefficient `λ`.
//! 4. [`qcd`]: Bayesian belief filter and the optimal stopping problem on a
//!    belief grid, yielding state-dependent switching thresholds.
//! 5. [`sim`]: coupled Monte Carlo comparison of the change-detection
//!    controller against a controller that observes the mode.
//!
//! [`environments`] builds the random-MDP and inventory instances, and
//! [`pipeline`] strings the stages together.

pub mod chain;
pub mod environments;
pub mod error;
pub mod mdp;
pub mod pipeline;
pub mod qcd;
pub mod regret;
pub mod sim;

pub use error::{Error, Result};
