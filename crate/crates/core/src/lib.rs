//! Balls-in-bins processes with power-law feedback `f(x) = x^p`.
//!
//! The crate covers the discrete process, its exponential embedding, the
//! large-deviation rate function of the eventual-leadership event, the ODE
//! followed by trajectories conditioned on that event, and exact oracles
//! (dynamic programming, closed forms, path enumeration) used to check
//! everything else.

pub mod error;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod quad;
pub mod ratefn;
pub mod series;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    classify_regime, transition_prob_bin1, InitialCondition, PowerFeedback, Regime, Trajectory,
    UrnState,
};
pub use ratefn::{QuadConfig, RateProfile};

