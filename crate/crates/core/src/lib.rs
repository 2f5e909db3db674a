//! Hybrid multi-scale pedestrian dynamics engine.
//!
//! Two operational models run side by side on disjoint regions of one
//! scenario: a spatial-continuous social-force model inside circular
//! high-resolution zones, and a spatial-discrete cellular "walking stock"
//! automaton everywhere else. Annular transit areas around each zone host
//! both models at once; agents crossing a transit area are transformed
//! between representations. A sliding-window density estimator drives the
//! zoom controller, which creates, grows, shrinks and dissolves zones as
//! local crowding changes.
//!
//! Entry points: [`scenario::load_scenario`] to read a world description,
//! [`driver::run`] to execute a simulation, and the `crowdscale` CLI for
//! file-based workflows.

pub mod clock;
pub mod density;
pub mod driver;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod model_continuous;
pub mod model_discrete;
pub mod partition;
pub mod routing;
pub mod scenario;
pub mod transition;
pub mod zoom;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Global identifier shared by both agent representations. An id is
/// assigned at spawn time and survives every transformation; at any
/// instant it names exactly one agent in exactly one model.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct AgentId(pub u64);

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "a{}", self.0)
    }
}
