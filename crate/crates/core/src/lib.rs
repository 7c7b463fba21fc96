//! Input-constrained multi-agent pursuit–evasion games.
//!
//! The library simulates graphical pursuit–evasion games in which every
//! player runs a saturated (tanh) control policy derived from a learned
//! value function, the costs carry slightly-altruistic team terms, and
//! pursuers guarantee capture by adjusting a binary game-weight layer on
//! top of the communication topology at rolling-horizon intervals.
//!
//! Modules follow the pipeline: [`topology`] and [`dynamics`] define the
//! game state, [`costs`] and [`policy`] the optimization structure,
//! [`learning`] the critic/actor approximators and policy iteration,
//! [`targeting`] the rolling-horizon target selection, and [`engine`]
//! the deterministic simulation loop plus configuration and traces.

use serde::{Deserialize, Serialize};

pub mod costs;
pub mod dynamics;
pub mod engine;
pub mod learning;
pub mod linalg;
pub mod parallel;
pub mod policy;
pub mod targeting;
pub mod topology;

/// Which team a player belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Pursuer,
    Evader,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Pursuer => Side::Evader,
            Side::Evader => Side::Pursuer,
        }
    }
}

/// Identifies one player by side and per-side index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct PlayerId {
    pub side: Side,
    pub index: usize,
}

impl PlayerId {
    pub fn pursuer(index: usize) -> Self {
        PlayerId { side: Side::Pursuer, index }
    }

    pub fn evader(index: usize) -> Self {
        PlayerId { side: Side::Evader, index }
    }
}

impl std::fmt::Display for PlayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.side {
            Side::Pursuer => write!(f, "p{}", self.index),
            Side::Evader => write!(f, "e{}", self.index),
        }
    }
}
