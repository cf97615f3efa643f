//! The shipped robots and their per-robot defaults.

use rssa_core::dynamics::{PointMass, ScaraModel, SegwayModel, UncertainSystem};
use rssa_core::experiments::Reference;
use rssa_core::safety_index::SafetyIndexParams;

use crate::config::{RobotKind, StartSpec};

pub enum Robot {
    Scara(ScaraModel),
    Segway(SegwayModel),
    Toy(PointMass),
}

impl Robot {
    pub fn new(kind: RobotKind) -> Self {
        match kind {
            RobotKind::Scara => Robot::Scara(ScaraModel::default()),
            RobotKind::Segway => Robot::Segway(SegwayModel::default()),
            RobotKind::Toy => Robot::Toy(PointMass::deterministic_toy()),
        }
    }

    pub fn kind(&self) -> RobotKind {
        match self {
            Robot::Scara(_) => RobotKind::Scara,
            Robot::Segway(_) => RobotKind::Segway,
            Robot::Toy(_) => RobotKind::Toy,
        }
    }

    pub fn model(&self) -> &(dyn UncertainSystem + Sync) {
        match self {
            Robot::Scara(m) => m,
            Robot::Segway(m) => m,
            Robot::Toy(m) => m,
        }
    }

    /// Index used when no parameter file is given.
    pub fn default_params(&self) -> SafetyIndexParams {
        match self {
            Robot::Scara(_) => SafetyIndexParams::learned_scara(),
            Robot::Segway(_) => SafetyIndexParams::segway(),
            Robot::Toy(_) => SafetyIndexParams::new(1.0, 0.5, 0.0),
        }
    }

    /// Hidden plant parameter used when none is configured.
    pub fn default_true_param(&self) -> f64 {
        match self {
            Robot::Scara(_) => 0.5,
            Robot::Segway(m) => m.k_m.mean,
            Robot::Toy(m) => m.gain.mean,
        }
    }

    pub fn reference(&self) -> rssa_core::Result<Reference> {
        Ok(match self {
            Robot::Scara(m) => Reference::scara_push(m),
            Robot::Segway(m) => Reference::segway_cruise(m)?,
            Robot::Toy(_) => Reference::JointPd {
                target: vec![3.0],
                kp: 2.0,
                kd: 2.0,
                v_max: 1.0,
            },
        })
    }

    pub fn default_start(&self) -> StartSpec {
        match self {
            Robot::Scara(_) => StartSpec::Case1,
            Robot::Segway(_) | Robot::Toy(_) => StartSpec::Rest,
        }
    }

    /// Synthesis grid used when none is configured.
    pub fn default_grid(&self) -> Vec<usize> {
        vec![12; self.model().state_dim()]
    }

    /// Grid for residual-constant and residual-magnitude estimates.
    pub fn default_residual_grid(&self) -> Vec<usize> {
        vec![8; self.model().state_dim()]
    }

    /// Position grid of the feasibility map.
    pub fn default_map_grid(&self) -> Vec<usize> {
        vec![30; self.model().state_dim() / 2]
    }
}
