//! Degree-based mean-field SIS epidemics coupled with a protection game.

pub mod config;
pub mod dynamics;
pub mod equilibrium;
pub mod experiments;
pub mod model;
pub mod nimfa;
pub mod output;
pub mod reduced;
pub mod roots;
