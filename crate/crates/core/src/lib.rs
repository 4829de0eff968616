//! Performance analysis of timed Petri nets with preselection and priority
//! routing.
//!
//! The crate simulates the piecewise-affine counter dynamics of a net,
//! computes asymptotic throughputs through the associated semi-Markov
//! decision process (policy iteration, enumeration, linear programming),
//! solves lexicographic germ systems for stationary regimes, and enumerates
//! the congestion phases of a net as a polyhedral complex over its initial
//! markings.

pub mod casestudies;
pub mod cli;
pub mod dynamics;
pub mod graph;
pub mod linalg;
pub mod lp;
pub mod markov;
pub mod petri_model;
pub mod polyhedron;
pub mod rational;
pub mod smdp;
pub mod stationary;

pub use petri_model::{NetBuilder, PetriNet};
pub use rational::Rational;
