//! Iterated tree search and function approximation for continuous action spaces.

pub mod config;
pub mod env;
pub mod experiment;
pub mod mcts;
pub mod net;
pub mod policy_dist;
pub mod report;
pub mod selftest;
pub mod special;
pub mod training;
