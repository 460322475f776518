//! Core of a cognitive-map assessment tool: the board model, similarity
//! scoring, the session engine, log storage and a board simulator.

pub mod board_sim;
pub mod map_model;
pub mod plan;
pub mod report;
pub mod scoring;
pub mod session;
pub mod storage;
