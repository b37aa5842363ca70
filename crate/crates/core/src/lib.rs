//! Suggests canned doctor replies for incoming patient messages.
//!
//! A message is cleaned ([`textprep`]), embedded ([`embed`]), scored by a
//! trigger model that decides whether any reply should be offered, and then
//! ranked against a set of canned responses ([`canned`]) by a response model
//! ([`models`]). [`eval`] holds the metrics and [`pipeline`] wires everything
//! together for serving and for cross-validated experiments.

pub mod canned;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod textprep;
