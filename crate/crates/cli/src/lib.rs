//! Command-line runner and HTTP service for the extension-based proof game.

pub mod api;
pub mod run;
