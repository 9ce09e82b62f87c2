pub mod dataset;
pub mod gru;
pub mod io_util;
pub mod model;
pub mod numerics;
pub mod training;
pub mod evaluation;
pub mod engine;
pub mod manifest;
pub mod cli;
