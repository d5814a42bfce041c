pub mod cli;
pub mod data;
pub mod eval;
pub mod mcs;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod train;
