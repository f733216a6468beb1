pub mod cli;
pub mod constants;
pub mod crystal;
pub mod field;
pub mod fitting;
pub mod geometry;
pub mod io;
pub mod optim;
pub mod optimizer;
pub mod pseudo;
pub mod species;
