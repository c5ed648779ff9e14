pub mod cli;
pub mod config;
pub mod constitutive;
pub mod discretization;
pub mod linalg;
pub mod ncp;
pub mod output;
pub mod simulation;
pub mod verification;
