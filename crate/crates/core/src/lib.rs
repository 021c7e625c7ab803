pub mod config;
pub mod fuzz;
pub mod ir;
pub mod mutation;
pub mod pipeline;
pub mod report;
pub mod runner;
pub mod scheduler;
pub mod vm;
