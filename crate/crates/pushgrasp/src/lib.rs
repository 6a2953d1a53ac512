pub mod eval;
pub mod files;
pub mod operators;
pub mod server;
pub mod service;
pub mod train;
