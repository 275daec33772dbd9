//! Command-line front end of the legged-robot InEKF: CSV log schemas,
//! the `sim`, `replay` and `observability` commands and their exit codes.

pub mod commands;
pub mod error;
pub mod logs;
