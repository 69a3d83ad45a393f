//! Library backing the `frontscope` binary. The argument surface
//! lives in the binary; everything that does work is here so tests
//! can call it without spawning processes.

pub mod commands;
pub mod config;
