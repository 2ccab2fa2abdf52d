//! Files, checkpoints, run configs and the `cadgl` command line on top of
//! [`cadgl_core`].

pub mod checkpoint;
pub mod config;
pub mod io;
pub mod run;
