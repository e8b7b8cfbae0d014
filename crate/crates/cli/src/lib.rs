//! File formats and error mapping for the `hfr` command line tool.
//!
//! The binary in `main.rs` stays a thin shell: parse arguments, read the
//! input files through [`io`], call into `hfr-core`, and emit CSV or JSON.

pub mod io;
