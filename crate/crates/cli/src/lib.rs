//! File formats, reports, command dispatch and the bundled acceptance suite.

pub mod format;
pub mod report;
pub mod run;
pub mod selftest;
