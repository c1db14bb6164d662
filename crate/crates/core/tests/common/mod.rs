//! Helpers shared by several test targets; each uses a subset.
#![allow(dead_code)]

pub mod grad;
pub mod oracle;
