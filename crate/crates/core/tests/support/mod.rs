//! Checks shared between the unit-style test targets and the acceptance
//! harness.

#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
