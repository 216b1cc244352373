#![allow(dead_code)]

pub mod operator;
pub mod penalty;
pub mod problems;
pub mod toy;
