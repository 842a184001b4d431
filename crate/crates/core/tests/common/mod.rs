#![allow(dead_code)]

pub mod fixtures;
pub mod gradcheck;
pub mod images;
pub mod oracles;
