#![allow(dead_code)]

pub mod explain;
pub mod gradients;
pub mod html;
pub mod oracles;
