#![allow(dead_code)]

pub mod problems;
pub mod sdp;
