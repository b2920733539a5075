#![allow(dead_code)]

pub mod components;
pub mod corpus;
pub mod gradcheck;
pub mod graphs;
pub mod prims;
pub mod trees;
