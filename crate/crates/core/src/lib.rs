// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod cli;
pub mod concept;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod layer;
pub mod linalg;
pub mod model;
pub mod search;
pub mod service;
pub mod store;
pub mod weld;
