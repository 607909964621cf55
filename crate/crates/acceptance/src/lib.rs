//! Reference implementations the acceptance suite checks the library
//! against. Nothing here calls into the editor crates.

pub mod composite;
pub mod masks;
