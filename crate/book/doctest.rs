//! Keeps the guide honest: every fenced Rust block in the book chapters is
//! compiled and run as a doc-test of this shim crate.
#![doc = include_str!("src/introduction.md")]
