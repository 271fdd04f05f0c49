//! HTTP session service for interactive architecture discovery.

pub mod api;
pub mod sessions;
