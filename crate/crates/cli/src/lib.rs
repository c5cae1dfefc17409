//! Command-line and HTTP front end for the quote-source recommender.

pub mod args;
pub mod commands;
pub mod index;
pub mod service;
