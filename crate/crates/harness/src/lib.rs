pub mod condition;
pub mod config;
pub mod curate;
pub mod error;
pub mod eventlog;
pub mod formats;
pub mod http;
pub mod pipeline;
pub mod report;
pub mod service;
pub mod study;
pub mod synthetic;
