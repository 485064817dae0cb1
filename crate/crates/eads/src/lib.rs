//! Server, trusted-storage journal, client checks, auditor and scenarios.

pub mod auditor;
pub mod client;
pub mod clock;
pub mod config;
pub mod http;
pub mod keys;
pub mod scenario;
pub mod server;
pub mod storage;
