//! Live interaction endpoint: one interactive episode driven over a
//! WebSocket by an operator console.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientBody, ClientMessage, Command, RasterId, ServerBody, ServerMessage, Snapshot};
pub use server::{serve, ServeOptions, ServerHandle};
pub use session::{LogEntry, Session, SessionError};

/// JSON schema of every message, shipped with the crate.
pub const SCHEMA: &str = include_str!("../../schema/bridge.schema.json");
