//! Shared obstacle registry: records and the update rule, the line protocol, the server and
//! client, and replay of detection frames against a live server.

pub mod client;
pub mod protocol;
pub mod record;
pub mod replay;
pub mod server;
pub mod state;

pub use client::{Client, ClientError};
pub use protocol::{Alert, Message, ProtocolError};
pub use record::{decide_update, Decision, ObstacleRecord, Report, UpdateAction};
pub use replay::{agent_replay, Frame, ReplayOptions, ReplayReport};
pub use server::{Server, ServerConfig, ServerError, ServerHandle};
pub use state::{Event, RegistryConfig, RegistryState, StateError};
