//! Authoritative room relay. [`Room`] is the pure sequencing state machine;
//! [`server`] drives one room per task behind a WebSocket/HTTP front end.

mod outbox;
mod room;
pub mod server;
mod session;

pub use outbox::{Outbox, Overflow, DEFAULT_QUEUE_CAP};
pub use room::{valid_peer_id, Outbound, RelayError, Room, Routed, RELAY_PEER};
pub use server::{router, serve, JoinError, Relay, RelayConfig, RoomInfo, SnapshotResponse};
pub use session::{open_session, resolve_base, valid_room_id, SessionStore, StorageConfig};
