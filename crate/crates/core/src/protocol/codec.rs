use thiserror::Error;

use super::{WireEnvelope, PROTO_VERSION};
use crate::canonical;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed message at byte {offset}: {reason}")]
    MalformedMessage { offset: usize, reason: String },
}

impl ProtocolError {
    fn at(offset: usize, reason: impl Into<String>) -> Self {
        ProtocolError::MalformedMessage {
            offset,
            reason: reason.into(),
        }
    }
}

/// Canonical JSON text of the envelope.
pub fn encode(envelope: &WireEnvelope) -> Vec<u8> {
    canonical::to_vec(envelope)
}

pub fn decode(bytes: &[u8]) -> Result<WireEnvelope, ProtocolError> {
    let env: WireEnvelope = serde_json::from_slice(bytes).map_err(|e| {
        let offset = byte_offset(bytes, e.line(), e.column());
        ProtocolError::at(offset, e.to_string())
    })?;
    if env.proto_version != PROTO_VERSION {
        return Err(ProtocolError::at(
            0,
            format!("unsupported proto_version {} (expected {PROTO_VERSION})", env.proto_version),
        ));
    }
    if env.channel != env.body.channel() {
        return Err(ProtocolError::at(
            0,
            format!("{} must travel on {:?}", env.body.kind(), env.body.channel()),
        ));
    }
    if !env.is_reliable() && env.server_seq.is_some() {
        return Err(ProtocolError::at(0, "lossy messages are never sequenced"));
    }
    Ok(env)
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = bytes
        .split(|&b| b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column).saturating_sub(1).min(bytes.len())
}
