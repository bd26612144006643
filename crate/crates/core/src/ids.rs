use std::fmt;
use std::str::FromStr;

use chrono::{TimeZone, Utc};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! id128 {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u128);

        impl $name {
            pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Self(rng.random())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:032x}", self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:032x})", stringify!($name), self.0)
            }
        }

        impl FromStr for $name {
            type Err = IdParseError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                if s.len() != 32 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
                    return Err(IdParseError(s.to_owned()));
                }
                u128::from_str_radix(s, 16).map(Self).map_err(|_| IdParseError(s.to_owned()))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

id128!(
    /// Scene object identifier; canonical text form is 32 lowercase hex digits.
    ObjectId
);
id128!(CaptureId);
id128!(AnnotationId);
id128!(MarkerId);
id128!(ScreenshotId);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a 128-bit lowercase hex identifier: {0:?}")]
pub struct IdParseError(pub String);

macro_rules! text_id {
    ($name:ident) => {
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

text_id!(PeerId);
text_id!(RoomId);
text_id!(SessionId);

impl SessionId {
    /// `YYYYMMDDTHHMMSSZ-xxxxxxxx`: UTC start time plus a random suffix, so
    /// sessions sort chronologically and never collide.
    pub fn generate<R: Rng + ?Sized>(started_at_ms: u64, rng: &mut R) -> SessionId {
        let ts = Utc
            .timestamp_millis_opt(started_at_ms as i64)
            .single()
            .unwrap_or_default();
        let suffix: u32 = rng.random();
        SessionId(format!("{}-{:08x}", ts.format("%Y%m%dT%H%M%SZ"), suffix))
    }

    /// Usable as a single directory name on any platform.
    pub fn is_path_safe(&self) -> bool {
        let s = self.as_str();
        !s.is_empty()
            && s.len() <= 128
            && s != "."
            && s != ".."
            && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
    }
}

/// Milliseconds since the Unix epoch (or since the virtual clock's origin).
pub type TimestampMs = u64;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn object_id_text_form() {
        let id = ObjectId(0xabc);
        let s = id.to_string();
        assert_eq!(s, "00000000000000000000000000000abc");
        assert_eq!(s.parse::<ObjectId>().unwrap(), id);
        assert!("ABC".parse::<ObjectId>().is_err());
        assert!("0000000000000000000000000000ABCD".parse::<ObjectId>().is_err());
        assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{s}\""));
    }

    #[test]
    fn session_id_shape() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let id = SessionId::generate(1_760_529_600_000, &mut rng);
        assert!(id.as_str().starts_with("20251015T120000Z-"), "{id}");
        assert_eq!(id.as_str().len(), 16 + 1 + 8);
    }
}

/// Which side of the collaboration a peer is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeerRole {
    #[serde(rename = "insitu")]
    InSitu,
    #[serde(rename = "exsitu")]
    ExSitu,
}

impl PeerRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            PeerRole::InSitu => "insitu",
            PeerRole::ExSitu => "exsitu",
        }
    }
}

impl fmt::Display for PeerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeerRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "insitu" => Ok(PeerRole::InSitu),
            "exsitu" => Ok(PeerRole::ExSitu),
            other => Err(format!("unknown role {other:?} (expected insitu or exsitu)")),
        }
    }
}
