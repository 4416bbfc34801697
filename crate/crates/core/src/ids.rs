//! Identifier newtypes shared by the chain, codec and verifier layers.

use std::fmt;

/// 6-byte BSSID-like access point identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ApId(pub [u8; 6]);

impl ApId {
    /// Parses `aa:bb:cc:dd:ee:ff` (or the same digits without separators).
    pub fn parse(s: &str) -> Option<Self> {
        let digits: String = s.chars().filter(|c| *c != ':' && *c != '-').collect();
        let bytes = hex::decode(digits).ok()?;
        let arr: [u8; 6] = bytes.try_into().ok()?;
        Some(ApId(arr))
    }
}

impl fmt::Display for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl fmt::Debug for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ApId({self})")
    }
}

/// Opaque 16-byte hash chain identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ChainId(pub [u8; 16]);

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainId({self})")
    }
}

impl serde::Serialize for ApId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ApId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ApId::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid AP id `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_id_display_parse() {
        let id = ApId([0x02, 0, 0, 0, 0xab, 0x01]);
        assert_eq!(id.to_string(), "02:00:00:00:ab:01");
        assert_eq!(ApId::parse("02:00:00:00:ab:01"), Some(id));
        assert_eq!(ApId::parse("020000_00ab01"), None);
        assert_eq!(ApId::parse("02:00"), None);
    }
}
