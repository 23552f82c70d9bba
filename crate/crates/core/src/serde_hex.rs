//! `0x`-prefixed hexadecimal (de)serialization for `u64` fields.
use serde::{de, Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:#x}"))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    let s = String::deserialize(d)?;
    s.strip_prefix("0x")
        .ok_or_else(|| de::Error::custom("expected 0x-prefixed hex"))
        .and_then(|h| u64::from_str_radix(h, 16).map_err(de::Error::custom))
}
