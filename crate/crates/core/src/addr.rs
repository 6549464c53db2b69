//! IPv4 prefixes used for host address plans and ingress filtering.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid IPv4 prefix `{0}`")]
pub struct PrefixParseError(pub String);

/// An IPv4 network in CIDR form. The stored address is always the network
/// address (host bits cleared).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ipv4Prefix {
    network: Ipv4Addr,
    len: u8,
}

impl Ipv4Prefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self, PrefixParseError> {
        if len > 32 {
            return Err(PrefixParseError(format!("{addr}/{len}")));
        }
        let network = Ipv4Addr::from(u32::from(addr) & Self::mask_bits(len));
        Ok(Self { network, len })
    }

    fn mask_bits(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(len))
        }
    }

    pub fn network(&self) -> Ipv4Addr {
        self.network
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & Self::mask_bits(self.len) == u32::from(self.network)
    }

    /// Number of addresses covered by the prefix.
    pub fn size(&self) -> u64 {
        1u64 << (32 - u32::from(self.len))
    }

    /// The `offset`-th address inside the prefix, wrapping within it.
    pub fn nth(&self, offset: u64) -> Ipv4Addr {
        let off = (offset % self.size()) as u32;
        Ipv4Addr::from(u32::from(self.network).wrapping_add(off))
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network, self.len)
    }
}

impl FromStr for Ipv4Prefix {
    type Err = PrefixParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PrefixParseError(s.to_string());
        let (addr, len) = s.split_once('/').ok_or_else(err)?;
        let addr: Ipv4Addr = addr.trim().parse().map_err(|_| err())?;
        let len: u8 = len.trim().parse().map_err(|_| err())?;
        Self::new(addr, len).map_err(|_| err())
    }
}

impl Serialize for Ipv4Prefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ipv4Prefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_contains() {
        let p: Ipv4Prefix = "10.0.0.77/24".parse().unwrap();
        assert_eq!(p.network(), Ipv4Addr::new(10, 0, 0, 0));
        assert!(p.contains(Ipv4Addr::new(10, 0, 0, 5)));
        assert!(!p.contains(Ipv4Addr::new(10, 0, 1, 5)));
        assert_eq!(p.to_string(), "10.0.0.0/24");
    }

    #[test]
    fn zero_length_matches_everything() {
        let p: Ipv4Prefix = "0.0.0.0/0".parse().unwrap();
        assert!(p.contains(Ipv4Addr::new(192, 168, 1, 1)));
        assert_eq!(p.size(), 1 << 32);
    }

    #[test]
    fn rejects_garbage() {
        assert!("10.0.0.0".parse::<Ipv4Prefix>().is_err());
        assert!("10.0.0.0/33".parse::<Ipv4Prefix>().is_err());
        assert!("ten/8".parse::<Ipv4Prefix>().is_err());
    }
}
