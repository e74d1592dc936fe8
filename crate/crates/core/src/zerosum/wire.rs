//! Big-endian message encodings exchanged between users and the tally.
//!
//! Every message starts with a tag byte. Identifiers are a `u16` length
//! followed by UTF-8 bytes.
//!
//! | tag  | message          | body                                        |
//! |------|------------------|---------------------------------------------|
//! | 0x01 | key announcement | group u32, id, point length u16, point      |
//! | 0x02 | blinded sketch   | group u32, round u32, id, L u32, L × u32    |
//! | 0x03 | online set       | group u32, round u32, count u32, ids        |
//! | 0x04 | recovery share   | group u32, round u32, id, L u32, L × u32    |

use super::{BlindedSketch, RecoveryShare, Result, UserId, ZeroSumError};
use crate::group_crypto::{decode_point, encode_point, CryptoGroup};

pub const TAG_KEY: u8 = 0x01;
pub const TAG_BLINDED: u8 = 0x02;
pub const TAG_ONLINE: u8 = 0x03;
pub const TAG_SHARE: u8 = 0x04;

#[derive(Debug, Clone, PartialEq)]
pub struct KeyAnnouncement<G: CryptoGroup> {
    pub group_id: u32,
    pub user: UserId,
    pub public: G,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnlineSet {
    pub group_id: u32,
    pub round: u32,
    pub users: Vec<UserId>,
}

/// Size of the entry payload for `len` cells.
pub fn payload_bytes(len: usize) -> usize {
    len * 4
}

/// Bytes of public keys a user downloads for a group of `n`.
pub fn key_download_bytes<G: CryptoGroup>(n: usize) -> usize {
    n * G::ENCODED_LEN
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(tag: u8) -> Self {
        Writer(vec![tag])
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn id(&mut self, id: &UserId) {
        let b = id.0.as_bytes();
        self.u16(b.len().try_into().expect("user id longer than 65535 bytes"));
        self.0.extend_from_slice(b);
    }
    fn entries(&mut self, e: &[u32]) {
        self.u32(e.len() as u32);
        self.0.reserve(e.len() * 4);
        for v in e {
            self.u32(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

fn err(msg: impl Into<String>) -> ZeroSumError {
    ZeroSumError::Decode(msg.into())
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], tag: u8) -> Result<Self> {
        match buf.first() {
            Some(&t) if t == tag => Ok(Reader { buf: &buf[1..] }),
            Some(&t) => Err(err(format!("tag {t:#04x}, expected {tag:#04x}"))),
            None => Err(err("empty message")),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(err("truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn id(&mut self) -> Result<UserId> {
        let n = self.u16()? as usize;
        let s = std::str::from_utf8(self.take(n)?).map_err(|_| err("user id is not UTF-8"))?;
        Ok(UserId(s.to_string()))
    }
    fn entries(&mut self) -> Result<Vec<u32>> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| err("length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_be_bytes(c.try_into().unwrap())).collect())
    }
    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(err(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

impl<G: CryptoGroup> KeyAnnouncement<G> {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_KEY);
        w.u32(self.group_id);
        w.id(&self.user);
        let p = encode_point(&self.public);
        w.u16(p.len() as u16);
        w.0.extend_from_slice(&p);
        w.0
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, TAG_KEY)?;
        let group_id = r.u32()?;
        let user = r.id()?;
        let n = r.u16()? as usize;
        let public = decode_point(r.take(n)?).map_err(|e| err(e.to_string()))?;
        r.finish()?;
        Ok(KeyAnnouncement { group_id, user, public })
    }
}

impl BlindedSketch {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_BLINDED);
        w.u32(self.group_id);
        w.u32(self.round);
        w.id(&self.user);
        w.entries(&self.entries);
        w.0
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, TAG_BLINDED)?;
        let (group_id, round, user) = (r.u32()?, r.u32()?, r.id()?);
        let entries = r.entries()?;
        r.finish()?;
        Ok(BlindedSketch { group_id, round, user, entries })
    }
}

impl OnlineSet {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_ONLINE);
        w.u32(self.group_id);
        w.u32(self.round);
        w.u32(self.users.len() as u32);
        for u in &self.users {
            w.id(u);
        }
        w.0
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, TAG_ONLINE)?;
        let (group_id, round, n) = (r.u32()?, r.u32()?, r.u32()?);
        let users = (0..n).map(|_| r.id()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(OnlineSet { group_id, round, users })
    }
}

impl RecoveryShare {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_SHARE);
        w.u32(self.group_id);
        w.u32(self.round);
        w.id(&self.user);
        w.entries(&self.entries);
        w.0
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, TAG_SHARE)?;
        let (group_id, round, user) = (r.u32()?, r.u32()?, r.id()?);
        let entries = r.entries()?;
        r.finish()?;
        Ok(RecoveryShare { group_id, round, user, entries })
    }
}
