//! Inter-board transport: a fixed 36-byte frame and a latency/loss model of
//! the serial link between the sample module and the coil control module.
//!
//! Frame layout:
//!
//! | bytes  | field                                         |
//! |--------|-----------------------------------------------|
//! | 0      | sync `0xA5`                                   |
//! | 1      | sequence number, wraps modulo 256             |
//! | 2..34  | 16 × i16 payload words, little-endian         |
//! | 34..36 | CRC-16/CCITT-FALSE over bytes 1..34, big-endian |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signal_model::CHANNELS;

pub const SYNC: u8 = 0xA5;
pub const FRAME_LEN: usize = 36;
pub const FRAME_BITS: u32 = (FRAME_LEN * 8) as u32;

const CCITT_FALSE: crc::Crc<u16> = crc::Crc::<u16>::new(&crc::CRC_16_IBM_3740);

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
pub fn crc16(bytes: &[u8]) -> u16 {
    CCITT_FALSE.checksum(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub seq: u8,
    pub payload: [i16; CHANNELS],
}

pub fn encode_frame(payload: &[i16; CHANNELS], seq: u8) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0] = SYNC;
    out[1] = seq;
    for (chunk, word) in out[2..34].chunks_exact_mut(2).zip(payload) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let crc = crc16(&out[1..34]);
    out[34..36].copy_from_slice(&crc.to_be_bytes());
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() != FRAME_LEN {
        return Err(Error::FrameLength(bytes.len()));
    }
    if bytes[0] != SYNC {
        return Err(Error::Framing { found: bytes[0] });
    }
    let computed = crc16(&bytes[1..34]);
    let received = u16::from_be_bytes([bytes[34], bytes[35]]);
    if computed != received {
        return Err(Error::Integrity { computed, received });
    }
    let mut payload = [0i16; CHANNELS];
    for (word, chunk) in payload.iter_mut().zip(bytes[2..34].chunks_exact(2)) {
        *word = i16::from_le_bytes([chunk[0], chunk[1]]);
    }
    Ok(Frame {
        seq: bytes[1],
        payload,
    })
}

/// Receive side bookkeeping: validates frames and counts sequence gaps.
///
/// Gaps are measured modulo 256, so a run of more than 255 consecutive
/// missing frames is undercounted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameDecoder {
    last_seq: Option<u8>,
    pub accepted: u64,
    pub lost: u64,
    pub framing_errors: u64,
    pub integrity_errors: u64,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Decodes one frame. Rejected frames are counted and discarded.
    pub fn receive(&mut self, bytes: &[u8]) -> Result<Frame> {
        match decode_frame(bytes) {
            Ok(frame) => {
                let expected = self.last_seq.map_or(0, |s| s.wrapping_add(1));
                self.lost += frame.seq.wrapping_sub(expected) as u64;
                self.last_seq = Some(frame.seq);
                self.accepted += 1;
                Ok(frame)
            }
            Err(e) => {
                match e {
                    Error::Integrity { .. } => self.integrity_errors += 1,
                    _ => self.framing_errors += 1,
                }
                Err(e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    /// Bits per second.
    pub bitrate: f64,
    /// Latency added on top of serialization, seconds.
    pub fixed_latency: f64,
    pub drop_seed: u64,
    /// Probability that any given frame is lost.
    pub drop_prob: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            bitrate: 40e6,
            fixed_latency: 0.0,
            drop_seed: 0,
            drop_prob: 0.0,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.bitrate.is_finite() && self.bitrate > 0.0) {
            return Err(Error::config("link.bitrate", "must be finite and > 0"));
        }
        if !(self.fixed_latency.is_finite() && self.fixed_latency >= 0.0) {
            return Err(Error::config(
                "link.fixed_latency",
                "must be finite and >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::config("link.drop_prob", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Time on the wire for one frame.
    pub fn serialization_delay(&self) -> f64 {
        FRAME_BITS as f64 / self.bitrate
    }

    /// Total delay from send to arrival.
    pub fn latency(&self) -> f64 {
        self.fixed_latency + self.serialization_delay()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delivery {
    Arrives { at: f64 },
    Dropped,
}

/// A link instance owning its loss RNG.
#[derive(Debug, Clone)]
pub struct Link {
    model: LinkModel,
    rng: ChaCha8Rng,
}

impl Link {
    pub fn new(model: LinkModel) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(model.drop_seed),
        })
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    /// Sends one frame at time `now`. Exactly one RNG draw per call.
    pub fn transmit(&mut self, _frame: &[u8; FRAME_LEN], now: f64) -> Result<Delivery> {
        if !now.is_finite() {
            return Err(Error::domain(format!("transmit time {now} is not finite")));
        }
        let draw: f64 = self.rng.random();
        if draw < self.model.drop_prob {
            return Ok(Delivery::Dropped);
        }
        Ok(Delivery::Arrives {
            at: now + self.model.fixed_latency + FRAME_BITS as f64 / self.model.bitrate,
        })
    }
}
