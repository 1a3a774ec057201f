//! Fixed 8-byte steering frames for a serial motion controller.
//!
//! Layout: `AA 55 seq steer_lo steer_hi speed_lo speed_hi crc`, where the
//! CRC-8 (polynomial 0x07, init 0) covers bytes 2..=6.

use serde::{Deserialize, Serialize};

pub const SYNC: [u8; 2] = [0xAA, 0x55];
pub const FRAME_LEN: usize = 8;
/// Upper bound on bytes held by a [`StreamDecoder`].
pub const BUFFER_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteeringFrame {
    pub seq: u8,
    pub steering: u16,
    /// Commanded speed in cm/s.
    pub speed_cmd: u16,
}

impl SteeringFrame {
    /// Quantizes a steering value in `[0, 1]` and a speed in m/s.
    pub fn new(seq: u8, y: f64, speed_mps: f64) -> Self {
        Self {
            seq,
            steering: quantize_steering(y),
            speed_cmd: (speed_mps * 100.0).round().clamp(0.0, u16::MAX as f64) as u16,
        }
    }

    pub fn y(&self) -> f64 {
        self.steering as f64 / 65535.0
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_cmd as f64 / 100.0
    }
}

pub fn quantize_steering(y: f64) -> u16 {
    let y = if y.is_nan() { 0.5 } else { y.clamp(0.0, 1.0) };
    (y * 65535.0).round() as u16
}

pub fn crc8(bytes: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &b in bytes {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ 0x07 } else { crc << 1 };
        }
    }
    crc
}

pub fn encode(frame: &SteeringFrame) -> [u8; FRAME_LEN] {
    let s = frame.steering.to_le_bytes();
    let v = frame.speed_cmd.to_le_bytes();
    let mut out = [SYNC[0], SYNC[1], frame.seq, s[0], s[1], v[0], v[1], 0];
    out[7] = crc8(&out[2..7]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeError {
    BadSync,
    BadCrc { expected: u8, got: u8 },
    Short,
}

/// Decodes exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<SteeringFrame, DecodeError> {
    if bytes.len() < FRAME_LEN {
        return Err(DecodeError::Short);
    }
    if bytes[..2] != SYNC {
        return Err(DecodeError::BadSync);
    }
    let expected = crc8(&bytes[2..7]);
    if expected != bytes[7] {
        return Err(DecodeError::BadCrc { expected, got: bytes[7] });
    }
    Ok(SteeringFrame {
        seq: bytes[2],
        steering: u16::from_le_bytes([bytes[3], bytes[4]]),
        speed_cmd: u16::from_le_bytes([bytes[5], bytes[6]]),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DecoderStats {
    pub frames: u64,
    pub garbage_bytes: u64,
    pub bad_crc: u64,
}

/// Reassembles frames from an arbitrary byte stream.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    stats: DecoderStats,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<SteeringFrame> {
        let mut out = Vec::new();
        for chunk in bytes.chunks(BUFFER_LIMIT - FRAME_LEN) {
            self.buf.extend_from_slice(chunk);
            self.drain(&mut out);
        }
        out
    }

    fn drain(&mut self, out: &mut Vec<SteeringFrame>) {
        let mut pos = 0;
        loop {
            let rest = &self.buf[pos..];
            let Some(start) = rest.windows(2).position(|w| w == SYNC) else {
                // Keep a trailing first sync byte; everything else is noise.
                let keep = usize::from(rest.last() == Some(&SYNC[0]));
                self.stats.garbage_bytes += (rest.len() - keep) as u64;
                pos = self.buf.len() - keep;
                break;
            };
            self.stats.garbage_bytes += start as u64;
            pos += start;
            if self.buf.len() - pos < FRAME_LEN {
                break;
            }
            match decode(&self.buf[pos..pos + FRAME_LEN]) {
                Ok(f) => {
                    self.stats.frames += 1;
                    out.push(f);
                    pos += FRAME_LEN;
                }
                Err(_) => {
                    // Skip only the sync byte: a real frame may start inside.
                    self.stats.bad_crc += 1;
                    pos += 1;
                }
            }
        }
        self.buf.drain(..pos);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steering_field_values() {
        assert_eq!(SteeringFrame::new(0, 0.5, 0.0).steering, 0x8000);
        assert_eq!(SteeringFrame::new(0, 0.0, 0.0).steering, 0);
        assert_eq!(SteeringFrame::new(0, 1.0, 0.0).steering, 0xFFFF);
        let b = encode(&SteeringFrame::new(0, 0.5, 0.0));
        assert_eq!(b.len(), FRAME_LEN);
        assert_eq!(&b[3..5], &[0x00, 0x80]);
    }

    #[test]
    fn crc_check_value() {
        // CRC-8 with polynomial 0x07 and zero init over "123456789".
        assert_eq!(crc8(b"123456789"), 0xF4);
    }

    #[test]
    fn single_bit_flips_are_rejected() {
        let frame = encode(&SteeringFrame::new(17, 0.3, 4.2));
        for bit in 0..64 {
            let mut b = frame;
            b[bit / 8] ^= 1 << (bit % 8);
            assert!(decode(&b).is_err(), "bit {bit}");
            let mut d = StreamDecoder::new();
            assert!(d.push(&b).is_empty(), "bit {bit}");
        }
    }
}
