//! Wire formats shared with the browser cockpit.
//!
//! Binary frames: `FRM1`, u32 LE sequence number, u16 LE width, u16 LE
//! height, then packed RGB8 rows. Everything else is JSON text tagged by
//! `"type"`.

use fsd_core::render::Image;
use serde::{Deserialize, Serialize};

use crate::session::{ControlMsg, StateMsg};

pub const FRAME_MAGIC: [u8; 4] = *b"FRM1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Control(ControlMsg),
    Record { on: bool },
    Role { spectator: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    State(StateMsg),
    Role { spectator: bool },
    Error { message: String },
}

pub fn encode_frame(seq: u32, img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + img.pixels.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(img.w as u16).to_le_bytes());
    out.extend_from_slice(&(img.h as u16).to_le_bytes());
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses a binary frame message; `None` when the header or length is off.
pub fn decode_frame(bytes: &[u8]) -> Option<(u32, Image)> {
    if bytes.len() < HEADER_LEN || bytes[..4] != FRAME_MAGIC {
        return None;
    }
    let seq = u32::from_le_bytes(bytes[4..8].try_into().ok()?);
    let w = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let h = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let img = Image::from_raw(w, h, bytes[HEADER_LEN..].to_vec()).ok()?;
    Some((seq, img))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_header_layout() {
        let mut img = Image::new(3, 2);
        img.put(2, 1, [1, 2, 3]);
        let b = encode_frame(0x0102_0304, &img);
        assert_eq!(&b[..4], b"FRM1");
        assert_eq!(&b[4..8], &[4, 3, 2, 1]);
        assert_eq!(&b[8..12], &[3, 0, 2, 0]);
        assert_eq!(b.len(), 12 + 18);
        assert_eq!(decode_frame(&b), Some((0x0102_0304, img)));
        assert_eq!(decode_frame(&b[..b.len() - 1]), None);
    }

    #[test]
    fn json_messages() {
        let m: ClientMsg = serde_json::from_str(r#"{"type":"control","steering":0.5,"throttle":0.3,"brake":0}"#).unwrap();
        assert_eq!(
            m,
            ClientMsg::Control(ControlMsg {
                steering: 0.5,
                throttle: 0.3,
                brake: 0.0,
                timestamp_ms: None
            })
        );
        let m: ClientMsg = serde_json::from_str(r#"{"type":"record","on":true}"#).unwrap();
        assert_eq!(m, ClientMsg::Record { on: true });
        let m: ClientMsg = serde_json::from_str(r#"{"type":"role","spectator":false}"#).unwrap();
        assert_eq!(m, ClientMsg::Role { spectator: false });

        let s = ServerMsg::State(StateMsg {
            tick: 3,
            speed: 1.5,
            y: 0.5,
            d: -0.25,
            off_track: false,
            recording: true,
        });
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["type"], "state");
        for k in ["speed", "y", "d", "off_track", "recording"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
