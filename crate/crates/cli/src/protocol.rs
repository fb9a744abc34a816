//! Wire formats of the streaming socket: binary frames out, JSON commands
//! in, one JSON reply per command.

use std::path::PathBuf;

use dynca::imaging::RgbImage;
use serde::{Deserialize, Serialize};

/// Leading byte of a frame message.
pub const FRAME_TAG: u8 = 0x01;
const HEADER: usize = 5;

#[derive(Debug, PartialEq, Eq)]
pub enum ProtocolError {
    Empty,
    BadTag(u8),
    ShortHeader(usize),
    Payload { expected: usize, got: usize },
    TooLarge { width: u32, height: u32 },
}

impl std::fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProtocolError::Empty => write!(f, "empty frame message"),
            ProtocolError::BadTag(t) => write!(f, "frame tag 0x{t:02x}, expected 0x01"),
            ProtocolError::ShortHeader(n) => write!(f, "frame header needs 5 bytes, got {n}"),
            ProtocolError::Payload { expected, got } => {
                write!(f, "frame payload of {got} bytes, expected {expected}")
            }
            ProtocolError::TooLarge { width, height } => {
                write!(f, "frame {width}x{height} does not fit 16-bit dimensions")
            }
        }
    }
}

impl std::error::Error for ProtocolError {}

/// `[0x01][width u16 LE][height u16 LE][width·height·3 bytes RGB8]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameMessage {
    pub width: u16,
    pub height: u16,
    pub rgb: Vec<u8>,
}

impl FrameMessage {
    pub fn new(width: u16, height: u16, rgb: Vec<u8>) -> Result<Self, ProtocolError> {
        let expected = width as usize * height as usize * 3;
        if rgb.len() != expected {
            return Err(ProtocolError::Payload {
                expected,
                got: rgb.len(),
            });
        }
        Ok(Self { width, height, rgb })
    }

    pub fn from_image(img: &RgbImage) -> Result<Self, ProtocolError> {
        let (width, height) = img.dimensions();
        let (Ok(w), Ok(h)) = (u16::try_from(width), u16::try_from(height)) else {
            return Err(ProtocolError::TooLarge { width, height });
        };
        Self::new(w, h, img.as_raw().clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + self.rgb.len());
        out.push(FRAME_TAG);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        match bytes.first() {
            None => return Err(ProtocolError::Empty),
            Some(&t) if t != FRAME_TAG => return Err(ProtocolError::BadTag(t)),
            _ => {}
        }
        if bytes.len() < HEADER {
            return Err(ProtocolError::ShortHeader(bytes.len()));
        }
        let width = u16::from_le_bytes([bytes[1], bytes[2]]);
        let height = u16::from_le_bytes([bytes[3], bytes[4]]);
        Self::new(width, height, bytes[HEADER..].to_vec())
    }
}

/// Per-cell transform selector of `set_transform`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    None,
    CircularFromRight,
    /// Requires `map`: `height·width` angles in radians, row-major.
    Map,
}

/// A client command; `cmd` selects the variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Global rotation in radians.
    SetDirection { theta: f64 },
    /// Steps per emitted frame.
    SetSpeed { t: usize },
    /// Erase a disk; `x` is the column and `y` the row, in cells.
    Brush { x: f64, y: f64, radius: f64 },
    SetTransform {
        kind: TransformKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        map: Option<Vec<f32>>,
    },
    Resize { width: usize, height: usize },
    LoadWeights { path: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetDirection { .. } => "set_direction",
            Command::SetSpeed { .. } => "set_speed",
            Command::Brush { .. } => "brush",
            Command::SetTransform { .. } => "set_transform",
            Command::Resize { .. } => "resize",
            Command::LoadWeights { .. } => "load_weights",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("commands always serialize")
    }
}

/// Parses a text record. On failure returns the `cmd` field when one could
/// be read, plus a description.
pub fn parse_command(text: &str) -> Result<Command, (Option<String>, String)> {
    serde_json::from_str(text).map_err(|e| {
        let name = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("cmd").and_then(|c| c.as_str()).map(str::to_owned));
        (name, e.to_string())
    })
}

/// Answer to exactly one command. `step` is the step boundary at which the
/// command took effect (or was refused).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub ok: bool,
    pub cmd: Option<String>,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Reply {
    pub fn ack(cmd: &str, step: u64) -> Self {
        Self {
            ok: true,
            cmd: Some(cmd.to_owned()),
            step,
            error: None,
        }
    }

    pub fn error(cmd: Option<String>, step: u64, error: impl Into<String>) -> Self {
        Self {
            ok: false,
            cmd,
            step,
            error: Some(error.into()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("replies always serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
