//! Wire formats of every simulated message and their exact sizes.
//!
//! Matrix-valued payloads share one layout: `u32` matrix count, then `u32
//! rows, u32 cols` per matrix, then 8 bytes per entry (little-endian `f64`
//! for plain values, `u64` for fixed-point ones).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fixed::FixedPointGradient;
use crate::lshgm::BitString;
use crate::tensor::{GradientUpdate, ModelShape};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PayloadKind {
    ModelBroadcast,
    MaskResidual,
    MaskedGradient,
    BitString,
    /// A group's plain aggregate, sent only when verification is off.
    Aggregate,
    Notification,
    ScoreReport,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 7] = [
        PayloadKind::ModelBroadcast,
        PayloadKind::MaskResidual,
        PayloadKind::MaskedGradient,
        PayloadKind::BitString,
        PayloadKind::Aggregate,
        PayloadKind::Notification,
        PayloadKind::ScoreReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::ModelBroadcast => "model_broadcast",
            PayloadKind::MaskResidual => "mask_residual",
            PayloadKind::MaskedGradient => "masked_gradient",
            PayloadKind::BitString => "bit_string",
            PayloadKind::Aggregate => "aggregate",
            PayloadKind::Notification => "notification",
            PayloadKind::ScoreReport => "score_report",
        }
    }

    /// Size of this kind of message for a model of `shape` sketched with `r`
    /// hyperplanes per matrix.
    pub fn size(self, shape: &ModelShape, r: usize) -> usize {
        match self {
            PayloadKind::ModelBroadcast
            | PayloadKind::MaskResidual
            | PayloadKind::MaskedGradient
            | PayloadKind::Aggregate => matrix_payload_len(&shape.dims),
            PayloadKind::BitString => 4 + (r * shape.total_cols()).div_ceil(8),
            PayloadKind::Notification => NOTIFICATION_LEN,
            PayloadKind::ScoreReport => SCORE_REPORT_LEN,
        }
    }
}

impl FromStr for PayloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PayloadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownPayload(s.to_string()))
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `u64 round, u32 node, u8 code`
pub const NOTIFICATION_LEN: usize = 13;
/// `u64 round, u32 node, f64 seconds`
pub const SCORE_REPORT_LEN: usize = 20;

pub fn matrix_payload_len(dims: &[(usize, usize)]) -> usize {
    4 + 8 * dims.len() + 8 * dims.iter().map(|(r, c)| r * c).sum::<usize>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Notice {
    Trainer = 1,
    Aggregator = 2,
    Accepted = 3,
}

#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    ModelBroadcast(&'a GradientUpdate),
    MaskResidual(&'a FixedPointGradient),
    MaskedGradient(&'a FixedPointGradient),
    BitString(&'a BitString),
    Aggregate(&'a GradientUpdate),
    Notification { round: u64, node: NodeId, notice: Notice },
    ScoreReport { round: u64, node: NodeId, seconds: f64 },
}

fn header(out: &mut Vec<u8>, dims: &[(usize, usize)]) {
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &(r, c) in dims {
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
}

impl Payload<'_> {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::ModelBroadcast(_) => PayloadKind::ModelBroadcast,
            Payload::MaskResidual(_) => PayloadKind::MaskResidual,
            Payload::MaskedGradient(_) => PayloadKind::MaskedGradient,
            Payload::BitString(_) => PayloadKind::BitString,
            Payload::Aggregate(_) => PayloadKind::Aggregate,
            Payload::Notification { .. } => PayloadKind::Notification,
            Payload::ScoreReport { .. } => PayloadKind::ScoreReport,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(meter(self));
        match self {
            Payload::ModelBroadcast(g) | Payload::Aggregate(g) => {
                header(&mut out, &g.dims());
                for v in g.values() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::MaskResidual(f) | Payload::MaskedGradient(f) => {
                header(&mut out, &f.dims());
                for e in f.entries() {
                    out.extend_from_slice(&e.to_le_bytes());
                }
            }
            Payload::BitString(b) => out.extend_from_slice(&b.to_bytes()),
            Payload::Notification { round, node, notice } => {
                out.extend_from_slice(&round.to_le_bytes());
                out.extend_from_slice(&node.to_le_bytes());
                out.push(*notice as u8);
            }
            Payload::ScoreReport { round, node, seconds } => {
                out.extend_from_slice(&round.to_le_bytes());
                out.extend_from_slice(&node.to_le_bytes());
                out.extend_from_slice(&seconds.to_le_bytes());
            }
        }
        out
    }
}

/// Serialized length of `payload`, computed without serializing.
pub fn meter(payload: &Payload) -> usize {
    match payload {
        Payload::ModelBroadcast(g) | Payload::Aggregate(g) => matrix_payload_len(&g.dims()),
        Payload::MaskResidual(f) | Payload::MaskedGradient(f) => matrix_payload_len(&f.dims()),
        Payload::BitString(b) => b.wire_len(),
        Payload::Notification { .. } => NOTIFICATION_LEN,
        Payload::ScoreReport { .. } => SCORE_REPORT_LEN,
    }
}

/// Bit-string bytes over full-gradient bytes for one candidate.
pub fn verification_ratio(shape: &ModelShape, r: usize) -> f64 {
    PayloadKind::BitString.size(shape, r) as f64 / PayloadKind::MaskedGradient.size(shape, r) as f64
}
