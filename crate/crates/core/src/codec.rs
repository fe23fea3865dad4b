//! EAN-13 check digits and the text payload carried by printed QR labels.
//!
//! Label grammar, one canonical encoding per payload:
//!
//! ```text
//! payload = "IMS1;" (item / op)
//! item    = "ITEM;" uuid
//! op      = "OP;" ("RECEIVE" / "ISSUE") ";" uuid ";" uuid ";" qty   ; warehouse, then item
//! uuid    = lowercase hyphenated UUID
//! qty     = nonzero-digit *digit
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::EntityId;

pub const PAYLOAD_VERSION: &str = "IMS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("MALFORMED_INPUT: expected exactly 12 decimal digits")]
pub struct MalformedInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Ean13Error {
    #[error("EAN-13 must have 13 characters")]
    BadLength,
    #[error("EAN-13 must contain only decimal digits")]
    NonDigit,
    #[error("EAN-13 check digit does not match")]
    BadCheckDigit,
}

impl Ean13Error {
    pub fn code(&self) -> &'static str {
        match self {
            Ean13Error::BadLength => "BAD_LENGTH",
            Ean13Error::NonDigit => "NON_DIGIT",
            Ean13Error::BadCheckDigit => "BAD_CHECK_DIGIT",
        }
    }
}

/// GS1 check digit over a 12-digit prefix: weights 1,3,1,3,… from the left.
pub fn ean13_check_digit(prefix: &str) -> Result<u8, MalformedInput> {
    let bytes = prefix.as_bytes();
    if bytes.len() != 12 || !bytes.iter().all(u8::is_ascii_digit) {
        return Err(MalformedInput);
    }
    let sum: u32 = bytes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let d = u32::from(b - b'0');
            if i % 2 == 0 {
                d
            } else {
                3 * d
            }
        })
        .sum();
    Ok(((10 - sum % 10) % 10) as u8)
}

pub fn ean13_validate(code: &str) -> Result<(), Ean13Error> {
    if code.chars().count() != 13 {
        return Err(Ean13Error::BadLength);
    }
    if !code.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Ean13Error::NonDigit);
    }
    let expected = ean13_check_digit(&code[..12]).map_err(|_| Ean13Error::NonDigit)?;
    if code.as_bytes()[12] - b'0' == expected {
        Ok(())
    } else {
        Err(Ean13Error::BadCheckDigit)
    }
}

/// A validated EAN-13 code.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ean13(String);

impl Ean13 {
    pub fn parse(code: &str) -> Result<Self, Ean13Error> {
        ean13_validate(code)?;
        Ok(Self(code.to_owned()))
    }

    /// Appends the check digit to a 12-digit prefix.
    pub fn from_prefix(prefix: &str) -> Result<Self, MalformedInput> {
        let d = ean13_check_digit(prefix)?;
        Ok(Self(format!("{prefix}{d}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Ean13 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelOpKind {
    Receive,
    Issue,
}

impl LabelOpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelOpKind::Receive => "RECEIVE",
            LabelOpKind::Issue => "ISSUE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "RECEIVE" => Some(LabelOpKind::Receive),
            "ISSUE" => Some(LabelOpKind::Issue),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QrPayload {
    ItemLabel {
        item_id: EntityId,
    },
    StockOpLabel {
        kind: LabelOpKind,
        warehouse_id: EntityId,
        item_id: EntityId,
        quantity: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("INVALID_PAYLOAD: quantity must be at least 1")]
pub struct InvalidPayload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unsupported payload version")]
    UnsupportedVersion,
    #[error("unknown payload kind")]
    UnknownKind,
    #[error("wrong number of fields")]
    BadFieldCount,
    #[error("field is not a lowercase UUID")]
    BadUuid,
    #[error("quantity is not a canonical positive integer")]
    BadQuantity,
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::UnsupportedVersion => "UNSUPPORTED_VERSION",
            DecodeError::UnknownKind => "UNKNOWN_KIND",
            DecodeError::BadFieldCount => "BAD_FIELD_COUNT",
            DecodeError::BadUuid => "BAD_UUID",
            DecodeError::BadQuantity => "BAD_QUANTITY",
        }
    }
}

pub fn encode_payload(p: &QrPayload) -> Result<String, InvalidPayload> {
    match p {
        QrPayload::ItemLabel { item_id } => Ok(format!("{PAYLOAD_VERSION};ITEM;{item_id}")),
        QrPayload::StockOpLabel {
            kind,
            warehouse_id,
            item_id,
            quantity,
        } => {
            if *quantity < 1 {
                return Err(InvalidPayload);
            }
            Ok(format!(
                "{PAYLOAD_VERSION};OP;{};{warehouse_id};{item_id};{quantity}",
                kind.as_str()
            ))
        }
    }
}

fn parse_quantity(s: &str) -> Result<u64, DecodeError> {
    let b = s.as_bytes();
    match b.first() {
        Some(b'1'..=b'9') if b.iter().all(u8::is_ascii_digit) => {
            s.parse().map_err(|_| DecodeError::BadQuantity)
        }
        _ => Err(DecodeError::BadQuantity),
    }
}

fn parse_uuid(s: &str) -> Result<EntityId, DecodeError> {
    EntityId::parse(s).map_err(|_| DecodeError::BadUuid)
}

/// Parses canonical label text only. Never touches any state.
pub fn decode_payload(text: &str) -> Result<QrPayload, DecodeError> {
    let fields: Vec<&str> = text.split(';').collect();
    if fields[0] != PAYLOAD_VERSION {
        return Err(DecodeError::UnsupportedVersion);
    }
    match fields.get(1).copied() {
        Some("ITEM") => {
            if fields.len() != 3 {
                return Err(DecodeError::BadFieldCount);
            }
            Ok(QrPayload::ItemLabel {
                item_id: parse_uuid(fields[2])?,
            })
        }
        Some("OP") => {
            if fields.len() != 6 {
                return Err(DecodeError::BadFieldCount);
            }
            let kind = LabelOpKind::parse(fields[2]).ok_or(DecodeError::UnknownKind)?;
            Ok(QrPayload::StockOpLabel {
                kind,
                warehouse_id: parse_uuid(fields[3])?,
                item_id: parse_uuid(fields[4])?,
                quantity: parse_quantity(fields[5])?,
            })
        }
        Some(_) => Err(DecodeError::UnknownKind),
        None => Err(DecodeError::BadFieldCount),
    }
}
