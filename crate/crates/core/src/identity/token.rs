// SPDX-License-Identifier: Apache-2.0

//! Dynamic attribute tokens and their canonical byte encoding.
//!
//! The signing input is the token fields in declaration order, each written
//! as a big-endian `u32` length followed by the field bytes. Timestamps are
//! encoded as big-endian `i64` nanoseconds since the Unix epoch. The wire form
//! appends the signature with the same length prefix.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use chrono::DateTime;
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::clock::Timestamp;
use crate::ids::{ConnectorId, TokenId};

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicAttributeToken {
    pub token_id: TokenId,
    pub issuer: String,
    pub subject_connector_id: ConnectorId,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    #[serde(with = "crate::hexbytes")]
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenDecodeError {
    #[error("token truncated")]
    Truncated,
    #[error("trailing bytes after token")]
    Trailing,
    #[error("field is not valid utf-8")]
    Utf8,
    #[error("timestamp field malformed")]
    Timestamp,
    #[error("token header is not valid base64")]
    Base64,
}

impl DynamicAttributeToken {
    /// Bytes covered by the signature.
    pub fn signing_input(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128);
        put(&mut out, self.token_id.as_str().as_bytes());
        put(&mut out, self.issuer.as_bytes());
        put(&mut out, self.subject_connector_id.as_str().as_bytes());
        put(&mut out, &nanos(self.issued_at).to_be_bytes());
        put(&mut out, &nanos(self.expires_at).to_be_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signing_input();
        put(&mut out, &self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenDecodeError> {
        let mut rd = Reader { buf: bytes };
        let token_id = TokenId::new(rd.string()?);
        let issuer = rd.string()?;
        let subject_connector_id = ConnectorId::new(rd.string()?);
        let issued_at = rd.timestamp()?;
        let expires_at = rd.timestamp()?;
        let signature = rd.field()?.to_vec();
        if !rd.buf.is_empty() {
            return Err(TokenDecodeError::Trailing);
        }
        Ok(Self { token_id, issuer, subject_connector_id, issued_at, expires_at, signature })
    }

    /// Value of the `DAT` request header.
    pub fn to_header(&self) -> String {
        STANDARD.encode(self.to_bytes())
    }

    pub fn from_header(value: &str) -> Result<Self, TokenDecodeError> {
        let bytes = STANDARD.decode(value.trim()).map_err(|_| TokenDecodeError::Base64)?;
        Self::from_bytes(&bytes)
    }

    pub(crate) fn sign(&mut self, key: &[u8]) {
        let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(&self.signing_input());
        self.signature = mac.finalize().into_bytes().to_vec();
    }

    pub(crate) fn signature_valid(&self, key: &[u8]) -> bool {
        let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(&self.signing_input());
        mac.verify_slice(&self.signature).is_ok()
    }
}

fn nanos(t: Timestamp) -> i64 {
    // Representable range is 1677..2262.
    t.timestamp_nanos_opt().unwrap_or(i64::MAX)
}

fn put(out: &mut Vec<u8>, field: &[u8]) {
    out.extend_from_slice(&(field.len() as u32).to_be_bytes());
    out.extend_from_slice(field);
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn field(&mut self) -> Result<&'a [u8], TokenDecodeError> {
        if self.buf.len() < 4 {
            return Err(TokenDecodeError::Truncated);
        }
        let (len, rest) = self.buf.split_at(4);
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        if rest.len() < len {
            return Err(TokenDecodeError::Truncated);
        }
        let (field, rest) = rest.split_at(len);
        self.buf = rest;
        Ok(field)
    }

    fn string(&mut self) -> Result<String, TokenDecodeError> {
        let f = self.field()?;
        String::from_utf8(f.to_vec()).map_err(|_| TokenDecodeError::Utf8)
    }

    fn timestamp(&mut self) -> Result<Timestamp, TokenDecodeError> {
        let f = self.field()?;
        let raw: [u8; 8] = f.try_into().map_err(|_| TokenDecodeError::Timestamp)?;
        Ok(DateTime::from_timestamp_nanos(i64::from_be_bytes(raw)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn sample() -> DynamicAttributeToken {
        let t0 = DateTime::from_timestamp(1_767_225_600, 123_456_789).unwrap();
        let mut tok = DynamicAttributeToken {
            token_id: TokenId::new("dat-000001"),
            issuer: "host-a:7000".into(),
            subject_connector_id: ConnectorId::new("conn-a-000001"),
            issued_at: t0,
            expires_at: t0 + Duration::seconds(300),
            signature: Vec::new(),
        };
        tok.sign(b"k");
        tok
    }

    #[test]
    fn canonical_layout_is_length_prefixed_in_field_order() {
        let tok = sample();
        let input = tok.signing_input();
        assert_eq!(&input[..4], &10u32.to_be_bytes());
        assert_eq!(&input[4..14], b"dat-000001");
        assert_eq!(&input[14..18], &11u32.to_be_bytes());
        // Two 8-byte timestamps with their prefixes close the input.
        assert_eq!(&input[input.len() - 12..input.len() - 8], &8u32.to_be_bytes());
    }

    #[test]
    fn bytes_and_header_round_trip() {
        let tok = sample();
        assert_eq!(DynamicAttributeToken::from_bytes(&tok.to_bytes()).unwrap(), tok);
        assert_eq!(DynamicAttributeToken::from_header(&tok.to_header()).unwrap(), tok);
    }

    #[test]
    fn json_round_trip_keeps_nanoseconds_and_hex_signature() {
        let tok = sample();
        let json = serde_json::to_value(&tok).unwrap();
        assert_eq!(json["signature"].as_str().unwrap(), hex::encode(&tok.signature));
        let back: DynamicAttributeToken = serde_json::from_value(json).unwrap();
        assert_eq!(back, tok);
    }

    #[test]
    fn truncated_and_trailing_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert_eq!(
            DynamicAttributeToken::from_bytes(&bytes[..bytes.len() - 1]),
            Err(TokenDecodeError::Truncated)
        );
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(DynamicAttributeToken::from_bytes(&long), Err(TokenDecodeError::Trailing));
    }
}
