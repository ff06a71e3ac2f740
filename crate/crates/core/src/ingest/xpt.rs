//! SAS transport (XPORT v5) reader.
//!
//! Layout: 80-byte records. Library header + two real-header records,
//! member header, descriptor header + two member records, NAMESTR header,
//! packed 140-byte NAMESTR entries padded to a record boundary, OBS header,
//! then observations packed row-major and blank-padded to a record boundary.
//! Numbers are IBM System/360 hexadecimal doubles, possibly truncated to
//! fewer than 8 bytes.

use thiserror::Error;

use super::{Cell, MissingCode, RawTable};

pub const RECORD_LEN: usize = 80;
const HEADER_TAG: &[u8] = b"HEADER RECORD*******";
const HEADER_TAIL: &[u8] = b"HEADER RECORD!!!!!!!";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum XptError {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("truncated record at byte {offset}: {reason}")]
    TruncatedRecord { offset: usize, reason: String },
    #[error("unsupported transport version at byte {offset}: found {found:?} header (only v5 is read)")]
    UnsupportedVersion { offset: usize, found: String },
}

impl XptError {
    /// Byte offset the error refers to.
    pub fn offset(&self) -> usize {
        match self {
            XptError::MalformedHeader { offset, .. }
            | XptError::TruncatedRecord { offset, .. }
            | XptError::UnsupportedVersion { offset, .. } => *offset,
        }
    }
}

/// Decode an IBM System/360 double (big-endian, base-16 exponent biased by
/// 64, 56-bit fraction). Fractions wider than an IEEE significand are
/// rounded to nearest, ties to even; every IEEE double round-trips.
pub fn ibm_to_f64(bytes: [u8; 8]) -> f64 {
    let negative = bytes[0] & 0x80 != 0;
    let exponent = i32::from(bytes[0] & 0x7f) - 64;
    let mut fraction = [0u8; 8];
    fraction[1..].copy_from_slice(&bytes[1..]);
    let fraction = u64::from_be_bytes(fraction);
    let magnitude = if fraction == 0 {
        0.0
    } else {
        // value = fraction * 2^-56 * 16^exponent; the scale stays within the
        // normal f64 range for every IBM exponent so the product is exact.
        fraction as f64 * pow2(4 * exponent - 56)
    };
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

fn pow2(exp: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&exp));
    f64::from_bits(((exp + 1023) as u64) << 52)
}

/// Numeric field decoding, including the missing sentinels: a first byte of
/// `.`, `A`..`Z` or `_` followed only by zero bytes.
pub fn decode_numeric(field: &[u8]) -> Cell {
    debug_assert!(!field.is_empty() && field.len() <= 8);
    if field[1..].iter().all(|&b| b == 0) {
        if let Some(code) = MissingCode::new(field[0] as char) {
            return Cell::Missing(code);
        }
    }
    let mut full = [0u8; 8];
    full[..field.len()].copy_from_slice(field);
    Cell::Numeric(ibm_to_f64(full))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub label: String,
    pub numeric: bool,
    pub length: usize,
    pub position: usize,
}

/// Parsed member metadata alongside the data.
#[derive(Debug, Clone, PartialEq)]
pub struct XptMember {
    pub dataset: String,
    pub variables: Vec<Variable>,
    pub table: RawTable,
}

/// Parse the first member of a transport file into a [`RawTable`].
pub fn parse_xpt(bytes: &[u8]) -> Result<RawTable, XptError> {
    parse_xpt_member(bytes).map(|m| m.table)
}

pub fn parse_xpt_member(bytes: &[u8]) -> Result<XptMember, XptError> {
    if bytes.len() % RECORD_LEN != 0 {
        return Err(XptError::TruncatedRecord {
            offset: bytes.len() - bytes.len() % RECORD_LEN,
            reason: format!("file length {} is not a multiple of {RECORD_LEN}", bytes.len()),
        });
    }
    let mut cursor = Cursor { bytes, offset: 0 };

    let lib = cursor.record("library header")?;
    match header_kind(lib) {
        Some(b"LIBRARY ") => {}
        Some(b"LIBV8   ") => {
            return Err(XptError::UnsupportedVersion {
                offset: 0,
                found: "LIBV8".into(),
            })
        }
        _ => {
            return Err(XptError::MalformedHeader {
                offset: 0,
                reason: "missing XPORT library header record".into(),
            })
        }
    }
    let real = cursor.record("library real header")?;
    if !real.starts_with(b"SAS     SAS     SASLIB  ") {
        return Err(XptError::MalformedHeader {
            offset: RECORD_LEN,
            reason: "library real header does not start with SAS/SASLIB symbols".into(),
        });
    }
    cursor.record("library modified-date record")?;

    let member_offset = cursor.offset;
    let member = cursor.record("member header")?;
    let namestr_len = match header_kind(member) {
        Some(b"MEMBER  ") => parse_digits(&member[74..78]).ok_or_else(|| XptError::MalformedHeader {
            offset: member_offset + 74,
            reason: "member header NAMESTR length is not numeric".into(),
        })?,
        Some(b"MEMBV8  ") => {
            return Err(XptError::UnsupportedVersion {
                offset: member_offset,
                found: "MEMBV8".into(),
            })
        }
        _ => {
            return Err(XptError::MalformedHeader {
                offset: member_offset,
                reason: "expected MEMBER header record".into(),
            })
        }
    };
    if namestr_len != 140 && namestr_len != 136 {
        return Err(XptError::MalformedHeader {
            offset: member_offset + 74,
            reason: format!("unsupported NAMESTR length {namestr_len}"),
        });
    }
    expect_header(&mut cursor, b"DSCRPTR ")?;
    let descriptor_offset = cursor.offset;
    let descriptor = cursor.record("member real header")?;
    if !descriptor.starts_with(b"SAS     ") {
        return Err(XptError::MalformedHeader {
            offset: descriptor_offset,
            reason: "member real header does not start with SAS symbol".into(),
        });
    }
    let dataset = latin1_trimmed(&descriptor[8..16]);
    cursor.record("member modified-date record")?;

    let namestr_header_offset = cursor.offset;
    let namestr_header = expect_header(&mut cursor, b"NAMESTR ")?;
    let n_vars = parse_digits(&namestr_header[54..58]).ok_or_else(|| XptError::MalformedHeader {
        offset: namestr_header_offset + 54,
        reason: "variable count is not numeric".into(),
    })?;

    let names_start = cursor.offset;
    let names_len = n_vars * namestr_len;
    let names_padded = names_len.div_ceil(RECORD_LEN) * RECORD_LEN;
    if names_start + names_padded > bytes.len() {
        return Err(XptError::TruncatedRecord {
            offset: names_start,
            reason: format!("{n_vars} NAMESTR entries run past end of file"),
        });
    }
    let mut variables = Vec::with_capacity(n_vars);
    for i in 0..n_vars {
        let start = names_start + i * namestr_len;
        variables.push(decode_namestr(&bytes[start..start + namestr_len], start)?);
    }
    cursor.offset = names_start + names_padded;
    expect_header(&mut cursor, b"OBS     ")?;

    let row_len = variables
        .iter()
        .map(|v| v.position + v.length)
        .max()
        .unwrap_or(0);
    let obs_start = cursor.offset;
    let obs_end = next_member_offset(bytes, obs_start).unwrap_or(bytes.len());
    let rows = decode_observations(&bytes[obs_start..obs_end], obs_start, row_len, &variables)?;

    let names = variables.iter().map(|v| v.name.clone()).collect();
    let table = RawTable::new(names, rows).map_err(|e| XptError::MalformedHeader {
        offset: names_start,
        reason: e.to_string(),
    })?;
    Ok(XptMember {
        dataset,
        variables,
        table,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn record(&mut self, what: &str) -> Result<&'a [u8], XptError> {
        let end = self.offset + RECORD_LEN;
        if end > self.bytes.len() {
            return Err(XptError::TruncatedRecord {
                offset: self.offset,
                reason: format!("file ends before {what}"),
            });
        }
        let rec = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(rec)
    }
}

fn header_kind(record: &[u8]) -> Option<&[u8]> {
    (record.starts_with(HEADER_TAG) && &record[28..48] == HEADER_TAIL).then(|| &record[20..28])
}

fn expect_header<'a>(cursor: &mut Cursor<'a>, kind: &[u8; 8]) -> Result<&'a [u8], XptError> {
    let offset = cursor.offset;
    let what = String::from_utf8_lossy(kind).trim().to_string();
    let rec = cursor.record(&format!("{what} header"))?;
    match header_kind(rec) {
        Some(k) if k == kind => Ok(rec),
        Some(k) if k.starts_with(b"NAMSTV8") || k.starts_with(b"OBSV8") || k.starts_with(b"DSCPTV8") => {
            Err(XptError::UnsupportedVersion {
                offset,
                found: String::from_utf8_lossy(k).trim().to_string(),
            })
        }
        _ => Err(XptError::MalformedHeader {
            offset,
            reason: format!("expected {what} header record"),
        }),
    }
}

fn parse_digits(raw: &[u8]) -> Option<usize> {
    std::str::from_utf8(raw).ok()?.trim().parse().ok()
}

fn latin1_trimmed(raw: &[u8]) -> String {
    let s: String = raw.iter().map(|&b| b as char).collect();
    s.trim_end_matches([' ', '\0']).to_string()
}

fn be_i16(raw: &[u8]) -> i16 {
    i16::from_be_bytes([raw[0], raw[1]])
}

fn decode_namestr(raw: &[u8], offset: usize) -> Result<Variable, XptError> {
    let numeric = match be_i16(&raw[0..2]) {
        1 => true,
        2 => false,
        other => {
            return Err(XptError::MalformedHeader {
                offset,
                reason: format!("NAMESTR variable type {other} is neither 1 (numeric) nor 2 (char)"),
            })
        }
    };
    let length = be_i16(&raw[4..6]);
    let position = i32::from_be_bytes([raw[84], raw[85], raw[86], raw[87]]);
    let name = latin1_trimmed(&raw[8..16]).to_uppercase();
    if name.is_empty() || length <= 0 || position < 0 || (numeric && !(2..=8).contains(&length)) {
        return Err(XptError::MalformedHeader {
            offset,
            reason: format!("invalid NAMESTR entry for variable {name:?} (length {length}, position {position})"),
        });
    }
    Ok(Variable {
        label: latin1_trimmed(&raw[16..56]),
        name,
        numeric,
        length: length as usize,
        position: position as usize,
    })
}

fn next_member_offset(bytes: &[u8], from: usize) -> Option<usize> {
    (from..bytes.len())
        .step_by(RECORD_LEN)
        .find(|&off| matches!(header_kind(&bytes[off..off + RECORD_LEN]), Some(b"MEMBER  " | b"MEMBV8  ")))
}

fn decode_observations(
    obs: &[u8],
    base_offset: usize,
    row_len: usize,
    variables: &[Variable],
) -> Result<Vec<Vec<Cell>>, XptError> {
    if row_len == 0 {
        return Ok(Vec::new());
    }
    let full_rows = obs.len() / row_len;
    let leftover = &obs[full_rows * row_len..];
    if leftover.iter().any(|&b| b != b' ') {
        return Err(XptError::TruncatedRecord {
            offset: base_offset + full_rows * row_len,
            reason: format!(
                "observation block ends with a partial row ({} of {row_len} bytes)",
                leftover.len()
            ),
        });
    }
    // Blank rows that start inside the final record are record padding.
    let padding_floor = obs.len().saturating_sub(RECORD_LEN);
    let mut n_rows = full_rows;
    while n_rows > 0 {
        let start = (n_rows - 1) * row_len;
        if start >= padding_floor && obs[start..start + row_len].iter().all(|&b| b == b' ') {
            n_rows -= 1;
        } else {
            break;
        }
    }
    Ok((0..n_rows)
        .map(|r| {
            let row = &obs[r * row_len..(r + 1) * row_len];
            variables
                .iter()
                .map(|v| {
                    let field = &row[v.position..v.position + v.length];
                    if v.numeric {
                        decode_numeric(field)
                    } else {
                        Cell::Text(latin1_trimmed(field))
                    }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_bytes_decode_to_zero() {
        assert_eq!(decode_numeric(&[0; 8]), Cell::Numeric(0.0));
    }

    #[test]
    fn dot_sentinel_is_missing() {
        assert_eq!(
            decode_numeric(&[0x2E, 0, 0, 0, 0, 0, 0, 0]),
            Cell::Missing(MissingCode::DOT)
        );
        assert_eq!(
            decode_numeric(&[b'_', 0, 0, 0, 0, 0, 0, 0]),
            Cell::Missing(MissingCode::new('_').unwrap())
        );
        assert_eq!(
            decode_numeric(&[b'Z', 0, 0]),
            Cell::Missing(MissingCode::new('Z').unwrap())
        );
    }

    #[test]
    fn sentinel_byte_with_nonzero_tail_is_a_number() {
        // 0x41 0x10 ... = 16^1 * 1/16 = 1.0
        assert_eq!(decode_numeric(&[0x41, 0x10, 0, 0, 0, 0, 0, 0]), Cell::Numeric(1.0));
    }

    #[test]
    fn known_ibm_encodings() {
        // 100 = 0x64 = 16^2 * 0x0.64
        assert_eq!(ibm_to_f64([0x42, 0x64, 0, 0, 0, 0, 0, 0]), 100.0);
        assert_eq!(ibm_to_f64([0xC1, 0x10, 0, 0, 0, 0, 0, 0]), -1.0);
        assert_eq!(ibm_to_f64([0x40, 0x80, 0, 0, 0, 0, 0, 0]), 0.5);
        // 0.1 truncated to 56 bits in IBM form
        assert_eq!(
            ibm_to_f64([0x40, 0x19, 0x99, 0x99, 0x99, 0x99, 0x99, 0x9A]),
            0.1
        );
    }

    #[test]
    fn wide_fraction_rounds_to_nearest_even() {
        // fraction 2^53 + 1 has 54 significant bits; exponent 2 gives
        // 32 + 2^-48, a tie between 32 and its successor: rounds to 32.
        let mut bytes = ((1u64 << 53) | 1).to_be_bytes();
        bytes[0] = 0x42;
        assert_eq!(ibm_to_f64(bytes), 32.0);
        // 2^53 + 3 is also a tie; the even neighbour is 2^53 + 4.
        let mut bytes = ((1u64 << 53) | 3).to_be_bytes();
        bytes[0] = 0x42;
        assert_eq!(ibm_to_f64(bytes), 32.0 + 2f64.powi(-46));
    }

    #[test]
    fn rejects_non_record_length() {
        let err = parse_xpt(&[b' '; 81]).unwrap_err();
        assert!(matches!(err, XptError::TruncatedRecord { offset: 80, .. }));
    }

    #[test]
    fn rejects_bad_magic() {
        let err = parse_xpt(&[b' '; 160]).unwrap_err();
        assert!(matches!(err, XptError::MalformedHeader { offset: 0, .. }));
    }

    #[test]
    fn rejects_v8_library() {
        let mut rec = Vec::new();
        rec.extend_from_slice(b"HEADER RECORD*******LIBV8   HEADER RECORD!!!!!!!");
        rec.resize(80, b'0');
        let err = parse_xpt(&rec).unwrap_err();
        assert!(matches!(err, XptError::UnsupportedVersion { .. }));
    }
}
