//! Primary-header reader and writer for FITS files.
//!
//! Only the subset needed for metadata ingestion is handled: 2880-byte
//! blocks of 36 fixed 80-byte cards, value cards with `= ` in columns 9-10,
//! commentary cards, and the `END` terminator. Pixel data and extensions are
//! never touched; the reader stops at the block holding `END`.

use std::fmt;
use std::io::{self, Read};

pub const BLOCK_LEN: usize = 2880;
pub const CARD_LEN: usize = 80;
pub const CARDS_PER_BLOCK: usize = BLOCK_LEN / CARD_LEN;

#[derive(Debug, thiserror::Error)]
pub enum FitsError {
    #[error("header block truncated at byte {offset}")]
    TruncatedBlock { offset: usize },
    #[error("no END card found")]
    MissingEnd,
    #[error("malformed card {index}: {reason}")]
    MalformedCard { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FitsError {
    pub fn code(&self) -> &'static str {
        match self {
            FitsError::TruncatedBlock { .. } => "TRUNCATED_BLOCK",
            FitsError::MissingEnd => "MISSING_END",
            FitsError::MalformedCard { .. } => "MALFORMED_CARD",
            FitsError::Io(_) => "IO_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitsValue {
    Logical(bool),
    Integer(i64),
    Real(f64),
    Str(String),
    None,
}

impl FitsValue {
    pub fn kind(&self) -> &'static str {
        match self {
            FitsValue::Logical(_) => "logical",
            FitsValue::Integer(_) => "integer",
            FitsValue::Real(_) => "real",
            FitsValue::Str(_) => "string",
            FitsValue::None => "none",
        }
    }
}

impl fmt::Display for FitsValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitsValue::Logical(b) => f.write_str(if *b { "T" } else { "F" }),
            FitsValue::Integer(i) => write!(f, "{i}"),
            FitsValue::Real(x) => f.write_str(&format_real(*x)),
            FitsValue::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
            FitsValue::None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitsCard {
    pub keyword: String,
    pub value: FitsValue,
    pub comment: Option<String>,
}

impl FitsCard {
    pub fn new(keyword: &str, value: FitsValue) -> Self {
        FitsCard {
            keyword: keyword.to_string(),
            value,
            comment: None,
        }
    }

    pub fn with_comment(mut self, comment: &str) -> Self {
        self.comment = Some(comment.to_string());
        self
    }

    fn is_commentary(&self) -> bool {
        matches!(self.keyword.as_str(), "COMMENT" | "HISTORY" | "")
    }

    /// Renders the 80-byte card image.
    pub fn to_card_image(&self) -> Result<[u8; CARD_LEN], FitsError> {
        let bad = |reason: String| FitsError::MalformedCard { index: 0, reason };
        if !valid_keyword(&self.keyword) {
            return Err(bad(format!("invalid keyword {:?}", self.keyword)));
        }
        let mut text = format!("{:<8}", self.keyword);
        if self.is_commentary() || self.keyword == "END" {
            if let Some(c) = &self.comment {
                text.push_str(c);
            }
        } else {
            text.push_str("= ");
            match &self.value {
                FitsValue::Str(s) => {
                    let escaped = s.replace('\'', "''");
                    text.push_str(&format!("'{escaped:<8}'"));
                }
                FitsValue::None => {}
                other => text.push_str(&format!("{:>20}", other.to_string())),
            }
            if let Some(c) = &self.comment {
                text.push_str(" / ");
                text.push_str(c);
            }
        }
        if !text.is_ascii() || text.len() > CARD_LEN {
            return Err(bad(format!("card for {} does not fit in 80 ASCII bytes", self.keyword)));
        }
        let mut out = [b' '; CARD_LEN];
        out[..text.len()].copy_from_slice(text.as_bytes());
        Ok(out)
    }
}

/// Reals always carry a decimal point or exponent so they never read back
/// as integers.
fn format_real(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'E', 'N', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn valid_keyword(k: &str) -> bool {
    k.len() <= 8
        && k.bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitsHeader {
    /// Meaningful cards in file order, the last one being `END`.
    pub cards: Vec<FitsCard>,
    pub raw_block_count: usize,
}

impl FitsHeader {
    pub fn get(&self, keyword: &str) -> Option<&FitsCard> {
        self.cards.iter().find(|c| c.keyword == keyword)
    }

    pub fn value(&self, keyword: &str) -> Option<&FitsValue> {
        self.get(keyword).map(|c| &c.value)
    }

    pub fn bytes_consumed(&self) -> usize {
        self.raw_block_count * BLOCK_LEN
    }
}

/// Parses a header from an in-memory buffer starting at offset 0.
pub fn parse_fits_header(bytes: &[u8]) -> Result<FitsHeader, FitsError> {
    read_fits_header(bytes)
}

/// Reads whole blocks from `reader` until the block containing `END`.
/// Nothing past that block is consumed.
pub fn read_fits_header<R: Read>(mut reader: R) -> Result<FitsHeader, FitsError> {
    let mut cards = Vec::new();
    let mut block = [0u8; BLOCK_LEN];
    let mut blocks = 0usize;
    loop {
        let got = read_full(&mut reader, &mut block)?;
        if got == 0 {
            return Err(FitsError::MissingEnd);
        }
        if got < BLOCK_LEN {
            return Err(FitsError::TruncatedBlock {
                offset: blocks * BLOCK_LEN + got,
            });
        }
        for (i, raw) in block.chunks_exact(CARD_LEN).enumerate() {
            let index = blocks * CARDS_PER_BLOCK + i;
            if raw.iter().all(|&b| b == b' ') {
                continue;
            }
            let card = parse_card(raw, index)?;
            let end = card.keyword == "END";
            cards.push(card);
            if end {
                return Ok(FitsHeader {
                    cards,
                    raw_block_count: blocks + 1,
                });
            }
        }
        blocks += 1;
    }
}

fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn parse_card(raw: &[u8], index: usize) -> Result<FitsCard, FitsError> {
    let malformed = |reason: &str| FitsError::MalformedCard {
        index,
        reason: reason.to_string(),
    };
    if !raw.is_ascii() {
        return Err(malformed("non-ASCII bytes"));
    }
    // ASCII checked above, so this cannot fail.
    let text = std::str::from_utf8(raw).map_err(|_| malformed("non-ASCII bytes"))?;
    let keyword = text[..8].trim_end_matches(' ');
    if !valid_keyword(keyword) {
        return Err(malformed(&format!("keyword {keyword:?} violates [A-Z0-9_-]{{0,8}}")));
    }
    let card = |value, comment| FitsCard {
        keyword: keyword.to_string(),
        value,
        comment,
    };
    let is_value_card = &text[8..10] == "= "
        && !matches!(keyword, "COMMENT" | "HISTORY" | "" | "END");
    if !is_value_card {
        let rest = text[8..].trim_end();
        let comment = (!rest.is_empty()).then(|| rest.to_string());
        return Ok(card(FitsValue::None, comment));
    }

    let field = text[10..].trim_start();
    let (value, tail) = if let Some(body) = field.strip_prefix('\'') {
        let mut s = String::new();
        let mut chars = body.char_indices().peekable();
        let mut close = None;
        while let Some((i, ch)) = chars.next() {
            if ch == '\'' {
                if matches!(chars.peek(), Some((_, '\''))) {
                    s.push('\'');
                    chars.next();
                } else {
                    close = Some(i);
                    break;
                }
            } else {
                s.push(ch);
            }
        }
        let close = close.ok_or_else(|| malformed("unterminated string"))?;
        let trimmed = s.trim_end_matches(' ').to_string();
        (FitsValue::Str(trimmed), &body[close + 1..])
    } else {
        let (token, tail) = match field.find('/') {
            Some(p) => (&field[..p], &field[p..]),
            None => (field, ""),
        };
        (parse_scalar(token.trim()).ok_or_else(|| malformed("unparseable value"))?, tail)
    };

    let tail = tail.trim();
    let comment = if tail.is_empty() {
        None
    } else if let Some(c) = tail.strip_prefix('/') {
        Some(c.trim().to_string()).filter(|c| !c.is_empty())
    } else {
        return Err(malformed("trailing garbage after value"));
    };
    Ok(card(value, comment))
}

fn parse_scalar(token: &str) -> Option<FitsValue> {
    match token {
        "" => return Some(FitsValue::None),
        "T" => return Some(FitsValue::Logical(true)),
        "F" => return Some(FitsValue::Logical(false)),
        _ => {}
    }
    if !token.contains(['.', 'e', 'E', 'd', 'D']) {
        if let Ok(i) = token.parse::<i64>() {
            return Some(FitsValue::Integer(i));
        }
    }
    token
        .replace(['d', 'D'], "E")
        .parse::<f64>()
        .ok()
        .map(FitsValue::Real)
}

/// Assembles headers card by card; used to produce synthetic files.
#[derive(Debug, Default, Clone)]
pub struct HeaderBuilder {
    cards: Vec<FitsCard>,
}

impl HeaderBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// A minimal primary header: `SIMPLE`, `BITPIX`, `NAXIS = 0`.
    pub fn primary() -> Self {
        Self::new()
            .card(FitsCard::new("SIMPLE", FitsValue::Logical(true)))
            .card(FitsCard::new("BITPIX", FitsValue::Integer(16)))
            .card(FitsCard::new("NAXIS", FitsValue::Integer(0)))
    }

    pub fn card(mut self, card: FitsCard) -> Self {
        self.cards.push(card);
        self
    }

    pub fn string(self, keyword: &str, v: &str) -> Self {
        self.card(FitsCard::new(keyword, FitsValue::Str(v.to_string())))
    }

    pub fn real(self, keyword: &str, v: f64) -> Self {
        self.card(FitsCard::new(keyword, FitsValue::Real(v)))
    }

    pub fn integer(self, keyword: &str, v: i64) -> Self {
        self.card(FitsCard::new(keyword, FitsValue::Integer(v)))
    }

    /// The cards a parser should report for the serialized header, `END`
    /// included.
    pub fn expected_cards(&self) -> Vec<FitsCard> {
        let mut v = self.cards.clone();
        v.push(FitsCard::new("END", FitsValue::None));
        v
    }

    /// Serializes the header padded to whole blocks.
    pub fn to_bytes(&self) -> Result<Vec<u8>, FitsError> {
        let mut out = Vec::with_capacity(BLOCK_LEN);
        for (i, card) in self.cards.iter().enumerate() {
            if card.keyword == "END" {
                return Err(FitsError::MalformedCard {
                    index: i,
                    reason: "END is appended automatically".into(),
                });
            }
            let img = card.to_card_image().map_err(|e| match e {
                FitsError::MalformedCard { reason, .. } => FitsError::MalformedCard { index: i, reason },
                other => other,
            })?;
            out.extend_from_slice(&img);
        }
        out.extend_from_slice(&FitsCard::new("END", FitsValue::None).to_card_image()?);
        let padded = out.len().div_ceil(BLOCK_LEN) * BLOCK_LEN;
        out.resize(padded, b' ');
        Ok(out)
    }
}
