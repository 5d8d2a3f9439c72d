//! Recursive-descent parser for the infix expression grammar.
//!
//! Grammar (standard precedence, left-associative):
//!
//! ```text
//! expr   := term   (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '(' expr ')'
//!         | ('exp' | 'log') '(' expr ')'
//!         | band                      # B1 .. B8
//!         | number                    # decimal literal
//!         | '-' factor                # negated literal, else (0 - x)
//! ```
//!
//! Unary minus on a literal folds into a negative constant; on anything else
//! it desugars to `(0 - x)` with the zero occupying a constant slot. Constant
//! slot ids are assigned densely in left-to-right source order.

use super::{Expr, OpKind, MAX_BANDS};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    UnknownIdentifier(String),
    BadNumber,
    BandOutOfRange(String),
    ExpectedClosingParen,
    TrailingInput,
}

/// Syntax error with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => return write!(
                f,
                "unexpected character '{c}' at byte {}",
                self.offset
            ),
            ParseErrorKind::UnexpectedEnd => "unexpected end of input",
            ParseErrorKind::UnknownIdentifier(id) => {
                return write!(f, "unknown identifier '{id}' at byte {}", self.offset)
            }
            ParseErrorKind::BadNumber => "malformed number",
            ParseErrorKind::BandOutOfRange(id) => {
                return write!(f, "band '{id}' out of range B1..B8 at byte {}", self.offset)
            }
            ParseErrorKind::ExpectedClosingParen => "expected ')'",
            ParseErrorKind::TrailingInput => "trailing input after expression",
        };
        write!(f, "{msg} at byte {}", self.offset)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err(ParseErrorKind::TrailingInput));
    }
    e.renumber_slots();
    Ok(e)
}

impl<'a> Parser<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            kind,
            offset: self.pos,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::binary(OpKind::Add, lhs, rhs);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::binary(OpKind::Sub, lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::binary(OpKind::Mul, lhs, rhs);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::binary(OpKind::Div, lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.err(ParseErrorKind::UnexpectedEnd)),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err(ParseErrorKind::ExpectedClosingParen));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(b'-') => {
                self.pos += 1;
                self.skip_ws();
                if self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit() || *c == b'.') {
                    let v = self.number()?;
                    Ok(Expr::Const {
                        value: -v,
                        slot: 0,
                    })
                } else {
                    let inner = self.factor()?;
                    Ok(Expr::binary(
                        OpKind::Sub,
                        Expr::Const {
                            value: 0.0,
                            slot: 0,
                        },
                        inner,
                    ))
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let v = self.number()?;
                Ok(Expr::Const { value: v, slot: 0 })
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(self.err(ParseErrorKind::UnexpectedChar(c as char))),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'.' || *c == b'e' || *c == b'E')
        {
            // allow exponent sign directly after e/E
            if matches!(self.src[self.pos], b'e' | b'E')
                && self.src.get(self.pos + 1).is_some_and(|c| *c == b'+' || *c == b'-')
            {
                self.pos += 1;
            }
            self.pos += 1;
        }
        let text = core::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>().map_err(|_| ParseError {
            kind: ParseErrorKind::BadNumber,
            offset: start,
        })
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let id = core::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match id {
            "exp" | "log" => {
                let op = if id == "exp" { OpKind::Exp } else { OpKind::Log };
                if self.peek() != Some(b'(') {
                    return Err(self.err(ParseErrorKind::UnexpectedEnd));
                }
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err(ParseErrorKind::ExpectedClosingParen));
                }
                self.pos += 1;
                Ok(Expr::unary(op, inner))
            }
            _ if id.starts_with('B') => {
                let band: Result<u8, _> = id[1..].parse();
                match band {
                    Ok(b) if (1..=MAX_BANDS).contains(&b) => Ok(Expr::Band(b)),
                    _ => Err(ParseError {
                        kind: ParseErrorKind::BandOutOfRange(String::from(id)),
                        offset: start,
                    }),
                }
            }
            _ => Err(ParseError {
                kind: ParseErrorKind::UnknownIdentifier(String::from(id)),
                offset: start,
            }),
        }
    }
}

#[allow(unused)]
type Unused = Vec<u8>;
