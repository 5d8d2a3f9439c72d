//! Prefix (Polish) token serialization of expression skeletons.
//!
//! The vocabulary indices are fixed and versioned; decoders, loss code, and
//! the file formats all rely on this numbering:
//!
//! ```text
//! PAD=0 BOS=1 EOS=2 Add=3 Sub=4 Mul=5 Div=6 Exp=7 Log=8 B1..B8=9..16 CONST=17
//! ```
//!
//! Constants collapse to the single `CONST` token; their values are fitted
//! numerically after decoding and never appear in the discrete vocabulary.

use super::{Expr, OpKind, MAX_BANDS};
use alloc::vec::Vec;
use core::fmt;

pub const VOCAB_SIZE: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Pad,
    Bos,
    Eos,
    Op(OpKind),
    Band(u8),
    Const,
}

impl Token {
    pub fn index(self) -> usize {
        match self {
            Token::Pad => 0,
            Token::Bos => 1,
            Token::Eos => 2,
            Token::Op(OpKind::Add) => 3,
            Token::Op(OpKind::Sub) => 4,
            Token::Op(OpKind::Mul) => 5,
            Token::Op(OpKind::Div) => 6,
            Token::Op(OpKind::Exp) => 7,
            Token::Op(OpKind::Log) => 8,
            Token::Band(b) => 8 + b as usize,
            Token::Const => 17,
        }
    }

    pub fn from_index(i: usize) -> Option<Token> {
        Some(match i {
            0 => Token::Pad,
            1 => Token::Bos,
            2 => Token::Eos,
            3 => Token::Op(OpKind::Add),
            4 => Token::Op(OpKind::Sub),
            5 => Token::Op(OpKind::Mul),
            6 => Token::Op(OpKind::Div),
            7 => Token::Op(OpKind::Exp),
            8 => Token::Op(OpKind::Log),
            9..=16 => Token::Band((i - 8) as u8),
            17 => Token::Const,
            _ => return None,
        })
    }

    /// Net change in the number of unfilled argument positions when this
    /// token is appended: a binary operator consumes one slot and opens two.
    pub fn arity_delta(self) -> isize {
        match self {
            Token::Op(op) => op.arity() as isize - 1,
            Token::Band(_) | Token::Const => -1,
            Token::Pad | Token::Bos | Token::Eos => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenError {
    MissingBos,
    /// The running arity balance hit zero before `EOS`.
    PrematureComplete { at: usize },
    /// `EOS` arrived while argument positions were still open.
    UnbalancedAtEos { open: usize },
    /// Tokens after `EOS` that are not `PAD`.
    TrailingTokens { at: usize },
    MissingEos,
    TooLong { len: usize, max: usize },
    BandOutOfRange(u8),
    UnexpectedToken { at: usize },
}

impl fmt::Display for TokenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenError::MissingBos => write!(f, "sequence must start with BOS"),
            TokenError::PrematureComplete { at } => {
                write!(f, "expression complete before EOS (token {at})")
            }
            TokenError::UnbalancedAtEos { open } => {
                write!(f, "EOS with {open} unfilled argument positions")
            }
            TokenError::TrailingTokens { at } => write!(f, "non-PAD token after EOS at {at}"),
            TokenError::MissingEos => write!(f, "sequence has no EOS"),
            TokenError::TooLong { len, max } => write!(f, "sequence length {len} exceeds {max}"),
            TokenError::BandOutOfRange(b) => write!(f, "band B{b} out of range"),
            TokenError::UnexpectedToken { at } => write!(f, "unexpected token at {at}"),
        }
    }
}

/// Default maximum skeleton length, including BOS/EOS.
pub const DEFAULT_MAX_LEN: usize = 64;

/// A validated `BOS .. EOS [PAD]*` prefix traversal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenSeq {
    tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<Token>) -> Result<TokenSeq, TokenError> {
        Self::with_max_len(tokens, DEFAULT_MAX_LEN)
    }

    pub fn with_max_len(tokens: Vec<Token>, max_len: usize) -> Result<TokenSeq, TokenError> {
        if tokens.len() > max_len {
            return Err(TokenError::TooLong {
                len: tokens.len(),
                max: max_len,
            });
        }
        if tokens.first() != Some(&Token::Bos) {
            return Err(TokenError::MissingBos);
        }
        let mut open: isize = 1;
        let mut eos_at = None;
        for (i, tok) in tokens.iter().enumerate().skip(1) {
            match (eos_at, tok) {
                (Some(_), Token::Pad) => {}
                (Some(_), _) => return Err(TokenError::TrailingTokens { at: i }),
                (None, Token::Eos) => {
                    if open != 0 {
                        return Err(TokenError::UnbalancedAtEos {
                            open: open as usize,
                        });
                    }
                    eos_at = Some(i);
                }
                (None, Token::Bos | Token::Pad) => {
                    return Err(TokenError::UnexpectedToken { at: i })
                }
                (None, Token::Band(b)) if *b < 1 || *b > MAX_BANDS => {
                    return Err(TokenError::BandOutOfRange(*b))
                }
                (None, tok) => {
                    if open == 0 {
                        return Err(TokenError::PrematureComplete { at: i });
                    }
                    open += tok.arity_delta();
                }
            }
        }
        if eos_at.is_none() {
            return Err(TokenError::MissingEos);
        }
        Ok(TokenSeq { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Payload tokens between BOS and EOS.
    pub fn body(&self) -> &[Token] {
        let eos = self
            .tokens
            .iter()
            .position(|t| *t == Token::Eos)
            .expect("validated sequence has EOS");
        &self.tokens[1..eos]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Vocabulary indices, e.g. for embedding lookup.
    pub fn indices(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.index()).collect()
    }

    /// Right-pad with PAD up to `len`.
    pub fn padded(&self, len: usize) -> Vec<Token> {
        let mut out = self.tokens.clone();
        while out.len() < len {
            out.push(Token::Pad);
        }
        out
    }
}

/// Serialize an expression to its prefix skeleton; constants become `CONST`.
pub fn to_tokens(e: &Expr) -> TokenSeq {
    fn walk(e: &Expr, out: &mut Vec<Token>) {
        match e {
            Expr::Op(op, children) => {
                out.push(Token::Op(*op));
                for c in children {
                    walk(c, out);
                }
            }
            Expr::Band(b) => out.push(Token::Band(*b)),
            Expr::Const { .. } => out.push(Token::Const),
        }
    }
    let mut tokens = alloc::vec![Token::Bos];
    walk(e, &mut tokens);
    tokens.push(Token::Eos);
    TokenSeq::with_max_len(tokens, usize::MAX).expect("serialized tree is always well-formed")
}

/// Rebuild a skeleton expression from a validated prefix sequence.
///
/// `CONST` tokens become constant nodes with fresh slot ids in traversal
/// order, initialized to 1.0 (the refinement start value).
pub fn from_tokens(seq: &TokenSeq) -> Expr {
    fn build(tokens: &[Token], pos: &mut usize, next_slot: &mut usize) -> Expr {
        let tok = tokens[*pos];
        *pos += 1;
        match tok {
            Token::Op(op) => {
                let children = (0..op.arity())
                    .map(|_| build(tokens, pos, next_slot))
                    .collect();
                Expr::Op(op, children)
            }
            Token::Band(b) => Expr::Band(b),
            Token::Const => {
                let slot = *next_slot;
                *next_slot += 1;
                Expr::Const { value: 1.0, slot }
            }
            Token::Pad | Token::Bos | Token::Eos => unreachable!("validated body"),
        }
    }
    let body = seq.body();
    let mut pos = 0;
    let mut next_slot = 0;
    build(body, &mut pos, &mut next_slot)
}
