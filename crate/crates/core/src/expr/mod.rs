//! Expression trees over spectral-band variables and constants.
//!
//! An [`Expr`] is a rooted tree built from the six-operator set
//! `{+, -, *, /, exp, log}` with two terminal kinds: band variables `B1..B8`
//! and real constants. Constants carry a dense slot id so a skeleton's
//! constant vector can be fitted numerically without rewriting the tree.

mod eval;
mod parse;
mod random;
mod tokens;

pub use eval::{constant_jacobian, eval, eval_pixel, grad_constants, guard_margin};
pub use parse::{parse, ParseError, ParseErrorKind};
pub use random::random_expr;
pub use tokens::{from_tokens, to_tokens, Token, TokenError, TokenSeq, DEFAULT_MAX_LEN, VOCAB_SIZE};

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Maximum number of band variables in the grammar (`B1..B8`).
pub const MAX_BANDS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
}

impl OpKind {
    pub fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
            OpKind::Exp | OpKind::Log => 1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            OpKind::Add => "+",
            OpKind::Sub => "-",
            OpKind::Mul => "*",
            OpKind::Div => "/",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Operator node; the child count always matches the operator arity.
    Op(OpKind, Vec<Expr>),
    /// Band variable, 1-based (`B1` = 1).
    Band(u8),
    /// Constant terminal with its fitted value and dense slot id.
    Const { value: f64, slot: usize },
}

impl Expr {
    pub fn binary(op: OpKind, lhs: Expr, rhs: Expr) -> Expr {
        debug_assert_eq!(op.arity(), 2);
        Expr::Op(op, alloc::vec![lhs, rhs])
    }

    pub fn unary(op: OpKind, inner: Expr) -> Expr {
        debug_assert_eq!(op.arity(), 1);
        Expr::Op(op, alloc::vec![inner])
    }

    /// Total node count: operators plus terminal leaves.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Op(_, children) => 1 + children.iter().map(Expr::node_count).sum::<usize>(),
            _ => 1,
        }
    }

    /// Number of constant slots (slots are dense, so this is `max slot + 1`).
    pub fn constant_count(&self) -> usize {
        let mut max_slot = None;
        self.visit(&mut |e| {
            if let Expr::Const { slot, .. } = e {
                max_slot = Some(max_slot.map_or(*slot, |m: usize| m.max(*slot)));
            }
        });
        max_slot.map_or(0, |m| m + 1)
    }

    /// Constant values indexed by slot id.
    pub fn constant_values(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.constant_count()];
        self.visit(&mut |e| {
            if let Expr::Const { value, slot } = e {
                out[*slot] = *value;
            }
        });
        out
    }

    /// Write `consts[slot]` back into each constant node.
    pub fn bind_constants(&mut self, consts: &[f64]) {
        self.visit_mut(&mut |e| {
            if let Expr::Const { value, slot } = e {
                if let Some(v) = consts.get(*slot) {
                    *value = *v;
                }
            }
        });
    }

    /// Highest band index referenced, or 0 if the tree is constant-only.
    pub fn max_band(&self) -> u8 {
        let mut max = 0;
        self.visit(&mut |e| {
            if let Expr::Band(b) = e {
                max = max.max(*b);
            }
        });
        max
    }

    /// Re-assign constant slot ids densely in left-to-right traversal order.
    pub fn renumber_slots(&mut self) {
        let mut next = 0;
        self.visit_mut(&mut |e| {
            if let Expr::Const { slot, .. } = e {
                *slot = next;
                next += 1;
            }
        });
    }

    fn visit<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        if let Expr::Op(_, children) = self {
            for c in children {
                c.visit(f);
            }
        }
    }

    fn visit_mut<F: FnMut(&mut Expr)>(&mut self, f: &mut F) {
        f(self);
        if let Expr::Op(_, children) = self {
            for c in children {
                c.visit_mut(f);
            }
        }
    }

    /// Canonical fully-parenthesized infix form; `parse` inverts it exactly.
    pub fn print(&self) -> String {
        alloc::format!("{self}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Band(b) => write!(f, "B{b}"),
            Expr::Const { value, .. } => write!(f, "{value}"),
            Expr::Op(op, children) => match op.arity() {
                1 => write!(f, "{}({})", op.symbol(), children[0]),
                _ => write!(f, "({} {} {})", children[0], op.symbol(), children[1]),
            },
        }
    }
}

/// Errors from evaluating an expression against a raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    /// Band index not present in the raster.
    MissingBand { band: u8, available: u8 },
    /// Constant vector length does not match the slot count.
    ConstantCount { expected: usize, got: usize },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::MissingBand { band, available } => {
                write!(f, "band B{band} not present (raster has {available} bands)")
            }
            EvalError::ConstantCount { expected, got } => {
                write!(f, "expected {expected} constants, got {got}")
            }
        }
    }
}

#[allow(unused)]
type BoxExpr = Box<Expr>;

#[cfg(test)]
mod tests {
    use super::*;

    fn table3_h() -> Expr {
        parse("((B2 - B1) + 0.76) * 76.58").unwrap()
    }

    #[test]
    fn node_count_matches_known_formulas() {
        assert_eq!(table3_h().node_count(), 7);
        let agb = parse(
            "(B3 * 14493.77) + (42412.93 - (-1171.04 / ((B4 + 0.54) + (B3 * (B4 - 0.93)))))",
        )
        .unwrap();
        assert_eq!(agb.node_count(), 17);
        let cs = parse("((B3 + 2.65) * 8437.08) - ((B1 / (0.02 - B3)) / (B4 + 0.53))").unwrap();
        assert_eq!(cs.node_count(), 15);
    }

    #[test]
    fn node_count_is_recursive_sum() {
        let e = table3_h();
        if let Expr::Op(_, children) = &e {
            let child_sum: usize = children.iter().map(Expr::node_count).sum();
            assert_eq!(e.node_count(), 1 + child_sum);
        } else {
            panic!("expected operator root");
        }
    }

    #[test]
    fn constant_slots_left_to_right() {
        let e = table3_h();
        assert_eq!(e.constant_count(), 2);
        assert_eq!(e.constant_values(), alloc::vec![0.76, 76.58]);
    }

    #[test]
    fn bind_constants_round_trip() {
        let mut e = table3_h();
        e.bind_constants(&[1.5, -2.0]);
        assert_eq!(e.constant_values(), alloc::vec![1.5, -2.0]);
    }

    #[test]
    fn display_single_leaf() {
        assert_eq!(Expr::Band(1).print(), "B1");
        let e = parse("(((B2 - B1) + 0.76) * 76.58)").unwrap();
        assert_eq!(e.print(), "(((B2 - B1) + 0.76) * 76.58)");
    }
}
