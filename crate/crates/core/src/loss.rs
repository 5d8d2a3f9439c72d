//! The four training objectives and their weighted combination.
//!
//! - consistency: mean squared distance between encoder features and the
//!   target-MLP features
//! - mse: mean squared pixel/sample error of a fitted expression
//! - ce: token-level cross-entropy of decoder distributions vs a target
//!   skeleton, PAD positions excluded
//! - physics: squared residual of a finite-difference divergence against a
//!   source field

use crate::math;
use alloc::vec::Vec;
use core::fmt;

/// Probability floor applied before `log` in the cross-entropy.
pub const CE_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_con: f64,
    pub lambda_mse: f64,
    pub lambda_ce: f64,
    pub lambda_phy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_con: 0.5,
            lambda_mse: 1.0,
            lambda_ce: 0.5,
            lambda_phy: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.lambda_con, self.lambda_mse, self.lambda_ce, self.lambda_phy];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LossError::BadWeights);
        }
        Ok(())
    }
}

/// A vector field over the grid together with its source term.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsField {
    pub height: usize,
    pub width: usize,
    /// x-component, row-major H*W.
    pub ex: Vec<f64>,
    /// y-component, row-major H*W.
    pub ey: Vec<f64>,
    /// Source grid rho, row-major H*W.
    pub rho: Vec<f64>,
}

impl PhysicsField {
    pub fn new(
        height: usize,
        width: usize,
        ex: Vec<f64>,
        ey: Vec<f64>,
        rho: Vec<f64>,
    ) -> Result<PhysicsField, LossError> {
        let n = height * width;
        if ex.len() != n || ey.len() != n || rho.len() != n {
            return Err(LossError::ShapeMismatch);
        }
        if ex.iter().chain(&ey).chain(&rho).any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite);
        }
        Ok(PhysicsField {
            height,
            width,
            ex,
            ey,
            rho,
        })
    }
}

/// Per-term losses with the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub con: f64,
    pub mse: f64,
    pub ce: f64,
    pub phy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LossError {
    ShapeMismatch,
    Empty,
    GridTooSmall,
    NonFinite,
    BadWeights,
    /// A predicted distribution does not sum to 1 within 1e-6.
    NotNormalized { row: usize },
    /// Target token index outside the vocabulary.
    IndexOutOfRange { row: usize, index: usize },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::ShapeMismatch => write!(f, "shape mismatch"),
            LossError::Empty => write!(f, "empty input"),
            LossError::GridTooSmall => write!(f, "grid must be at least 3x3"),
            LossError::NonFinite => write!(f, "non-finite input"),
            LossError::BadWeights => write!(f, "loss weights must be finite and nonnegative"),
            LossError::NotNormalized { row } => {
                write!(f, "distribution at position {row} does not sum to 1")
            }
            LossError::IndexOutOfRange { row, index } => {
                write!(f, "target index {index} at position {row} out of vocabulary")
            }
        }
    }
}

/// `(1/N) sum_i ||F_i - F_i_target||^2` over N rows of width `dim`.
pub fn consistency_loss(f: &[f64], f_target: &[f64], dim: usize) -> Result<f64, LossError> {
    if f.len() != f_target.len() || dim == 0 || f.len() % dim != 0 {
        return Err(LossError::ShapeMismatch);
    }
    let n = f.len() / dim;
    if n == 0 {
        return Err(LossError::Empty);
    }
    let sq: f64 = f
        .iter()
        .zip(f_target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / n as f64)
}

/// Divergence of a vector field by central differences in the interior and
/// one-sided first-order differences on the boundary; `spacing` is the grid
/// step. x runs along the width axis, y along the height axis.
pub fn divergence(field: &PhysicsField, spacing: f64) -> Result<Vec<f64>, LossError> {
    let (h, w) = (field.height, field.width);
    if h < 3 || w < 3 {
        return Err(LossError::GridTooSmall);
    }
    let at = |g: &[f64], y: usize, x: usize| g[y * w + x];
    let mut out = alloc::vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let dex_dx = if x == 0 {
                at(&field.ex, y, 1) - at(&field.ex, y, 0)
            } else if x == w - 1 {
                at(&field.ex, y, w - 1) - at(&field.ex, y, w - 2)
            } else {
                (at(&field.ex, y, x + 1) - at(&field.ex, y, x - 1)) / 2.0
            };
            let dey_dy = if y == 0 {
                at(&field.ey, 1, x) - at(&field.ey, 0, x)
            } else if y == h - 1 {
                at(&field.ey, h - 1, x) - at(&field.ey, h - 2, x)
            } else {
                (at(&field.ey, y + 1, x) - at(&field.ey, y - 1, x)) / 2.0
            };
            out[y * w + x] = (dex_dx + dey_dy) / spacing;
        }
    }
    Ok(out)
}

/// `sum_k || div(E_k) - rho_k ||^2`, summed over pixels.
pub fn physics_loss(fields: &[PhysicsField], spacing: f64) -> Result<f64, LossError> {
    if fields.is_empty() {
        return Err(LossError::Empty);
    }
    let mut total = 0.0;
    for field in fields {
        let div = divergence(field, spacing)?;
        total += div
            .iter()
            .zip(&field.rho)
            .map(|(d, r)| (d - r) * (d - r))
            .sum::<f64>();
    }
    Ok(total)
}

/// Standard mean squared error.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    if pred.len() != target.len() {
        return Err(LossError::ShapeMismatch);
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Token-level cross-entropy, averaged over non-PAD positions.
///
/// `pred_dists` is `positions x vocab` row-major; `targets` are vocabulary
/// indices; positions where `pad_mask` is false are excluded. Probabilities
/// are floored at [`CE_PROB_FLOOR`] before the log.
pub fn ce_loss(
    pred_dists: &[f64],
    vocab: usize,
    targets: &[usize],
    pad_mask: &[bool],
) -> Result<f64, LossError> {
    if vocab == 0
        || pred_dists.len() != targets.len() * vocab
        || targets.len() != pad_mask.len()
    {
        return Err(LossError::ShapeMismatch);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, (&t, &keep)) in targets.iter().zip(pad_mask).enumerate() {
        let dist = &pred_dists[row * vocab..(row + 1) * vocab];
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(LossError::NotNormalized { row });
        }
        if t >= vocab {
            return Err(LossError::IndexOutOfRange { row, index: t });
        }
        if keep {
            total += -math::ln(dist[t].max(CE_PROB_FLOOR));
            count += 1;
        }
    }
    if count == 0 {
        return Err(LossError::Empty);
    }
    Ok(total / count as f64)
}

/// The four raw loss values prior to weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub con: f64,
    pub mse: f64,
    pub ce: f64,
    pub phy: f64,
}

/// Weighted combination of the four terms.
pub fn total_loss(parts: LossParts, w: &LossWeights) -> Result<LossReport, LossError> {
    w.validate()?;
    let all = [parts.con, parts.mse, parts.ce, parts.phy];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(LossReport {
        con: parts.con,
        mse: parts.mse,
        ce: parts.ce,
        phy: parts.phy,
        total: w.lambda_con * parts.con
            + w.lambda_mse * parts.mse
            + w.lambda_ce * parts.ce
            + w.lambda_phy * parts.phy,
    })
}
