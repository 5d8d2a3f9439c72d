//! Reference spectral indices and the height-driven biomass/carbon
//! surrogates used as recovery ground truth.
//!
//! Band mapping for 4-band scenes: B1=Blue, B2=Green, B3=Red, B4=NIR.
//! Height-driven tasks (`h`, `agb`, `cs`) use a single synthetic height band
//! addressed as B1.
//!
//! Each oracle is stored as a parsed expression, so `compute_index` and the
//! grammar can never drift apart: the oracle IS the expression.

use crate::expr::{self, Expr, EvalError};
use crate::raster::Raster;
use alloc::vec::Vec;
use core::fmt;

pub const TASKS: [&str; 8] = ["ndvi", "gndvi", "savi", "evi", "ndwi", "h", "agb", "cs"];

#[derive(Debug, Clone)]
pub struct IndexSpec {
    pub name: &'static str,
    /// Number of bands the task's scenes carry.
    pub required_bands: u8,
    pub reference_expr: Expr,
    /// Guaranteed output range for positive reflectances, if bounded.
    pub value_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexError {
    UnknownIndex,
    Eval(EvalError),
}

impl fmt::Display for IndexError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexError::UnknownIndex => write!(f, "unknown index task"),
            IndexError::Eval(e) => write!(f, "{e}"),
        }
    }
}

impl From<EvalError> for IndexError {
    fn from(e: EvalError) -> Self {
        IndexError::Eval(e)
    }
}

fn formula(name: &str) -> Option<(&'static str, u8, Option<(f64, f64)>)> {
    Some(match name {
        "ndvi" => ("(B4 - B3) / (B4 + B3)", 4, Some((-1.0, 1.0))),
        "gndvi" => ("(B4 - B2) / (B4 + B2)", 4, Some((-1.0, 1.0))),
        // soil factor L = 0.5
        "savi" => ("((B4 - B3) * 1.5) / ((B4 + B3) + 0.5)", 4, None),
        "evi" => (
            "((B4 - B3) * 2.5) / (((B4 + (B3 * 6)) - (B1 * 7.5)) + 1)",
            4,
            None,
        ),
        "ndwi" => ("(B2 - B4) / (B2 + B4)", 4, Some((-1.0, 1.0))),
        "h" => ("B1", 1, None),
        // AGB = 0.05 H^2 + 2 H, CS = 0.47 AGB
        "agb" => ("((B1 * B1) * 0.05) + (B1 * 2)", 1, None),
        "cs" => ("(((B1 * B1) * 0.05) + (B1 * 2)) * 0.47", 1, None),
        _ => return None,
    })
}

pub fn index_spec(name: &str) -> Option<IndexSpec> {
    let (text, bands, range) = formula(name)?;
    let expr = expr::parse(text).expect("registry formulas are valid");
    Some(IndexSpec {
        name: TASKS.iter().find(|t| **t == name)?,
        required_bands: bands,
        reference_expr: expr,
        value_range: range,
    })
}

/// Pixelwise index map via the reference expression, protected evaluation.
pub fn compute_index(name: &str, r: &Raster) -> Result<Vec<f64>, IndexError> {
    let spec = index_spec(name).ok_or(IndexError::UnknownIndex)?;
    let consts = spec.reference_expr.constant_values();
    Ok(expr::eval(&spec.reference_expr, r, &consts)?)
}

/// Aboveground-biomass surrogate: `AGB = 0.05 H^2 + 2 H`.
pub fn agb_oracle(h: &[f64]) -> Vec<f64> {
    h.iter().map(|&h| 0.05 * h * h + 2.0 * h).collect()
}

/// Carbon-stock surrogate: `CS = 0.47 AGB`.
pub fn cs_oracle(h: &[f64]) -> Vec<f64> {
    agb_oracle(h).iter().map(|&a| 0.47 * a).collect()
}

/// Natural synthetic band range for a task's scenes.
///
/// EVI uses a narrower, reflectance-realistic range: with independent bands
/// the denominator `B4 + 6 B3 - 7.5 B1 + 1` must stay positive
/// (`7.5 hi < 1 + 7 lo`), otherwise the protected division injects huge
/// outliers into the oracle target.
pub fn default_band_range(task: &str) -> (f64, f64) {
    match task {
        "h" | "agb" | "cs" => (0.0, 30.0),
        "evi" => (0.02, 0.12),
        _ => (0.05, 0.95),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::eval_pixel;
    use crate::raster::synth_scene;

    fn pixel_index(name: &str, bands: &[f64]) -> f64 {
        let spec = index_spec(name).unwrap();
        let consts = spec.reference_expr.constant_values();
        eval_pixel(&spec.reference_expr, bands, &consts).unwrap()
    }

    #[test]
    fn ndvi_pixel() {
        // B1..B4 = Blue, Green, Red, NIR
        let v = pixel_index("ndvi", &[0.1, 0.1, 0.2, 0.6]);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ndwi_symmetric_numerator() {
        let v = pixel_index("ndwi", &[0.1, 0.4, 0.2, 0.4]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn evi_pixel_hand_computed() {
        // EVI = 2.5 (NIR - R) / (NIR + 6R - 7.5B + 1)
        let v = pixel_index("evi", &[0.05, 0.1, 0.1, 0.5]);
        let expected = 2.5 * 0.4 / (0.5 + 0.6 - 0.375 + 1.0);
        assert!((v - expected).abs() < 1e-12);
        assert!((expected - 0.5797101449275363).abs() < 1e-12);
    }

    #[test]
    fn normalized_difference_antisymmetry() {
        let a = pixel_index("ndvi", &[0.1, 0.1, 0.2, 0.6]);
        let b = pixel_index("ndvi", &[0.1, 0.1, 0.6, 0.2]);
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn surrogate_values() {
        assert_eq!(agb_oracle(&[0.0]), [0.0]);
        assert_eq!(cs_oracle(&[0.0]), [0.0]);
        let agb = agb_oracle(&[10.0]);
        assert!((agb[0] - 25.0).abs() < 1e-12);
        let cs = cs_oracle(&[10.0]);
        assert!((cs[0] - 11.75).abs() < 1e-12);
    }

    #[test]
    fn surrogate_expressions_match_oracles() {
        let h = [0.0, 1.0, 7.5, 10.0, 30.0];
        for (task, oracle) in [("agb", agb_oracle(&h)), ("cs", cs_oracle(&h))] {
            for (i, &hv) in h.iter().enumerate() {
                let v = pixel_index(task, &[hv]);
                assert!((v - oracle[i]).abs() < 1e-9, "{task} at H={hv}");
            }
        }
    }

    #[test]
    fn agb_cs_ratio_constant() {
        let h = [1.0, 5.0, 12.0];
        let agb = agb_oracle(&h);
        let cs = cs_oracle(&h);
        for (a, c) in agb.iter().zip(&cs) {
            assert!((a / c - 1.0 / 0.47).abs() < 1e-9);
        }
    }

    #[test]
    fn compute_index_matches_reference_eval() {
        let r = synth_scene(21, 16, 16, 4, 2, 0.05, 0.95).unwrap();
        let map = compute_index("savi", &r).unwrap();
        let spec = index_spec("savi").unwrap();
        let consts = spec.reference_expr.constant_values();
        let direct = crate::expr::eval(&spec.reference_expr, &r, &consts).unwrap();
        assert_eq!(map, direct);
    }

    #[test]
    fn every_task_registered_and_in_grammar() {
        for task in TASKS {
            let spec = index_spec(task).unwrap();
            assert!(spec.reference_expr.max_band() <= spec.required_bands);
            // round-trips through the printer
            let printed = spec.reference_expr.print();
            assert_eq!(crate::expr::parse(&printed).unwrap(), spec.reference_expr);
        }
        assert!(index_spec("thermal").is_none());
    }
}
