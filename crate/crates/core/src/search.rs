//! Skeleton decoding and constant refinement.
//!
//! [`decode_candidates`] runs beam search over the token vocabulary with a
//! grammar mask, so every emitted sequence is a well-formed prefix traversal
//! that fits within the length budget. [`bfgs_refine`] then fits each
//! skeleton's constant vector by minimizing the weighted data + physics
//! objective with BFGS and an Armijo backtracking line search, restarted from
//! several initial magnitudes. [`select_best`] picks the final formula.

use crate::expr::{from_tokens, Expr, Token, TokenSeq, VOCAB_SIZE};
use crate::loss::{self, LossWeights, PhysicsField, CE_PROB_FLOOR};
use crate::math;
use crate::raster::Raster;
use alloc::vec::Vec;

/// Beam-search settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    /// Number of live hypotheses kept per step.
    pub width: usize,
    /// Maximum sequence length including BOS and EOS.
    pub max_len: usize,
    /// Highest band variable the grammar may emit (1..=8).
    pub band_count: u8,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 8,
            max_len: crate::expr::DEFAULT_MAX_LEN,
            band_count: 4,
        }
    }
}

/// A finished beam hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub seq: TokenSeq,
    /// Sum of log-probabilities of the generated tokens (EOS included).
    pub log_prob: f64,
}

#[derive(Clone)]
struct Beam {
    tokens: Vec<Token>,
    open: isize,
    log_prob: f64,
}

/// True when `tok` may legally extend a prefix with `open` unfilled argument
/// positions and `len` tokens already emitted.
fn token_allowed(tok: Token, open: isize, len: usize, cfg: &BeamConfig) -> bool {
    match tok {
        Token::Pad | Token::Bos => false,
        Token::Eos => open == 0 && len >= 2,
        Token::Band(b) => {
            open > 0 && b >= 1 && b <= cfg.band_count && fits(open + tok.arity_delta(), len, cfg)
        }
        Token::Const | Token::Op(_) => {
            open > 0 && fits(open + tok.arity_delta(), len, cfg)
        }
    }
}

/// After appending a token (new length `len + 1`), the cheapest completion
/// needs `open_after` terminals plus EOS.
fn fits(open_after: isize, len: usize, cfg: &BeamConfig) -> bool {
    len + 1 + open_after as usize + 1 <= cfg.max_len
}

/// Grammar-masked beam search.
///
/// `step` maps a prefix (starting with BOS) to a next-token probability
/// distribution over the fixed vocabulary. Disallowed tokens are pruned
/// before ranking; probabilities are floored at [`CE_PROB_FLOOR`] so a
/// zero-probability legal token still has a finite score. Returns up to
/// `width` finished candidates sorted by descending log-probability, with
/// ties broken toward shorter then lexicographically smaller sequences.
pub fn decode_candidates<F>(mut step: F, cfg: &BeamConfig) -> Vec<Candidate>
where
    F: FnMut(&[Token]) -> Vec<f64>,
{
    assert!(cfg.width > 0, "beam width must be positive");
    assert!(cfg.max_len >= 3, "max_len must allow BOS, one token, EOS");
    assert!(
        (1..=crate::expr::MAX_BANDS).contains(&cfg.band_count),
        "band_count out of range"
    );
    let mut live = alloc::vec![Beam {
        tokens: alloc::vec![Token::Bos],
        open: 1,
        log_prob: 0.0,
    }];
    let mut finished: Vec<Candidate> = Vec::new();

    while !live.is_empty() {
        let mut expansions: Vec<Beam> = Vec::new();
        for beam in &live {
            let dist = step(&beam.tokens);
            assert_eq!(dist.len(), VOCAB_SIZE, "step must return a full vocabulary row");
            for idx in 0..VOCAB_SIZE {
                let tok = Token::from_index(idx).unwrap();
                if !token_allowed(tok, beam.open, beam.tokens.len(), cfg) {
                    continue;
                }
                let lp = beam.log_prob + math::ln(dist[idx].max(CE_PROB_FLOOR));
                let mut tokens = beam.tokens.clone();
                tokens.push(tok);
                expansions.push(Beam {
                    open: beam.open + tok.arity_delta(),
                    tokens,
                    log_prob: lp,
                });
            }
        }
        sort_beams(&mut expansions);
        expansions.truncate(cfg.width);
        live.clear();
        for beam in expansions {
            if beam.tokens.last() == Some(&Token::Eos) {
                let seq = TokenSeq::with_max_len(beam.tokens, cfg.max_len)
                    .expect("grammar mask yields well-formed sequences");
                finished.push(Candidate {
                    seq,
                    log_prob: beam.log_prob,
                });
            } else {
                live.push(beam);
            }
        }
        if finished.len() >= cfg.width {
            break;
        }
    }
    finished.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap()
            .then_with(|| a.seq.len().cmp(&b.seq.len()))
            .then_with(|| a.seq.cmp(&b.seq))
    });
    finished.truncate(cfg.width);
    finished
}

fn sort_beams(beams: &mut [Beam]) {
    beams.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap()
            .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
            .then_with(|| {
                a.tokens
                    .iter()
                    .map(|t| t.index())
                    .cmp(b.tokens.iter().map(|t| t.index()))
            })
    });
}

/// BFGS refinement settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsConfig {
    pub max_iters: usize,
    /// Stop when the gradient infinity-norm drops below this.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Line-search step shrink factor.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Skip the inverse-Hessian update when `y.s` falls below this.
    pub curvature_eps: f64,
    /// Initial values tried for every constant slot; best result wins.
    pub starts: Vec<f64>,
    /// Random start vectors probed (objective only) before refinement.
    pub probes: usize,
    /// How many of the best probes are promoted to full BFGS starts.
    pub probe_starts: usize,
    /// Seed for the probe draw.
    pub start_seed: u64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        BfgsConfig {
            max_iters: 100,
            grad_tol: 1e-10,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            curvature_eps: 1e-10,
            starts: alloc::vec![1.0, 0.1, 10.0],
            probes: 48,
            probe_starts: 3,
            start_seed: 0x5eed,
        }
    }
}

/// Outcome of constant refinement for one skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub expr: Expr,
    pub consts: Vec<f64>,
    /// Weighted objective `lambda_mse * mse + lambda_phy * phy` at the optimum.
    pub objective: f64,
    pub mse: f64,
    pub phy: f64,
    pub iterations: usize,
}

/// First-order spatial gradient of a scalar grid: central differences in the
/// interior, one-sided on the boundary, matching the divergence stencil.
fn spatial_gradient(v: &[f64], h: usize, w: usize, spacing: f64) -> (Vec<f64>, Vec<f64>) {
    let at = |y: usize, x: usize| v[y * w + x];
    let mut gx = alloc::vec![0.0; h * w];
    let mut gy = alloc::vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            gx[y * w + x] = if x == 0 {
                at(y, 1) - at(y, 0)
            } else if x == w - 1 {
                at(y, w - 1) - at(y, w - 2)
            } else {
                (at(y, x + 1) - at(y, x - 1)) / 2.0
            } / spacing;
            gy[y * w + x] = if y == 0 {
                at(1, x) - at(0, x)
            } else if y == h - 1 {
                at(h - 1, x) - at(h - 2, x)
            } else {
                (at(y + 1, x) - at(y - 1, x)) / 2.0
            } / spacing;
        }
    }
    (gx, gy)
}

/// The composed physics operator `A v = div(grad v)`: a discrete Laplacian
/// built from the same first-order stencils the loss uses.
pub fn laplacian(v: &[f64], h: usize, w: usize, spacing: f64) -> Vec<f64> {
    let (gx, gy) = spatial_gradient(v, h, w, spacing);
    let field = PhysicsField {
        height: h,
        width: w,
        ex: gx,
        ey: gy,
        rho: alloc::vec![0.0; h * w],
    };
    loss::divergence(&field, spacing).expect("grid validated by caller")
}

/// Physics residual terms for one image: `sum_p (A pred - A target)_p^2` and
/// its gradient contribution per constant via the per-pixel Jacobian.
fn physics_parts(
    pred: &[f64],
    jac: &[f64],
    target: &[f64],
    h: usize,
    w: usize,
    nc: usize,
    spacing: f64,
) -> (f64, Vec<f64>) {
    let a_pred = laplacian(pred, h, w, spacing);
    let a_target = laplacian(target, h, w, spacing);
    let resid: Vec<f64> = a_pred.iter().zip(&a_target).map(|(p, t)| p - t).collect();
    let value = resid.iter().map(|r| r * r).sum();
    let mut grad = alloc::vec![0.0; nc];
    for s in 0..nc {
        let col: Vec<f64> = (0..pred.len()).map(|p| jac[p * nc + s]).collect();
        let a_col = laplacian(&col, h, w, spacing);
        grad[s] = 2.0 * resid.iter().zip(&a_col).map(|(r, c)| r * c).sum::<f64>();
    }
    (value, grad)
}

/// Grid spacing used by the physics stencils throughout.
pub const PHYSICS_SPACING: f64 = 1.0;

/// Weighted objective and gradient for the refinement problem.
fn objective_and_grad(
    expr: &Expr,
    image: &Raster,
    target: &[f64],
    consts: &[f64],
    weights: &LossWeights,
) -> (f64, f64, f64, Vec<f64>) {
    let nc = consts.len();
    let (h, w) = (image.height(), image.width());
    let (pred, jac) = crate::expr::constant_jacobian(expr, image, consts)
        .expect("skeleton validated before refinement");
    let n = pred.len() as f64;
    let mse: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let mut grad = alloc::vec![0.0; nc];
    for p in 0..pred.len() {
        let err = 2.0 * (pred[p] - target[p]) / n;
        for s in 0..nc {
            grad[s] += weights.lambda_mse * err * jac[p * nc + s];
        }
    }
    let (phy, phy_grad) = if weights.lambda_phy != 0.0 && h >= 3 && w >= 3 {
        physics_parts(&pred, &jac, target, h, w, nc, PHYSICS_SPACING)
    } else {
        (0.0, alloc::vec![0.0; nc])
    };
    for s in 0..nc {
        grad[s] += weights.lambda_phy * phy_grad[s];
    }
    let value = weights.lambda_mse * mse + weights.lambda_phy * phy;
    (value, mse, phy, grad)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(math::abs(*x)))
}

/// Objective value only (no gradient), for cheap start probing.
fn objective_value(
    expr: &Expr,
    image: &Raster,
    target: &[f64],
    consts: &[f64],
    weights: &LossWeights,
) -> f64 {
    let pred = crate::expr::eval(expr, image, consts).expect("skeleton validated");
    let n = pred.len() as f64;
    let mse: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let (h, w) = (image.height(), image.width());
    let phy = if weights.lambda_phy != 0.0 && h >= 3 && w >= 3 {
        let a_pred = laplacian(&pred, h, w, PHYSICS_SPACING);
        let a_target = laplacian(target, h, w, PHYSICS_SPACING);
        a_pred
            .iter()
            .zip(&a_target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum()
    } else {
        0.0
    };
    weights.lambda_mse * mse + weights.lambda_phy * phy
}

/// Seeded random start vectors: per-slot log-uniform magnitude in
/// `[0.1, 10]` with an occasional negative sign.
fn probe_starts(nc: usize, cfg: &BfgsConfig) -> Vec<Vec<f64>> {
    let ln_lo = math::ln(0.1);
    let ln_hi = math::ln(10.0);
    (0..cfg.probes)
        .map(|k| {
            let mut stream = crate::rng::substream(cfg.start_seed, k as u64);
            (0..nc)
                .map(|_| {
                    let mag = math::exp(crate::rng::uniform_in(&mut stream, ln_lo, ln_hi));
                    if crate::rng::uniform(&mut stream) < 0.25 {
                        -mag
                    } else {
                        mag
                    }
                })
                .collect()
        })
        .collect()
}

fn bfgs_from(
    expr: &Expr,
    image: &Raster,
    target: &[f64],
    start: &[f64],
    weights: &LossWeights,
    cfg: &BfgsConfig,
) -> Refined {
    let nc = expr.constant_count();
    let mut x = start.to_vec();
    let (mut f, mut mse, mut phy, mut g) = objective_and_grad(expr, image, target, &x, weights);
    // inverse Hessian approximation, identity initialized
    let mut hinv = alloc::vec![0.0; nc * nc];
    for i in 0..nc {
        hinv[i * nc + i] = 1.0;
    }
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        if inf_norm(&g) < cfg.grad_tol || !f.is_finite() {
            break;
        }
        iterations += 1;
        // d = -Hinv g
        let mut d = alloc::vec![0.0; nc];
        for i in 0..nc {
            for j in 0..nc {
                d[i] -= hinv[i * nc + j] * g[j];
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
        if slope >= 0.0 {
            // Hinv lost positive definiteness; fall back to steepest descent
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        // Armijo backtracking
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let (ft, mset, phyt, gt) = objective_and_grad(expr, image, target, &xt, weights);
            if ft.is_finite() && ft <= f + cfg.armijo_c1 * alpha * slope {
                accepted = Some((xt, ft, mset, phyt, gt));
                break;
            }
            alpha *= cfg.backtrack;
        }
        let Some((xt, ft, mset, phyt, gt)) = accepted else {
            break; // line search failed: stationary for our purposes
        };
        // BFGS inverse update with curvature safeguard
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ys: f64 = yv.iter().zip(&s).map(|(a, b)| a * b).sum();
        if ys > cfg.curvature_eps {
            let rho = 1.0 / ys;
            // Hinv' = (I - rho s y^T) Hinv (I - rho y s^T) + rho s s^T
            let mut hy = alloc::vec![0.0; nc]; // Hinv y
            for i in 0..nc {
                for j in 0..nc {
                    hy[i] += hinv[i * nc + j] * yv[j];
                }
            }
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let mut next = hinv.clone();
            for i in 0..nc {
                for j in 0..nc {
                    next[i * nc + j] += rho * rho * yhy * s[i] * s[j] + rho * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
            hinv = next;
        }
        x = xt;
        f = ft;
        mse = mset;
        phy = phyt;
        g = gt;
    }
    let mut fitted = expr.clone();
    fitted.bind_constants(&x);
    Refined {
        expr: fitted,
        consts: x,
        objective: f,
        mse,
        phy,
        iterations,
    }
}

/// Fit the constants of `expr` to minimize the weighted data + physics
/// objective on one image, trying every start magnitude and keeping the best.
/// Skeletons with no constants are evaluated once without optimization.
pub fn bfgs_refine(
    expr: &Expr,
    image: &Raster,
    target: &[f64],
    weights: &LossWeights,
    cfg: &BfgsConfig,
) -> Refined {
    assert_eq!(
        target.len(),
        image.pixels(),
        "target length must match image pixels"
    );
    if expr.constant_count() == 0 {
        let (f, mse, phy, _) = objective_and_grad(expr, image, target, &[], weights);
        return Refined {
            expr: expr.clone(),
            consts: Vec::new(),
            objective: f,
            mse,
            phy,
            iterations: 0,
        };
    }
    let nc = expr.constant_count();
    let mut starts: Vec<Vec<f64>> = cfg.starts.iter().map(|&s| alloc::vec![s; nc]).collect();
    if cfg.probes > 0 && cfg.probe_starts > 0 {
        let mut probes: Vec<(f64, Vec<f64>)> = probe_starts(nc, cfg)
            .into_iter()
            .map(|p| (objective_value(expr, image, target, &p, weights), p))
            .filter(|(f, _)| f.is_finite())
            .collect();
        probes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        starts.extend(probes.into_iter().take(cfg.probe_starts).map(|(_, p)| p));
    }
    let mut best: Option<Refined> = None;
    for start in &starts {
        let r = bfgs_from(expr, image, target, start, weights, cfg);
        let better = match &best {
            None => true,
            Some(b) => r.objective < b.objective,
        };
        if better {
            best = Some(r);
        }
    }
    best.expect("at least one start value")
}

/// A fully scored candidate ready for selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub seq: TokenSeq,
    pub refined: Refined,
    /// Cross-entropy of the decoder's distributions against this skeleton.
    pub ce: f64,
}

/// Pick the winner by weighted `lambda_mse * mse + lambda_ce * ce +
/// lambda_phy * phy`; ties go to fewer expression nodes, then to the
/// lexicographically smaller token sequence. Returns the winning index.
pub fn select_best(scored: &[Scored], weights: &LossWeights) -> Option<usize> {
    let score = |s: &Scored| {
        weights.lambda_mse * s.refined.mse
            + weights.lambda_ce * s.ce
            + weights.lambda_phy * s.refined.phy
    };
    (0..scored.len()).min_by(|&a, &b| {
        score(&scored[a])
            .partial_cmp(&score(&scored[b]))
            .unwrap()
            .then_with(|| {
                scored[a]
                    .refined
                    .expr
                    .node_count()
                    .cmp(&scored[b].refined.expr.node_count())
            })
            .then_with(|| scored[a].seq.cmp(&scored[b].seq))
    })
}

/// Convenience: decode a sequence straight to a fresh-constant skeleton.
pub fn skeleton_of(seq: &TokenSeq) -> Expr {
    from_tokens(seq)
}
