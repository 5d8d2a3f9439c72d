//! Protected evaluation and constant-gradient computation.
//!
//! Trees are flattened to a postorder program once per call; per-pixel work
//! is then a linear scan. `grad_constants` runs reverse-mode over that
//! program; `constant_jacobian` runs forward-mode (one dual component per
//! constant slot) for callers that need the full per-pixel Jacobian.

use super::{Expr, EvalError, OpKind};
use crate::math;
use crate::raster::Raster;
use alloc::vec::Vec;

enum FlatNode {
    Band(usize),
    Const(usize),
    Un(OpKind, usize),
    Bin(OpKind, usize, usize),
}

struct Program {
    nodes: Vec<FlatNode>,
}

impl Program {
    fn compile(e: &Expr) -> Program {
        fn walk(e: &Expr, nodes: &mut Vec<FlatNode>) -> usize {
            let node = match e {
                Expr::Band(b) => FlatNode::Band(*b as usize - 1),
                Expr::Const { slot, .. } => FlatNode::Const(*slot),
                Expr::Op(op, children) => match children.len() {
                    1 => FlatNode::Un(*op, walk(&children[0], nodes)),
                    _ => {
                        let l = walk(&children[0], nodes);
                        let r = walk(&children[1], nodes);
                        FlatNode::Bin(*op, l, r)
                    }
                },
            };
            nodes.push(node);
            nodes.len() - 1
        }
        let mut nodes = Vec::new();
        walk(e, &mut nodes);
        Program { nodes }
    }

    fn forward(&self, bands: &[f64], consts: &[f64], vals: &mut Vec<f64>) -> f64 {
        vals.clear();
        for node in &self.nodes {
            let v = match node {
                FlatNode::Band(b) => bands[*b],
                FlatNode::Const(s) => consts[*s],
                FlatNode::Un(op, a) => apply_unary(*op, vals[*a]),
                FlatNode::Bin(op, a, b) => apply_binary(*op, vals[*a], vals[*b]),
            };
            vals.push(v);
        }
        *vals.last().unwrap()
    }
}

fn apply_unary(op: OpKind, a: f64) -> f64 {
    match op {
        OpKind::Exp => math::protected_exp(a),
        OpKind::Log => math::protected_log(a),
        _ => unreachable!("unary op"),
    }
}

fn apply_binary(op: OpKind, a: f64, b: f64) -> f64 {
    match op {
        OpKind::Add => a + b,
        OpKind::Sub => a - b,
        OpKind::Mul => a * b,
        OpKind::Div => math::protected_div(a, b),
        _ => unreachable!("binary op"),
    }
}

fn check(e: &Expr, r_bands: usize, consts: &[f64]) -> Result<(), EvalError> {
    let needed = e.max_band();
    if needed as usize > r_bands {
        return Err(EvalError::MissingBand {
            band: needed,
            available: r_bands as u8,
        });
    }
    let slots = e.constant_count();
    if consts.len() != slots {
        return Err(EvalError::ConstantCount {
            expected: slots,
            got: consts.len(),
        });
    }
    Ok(())
}

/// Evaluate at a single pixel given its band values.
pub fn eval_pixel(e: &Expr, bands: &[f64], consts: &[f64]) -> Result<f64, EvalError> {
    check(e, bands.len(), consts)?;
    let prog = Program::compile(e);
    let mut vals = Vec::with_capacity(prog.nodes.len());
    Ok(prog.forward(bands, consts, &mut vals))
}

/// Pixelwise evaluation over a raster; the output is finite everywhere by
/// the protected-operator guarantees.
pub fn eval(e: &Expr, r: &Raster, consts: &[f64]) -> Result<Vec<f64>, EvalError> {
    check(e, r.bands(), consts)?;
    let prog = Program::compile(e);
    let npix = r.pixels();
    let nb = r.bands();
    let mut out = Vec::with_capacity(npix);
    let mut vals = Vec::with_capacity(prog.nodes.len());
    let mut bands = alloc::vec![0.0; nb];
    for p in 0..npix {
        for (b, slot) in bands.iter_mut().enumerate() {
            *slot = r.band(b)[p] as f64;
        }
        out.push(prog.forward(&bands, consts, &mut vals));
    }
    Ok(out)
}

/// Reverse-mode gradient of the mean-squared pixel error w.r.t. each
/// constant slot, using the protected-operator derivatives.
pub fn grad_constants(
    e: &Expr,
    r: &Raster,
    consts: &[f64],
    target: &[f64],
) -> Result<Vec<f64>, EvalError> {
    check(e, r.bands(), consts)?;
    let prog = Program::compile(e);
    let npix = r.pixels();
    let nb = r.bands();
    let n = prog.nodes.len();
    let mut grad = alloc::vec![0.0; consts.len()];
    let mut vals = Vec::with_capacity(n);
    let mut adj = alloc::vec![0.0; n];
    let mut bands = alloc::vec![0.0; nb];
    for p in 0..npix {
        for (b, slot) in bands.iter_mut().enumerate() {
            *slot = r.band(b)[p] as f64;
        }
        let pred = prog.forward(&bands, consts, &mut vals);
        // d/dpred of (1/N) sum (pred - target)^2
        adj.iter_mut().for_each(|a| *a = 0.0);
        adj[n - 1] = 2.0 * (pred - target[p]) / npix as f64;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            match &prog.nodes[i] {
                FlatNode::Band(_) => {}
                FlatNode::Const(s) => grad[*s] += a,
                FlatNode::Un(op, x) => {
                    let d = match op {
                        OpKind::Exp => math::protected_exp_grad(vals[*x]),
                        OpKind::Log => math::protected_log_grad(vals[*x]),
                        _ => unreachable!(),
                    };
                    adj[*x] += a * d;
                }
                FlatNode::Bin(op, x, y) => {
                    let (dx, dy) = match op {
                        OpKind::Add => (1.0, 1.0),
                        OpKind::Sub => (1.0, -1.0),
                        OpKind::Mul => (vals[*y], vals[*x]),
                        OpKind::Div => math::protected_div_grad(vals[*x], vals[*y]),
                        _ => unreachable!(),
                    };
                    adj[*x] += a * dx;
                    adj[*y] += a * dy;
                }
            }
        }
    }
    Ok(grad)
}

/// Forward-mode per-pixel Jacobian of the prediction w.r.t. constants.
///
/// Returns `(pred, jac)` where `jac[p * n_consts + s] = d pred_p / d c_s`.
pub fn constant_jacobian(
    e: &Expr,
    r: &Raster,
    consts: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    check(e, r.bands(), consts)?;
    let prog = Program::compile(e);
    let npix = r.pixels();
    let nb = r.bands();
    let nc = consts.len();
    let n = prog.nodes.len();
    let mut pred = Vec::with_capacity(npix);
    let mut jac = alloc::vec![0.0; npix * nc];
    let mut vals = alloc::vec![0.0; n];
    let mut duals = alloc::vec![0.0; n * nc.max(1)];
    let mut bands = alloc::vec![0.0; nb];
    for p in 0..npix {
        for (b, slot) in bands.iter_mut().enumerate() {
            *slot = r.band(b)[p] as f64;
        }
        for (i, node) in prog.nodes.iter().enumerate() {
            let (v, row) = match node {
                FlatNode::Band(b) => (bands[*b], None),
                FlatNode::Const(s) => {
                    let mut row = alloc::vec![0.0; nc];
                    row[*s] = 1.0;
                    (consts[*s], Some(row))
                }
                FlatNode::Un(op, x) => {
                    let d = match op {
                        OpKind::Exp => math::protected_exp_grad(vals[*x]),
                        OpKind::Log => math::protected_log_grad(vals[*x]),
                        _ => unreachable!(),
                    };
                    let row = (0..nc).map(|s| d * duals[*x * nc + s]).collect();
                    (apply_unary(*op, vals[*x]), Some(row))
                }
                FlatNode::Bin(op, x, y) => {
                    let (dx, dy) = match op {
                        OpKind::Add => (1.0, 1.0),
                        OpKind::Sub => (1.0, -1.0),
                        OpKind::Mul => (vals[*y], vals[*x]),
                        OpKind::Div => math::protected_div_grad(vals[*x], vals[*y]),
                        _ => unreachable!(),
                    };
                    let row = (0..nc)
                        .map(|s| dx * duals[*x * nc + s] + dy * duals[*y * nc + s])
                        .collect();
                    (apply_binary(*op, vals[*x], vals[*y]), Some(row))
                }
            };
            vals[i] = v;
            if nc > 0 {
                match row {
                    Some(row) => duals[i * nc..(i + 1) * nc].copy_from_slice(&row),
                    None => duals[i * nc..(i + 1) * nc].iter_mut().for_each(|d| *d = 0.0),
                }
            }
        }
        pred.push(vals[n - 1]);
        if nc > 0 {
            jac[p * nc..(p + 1) * nc].copy_from_slice(&duals[(n - 1) * nc..n * nc]);
        }
    }
    Ok((pred, jac))
}

/// Smallest distance of any guard argument to its threshold over the whole
/// raster: `|b|` vs `EPS_DIV` for division, `|a|` vs `EPS_LOG` for log,
/// `EXP_MAX - |a|` for exp. Finite-difference checks use this to stay away
/// from the protected-operator kinks.
pub fn guard_margin(e: &Expr, r: &Raster, consts: &[f64]) -> Result<f64, EvalError> {
    check(e, r.bands(), consts)?;
    let prog = Program::compile(e);
    let mut margin = f64::INFINITY;
    let mut vals = Vec::with_capacity(prog.nodes.len());
    let mut bands = alloc::vec![0.0; r.bands()];
    for p in 0..r.pixels() {
        for (b, slot) in bands.iter_mut().enumerate() {
            *slot = r.band(b)[p] as f64;
        }
        prog.forward(&bands, consts, &mut vals);
        for node in &prog.nodes {
            match node {
                FlatNode::Bin(OpKind::Div, _, y) => {
                    margin = margin.min((math::abs(vals[*y]) - math::EPS_DIV).abs());
                }
                FlatNode::Un(OpKind::Log, x) => {
                    margin = margin.min((math::abs(vals[*x]) - math::EPS_LOG).abs());
                }
                FlatNode::Un(OpKind::Exp, x) => {
                    margin = margin.min(math::EXP_MAX - math::abs(vals[*x]));
                }
                _ => {}
            }
        }
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;
    use crate::raster::Raster;
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;

    fn one_pixel(values: &[f32]) -> Raster {
        let names = (1..=values.len()).map(|i| alloc::format!("B{i}")).collect();
        // 1x1 rasters are below the synth minimum but fine as containers
        Raster::new(1, 1, names, values.to_vec()).unwrap()
    }

    #[test]
    fn ndvi_pixel_value() {
        let e = parse("(B4 - B3) / (B4 + B3)").unwrap();
        let r = one_pixel(&[0.0, 0.0, 0.2, 0.6]);
        let out = eval(&e, &r, &[]).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn guarded_division() {
        let e = parse("B1 / B2").unwrap();
        let r = one_pixel(&[1.0, 0.0]);
        let out = eval(&e, &r, &[]).unwrap();
        assert_eq!(out[0], 1e6);
    }

    #[test]
    fn table3_h_pixel() {
        let e = parse("((B2 - B1) + 0.76) * 76.58").unwrap();
        let r = one_pixel(&[0.10, 0.30]);
        let out = eval(&e, &r, &e.constant_values()).unwrap();
        assert!((out[0] - 73.5168).abs() < 1e-4, "got {}", out[0]);
    }

    #[test]
    fn missing_band_and_const_mismatch() {
        let e = parse("B4 + 1.0").unwrap();
        let r = one_pixel(&[0.5, 0.5]);
        assert!(matches!(
            eval(&e, &r, &[1.0]),
            Err(EvalError::MissingBand { band: 4, .. })
        ));
        let r4 = one_pixel(&[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(
            eval(&e, &r4, &[]),
            Err(EvalError::ConstantCount { expected: 1, got: 0 })
        ));
    }

    #[test]
    fn gradient_at_optimum_is_zero() {
        let mut e = parse("1.0").unwrap();
        e.bind_constants(&[3.0]);
        let r = one_pixel(&[0.0]);
        let g = grad_constants(&e, &r, &[3.0], &[3.0]).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn gradient_scalar_quadratic() {
        // e = CONST, target 3, c = 5: d/dc (c-3)^2 = 4
        let e = parse("1.0").unwrap();
        let r = one_pixel(&[0.0]);
        let g = grad_constants(&e, &r, &[5.0], &[3.0]).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-12);
    }

    fn finite_diff_grad(e: &Expr, r: &Raster, consts: &[f64], target: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mse = |c: &[f64]| {
            let pred = eval(e, r, c).unwrap();
            pred.iter()
                .zip(target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / target.len() as f64
        };
        (0..consts.len())
            .map(|i| {
                let mut up = consts.to_vec();
                up[i] += h;
                let mut dn = consts.to_vec();
                dn[i] -= h;
                (mse(&up) - mse(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences_random() {
        use crate::expr::random_expr;
        use crate::raster::synth_scene;
        let mut checked = 0;
        let mut seed = 0u64;
        while checked < 100 {
            seed += 1;
            let mut e = random_expr(seed, 4, 4);
            if e.constant_count() == 0 {
                continue;
            }
            let r = synth_scene(seed, 8, 8, 4, 1, 0.1, 0.9).unwrap();
            let consts: Vec<f64> = (0..e.constant_count())
                .map(|i| 0.5 + 0.37 * (i as f64 + 1.0))
                .collect();
            e.bind_constants(&consts);
            // stay away from the protected-operator kinks
            if guard_margin(&e, &r, &consts).unwrap() < 1e-3 {
                continue;
            }
            // a smooth nearby target keeps errors moderate
            let target: Vec<f64> = eval(&e, &r, &consts)
                .unwrap()
                .iter()
                .map(|v| v + 0.25)
                .collect();
            let g = grad_constants(&e, &r, &consts, &target).unwrap();
            let fd = finite_diff_grad(&e, &r, &consts, &target);
            for (a, b) in g.iter().zip(&fd) {
                let denom = a.abs().max(b.abs()).max(1.0);
                assert!(
                    (a - b).abs() / denom <= 1e-4,
                    "seed {seed}: analytic {a} vs finite-diff {b}"
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn jacobian_matches_reverse_mode() {
        let mut e = parse("((B2 - B1) + 1.0) * 2.0").unwrap();
        e.bind_constants(&[0.76, 76.58]);
        let r = crate::raster::synth_scene(3, 8, 8, 2, 1, 0.1, 0.9).unwrap();
        let consts = [0.7, 70.0];
        let target = alloc::vec![10.0; 64];
        let (pred, jac) = constant_jacobian(&e, &r, &consts).unwrap();
        // assemble MSE gradient from the jacobian and compare
        let n = pred.len() as f64;
        let mut g = [0.0; 2];
        for p in 0..pred.len() {
            let err = 2.0 * (pred[p] - target[p]) / n;
            for s in 0..2 {
                g[s] += err * jac[p * 2 + s];
            }
        }
        let rg = grad_constants(&e, &r, &consts, &target).unwrap();
        for s in 0..2 {
            assert!((g[s] - rg[s]).abs() < 1e-9 * rg[s].abs().max(1.0));
        }
    }

    #[test]
    fn eval_is_always_finite() {
        use crate::expr::random_expr;
        use crate::raster::synth_scene;
        for seed in 0..200u64 {
            let mut e = random_expr(seed, 6, 4);
            let consts: Vec<f64> = (0..e.constant_count()).map(|i| (i as f64) - 1.5).collect();
            e.bind_constants(&consts);
            let r = synth_scene(seed, 8, 8, 4, 0, -5.0, 5.0).unwrap();
            let out = eval(&e, &r, &consts).unwrap();
            assert!(out.iter().all(|v| v.is_finite()), "seed {seed} {}", e.to_string());
        }
    }
}
