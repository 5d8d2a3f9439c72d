//! Black-box tests over the public crate API: parser/printer/token
//! round-trips, protected-evaluation finiteness, and gradient agreement
//! with finite differences, all on seeded random inputs.

use proptest::prelude::*;
use satform_core::expr::{
    self, constant_jacobian, eval, grad_constants, guard_margin, random_expr, to_tokens,
};
use satform_core::raster::synth_scene;

proptest! {
    #[test]
    fn print_parse_roundtrip(seed in any::<u64>(), depth in 1usize..=6) {
        let e = random_expr(seed, depth, 4);
        let printed = e.print();
        let back = expr::parse(&printed).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn token_roundtrip_preserves_skeleton(seed in any::<u64>(), depth in 1usize..=6) {
        let e = random_expr(seed, depth, 4);
        let toks = to_tokens(&e);
        let skel = expr::from_tokens(&toks);
        // the skeleton forgets constant values but keeps the shape
        let skel_toks = to_tokens(&skel);
        prop_assert_eq!(skel_toks.tokens(), toks.tokens());
        prop_assert_eq!(skel.node_count(), e.node_count());
    }

    #[test]
    fn protected_eval_is_always_finite(seed in any::<u64>(), depth in 1usize..=6) {
        let e = random_expr(seed, depth, 4);
        let r = synth_scene(seed ^ 0xabcd, 8, 8, 4, 1, 0.05, 0.95).unwrap();
        let consts = e.constant_values();
        let out = eval(&e, &r, &consts).unwrap();
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }
}

/// Central finite difference of the MSE objective w.r.t. one constant.
fn fd_mse(e: &expr::Expr, r: &satform_core::raster::Raster, consts: &[f64], target: &[f64], slot: usize) -> f64 {
    let h = 1e-5 * consts[slot].abs().max(1.0);
    let mut up = consts.to_vec();
    up[slot] += h;
    let mut dn = consts.to_vec();
    dn[slot] -= h;
    let mse = |c: &[f64]| {
        let pred = eval(e, r, c).unwrap();
        pred.iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / pred.len() as f64
    };
    (mse(&up) - mse(&dn)) / (2.0 * h)
}

#[test]
fn grad_constants_matches_finite_differences() {
    let mut checked = 0usize;
    let mut seed = 0u64;
    while checked < 100 {
        seed += 1;
        let e = random_expr(seed, 4, 4);
        if e.constant_count() == 0 {
            continue;
        }
        let r = synth_scene(seed, 8, 8, 4, 1, 0.05, 0.95).unwrap();
        let consts = e.constant_values();
        // skip cases hugging a guard threshold, where the derivative of the
        // protected form is legitimately non-smooth
        if guard_margin(&e, &r, &consts).unwrap() < 1e-3 {
            continue;
        }
        let truth = random_expr(seed ^ 0x55, 3, 4);
        let target = eval(&truth, &r, &truth.constant_values()).unwrap();
        let g = grad_constants(&e, &r, &consts, &target).unwrap();
        for (slot, &gs) in g.iter().enumerate() {
            let fd = fd_mse(&e, &r, &consts, &target, slot);
            let scale = gs.abs().max(fd.abs()).max(1.0);
            assert!(
                (gs - fd).abs() / scale < 1e-4,
                "seed {seed} slot {slot}: analytic {gs} vs fd {fd}"
            );
        }
        checked += 1;
    }
}

#[test]
fn constant_jacobian_matches_grad_chain() {
    // grad of MSE = (2/N) J^T (pred - target); the two gradient paths agree
    let e = expr::parse("((B2 - B1) + 0.5) * 2.0").unwrap();
    let r = synth_scene(77, 8, 8, 4, 1, 0.05, 0.95).unwrap();
    let consts = e.constant_values();
    let truth = expr::parse("((B2 - B1) + 0.76) * 76.58").unwrap();
    let target = eval(&truth, &r, &truth.constant_values()).unwrap();

    let g = grad_constants(&e, &r, &consts, &target).unwrap();
    let (pred, jac) = constant_jacobian(&e, &r, &consts).unwrap();
    let n = pred.len();
    let nc = consts.len();
    for s in 0..nc {
        let manual: f64 = (0..n)
            .map(|p| 2.0 * (pred[p] - target[p]) * jac[p * nc + s] / n as f64)
            .sum();
        assert!(
            (manual - g[s]).abs() / manual.abs().max(1.0) < 1e-10,
            "slot {s}: {manual} vs {g:?}"
        );
    }
}
