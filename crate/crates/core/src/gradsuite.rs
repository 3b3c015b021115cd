//! Named gradient-check suite covering every differentiable op, every
//! network block, the composed fusion module, and a tiny end-to-end
//! three-stream model. Reused by the CLI and the acceptance tests.
//!
//! Weight-side backward paths are exercised by the raw op checks (where
//! weights are probe inputs); block-level checks then probe the activation
//! input, which routes through every op inside the block.

use alloc::vec;
use alloc::vec::Vec;

use crate::c2fusion::{self, C2Module, FuseOp, FusionMechanism};
use crate::error::Result;
use crate::gradcheck::{check, tie_free_tensor, GradCheckReport};
use crate::model::{build, ModelConfig, Variant, IN_H, IN_W};
use crate::nn::{BnNeck, Ctx, ParamBank, ParamKind, ResidualBlock, SeparateFc, SqueezeExcite};
use crate::ops::fused::pairwise_softmax;
use crate::rng::Rng;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Tolerance for individual ops and blocks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end model check.
pub const MODEL_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-5;

fn t(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    tie_free_tensor::<f64>(shape, rng)
}

/// Runs the whole suite and returns one report per named check.
pub fn run_all() -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(0xC0FFEE);
    let mut reports: Vec<GradCheckReport> = Vec::new();

    // --- elementwise binary ops (with broadcasting) ---
    let a = t(&[2, 3, 4], &mut rng);
    let b = t(&[2, 3, 4], &mut rng);
    let bc = t(&[3, 1], &mut rng); // broadcast against [2,3,4]
    for (name, kind) in [("add", 0), ("sub", 1), ("mul", 2), ("emin", 4), ("emax", 5)] {
        reports.push(check(
            name,
            &[a.clone(), b.clone()],
            EPS,
            OP_TOLERANCE,
            None,
            move |_, v| {
                let y = match kind {
                    0 => v[0].add(v[1])?,
                    1 => v[0].sub(v[1])?,
                    2 => v[0].mul(v[1])?,
                    4 => v[0].emin(v[1])?,
                    _ => v[0].emax(v[1])?,
                };
                y.square()?.sum_all()
            },
        )?);
    }
    // div with a denominator bounded away from zero.
    reports.push(check(
        "div",
        &[a.clone(), b.clone()],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| {
            let den = v[1].square()?.add_scalar(0.5)?;
            v[0].div(den)?.sum_all()
        },
    )?);
    reports.push(check(
        "broadcast_mul",
        &[a.clone(), bc],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| v[0].mul(v[1])?.square()?.sum_all(),
    )?);

    // --- elementwise unary ops ---
    reports.push(check(
        "scalar_affine_neg",
        &[a.clone()],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| v[0].mul_scalar(1.5)?.add_scalar(-0.25)?.neg()?.square()?.sum_all(),
    )?);
    reports.push(check("relu", &[a.clone()], EPS, OP_TOLERANCE, None, |_, v| {
        v[0].relu()?.square()?.sum_all()
    })?);
    reports.push(check("sqrt", &[a.clone()], EPS, OP_TOLERANCE, None, |_, v| {
        v[0].square()?.add_scalar(0.1)?.sqrt_elem()?.sum_all()
    })?);
    reports.push(check("sigmoid", &[a.clone()], EPS, OP_TOLERANCE, None, |_, v| {
        v[0].sigmoid_elem()?.square()?.sum_all()
    })?);

    // --- reductions ---
    for (name, which) in [
        ("reduce_sum", 0),
        ("reduce_mean", 1),
        ("reduce_max", 2),
        ("reduce_min", 3),
    ] {
        reports.push(check(name, &[a.clone()], EPS, OP_TOLERANCE, None, move |_, v| {
            let y = match which {
                0 => v[0].reduce_sum(&[1])?,
                1 => v[0].reduce_mean(&[0, 2])?,
                2 => v[0].reduce_max(&[2])?,
                _ => v[0].reduce_min(&[0])?,
            };
            y.square()?.mean_all()
        })?);
    }

    // --- shape ops ---
    reports.push(check(
        "reshape_permute",
        &[a.clone()],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| v[0].reshape(&[6, 4])?.permute(&[1, 0])?.square()?.sum_all(),
    )?);
    reports.push(check("narrow", &[a.clone()], EPS, OP_TOLERANCE, None, |_, v| {
        v[0].narrow(1, 1, 2)?.square()?.sum_all()
    })?);
    reports.push(check(
        "concat",
        &[a.clone(), b.clone()],
        EPS,
        OP_TOLERANCE,
        None,
        |tape, v| tape.concat(&[v[0], v[1]], 2)?.square()?.sum_all(),
    )?);

    // --- linear / conv (weights probed as inputs) ---
    let x2 = t(&[3, 5], &mut rng);
    let w2 = t(&[4, 5], &mut rng);
    reports.push(check("linear", &[x2, w2], EPS, OP_TOLERANCE, None, |_, v| {
        v[0].linear(v[1])?.square()?.sum_all()
    })?);
    let xp = t(&[2, 3, 5], &mut rng);
    let wp = t(&[3, 4, 5], &mut rng);
    reports.push(check(
        "per_part_linear",
        &[xp, wp],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| v[0].per_part_linear(v[1])?.square()?.sum_all(),
    )?);
    let xc = t(&[2, 3, 6, 5], &mut rng);
    let wc = t(&[4, 3, 3, 3], &mut rng);
    reports.push(check(
        "conv2d_stride2_pad1",
        &[xc.clone(), wc],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| v[0].conv2d(v[1], 2, 1)?.square()?.sum_all(),
    )?);
    let w1 = t(&[2, 3, 1, 1], &mut rng);
    reports.push(check(
        "conv2d_1x1",
        &[xc.clone(), w1],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| v[0].conv2d(v[1], 1, 0)?.square()?.sum_all(),
    )?);

    // --- fused ops ---
    let pa = t(&[2, 2, 3, 3], &mut rng);
    let pb = t(&[2, 2, 3, 3], &mut rng);
    reports.push(check(
        "pairwise_softmax",
        &[pa.clone(), pb.clone()],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| {
            let (w1, w2) = pairwise_softmax(v[0], v[1])?;
            w1.square()?.add(w2.square()?)?.sum_all()
        },
    )?);
    reports.push(check(
        "minmax_normalize_spatial",
        &[pa.clone()],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| v[0].minmax_normalize_spatial(1e-6)?.square()?.sum_all(),
    )?);
    let bx = t(&[4, 3, 2, 2], &mut rng);
    let bs = t(&[3], &mut rng);
    let bb = t(&[3], &mut rng);
    reports.push(check(
        "batchnorm_train",
        &[bx, bs, bb],
        EPS,
        OP_TOLERANCE,
        None,
        |_, v| v[0].batchnorm_train(v[1], v[2], 1e-5)?.square()?.sum_all(),
    )?);

    // --- losses ---
    let emb = t(&[6, 2, 3], &mut rng);
    reports.push(check("triplet_loss", &[emb], EPS, OP_TOLERANCE, None, |_, v| {
        v[0].triplet_loss(&[0, 0, 1, 1, 2, 2], 0.3)
    })?);
    let logits = t(&[4, 2, 5], &mut rng);
    reports.push(check("softmax_ce", &[logits], EPS, OP_TOLERANCE, None, |_, v| {
        v[0].softmax_ce(&[1, 0, 4, 2])
    })?);

    // --- blocks under a parameter bank ---
    reports.push(block_check("residual_block", &[2, 3, 4, 4], &mut rng, |bank, rng| {
        let blk = ResidualBlock::new(bank, "rb", 3, 4, 2, rng);
        alloc::boxed::Box::new(move |ctx, x| blk.forward(ctx, x))
    })?);
    reports.push(block_check("squeeze_excite", &[2, 4, 3, 3], &mut rng, |bank, rng| {
        let se = SqueezeExcite::new(bank, "se", 4, 2, rng);
        alloc::boxed::Box::new(move |ctx, x| se.forward(ctx, x))
    })?);
    reports.push(block_check("separate_fc", &[3, 2, 4], &mut rng, |bank, rng| {
        let fc = SeparateFc::new(bank, "fc", 2, 4, 3, rng);
        alloc::boxed::Box::new(move |ctx, x| fc.forward(ctx, x))
    })?);
    reports.push(block_check("bnneck", &[4, 2, 3], &mut rng, |bank, rng| {
        let neck = BnNeck::new(bank, "neck", 2, 3, 5, rng);
        alloc::boxed::Box::new(move |ctx, x| neck.forward(ctx, x).map(|(_, l)| l))
    })?);
    reports.push(block_check("c2_module", &[2, 8, 3, 3], &mut rng, |bank, rng| {
        let c2 = C2Module::new(bank, "c2", 4, 2, true, true, rng);
        alloc::boxed::Box::new(move |ctx, x| {
            let f_ap = x.narrow(1, 0, 4)?;
            let f_mo = x.narrow(1, 4, 4)?;
            let (fa, fm, fc, _) = c2.forward(ctx, f_ap, f_mo)?;
            fa.square()?.add(fm.square()?)?.add(fc.square()?)
        })
    })?);
    reports.push(block_check(
        "cross_attention_fuse",
        &[2, 6, 3, 3],
        &mut rng,
        |bank, rng| {
            let op = FuseOp::new(bank, "fuse", FusionMechanism::CrossAttention, 3, rng)
                .expect("cross-attention construction");
            alloc::boxed::Box::new(move |ctx, x| {
                let f1 = x.narrow(1, 0, 3)?;
                let f2 = x.narrow(1, 3, 3)?;
                c2fusion::fuse(ctx, &op, &[f1, f2])
            })
        },
    )?);

    // --- end-to-end: tiny three-stream model, joint loss wrt inputs ---
    reports.push(end_to_end_check()?);

    Ok(reports)
}

type BlockFn = alloc::boxed::Box<
    dyn for<'t, 'b> Fn(&Ctx<'t, 'b, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
>;

/// Checks a block's gradient with respect to its activation input, with
/// the block's trainable parameters replaced by tie-free values so no
/// max/softmax path sits near a tie.
fn block_check<M>(name: &str, x_shape: &[usize], rng: &mut Rng, make: M) -> Result<GradCheckReport>
where
    M: FnOnce(&mut ParamBank<f64>, &mut Rng) -> BlockFn,
{
    let x = t(x_shape, rng);
    let mut bank = ParamBank::<f64>::new();
    let fwd = make(&mut bank, rng);
    let mut grid = Rng::new(0xA11CE);
    for e in bank.entries.iter_mut() {
        if e.kind != ParamKind::Stat {
            e.value = tie_free_tensor::<f64>(e.value.shape(), &mut grid);
        }
    }
    check(name, &[x], EPS, OP_TOLERANCE, None, move |tape, vars| {
        let ctx = Ctx::new(tape, &bank, true);
        fwd(&ctx, vars[0])?.square()?.sum_all()
    })
}

/// Tiny three-stream model: joint triplet + cross-entropy loss, checked
/// against finite differences on the raw input frames. The chain runs
/// through both stems, Stage1, the fusion module, the three Stage2/3
/// streams, the projection, Stage4, pooling, and both losses.
fn end_to_end_check() -> Result<GradCheckReport> {
    let mut cfg = ModelConfig::toy(Variant::PlusPlus, 3);
    cfg.stem = 2;
    cfg.widths = [2, 3, 4, 4];
    cfg.parts = 2;
    cfg.embed_dim = 3;
    cfg.se_rate = 2;
    let model = build::<f64>(cfg, 21)?;
    let (b, frames) = (4, 1);
    let labels = vec![0usize, 0, 1, 1];
    let mut rng = Rng::new(0xE2E);
    let sil = t(&[b, frames, 1, IN_H, IN_W], &mut rng);
    let par = t(&[b, frames, 1, IN_H, IN_W], &mut rng);
    let flow = t(&[b, frames, 3, IN_H, IN_W], &mut rng);
    check(
        "end_to_end_three_stream",
        &[sil, par, flow],
        1e-4,
        MODEL_TOLERANCE,
        Some((10, 99)),
        move |tape, vars| {
            let ctx = Ctx::new(tape, &model.bank, true);
            fn fold<'t>(v: Var<'t, f64>) -> Result<Var<'t, f64>> {
                let s = v.shape();
                v.reshape(&[s[0] * s[1], s[2], s[3], s[4]])
            }
            let (emb, logits) = model.forward_folded(
                &ctx,
                Some(fold(vars[0])?),
                Some(fold(vars[1])?),
                Some(fold(vars[2])?),
                b,
                frames,
            )?;
            let lt = emb.triplet_loss(&labels, 0.2)?;
            let lc = logits.softmax_ce(&labels)?;
            lt.add(lc)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_suite_passes() {
        let reports = run_all().unwrap();
        assert!(reports.len() >= 25, "suite has {} checks", reports.len());
        for r in &reports {
            assert!(
                r.passed,
                "{} failed: max rel err {} > {}",
                r.name, r.max_rel_err, r.tolerance
            );
        }
    }
}
