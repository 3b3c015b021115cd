//! The common/different-mask fusion module and the three baseline fusion
//! mechanisms (addition, concatenation, cross-attention).
//!
//! Given appearance and motion feature maps, the module derives per-branch
//! attention maps via a two-way softmax over squeeze-excitation outputs,
//! extracts a "common" mask as the spatially min-max-normalized elementwise
//! minimum of the two maps, takes its complement as the "different" mask,
//! and splits the features into a common stream and two refined branches.

use alloc::format;

use crate::error::{Result, TensorError};
use crate::nn::{Conv2d, Ctx, ParamBank, SqueezeExcite};
use crate::ops::fused::pairwise_softmax;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::Var;

/// Default epsilon guarding the degenerate (constant) normalization slice.
pub const C2_EPSILON: f64 = 1e-6;

/// Where two streams are fused in the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionLocation {
    /// Raw-image channel concatenation before the stem.
    Input,
    /// After Stage1.
    Middle,
    /// After Stage3, before the shared Stage4.
    High,
}

/// How two streams are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMechanism {
    Addition,
    Concatenation,
    CrossAttention,
    C2Fusion,
}

/// Declarative fusion choice for a model variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionSpec {
    pub location: FusionLocation,
    pub mechanism: FusionMechanism,
}

impl FusionSpec {
    /// Raw images have heterogeneous channel counts, so the only mechanism
    /// defined at the input location is concatenation.
    pub fn validate(&self) -> Result<()> {
        if self.location == FusionLocation::Input
            && self.mechanism != FusionMechanism::Concatenation
        {
            return Err(TensorError::Config(format!(
                "input-level fusion admits only concatenation, got {:?}",
                self.mechanism
            )));
        }
        Ok(())
    }
}

/// The four attention maps produced for one fused frame.
pub struct AttentionMasks<'t, T: Scalar> {
    pub m_ap: Var<'t, T>,
    pub m_mo: Var<'t, T>,
    pub m_co: Var<'t, T>,
    pub m_di: Var<'t, T>,
}

/// Branch attention maps: a two-way softmax over the squeeze-excitation
/// outputs of the two branches. The maps sum to one elementwise.
pub fn attention_maps<'t, T: Scalar>(
    ctx: &Ctx<'t, '_, T>,
    f_ap: Var<'t, T>,
    f_mo: Var<'t, T>,
    e_ap: &SqueezeExcite,
    e_mo: &SqueezeExcite,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    if f_ap.shape() != f_mo.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "attention_maps expects matching shapes, got {:?} vs {:?}",
            f_ap.shape(),
            f_mo.shape()
        )));
    }
    let ex_ap = e_ap.forward(ctx, f_ap)?;
    let ex_mo = e_mo.forward(ctx, f_mo)?;
    pairwise_softmax(ex_ap, ex_mo)
}

/// Common and different masks: the common mask is the spatially
/// min-max-normalized elementwise minimum of the branch maps; the
/// different mask is its exact complement.
pub fn common_mask<'t, T: Scalar>(
    m_ap: Var<'t, T>,
    m_mo: Var<'t, T>,
    epsilon: f64,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let m_co = m_ap.emin(m_mo)?.minmax_normalize_spatial(epsilon)?;
    let m_di = m_co.neg()?.add_scalar(1.0)?;
    Ok((m_co, m_di))
}

/// Splits branch features into the common-stream seed and the two refined
/// branches:
/// `f'_co = ((f_ap + f_mo)/2) * m_co`, `f'_x = f_x * m_x * m_di`.
pub fn c2_split<'t, T: Scalar>(
    f_ap: Var<'t, T>,
    f_mo: Var<'t, T>,
    masks: &AttentionMasks<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
    if f_ap.shape() != f_mo.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "c2_split expects matching shapes, got {:?} vs {:?}",
            f_ap.shape(),
            f_mo.shape()
        )));
    }
    let f_co = f_ap.add(f_mo)?.mul_scalar(0.5)?.mul(masks.m_co)?;
    let fp_ap = f_ap.mul(masks.m_ap)?.mul(masks.m_di)?;
    let fp_mo = f_mo.mul(masks.m_mo)?.mul(masks.m_di)?;
    Ok((fp_ap, fp_mo, f_co))
}

/// The full common/different fusion module with its two squeeze-excitation
/// blocks and the ablation toggles.
pub struct C2Module {
    pub se_ap: SqueezeExcite,
    pub se_mo: SqueezeExcite,
    pub epsilon: f64,
    /// When false, the common stream receives the plain branch average
    /// without the common-mask weighting.
    pub use_m_co: bool,
    /// When false, branch features keep `f * m` without the complement
    /// factor.
    pub use_m_di: bool,
}

impl C2Module {
    pub fn new<T: Scalar>(
        bank: &mut ParamBank<T>,
        name: &str,
        channels: usize,
        se_rate: usize,
        use_m_co: bool,
        use_m_di: bool,
        rng: &mut Rng,
    ) -> Self {
        C2Module {
            se_ap: SqueezeExcite::new(bank, &format!("{name}.se_ap"), channels, se_rate, rng),
            se_mo: SqueezeExcite::new(bank, &format!("{name}.se_mo"), channels, se_rate, rng),
            epsilon: C2_EPSILON,
            use_m_co,
            use_m_di,
        }
    }

    /// Computes all four masks and returns `(f'_ap, f'_mo, f'_co, masks)`,
    /// honoring the ablation toggles.
    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        f_ap: Var<'t, T>,
        f_mo: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>, AttentionMasks<'t, T>)> {
        let (m_ap, m_mo) = attention_maps(ctx, f_ap, f_mo, &self.se_ap, &self.se_mo)?;
        let (m_co, m_di) = common_mask(m_ap, m_mo, self.epsilon)?;
        let masks = AttentionMasks {
            m_ap,
            m_mo,
            m_co,
            m_di,
        };
        let mean = f_ap.add(f_mo)?.mul_scalar(0.5)?;
        let f_co = if self.use_m_co {
            mean.mul(masks.m_co)?
        } else {
            mean
        };
        let mut fp_ap = f_ap.mul(masks.m_ap)?;
        let mut fp_mo = f_mo.mul(masks.m_mo)?;
        if self.use_m_di {
            fp_ap = fp_ap.mul(masks.m_di)?;
            fp_mo = fp_mo.mul(masks.m_di)?;
        }
        Ok((fp_ap, fp_mo, f_co, masks))
    }
}

/// Parameters for one baseline fusion mechanism.
pub enum FuseOp {
    Addition,
    Concatenation,
    /// 1x1 convolution over the channel concatenation producing two logit
    /// maps; softmaxed over the pair; output is the weighted branch sum.
    CrossAttention(Conv2d),
}

impl FuseOp {
    /// Builds the parameters for a mechanism fusing streams with the given
    /// per-stream channel count.
    pub fn new<T: Scalar>(
        bank: &mut ParamBank<T>,
        name: &str,
        mechanism: FusionMechanism,
        channels: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        match mechanism {
            FusionMechanism::Addition => Ok(FuseOp::Addition),
            FusionMechanism::Concatenation => Ok(FuseOp::Concatenation),
            FusionMechanism::CrossAttention => Ok(FuseOp::CrossAttention(Conv2d::new(
                bank,
                &format!("{name}.attn"),
                2 * channels,
                2,
                1,
                1,
                0,
                rng,
            ))),
            FusionMechanism::C2Fusion => Err(TensorError::Config(
                "the common/different module is built separately, not as a FuseOp".into(),
            )),
        }
    }
}

/// Applies a baseline fusion mechanism to a list of feature maps.
pub fn fuse<'t, T: Scalar>(
    ctx: &Ctx<'t, '_, T>,
    op: &FuseOp,
    features: &[Var<'t, T>],
) -> Result<Var<'t, T>> {
    if features.is_empty() {
        return Err(TensorError::Arity("fuse requires at least one input".into()));
    }
    match op {
        FuseOp::Addition => {
            let mut acc = features[0];
            for f in &features[1..] {
                acc = acc.add(*f)?;
            }
            Ok(acc)
        }
        FuseOp::Concatenation => ctx.tape.concat(features, 1),
        FuseOp::CrossAttention(conv) => {
            if features.len() != 2 {
                return Err(TensorError::Arity(format!(
                    "cross-attention fusion is defined for exactly 2 features, got {}",
                    features.len()
                )));
            }
            let (f1, f2) = (features[0], features[1]);
            if f1.shape() != f2.shape() {
                return Err(TensorError::ShapeMismatch(format!(
                    "cross-attention expects matching shapes, got {:?} vs {:?}",
                    f1.shape(),
                    f2.shape()
                )));
            }
            let cat = ctx.tape.concat(&[f1, f2], 1)?;
            let logits = conv.forward(ctx, cat)?; // [B,2,H,W]
            let a = logits.narrow(1, 0, 1)?;
            let b = logits.narrow(1, 1, 1)?;
            let (w1, w2) = pairwise_softmax(a, b)?;
            f1.mul(w1)?.add(f2.mul(w2)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;
    use alloc::vec;
    use alloc::vec::Vec;

    fn leaf<'t>(tape: &'t Tape<f64>, shape: &[usize], data: &[f64]) -> Var<'t, f64> {
        tape.leaf(Tensor::from_f64_slice(shape, data).unwrap(), false)
    }

    #[test]
    fn input_location_rejects_addition() {
        let spec = FusionSpec {
            location: FusionLocation::Input,
            mechanism: FusionMechanism::Addition,
        };
        assert!(spec.validate().is_err());
        let ok = FusionSpec {
            location: FusionLocation::Input,
            mechanism: FusionMechanism::Concatenation,
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn common_mask_hand_example() {
        // One 1x1x1x3 slice: min = [0.4, 0.2, 0.5], range [0.2, 0.5].
        let tape = Tape::new();
        let m_ap = leaf(&tape, &[1, 1, 1, 3], &[0.6, 0.2, 0.5]);
        let m_mo = leaf(&tape, &[1, 1, 1, 3], &[0.4, 0.8, 0.5]);
        let (m_co, m_di) = common_mask(m_ap, m_mo, C2_EPSILON).unwrap();
        let co = m_co.value();
        let di = m_di.value();
        let expect_co = [2.0 / 3.0, 0.0, 1.0];
        let expect_di = [1.0 / 3.0, 1.0, 0.0];
        for i in 0..3 {
            assert!((co.data()[i] - expect_co[i]).abs() < 1e-4, "m_co[{i}]");
            assert!((di.data()[i] - expect_di[i]).abs() < 1e-4, "m_di[{i}]");
        }
    }

    #[test]
    fn common_mask_degenerate_slice_gives_half() {
        let tape = Tape::new();
        let m = leaf(&tape, &[1, 1, 2, 2], &[0.5; 4]);
        let (m_co, m_di) = common_mask(m, m, C2_EPSILON).unwrap();
        assert!(m_co.value().data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert!(m_di.value().data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn masks_complement_and_range_for_random_maps() {
        let tape = Tape::new();
        let mut rng = Rng::new(7);
        let a: Vec<f64> = (0..2 * 3 * 4 * 5).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = (0..2 * 3 * 4 * 5).map(|_| rng.uniform()).collect();
        let m_ap = leaf(&tape, &[2, 3, 4, 5], &a);
        let m_mo = leaf(&tape, &[2, 3, 4, 5], &b);
        let (m_co, m_di) = common_mask(m_ap, m_mo, C2_EPSILON).unwrap();
        let co = m_co.value();
        let di = m_di.value();
        for i in 0..co.data().len() {
            let c = co.data()[i];
            assert!((0.0..=1.0).contains(&c));
            assert!((c + di.data()[i] - 1.0).abs() < 1e-12);
        }
        // Each non-degenerate (b,c) slice attains both 0 and 1.
        for s in 0..6 {
            let slice = &co.data()[s * 20..(s + 1) * 20];
            assert!(slice.iter().any(|&v| v == 0.0));
            assert!(slice.iter().any(|&v| v == 1.0));
        }
    }

    #[test]
    fn attention_maps_equal_branches_give_half() {
        let mut bank = ParamBank::<f64>::new();
        let mut rng = Rng::new(3);
        let se = SqueezeExcite::new(&mut bank, "se", 4, 2, &mut rng);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, false);
        let data: Vec<f64> = (0..2 * 4 * 3 * 3).map(|_| rng.normal()).collect();
        let f = leaf(&tape, &[2, 4, 3, 3], &data);
        // Same features through the same excitation on both branches.
        let (m_ap, m_mo) = attention_maps(&ctx, f, f, &se, &se).unwrap();
        for (&a, &b) in m_ap.value().data().iter().zip(m_mo.value().data()) {
            assert!((a - 0.5).abs() < 1e-12);
            assert!((b - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_maps_sum_to_one_and_swap_symmetry() {
        let mut bank = ParamBank::<f64>::new();
        let mut rng = Rng::new(9);
        let se_a = SqueezeExcite::new(&mut bank, "a", 4, 2, &mut rng);
        let se_b = SqueezeExcite::new(&mut bank, "b", 4, 2, &mut rng);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, false);
        let da: Vec<f64> = (0..2 * 4 * 3 * 3).map(|_| rng.normal()).collect();
        let db: Vec<f64> = (0..2 * 4 * 3 * 3).map(|_| rng.normal()).collect();
        let f_ap = leaf(&tape, &[2, 4, 3, 3], &da);
        let f_mo = leaf(&tape, &[2, 4, 3, 3], &db);
        let (m_ap, m_mo) = attention_maps(&ctx, f_ap, f_mo, &se_a, &se_b).unwrap();
        for (&a, &b) in m_ap.value().data().iter().zip(m_mo.value().data()) {
            assert!((a + b - 1.0).abs() < 1e-6);
        }
        // Swap the branches: maps must swap and the common mask must be
        // unchanged.
        let (s_ap, s_mo) = attention_maps(&ctx, f_mo, f_ap, &se_b, &se_a).unwrap();
        let (c1, d1) = common_mask(m_ap, m_mo, C2_EPSILON).unwrap();
        let (c2, d2) = common_mask(s_ap, s_mo, C2_EPSILON).unwrap();
        for i in 0..m_ap.value().data().len() {
            assert!((m_ap.value().data()[i] - s_mo.value().data()[i]).abs() < 1e-6);
            assert!((m_mo.value().data()[i] - s_ap.value().data()[i]).abs() < 1e-6);
            assert!((c1.value().data()[i] - c2.value().data()[i]).abs() < 1e-6);
            assert!((d1.value().data()[i] - d2.value().data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn c2_split_hand_example() {
        let tape = Tape::new();
        let shape = [1, 1, 1, 2];
        let f_ap = leaf(&tape, &shape, &[2.0, 4.0]);
        let f_mo = leaf(&tape, &shape, &[4.0, 8.0]);
        let m_co = leaf(&tape, &shape, &[1.0, 0.0]);
        let m_di = m_co.neg().unwrap().add_scalar(1.0).unwrap();
        let half = leaf(&tape, &shape, &[0.5, 0.5]);
        let masks = AttentionMasks {
            m_ap: half,
            m_mo: half,
            m_co,
            m_di,
        };
        let (fp_ap, fp_mo, f_co) = c2_split(f_ap, f_mo, &masks).unwrap();
        assert_eq!(f_co.value().data(), &[3.0, 0.0]);
        // f'_x = f_x * m_x * m_di with m_di = [0, 1].
        assert_eq!(fp_ap.value().data(), &[0.0, 2.0]);
        assert_eq!(fp_mo.value().data(), &[0.0, 4.0]);
    }

    #[test]
    fn c2_split_all_ones_common_mask_zeroes_branches() {
        let tape = Tape::new();
        let shape = [1, 1, 1, 2];
        let f_ap = leaf(&tape, &shape, &[2.0, 4.0]);
        let f_mo = leaf(&tape, &shape, &[4.0, 8.0]);
        let ones = leaf(&tape, &shape, &[1.0, 1.0]);
        let zeros = leaf(&tape, &shape, &[0.0, 0.0]);
        let half = leaf(&tape, &shape, &[0.5, 0.5]);
        let masks = AttentionMasks {
            m_ap: half,
            m_mo: half,
            m_co: ones,
            m_di: zeros,
        };
        let (fp_ap, fp_mo, f_co) = c2_split(f_ap, f_mo, &masks).unwrap();
        assert_eq!(f_co.value().data(), &[3.0, 6.0]);
        assert!(fp_ap.value().data().iter().all(|&v| v == 0.0));
        assert!(fp_mo.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_split_identity() {
        // f'_ap + f_ap*m_ap*m_co = f_ap*m_ap, since m_di = 1 - m_co.
        let tape = Tape::new();
        let mut rng = Rng::new(11);
        let n = 2 * 3 * 4 * 5;
        let fa: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let ma: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let mb: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let f_ap = leaf(&tape, &[2, 3, 4, 5], &fa);
        let f_mo = leaf(&tape, &[2, 3, 4, 5], &fa);
        let m_ap = leaf(&tape, &[2, 3, 4, 5], &ma);
        let m_mo = leaf(&tape, &[2, 3, 4, 5], &mb);
        let (m_co, m_di) = common_mask(m_ap, m_mo, C2_EPSILON).unwrap();
        let masks = AttentionMasks {
            m_ap,
            m_mo,
            m_co,
            m_di,
        };
        let (fp_ap, _, _) = c2_split(f_ap, f_mo, &masks).unwrap();
        let lhs = fp_ap
            .add(f_ap.mul(m_ap).unwrap().mul(m_co).unwrap())
            .unwrap();
        let rhs = f_ap.mul(m_ap).unwrap();
        for (&l, &r) in lhs.value().data().iter().zip(rhs.value().data()) {
            assert!((l - r).abs() < 1e-6);
        }
    }

    #[test]
    fn c2_module_toggles() {
        let mut bank = ParamBank::<f64>::new();
        let mut rng = Rng::new(5);
        let full = C2Module::new(&mut bank, "full", 4, 2, true, true, &mut rng);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, false);
        let da: Vec<f64> = (0..2 * 4 * 3 * 3).map(|_| rng.normal()).collect();
        let db: Vec<f64> = (0..2 * 4 * 3 * 3).map(|_| rng.normal()).collect();
        let f_ap = leaf(&tape, &[2, 4, 3, 3], &da);
        let f_mo = leaf(&tape, &[2, 4, 3, 3], &db);
        let (fp_ap, fp_mo, f_co, masks) = full.forward(&ctx, f_ap, f_mo).unwrap();
        // Full module matches the explicit split.
        let (ea, eo, ec) = c2_split(f_ap, f_mo, &masks).unwrap();
        assert_eq!(fp_ap.value().data(), ea.value().data());
        assert_eq!(fp_mo.value().data(), eo.value().data());
        assert_eq!(f_co.value().data(), ec.value().data());

        // m_co off: common stream is the plain average.
        let off_co = C2Module {
            se_ap: SqueezeExcite {
                w1: full.se_ap.w1,
                w2: full.se_ap.w2,
            },
            se_mo: SqueezeExcite {
                w1: full.se_mo.w1,
                w2: full.se_mo.w2,
            },
            epsilon: C2_EPSILON,
            use_m_co: false,
            use_m_di: true,
        };
        let (_, _, f_co2, _) = off_co.forward(&ctx, f_ap, f_mo).unwrap();
        let mean = f_ap.add(f_mo).unwrap().mul_scalar(0.5).unwrap();
        assert_eq!(f_co2.value().data(), mean.value().data());

        // m_di off: branches keep f * m without the complement factor.
        let off_di = C2Module {
            se_ap: SqueezeExcite {
                w1: full.se_ap.w1,
                w2: full.se_ap.w2,
            },
            se_mo: SqueezeExcite {
                w1: full.se_mo.w1,
                w2: full.se_mo.w2,
            },
            epsilon: C2_EPSILON,
            use_m_co: true,
            use_m_di: false,
        };
        let (fp_ap3, _, _, m3) = off_di.forward(&ctx, f_ap, f_mo).unwrap();
        let expect = f_ap.mul(m3.m_ap).unwrap();
        assert_eq!(fp_ap3.value().data(), expect.value().data());
    }

    #[test]
    fn fuse_addition_and_concat() {
        let mut bank = ParamBank::<f64>::new();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, false);
        let a = leaf(&tape, &[1, 1, 1, 2], &[1.0, 2.0]);
        let b = leaf(&tape, &[1, 1, 1, 2], &[3.0, 4.0]);
        let sum = fuse(&ctx, &FuseOp::Addition, &[a, b]).unwrap();
        assert_eq!(sum.value().data(), &[4.0, 6.0]);
        let cat = fuse(&ctx, &FuseOp::Concatenation, &[a, b]).unwrap();
        assert_eq!(cat.shape(), vec![1, 2, 1, 2]);
        assert_eq!(cat.value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let _ = &mut bank;
    }

    #[test]
    fn fuse_cross_attention_saturated_returns_first_input() {
        let mut bank = ParamBank::<f64>::new();
        let mut rng = Rng::new(1);
        let op = FuseOp::new(
            &mut bank,
            "x",
            FusionMechanism::CrossAttention,
            2,
            &mut rng,
        )
        .unwrap();
        // Force logits (M, -M): first output row all +M, second all -M.
        if let FuseOp::CrossAttention(conv) = &op {
            let w = bank.get_mut(conv.weight);
            let half = w.data().len() / 2;
            for (i, v) in w.data_mut().iter_mut().enumerate() {
                *v = if i < half { 50.0 } else { -50.0 };
            }
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, false);
        // Strictly positive inputs so the logit sum is always large.
        let a = leaf(&tape, &[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&tape, &[1, 2, 1, 2], &[9.0, 9.0, 9.0, 9.0]);
        let out = fuse(&ctx, &op, &[a, b]).unwrap();
        for (o, e) in out.value().data().iter().zip(a.value().data()) {
            assert!((o - e).abs() < 1e-9, "saturated gate should pick f1");
        }
        // Arity check.
        assert!(fuse(&ctx, &op, &[a]).is_err());
    }

    #[test]
    fn c2_pipeline_gradient_matches_finite_differences() {
        use crate::gradcheck::{check, tie_free_tensor};
        let mut bank = ParamBank::<f64>::new();
        let mut rng = Rng::new(21);
        let module = C2Module::new(&mut bank, "m", 4, 2, true, true, &mut rng);
        let mut grid_rng = Rng::new(101);
        let f_ap = tie_free_tensor(&[2, 4, 3, 3], &mut grid_rng);
        let f_mo = tie_free_tensor(&[2, 4, 3, 3], &mut grid_rng);
        let report = check(
            "c2-pipeline",
            &[f_ap, f_mo],
            1e-5,
            1e-4,
            None,
            |tape, vars| {
                let ctx = Ctx::new(tape, &bank, false);
                let (a, o, c, _) = module.forward(&ctx, vars[0], vars[1])?;
                a.square()?
                    .sum_all()?
                    .add(o.square()?.sum_all()?)?
                    .add(c.square()?.sum_all()?)
            },
        )
        .unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }
}
