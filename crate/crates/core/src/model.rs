//! The model family: unimodal baselines, two-stream fusion variants, the
//! naive three-modality baseline, and the full three-stream model with the
//! common/different fusion module, plus the gait head (temporal pooling,
//! horizontal pooling, separate FC, batchnorm neck).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::c2fusion::{C2Module, FuseOp, FusionLocation, FusionMechanism, FusionSpec};
use crate::error::{Result, TensorError};
use crate::nn::{BnNeck, Conv2d, ConvBnRelu, Ctx, ParamBank, ResidualBlock, SeparateFc};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Fixed input resolution for every modality.
pub const IN_H: usize = 64;
pub const IN_W: usize = 44;

/// Per-stage strides of the backbone.
const STRIDES: [usize; 4] = [1, 2, 2, 1];

/// Channel counts per modality image.
pub const SIL_CHANNELS: usize = 1;
pub const PAR_CHANNELS: usize = 1;
pub const FLOW_CHANNELS: usize = 3;

/// Which model variant to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Silhouette only.
    Sil,
    /// Parsing only.
    Par,
    /// Flow only.
    Flow,
    /// Silhouette only with every stage width doubled.
    DoubleSil,
    /// Silhouette + parsing, fused per the configured spec.
    SilPar,
    /// Silhouette + flow, fused per the configured spec.
    SilFlow,
    /// Naive three-modality baseline: silhouette+parsing concatenated at
    /// the input, flow fused at high level with cross-attention.
    SilParFlow,
    /// Three-stream model with the common/different fusion module.
    PlusPlus,
}

impl Variant {
    pub fn id(&self) -> &'static str {
        match self {
            Variant::Sil => "s",
            Variant::Par => "p",
            Variant::Flow => "f",
            Variant::DoubleSil => "2s",
            Variant::SilPar => "s+p",
            Variant::SilFlow => "s+f",
            Variant::SilParFlow => "s+p+f",
            Variant::PlusPlus => "++",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Ok(match s {
            "s" => Variant::Sil,
            "p" => Variant::Par,
            "f" => Variant::Flow,
            "2s" => Variant::DoubleSil,
            "s+p" => Variant::SilPar,
            "s+f" => Variant::SilFlow,
            "s+p+f" => Variant::SilParFlow,
            "++" | "plusplus" => Variant::PlusPlus,
            other => {
                return Err(TensorError::Config(format!(
                    "unknown model variant `{other}` (expected s, p, f, 2s, s+p, s+f, s+p+f, ++)"
                )))
            }
        })
    }

    pub fn needs_silhouette(&self) -> bool {
        !matches!(self, Variant::Par | Variant::Flow)
    }

    pub fn needs_parsing(&self) -> bool {
        matches!(
            self,
            Variant::Par | Variant::SilPar | Variant::SilParFlow | Variant::PlusPlus
        )
    }

    pub fn needs_flow(&self) -> bool {
        matches!(
            self,
            Variant::Flow | Variant::SilFlow | Variant::SilParFlow | Variant::PlusPlus
        )
    }
}

/// Declarative description of a model variant.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Stem output width.
    pub stem: usize,
    /// Widths of Stage1..Stage4.
    pub widths: [usize; 4],
    /// Residual blocks per stage.
    pub blocks: [usize; 4],
    /// Fusion spec for the two-stream variants (s+p, s+f).
    pub fusion: FusionSpec,
    /// Mask toggles (three-stream variant only).
    pub use_m_co: bool,
    pub use_m_di: bool,
    /// When set, the three-stream variant additionally sums a projected
    /// channel-concat of all streams into each branch after Stage2.
    pub fuse_after_stage2: bool,
    /// Squeeze-excitation reduction ratio.
    pub se_rate: usize,
    /// Horizontal part count.
    pub parts: usize,
    /// Embedding dimension per part.
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Desk-scale default: widths 16/32/64/128, P=16, D=64.
    pub fn toy(variant: Variant, num_classes: usize) -> Self {
        let (stem, widths) = if variant == Variant::DoubleSil {
            (32, [32, 64, 128, 256])
        } else {
            (16, [16, 32, 64, 128])
        };
        ModelConfig {
            variant,
            stem,
            widths,
            blocks: [1, 1, 1, 1],
            fusion: FusionSpec {
                location: FusionLocation::Middle,
                mechanism: FusionMechanism::Concatenation,
            },
            use_m_co: true,
            use_m_di: true,
            fuse_after_stage2: false,
            se_rate: 16,
            parts: 16,
            embed_dim: 64,
            num_classes,
        }
    }

    /// Feature height after the strided stages.
    pub fn final_height(&self) -> usize {
        IN_H / STRIDES.iter().product::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant != Variant::PlusPlus && !(self.use_m_co && self.use_m_di) {
            return Err(TensorError::Config(
                "mask toggles are only valid for the three-stream (++) variant".into(),
            ));
        }
        let h = self.final_height();
        if self.parts == 0 || h % self.parts != 0 {
            return Err(TensorError::Config(format!(
                "part count {} must divide the final feature height {h}",
                self.parts
            )));
        }
        if matches!(self.variant, Variant::SilPar | Variant::SilFlow) {
            self.fusion.validate()?;
        }
        if self.blocks.iter().any(|&b| b == 0) || self.widths.iter().any(|&w| w == 0) {
            return Err(TensorError::Config(
                "stage widths and block counts must be positive".into(),
            ));
        }
        if self.num_classes == 0 || self.embed_dim == 0 {
            return Err(TensorError::Config(
                "embedding dimension and class count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One backbone stage: a sequence of residual blocks, the first of which
/// carries the stage stride and the channel change.
fn make_stage<T: Scalar>(
    bank: &mut ParamBank<T>,
    name: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    blocks: usize,
    rng: &mut Rng,
) -> Vec<ResidualBlock> {
    (0..blocks)
        .map(|i| {
            let (ci, s) = if i == 0 { (cin, stride) } else { (cout, 1) };
            ResidualBlock::new(bank, &format!("{name}.block{i}"), ci, cout, s, rng)
        })
        .collect()
}

fn run_stage<'t, T: Scalar>(
    ctx: &Ctx<'t, '_, T>,
    stage: &[ResidualBlock],
    mut x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    for block in stage {
        x = block.forward(ctx, x)?;
    }
    Ok(x)
}

/// The wiring of a built model.
enum Arch {
    /// One stream end to end (unimodal variants and input-level fusion).
    Single {
        stem: ConvBnRelu,
        stages: Vec<Vec<ResidualBlock>>,
    },
    /// Two streams fused at a stage boundary, then shared stages.
    Two {
        stem_a: ConvBnRelu,
        stem_b: ConvBnRelu,
        /// Stages run per branch before the fusion point.
        pre_a: Vec<Vec<ResidualBlock>>,
        pre_b: Vec<Vec<ResidualBlock>>,
        fuse: FuseOp,
        /// Stages run on the fused stream.
        post: Vec<Vec<ResidualBlock>>,
    },
    /// Appearance + motion streams, the common/different module after
    /// Stage1 seeding a third stream, three parallel Stage2+Stage3, a 1x1
    /// projection of the channel concat, and a shared Stage4.
    Three {
        stem_ap: ConvBnRelu,
        stem_mo: ConvBnRelu,
        s1_ap: Vec<ResidualBlock>,
        s1_mo: Vec<ResidualBlock>,
        c2: C2Module,
        s2: [Vec<ResidualBlock>; 3],
        s3: [Vec<ResidualBlock>; 3],
        /// Optional post-Stage2 cross-stream injection.
        mid_proj: Option<Conv2d>,
        proj: Conv2d,
        s4: Vec<ResidualBlock>,
    },
}

/// The gait head shared by every variant.
struct Head {
    fc: SeparateFc,
    neck: BnNeck,
}

/// A built model: parameter bank plus wiring.
pub struct Model<T: Scalar> {
    pub bank: ParamBank<T>,
    pub config: ModelConfig,
    arch: Arch,
    head: Head,
}

/// One training/eval batch: per-modality frame stacks shaped
/// `[B,T,C,64,44]`. Only the modalities the variant needs must be present.
pub struct InputBatch<T: Scalar> {
    pub silhouette: Option<Tensor<T>>,
    pub parsing: Option<Tensor<T>>,
    pub flow: Option<Tensor<T>>,
}

/// Deterministically builds a model from its config and seed.
pub fn build<T: Scalar>(config: ModelConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let mut bank = ParamBank::new();
    let w = config.widths;
    let bl = config.blocks;
    let stem_k = 3;

    let arch = match config.variant {
        Variant::Sil | Variant::Par | Variant::Flow | Variant::DoubleSil => {
            let cin = match config.variant {
                Variant::Flow => FLOW_CHANNELS,
                _ => SIL_CHANNELS,
            };
            Arch::Single {
                stem: ConvBnRelu::new(&mut bank, "stem", cin, config.stem, stem_k, 1, 1, true, &mut rng),
                stages: (0..4)
                    .map(|i| {
                        let ci = if i == 0 { config.stem } else { w[i - 1] };
                        make_stage(
                            &mut bank,
                            &format!("stage{}", i + 1),
                            ci,
                            w[i],
                            STRIDES[i],
                            bl[i],
                            &mut rng,
                        )
                    })
                    .collect(),
            }
        }
        Variant::SilPar | Variant::SilFlow => {
            let cb = if config.variant == Variant::SilFlow {
                FLOW_CHANNELS
            } else {
                PAR_CHANNELS
            };
            match config.fusion.location {
                FusionLocation::Input => Arch::Single {
                    stem: ConvBnRelu::new(
                        &mut bank,
                        "stem",
                        SIL_CHANNELS + cb,
                        config.stem,
                        stem_k,
                        1,
                        1,
                        true,
                        &mut rng,
                    ),
                    stages: (0..4)
                        .map(|i| {
                            let ci = if i == 0 { config.stem } else { w[i - 1] };
                            make_stage(
                                &mut bank,
                                &format!("stage{}", i + 1),
                                ci,
                                w[i],
                                STRIDES[i],
                                bl[i],
                                &mut rng,
                            )
                        })
                        .collect(),
                },
                loc => {
                    // Number of per-branch stages before the fusion point.
                    let split = if loc == FusionLocation::Middle { 1 } else { 3 };
                    let stem_a = ConvBnRelu::new(
                        &mut bank, "a.stem", SIL_CHANNELS, config.stem, stem_k, 1, 1, true, &mut rng,
                    );
                    let stem_b = ConvBnRelu::new(
                        &mut bank, "b.stem", cb, config.stem, stem_k, 1, 1, true, &mut rng,
                    );
                    let branch = |bank: &mut ParamBank<T>, prefix: &str, rng: &mut Rng| {
                        (0..split)
                            .map(|i| {
                                let ci = if i == 0 { config.stem } else { w[i - 1] };
                                make_stage(
                                    bank,
                                    &format!("{prefix}.stage{}", i + 1),
                                    ci,
                                    w[i],
                                    STRIDES[i],
                                    bl[i],
                                    rng,
                                )
                            })
                            .collect::<Vec<_>>()
                    };
                    let pre_a = branch(&mut bank, "a", &mut rng);
                    let pre_b = branch(&mut bank, "b", &mut rng);
                    let fused_w = w[split - 1];
                    let fuse =
                        FuseOp::new(&mut bank, "fuse", config.fusion.mechanism, fused_w, &mut rng)?;
                    let fused_c = if config.fusion.mechanism == FusionMechanism::Concatenation {
                        2 * fused_w
                    } else {
                        fused_w
                    };
                    let post = (split..4)
                        .map(|i| {
                            let ci = if i == split { fused_c } else { w[i - 1] };
                            make_stage(
                                &mut bank,
                                &format!("shared.stage{}", i + 1),
                                ci,
                                w[i],
                                STRIDES[i],
                                bl[i],
                                &mut rng,
                            )
                        })
                        .collect();
                    Arch::Two {
                        stem_a,
                        stem_b,
                        pre_a,
                        pre_b,
                        fuse,
                        post,
                    }
                }
            }
        }
        Variant::SilParFlow => build_naive_three(&config, &mut bank, &mut rng)?,
        Variant::PlusPlus => {
            if !config.use_m_co && !config.use_m_di {
                // With both masks disabled the wiring degenerates to the
                // naive three-modality baseline: identical construction
                // sequence, hence identical parameters for a given seed.
                build_naive_three(&config, &mut bank, &mut rng)?
            } else {
                let stem_ap = ConvBnRelu::new(
                    &mut bank,
                    "ap.stem",
                    SIL_CHANNELS + PAR_CHANNELS,
                    config.stem,
                    stem_k,
                    1,
                    1,
                    true,
                    &mut rng,
                );
                let stem_mo = ConvBnRelu::new(
                    &mut bank, "mo.stem", FLOW_CHANNELS, config.stem, stem_k, 1, 1, true, &mut rng,
                );
                let s1_ap =
                    make_stage(&mut bank, "ap.stage1", config.stem, w[0], STRIDES[0], bl[0], &mut rng);
                let s1_mo =
                    make_stage(&mut bank, "mo.stage1", config.stem, w[0], STRIDES[0], bl[0], &mut rng);
                let c2 = C2Module::new(
                    &mut bank,
                    "c2",
                    w[0],
                    config.se_rate,
                    config.use_m_co,
                    config.use_m_di,
                    &mut rng,
                );
                let mk23 = |bank: &mut ParamBank<T>, prefix: &str, stage: usize, rng: &mut Rng| {
                    let i = stage - 1;
                    make_stage(
                        bank,
                        &format!("{prefix}.stage{stage}"),
                        w[i - 1],
                        w[i],
                        STRIDES[i],
                        bl[i],
                        rng,
                    )
                };
                let s2 = [
                    mk23(&mut bank, "ap", 2, &mut rng),
                    mk23(&mut bank, "mo", 2, &mut rng),
                    mk23(&mut bank, "co", 2, &mut rng),
                ];
                let mid_proj = if config.fuse_after_stage2 {
                    Some(Conv2d::new(
                        &mut bank,
                        "midproj",
                        3 * w[1],
                        w[1],
                        1,
                        1,
                        0,
                        &mut rng,
                    ))
                } else {
                    None
                };
                let s3 = [
                    mk23(&mut bank, "ap", 3, &mut rng),
                    mk23(&mut bank, "mo", 3, &mut rng),
                    mk23(&mut bank, "co", 3, &mut rng),
                ];
                let proj = Conv2d::new(&mut bank, "proj", 3 * w[2], w[2], 1, 1, 0, &mut rng);
                let s4 = make_stage(
                    &mut bank, "shared.stage4", w[2], w[3], STRIDES[3], bl[3], &mut rng,
                );
                Arch::Three {
                    stem_ap,
                    stem_mo,
                    s1_ap,
                    s1_mo,
                    c2,
                    s2,
                    s3,
                    mid_proj,
                    proj,
                    s4,
                }
            }
        }
    };

    let head = Head {
        fc: SeparateFc::new(
            &mut bank,
            "head.fc",
            config.parts,
            config.widths[3],
            config.embed_dim,
            &mut rng,
        ),
        neck: BnNeck::new(
            &mut bank,
            "head.neck",
            config.parts,
            config.embed_dim,
            config.num_classes,
            &mut rng,
        ),
    };

    Ok(Model {
        bank,
        config,
        arch,
        head,
    })
}

/// The naive three-modality wiring: silhouette+parsing concatenated at the
/// input into the appearance stream, flow in its own stream, both run
/// through Stage3, cross-attention fusion, shared Stage4.
fn build_naive_three<T: Scalar>(
    config: &ModelConfig,
    bank: &mut ParamBank<T>,
    rng: &mut Rng,
) -> Result<Arch> {
    let w = config.widths;
    let bl = config.blocks;
    let stem_a = ConvBnRelu::new(
        bank,
        "a.stem",
        SIL_CHANNELS + PAR_CHANNELS,
        config.stem,
        3,
        1,
        1,
        true,
        rng,
    );
    let stem_b = ConvBnRelu::new(bank, "b.stem", FLOW_CHANNELS, config.stem, 3, 1, 1, true, rng);
    let branch = |bank: &mut ParamBank<T>, prefix: &str, rng: &mut Rng| {
        (0..3)
            .map(|i| {
                let ci = if i == 0 { config.stem } else { w[i - 1] };
                make_stage(
                    bank,
                    &format!("{prefix}.stage{}", i + 1),
                    ci,
                    w[i],
                    STRIDES[i],
                    bl[i],
                    rng,
                )
            })
            .collect::<Vec<_>>()
    };
    let pre_a = branch(bank, "a", rng);
    let pre_b = branch(bank, "b", rng);
    let fuse = FuseOp::new(bank, "fuse", FusionMechanism::CrossAttention, w[2], rng)?;
    let post = vec![make_stage(
        bank,
        "shared.stage4",
        w[2],
        w[3],
        STRIDES[3],
        bl[3],
        rng,
    )];
    Ok(Arch::Two {
        stem_a,
        stem_b,
        pre_a,
        pre_b,
        fuse,
        post,
    })
}

/// Elementwise max over the frame axis: `[B,T,C,H,W] -> [B,C,H,W]`.
pub fn temporal_pool<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 5 {
        return Err(TensorError::ShapeMismatch(format!(
            "temporal_pool expects [B,T,C,H,W], got {shape:?}"
        )));
    }
    if shape[1] == 0 {
        return Err(TensorError::Batch("temporal_pool over an empty sequence".into()));
    }
    x.reduce_max(&[1])
}

/// Part-based horizontal pooling: split H into `parts` equal strips, take
/// the max over each strip's positions. `[B,C,H,W] -> [B,parts,C]`.
pub fn horizontal_pool<'t, T: Scalar>(x: Var<'t, T>, parts: usize) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(TensorError::ShapeMismatch(format!(
            "horizontal_pool expects [B,C,H,W], got {shape:?}"
        )));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if parts == 0 || h % parts != 0 {
        return Err(TensorError::Dimension(format!(
            "part count {parts} must divide feature height {h}"
        )));
    }
    let hp = h / parts;
    x.reshape(&[b, c, parts, hp, w])?
        .reduce_max(&[3, 4])?
        .permute(&[0, 2, 1])
}

impl<T: Scalar> Model<T> {
    /// Validates one modality tensor and returns (B, T).
    fn check_modality(
        t: Option<&Tensor<T>>,
        name: &str,
        channels: usize,
    ) -> Result<Option<(usize, usize)>> {
        let Some(t) = t else { return Ok(None) };
        let s = t.shape();
        if s.len() != 5 || s[2] != channels || s[3] != IN_H || s[4] != IN_W {
            return Err(TensorError::ShapeMismatch(format!(
                "{name} batch must be [B,T,{channels},{IN_H},{IN_W}], got {s:?}"
            )));
        }
        if s[1] == 0 {
            return Err(TensorError::Batch(format!("{name} batch has zero frames")));
        }
        Ok(Some((s[0], s[1])))
    }

    /// Folds `[B,T,C,H,W]` into `[B*T,C,H,W]` on the tape.
    fn fold<'t>(ctx: &Ctx<'t, '_, T>, t: &Tensor<T>) -> Result<Var<'t, T>> {
        let s = t.shape().to_vec();
        let v = ctx.tape.leaf(t.clone(), false);
        v.reshape(&[s[0] * s[1], s[2], s[3], s[4]])
    }

    /// Runs the model. Returns `(embeddings [B,P,D], logits [B,P,classes])`.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        batch: &InputBatch<T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let v = self.config.variant;
        let sil = if v.needs_silhouette() {
            Some(batch.silhouette.as_ref().ok_or_else(|| {
                TensorError::Config(format!("variant {} requires silhouettes", v.id()))
            })?)
        } else {
            None
        };
        let par = if v.needs_parsing() {
            Some(batch.parsing.as_ref().ok_or_else(|| {
                TensorError::Config(format!("variant {} requires parsing maps", v.id()))
            })?)
        } else {
            None
        };
        let flow = if v.needs_flow() {
            Some(batch.flow.as_ref().ok_or_else(|| {
                TensorError::Config(format!("variant {} requires flow frames", v.id()))
            })?)
        } else {
            None
        };
        let mut bt: Option<(usize, usize)> = None;
        for (t, name, c) in [
            (sil, "silhouette", SIL_CHANNELS),
            (par, "parsing", PAR_CHANNELS),
            (flow, "flow", FLOW_CHANNELS),
        ] {
            if let Some(dims) = Self::check_modality(t, name, c)? {
                match bt {
                    None => bt = Some(dims),
                    Some(prev) if prev != dims => {
                        return Err(TensorError::Batch(format!(
                            "modality batch/frame mismatch: {prev:?} vs {dims:?} ({name})"
                        )))
                    }
                    _ => {}
                }
            }
        }
        let (b, t_len) = bt.ok_or_else(|| TensorError::Batch("empty input batch".into()))?;
        let sil_v = sil.map(|t| Self::fold(ctx, t)).transpose()?;
        let par_v = par.map(|t| Self::fold(ctx, t)).transpose()?;
        let flow_v = flow.map(|t| Self::fold(ctx, t)).transpose()?;
        self.forward_folded(ctx, sil_v, par_v, flow_v, b, t_len)
    }

    /// Runs the model on already-folded `[B*T,C,H,W]` tape vars. Exposed so
    /// the gradient suite can probe the raw inputs; `forward` is the
    /// validated public path.
    pub fn forward_folded<'t>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        sil: Option<Var<'t, T>>,
        par: Option<Var<'t, T>>,
        flow: Option<Var<'t, T>>,
        b: usize,
        t_len: usize,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let v = self.config.variant;
        let feat = match &self.arch {
            Arch::Single { stem, stages } => {
                let x = match v {
                    Variant::Par => par.unwrap(),
                    Variant::Flow => flow.unwrap(),
                    Variant::SilPar => ctx.tape.concat(&[sil.unwrap(), par.unwrap()], 1)?,
                    Variant::SilFlow => ctx.tape.concat(&[sil.unwrap(), flow.unwrap()], 1)?,
                    _ => sil.unwrap(),
                };
                let mut x = stem.forward(ctx, x)?;
                for stage in stages {
                    x = run_stage(ctx, stage, x)?;
                }
                x
            }
            Arch::Two {
                stem_a,
                stem_b,
                pre_a,
                pre_b,
                fuse,
                post,
            } => {
                let xa = match v {
                    Variant::SilParFlow | Variant::PlusPlus => {
                        ctx.tape.concat(&[sil.unwrap(), par.unwrap()], 1)?
                    }
                    _ => sil.unwrap(),
                };
                let xb = match v {
                    Variant::SilPar => par.unwrap(),
                    _ => flow.unwrap(),
                };
                let mut a = stem_a.forward(ctx, xa)?;
                for stage in pre_a {
                    a = run_stage(ctx, stage, a)?;
                }
                let mut b2 = stem_b.forward(ctx, xb)?;
                for stage in pre_b {
                    b2 = run_stage(ctx, stage, b2)?;
                }
                let mut x = crate::c2fusion::fuse(ctx, fuse, &[a, b2])?;
                for stage in post {
                    x = run_stage(ctx, stage, x)?;
                }
                x
            }
            Arch::Three {
                stem_ap,
                stem_mo,
                s1_ap,
                s1_mo,
                c2,
                s2,
                s3,
                mid_proj,
                proj,
                s4,
            } => {
                let xa = ctx.tape.concat(&[sil.unwrap(), par.unwrap()], 1)?;
                let xb = flow.unwrap();
                let f_ap = run_stage(ctx, s1_ap, stem_ap.forward(ctx, xa)?)?;
                let f_mo = run_stage(ctx, s1_mo, stem_mo.forward(ctx, xb)?)?;
                let (fp_ap, fp_mo, f_co, _masks) = c2.forward(ctx, f_ap, f_mo)?;
                let mut streams = [
                    run_stage(ctx, &s2[0], fp_ap)?,
                    run_stage(ctx, &s2[1], fp_mo)?,
                    run_stage(ctx, &s2[2], f_co)?,
                ];
                if let Some(mp) = mid_proj {
                    let cat = ctx.tape.concat(&streams, 1)?;
                    let inj = mp.forward(ctx, cat)?;
                    for sref in streams.iter_mut() {
                        *sref = sref.add(inj)?;
                    }
                }
                let outs = [
                    run_stage(ctx, &s3[0], streams[0])?,
                    run_stage(ctx, &s3[1], streams[1])?,
                    run_stage(ctx, &s3[2], streams[2])?,
                ];
                let cat = ctx.tape.concat(&outs, 1)?;
                let x = proj.forward(ctx, cat)?;
                run_stage(ctx, s4, x)?
            }
        };

        // Gait head: unfold frames, temporal max, horizontal parts, FC,
        // batchnorm neck.
        let fs = feat.shape();
        let (c4, fh, fw) = (fs[1], fs[2], fs[3]);
        let unfolded = feat.reshape(&[b, t_len, c4, fh, fw])?;
        let pooled = temporal_pool(unfolded)?;
        let parts = horizontal_pool(pooled, self.config.parts)?;
        let embeddings = self.head.fc.forward(ctx, parts)?;
        let (_normed, logits) = self.head.neck.forward(ctx, embeddings)?;
        Ok((embeddings, logits))
    }
}

/// Returns parameter names in bank order (the checkpoint key space).
pub fn parameter_names<T: Scalar>(model: &Model<T>) -> Vec<String> {
    model.bank.entries.iter().map(|e| e.name.clone()).collect()
}
