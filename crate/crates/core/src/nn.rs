//! Neural network building blocks: parameter storage, convolutional
//! residual blocks with batch normalization, squeeze-and-excitation,
//! part-wise fully connected heads and the batchnorm neck.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Result, TensorError};
use crate::ops::fused::batch_stats;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// What a stored tensor is, which determines how the optimizer treats it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable weight; receives gradient updates and weight decay.
    Weight,
    /// Trainable normalization scale/shift; receives gradient updates
    /// but no weight decay.
    Norm,
    /// Non-trainable running statistic, updated by exponential moving
    /// average during training.
    Stat,
}

/// Index of a tensor inside a [`ParamBank`].
pub type ParamId = usize;

/// One stored tensor with its name and kind.
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

/// Flat store of every tensor a model owns: weights, normalization
/// parameters and running statistics. Layers hold indices into the bank.
#[derive(Default)]
pub struct ParamBank<T: Scalar> {
    pub entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamBank<T> {
    pub fn new() -> Self {
        ParamBank {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: String, value: Tensor<T>, kind: ParamKind) -> ParamId {
        self.entries.push(ParamEntry { name, value, kind });
        self.entries.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id].value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all entries.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.data().len()).sum()
    }
}

/// Per-step forward context: binds every bank entry onto the tape once,
/// exposes the resulting [`Var`]s to layers, and collects running-statistic
/// updates to be applied after the step.
pub struct Ctx<'t, 'b, T: Scalar> {
    pub tape: &'t Tape<T>,
    pub bank: &'b ParamBank<T>,
    pub train: bool,
    vars: Vec<Var<'t, T>>,
    stat_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'t, 'b, T: Scalar> Ctx<'t, 'b, T> {
    pub fn new(tape: &'t Tape<T>, bank: &'b ParamBank<T>, train: bool) -> Self {
        let vars = bank
            .entries
            .iter()
            .map(|e| tape.leaf(e.value.clone(), train && e.kind != ParamKind::Stat))
            .collect();
        Ctx {
            tape,
            bank,
            train,
            vars,
            stat_updates: RefCell::new(Vec::new()),
        }
    }

    /// The tape variable bound to a bank entry for this step.
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id]
    }

    /// Record a replacement value for a running statistic; applied by the
    /// caller via [`Ctx::take_stat_updates`] after the backward pass.
    pub fn record_stat(&self, id: ParamId, value: Tensor<T>) {
        self.stat_updates.borrow_mut().push((id, value));
    }

    pub fn take_stat_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        core::mem::take(&mut self.stat_updates.borrow_mut())
    }

    /// Gradients for every bank entry after a backward pass, indexed by
    /// `ParamId`; `None` for running statistics.
    pub fn grads(&self) -> Vec<Option<Tensor<T>>> {
        self.bank
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if e.kind == ParamKind::Stat {
                    None
                } else {
                    Some(self.vars[i].grad())
                }
            })
            .collect()
    }
}

/// Draws a tensor from N(0, sqrt(2 / fan_in)), the standard initialization
/// for layers followed by a rectifier.
pub fn kaiming_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let std = num_traits::Float::sqrt(2.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::of_f64(rng.normal() * std)).collect();
    Tensor::new(shape.to_vec(), data).expect("kaiming_normal shape")
}

/// 2D convolution layer (no bias; a batchnorm always follows).
pub struct Conv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        bank: &mut ParamBank<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = kaiming_normal(&[cout, cin, k, k], cin * k * k, rng);
        Conv2d {
            weight: bank.add(format!("{name}.weight"), w, ParamKind::Weight),
            stride,
            pad,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        x.conv2d(ctx.var(self.weight), self.stride, self.pad)
    }
}

/// Batch normalization layer over [B,C,H,W] (per channel) or [B,D]
/// (per feature). Running statistics use an exponential moving average
/// with momentum 0.9.
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(bank: &mut ParamBank<T>, name: &str, c: usize) -> Self {
        BatchNorm {
            scale: bank.add(
                format!("{name}.scale"),
                Tensor::full(&[c], T::one()),
                ParamKind::Norm,
            ),
            shift: bank.add(
                format!("{name}.shift"),
                Tensor::zeros(&[c]),
                ParamKind::Norm,
            ),
            running_mean: bank.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[c]),
                ParamKind::Stat,
            ),
            running_var: bank.add(
                format!("{name}.running_var"),
                Tensor::full(&[c], T::one()),
                ParamKind::Stat,
            ),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let scale = ctx.var(self.scale);
        let shift = ctx.var(self.shift);
        if ctx.train {
            let shape = x.shape();
            let (c, layout_4d) = match shape.len() {
                4 => (shape[1], true),
                2 => (shape[1], false),
                _ => {
                    return Err(TensorError::ShapeMismatch(format!(
                        "batchnorm expects [B,C,H,W] or [B,D], got {shape:?}"
                    )))
                }
            };
            let y = x.batchnorm_train(scale, shift, self.eps)?;
            let (bm, bv) = ctx.tape.with_value(x.id, |t| batch_stats(t, c, layout_4d));
            let m = T::of_f64(self.momentum);
            let one_m = T::one() - m;
            let old_mean = ctx.bank.get(self.running_mean);
            let old_var = ctx.bank.get(self.running_var);
            let new_mean: Vec<T> = (0..c)
                .map(|i| old_mean.data()[i] * m + bm[i] * one_m)
                .collect();
            let new_var: Vec<T> = (0..c)
                .map(|i| old_var.data()[i] * m + bv[i] * one_m)
                .collect();
            ctx.record_stat(
                self.running_mean,
                Tensor::new(alloc::vec![c], new_mean).expect("running mean"),
            );
            ctx.record_stat(
                self.running_var,
                Tensor::new(alloc::vec![c], new_var).expect("running var"),
            );
            Ok(y)
        } else {
            x.batchnorm_eval(
                scale,
                shift,
                ctx.bank.get(self.running_mean),
                ctx.bank.get(self.running_var),
                self.eps,
            )
        }
    }
}

/// Convolution, batch normalization, and an optional rectifier.
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        bank: &mut ParamBank<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        relu: bool,
        rng: &mut Rng,
    ) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(bank, &format!("{name}.conv"), cin, cout, k, stride, pad, rng),
            bn: BatchNorm::new(bank, &format!("{name}.bn"), cout),
            relu,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let y = self.bn.forward(ctx, self.conv.forward(ctx, x)?)?;
        if self.relu {
            y.relu()
        } else {
            Ok(y)
        }
    }
}

/// Two-convolution residual block. When the channel count or stride
/// changes, the skip path uses a 1x1 projection convolution.
pub struct ResidualBlock {
    pub c1: ConvBnRelu,
    pub c2: ConvBnRelu,
    pub shortcut: Option<ConvBnRelu>,
}

impl ResidualBlock {
    pub fn new<T: Scalar>(
        bank: &mut ParamBank<T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let c1 = ConvBnRelu::new(bank, &format!("{name}.c1"), cin, cout, 3, stride, 1, true, rng);
        let c2 = ConvBnRelu::new(bank, &format!("{name}.c2"), cout, cout, 3, 1, 1, false, rng);
        let shortcut = if cin != cout || stride != 1 {
            Some(ConvBnRelu::new(
                bank,
                &format!("{name}.shortcut"),
                cin,
                cout,
                1,
                stride,
                0,
                false,
                rng,
            ))
        } else {
            None
        };
        ResidualBlock { c1, c2, shortcut }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let y = self.c2.forward(ctx, self.c1.forward(ctx, x)?)?;
        let skip = match &self.shortcut {
            Some(sc) => sc.forward(ctx, x)?,
            None => x,
        };
        y.add(skip)?.relu()
    }
}

/// Squeeze-and-excitation: global average pool per channel, a two-layer
/// bottleneck with reduction ratio `rate`, a sigmoid gate, and channel-wise
/// rescaling of the input.
pub struct SqueezeExcite {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl SqueezeExcite {
    pub fn new<T: Scalar>(
        bank: &mut ParamBank<T>,
        name: &str,
        c: usize,
        rate: usize,
        rng: &mut Rng,
    ) -> Self {
        let hidden = (c / rate).max(1);
        SqueezeExcite {
            w1: bank.add(
                format!("{name}.w1"),
                kaiming_normal(&[hidden, c], c, rng),
                ParamKind::Weight,
            ),
            w2: bank.add(
                format!("{name}.w2"),
                kaiming_normal(&[c, hidden], hidden, rng),
                ParamKind::Weight,
            ),
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 {
            return Err(TensorError::ShapeMismatch(format!(
                "squeeze-excite expects [B,C,H,W], got {shape:?}"
            )));
        }
        let (b, c) = (shape[0], shape[1]);
        let squeezed = x.reduce_mean(&[2, 3])?; // [B,C]
        let hidden = squeezed.linear(ctx.var(self.w1))?.relu()?;
        let gate = hidden.linear(ctx.var(self.w2))?.sigmoid_elem()?;
        let gate4 = gate.reshape(&[b, c, 1, 1])?;
        x.mul(gate4)
    }
}

/// Independent fully connected layer per horizontal part:
/// input [B,P,C] times weights [P,D,C] gives [B,P,D].
pub struct SeparateFc {
    pub weight: ParamId,
}

impl SeparateFc {
    pub fn new<T: Scalar>(
        bank: &mut ParamBank<T>,
        name: &str,
        parts: usize,
        cin: usize,
        dout: usize,
        rng: &mut Rng,
    ) -> Self {
        SeparateFc {
            weight: bank.add(
                format!("{name}.weight"),
                kaiming_normal(&[parts, dout, cin], cin, rng),
                ParamKind::Weight,
            ),
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        x.per_part_linear(ctx.var(self.weight))
    }
}

/// Batchnorm neck: batch-normalizes part features, then applies a
/// bias-free per-part classifier on the normalized features. Returns
/// `(normalized_features, logits)`.
pub struct BnNeck {
    pub bn: BatchNorm,
    pub classifier: ParamId,
    pub parts: usize,
    pub dim: usize,
}

impl BnNeck {
    pub fn new<T: Scalar>(
        bank: &mut ParamBank<T>,
        name: &str,
        parts: usize,
        dim: usize,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Self {
        BnNeck {
            bn: BatchNorm::new(bank, &format!("{name}.bn"), parts * dim),
            classifier: bank.add(
                format!("{name}.classifier"),
                kaiming_normal(&[parts, num_classes, dim], dim, rng),
                ParamKind::Weight,
            ),
            parts,
            dim,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.parts || shape[2] != self.dim {
            return Err(TensorError::ShapeMismatch(format!(
                "bnneck expects [B,{},{}], got {shape:?}",
                self.parts, self.dim
            )));
        }
        let b = shape[0];
        let flat = x.reshape(&[b, self.parts * self.dim])?;
        let normed = self.bn.forward(ctx, flat)?;
        let normed3 = normed.reshape(&[b, self.parts, self.dim])?;
        let logits = normed3.per_part_linear(ctx.var(self.classifier))?;
        Ok((normed3, logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn bank_and_rng() -> (ParamBank<f64>, Rng) {
        (ParamBank::new(), Rng::new(42))
    }

    #[test]
    fn conv_bn_relu_shapes_and_nonnegativity() {
        let (mut bank, mut rng) = bank_and_rng();
        let block = ConvBnRelu::new(&mut bank, "b", 2, 4, 3, 2, 1, true, &mut rng);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, true);
        let x = tape.leaf(
            Tensor::from_f64_slice(
                &[2, 2, 8, 6],
                &(0..192).map(|i| (i as f64) * 0.1 - 9.0).collect::<Vec<_>>(),
            )
            .unwrap(),
            false,
        );
        let y = block.forward(&ctx, x).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 4, 3]);
        assert!(y.value().data().iter().all(|&v| v >= 0.0));
        // Training mode must queue running-stat updates for the bn layer.
        assert_eq!(ctx.take_stat_updates().len(), 2);
    }

    #[test]
    fn residual_identity_shortcut_when_shapes_match() {
        let (mut bank, mut rng) = bank_and_rng();
        let block = ResidualBlock::new(&mut bank, "r", 4, 4, 1, &mut rng);
        assert!(block.shortcut.is_none());
        let proj = ResidualBlock::new(&mut bank, "r2", 4, 8, 2, &mut rng);
        assert!(proj.shortcut.is_some());
    }

    #[test]
    fn residual_block_forward_shape() {
        let (mut bank, mut rng) = bank_and_rng();
        let block = ResidualBlock::new(&mut bank, "r", 2, 4, 2, &mut rng);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, false);
        let x = tape.leaf(Tensor::full(&[2, 2, 8, 6], 0.5), false);
        let y = block.forward(&ctx, x).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 4, 3]);
    }

    #[test]
    fn batchnorm_running_stats_move_toward_batch_stats() {
        let (mut bank, _) = bank_and_rng();
        let bn = BatchNorm::new(&mut bank, "bn", 1);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, true);
        // Batch with mean 10: running mean should move from 0 toward 10.
        let x = tape.leaf(
            Tensor::from_f64_slice(&[2, 1, 1, 2], &[9.0, 11.0, 9.5, 10.5]).unwrap(),
            false,
        );
        bn.forward(&ctx, x).unwrap();
        let updates = ctx.take_stat_updates();
        assert_eq!(updates.len(), 2);
        let (mean_id, new_mean) = &updates[0];
        assert_eq!(*mean_id, bn.running_mean);
        let m = new_mean.data()[0];
        assert!((m - 1.0).abs() < 1e-12, "0.9*0 + 0.1*10 = 1.0, got {m}");
    }

    #[test]
    fn squeeze_excite_preserves_shape_and_gates_channels() {
        let (mut bank, mut rng) = bank_and_rng();
        let se = SqueezeExcite::new(&mut bank, "se", 32, 16, &mut rng);
        assert_eq!(bank.get(se.w1).shape(), vec![2, 32]);
        assert_eq!(bank.get(se.w2).shape(), vec![32, 2]);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, false);
        let x = tape.leaf(Tensor::full(&[2, 32, 4, 3], 1.0), false);
        let y = se.forward(&ctx, x).unwrap();
        assert_eq!(y.shape(), vec![2, 32, 4, 3]);
        // Sigmoid gate is strictly inside (0,1): output magnitude shrinks.
        assert!(y
            .value()
            .data()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn squeeze_excite_hidden_width_is_at_least_one() {
        let (mut bank, mut rng) = bank_and_rng();
        let se = SqueezeExcite::new(&mut bank, "se", 8, 16, &mut rng);
        assert_eq!(bank.get(se.w1).shape(), vec![1, 8]);
    }

    #[test]
    fn bnneck_shapes() {
        let (mut bank, mut rng) = bank_and_rng();
        let neck = BnNeck::new(&mut bank, "neck", 4, 8, 10, &mut rng);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &bank, false);
        let x = tape.leaf(Tensor::full(&[3, 4, 8], 0.25), false);
        let (feats, logits) = neck.forward(&ctx, x).unwrap();
        assert_eq!(feats.shape(), vec![3, 4, 8]);
        assert_eq!(logits.shape(), vec![3, 4, 10]);
    }

    #[test]
    fn param_names_are_unique() {
        let (mut bank, mut rng) = bank_and_rng();
        ResidualBlock::new(&mut bank, "stage1.block0", 2, 4, 1, &mut rng);
        BnNeck::new(&mut bank, "neck", 4, 8, 10, &mut rng);
        let mut names: Vec<_> = bank.entries.iter().map(|e| e.name.to_string()).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
    }
}
