//! The training loop: PK sampling, augmentation, joint triplet +
//! cross-entropy loss, SGD with milestone schedule, and CSV logging.

use std::io::Write;

use gaitfusion_core::model::{Model, Variant};
use gaitfusion_core::nn::Ctx;
use gaitfusion_core::optim::{lr_schedule, Sgd};
use gaitfusion_core::rng::Rng;
use gaitfusion_core::scalar::Scalar;
use gaitfusion_core::tape::Tape;

use crate::data::{assemble_batch, pk_sample, Dataset, Modality};
use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "step,lr,triplet_loss,softmax_loss";

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Identities per batch.
    pub q: usize,
    /// Sequences per identity.
    pub p: usize,
    /// Frames per sequence.
    pub k: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub steps: usize,
    pub w_triplet: f64,
    pub w_softmax: f64,
    pub margin: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.steps) {
            return Err(Error::Config("milestones must be < total steps".into()));
        }
        if self.margin <= 0.0 {
            return Err(Error::Config("triplet margin must be > 0".into()));
        }
        if self.q < 2 || self.p < 2 {
            return Err(Error::Config(
                "batch needs q >= 2 identities and p >= 2 sequences each for the triplet loss".into(),
            ));
        }
        if self.k == 0 || self.steps == 0 {
            return Err(Error::Config("k and steps must be positive".into()));
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Clone, Copy, Debug)]
pub struct TrainRow {
    pub step: usize,
    pub lr: f64,
    pub triplet: f64,
    pub softmax: f64,
}

/// The modalities a variant consumes.
pub fn modalities_for(variant: Variant) -> Vec<Modality> {
    let mut m = Vec::new();
    if variant.needs_silhouette() {
        m.push(Modality::Silhouette);
    }
    if variant.needs_parsing() {
        m.push(Modality::Parsing);
    }
    if variant.needs_flow() {
        m.push(Modality::Flow);
    }
    m
}

/// Runs the training loop, mutating the model's parameter bank in place.
/// Deterministic given the config seed (single-threaded). Returns the
/// per-step log and optionally streams it as CSV.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<TrainRow>> {
    cfg.validate()?;
    let modalities = modalities_for(model.config.variant);
    let mut sampler_rng = Rng::new(cfg.seed);
    let mut augment_rng = sampler_rng.fork(0xA06);
    let mut sgd = Sgd::new(&model.bank, cfg.momentum, cfg.weight_decay);
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{LOG_HEADER}")?;
    }
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = pk_sample(dataset, cfg.q, cfg.p, cfg.k, &mut sampler_rng)?;
        let (input, labels) =
            assemble_batch::<T>(dataset, &batch, &modalities, Some(&mut augment_rng))?;
        let lr = lr_schedule(step, cfg.base_lr, &cfg.milestones);
        let tape = Tape::new();
        let (grads, stat_updates, triplet, softmax) = {
            let ctx = Ctx::new(&tape, &model.bank, true);
            let (emb, logits) = model.forward(&ctx, &input)?;
            let lt = emb.triplet_loss(&labels, cfg.margin)?;
            let lc = logits.softmax_ce(&labels)?;
            let total = lt.mul_scalar(cfg.w_triplet)?.add(lc.mul_scalar(cfg.w_softmax)?)?;
            tape.backward(total)?;
            (
                ctx.grads(),
                ctx.take_stat_updates(),
                lt.scalar_value().as_f64(),
                lc.scalar_value().as_f64(),
            )
        };
        sgd.step(&mut model.bank, &grads, lr)?;
        for (id, value) in stat_updates {
            model.bank.entries[id].value = value;
        }
        let row = TrainRow {
            step,
            lr,
            triplet,
            softmax,
        };
        if !row.triplet.is_finite() || !row.softmax.is_finite() {
            return Err(Error::Runtime(format!(
                "non-finite loss at step {step}: triplet {} softmax {}",
                row.triplet, row.softmax
            )));
        }
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{},{},{},{}", row.step, row.lr, row.triplet, row.softmax)?;
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Discriminability, SynthSpec};
    use gaitfusion_core::model::{build, ModelConfig};

    fn tiny_model(variant: Variant, classes: usize) -> Model<f32> {
        let mut cfg = ModelConfig::toy(variant, classes);
        cfg.stem = 4;
        cfg.widths = [4, 8, 8, 8];
        cfg.parts = 4;
        cfg.embed_dim = 8;
        cfg.se_rate = 4;
        build(cfg, 3).unwrap()
    }

    fn tiny_config(steps: usize) -> TrainConfig {
        TrainConfig {
            q: 2,
            p: 2,
            k: 2,
            base_lr: 0.01,
            weight_decay: 5e-4,
            momentum: 0.9,
            milestones: vec![],
            steps,
            w_triplet: 1.0,
            w_softmax: 1.0,
            margin: 0.2,
            seed: 5,
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = tiny_config(10);
        c.milestones = vec![3, 3];
        assert!(c.validate().is_err());
        let mut c = tiny_config(10);
        c.milestones = vec![10];
        assert!(c.validate().is_err());
        let mut c = tiny_config(10);
        c.margin = 0.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(10);
        c.q = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn short_run_is_finite_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::toy(3, 2, 4, Discriminability::Mixed);
        generate(&spec, 2, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        let cfg = tiny_config(5);
        let run = || {
            let mut model = tiny_model(Variant::PlusPlus, ds.num_identities);
            let mut csv = Vec::new();
            let rows = train(&mut model, &ds, &cfg, Some(&mut csv)).unwrap();
            (rows, String::from_utf8(csv).unwrap())
        };
        let (r1, csv1) = run();
        let (r2, csv2) = run();
        assert_eq!(r1.len(), 5);
        assert!(csv1.starts_with(LOG_HEADER));
        assert_eq!(csv1, csv2);
        for (a, b) in r1.iter().zip(&r2) {
            assert!((a.triplet - b.triplet).abs() <= 1e-6);
            assert!((a.softmax - b.softmax).abs() <= 1e-6);
        }
    }
}
