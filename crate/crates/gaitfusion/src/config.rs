//! Flat INI-style configuration: `[section]` headers and `key = value`
//! lines, `#` or `;` comments. Unknown keys are hard errors so typos never
//! silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use gaitfusion_core::c2fusion::{FusionLocation, FusionMechanism, FusionSpec};
use gaitfusion_core::model::{ModelConfig, Variant};

use crate::error::{Error, Result};
use crate::synth::{Discriminability, Range, SynthSpec};
use crate::trainer::TrainConfig;

/// Parsed key/value store with consumption tracking.
pub struct Ini {
    values: BTreeMap<(String, String), String>,
    consumed: BTreeMap<(String, String), bool>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Ini> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = (section.clone(), k.trim().to_string());
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!(
                    "duplicate key `{}` in section [{}]",
                    key.1, key.0
                )));
            }
        }
        Ok(Ini {
            consumed: values.keys().map(|k| (k.clone(), false)).collect(),
            values,
        })
    }

    pub fn load(path: &Path) -> Result<Ini> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ini::parse(&text)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        let k = (section.to_string(), key.to_string());
        self.values.get(&k).cloned().inspect(|_| {
            self.consumed.insert(k, true);
        })
    }

    /// Errors if any key was never consumed (unknown-key hard error).
    pub fn finish(&self) -> Result<()> {
        let leftover: Vec<String> = self
            .consumed
            .iter()
            .filter(|(_, &c)| !c)
            .map(|((s, k), _)| format!("[{s}] {k}"))
            .collect();
        if leftover.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown config keys: {}", leftover.join(", "))))
        }
    }
}

fn parse_as<T: std::str::FromStr>(section: &str, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{raw}`")))
}

fn get_or<T: std::str::FromStr>(ini: &mut Ini, section: &str, key: &str, default: T) -> Result<T> {
    match ini.take(section, key) {
        Some(raw) => parse_as(section, key, &raw),
        None => Ok(default),
    }
}

fn get_bool(ini: &mut Ini, section: &str, key: &str, default: bool) -> Result<bool> {
    match ini.take(section, key) {
        None => Ok(default),
        Some(raw) => match raw.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!("[{section}] {key}: expected a boolean, got `{other}`"))),
        },
    }
}

fn get_list<T: std::str::FromStr>(
    ini: &mut Ini,
    section: &str,
    key: &str,
    default: Vec<T>,
) -> Result<Vec<T>> {
    match ini.take(section, key) {
        None => Ok(default),
        Some(raw) => raw
            .split(',')
            .map(|s| parse_as(section, key, s.trim()))
            .collect(),
    }
}

fn get_strings(ini: &mut Ini, section: &str, key: &str, default: &[&str]) -> Result<Vec<String>> {
    match ini.take(section, key) {
        None => Ok(default.iter().map(|s| s.to_string()).collect()),
        Some(raw) => Ok(raw.split(',').map(|s| s.trim().to_string()).collect()),
    }
}

fn get_range(ini: &mut Ini, section: &str, key: &str, default: Range) -> Result<Range> {
    match ini.take(section, key) {
        None => Ok(default),
        Some(raw) => {
            let Some((lo, hi)) = raw.split_once(',') else {
                return Err(Error::Config(format!("[{section}] {key}: expected `lo,hi`, got `{raw}`")));
            };
            Ok(Range {
                lo: parse_as(section, key, lo.trim())?,
                hi: parse_as(section, key, hi.trim())?,
            })
        }
    }
}

/// Gallery/probe condition partition with same-sequence exclusion.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub gallery: Vec<String>,
    pub probe: Vec<String>,
}

/// The fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SynthSpec,
    pub eval: Protocol,
    /// Conditions used for training batches.
    pub train_conditions: Vec<String>,
}

impl RunConfig {
    pub fn from_ini(mut ini: Ini) -> Result<RunConfig> {
        // [data]
        let num_ids: usize = get_or(&mut ini, "data", "num_identities", 4)?;
        let mode = match ini.take("data", "mode") {
            Some(raw) => Discriminability::parse(&raw)?,
            None => Discriminability::Mixed,
        };
        let mut data = SynthSpec::toy(
            num_ids,
            get_or(&mut ini, "data", "sequences_per_identity", 4)?,
            get_or(&mut ini, "data", "frames_per_sequence", 12)?,
            mode,
        );
        data.torso_width = get_range(&mut ini, "data", "torso_width", data.torso_width)?;
        data.limb_length = get_range(&mut ini, "data", "limb_length", data.limb_length)?;
        data.swing_amplitude = get_range(&mut ini, "data", "swing_amplitude", data.swing_amplitude)?;
        data.stride_frequency =
            get_range(&mut ini, "data", "stride_frequency", data.stride_frequency)?;
        data.phase = get_range(&mut ini, "data", "phase", data.phase)?;
        data.validate()?;

        // [model] — class count is supplied by the dataset at train time.
        let variant = match ini.take("model", "variant") {
            Some(raw) => Variant::parse(&raw)?,
            None => Variant::PlusPlus,
        };
        let mut model = ModelConfig::toy(variant, num_ids);
        model.stem = get_or(&mut ini, "model", "stem", model.stem)?;
        let widths = get_list(&mut ini, "model", "widths", model.widths.to_vec())?;
        let blocks = get_list(&mut ini, "model", "blocks", model.blocks.to_vec())?;
        for (name, v, dst) in [
            ("widths", widths, &mut model.widths),
            ("blocks", blocks, &mut model.blocks),
        ] {
            if v.len() != 4 {
                return Err(Error::Config(format!("[model] {name}: expected 4 values")));
            }
            dst.copy_from_slice(&v);
        }
        model.se_rate = get_or(&mut ini, "model", "se_rate", model.se_rate)?;
        model.parts = get_or(&mut ini, "model", "parts", model.parts)?;
        model.embed_dim = get_or(&mut ini, "model", "embed_dim", model.embed_dim)?;
        model.use_m_co = get_bool(&mut ini, "model", "use_m_co", model.use_m_co)?;
        model.use_m_di = get_bool(&mut ini, "model", "use_m_di", model.use_m_di)?;
        model.fuse_after_stage2 =
            get_bool(&mut ini, "model", "fuse_after_stage2", model.fuse_after_stage2)?;
        let location = match ini.take("model", "fusion_location") {
            None => model.fusion.location,
            Some(raw) => match raw.as_str() {
                "input" => FusionLocation::Input,
                "middle" => FusionLocation::Middle,
                "high" => FusionLocation::High,
                other => {
                    return Err(Error::Config(format!(
                        "[model] fusion_location: unknown value `{other}`"
                    )))
                }
            },
        };
        let mechanism = match ini.take("model", "fusion_mechanism") {
            None => model.fusion.mechanism,
            Some(raw) => match raw.as_str() {
                "addition" => FusionMechanism::Addition,
                "concatenation" => FusionMechanism::Concatenation,
                "attention" => FusionMechanism::CrossAttention,
                other => {
                    return Err(Error::Config(format!(
                        "[model] fusion_mechanism: unknown value `{other}`"
                    )))
                }
            },
        };
        model.fusion = FusionSpec {
            location,
            mechanism,
        };

        // [train]
        let train = TrainConfig {
            q: get_or(&mut ini, "train", "q", 4)?,
            p: get_or(&mut ini, "train", "p", 2)?,
            k: get_or(&mut ini, "train", "k", 4)?,
            base_lr: get_or(&mut ini, "train", "base_lr", 0.1)?,
            weight_decay: get_or(&mut ini, "train", "weight_decay", 5e-4)?,
            momentum: get_or(&mut ini, "train", "momentum", 0.9)?,
            milestones: get_list(&mut ini, "train", "milestones", vec![])?,
            steps: get_or(&mut ini, "train", "steps", 100)?,
            w_triplet: get_or(&mut ini, "train", "w_triplet", 1.0)?,
            w_softmax: get_or(&mut ini, "train", "w_softmax", 1.0)?,
            margin: get_or(&mut ini, "train", "margin", 0.2)?,
            seed: get_or(&mut ini, "train", "seed", 1)?,
        };
        train.validate()?;
        let train_conditions =
            get_strings(&mut ini, "train", "conditions", &["NM", "BG", "CL"])?;

        // [eval]
        let eval = Protocol {
            gallery: get_strings(&mut ini, "eval", "gallery", &["NM"])?,
            probe: get_strings(&mut ini, "eval", "probe", &["BG", "CL"])?,
        };

        ini.finish()?;
        Ok(RunConfig {
            model,
            train,
            data,
            eval,
            train_conditions,
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_ini(Ini::load(path)?)
    }

    /// The fully resolved configuration, echoed at the start of a run.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "variant = {}", self.model.variant.id());
        let _ = writeln!(s, "stem = {}", self.model.stem);
        let _ = writeln!(
            s,
            "widths = {}",
            self.model.widths.map(|w| w.to_string()).join(",")
        );
        let _ = writeln!(
            s,
            "blocks = {}",
            self.model.blocks.map(|b| b.to_string()).join(",")
        );
        let _ = writeln!(s, "se_rate = {}", self.model.se_rate);
        let _ = writeln!(s, "parts = {}", self.model.parts);
        let _ = writeln!(s, "embed_dim = {}", self.model.embed_dim);
        let _ = writeln!(s, "fusion_location = {:?}", self.model.fusion.location);
        let _ = writeln!(s, "fusion_mechanism = {:?}", self.model.fusion.mechanism);
        let _ = writeln!(s, "use_m_co = {}", self.model.use_m_co);
        let _ = writeln!(s, "use_m_di = {}", self.model.use_m_di);
        let _ = writeln!(s, "fuse_after_stage2 = {}", self.model.fuse_after_stage2);
        let _ = writeln!(s, "[train]");
        let t = &self.train;
        let _ = writeln!(s, "q = {} p = {} k = {}", t.q, t.p, t.k);
        let _ = writeln!(
            s,
            "base_lr = {} weight_decay = {} momentum = {}",
            t.base_lr, t.weight_decay, t.momentum
        );
        let _ = writeln!(s, "milestones = {:?} steps = {}", t.milestones, t.steps);
        let _ = writeln!(
            s,
            "w_triplet = {} w_softmax = {} margin = {} seed = {}",
            t.w_triplet, t.w_softmax, t.margin, t.seed
        );
        let _ = writeln!(s, "conditions = {}", self.train_conditions.join(","));
        let _ = writeln!(s, "[data]");
        let d = &self.data;
        let _ = writeln!(
            s,
            "num_identities = {} sequences_per_identity = {} frames_per_sequence = {} mode = {:?}",
            d.num_identities, d.sequences_per_identity, d.frames_per_sequence, d.mode
        );
        let _ = writeln!(s, "[eval]");
        let _ = writeln!(s, "gallery = {}", self.eval.gallery.join(","));
        let _ = writeln!(s, "probe = {}", self.eval.probe.join(","));
        s
    }
}

/// Loads a gallery/probe protocol from an `[eval]` section.
pub fn load_protocol(path: &Path) -> Result<Protocol> {
    let mut ini = Ini::load(path)?;
    let p = Protocol {
        gallery: get_strings(&mut ini, "eval", "gallery", &["NM"])?,
        probe: get_strings(&mut ini, "eval", "probe", &["BG", "CL"])?,
    };
    ini.finish()?;
    Ok(p)
}
