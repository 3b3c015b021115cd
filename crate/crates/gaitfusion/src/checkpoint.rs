//! `GFCK` checkpoint files: magic `GFCK`, u32 version, u32 record count,
//! then per record (u32 name length, UTF-8 name, u32 ndim, u64 dims, u8
//! dtype code, raw little-endian scalar payload). Also reused for
//! embedding dumps (one record per sequence).

use std::fs;
use std::io::Write;
use std::path::Path;

use gaitfusion_core::nn::ParamBank;
use gaitfusion_core::rng::Rng;
use gaitfusion_core::scalar::Scalar;
use gaitfusion_core::tensor::Tensor;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GFCK";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

/// Reserved record names carrying training metadata alongside the
/// parameter tensors.
pub const META_STEP: &str = "__meta.step";
pub const META_RNG: &str = "__meta.rng";
pub const META_MODEL: &str = "__meta.model";

/// One named tensor record.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    /// Payload in f64; the dtype code controls the on-disk width.
    pub data: Vec<f64>,
    pub dtype: u8,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Runtime(format!("corrupt checkpoint: {}", msg.into()))
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        if r.shape.iter().product::<usize>() != r.data.len() {
            return Err(Error::Runtime(format!(
                "record `{}`: shape {:?} does not match {} values",
                r.name,
                r.shape,
                r.data.len()
            )));
        }
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(r.dtype);
        match r.dtype {
            DTYPE_F32 => {
                for &v in &r.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            DTYPE_F64 => {
                for &v in &r.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            other => return Err(Error::Runtime(format!("unknown dtype code {other}"))),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| corrupt("non-UTF-8 record name"))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let dtype = r.take(1)?[0];
        let data = match dtype {
            DTYPE_F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DTYPE_F64 => r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            other => return Err(corrupt(format!("unknown dtype code {other} in `{name}`"))),
        };
        records.push(Record {
            name,
            shape,
            data,
            dtype,
        });
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after last record"));
    }
    Ok(records)
}

pub fn write_file(path: &Path, records: &[Record]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(records)?)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<Record>> {
    let bytes = fs::read(path).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))
}

fn dtype_of<T: Scalar>() -> u8 {
    if std::mem::size_of::<T>() == 4 {
        DTYPE_F32
    } else {
        DTYPE_F64
    }
}

/// Serializes every parameter and running statistic of a bank, plus the
/// training step and sampler RNG state as reserved records.
pub fn save_bank<T: Scalar>(path: &Path, bank: &ParamBank<T>, step: usize, rng: &Rng) -> Result<()> {
    let mut records: Vec<Record> = Vec::with_capacity(bank.entries.len() + 2);
    records.push(Record {
        name: META_STEP.into(),
        shape: vec![1],
        data: vec![f64::from_bits(step as u64)],
        dtype: DTYPE_F64,
    });
    records.push(Record {
        name: META_RNG.into(),
        shape: vec![1],
        data: vec![f64::from_bits(rng.state())],
        dtype: DTYPE_F64,
    });
    for e in &bank.entries {
        records.push(Record {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            data: e.value.data().iter().map(|v| v.as_f64()).collect(),
            dtype: dtype_of::<T>(),
        });
    }
    write_file(path, &records)
}

/// Restores a bank in place; every bank entry must be present with the
/// right shape, and unknown (non-reserved) record names are rejected.
/// Returns `(training step, RNG state)`.
pub fn load_bank<T: Scalar>(path: &Path, bank: &mut ParamBank<T>) -> Result<(usize, u64)> {
    let records = read_file(path)?;
    let mut step = 0usize;
    let mut rng_state = 0u64;
    let mut loaded = vec![false; bank.entries.len()];
    for r in records {
        match r.name.as_str() {
            META_STEP => step = r.data[0].to_bits() as usize,
            META_RNG => rng_state = r.data[0].to_bits(),
            META_MODEL => {} // model architecture metadata, see load_model

            name => {
                let idx = bank
                    .entries
                    .iter()
                    .position(|e| e.name == name)
                    .ok_or_else(|| {
                        Error::Runtime(format!("checkpoint record `{name}` unknown to this model"))
                    })?;
                let entry = &mut bank.entries[idx];
                if entry.value.shape() != r.shape.as_slice() {
                    return Err(Error::Runtime(format!(
                        "checkpoint record `{name}` has shape {:?}, model expects {:?}",
                        r.shape,
                        entry.value.shape()
                    )));
                }
                entry.value = Tensor::from_f64_slice(&r.shape, &r.data)?;
                loaded[idx] = true;
            }
        }
    }
    if let Some(i) = loaded.iter().position(|&l| !l) {
        return Err(Error::Runtime(format!(
            "checkpoint is missing parameter `{}`",
            bank.entries[i].name
        )));
    }
    Ok((step, rng_state))
}

/// Numeric encoding of a model configuration, stored as the reserved
/// `__meta.model` record so evaluation can rebuild the architecture from
/// a checkpoint alone.
fn encode_model_config(cfg: &gaitfusion_core::model::ModelConfig) -> Vec<f64> {
    use gaitfusion_core::c2fusion::{FusionLocation, FusionMechanism};
    use gaitfusion_core::model::Variant;
    let variant = match cfg.variant {
        Variant::Sil => 0.0,
        Variant::Par => 1.0,
        Variant::Flow => 2.0,
        Variant::DoubleSil => 3.0,
        Variant::SilPar => 4.0,
        Variant::SilFlow => 5.0,
        Variant::SilParFlow => 6.0,
        Variant::PlusPlus => 7.0,
    };
    let loc = match cfg.fusion.location {
        FusionLocation::Input => 0.0,
        FusionLocation::Middle => 1.0,
        FusionLocation::High => 2.0,
    };
    let mech = match cfg.fusion.mechanism {
        FusionMechanism::Addition => 0.0,
        FusionMechanism::Concatenation => 1.0,
        FusionMechanism::CrossAttention => 2.0,
        FusionMechanism::C2Fusion => 3.0,
    };
    let mut v = vec![variant, cfg.stem as f64];
    v.extend(cfg.widths.iter().map(|&w| w as f64));
    v.extend(cfg.blocks.iter().map(|&b| b as f64));
    v.extend([
        cfg.se_rate as f64,
        cfg.parts as f64,
        cfg.embed_dim as f64,
        loc,
        mech,
        cfg.use_m_co as u8 as f64,
        cfg.use_m_di as u8 as f64,
        cfg.fuse_after_stage2 as u8 as f64,
        cfg.num_classes as f64,
    ]);
    v
}

fn decode_model_config(data: &[f64]) -> Result<gaitfusion_core::model::ModelConfig> {
    use gaitfusion_core::c2fusion::{FusionLocation, FusionMechanism, FusionSpec};
    use gaitfusion_core::model::{ModelConfig, Variant};
    if data.len() != 19 {
        return Err(corrupt(format!("model metadata has {} fields, expected 19", data.len())));
    }
    let variant = match data[0] as usize {
        0 => Variant::Sil,
        1 => Variant::Par,
        2 => Variant::Flow,
        3 => Variant::DoubleSil,
        4 => Variant::SilPar,
        5 => Variant::SilFlow,
        6 => Variant::SilParFlow,
        7 => Variant::PlusPlus,
        other => return Err(corrupt(format!("unknown variant code {other}"))),
    };
    let location = match data[13] as usize {
        0 => FusionLocation::Input,
        1 => FusionLocation::Middle,
        2 => FusionLocation::High,
        other => return Err(corrupt(format!("unknown fusion location code {other}"))),
    };
    let mechanism = match data[14] as usize {
        0 => FusionMechanism::Addition,
        1 => FusionMechanism::Concatenation,
        2 => FusionMechanism::CrossAttention,
        3 => FusionMechanism::C2Fusion,
        other => return Err(corrupt(format!("unknown fusion mechanism code {other}"))),
    };
    Ok(ModelConfig {
        variant,
        stem: data[1] as usize,
        widths: [data[2] as usize, data[3] as usize, data[4] as usize, data[5] as usize],
        blocks: [data[6] as usize, data[7] as usize, data[8] as usize, data[9] as usize],
        fusion: FusionSpec { location, mechanism },
        se_rate: data[10] as usize,
        parts: data[11] as usize,
        embed_dim: data[12] as usize,
        use_m_co: data[15] != 0.0,
        use_m_di: data[16] != 0.0,
        fuse_after_stage2: data[17] != 0.0,
        num_classes: data[18] as usize,
    })
}

/// Saves a full model: architecture metadata plus every tensor.
pub fn save_model<T: Scalar>(
    path: &Path,
    model: &gaitfusion_core::model::Model<T>,
    step: usize,
    rng: &Rng,
) -> Result<()> {
    let mut records: Vec<Record> = vec![
        Record {
            name: META_MODEL.into(),
            shape: vec![19],
            data: encode_model_config(&model.config),
            dtype: DTYPE_F64,
        },
        Record {
            name: META_STEP.into(),
            shape: vec![1],
            data: vec![f64::from_bits(step as u64)],
            dtype: DTYPE_F64,
        },
        Record {
            name: META_RNG.into(),
            shape: vec![1],
            data: vec![f64::from_bits(rng.state())],
            dtype: DTYPE_F64,
        },
    ];
    for e in &model.bank.entries {
        records.push(Record {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            data: e.value.data().iter().map(|v| v.as_f64()).collect(),
            dtype: dtype_of::<T>(),
        });
    }
    write_file(path, &records)
}

/// Rebuilds a model from a checkpoint written by [`save_model`].
pub fn load_model<T: Scalar>(path: &Path) -> Result<(gaitfusion_core::model::Model<T>, usize, u64)> {
    let records = read_file(path)?;
    let meta = records
        .iter()
        .find(|r| r.name == META_MODEL)
        .ok_or_else(|| corrupt("missing model metadata record"))?;
    let config = decode_model_config(&meta.data)?;
    let mut model = gaitfusion_core::model::build::<T>(config, 0)?;
    let (step, rng_state) = load_bank(path, &mut model.bank)?;
    Ok((model, step, rng_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gaitfusion_core::nn::ParamKind;

    fn sample_records() -> Vec<Record> {
        vec![
            Record {
                name: "w".into(),
                shape: vec![2, 3],
                data: vec![1.0, -2.5, 0.0, 3.25, 4.0, 5.5],
                dtype: DTYPE_F32,
            },
            Record {
                name: "stats/mean".into(),
                shape: vec![4],
                data: vec![0.1, 0.2, 0.3, 0.4],
                dtype: DTYPE_F64,
            },
        ]
    }

    #[test]
    fn encode_decode_round_trip_is_byte_identical() {
        let recs = sample_records();
        let bytes = encode(&recs).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1], recs[1]);
        // f32 record round-trips through the narrower dtype.
        assert_eq!(back[0].data, recs[0].data);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode(&sample_records()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err()); // truncated
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(decode(&wrong_magic).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(decode(&wrong_version).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(decode(&trailing).is_err());
    }

    #[test]
    fn bank_round_trip_and_mismatch_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.gfck");
        let mut bank = ParamBank::<f32>::new();
        bank.add(
            "a.w".into(),
            Tensor::from_f64_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            ParamKind::Weight,
        );
        bank.add(
            "a.mean".into(),
            Tensor::from_f64_slice(&[2], &[0.5, -0.5]).unwrap(),
            ParamKind::Stat,
        );
        let rng = Rng::new(77);
        save_bank(&path, &bank, 123, &rng).unwrap();
        let mut bank2 = ParamBank::<f32>::new();
        bank2.add("a.w".into(), Tensor::zeros(&[2, 2]), ParamKind::Weight);
        bank2.add("a.mean".into(), Tensor::zeros(&[2]), ParamKind::Stat);
        let (step, state) = load_bank(&path, &mut bank2).unwrap();
        assert_eq!(step, 123);
        assert_eq!(state, rng.state());
        for (a, b) in bank.entries.iter().zip(&bank2.entries) {
            assert_eq!(a.value.data(), b.value.data());
        }
        // Save -> load -> save is byte-identical.
        let path2 = dir.path().join("ckpt2.gfck");
        save_bank(&path2, &bank2, step, &Rng::from_state(state)).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
        // Wrong shape names the parameter.
        let mut bad = ParamBank::<f32>::new();
        bad.add("a.w".into(), Tensor::zeros(&[3, 2]), ParamKind::Weight);
        bad.add("a.mean".into(), Tensor::zeros(&[2]), ParamKind::Stat);
        let err = load_bank(&path, &mut bad).unwrap_err().to_string();
        assert!(err.contains("a.w"), "{err}");
        // Unknown record name rejected.
        let mut extra = ParamBank::<f32>::new();
        extra.add("a.w".into(), Tensor::zeros(&[2, 2]), ParamKind::Weight);
        let err = load_bank(&path, &mut extra).unwrap_err().to_string();
        assert!(err.contains("a.mean"), "{err}");
        // Missing parameter rejected.
        let mut more = ParamBank::<f32>::new();
        more.add("a.w".into(), Tensor::zeros(&[2, 2]), ParamKind::Weight);
        more.add("a.mean".into(), Tensor::zeros(&[2]), ParamKind::Stat);
        more.add("b.w".into(), Tensor::zeros(&[1]), ParamKind::Weight);
        let err = load_bank(&path, &mut more).unwrap_err().to_string();
        assert!(err.contains("b.w"), "{err}");
    }
}
