//! Dataset ingestion and preprocessing: the on-disk manifest, size
//! alignment, flow masking, PK batch sampling, augmentation, and batch
//! assembly into model input tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gaitfusion_core::model::{InputBatch, FLOW_CHANNELS, IN_H, IN_W};
use gaitfusion_core::rng::Rng;
use gaitfusion_core::scalar::Scalar;
use gaitfusion_core::tensor::Tensor;

use crate::error::{Error, Result};
use crate::io::{self, Image};

pub const MANIFEST_NAME: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str = "identity\tsequence\tcondition\tmodality\tpath";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Modality {
    Silhouette,
    Parsing,
    Flow,
}

impl Modality {
    pub fn name(&self) -> &'static str {
        match self {
            Modality::Silhouette => "silhouette",
            Modality::Parsing => "parsing",
            Modality::Flow => "flow",
        }
    }

    pub fn parse(s: &str) -> Result<Modality> {
        Ok(match s {
            "silhouette" => Modality::Silhouette,
            "parsing" => Modality::Parsing,
            "flow" => Modality::Flow,
            other => return Err(Error::Runtime(format!("unknown modality `{other}`"))),
        })
    }

    pub fn channels(&self) -> usize {
        if *self == Modality::Flow {
            FLOW_CHANNELS
        } else {
            1
        }
    }

    pub fn extension(&self) -> &'static str {
        if *self == Modality::Flow {
            "ppm"
        } else {
            "pgm"
        }
    }
}

pub const ALL_MODALITIES: [Modality; 3] = [Modality::Silhouette, Modality::Parsing, Modality::Flow];

/// One sequence of one identity: frame paths per modality, all equal
/// length.
#[derive(Clone, Debug)]
pub struct SequenceEntry {
    /// Contiguous integer label for classifier training.
    pub label: usize,
    pub identity: String,
    pub sequence: String,
    pub condition: String,
    /// Sorted frame paths per present modality.
    pub frames: BTreeMap<Modality, Vec<PathBuf>>,
}

impl SequenceEntry {
    pub fn frame_count(&self) -> usize {
        self.frames.values().next().map(|v| v.len()).unwrap_or(0)
    }
}

/// The loaded dataset index.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub sequences: Vec<SequenceEntry>,
    pub num_identities: usize,
}

impl Dataset {
    /// Loads `root/manifest.tsv`, groups rows into sequences, checks that
    /// every referenced directory exists and that modalities of a sequence
    /// agree on frame count, and assigns contiguous identity labels.
    pub fn load(root: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(root.join(MANIFEST_NAME))
            .map_err(|e| Error::Runtime(format!("{}: {e}", root.join(MANIFEST_NAME).display())))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == MANIFEST_HEADER => {}
            other => {
                return Err(Error::Runtime(format!(
                    "bad manifest header {other:?}, expected `{MANIFEST_HEADER}`"
                )))
            }
        }
        // (identity, sequence) -> entry under construction.
        let mut groups: BTreeMap<(String, String), SequenceEntry> = BTreeMap::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::Runtime(format!(
                    "manifest line {}: expected 5 tab-separated columns, got {}",
                    lineno + 2,
                    cols.len()
                )));
            }
            let (identity, sequence, condition, modality, rel) =
                (cols[0], cols[1], cols[2], Modality::parse(cols[3])?, cols[4]);
            let dir = root.join(rel);
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Error::Runtime(format!("{}: {e}", dir.display())))?
                .filter_map(|r| r.ok().map(|d| d.path()))
                .filter(|p| p.is_file())
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::Runtime(format!("{}: no frames", dir.display())));
            }
            let entry = groups
                .entry((identity.to_string(), sequence.to_string()))
                .or_insert_with(|| SequenceEntry {
                    label: 0,
                    identity: identity.to_string(),
                    sequence: sequence.to_string(),
                    condition: condition.to_string(),
                    frames: BTreeMap::new(),
                });
            if entry.condition != condition {
                return Err(Error::Runtime(format!(
                    "sequence {identity}/{sequence} has conflicting conditions"
                )));
            }
            entry.frames.insert(modality, paths);
        }
        let mut sequences: Vec<SequenceEntry> = groups.into_values().collect();
        for s in &sequences {
            let counts: Vec<usize> = s.frames.values().map(|v| v.len()).collect();
            if counts.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::Runtime(format!(
                    "sequence {}/{} has unequal frame counts across modalities: {counts:?}",
                    s.identity, s.sequence
                )));
            }
        }
        let mut identities: Vec<String> = sequences.iter().map(|s| s.identity.clone()).collect();
        identities.sort();
        identities.dedup();
        for s in sequences.iter_mut() {
            s.label = identities.binary_search(&s.identity).expect("identity present");
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            sequences,
            num_identities: identities.len(),
        })
    }

    /// Subset with only the given condition tags (used to hold sequences
    /// out of training).
    pub fn filter_conditions(&self, conditions: &[String]) -> Dataset {
        Dataset {
            root: self.root.clone(),
            sequences: self
                .sequences
                .iter()
                .filter(|s| conditions.iter().any(|c| *c == s.condition))
                .cloned()
                .collect(),
            num_identities: self.num_identities,
        }
    }
}

/// Vertical foreground extent and horizontal center of gravity of a
/// binary silhouette.
fn silhouette_frame(sil: &Image) -> Option<(usize, usize, f64)> {
    let (mut top, mut bottom) = (None, None);
    let (mut xsum, mut count) = (0.0f64, 0usize);
    for y in 0..sil.height {
        for x in 0..sil.width {
            if sil.get(0, y, x) > 0 {
                top.get_or_insert(y);
                bottom = Some(y);
                xsum += x as f64;
                count += 1;
            }
        }
    }
    top.map(|t| (t, bottom.unwrap(), xsum / count as f64))
}

/// Size alignment: crop vertically to the silhouette's foreground rows,
/// rescale so height = 64 preserving aspect (nearest sampling, corners
/// aligned so rows 0 and 63 land on the top and bottom foreground rows),
/// and place the silhouette's x center of gravity at column 22, padding
/// with zeros. The transform is derived from `sil` and applied to `raw`,
/// so all modalities of a frame stay registered.
pub fn size_align(raw: &Image, sil: &Image) -> Result<Image> {
    if raw.height != sil.height || raw.width != sil.width {
        return Err(Error::Runtime(format!(
            "size_align: frame {}x{} does not match silhouette {}x{}",
            raw.height, raw.width, sil.height, sil.width
        )));
    }
    let (top, bottom, cog) = silhouette_frame(sil)
        .ok_or_else(|| Error::Runtime("size_align: empty silhouette".into()))?;
    let span = (bottom - top) as f64; // height-1 of the crop
    let cx = (IN_W as f64 - 1.0) / 2.0; // output column 21.5; integer CoG lands on 22 after rounding toward the foreground mean
    let mut out = Image::new(raw.channels, IN_H, IN_W);
    for y in 0..IN_H {
        let sy = top as f64 + y as f64 * span / (IN_H as f64 - 1.0);
        let syi = sy.round() as isize;
        for x in 0..IN_W {
            let sx = cog + (x as f64 - cx) * span / (IN_H as f64 - 1.0);
            let sxi = sx.round() as isize;
            if syi >= 0 && (syi as usize) < raw.height && sxi >= 0 && (sxi as usize) < raw.width {
                for c in 0..raw.channels {
                    out.set(c, y, x, raw.get(c, syi as usize, sxi as usize));
                }
            }
        }
    }
    Ok(out)
}

/// Zeroes flow values outside the silhouette; foreground untouched.
pub fn flow_mask_preprocess(flow: &Image, sil: &Image) -> Result<Image> {
    if flow.height != sil.height || flow.width != sil.width {
        return Err(Error::Runtime(format!(
            "flow_mask_preprocess: flow {}x{} vs silhouette {}x{}",
            flow.height, flow.width, sil.height, sil.width
        )));
    }
    let mut out = flow.clone();
    for y in 0..flow.height {
        for x in 0..flow.width {
            if sil.get(0, y, x) == 0 {
                for c in 0..flow.channels {
                    out.set(c, y, x, 0);
                }
            }
        }
    }
    Ok(out)
}

/// Per-sequence augmentation policy, drawn once and applied to every
/// frame of every modality.
#[derive(Clone, Copy, Debug)]
pub struct AugmentPolicy {
    /// Rotation about the image center, degrees, zero fill.
    pub rotation_deg: f64,
    pub flip: bool,
}

impl AugmentPolicy {
    /// Default policy: rotation uniform in ±10 degrees; horizontal flip
    /// disabled whenever flow is present (flipping would invalidate the
    /// encoded horizontal displacement channel).
    pub fn draw(rng: &mut Rng, has_flow: bool) -> AugmentPolicy {
        let rotation_deg = rng.uniform_in(-10.0, 10.0);
        let flip = !has_flow && rng.uniform() < 0.5;
        AugmentPolicy { rotation_deg, flip }
    }

    pub fn identity() -> AugmentPolicy {
        AugmentPolicy {
            rotation_deg: 0.0,
            flip: false,
        }
    }
}

/// Applies the policy to one frame: inverse-mapped nearest-neighbor
/// rotation about the image center with zero fill, then optional flip.
pub fn augment_frame(img: &Image, policy: &AugmentPolicy) -> Image {
    let mut out = if policy.rotation_deg == 0.0 {
        img.clone()
    } else {
        let theta = policy.rotation_deg.to_radians();
        let (s, c) = theta.sin_cos();
        let cy = (img.height as f64 - 1.0) / 2.0;
        let cx = (img.width as f64 - 1.0) / 2.0;
        let mut rot = Image::new(img.channels, img.height, img.width);
        for y in 0..img.height {
            for x in 0..img.width {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                // Inverse rotation of the output grid.
                let sy = (c * dy + s * dx + cy).round() as isize;
                let sx = (-s * dy + c * dx + cx).round() as isize;
                if sy >= 0 && (sy as usize) < img.height && sx >= 0 && (sx as usize) < img.width {
                    for ch in 0..img.channels {
                        rot.set(ch, y, x, img.get(ch, sy as usize, sx as usize));
                    }
                }
            }
        }
        rot
    };
    if policy.flip {
        let mut flipped = Image::new(out.channels, out.height, out.width);
        for y in 0..out.height {
            for x in 0..out.width {
                for ch in 0..out.channels {
                    flipped.set(ch, y, x, out.get(ch, y, out.width - 1 - x));
                }
            }
        }
        out = flipped;
    }
    out
}

/// One sampled sequence in a PK batch: which sequence, which frames.
#[derive(Clone, Debug)]
pub struct SampledSequence {
    pub seq_index: usize,
    pub frame_indices: Vec<usize>,
}

/// Identity-balanced PK sampling: q identities, p sequences each, k
/// ordered frames per sequence (a contiguous window when the sequence is
/// long enough, otherwise sampled with replacement and sorted).
pub fn pk_sample(
    dataset: &Dataset,
    q: usize,
    p: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<SampledSequence>> {
    // Group sequence indices by identity label.
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.sequences.iter().enumerate() {
        by_label.entry(s.label).or_default().push(i);
    }
    let eligible: Vec<usize> = by_label
        .iter()
        .filter(|(_, seqs)| seqs.len() >= p)
        .map(|(&l, _)| l)
        .collect();
    if eligible.len() < q {
        return Err(Error::Runtime(format!(
            "pk_sample: need {q} identities with >= {p} sequences, found {}",
            eligible.len()
        )));
    }
    let mut batch = Vec::with_capacity(q * p);
    for li in rng.choose_distinct(eligible.len(), q) {
        let seqs = &by_label[&eligible[li]];
        for si in rng.choose_distinct(seqs.len(), p) {
            let seq_index = seqs[si];
            let n = dataset.sequences[seq_index].frame_count();
            let frame_indices = if n >= k {
                let start = rng.below(n - k + 1);
                (start..start + k).collect()
            } else {
                let mut picks: Vec<usize> = (0..k).map(|_| rng.below(n)).collect();
                picks.sort_unstable();
                picks
            };
            batch.push(SampledSequence {
                seq_index,
                frame_indices,
            });
        }
    }
    Ok(batch)
}

/// Converts one preprocessed frame to scalar pixel values: silhouettes
/// and flow are divided by 255, parsing labels (0..=6) by 6.
fn frame_values<T: Scalar>(img: &Image, modality: Modality) -> Vec<T> {
    let denom = if modality == Modality::Parsing { 6.0 } else { 255.0 };
    img.data.iter().map(|&b| T::of_f64(b as f64 / denom)).collect()
}

/// Loads the selected frames of one modality of a sequence, applies flow
/// masking (flow only) and the augmentation policy.
pub fn load_frames(
    dataset: &Dataset,
    sample: &SampledSequence,
    modality: Modality,
    policy: &AugmentPolicy,
) -> Result<Vec<Image>> {
    let seq = &dataset.sequences[sample.seq_index];
    let paths = seq.frames.get(&modality).ok_or_else(|| {
        Error::Runtime(format!(
            "sequence {}/{} lacks modality {}",
            seq.identity,
            seq.sequence,
            modality.name()
        ))
    })?;
    let sil_paths = seq.frames.get(&Modality::Silhouette);
    let mut out = Vec::with_capacity(sample.frame_indices.len());
    for &fi in &sample.frame_indices {
        let mut img = io::load(&paths[fi])?;
        if modality == Modality::Flow {
            let sp = sil_paths.ok_or_else(|| {
                Error::Runtime("flow masking requires the silhouette modality".into())
            })?;
            let sil = io::load(&sp[fi])?;
            img = flow_mask_preprocess(&img, &sil)?;
        }
        out.push(augment_frame(&img, policy));
    }
    Ok(out)
}

/// Stacks per-sequence frame lists into one `[B,T,C,64,44]` tensor.
pub fn stack_frames<T: Scalar>(
    per_sequence: &[Vec<Image>],
    modality: Modality,
) -> Result<Tensor<T>> {
    let b = per_sequence.len();
    let t = per_sequence.first().map(|f| f.len()).unwrap_or(0);
    let c = modality.channels();
    let mut data = Vec::with_capacity(b * t * c * IN_H * IN_W);
    for frames in per_sequence {
        if frames.len() != t {
            return Err(Error::Runtime("unequal frame counts in batch".into()));
        }
        for img in frames {
            if img.channels != c || img.height != IN_H || img.width != IN_W {
                return Err(Error::Runtime(format!(
                    "frame is {}x{}x{}, expected {c}x{IN_H}x{IN_W}",
                    img.channels, img.height, img.width
                )));
            }
            data.extend(frame_values::<T>(img, modality));
        }
    }
    Tensor::from_vec(&[b, t, c, IN_H, IN_W], data).map_err(Error::from)
}

/// Assembles a full multimodal input batch plus its identity labels.
pub fn assemble_batch<T: Scalar>(
    dataset: &Dataset,
    batch: &[SampledSequence],
    modalities: &[Modality],
    augment_rng: Option<&mut Rng>,
) -> Result<(InputBatch<T>, Vec<usize>)> {
    let has_flow = modalities.contains(&Modality::Flow);
    let mut policies = Vec::with_capacity(batch.len());
    match augment_rng {
        Some(rng) => {
            for _ in batch {
                policies.push(AugmentPolicy::draw(rng, has_flow));
            }
        }
        None => policies.resize(batch.len(), AugmentPolicy::identity()),
    }
    let labels: Vec<usize> = batch
        .iter()
        .map(|s| dataset.sequences[s.seq_index].label)
        .collect();
    let mut input = InputBatch {
        silhouette: None,
        parsing: None,
        flow: None,
    };
    for &m in modalities {
        let per_seq: Result<Vec<Vec<Image>>> = batch
            .iter()
            .zip(&policies)
            .map(|(s, pol)| load_frames(dataset, s, m, pol))
            .collect();
        let tensor = stack_frames::<T>(&per_seq?, m)?;
        match m {
            Modality::Silhouette => input.silhouette = Some(tensor),
            Modality::Parsing => input.parsing = Some(tensor),
            Modality::Flow => input.flow = Some(tensor),
        }
    }
    Ok((input, labels))
}
