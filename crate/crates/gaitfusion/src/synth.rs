//! Synthetic multimodal gait data: an articulated ellipse/stick walker
//! rendered per identity, with silhouette, body-part parsing, and dense
//! optical flow written as PGM/PPM frames plus a TSV manifest.
//!
//! Flow frames are rendered from a canonical-shape walker driven by the
//! identity's motion parameters, so the flow modality carries motion
//! information only; silhouette and parsing carry the identity's shape.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gaitfusion_core::rng::Rng;

use crate::data::{size_align, Modality, ALL_MODALITIES, MANIFEST_HEADER, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::io::{self, Image};

/// Rendering canvas before size alignment.
const CANVAS_H: usize = 128;
const CANVAS_W: usize = 88;
/// Flow displacement encoding range: dx, dy in [-FLOW_RANGE, FLOW_RANGE]
/// pixels map affinely onto [0, 255].
const FLOW_RANGE: f64 = 8.0;

/// Which parameters separate identities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Discriminability {
    /// Distinct body shapes, shared motion.
    ShapeOnly,
    /// Shared body shape, distinct motion.
    MotionOnly,
    /// First half of the identities differ in shape only, second half in
    /// motion only.
    Mixed,
}

impl Discriminability {
    pub fn parse(s: &str) -> Result<Discriminability> {
        Ok(match s {
            "shape_only" => Discriminability::ShapeOnly,
            "motion_only" => Discriminability::MotionOnly,
            "mixed" => Discriminability::Mixed,
            other => {
                return Err(Error::Config(format!(
                    "unknown discriminability mode `{other}` (expected shape_only, motion_only, mixed)"
                )))
            }
        })
    }
}

/// Inclusive parameter range.
#[derive(Clone, Copy, Debug)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    fn mid(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        rng.uniform_in(self.lo, self.hi)
    }
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub num_identities: usize,
    pub sequences_per_identity: usize,
    pub frames_per_sequence: usize,
    pub mode: Discriminability,
    /// Torso half-width in pixels.
    pub torso_width: Range,
    /// Limb length scale factor.
    pub limb_length: Range,
    /// Limb swing amplitude in radians.
    pub swing_amplitude: Range,
    /// Stride frequency in cycles per frame.
    pub stride_frequency: Range,
    /// Base gait phase in radians.
    pub phase: Range,
}

impl SynthSpec {
    pub fn toy(num_identities: usize, sequences_per_identity: usize, frames_per_sequence: usize, mode: Discriminability) -> Self {
        SynthSpec {
            num_identities,
            sequences_per_identity,
            frames_per_sequence,
            mode,
            torso_width: Range { lo: 6.0, hi: 13.0 },
            limb_length: Range { lo: 0.85, hi: 1.15 },
            swing_amplitude: Range { lo: 0.25, hi: 0.65 },
            stride_frequency: Range { lo: 0.07, hi: 0.16 },
            phase: Range {
                lo: 0.0,
                hi: core::f64::consts::TAU,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_sequence < 2 {
            return Err(Error::Config("frames per sequence must be >= 2 (flow needs consecutive frames)".into()));
        }
        if self.num_identities == 0 || self.sequences_per_identity == 0 {
            return Err(Error::Config("identity and sequence counts must be positive".into()));
        }
        for (name, r) in [
            ("torso_width", self.torso_width),
            ("limb_length", self.limb_length),
            ("swing_amplitude", self.swing_amplitude),
            ("stride_frequency", self.stride_frequency),
            ("phase", self.phase),
        ] {
            if !(r.lo <= r.hi) || !r.lo.is_finite() || !r.hi.is_finite() {
                return Err(Error::Config(format!("empty or non-finite range for {name}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    torso_w: f64,
    limb: f64,
}

#[derive(Clone, Copy, Debug)]
struct Motion {
    amp: f64,
    freq: f64,
    phase: f64,
}

fn canonical_shape(spec: &SynthSpec) -> Shape {
    Shape {
        torso_w: spec.torso_width.mid(),
        limb: spec.limb_length.mid(),
    }
}

fn canonical_motion(spec: &SynthSpec) -> Motion {
    Motion {
        amp: spec.swing_amplitude.mid(),
        freq: spec.stride_frequency.mid(),
        phase: 0.0,
    }
}

/// Per-identity parameters under the spec's discriminability mode.
fn identity_params(spec: &SynthSpec, id: usize, rng: &mut Rng) -> (Shape, Motion) {
    let shape = Shape {
        torso_w: spec.torso_width.sample(rng),
        limb: spec.limb_length.sample(rng),
    };
    let motion = Motion {
        amp: spec.swing_amplitude.sample(rng),
        freq: spec.stride_frequency.sample(rng),
        phase: spec.phase.sample(rng),
    };
    match spec.mode {
        Discriminability::ShapeOnly => (shape, canonical_motion(spec)),
        Discriminability::MotionOnly => (canonical_shape(spec), motion),
        Discriminability::Mixed => {
            if id < spec.num_identities / 2 {
                (shape, canonical_motion(spec))
            } else {
                (canonical_shape(spec), motion)
            }
        }
    }
}

/// Key points of the walker at gait time `t` (frame units).
struct Pose {
    head: (f64, f64),
    torso: (f64, f64),
    shoulder: (f64, f64),
    hip: (f64, f64),
    /// Swing angles (radians from vertical): left/right arm, left/right leg.
    arm: [f64; 2],
    leg: [f64; 2],
}

fn pose(motion: &Motion, seq_phase: f64, t: f64) -> Pose {
    let g = core::f64::consts::TAU * motion.freq * t + motion.phase + seq_phase;
    let swing = motion.amp * g.sin();
    // Small vertical bounce, two per stride.
    let bounce = 1.2 * (2.0 * g).cos();
    let cx = CANVAS_W as f64 / 2.0;
    Pose {
        head: (cx, 16.0 + bounce),
        torso: (cx, 40.0 + bounce),
        shoulder: (cx, 27.0 + bounce),
        hip: (cx, 61.0 + bounce),
        arm: [swing, -swing],
        leg: [-swing, swing],
    }
}

/// A per-pixel render target: part labels plus a displacement field.
struct Canvas {
    labels: Vec<u8>,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl Canvas {
    fn new() -> Canvas {
        Canvas {
            labels: vec![0; CANVAS_H * CANVAS_W],
            dx: vec![0.0; CANVAS_H * CANVAS_W],
            dy: vec![0.0; CANVAS_H * CANVAS_W],
        }
    }

    fn put(&mut self, x: f64, y: f64, r: f64, label: u8, d: (f64, f64)) {
        let y0 = ((y - r).floor().max(0.0)) as usize;
        let y1 = ((y + r).ceil().min(CANVAS_H as f64 - 1.0)) as usize;
        let x0 = ((x - r).floor().max(0.0)) as usize;
        let x1 = ((x + r).ceil().min(CANVAS_W as f64 - 1.0)) as usize;
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                let ddx = xx as f64 - x;
                let ddy = yy as f64 - y;
                if ddx * ddx + ddy * ddy <= r * r {
                    let i = yy * CANVAS_W + xx;
                    self.labels[i] = label;
                    self.dx[i] = d.0;
                    self.dy[i] = d.1;
                }
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, label: u8, d: (f64, f64)) {
        let y0 = ((cy - ry).floor().max(0.0)) as usize;
        let y1 = ((cy + ry).ceil().min(CANVAS_H as f64 - 1.0)) as usize;
        let x0 = ((cx - rx).floor().max(0.0)) as usize;
        let x1 = ((cx + rx).ceil().min(CANVAS_W as f64 - 1.0)) as usize;
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                let nx = (xx as f64 - cx) / rx;
                let ny = (yy as f64 - cy) / ry;
                if nx * nx + ny * ny <= 1.0 {
                    let i = yy * CANVAS_W + xx;
                    self.labels[i] = label;
                    self.dx[i] = d.0;
                    self.dy[i] = d.1;
                }
            }
        }
    }

    /// Thick segment from a pivot, of given length and angle from
    /// vertical; each point carries the displacement of the same point on
    /// the next-frame segment.
    fn limb(
        &mut self,
        pivot: (f64, f64),
        pivot_next: (f64, f64),
        len: f64,
        angle: f64,
        angle_next: f64,
        thickness: f64,
        label: u8,
    ) {
        let steps = (len * 2.0).ceil() as usize;
        for step in 0..=steps {
            let s = step as f64 / steps as f64;
            let (px, py) = (pivot.0 + s * len * angle.sin(), pivot.1 + s * len * angle.cos());
            let (nx, ny) = (
                pivot_next.0 + s * len * angle_next.sin(),
                pivot_next.1 + s * len * angle_next.cos(),
            );
            self.put(px, py, thickness, label, (nx - px, ny - py));
        }
    }
}

/// Renders part labels and the frame-to-next-frame displacement field.
fn render(shape: &Shape, motion: &Motion, seq_phase: f64, t: f64) -> Canvas {
    let p0 = pose(motion, seq_phase, t);
    let p1 = pose(motion, seq_phase, t + 1.0);
    let mut cv = Canvas::new();
    let arm_len = 26.0 * shape.limb;
    let leg_len = 52.0 * shape.limb;
    let head_r = 6.5 * shape.limb;
    // Torso (2), head (1), arms (3,4), legs (5,6); later parts overwrite.
    cv.ellipse(
        p0.torso.0,
        p0.torso.1,
        shape.torso_w,
        18.0,
        2,
        (p1.torso.0 - p0.torso.0, p1.torso.1 - p0.torso.1),
    );
    cv.put(
        p0.head.0,
        p0.head.1,
        head_r,
        1,
        (p1.head.0 - p0.head.0, p1.head.1 - p0.head.1),
    );
    for side in 0..2 {
        cv.limb(
            p0.shoulder,
            p1.shoulder,
            arm_len,
            p0.arm[side],
            p1.arm[side],
            2.6,
            3 + side as u8,
        );
        cv.limb(
            p0.hip,
            p1.hip,
            leg_len,
            p0.leg[side],
            p1.leg[side],
            3.4,
            5 + side as u8,
        );
    }
    cv
}

fn encode_flow_byte(v: f64, range: f64) -> u8 {
    let scaled = (v / range) * 127.5 + 127.5;
    scaled.round().clamp(0.0, 255.0) as u8
}

/// Converts a rendered canvas into the three full-resolution modality
/// images (silhouette, parsing, still-unaligned flow).
fn canvas_images(cv: &Canvas) -> (Image, Image, Image) {
    let mut sil = Image::new(1, CANVAS_H, CANVAS_W);
    let mut par = Image::new(1, CANVAS_H, CANVAS_W);
    let mut flow = Image::new(3, CANVAS_H, CANVAS_W);
    for y in 0..CANVAS_H {
        for x in 0..CANVAS_W {
            let i = y * CANVAS_W + x;
            let label = cv.labels[i];
            if label > 0 {
                sil.set(0, y, x, 255);
            }
            par.set(0, y, x, label);
            let mag = (cv.dx[i] * cv.dx[i] + cv.dy[i] * cv.dy[i]).sqrt();
            flow.set(0, y, x, encode_flow_byte(cv.dx[i], FLOW_RANGE));
            flow.set(1, y, x, encode_flow_byte(cv.dy[i], FLOW_RANGE));
            flow.set(
                2,
                y,
                x,
                (mag / (FLOW_RANGE * core::f64::consts::SQRT_2) * 255.0)
                    .round()
                    .clamp(0.0, 255.0) as u8,
            );
        }
    }
    (sil, par, flow)
}

/// Renders and writes one full dataset; deterministic given the seed.
pub fn generate(spec: &SynthSpec, seed: u64, out: &Path) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(out)?;
    let mut rng = Rng::new(seed);
    let params: Vec<(Shape, Motion)> = (0..spec.num_identities)
        .map(|id| identity_params(spec, id, &mut rng))
        .collect();
    let canon = canonical_shape(spec);
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (id, (shape, motion)) in params.iter().enumerate() {
        for seq in 0..spec.sequences_per_identity {
            // Sequence variation comes from a phase offset that depends on
            // the sequence index only, so identities with shared motion
            // stay frame-aligned across the whole dataset.
            let seq_phase =
                core::f64::consts::TAU * seq as f64 / spec.sequences_per_identity as f64;
            let condition = ["NM", "BG", "CL"][seq % 3];
            for frame in 0..spec.frames_per_sequence {
                let t = frame as f64;
                // Identity walker drives silhouette and parsing; the
                // canonical-shape walker drives flow.
                let cv_id = render(shape, motion, seq_phase, t);
                let (sil, par, _) = canvas_images(&cv_id);
                let cv_fl = render(&canon, motion, seq_phase, t);
                let (sil_fl, _, flow) = canvas_images(&cv_fl);
                let aligned = [
                    (Modality::Silhouette, size_align(&sil, &sil)?),
                    (Modality::Parsing, size_align(&par, &sil)?),
                    (Modality::Flow, size_align(&flow, &sil_fl)?),
                ];
                for (m, img) in aligned {
                    let rel = format!("{id:03}/s{seq:02}/{}", m.name());
                    io::save(
                        &out.join(&rel).join(format!("{frame:03}.{}", m.extension())),
                        &img,
                    )?;
                }
            }
            for m in ALL_MODALITIES {
                writeln!(
                    manifest,
                    "{id:03}\ts{seq:02}\t{condition}\t{}\t{id:03}/s{seq:02}/{}",
                    m.name(),
                    m.name()
                )
                .expect("string write");
            }
        }
    }
    fs::write(out.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use gaitfusion_core::model::{IN_H, IN_W};
    use std::path::PathBuf;

    fn frame_files(root: &Path) -> Vec<PathBuf> {
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in fs::read_dir(&dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().map(|e| e == "pgm" || e == "ppm").unwrap_or(false) {
                    files.push(p);
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn counting_and_manifest_rows() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::toy(4, 4, 12, Discriminability::Mixed);
        generate(&spec, 7, dir.path()).unwrap();
        let files = frame_files(dir.path());
        assert_eq!(files.len(), 4 * 4 * 12 * 3);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(manifest.lines().count() - 1, 4 * 4 * 3);
        // Loadable, labels contiguous, frames 64x44 with foreground
        // touching rows 0 and 63.
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.num_identities, 4);
        assert_eq!(ds.sequences.len(), 16);
        let sil = io::load(&files.iter().find(|p| p.to_str().unwrap().contains("silhouette")).unwrap().clone()).unwrap();
        assert_eq!((sil.height, sil.width), (IN_H, IN_W));
        assert!((0..IN_W).any(|x| sil.get(0, 0, x) > 0));
        assert!((0..IN_W).any(|x| sil.get(0, IN_H - 1, x) > 0));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let spec = SynthSpec::toy(2, 2, 3, Discriminability::MotionOnly);
        generate(&spec, 42, d1.path()).unwrap();
        generate(&spec, 42, d2.path()).unwrap();
        let f1 = frame_files(d1.path());
        let f2 = frame_files(d2.path());
        assert_eq!(f1.len(), f2.len());
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(
                a.strip_prefix(d1.path()).unwrap(),
                b.strip_prefix(d2.path()).unwrap()
            );
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{a:?}");
        }
        assert_eq!(
            fs::read(d1.path().join(MANIFEST_NAME)).unwrap(),
            fs::read(d2.path().join(MANIFEST_NAME)).unwrap()
        );
    }

    #[test]
    fn shape_only_flow_identical_across_identities() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::toy(3, 2, 4, Discriminability::ShapeOnly);
        generate(&spec, 11, dir.path()).unwrap();
        for seq in 0..2 {
            for frame in 0..4 {
                let f0 = fs::read(dir.path().join(format!("000/s{seq:02}/flow/{frame:03}.ppm"))).unwrap();
                for id in 1..3 {
                    let fi = fs::read(
                        dir.path().join(format!("{id:03}/s{seq:02}/flow/{frame:03}.ppm")),
                    )
                    .unwrap();
                    assert_eq!(f0, fi, "id {id} seq {seq} frame {frame}");
                }
                // Silhouettes still differ (shape-discriminable).
                let s0 = fs::read(dir.path().join(format!("000/s{seq:02}/silhouette/{frame:03}.pgm"))).unwrap();
                let s1 = fs::read(dir.path().join(format!("001/s{seq:02}/silhouette/{frame:03}.pgm"))).unwrap();
                assert_ne!(s0, s1);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SynthSpec::toy(2, 2, 1, Discriminability::Mixed).validate().is_err());
        assert!(SynthSpec::toy(0, 2, 4, Discriminability::Mixed).validate().is_err());
        let mut s = SynthSpec::toy(2, 2, 4, Discriminability::Mixed);
        s.torso_width = Range { lo: 5.0, hi: 4.0 };
        assert!(s.validate().is_err());
    }
}
