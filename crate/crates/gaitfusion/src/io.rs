//! Binary PGM (P5) and PPM (P6) image IO, 8-bit only.
//!
//! The on-disk pixel order is row-major; PPM interleaves the three
//! channels per pixel. In memory, images are channel-planar `[C,H,W]`
//! bytes so they map directly onto tensors.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

/// A decoded 8-bit image in channel-planar layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `channels * height * width` bytes, plane by plane.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels == 1 || channels == 3);
        Image {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: u8) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Reads one whitespace-delimited ASCII token, skipping `#` comments.
fn read_token(bytes: &[u8], pos: &mut usize) -> io::Result<String> {
    while *pos < bytes.len() {
        let b = bytes[*pos];
        if b == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(bad("truncated netpbm header"));
    }
    String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| bad("non-ASCII netpbm header"))
}

/// Decodes a binary PGM (P5, 1 channel) or PPM (P6, 3 channels) image.
pub fn decode(bytes: &[u8]) -> io::Result<Image> {
    let mut pos = 0usize;
    let magic = read_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(format!("unsupported netpbm magic `{other}`"))),
    };
    let parse = |tok: String| -> io::Result<usize> {
        tok.parse().map_err(|_| bad(format!("bad header field `{tok}`")))
    };
    let width = parse(read_token(bytes, &mut pos)?)?;
    let height = parse(read_token(bytes, &mut pos)?)?;
    let maxval = parse(read_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(bad(format!("only 8-bit images supported, maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing header/payload separator"));
    }
    pos += 1;
    let n = channels * height * width;
    if bytes.len() - pos != n {
        return Err(bad(format!(
            "payload length {} does not match {channels}x{height}x{width}",
            bytes.len() - pos
        )));
    }
    let mut img = Image::new(channels, height, width);
    // De-interleave PPM; PGM copies through.
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                img.set(c, y, x, bytes[pos + (y * width + x) * channels + c]);
            }
        }
    }
    Ok(img)
}

/// Encodes to binary PGM/PPM depending on channel count.
pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                out.push(img.get(c, y, x));
            }
        }
    }
    out
}

pub fn load(path: &Path) -> io::Result<Image> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes).map_err(|e| bad(format!("{}: {e}", path.display())))
}

pub fn save(path: &Path, img: &Image) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::File::create(path)?.write_all(&encode(img))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(channels: usize) -> Image {
        let mut img = Image::new(channels, 3, 2);
        for c in 0..channels {
            for y in 0..3 {
                for x in 0..2 {
                    img.set(c, y, x, (37 * c + 11 * y + 5 * x + 1) as u8);
                }
            }
        }
        img
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for c in [1, 3] {
            let img = sample(c);
            let bytes = encode(&img);
            let back = decode(&bytes).unwrap();
            assert_eq!(back, img);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn header_with_comment_parses() {
        let bytes = b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04";
        let img = decode(bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.data, vec![1, 2, 3, 4]);
    }

    #[test]
    fn ppm_interleaving_round_trips() {
        // Payload order is RGB per pixel; planar in memory.
        let bytes = b"P6\n1 2\n255\nABCabc";
        let img = decode(bytes).unwrap();
        assert_eq!(img.get(0, 0, 0), b'A');
        assert_eq!(img.get(2, 1, 0), b'c');
        assert_eq!(encode(&img), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(decode(b"P4\n2 2\n255\n....").is_err()); // wrong magic
        assert!(decode(b"P5\n2 2\n65535\n....").is_err()); // 16-bit
        assert!(decode(b"P5\n2 2\n255\n\x01\x02\x03").is_err()); // truncated
        assert!(decode(b"P5\n2\n255\n..").is_err()); // payload mismatch
        assert!(decode(b"P5 2 2 255").is_err()); // no payload
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/img.pgm");
        let img = sample(1);
        save(&path, &img).unwrap();
        assert_eq!(load(&path).unwrap(), img);
    }
}
