//! Raster and report file formats: binary PGM (P5) and PPM (P6) with
//! maxval 255, PNG reading for convenience, and atomic file writes.

mod svg;

pub use svg::{render_pr_svg, PrSeries};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// 8-bit grayscale raster; the unit of saliency maps and ground truths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "gray raster {}x{} needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayRaster {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayRaster {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// 8-bit RGB raster, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "rgb raster {}x{} needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(RgbRaster {
            width,
            height,
            pixels,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// RGB raster to a (1, 3, H, W) tensor in [0, 1].
pub fn rgb_to_tensor(raster: &RgbRaster) -> Tensor4 {
    let shape = Shape4::new(1, 3, raster.height, raster.width);
    let mut t = Tensor4::zeros(shape);
    for y in 0..raster.height {
        for x in 0..raster.width {
            let [r, g, b] = raster.at(x, y);
            t.set(0, 0, y, x, r as f64 / 255.0);
            t.set(0, 1, y, x, g as f64 / 255.0);
            t.set(0, 2, y, x, b as f64 / 255.0);
        }
    }
    t
}

/// Gray raster to a (1, 1, H, W) tensor in [0, 1].
pub fn gray_to_tensor(raster: &GrayRaster) -> Tensor4 {
    let shape = Shape4::new(1, 1, raster.height, raster.width);
    let data = raster.pixels.iter().map(|&v| v as f64 / 255.0).collect();
    Tensor4::from_vec(shape, data).expect("lengths agree")
}

/// Single-channel (1, 1, H, W) tensor to an 8-bit raster; values are
/// clamped to [0, 1] and rounded.
pub fn tensor_to_gray(t: &Tensor4) -> Result<GrayRaster> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape_mismatch("tensor_to_gray", s, "(1, 1, h, w)"));
    }
    let pixels = t
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    GrayRaster::new(s.w, s.h, pixels)
}

/// Write bytes to a temporary sibling and atomically rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn encode_pnm_header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

pub fn encode_pgm(raster: &GrayRaster) -> Vec<u8> {
    let mut bytes = encode_pnm_header("P5", raster.width, raster.height);
    bytes.extend_from_slice(&raster.pixels);
    bytes
}

pub fn write_pgm(path: &Path, raster: &GrayRaster) -> Result<()> {
    atomic_write(path, &encode_pgm(raster))
}

pub fn encode_ppm(raster: &RgbRaster) -> Vec<u8> {
    let mut bytes = encode_pnm_header("P6", raster.width, raster.height);
    bytes.extend_from_slice(&raster.pixels);
    bytes
}

pub fn write_ppm(path: &Path, raster: &RgbRaster) -> Result<()> {
    atomic_write(path, &encode_ppm(raster))
}

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

/// Parse a binary PNM header: magic, whitespace/comment-separated width,
/// height, maxval, then a single whitespace byte before the payload.
fn parse_pnm_header(path: &Path, bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(Error::format(path, "truncated PNM header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "malformed PNM header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "malformed PNM header field"))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "missing separator before PNM payload"));
    }
    pos += 1;
    Ok(PnmHeader {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_offset: pos,
    })
}

pub fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<GrayRaster> {
    let h = parse_pnm_header(path, bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::format(path, "not a binary PGM (P5) file"));
    }
    if h.maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported PGM maxval {} (expected 255)", h.maxval),
        ));
    }
    let need = h.width * h.height;
    let data = bytes
        .get(h.data_offset..h.data_offset + need)
        .ok_or_else(|| Error::format(path, "truncated PGM payload"))?;
    GrayRaster::new(h.width, h.height, data.to_vec())
}

pub fn read_pgm(path: &Path) -> Result<GrayRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(path, &bytes)
}

pub fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<RgbRaster> {
    let h = parse_pnm_header(path, bytes)?;
    if &h.magic != b"P6" {
        return Err(Error::format(path, "not a binary PPM (P6) file"));
    }
    if h.maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported PPM maxval {} (expected 255)", h.maxval),
        ));
    }
    let need = h.width * h.height * 3;
    let data = bytes
        .get(h.data_offset..h.data_offset + need)
        .ok_or_else(|| Error::format(path, "truncated PPM payload"))?;
    RgbRaster::new(h.width, h.height, data.to_vec())
}

pub fn read_ppm(path: &Path) -> Result<RgbRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(path, &bytes)
}

/// Read an RGB image: PPM or PNG by extension.
pub fn read_image(path: &Path) -> Result<RgbRaster> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        Some("png") => {
            let img = image::open(path)
                .map_err(|e| Error::format(path, format!("png decode: {e}")))?
                .into_rgb8();
            RgbRaster::new(
                img.width() as usize,
                img.height() as usize,
                img.into_raw(),
            )
        }
        _ => Err(Error::format(
            path,
            "unsupported image extension (expected .ppm or .png)",
        )),
    }
}

/// Read a grayscale map: PGM or PNG by extension.
pub fn read_gray(path: &Path) -> Result<GrayRaster> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("png") => {
            let img = image::open(path)
                .map_err(|e| Error::format(path, format!("png decode: {e}")))?
                .into_luma8();
            GrayRaster::new(
                img.width() as usize,
                img.height() as usize,
                img.into_raw(),
            )
        }
        _ => Err(Error::format(
            path,
            "unsupported map extension (expected .pgm or .png)",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let raster = GrayRaster::new(3, 2, vec![0, 64, 128, 192, 255, 7]).unwrap();
        let bytes = encode_pgm(&raster);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = decode_pgm(Path::new("mem.pgm"), &bytes).unwrap();
        assert_eq!(back, raster);
    }

    #[test]
    fn ppm_round_trip() {
        let raster = RgbRaster::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let back = decode_ppm(Path::new("mem.ppm"), &encode_ppm(&raster)).unwrap();
        assert_eq!(back, raster);
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 8, 7, 6]);
        let raster = decode_pgm(Path::new("c.pgm"), &bytes).unwrap();
        assert_eq!((raster.width, raster.height), (2, 2));
        assert_eq!(raster.pixels, vec![9, 8, 7, 6]);
    }

    #[test]
    fn pgm_rejects_truncation_and_bad_magic() {
        assert!(decode_pgm(Path::new("x.pgm"), b"P5\n4 4\n255\n\x00\x01").is_err());
        assert!(decode_pgm(Path::new("x.pgm"), b"P6\n1 1\n255\n\x00").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.pgm");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        // no temp file left behind
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
