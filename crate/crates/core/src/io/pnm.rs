use std::fs;
use std::path::{Path, PathBuf};

use super::format_error;
use crate::error::{Error, Result};
use crate::render::Image;

/// [0, 1] → 0..=maxval with ties rounded up.
fn quantize(v: f64, maxval: f64) -> f64 {
    (v.clamp(0.0, 1.0) * maxval + 0.5).floor()
}

pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(3 * image.pixels.len());
    for p in &image.pixels {
        for &c in p {
            out.push(quantize(c, 255.0) as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Splits a PNM header into `magic width height maxval` and returns the
/// offset of the raster.
fn parse_header(bytes: &[u8], path: &Path) -> Result<([String; 4], usize)> {
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(format_error(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates maxval from the raster
    Ok((tokens.try_into().expect("four tokens"), i + 1))
}

fn parse_dims(tokens: &[String; 4], magic: &str, maxval: u32, path: &Path) -> Result<(usize, usize)> {
    if tokens[0] != magic {
        return Err(format_error(path, format!("expected {magic}, found {}", tokens[0])));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format_error(path, format!("bad {what} `{s}`")));
    let (w, h) = (num(&tokens[1], "width")?, num(&tokens[2], "height")?);
    if num(&tokens[3], "maxval")? != maxval as usize {
        return Err(format_error(path, format!("maxval must be {maxval}")));
    }
    Ok((w, h))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let (tokens, offset) = parse_header(&bytes, path)?;
    let (w, h) = parse_dims(&tokens, "P6", 255, path)?;
    let raster = bytes.get(offset..offset + 3 * w * h).ok_or_else(|| format_error(path, "truncated raster"))?;
    let pixels = raster
        .chunks_exact(3)
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(Image { width: w, height: h, pixels })
}

/// Value range recorded next to a 16-bit PGM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmRange {
    pub min: f64,
    pub max: f64,
}

fn range_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Writes `values` (row-major) as P5 with maxval 65535, scaled linearly
/// from [min, max], and the range to `<path>.txt`.
pub fn write_pgm16(values: &[f64], width: usize, height: usize, path: &Path) -> Result<PgmRange> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch { expected: width * height, actual: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in heatmap".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in values {
        let q = if span > 0.0 { quantize((v - min) / span, 65535.0) as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out)?;
    fs::write(range_path(path), format!("min {min:.16e}\nmax {max:.16e}\n"))?;
    Ok(PgmRange { min, max })
}

/// Reads a 16-bit PGM and maps it back to values through its range file.
pub fn read_pgm16(path: &Path) -> Result<(Vec<f64>, usize, usize, PgmRange)> {
    let bytes = fs::read(path)?;
    let (tokens, offset) = parse_header(&bytes, path)?;
    let (w, h) = parse_dims(&tokens, "P5", 65535, path)?;
    let raster = bytes.get(offset..offset + 2 * w * h).ok_or_else(|| format_error(path, "truncated raster"))?;

    let rpath = range_path(path);
    let text = fs::read_to_string(&rpath)?;
    let get = |key: &str| -> Result<f64> {
        text.lines()
            .find_map(|l| l.strip_prefix(key).map(str::trim))
            .ok_or_else(|| format_error(&rpath, format!("missing `{key}`")))?
            .parse()
            .map_err(|e| format_error(&rpath, e))
    };
    let range = PgmRange { min: get("min ")?, max: get("max ")? };
    let values = raster
        .chunks_exact(2)
        .map(|b| range.min + (range.max - range.min) * u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
        .collect();
    Ok((values, w, h, range))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_rounds_half_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let mut img = Image::filled(2, 1, [0.0; 3]);
        img.set(0, 0, [0.5 / 255.0, 1.0, -0.2]);
        img.set(1, 0, [0.49 / 255.0, 1.7, 128.5 / 255.0]);
        write_ppm(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[1, 255, 0, 0, 255, 129]);
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.width, 2);
        assert_eq!(back.get(1, 0), [0.0, 1.0, 129.0 / 255.0]);
    }

    #[test]
    fn ppm_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::filled(3, 2, [0.25, 0.5, 0.75]);
        img.set(2, 1, [0.1, 0.9, 0.3]);
        write_ppm(&img, &dir.path().join("a.ppm")).unwrap();
        let back = read_ppm(&dir.path().join("a.ppm")).unwrap();
        write_ppm(&back, &dir.path().join("b.ppm")).unwrap();
        assert_eq!(fs::read(dir.path().join("a.ppm")).unwrap(), fs::read(dir.path().join("b.ppm")).unwrap());
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        let values: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let range = write_pgm16(&values, 4, 3, &path).unwrap();
        let (back, w, h, r) = read_pgm16(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(r, range);
        let step = (range.max - range.min) / 65535.0;
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 * step + 1e-15);
        }
        assert!(dir.path().join("h.pgm.txt").exists());
    }

    #[test]
    fn constant_heatmap_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        write_pgm16(&[2.0; 4], 2, 2, &path).unwrap();
        let (back, ..) = read_pgm16(&path).unwrap();
        assert_eq!(back, vec![2.0; 4]);
    }

    #[test]
    fn malformed_headers_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        fs::write(&path, b"P5\n1 1\n255\n\0").unwrap();
        assert!(read_ppm(&path).is_err());
        fs::write(&path, b"P6\n2 2\n255\n\0\0\0").unwrap();
        assert!(read_ppm(&path).is_err());
        fs::write(&path, b"P6\n# comment\n1 1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(read_ppm(&path).unwrap().pixels.len(), 1);
    }
}
