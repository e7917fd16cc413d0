//! PFM depth maps and 8-bit PGM/PPM images.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use photocon_core::grid::{DepthMap, Grid, Image, Mask};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {kind} header: {msg}")]
    Header { kind: &'static str, msg: String },
    #[error("{kind} payload truncated: expected {expected} bytes, got {got}")]
    Truncated { kind: &'static str, expected: usize, got: usize },
    #[error("unsupported {kind} variant '{magic}'")]
    Unsupported { kind: &'static str, magic: String },
}

type Result<T> = std::result::Result<T, FormatError>;

/// Reads whitespace-separated header tokens, skipping `#` comments.
fn header_tokens<R: BufRead>(r: &mut R, n: usize, kind: &'static str) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(n);
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    let mut comment = false;
    while out.len() < n {
        if r.read(&mut byte)? == 0 {
            return Err(FormatError::Header { kind, msg: "unexpected end of file".into() });
        }
        let c = byte[0] as char;
        if comment {
            comment = c != '\n';
            continue;
        }
        if c == '#' && tok.is_empty() {
            comment = true;
        } else if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                out.push(std::mem::take(&mut tok));
            }
        } else {
            tok.push(c);
        }
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(s: &str, kind: &'static str, what: &str) -> Result<T> {
    s.parse().map_err(|_| FormatError::Header { kind, msg: format!("bad {what} '{s}'") })
}

/// Writes a single-channel little-endian PFM (rows stored bottom to top).
pub fn write_pfm(path: &Path, map: &DepthMap) -> Result<()> {
    let mut buf = format!("Pf\n{} {}\n-1.0\n", map.width(), map.height()).into_bytes();
    for i in (0..map.height()).rev() {
        for j in 0..map.width() {
            buf.extend_from_slice(&(map.at(i, j) as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a single-channel PFM of either endianness.
pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let t = header_tokens(&mut r, 4, "PFM")?;
    if t[0] != "Pf" {
        return Err(FormatError::Unsupported { kind: "PFM", magic: t[0].clone() });
    }
    let w: usize = parse(&t[1], "PFM", "width")?;
    let h: usize = parse(&t[2], "PFM", "height")?;
    let scale: f32 = parse(&t[3], "PFM", "scale")?;
    if w == 0 || h == 0 || scale == 0.0 {
        return Err(FormatError::Header { kind: "PFM", msg: format!("degenerate {w}x{h}, scale {scale}") });
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let expected = 4 * w * h;
    if data.len() < expected {
        return Err(FormatError::Truncated { kind: "PFM", expected, got: data.len() });
    }
    let little = scale < 0.0;
    let mut out = Grid::new(h, w, 0.0);
    for (k, c) in data[..expected].chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (h - 1 - k / w, k % w);
        *out.get_mut(row, col) = v as f64;
    }
    Ok(out)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit binary PGM; intensities are clamped to `[0, 1]`.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width(), img.height())?;
    f.write_all(&img.data().iter().map(|v| quantize(*v)).collect::<Vec<_>>())?;
    Ok(())
}

/// Writes a mask as a black/white PGM.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_pgm(path, &Grid::from_fn(mask.height(), mask.width(), |i, j| if mask.at(i, j) { 1.0 } else { 0.0 }))
}

/// Writes an 8-bit binary PPM from three channels.
pub fn write_ppm(path: &Path, rgb: [&Image; 3]) -> Result<()> {
    let (h, w) = (rgb[0].height(), rgb[0].width());
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{w} {h}\n255\n")?;
    let mut buf = Vec::with_capacity(3 * w * h);
    for k in 0..w * h {
        buf.extend(rgb.iter().map(|c| quantize(c.data()[k])));
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a binary PGM (P5) or PPM (P6) with maxval <= 255; colour is averaged to gray.
pub fn read_pnm(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let t = header_tokens(&mut r, 4, "PNM")?;
    let channels = match t[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(FormatError::Unsupported { kind: "PNM", magic: m.into() }),
    };
    let w: usize = parse(&t[1], "PNM", "width")?;
    let h: usize = parse(&t[2], "PNM", "height")?;
    let maxval: u32 = parse(&t[3], "PNM", "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(FormatError::Header { kind: "PNM", msg: format!("maxval {maxval} outside 1..=255") });
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let expected = channels * w * h;
    if data.len() < expected {
        return Err(FormatError::Truncated { kind: "PNM", expected, got: data.len() });
    }
    let scale = 1.0 / maxval as f64;
    let px = data[..expected]
        .chunks_exact(channels)
        .map(|c| c.iter().map(|b| *b as f64).sum::<f64>() / channels as f64 * scale)
        .collect();
    Ok(Grid::from_vec(h, w, px).expect("length checked"))
}

/// Maps depth to a gray image, near = bright, on `[lo, hi]` in inverse depth.
pub fn depth_preview(depth: &DepthMap, lo: f64, hi: f64) -> Image {
    let (a, b) = (1.0 / hi, 1.0 / lo);
    depth.map(|&d| (1.0 / d.max(1e-9) - a) / (b - a))
}
