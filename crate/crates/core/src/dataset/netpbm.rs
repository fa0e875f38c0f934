//! Binary netpbm codec: P5 (PGM) for single-channel images, P6 (PPM) for
//! 3-channel, 8-bit with maxval 255. A 4th (NIR) channel travels as a
//! sibling PGM named `<stem>_nir.pgm`.

use super::{DatasetError, Domain, Image};
use std::io::Write;
use std::path::{Path, PathBuf};

fn io_err(path: &Path, e: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn codec_err(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::Codec {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Path of the NIR sibling for a given image path.
pub fn nir_sibling(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_nir.pgm"))
}

fn to_bytes(image: &Image, channels: std::ops::Range<usize>) -> Vec<u8> {
    let unit = image.normalize(Domain::Unit);
    let (h, w) = (unit.height(), unit.width());
    let mut bytes = Vec::with_capacity(channels.len() * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in channels.clone() {
                let v = (unit.get(c, y, x) * 255.0).round().clamp(0.0, 255.0);
                bytes.push(v as u8);
            }
        }
    }
    bytes
}

fn write_pnm(path: &Path, magic: &str, w: usize, h: usize, pixels: &[u8]) -> Result<(), DatasetError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    write!(f, "{magic}\n{w} {h}\n255\n").map_err(|e| io_err(path, e))?;
    f.write_all(pixels).map_err(|e| io_err(path, e))?;
    f.flush().map_err(|e| io_err(path, e))
}

/// Write an image: P5 for 1 channel, P6 for 3; a 4-channel image becomes a
/// P6 of its first three channels plus a `_nir` PGM sibling.
pub fn write(path: &Path, image: &Image) -> Result<(), DatasetError> {
    let (h, w) = (image.height(), image.width());
    match image.channels() {
        1 => write_pnm(path, "P5", w, h, &to_bytes(image, 0..1)),
        3 => write_pnm(path, "P6", w, h, &to_bytes(image, 0..3)),
        4 => {
            write_pnm(path, "P6", w, h, &to_bytes(image, 0..3))?;
            write_pnm(&nir_sibling(path), "P5", w, h, &to_bytes(image, 3..4))
        }
        other => Err(DatasetError::InvalidImage(format!(
            "cannot encode {other}-channel image"
        ))),
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    data_offset: usize,
}

/// Parse the ASCII header: magic, then three tokens (width, height, maxval)
/// separated by whitespace, with `#` comments running to end of line, then a
/// single whitespace byte before the binary payload.
fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header, DatasetError> {
    if bytes.len() < 2 {
        return Err(codec_err(path, "file too short"));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return Err(codec_err(
            path,
            format!("unsupported magic {:?}", String::from_utf8_lossy(&magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            if pos >= bytes.len() {
                return Err(codec_err(path, "truncated header"));
            }
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(codec_err(path, "expected integer in header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| codec_err(path, "bad integer in header"))?;
    }
    if fields[2] != 255 {
        return Err(codec_err(
            path,
            format!("only maxval 255 supported, got {}", fields[2]),
        ));
    }
    // Single whitespace byte separates header from payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(codec_err(path, "missing separator before pixel data"));
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        data_offset: pos + 1,
    })
}

/// Read a P5/P6 file into a unit-domain image.
pub fn read(path: &Path) -> Result<Image, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    read_bytes(&bytes, path)
}

/// Decode an in-memory P5/P6 payload; `origin` only labels errors.
pub fn read_bytes(bytes: &[u8], origin: &Path) -> Result<Image, DatasetError> {
    let path = origin;
    let header = parse_header(path, bytes)?;
    let channels = if &header.magic == b"P5" { 1 } else { 3 };
    let (w, h) = (header.width, header.height);
    let expected = w * h * channels;
    let payload = &bytes[header.data_offset..];
    if payload.len() < expected {
        return Err(codec_err(
            path,
            format!("payload {} bytes, expected {expected}", payload.len()),
        ));
    }
    // Interleaved bytes -> channel-major floats.
    let mut data = vec![0.0; expected];
    let plane = w * h;
    for i in 0..plane {
        for c in 0..channels {
            data[c * plane + i] = payload[i * channels + c] as f64 / 255.0;
        }
    }
    Image::new(channels, h, w, data, Domain::Unit)
}

/// Read an image and, when a size-matching `_nir` sibling exists, attach it
/// as a 4th channel.
pub fn read_with_nir(path: &Path) -> Result<Image, DatasetError> {
    let base = read(path)?;
    let sib = nir_sibling(path);
    if base.channels() != 3 || !sib.exists() {
        return Ok(base);
    }
    let nir = read(&sib)?;
    if nir.channels() != 1 || nir.height() != base.height() || nir.width() != base.width() {
        return Err(codec_err(&sib, "NIR sibling does not match base image"));
    }
    let mut data = base.data().to_vec();
    data.extend_from_slice(nir.data());
    Image::new(4, base.height(), base.width(), data, Domain::Unit)
}
