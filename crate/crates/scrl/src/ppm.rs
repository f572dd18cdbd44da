//! Binary PPM (P6, maxval 255) reading and writing, plus nearest-neighbor
//! resizing to the network's 224×224 input grid.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 224;

/// Parse the P6 header: magic, width, height, maxval, separated by
/// whitespace; `#` comments allowed between tokens.
fn parse_header(bytes: &[u8]) -> Result<(usize, usize, usize)> {
    if bytes.get(0..2) != Some(b"P6") {
        return Err(Error::Format("ppm: bad magic, expected P6".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("ppm: truncated header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("ppm: expected integer in header".into()));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("ppm: header integer out of range".into()))?;
    }
    if fields[2] != 255 {
        return Err(Error::Format(format!("ppm: maxval {} unsupported, expected 255", fields[2])));
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("ppm: missing separator before raster".into()));
    }
    pos += 1;
    Ok((fields[0], fields[1], pos))
}

/// Decode P6 bytes into an H×W×3 tensor of values in [0, 1].
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let (w, h, at) = parse_header(bytes)?;
    let need = w * h * 3;
    let raster = bytes
        .get(at..at + need)
        .ok_or_else(|| Error::Format(format!("ppm: raster needs {} bytes, file has {}", need, bytes.len() - at)))?;
    let data: Vec<f64> = raster.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![h, w, 3], data)
}

/// Nearest-neighbor resize of an H×W×3 tensor; source index is
/// floor(dst·src_dim/dst_dim).
pub fn resize_nearest(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = img.dims3()?;
    let mut out = vec![0.0; out_h * out_w * c];
    for r in 0..out_h {
        let sr = r * h / out_h;
        for col in 0..out_w {
            let sc = col * w / out_w;
            let src = (sr * w + sc) * c;
            let dst = (r * out_w + col) * c;
            out[dst..dst + c].copy_from_slice(&img.data()[src..src + c]);
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Read a P6 file and resize to the 224×224×3 network input.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = decode_ppm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {}", path.display(), msg)),
        other => other,
    })?;
    resize_nearest(&img, IMAGE_SIZE, IMAGE_SIZE)
}

/// Encode an H×W×3 tensor of values in [0, 1] as P6 bytes.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = img.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("ppm: expected 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_ppm(img: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}
