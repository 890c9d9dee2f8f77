//! 8-bit RGB PNG boundary. Networks see `[0, 1]`; files hold bytes.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Clamp to `[0, 1]`, scale by 255 and round half up.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

pub fn dequantize<T: Scalar>(b: u8) -> T {
    T::from_f64_lossy(b as f64 / 255.0)
}

/// Quantises a `[3, H, W]` (or any-shape) tensor to bytes, preserving layout.
pub fn quantize_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    t.data().iter().map(|v| quantize(v.to_f64_lossy())).collect()
}

pub fn dequantize_bytes<T: Scalar>(shape: impl Into<Vec<usize>>, bytes: &[u8]) -> Result<Tensor<T>> {
    Tensor::new(shape, bytes.iter().map(|&b| dequantize(b)).collect())
}

/// Encodes planar `[3, H, W]` bytes as an 8-bit RGB PNG.
pub fn encode_png(planar: &[u8], h: usize, w: usize) -> Result<Vec<u8>> {
    if planar.len() != 3 * h * w {
        return Err(Error::shape("encode_png", format!("{} bytes for 3x{h}x{w}", planar.len())));
    }
    let mut interleaved = Vec::with_capacity(planar.len());
    for p in 0..h * w {
        for c in 0..3 {
            interleaved.push(planar[c * h * w + p]);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Default);
        enc.set_filter(png::FilterType::Sub);
        enc.set_adaptive_filter(png::AdaptiveFilterType::NonAdaptive);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Png { path: "<memory>".into(), detail: e.to_string() })?;
        writer
            .write_image_data(&interleaved)
            .map_err(|e| Error::Png { path: "<memory>".into(), detail: e.to_string() })?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG into planar bytes and its extents `(h, w)`.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let err = |detail: String| Error::Png { path: path.to_path_buf(), detail };
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| err(e.to_string()))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(err(format!("expected 8-bit samples, got {:?}", info.bit_depth)));
    }
    if info.color_type != png::ColorType::Rgb {
        return Err(err(format!("expected RGB without alpha, got {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
    let data = &buf[..frame.buffer_size()];
    let mut planar = vec![0u8; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            planar[c * h * w + p] = data[p * 3 + c];
        }
    }
    Ok((planar, h, w))
}

pub fn write_png_bytes(planar: &[u8], h: usize, w: usize, path: &Path) -> Result<()> {
    let bytes = encode_png(planar, h, w)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_png_bytes(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

/// Saves a `[3, H, W]` image in `[0, 1]` as an 8-bit PNG (clamped, round-half-up).
pub fn save_png<T: Scalar>(image: &Tensor<T>, path: &Path) -> Result<()> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape("save_png", format!("expected [3, H, W], got {:?}", image.shape())));
    };
    write_png_bytes(&quantize_tensor(image), h, w, path)
}

/// Loads an 8-bit RGB PNG as `[3, H, W]` with values `v / 255`.
pub fn load_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let (planar, h, w) = read_png_bytes(path)?;
    dequantize_bytes([3, h, w], &planar)
}
