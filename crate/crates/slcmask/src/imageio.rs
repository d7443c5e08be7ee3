//! PNG reading and writing for `[1, 3, H, W]` image tensors in `[0, 1]`.
//!
//! Images are written as 16-bit RGB so pixel values survive a round trip to
//! within `1 / 65535`; 8-bit, grey and alpha inputs are accepted on read.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use slcmask_core::Tensor;

use crate::error::{CliError, CliResult};

/// Writes `image` as a 16-bit RGB PNG with `text` stored in a compressed
/// `slcmask-config` text chunk.
pub fn write_png(path: &Path, image: &Tensor, text: &str) -> CliResult<()> {
    let [n, c, h, w] = image.dims4("write_png").map_err(|e| CliError::Usage(e.to_string()))?;
    if n != 1 || c != 3 {
        return Err(CliError::Usage(format!("write_png expects a [1, 3, H, W] image, got {:?}", image.shape())));
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    if !text.is_empty() {
        enc.add_ztxt_chunk("slcmask-config".to_string(), text.to_string())
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    let plane = h * w;
    let d = image.data();
    let mut buf = Vec::with_capacity(plane * 6);
    for i in 0..plane {
        for ch in 0..3 {
            let v = (d[ch * plane + i].clamp(0.0, 1.0) * 65535.0).round() as u16;
            buf.extend_from_slice(&v.to_be_bytes());
        }
    }
    let png_err = |e: png::EncodingError| CliError::Usage(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&buf).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads a PNG into a `[1, 3, H, W]` tensor in `[0, 1]`.
pub fn read_png(path: &Path) -> CliResult<Tensor> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let corrupt = |e: png::DecodingError| CliError::corrupt(path, 0, e.to_string());
    let mut reader = dec.read_info().map_err(corrupt)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let sample = |i: usize| -> f64 {
        if wide {
            u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / 65535.0
        } else {
            buf[i] as f64 / 255.0
        }
    };
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        for ch in 0..3 {
            // grey (and grey+alpha) images replicate their single channel
            let src = if channels >= 3 { ch } else { 0 };
            data[ch * plane + p] = sample(p * channels + src);
        }
    }
    Tensor::new([1, 3, h, w], data).map_err(|e| CliError::corrupt(path, 0, e.to_string()))
}
