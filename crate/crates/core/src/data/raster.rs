use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved `H x W x channels` image with 8- or 16-bit samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// 8 or 16.
    pub bit_depth: u8,
    pub data: Vec<u16>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, bit_depth: u8) -> Result<Self> {
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::contract(format!("unsupported bit depth {bit_depth}")));
        }
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!("empty raster {height}x{width}x{channels}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            bit_depth,
            data: vec![0; height * width * channels],
        })
    }

    pub fn max_value(&self) -> u16 {
        if self.bit_depth == 8 {
            255
        } else {
            u16::MAX
        }
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u16 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: u16) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    /// Copy of the `h x w` window at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Raster {
        let mut data = Vec::with_capacity(h * w * self.channels);
        for r in row..row + h {
            let start = (r * self.width + col) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Raster {
            height: h,
            width: w,
            channels: self.channels,
            bit_depth: self.bit_depth,
            data,
        }
    }
}

/// Binary `H x W` mask with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask data of length {} for {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::contract("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Mask {
        let mut data = Vec::with_capacity(h * w);
        for r in row..row + h {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + w]);
        }
        Mask {
            height: h,
            width: w,
            data,
        }
    }

    /// Binarizes a single-channel 8-bit raster at `>= 128`.
    pub fn from_raster(r: &Raster) -> Result<Self> {
        if r.channels != 1 || r.bit_depth != 8 {
            return Err(Error::contract(format!(
                "masks must be 8-bit single channel, got {} channel(s) at {} bits",
                r.channels, r.bit_depth
            )));
        }
        Ok(Self {
            height: r.height,
            width: r.width,
            data: r.data.iter().map(|&v| u8::from(v >= 128)).collect(),
        })
    }

    /// 8-bit grayscale with 0 / 255.
    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            bit_depth: 8,
            data: self.data.iter().map(|&v| u16::from(v) * 255).collect(),
        }
    }
}

fn load_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::load(path, reason.to_string())
}

/// Decodes a PNG. Palette and sub-byte images are expanded to 8 bits;
/// 16-bit images keep their full range.
pub fn read_png(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| load_err(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| load_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| load_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| load_err(path, e))?;
    let channels = info.color_type.samples();
    let bit_depth = match info.bit_depth {
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => 16,
        other => return Err(load_err(path, format!("unsupported bit depth {other:?}"))),
    };
    let bytes = &buf[..info.buffer_size()];
    let data: Vec<u16> = if bit_depth == 8 {
        bytes.iter().map(|&b| u16::from(b)).collect()
    } else {
        bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    let (height, width) = (info.height as usize, info.width as usize);
    if data.len() != height * width * channels {
        return Err(load_err(path, "decoded size does not match header"));
    }
    Ok(Raster {
        height,
        width,
        channels,
        bit_depth,
        data,
    })
}

pub fn write_png(path: &Path, raster: &Raster) -> Result<()> {
    let color = match raster.channels {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::contract(format!("cannot encode {c} channels as PNG"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        raster.width as u32,
        raster.height as u32,
    );
    encoder.set_color(color);
    let bytes: Vec<u8> = if raster.bit_depth == 8 {
        encoder.set_depth(png::BitDepth::Eight);
        raster.data.iter().map(|&v| v.min(255) as u8).collect()
    } else {
        encoder.set_depth(png::BitDepth::Sixteen);
        raster.data.iter().flat_map(|v| v.to_be_bytes()).collect()
    };
    let encode_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}
