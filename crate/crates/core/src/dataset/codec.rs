use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, RasterImage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WriteOptions {
    /// Permit JPEG output. Off by default: lossy re-encoding breaks the
    /// outside-mask bit-preservation guarantee.
    pub allow_lossy: bool,
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "jpg" | "jpeg" => Ok(ImageFormat::Jpeg),
        other => Err(Error::UnsupportedFormat(format!(
            "{} (extension {other:?}; expected png, jpg or jpeg)",
            path.display()
        ))),
    }
}

pub fn is_supported_image(path: &Path) -> bool {
    path.is_file() && format_for(path).is_ok()
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    decode(&bytes, Some(format)).map_err(|reason| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_image(image: &RasterImage, path: impl AsRef<Path>, opts: WriteOptions) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    if format == ImageFormat::Jpeg && !opts.allow_lossy {
        return Err(Error::UnsupportedFormat(format!(
            "refusing lossy JPEG output for {}; write .png or enable allow_lossy",
            path.display()
        )));
    }
    let bytes = match format {
        ImageFormat::Png => encode_png(image)?,
        _ => {
            let buf = to_rgb_buffer(image);
            let mut out = Cursor::new(Vec::new());
            buf.write_to(&mut out, format)
                .map_err(|e| Error::invalid(format!("encode failed: {e}")))?;
            out.into_inner()
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_rgb_buffer(image: &RasterImage) -> image::RgbImage {
    image::RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_rgb8())
        .expect("buffer length matches dimensions")
}

fn decode(bytes: &[u8], format: Option<ImageFormat>) -> std::result::Result<RasterImage, String> {
    let mut reader = ImageReader::new(Cursor::new(bytes));
    match format {
        Some(f) => reader.set_format(f),
        None => {
            reader = reader.with_guessed_format().map_err(|e| e.to_string())?;
        }
    }
    let rgb = reader.decode().map_err(|e| e.to_string())?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    RasterImage::from_rgb8(w, h, rgb.as_raw()).map_err(|e| e.to_string())
}

pub fn encode_png(image: &RasterImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_rgb_buffer(image)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("png encode failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    decode(bytes, Some(ImageFormat::Png)).map_err(|reason| Error::CorruptFile {
        path: "<memory>".into(),
        reason,
    })
}

/// Single-channel PNG, 255 for set bits.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("png encode failed: {e}")))?;
    Ok(out.into_inner())
}

/// Decodes any PNG as a mask, binarizing luminance at 0.5.
pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask> {
    let img = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png)
        .decode()
        .map_err(|e| Error::CorruptFile {
            path: "<memory>".into(),
            reason: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::from_bits(w, h, img.as_raw().iter().map(|v| *v >= 128).collect())
}
