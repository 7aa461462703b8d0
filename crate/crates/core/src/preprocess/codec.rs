use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Cursor};
use std::path::{Path, PathBuf};

use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use super::{GrayPlane, PreprocessError, RawPlane, CHANNELS};

pub fn encode_png(plane: &GrayPlane) -> Result<Vec<u8>, PreprocessError> {
    let mut buf = Vec::new();
    let mut encoder = png::Encoder::new(&mut buf, plane.width() as u32, plane.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Balanced);
    let mut writer = encoder.write_header().map_err(|e| PreprocessError::codec("<png>", e))?;
    writer
        .write_image_data(plane.pixels())
        .map_err(|e| PreprocessError::codec("<png>", e))?;
    writer.finish().map_err(|e| PreprocessError::codec("<png>", e))?;
    Ok(buf)
}

pub fn decode_png(bytes: &[u8]) -> Result<GrayPlane, PreprocessError> {
    decode_png_from(Cursor::new(bytes), Path::new("<png>"))
}

pub fn read_png(path: &Path) -> Result<GrayPlane, PreprocessError> {
    let file = File::open(path).map_err(|e| PreprocessError::io(path, e))?;
    decode_png_from(BufReader::new(file), path)
}

fn decode_png_from<R: std::io::BufRead + std::io::Seek>(reader: R, path: &Path) -> Result<GrayPlane, PreprocessError> {
    let mut reader = png::Decoder::new(reader)
        .read_info()
        .map_err(|e| PreprocessError::codec(path, e))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(PreprocessError::codec(
            path,
            format!(
                "expected 8-bit grayscale, found {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; w * h];
    reader
        .next_frame(&mut buf)
        .map_err(|e| PreprocessError::codec(path, e))?;
    GrayPlane::new(w, h, buf)
}

/// Write `bytes` to `path` through a temporary sibling so an interrupted run
/// never leaves a truncated file under the final name.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PreprocessError> {
    let tmp = path.with_extension("png.partial");
    fs::write(&tmp, bytes).map_err(|e| PreprocessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PreprocessError::io(path, e))
}

/// Write one PNG per channel as `{stem}_ch{c}.png`; returns the paths and
/// their sizes in bytes.
pub fn encode_channels(
    planes: &[GrayPlane],
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<(PathBuf, u64)>, PreprocessError> {
    if planes.len() != CHANNELS {
        return Err(PreprocessError::InvalidConfig(format!(
            "expected {CHANNELS} channel planes, got {}",
            planes.len()
        )));
    }
    planes
        .iter()
        .enumerate()
        .map(|(c, plane)| {
            let path = out_dir.join(format!("{stem}_ch{c}.png"));
            let bytes = encode_png(plane)?;
            write_atomic(&path, &bytes)?;
            Ok((path, bytes.len() as u64))
        })
        .collect()
}

fn open_tiff(path: &Path) -> Result<Decoder<BufReader<File>>, PreprocessError> {
    let file = File::open(path).map_err(|e| PreprocessError::io(path, e))?;
    Decoder::new(BufReader::new(file)).map_err(|e| PreprocessError::codec(path, e))
}

pub fn tiff_dimensions(path: &Path) -> Result<(usize, usize), PreprocessError> {
    let (w, h) = open_tiff(path)?
        .dimensions()
        .map_err(|e| PreprocessError::codec(path, e))?;
    Ok((w as usize, h as usize))
}

pub fn read_tiff_u16(path: &Path) -> Result<RawPlane, PreprocessError> {
    let mut decoder = open_tiff(path)?;
    let (w, h) = decoder.dimensions().map_err(|e| PreprocessError::codec(path, e))?;
    match decoder.read_image().map_err(|e| PreprocessError::codec(path, e))? {
        DecodingResult::U16(pixels) => {
            RawPlane::new(w as usize, h as usize, pixels).map_err(|e| PreprocessError::codec(path, e))
        }
        other => Err(PreprocessError::codec(
            path,
            format!("expected 16-bit grayscale, got {}", pixel_kind(&other)),
        )),
    }
}

fn pixel_kind(result: &DecodingResult) -> &'static str {
    match result {
        DecodingResult::U8(_) => "8-bit",
        DecodingResult::U16(_) => "16-bit",
        DecodingResult::U32(_) => "32-bit",
        DecodingResult::U64(_) => "64-bit",
        DecodingResult::F32(_) | DecodingResult::F64(_) => "floating point",
        _ => "an unsupported format",
    }
}

pub fn write_tiff_u16(path: &Path, plane: &RawPlane) -> Result<(), PreprocessError> {
    let file = File::create(path).map_err(|e| PreprocessError::io(path, e))?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(|e| PreprocessError::codec(path, e))?;
    encoder
        .write_image::<colortype::Gray16>(plane.width() as u32, plane.height() as u32, plane.pixels())
        .map_err(|e| PreprocessError::codec(path, e))
}
