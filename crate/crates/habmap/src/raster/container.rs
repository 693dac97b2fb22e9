//! Binary raster container and a whitespace text-matrix importer.
//!
//! Container layout (all integers and floats little-endian):
//!
//! ```text
//! magic    4 bytes  "MSRS"
//! version  u16      currently 1
//! channels u16      > 0
//! height   u32      > 0
//! width    u32      > 0
//! geo      4 x f64  origin_x, origin_y, pixel_size_x, pixel_size_y
//! nodata   f32
//! names    channels x { len u16, len bytes UTF-8 }
//! samples  channels * height * width x f32, channel-major
//! ```
//!
//! Readers validate every header field before trusting any length, read
//! sample data in bounded chunks so a crafted header cannot force a huge
//! up-front allocation, and reject trailing bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{GeoTransform, RasterError, RasterStack};

/// Magic bytes opening every raster container.
pub const CONTAINER_MAGIC: &[u8; 4] = b"MSRS";
const CONTAINER_VERSION: u16 = 1;
/// Samples are read in blocks of this many f32s to bound allocation.
const SAMPLE_CHUNK: usize = 1 << 16;

fn format_err<T>(msg: impl Into<String>) -> Result<T, RasterError> {
    Err(RasterError::Format(msg.into()))
}

/// Write a stack to the binary container format. Standardization state and
/// the nodata mask are process metadata and are not persisted.
pub fn write_container(path: &Path, raster: &RasterStack) -> Result<(), RasterError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CONTAINER_MAGIC)?;
    w.write_u16::<LittleEndian>(CONTAINER_VERSION)?;
    w.write_u16::<LittleEndian>(u16::try_from(raster.channels()).map_err(|_| {
        RasterError::Format(format!("too many channels for container: {}", raster.channels()))
    })?)?;
    w.write_u32::<LittleEndian>(u32::try_from(raster.height()).map_err(|_| {
        RasterError::Format(format!("height too large for container: {}", raster.height()))
    })?)?;
    w.write_u32::<LittleEndian>(u32::try_from(raster.width()).map_err(|_| {
        RasterError::Format(format!("width too large for container: {}", raster.width()))
    })?)?;
    let gt = raster.geotransform();
    w.write_f64::<LittleEndian>(gt.origin_x)?;
    w.write_f64::<LittleEndian>(gt.origin_y)?;
    w.write_f64::<LittleEndian>(gt.pixel_size_x)?;
    w.write_f64::<LittleEndian>(gt.pixel_size_y)?;
    w.write_f32::<LittleEndian>(raster.nodata())?;
    for name in raster.channel_names() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| {
            RasterError::Format(format!("channel name too long: {} bytes", bytes.len()))
        })?;
        w.write_u16::<LittleEndian>(len)?;
        w.write_all(bytes)?;
    }
    for &v in raster.data() {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a stack from the binary container format.
pub fn read_container(path: &Path) -> Result<RasterStack, RasterError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let stack = read_container_from(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return format_err("trailing bytes after sample data");
    }
    Ok(stack)
}

/// Decode a container from any reader. Exposed so fuzzing can drive the
/// decoder with in-memory bytes.
pub fn read_container_from<R: Read>(r: &mut R) -> Result<RasterStack, RasterError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return format_err(format!("bad magic {magic:02x?}, expected \"MSRS\""));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != CONTAINER_VERSION {
        return format_err(format!("unsupported version {version}"));
    }
    let channels = r.read_u16::<LittleEndian>()? as usize;
    let height = r.read_u32::<LittleEndian>()? as usize;
    let width = r.read_u32::<LittleEndian>()? as usize;
    if channels == 0 || height == 0 || width == 0 {
        return format_err(format!(
            "degenerate shape: channels={channels} height={height} width={width}"
        ));
    }
    let origin_x = r.read_f64::<LittleEndian>()?;
    let origin_y = r.read_f64::<LittleEndian>()?;
    let pixel_size_x = r.read_f64::<LittleEndian>()?;
    let pixel_size_y = r.read_f64::<LittleEndian>()?;
    if !(origin_x.is_finite() && origin_y.is_finite()) {
        return format_err("non-finite origin");
    }
    if !(pixel_size_x.is_finite() && pixel_size_y.is_finite())
        || pixel_size_x <= 0.0
        || pixel_size_y <= 0.0
    {
        return format_err(format!(
            "pixel sizes must be finite and positive, got ({pixel_size_x}, {pixel_size_y})"
        ));
    }
    let geotransform = GeoTransform::new(origin_x, origin_y, pixel_size_x, pixel_size_y)?;
    let nodata = r.read_f32::<LittleEndian>()?;
    let mut channel_names = Vec::with_capacity(channels);
    for _ in 0..channels {
        let len = r.read_u16::<LittleEndian>()? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let name = String::from_utf8(bytes)
            .map_err(|_| RasterError::Format("channel name is not UTF-8".into()))?;
        channel_names.push(name);
    }
    let total = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| RasterError::Format("sample count overflows".into()))?;
    // Chunked reads: allocation grows with bytes actually present, so a
    // crafted header claiming 4G samples fails fast on a short file.
    let mut data: Vec<f32> = Vec::new();
    let mut remaining = total;
    let mut buf = vec![0u8; SAMPLE_CHUNK.min(total) * 4];
    while remaining > 0 {
        let take = remaining.min(SAMPLE_CHUNK);
        let bytes = &mut buf[..take * 4];
        r.read_exact(bytes)?;
        data.extend(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        remaining -= take;
    }
    RasterStack::new(channels, height, width, data, geotransform, nodata, channel_names)
}

/// Import one channel from a whitespace-separated text matrix: one raster
/// row per line, equal token counts per line, each token a finite float or
/// the literal `NA` (mapped to the nodata sentinel). Blank lines and `#`
/// comment lines are skipped.
pub fn read_text_matrix(
    path: &Path,
    geotransform: GeoTransform,
    nodata: f32,
    channel_name: &str,
) -> Result<RasterStack, RasterError> {
    let text = std::fs::read_to_string(path)?;
    parse_text_matrix(&text, geotransform, nodata, channel_name)
}

/// Parse a text matrix from a string. Exposed for fuzzing.
pub fn parse_text_matrix(
    text: &str,
    geotransform: GeoTransform,
    nodata: f32,
    channel_name: &str,
) -> Result<RasterStack, RasterError> {
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            if tok == "NA" {
                row.push(nodata);
                continue;
            }
            let v: f32 = tok.parse().map_err(|_| {
                RasterError::Format(format!("line {}: bad token {tok:?}", lineno + 1))
            })?;
            if !v.is_finite() {
                return format_err(format!("line {}: non-finite value {tok:?}", lineno + 1));
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return format_err(format!(
                    "line {}: {} values, expected {w}",
                    lineno + 1,
                    row.len()
                ));
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = match width {
        Some(w) if w > 0 && !rows.is_empty() => w,
        _ => return format_err("matrix has no values"),
    };
    let height = rows.len();
    let data: Vec<f32> = rows.into_iter().flatten().collect();
    RasterStack::new(
        1,
        height,
        width,
        data,
        geotransform,
        nodata,
        vec![channel_name.to_string()],
    )
}
