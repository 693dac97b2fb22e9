//! Binary archive of extracted patches with optional center-pixel labels.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     4 bytes  "PTCH"
//! version   u16      currently 1
//! channels  u16      > 0
//! size      u16      odd patch side
//! count     u32
//! per patch:
//!   id_len  u16, id bytes (UTF-8)
//!   class   i32      class index, or -1 for unlabeled
//!   nodata_fraction f32
//!   values  channels * size * size x f32
//! ```
//!
//! The reader bounds every allocation by bytes actually present, so a
//! crafted header cannot force a huge up-front allocation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::DatasetError;
use crate::raster::Patch;

pub const PATCH_MAGIC: &[u8; 4] = b"PTCH";
const VERSION: u16 = 1;
const VALUE_CHUNK: usize = 1 << 14;

fn err<T>(msg: impl Into<String>) -> Result<T, DatasetError> {
    Err(DatasetError::ArchiveFormat(msg.into()))
}

/// Write patches to an archive. All patches must share channel count and
/// size; labels come from `Patch::center_class` (absent → unlabeled).
pub fn write_patch_archive(path: &Path, patches: &[Patch]) -> Result<(), DatasetError> {
    let first = match patches.first() {
        Some(p) => p,
        None => return err("archive must contain at least one patch"),
    };
    let channels = first.channels();
    let size = first.size();
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(PATCH_MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u16::<LittleEndian>(channels as u16)?;
    w.write_u16::<LittleEndian>(size as u16)?;
    w.write_u32::<LittleEndian>(
        u32::try_from(patches.len())
            .map_err(|_| DatasetError::ArchiveFormat("too many patches".into()))?,
    )?;
    for (i, p) in patches.iter().enumerate() {
        if p.channels() != channels || p.size() != size {
            return err(format!(
                "patch {i} has shape ({}, {}), archive is ({channels}, {size})",
                p.channels(),
                p.size()
            ));
        }
        let id = p.source_point.as_deref().unwrap_or("");
        let id_bytes = id.as_bytes();
        let id_len = u16::try_from(id_bytes.len())
            .map_err(|_| DatasetError::ArchiveFormat(format!("patch {i} id too long")))?;
        w.write_u16::<LittleEndian>(id_len)?;
        w.write_all(id_bytes)?;
        let class = match p.center_class {
            Some(c) => i32::try_from(c)
                .map_err(|_| DatasetError::ArchiveFormat(format!("patch {i} class out of range")))?,
            None => -1,
        };
        w.write_i32::<LittleEndian>(class)?;
        w.write_f32::<LittleEndian>(p.nodata_fraction())?;
        for &v in p.values() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_patch_archive(path: &Path) -> Result<Vec<Patch>, DatasetError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let patches = read_patch_archive_from(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return err("trailing bytes after last patch");
    }
    Ok(patches)
}

/// Decode an archive from any reader. Exposed for fuzzing.
pub fn read_patch_archive_from<R: Read>(r: &mut R) -> Result<Vec<Patch>, DatasetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PATCH_MAGIC {
        return err(format!("bad magic {magic:02x?}"));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return err(format!("unsupported version {version}"));
    }
    let channels = r.read_u16::<LittleEndian>()? as usize;
    let size = r.read_u16::<LittleEndian>()? as usize;
    if channels == 0 || size == 0 || size % 2 == 0 {
        return err(format!("bad patch shape ({channels}, {size})"));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let values_per_patch = match channels.checked_mul(size).and_then(|n| n.checked_mul(size)) {
        Some(n) => n,
        None => return err("patch value count overflows"),
    };
    let mut patches = Vec::new();
    for i in 0..count {
        let id_len = r.read_u16::<LittleEndian>()? as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes)?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| DatasetError::ArchiveFormat(format!("patch {i} id is not UTF-8")))?;
        let class = r.read_i32::<LittleEndian>()?;
        if class < -1 {
            return err(format!("patch {i} has invalid class {class}"));
        }
        let nodata_fraction = r.read_f32::<LittleEndian>()?;
        if !(0.0..=1.0).contains(&nodata_fraction) {
            return err(format!("patch {i} nodata_fraction {nodata_fraction} out of [0,1]"));
        }
        let mut values: Vec<f32> = Vec::new();
        let mut remaining = values_per_patch;
        let mut buf = vec![0u8; VALUE_CHUNK.min(values_per_patch.max(1)) * 4];
        while remaining > 0 {
            let take = remaining.min(VALUE_CHUNK);
            let bytes = &mut buf[..take * 4];
            r.read_exact(bytes)?;
            values.extend(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
            remaining -= take;
        }
        let mut patch = Patch::from_parts_unchecked(channels, size, values, nodata_fraction);
        patch.center_class = (class >= 0).then_some(class as usize);
        patch.source_point = (!id.is_empty()).then_some(id);
        patches.push(patch);
    }
    Ok(patches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_patches() -> Vec<Patch> {
        let mut a = Patch::new(2, 3, (0..18).map(|i| i as f32 * 0.1).collect(), 0.0).unwrap();
        a.center_class = Some(4);
        a.source_point = Some("p001".into());
        let mut b = Patch::new(2, 3, vec![1.5; 18], 0.25).unwrap();
        b.center_class = None;
        b.source_point = Some("p002".into());
        vec![a, b]
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("patches.bin");
        let patches = sample_patches();
        write_patch_archive(&p, &patches).unwrap();
        let back = read_patch_archive(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].values(), patches[0].values());
        assert_eq!(back[0].center_class, Some(4));
        assert_eq!(back[0].source_point.as_deref(), Some("p001"));
        assert_eq!(back[1].center_class, None);
        assert_eq!(back[1].nodata_fraction(), 0.25);
        // byte-stable rewrite
        let bytes = std::fs::read(&p).unwrap();
        write_patch_archive(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn rejects_mixed_shapes_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("patches.bin");
        let mut patches = sample_patches();
        patches.push(Patch::new(2, 5, vec![0.0; 50], 0.0).unwrap());
        assert!(write_patch_archive(&p, &patches).is_err());

        write_patch_archive(&p, &sample_patches()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'Q';
        assert!(read_patch_archive_from(&mut bytes.as_slice()).is_err());

        let bytes = std::fs::read(&p).unwrap();
        let truncated = &bytes[..bytes.len() - 5];
        assert!(read_patch_archive_from(&mut &truncated[..]).is_err());

        // claimed count far beyond actual data must fail, not allocate
        let mut huge = bytes.clone();
        huge[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(read_patch_archive_from(&mut huge.as_slice()).is_err());
    }
}
