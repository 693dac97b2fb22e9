//! Versioned binary network files.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "NNET" | version u16
//! in_channels u16 | n_stages u16 | widths u16 × n_stages
//! blocks_per_stage u16 | n_classes u16 | downsample u8 | conv_frozen u8
//! then, in declaration order (stem, stages, head):
//!   per parameter tensor: trainable u8 | ndim u8 | dims u32 × ndim | f32 data
//!   per normalization layer, after its β tensor: running mean f64 × C | running var f64 × C
//! ```
//!
//! Tensor dimensions are validated against the architecture implied by the
//! config before any data is read, so a crafted file cannot request
//! allocations beyond what its own header's (capped) config implies; data
//! is read in bounded chunks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::layers::{BatchNorm2d, Conv2d};
use super::tensor::Param;
use super::{Network, NetworkConfig, NnetError};

pub const NETWORK_MAGIC: &[u8; 4] = b"NNET";
pub const NETWORK_VERSION: u16 = 1;

const MAX_CHANNELS: usize = 1024;
const MAX_STAGES: usize = 8;
const MAX_BLOCKS: usize = 8;
const MAX_CLASSES: usize = 1024;
/// Values per read chunk; bounds transient allocation on truncated input.
const VALUE_CHUNK: usize = 1 << 14;

fn write_param<W: Write>(w: &mut W, p: &Param<f32>) -> Result<(), NnetError> {
    w.write_u8(p.trainable as u8)?;
    let shape = p.value.shape();
    w.write_u8(shape.len() as u8)?;
    for &d in shape {
        w.write_u32::<LE>(u32::try_from(d).map_err(|_| {
            NnetError::InvalidConfig(format!("dimension {d} not representable in file"))
        })?)?;
    }
    for v in p.value.data() {
        w.write_f32::<LE>(*v)?;
    }
    Ok(())
}

fn write_conv<W: Write>(w: &mut W, conv: &Conv2d<f32>) -> Result<(), NnetError> {
    write_param(w, &conv.weight)
}

fn write_bn<W: Write>(w: &mut W, bn: &BatchNorm2d<f32>) -> Result<(), NnetError> {
    write_param(w, &bn.gamma)?;
    write_param(w, &bn.beta)?;
    for v in &bn.running_mean {
        w.write_f64::<LE>(*v)?;
    }
    for v in &bn.running_var {
        w.write_f64::<LE>(*v)?;
    }
    Ok(())
}

/// Serialize a network; byte-identical output for identical weights.
pub fn write_network(path: impl AsRef<Path>, net: &Network<f32>) -> Result<(), NnetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network_to(&mut w, net)?;
    w.flush()?;
    Ok(())
}

/// Serialize a network to any writer.
pub fn write_network_to<W: Write>(mut w: W, net: &Network<f32>) -> Result<(), NnetError> {
    let c = net.config();
    let caps_ok = c.in_channels <= MAX_CHANNELS
        && c.stage_widths.len() <= MAX_STAGES
        && c.stage_widths.iter().all(|&w| w <= MAX_CHANNELS)
        && c.blocks_per_stage <= MAX_BLOCKS
        && c.n_classes <= MAX_CLASSES;
    if !caps_ok {
        return Err(NnetError::InvalidConfig(
            "architecture exceeds the file format's size caps".into(),
        ));
    }
    w.write_all(NETWORK_MAGIC)?;
    w.write_u16::<LE>(NETWORK_VERSION)?;
    w.write_u16::<LE>(c.in_channels as u16)?;
    w.write_u16::<LE>(c.stage_widths.len() as u16)?;
    for &width in &c.stage_widths {
        w.write_u16::<LE>(width as u16)?;
    }
    w.write_u16::<LE>(c.blocks_per_stage as u16)?;
    w.write_u16::<LE>(c.n_classes as u16)?;
    w.write_u8(c.downsample as u8)?;
    w.write_u8(net.conv_frozen() as u8)?;

    write_conv(&mut w, &net.stem_conv)?;
    write_bn(&mut w, &net.stem_bn)?;
    for stage in &net.stages {
        for block in stage {
            write_conv(&mut w, &block.conv1)?;
            write_bn(&mut w, &block.bn1)?;
            write_conv(&mut w, &block.conv2)?;
            write_bn(&mut w, &block.bn2)?;
            if let Some((conv, bn)) = &block.proj {
                write_conv(&mut w, conv)?;
                write_bn(&mut w, bn)?;
            }
        }
    }
    write_param(&mut w, &net.head.weight)?;
    write_param(&mut w, &net.head.bias)?;
    Ok(())
}

/// Hex SHA-256 of the network's serialized bytes. Identifies a model in
/// derived artifacts (pseudo-label sets, run manifests).
pub fn network_digest(net: &Network<f32>) -> Result<String, NnetError> {
    use sha2::{Digest, Sha256};
    let mut bytes = Vec::new();
    write_network_to(&mut bytes, net)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn read_f32_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, NnetError> {
    let mut out = Vec::new();
    let mut remaining = n;
    let mut buf = vec![0u8; VALUE_CHUNK.min(n.max(1)) * 4];
    while remaining > 0 {
        let take = remaining.min(VALUE_CHUNK);
        let bytes = &mut buf[..take * 4];
        r.read_exact(bytes)?;
        out.extend(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        remaining -= take;
    }
    Ok(out)
}

fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, NnetError> {
    let mut out = Vec::with_capacity(n.min(VALUE_CHUNK));
    for _ in 0..n {
        out.push(r.read_f64::<LE>()?);
    }
    Ok(out)
}

fn read_flag<R: Read>(r: &mut R, what: &str) -> Result<bool, NnetError> {
    match r.read_u8()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(NnetError::InvalidFile(format!("{what} flag must be 0 or 1, got {v}"))),
    }
}

fn read_param_into<R: Read>(r: &mut R, p: &mut Param<f32>) -> Result<(), NnetError> {
    let trainable = read_flag(r, "trainable")?;
    let ndim = r.read_u8()? as usize;
    let expected = p.value.shape().to_vec();
    if ndim != expected.len() {
        return Err(NnetError::InvalidFile(format!(
            "tensor rank {ndim} does not match architecture rank {}",
            expected.len()
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.read_u32::<LE>()? as usize);
    }
    if dims != expected {
        return Err(NnetError::InvalidFile(format!(
            "tensor shape {dims:?} does not match architecture shape {expected:?}"
        )));
    }
    let data = read_f32_vec(r, p.value.numel())?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(NnetError::InvalidFile("non-finite parameter value".into()));
    }
    p.value.data_mut().copy_from_slice(&data);
    p.trainable = trainable;
    Ok(())
}

fn read_conv_into<R: Read>(r: &mut R, conv: &mut Conv2d<f32>) -> Result<(), NnetError> {
    read_param_into(r, &mut conv.weight)
}

fn read_bn_into<R: Read>(r: &mut R, bn: &mut BatchNorm2d<f32>) -> Result<(), NnetError> {
    read_param_into(r, &mut bn.gamma)?;
    read_param_into(r, &mut bn.beta)?;
    let mean = read_f64_vec(r, bn.channels)?;
    let var = read_f64_vec(r, bn.channels)?;
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(NnetError::InvalidFile("non-finite running mean".into()));
    }
    if var.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(NnetError::InvalidFile("running variance must be finite and ≥ 0".into()));
    }
    bn.running_mean = mean;
    bn.running_var = var;
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<(NetworkConfig, bool), NnetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NETWORK_MAGIC {
        return Err(NnetError::InvalidFile(format!("bad magic {magic:?}")));
    }
    let version = r.read_u16::<LE>()?;
    if version != NETWORK_VERSION {
        return Err(NnetError::InvalidFile(format!("unsupported version {version}")));
    }
    let in_channels = r.read_u16::<LE>()? as usize;
    if in_channels == 0 || in_channels > MAX_CHANNELS {
        return Err(NnetError::InvalidFile(format!("in_channels {in_channels} out of range")));
    }
    let n_stages = r.read_u16::<LE>()? as usize;
    if n_stages == 0 || n_stages > MAX_STAGES {
        return Err(NnetError::InvalidFile(format!("stage count {n_stages} out of range")));
    }
    let mut stage_widths = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let width = r.read_u16::<LE>()? as usize;
        if width == 0 || width > MAX_CHANNELS {
            return Err(NnetError::InvalidFile(format!("stage width {width} out of range")));
        }
        stage_widths.push(width);
    }
    let blocks_per_stage = r.read_u16::<LE>()? as usize;
    if blocks_per_stage == 0 || blocks_per_stage > MAX_BLOCKS {
        return Err(NnetError::InvalidFile(format!(
            "blocks_per_stage {blocks_per_stage} out of range"
        )));
    }
    let n_classes = r.read_u16::<LE>()? as usize;
    if n_classes < 2 || n_classes > MAX_CLASSES {
        return Err(NnetError::InvalidFile(format!("n_classes {n_classes} out of range")));
    }
    let downsample = read_flag(r, "downsample")?;
    let frozen = read_flag(r, "conv_frozen")?;
    Ok((
        NetworkConfig { in_channels, stage_widths, blocks_per_stage, n_classes, downsample },
        frozen,
    ))
}

/// Deserialize a network from a reader. Shapes are dictated by the file's
/// own config; any disagreement with the stored tensors is rejected.
pub fn read_network_from<R: Read>(r: &mut R) -> Result<Network<f32>, NnetError> {
    let (config, frozen) = read_config(r)?;
    let mut net = Network::new(config, 0)?;
    read_conv_into(r, &mut net.stem_conv)?;
    read_bn_into(r, &mut net.stem_bn)?;
    for stage in &mut net.stages {
        for block in stage {
            read_conv_into(r, &mut block.conv1)?;
            read_bn_into(r, &mut block.bn1)?;
            read_conv_into(r, &mut block.conv2)?;
            read_bn_into(r, &mut block.bn2)?;
            if let Some((conv, bn)) = &mut block.proj {
                read_conv_into(r, conv)?;
                read_bn_into(r, bn)?;
            }
        }
    }
    read_param_into(r, &mut net.head.weight)?;
    read_param_into(r, &mut net.head.bias)?;
    net.set_conv_frozen_flag(frozen);
    Ok(net)
}

/// Read a network file, rejecting trailing bytes.
pub fn read_network(path: impl AsRef<Path>) -> Result<Network<f32>, NnetError> {
    let mut r = BufReader::new(File::open(path)?);
    let net = read_network_from(&mut r)?;
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => Ok(net),
        _ => Err(NnetError::InvalidFile("trailing bytes after network".into())),
    }
}
