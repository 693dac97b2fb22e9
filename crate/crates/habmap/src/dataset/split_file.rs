//! Text serialization for [`SplitResult`]: a small line-oriented format
//! listing the seed, split parameters, and the three id lists.
//!
//! ```text
//! habmap-split v1
//! rng chacha8
//! seed 42
//! patch_size 49
//! pixel_size 10
//! train 3
//! a
//! b
//! c
//! test 1
//! d
//! dropped 0
//! ```

use std::path::Path;

use super::{DatasetError, SplitResult};
use crate::rng::RNG_ALGORITHM;

const HEADER: &str = "habmap-split v1";
/// Upper bound on accepted id-list lengths; a text split file beyond this
/// is corrupt, not large.
const MAX_IDS: usize = 10_000_000;

fn err<T>(msg: impl Into<String>) -> Result<T, DatasetError> {
    Err(DatasetError::SplitFormat(msg.into()))
}

/// Render a split to its text form.
pub fn format_split(split: &SplitResult) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&format!("rng {RNG_ALGORITHM}\n"));
    out.push_str(&format!("seed {}\n", split.seed));
    out.push_str(&format!("patch_size {}\n", split.patch_size));
    out.push_str(&format!("pixel_size {}\n", split.pixel_size));
    for (section, ids) in [
        ("train", &split.train_ids),
        ("test", &split.test_ids),
        ("dropped", &split.dropped_ids),
    ] {
        out.push_str(&format!("{section} {}\n", ids.len()));
        for id in ids {
            out.push_str(id);
            out.push('\n');
        }
    }
    out
}

pub fn write_split(path: &Path, split: &SplitResult) -> Result<(), DatasetError> {
    std::fs::write(path, format_split(split))?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<SplitResult, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    parse_split(&text)
}

fn field<'a>(
    lines: &mut std::str::Lines<'a>,
    key: &str,
) -> Result<&'a str, DatasetError> {
    let line = match lines.next() {
        Some(l) => l,
        None => return err(format!("missing field {key:?}")),
    };
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok(v),
        _ => err(format!("expected field {key:?}, got line {line:?}")),
    }
}

fn read_section(
    lines: &mut std::str::Lines<'_>,
    name: &str,
) -> Result<Vec<String>, DatasetError> {
    let count: usize = match field(lines, name)?.parse() {
        Ok(v) if v <= MAX_IDS => v,
        _ => return err(format!("bad {name} count")),
    };
    let mut ids = Vec::new();
    for i in 0..count {
        match lines.next() {
            Some(id) if !id.is_empty() && !id.contains(' ') => ids.push(id.to_string()),
            Some(id) => return err(format!("bad id {id:?} in section {name}")),
            None => return err(format!("section {name} truncated at {i} of {count}")),
        }
    }
    Ok(ids)
}

/// Parse the text form back into a [`SplitResult`]. Exposed for fuzzing.
pub fn parse_split(text: &str) -> Result<SplitResult, DatasetError> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return err(format!("missing header {HEADER:?}"));
    }
    let rng = field(&mut lines, "rng")?;
    if rng != RNG_ALGORITHM {
        return err(format!("unsupported rng {rng:?}"));
    }
    let seed: u64 = match field(&mut lines, "seed")?.parse() {
        Ok(v) => v,
        Err(_) => return err("bad seed"),
    };
    let patch_size: usize = match field(&mut lines, "patch_size")?.parse() {
        Ok(v) if v % 2 == 1 => v,
        _ => return err("bad patch_size (must be odd)"),
    };
    let pixel_size: f64 = match field(&mut lines, "pixel_size")?.parse() {
        Ok(v) if v > 0.0 => v,
        _ => return err("bad pixel_size (must be > 0)"),
    };
    let train_ids = read_section(&mut lines, "train")?;
    let test_ids = read_section(&mut lines, "test")?;
    let dropped_ids = read_section(&mut lines, "dropped")?;
    if lines.next().is_some() {
        return err("trailing lines after dropped section");
    }
    Ok(SplitResult {
        train_ids,
        test_ids,
        dropped_ids,
        seed,
        patch_size,
        pixel_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SplitResult {
        SplitResult {
            train_ids: vec!["a".into(), "b".into(), "c".into()],
            test_ids: vec!["d".into()],
            dropped_ids: vec![],
            seed: 42,
            patch_size: 49,
            pixel_size: 10.0,
        }
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.txt");
        let s = sample();
        write_split(&p, &s).unwrap();
        assert_eq!(read_split(&p).unwrap(), s);
        // writing again is byte-identical
        let bytes = std::fs::read(&p).unwrap();
        write_split(&p, &s).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_split("").is_err());
        assert!(parse_split("wrong header\n").is_err());
        let good = format_split(&sample());
        assert!(parse_split(&good.replace("seed 42", "seed x")).is_err());
        assert!(parse_split(&good.replace("patch_size 49", "patch_size 48")).is_err());
        assert!(parse_split(&good.replace("train 3", "train 4")).is_err());
        assert!(parse_split(&(good.clone() + "extra\n")).is_err());
        assert!(parse_split(&good.replace("rng chacha8", "rng mt19937")).is_err());
    }
}
