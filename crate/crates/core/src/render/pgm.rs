//! PGM mask files: binary P5 (maxval 255, threshold 128) for ground truth,
//! plain-text P2 for debug dumps.

use std::io::Write;
use std::path::Path;

use super::BinaryMask;
use crate::error::{Error, Result};

pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    bytes.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0u8 }));
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |msg: &str| Error::InvalidArgument(format!("{}: {msg}", path.display()));

    // header: magic, width, height, maxval as whitespace-separated tokens
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(&bytes[start..pos]);
    }
    if tokens[0] != b"P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |t: &[u8]| -> Result<usize> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))
    };
    let width = parse(tokens[1])?;
    let height = parse(tokens[2])?;
    let maxval = parse(tokens[3])?;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + width * height {
        return Err(bad("truncated pixel data"));
    }
    let data = bytes[pos..pos + width * height]
        .iter()
        .map(|&b| b >= 128)
        .collect();
    Ok(BinaryMask {
        width,
        height,
        data,
    })
}

/// Debug dump of a soft occupancy map as text PGM.
pub fn write_soft_pgm_text(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    debug_assert_eq!(values.len(), width * height);
    let mut out = Vec::new();
    writeln!(out, "P2\n{width} {height}\n255").expect("in-memory write");
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|v| format!("{}", (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        writeln!(out, "{}", line.join(" ")).expect("in-memory write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
