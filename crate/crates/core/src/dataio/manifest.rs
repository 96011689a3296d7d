//! Dataset manifests: one `clip_id<TAB>path<TAB>N<TAB>p` record per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Clip directory, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub frames: usize,
    pub p: usize,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{}\t{}\t{}\t{}", e.clip_id, e.path.display(), e.frames, e.p).expect("string write");
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                bail!(Format, "manifest line {}: expected 4 tab-separated fields, got {}", i + 1, cols.len());
            }
            let num = |s: &str, what: &str| {
                s.parse::<usize>()
                    .map_err(|_| crate::Error::Format(format!("manifest line {}: bad {what} {s:?}", i + 1)))
            };
            Ok(ManifestEntry {
                clip_id: cols[0].to_string(),
                path: PathBuf::from(cols[1]),
                frames: num(cols[2], "frame count")?,
                p: num(cols[3], "frame side")?,
            })
        })
        .collect()
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    fs::write(path, format_manifest(entries))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    parse_manifest(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let e = vec![
            ManifestEntry { clip_id: "c0".into(), path: "clips/c0".into(), frames: 8, p: 32 },
            ManifestEntry { clip_id: "c1".into(), path: "/abs/c1".into(), frames: 4, p: 16 },
        ];
        assert_eq!(parse_manifest(&format_manifest(&e)).unwrap(), e);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse_manifest("a\tb\t3").is_err());
        assert!(parse_manifest("a\tb\tx\t32").is_err());
    }
}
