//! Name matching between prediction and ground-truth directories.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

const RASTER_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Raster files in `dir` keyed by stem with the first matching suffix
/// removed. On a key collision the earlier suffix in `suffixes` wins, and any
/// suffixed file wins over a bare one. Stems ending in one of `ignore` are
/// skipped.
pub fn keyed_rasters(dir: &Path, suffixes: &[&str], ignore: &[&str]) -> io::Result<BTreeMap<String, PathBuf>> {
    let mut out: BTreeMap<String, (usize, PathBuf)> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let is_raster = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| RASTER_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_raster || !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        if ignore.iter().any(|i| stem.ends_with(i)) {
            continue;
        }
        let (key, rank) = suffixes
            .iter()
            .enumerate()
            .find_map(|(rank, suf)| stem.strip_suffix(suf).map(|k| (k.to_string(), rank)))
            .unwrap_or((stem, suffixes.len()));
        let better = match out.get(&key) {
            None => true,
            Some((r, existing)) => rank < *r || (rank == *r && path < *existing),
        };
        if better {
            out.insert(key, (rank, path));
        }
    }
    Ok(out.into_iter().map(|(k, (_, p))| (k, p)).collect())
}

/// Matched pairs plus the keys present on only one side.
#[derive(Debug, Default, PartialEq)]
pub struct Pairing {
    pub pairs: Vec<(String, PathBuf, PathBuf)>,
    pub unmatched: Vec<String>,
}

pub fn pair(pred: &BTreeMap<String, PathBuf>, gt: &BTreeMap<String, PathBuf>) -> Pairing {
    let mut out = Pairing::default();
    for (key, p) in pred {
        match gt.get(key) {
            Some(g) => out.pairs.push((key.clone(), p.clone(), g.clone())),
            None => out.unmatched.push(format!("{} (no ground truth)", p.display())),
        }
    }
    for (key, g) in gt {
        if !pred.contains_key(key) {
            out.unmatched.push(format!("{} (no prediction)", g.display()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, names: &[&str]) {
        for n in names {
            std::fs::write(dir.join(n), b"x").unwrap();
        }
    }

    #[test]
    fn suffixes_and_ignores() {
        let d = tempfile::tempdir().unwrap();
        touch(
            d.path(),
            &["a_sal.png", "a_bnd.png", "b.png", "c.txt", "d_sal.pgm", "d.png", "e.png", "e_mask.png", "e_sal.png"],
        );
        let m = keyed_rasters(d.path(), &["_sal", "_mask"], &["_bnd"]).unwrap();
        let keys: Vec<_> = m.keys().cloned().collect();
        assert_eq!(keys, ["a", "b", "d", "e"]);
        assert!(m["d"].ends_with("d_sal.pgm"));
        assert!(m["e"].ends_with("e_sal.png"));
        let g = keyed_rasters(d.path(), &["_mask"], &["_bnd", "_sal"]).unwrap();
        assert!(g["e"].ends_with("e_mask.png"));
        assert!(!g.contains_key("a"));
    }

    #[test]
    fn pairing_reports_both_sides() {
        let pred = BTreeMap::from([("a".to_string(), PathBuf::from("p/a")), ("b".into(), "p/b".into())]);
        let gt = BTreeMap::from([("b".to_string(), PathBuf::from("g/b")), ("c".into(), "g/c".into())]);
        let p = pair(&pred, &gt);
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.unmatched.len(), 2);
    }
}
