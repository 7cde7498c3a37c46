//! Tab-separated dataset manifests.
//!
//! One record per line: `image  audio  mask_func  mask_dep|-  category`.
//! Relative paths resolve against the manifest's directory. Blank lines and
//! lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::sample::Category;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_path: PathBuf,
    pub audio_path: PathBuf,
    pub mask_func_path: PathBuf,
    pub mask_dep_path: Option<PathBuf>,
    pub category: Category,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serialises the manifest with paths relative to `root` when possible.
    pub fn to_tsv(&self) -> String {
        let rel = |p: &Path| -> String {
            p.strip_prefix(&self.root)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let mut out = String::new();
        for r in &self.records {
            let dep = r.mask_dep_path.as_deref().map(rel).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                rel(&r.image_path),
                rel(&r.audio_path),
                rel(&r.mask_func_path),
                dep,
                r.category
            ));
        }
        out
    }
}

pub fn parse_manifest(path: &Path) -> Result<Manifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    parse_manifest_str(&text, &root)
}

pub fn parse_manifest_str(text: &str, root: &Path) -> Result<Manifest> {
    let resolve = |field: &str| -> PathBuf {
        let p = Path::new(field);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::MalformedRecord {
                line: line_no,
                reason: format!("expected 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let category = Category::parse(fields[4]).map_err(|_| Error::MalformedRecord {
            line: line_no,
            reason: format!("bad category {:?}", fields[4]),
        })?;
        let image_path = resolve(fields[0]);
        let audio_path = resolve(fields[1]);
        let mask_func_path = resolve(fields[2]);
        let mask_dep_path = match fields[3].trim() {
            "-" => None,
            p => Some(resolve(p)),
        };
        for p in [&image_path, &audio_path, &mask_func_path]
            .into_iter()
            .chain(mask_dep_path.as_ref())
        {
            if !p.is_file() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        if !seen.insert((image_path.clone(), audio_path.clone())) {
            return Err(Error::MalformedRecord {
                line: line_no,
                reason: "duplicate (image, audio) pair".into(),
            });
        }
        records.push(ManifestRecord {
            image_path,
            audio_path,
            mask_func_path,
            mask_dep_path,
            category,
        });
    }
    Ok(Manifest {
        records,
        root: root.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"x").unwrap();
    }

    #[test]
    fn empty_manifest_has_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "").unwrap();
        assert_eq!(parse_manifest(&p).unwrap().len(), 0);
    }

    #[test]
    fn missing_mask_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        touch(dir.path(), "a.wav");
        let p = dir.path().join("m.tsv");
        fs::write(&p, "a.png\ta.wav\tnope.png\t-\tcut@knife\n").unwrap();
        match parse_manifest(&p) {
            Err(Error::MissingFile(f)) => assert!(f.ends_with("nope.png")),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn malformed_records() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.png", "a.wav", "m.png"] {
            touch(dir.path(), f);
        }
        let r = parse_manifest_str("a.png\ta.wav\tm.png\t-\n", dir.path());
        assert!(matches!(r, Err(Error::MalformedRecord { line: 1, .. })));
        let r = parse_manifest_str("a.png\ta.wav\tm.png\t-\tknife\n", dir.path());
        assert!(matches!(r, Err(Error::MalformedRecord { .. })));
        let r = parse_manifest_str(
            "a.png\ta.wav\tm.png\t-\tcut@knife\na.png\ta.wav\tm.png\t-\tcut@knife\n",
            dir.path(),
        );
        assert!(matches!(r, Err(Error::MalformedRecord { line: 2, .. })));
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.png", "a.wav", "m.png", "d.png"] {
            touch(dir.path(), f);
        }
        let text = "# comment\na.png\ta.wav\tm.png\td.png\tcut@knife\n\n";
        let m = parse_manifest_str(text, dir.path()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.records[0].mask_dep_path.as_deref(), Some(dir.path().join("d.png").as_path()));
        let again = parse_manifest_str(&m.to_tsv(), dir.path()).unwrap();
        assert_eq!(again.records, m.records);
    }
}
