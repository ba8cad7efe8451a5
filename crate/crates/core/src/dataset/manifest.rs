use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Largest valid JRD label (QP 63).
pub const MAX_JRD: u8 = 63;

/// COCO object-size buckets by box area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    /// `small < 32^2 <= medium < 96^2 <= large`
    pub fn from_area(area: f64) -> Self {
        if area < 32.0 * 32.0 {
            SizeClass::Small
        } else if area < 96.0 * 96.0 {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        })
    }
}

/// One object crop and its ground-truth JRD.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectRecord {
    pub object_id: String,
    pub source_image_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image_path: String,
    pub bbox: BBox,
    pub jrd: u8,
    pub category: String,
    pub size_class: SizeClass,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    object_id: String,
    source_image_id: String,
    image_path: String,
    bbox: BBox,
    jrd: i64,
    category: String,
    #[serde(default)]
    size_class: Option<SizeClass>,
}

impl ObjectRecord {
    pub fn new(
        object_id: impl Into<String>,
        source_image_id: impl Into<String>,
        image_path: impl Into<String>,
        bbox: BBox,
        jrd: u8,
        category: impl Into<String>,
    ) -> Result<Self> {
        bbox.validate()?;
        if jrd > MAX_JRD {
            return Err(Error::validation(
                None,
                format!("jrd {jrd} outside [0, {MAX_JRD}]"),
            ));
        }
        Ok(Self {
            object_id: object_id.into(),
            source_image_id: source_image_id.into(),
            image_path: image_path.into(),
            bbox,
            jrd,
            category: category.into(),
            size_class: SizeClass::from_area(bbox.area()),
        })
    }

    fn from_raw(raw: RawRecord, line: usize) -> Result<Self> {
        let err = |msg: String| Error::validation(Some(line), msg);
        if !(0..=MAX_JRD as i64).contains(&raw.jrd) {
            return Err(err(format!("jrd {} outside [0, {MAX_JRD}]", raw.jrd)));
        }
        raw.bbox.validate().map_err(|e| err(e.to_string()))?;
        let derived = SizeClass::from_area(raw.bbox.area());
        if let Some(given) = raw.size_class {
            if given != derived {
                return Err(err(format!(
                    "size_class {given} disagrees with bbox area {} ({derived})",
                    raw.bbox.area()
                )));
            }
        }
        Ok(Self {
            object_id: raw.object_id,
            source_image_id: raw.source_image_id,
            image_path: raw.image_path,
            bbox: raw.bbox,
            jrd: raw.jrd as u8,
            category: raw.category,
            size_class: derived,
        })
    }

    pub fn resolve_image_path(&self, base_dir: &Path) -> PathBuf {
        let p = Path::new(&self.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}

/// Parses JSON-lines records; blank lines are skipped.
pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<ObjectRecord>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::validation(Some(lineno), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::validation(Some(lineno), format!("malformed record: {e}")))?;
        let rec = ObjectRecord::from_raw(raw, lineno)?;
        if !ids.insert(rec.object_id.clone()) {
            return Err(Error::validation(
                Some(lineno),
                format!("duplicate object_id {}", rec.object_id),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ObjectRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(f))
}

pub fn write_manifest(records: &[ObjectRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(jrd: i64, bbox: &str) -> String {
        format!(
            r#"{{"object_id":"o1","source_image_id":"s1","image_path":"a.png","bbox":{bbox},"jrd":{jrd},"category":"car"}}"#
        )
    }

    #[test]
    fn empty_manifest_is_empty() {
        assert!(parse_manifest("".as_bytes()).unwrap().is_empty());
        assert!(parse_manifest("\n\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn size_class_from_area() {
        let recs = parse_manifest(line(30, "[10,10,74,74]").as_bytes()).unwrap();
        assert_eq!(recs[0].size_class, SizeClass::Medium);
        assert_eq!(SizeClass::from_area(31.0 * 31.0), SizeClass::Small);
        assert_eq!(SizeClass::from_area(96.0 * 96.0), SizeClass::Large);
    }

    #[test]
    fn jrd_boundary() {
        assert!(parse_manifest(line(63, "[0,0,4,4]").as_bytes()).is_ok());
        let err = parse_manifest(line(64, "[0,0,4,4]").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation { line: Some(1), .. }));
        assert!(parse_manifest(line(-1, "[0,0,4,4]").as_bytes()).is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", line(3, "[0,0,4,4]"));
        match parse_manifest(text.as_bytes()).unwrap_err() {
            Error::Validation { line, .. } => assert_eq!(line, Some(2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicates_and_inconsistent_size_class_rejected() {
        let text = format!("{}\n{}\n", line(3, "[0,0,4,4]"), line(4, "[0,0,4,4]"));
        assert!(parse_manifest(text.as_bytes()).is_err());
        let bad = line(3, "[0,0,4,4]").replace("}", r#","size_class":"large"}"#);
        assert!(parse_manifest(bad.as_bytes()).is_err());
        assert!(parse_manifest(line(3, "[5,0,4,4]").as_bytes()).is_err());
    }

    #[test]
    fn write_then_parse() {
        let r = ObjectRecord::new(
            "x",
            "s",
            "img.png",
            BBox::new(1.0, 2.0, 50.0, 60.0),
            33,
            "dog",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_manifest(&[r.clone()], &mut buf).unwrap();
        assert_eq!(parse_manifest(buf.as_slice()).unwrap(), vec![r]);
    }
}
