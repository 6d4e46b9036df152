//! Line-based dataset manifest.
//!
//! ```text
//! clefov-manifest 1
//! path	patient_id	sequence_id	label	site	domain	fov_radius
//! A/p00/f000.pgm	A-p00	A-p00-s0	carcinoma	hard-palate	synthetic-A	128
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::frame::{Domain, Frame, Label, Site};
use super::pgm::decode_pgm;
use crate::error::{Error, Result};

pub const MANIFEST_MAGIC: &str = "clefov-manifest";
pub const MANIFEST_VERSION: u32 = 1;
const COLUMNS: [&str; 7] = ["path", "patient_id", "sequence_id", "label", "site", "domain", "fov_radius"];

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub path: String,
    pub patient_id: String,
    pub sequence_id: String,
    pub label: Label,
    pub site: Site,
    pub domain: Domain,
    pub fov_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_MAGIC} {MANIFEST_VERSION}\n{}\n", COLUMNS.join("\t"));
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.path, r.patient_id, r.sequence_id, r.label, r.site, r.domain, r.fov_radius
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Decodes every referenced frame.
    pub fn load_frames(&self) -> Result<Vec<Frame>> {
        self.records
            .iter()
            .map(|r| {
                let file = self.root.join(&r.path);
                let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
                let pgm = decode_pgm(&bytes)?;
                if pgm.widened_from.is_some() {
                    log::warn!("{}: widened from maxval {:?}", r.path, pgm.widened_from);
                }
                Ok(Frame {
                    id: r.path.clone(),
                    width: pgm.width,
                    height: pgm.height,
                    raw: pgm.raw,
                    fov_radius: r.fov_radius,
                    patient_id: r.patient_id.clone(),
                    sequence_id: r.sequence_id.clone(),
                    label: r.label,
                    site: r.site,
                    domain: r.domain,
                })
            })
            .collect()
    }

    /// Frame counts keyed by (domain, label, patient).
    pub fn counts(&self) -> BTreeMap<(Domain, Label, String), usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry((r.domain, r.label, r.patient_id.clone())).or_insert(0) += 1;
        }
        counts
    }
}

/// Parses manifest text; `root` resolves relative frame paths.
pub fn parse_manifest(text: &str, root: &Path, source: &Path, check_files: bool) -> Result<DatasetManifest> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, header)) => {
            let mut parts = header.split_whitespace();
            if parts.next() != Some(MANIFEST_MAGIC) {
                return Err(err(1, format!("expected `{MANIFEST_MAGIC} <version>` header")));
            }
            let version: u32 = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(1, "missing format version".into()))?;
            if version != MANIFEST_VERSION {
                return Err(err(1, format!("unsupported manifest version {version}")));
            }
        }
        None => return Err(err(1, "empty manifest file".into())),
    }
    match lines.next() {
        Some((n, cols)) if cols.split('\t').ne(COLUMNS) => {
            return Err(err(n, format!("expected columns {}", COLUMNS.join(","))));
        }
        Some(_) => {}
        None => return Err(err(2, "missing column header".into())),
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut patient_domain: BTreeMap<String, Domain> = BTreeMap::new();
    for (n, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != COLUMNS.len() {
            return Err(err(n, format!("expected {} fields, found {}", COLUMNS.len(), fields.len())));
        }
        let label: Label = fields[3].parse().map_err(|e: Error| err(n, e.to_string()))?;
        let site: Site = fields[4].parse().map_err(|e: Error| err(n, e.to_string()))?;
        let domain: Domain = fields[5].parse().map_err(|e: Error| err(n, e.to_string()))?;
        let fov_radius: f64 = fields[6]
            .parse()
            .ok()
            .filter(|r: &f64| *r >= 0.0)
            .ok_or_else(|| err(n, format!("invalid fov radius `{}`", fields[6])))?;
        let path = fields[0].to_string();
        if !seen.insert(path.clone()) {
            return Err(err(n, format!("duplicate path `{path}`")));
        }
        if check_files && !root.join(&path).is_file() {
            return Err(err(n, format!("missing frame file `{path}`")));
        }
        let patient_id = fields[1].to_string();
        if let Some(previous) = patient_domain.insert(patient_id.clone(), domain) {
            if previous != domain {
                return Err(err(n, format!("patient `{patient_id}` appears in {previous} and {domain}")));
            }
        }
        records.push(ManifestRecord {
            path,
            patient_id,
            sequence_id: fields[2].to_string(),
            label,
            site,
            domain,
            fov_radius,
        });
    }
    if records.is_empty() {
        log::warn!("{}: manifest has no records", source.display());
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        records,
    })
}

/// Loads and validates a manifest; frame paths are relative to its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = parse_manifest(&text, &root, path, true)?;
    for ((domain, label, patient), n) in manifest.counts() {
        log::info!("{domain} {label} {patient}: {n} frames");
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "clefov-manifest 1\npath\tpatient_id\tsequence_id\tlabel\tsite\tdomain\tfov_radius\n";

    fn parse(body: &str) -> Result<DatasetManifest> {
        parse_manifest(&format!("{HEADER}{body}"), Path::new("."), Path::new("m.tsv"), false)
    }

    #[test]
    fn empty_record_list_is_valid() {
        assert!(parse("").unwrap().records.is_empty());
    }

    #[test]
    fn duplicate_path_cites_its_line() {
        let row = "a.pgm\tp1\ts1\tcarcinoma\thard-palate\tOC\t270\n";
        let mut body = String::new();
        for k in 0..4 {
            body.push_str(&row.replace("a.pgm", &format!("{k}.pgm")));
        }
        body.push_str(&row.replace("a.pgm", "1.pgm"));
        match parse(&body) {
            // two header lines, four rows, duplicate on line 7
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_and_missing_header_rejected() {
        assert!(matches!(
            parse("a.pgm\tp1\ts1\ttumour\thard-palate\tOC\t270\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse_manifest("path\n", Path::new("."), Path::new("m"), false).is_err());
        assert!(parse_manifest("clefov-manifest 9\n", Path::new("."), Path::new("m"), false).is_err());
    }

    #[test]
    fn patient_must_stay_in_one_domain() {
        let body = "a.pgm\tp1\ts1\tcarcinoma\thard-palate\tOC\t270\nb.pgm\tp1\ts1\tcarcinoma\tvocal-fold\tVC\t270\n";
        assert!(parse(body).is_err());
    }

    #[test]
    fn missing_file_is_reported_when_checked() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{HEADER}nope.pgm\tp1\ts1\tcarcinoma\thard-palate\tOC\t270\n");
        let e = parse_manifest(&text, dir.path(), Path::new("m"), true).unwrap_err();
        assert!(e.to_string().contains("missing frame file"));
    }
}
