//! Cohort manifest: one CSV row per subject.
//!
//! An optional first line starting with `#` carries provenance text. Image
//! paths are relative to the manifest's directory unless absolute; empty
//! cells mean "not available".

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::domain::{Condition, Demographics, Label, ScoreTriple, Sex};
use crate::error::{Error, Result};

pub const HEADER: [&str; 16] = [
    "subject_id",
    "age",
    "sex",
    "education",
    "mmse",
    "cdr",
    "label",
    "expert_copy",
    "expert_imm",
    "expert_del",
    "ai_copy",
    "ai_imm",
    "ai_del",
    "img_copy",
    "img_imm",
    "img_del",
];

pub const FORMAT_TAG: &str = "rcft-manifest v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub age: f64,
    pub sex: Sex,
    pub education: f64,
    pub mmse: Option<f64>,
    pub cdr: Option<f64>,
    pub label: Label,
    pub expert_scores: Option<ScoreTriple>,
    pub ai_scores: Option<ScoreTriple>,
    /// As written in the manifest, indexed by [`Condition::index`].
    pub images: [Option<PathBuf>; 3],
}

impl SubjectRecord {
    pub fn demographics(&self) -> Result<Demographics> {
        Demographics::new(self.age, self.sex, self.education)
            .map_err(|e| Error::data(format!("subject {}: {e}", self.subject_id)))
    }

    pub fn image(&self, c: Condition) -> Option<&Path> {
        self.images[c.index()].as_deref()
    }

    /// Identifier of one drawing: `<subject_id>_<copy|imm|del>`.
    pub fn image_id(&self, c: Condition) -> String {
        image_id(&self.subject_id, c)
    }

    fn validate(&self) -> Result<()> {
        if self.subject_id.trim().is_empty() {
            return Err(Error::data("empty subject_id"));
        }
        self.demographics()?;
        if let Some(m) = self.mmse {
            if !(0.0..=30.0).contains(&m) {
                return Err(Error::data(format!("mmse {m} outside [0, 30]")));
            }
        }
        if let Some(c) = self.cdr {
            let from_cdr = Label::from_cdr(c)?;
            if from_cdr != self.label {
                return Err(Error::data(format!("label {} contradicts cdr {c}", self.label)));
            }
        }
        Ok(())
    }
}

pub fn image_id(subject_id: &str, c: Condition) -> String {
    format!("{subject_id}_{}", c.tag())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    /// Text of the leading `#` line, without the marker.
    pub provenance: Option<String>,
    pub records: Vec<SubjectRecord>,
    /// Directory that relative image paths are resolved against.
    pub base_dir: PathBuf,
}

impl CohortManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image_path(&self, r: &SubjectRecord, c: Condition) -> Option<PathBuf> {
        r.image(c).map(|p| self.resolve(p))
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label.is_positive()).collect()
    }

    pub fn has_mmse(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.mmse.is_some())
    }
}

struct RowError {
    row: usize,
    msg: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.msg)
    }
}

fn opt_f64(cell: &str, col: &str) -> Result<Option<f64>> {
    let t = cell.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::data(format!("{col}: {t:?} is not a number")))
}

fn req_f64(cell: &str, col: &str) -> Result<f64> {
    opt_f64(cell, col)?.ok_or_else(|| Error::data(format!("{col} is required")))
}

fn opt_triple(cells: [&str; 3], prefix: &str) -> Result<Option<ScoreTriple>> {
    let tags = ["copy", "imm", "del"];
    let vals = cells
        .iter()
        .zip(tags)
        .map(|(c, t)| opt_f64(c, &format!("{prefix}_{t}")))
        .collect::<Result<Vec<_>>>()?;
    match (vals[0], vals[1], vals[2]) {
        (Some(a), Some(b), Some(c)) => ScoreTriple::new(a, b, c)
            .map(Some)
            .map_err(|e| Error::data(format!("{prefix} scores: {e}"))),
        (None, None, None) => Ok(None),
        _ => Err(Error::data(format!("{prefix} scores must be all present or all empty"))),
    }
}

fn parse_row(cells: &[&str; 16]) -> Result<SubjectRecord> {
    let label: Label = cells[6].trim().parse()?;
    let path = |s: &str| {
        let t = s.trim();
        (!t.is_empty()).then(|| PathBuf::from(t))
    };
    let rec = SubjectRecord {
        subject_id: cells[0].trim().to_string(),
        age: req_f64(cells[1], "age")?,
        sex: cells[2].trim().parse()?,
        education: req_f64(cells[3], "education")?,
        mmse: opt_f64(cells[4], "mmse")?,
        cdr: opt_f64(cells[5], "cdr")?,
        label,
        expert_scores: opt_triple([cells[7], cells[8], cells[9]], "expert")?,
        ai_scores: opt_triple([cells[10], cells[11], cells[12]], "ai")?,
        images: [path(cells[13]), path(cells[14]), path(cells[15])],
    };
    rec.validate()?;
    Ok(rec)
}

/// Parses manifest text. Image files are checked against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<CohortManifest> {
    let (provenance, body, first_row_line) = match text.strip_prefix('#') {
        Some(rest) => {
            let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
            (Some(line.trim().to_string()), body, 3)
        }
        None => (None, text, 2),
    };
    if let Some(p) = &provenance {
        if let Some(v) = p.strip_prefix("rcft-manifest v") {
            let version = v.split_whitespace().next().unwrap_or("");
            if version != "1" {
                return Err(Error::data(format!("unsupported manifest version {version:?}")));
            }
        }
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::data(format!("manifest header: {e}")))?
        .clone();
    let mut cols = [0usize; 16];
    let missing: Vec<&str> = HEADER
        .iter()
        .enumerate()
        .filter_map(|(k, name)| match header.iter().position(|h| h == *name) {
            Some(i) => {
                cols[k] = i;
                None
            }
            None => Some(*name),
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!("manifest is missing columns {missing:?}")));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let line = first_row_line + i;
        let fail = |msg: String| Error::data(RowError { row: line, msg }.to_string());
        let row = row.map_err(|e| fail(e.to_string()))?;
        let cells: [&str; 16] = std::array::from_fn(|k| row.get(cols[k]).unwrap_or(""));
        let rec = parse_row(&cells).map_err(|e| fail(strip_kind(e)))?;
        if !seen.insert(rec.subject_id.clone()) {
            return Err(fail(format!("duplicate subject_id {:?}", rec.subject_id)));
        }
        for c in Condition::ALL {
            if let Some(p) = rec.image(c) {
                let full = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
                if !full.is_file() {
                    return Err(fail(format!("{c} image {} does not exist", full.display())));
                }
            }
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::data("manifest has no records"));
    }
    Ok(CohortManifest {
        provenance,
        records,
        base_dir: base_dir.to_path_buf(),
    })
}

fn strip_kind(e: Error) -> String {
    match e {
        Error::Data(m) => m,
        other => other.to_string(),
    }
}

pub fn load_manifest(path: &Path) -> Result<CohortManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_triple(t: &Option<ScoreTriple>) -> [String; 3] {
    match t {
        Some(t) => t.values().map(|v| v.to_string()),
        None => Default::default(),
    }
}

/// Manifest text; `parse_manifest` of the result reproduces `m.records`.
pub fn manifest_to_string(m: &CohortManifest) -> Result<String> {
    let mut out = Vec::new();
    if let Some(p) = &m.provenance {
        out.extend_from_slice(format!("# {p}\n").as_bytes());
    }
    {
        let mut wr = csv::Writer::from_writer(&mut out);
        let err = |e: csv::Error| Error::data(format!("writing manifest: {e}"));
        wr.write_record(HEADER).map_err(err)?;
        for r in &m.records {
            let e = fmt_triple(&r.expert_scores);
            let a = fmt_triple(&r.ai_scores);
            let img = |c: Condition| r.image(c).map(|p| p.display().to_string()).unwrap_or_default();
            let row: [String; 16] = [
                r.subject_id.clone(),
                r.age.to_string(),
                r.sex.to_string(),
                r.education.to_string(),
                fmt_opt(r.mmse),
                fmt_opt(r.cdr),
                r.label.to_string(),
                e[0].clone(),
                e[1].clone(),
                e[2].clone(),
                a[0].clone(),
                a[1].clone(),
                a[2].clone(),
                img(Condition::Copy),
                img(Condition::Immediate),
                img(Condition::Delayed),
            ];
            wr.write_record(&row).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::data(format!("writing manifest: {e}")))?;
    }
    String::from_utf8(out).map_err(|_| Error::data("manifest is not UTF-8"))
}

pub fn save_manifest(m: &CohortManifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_string(m)?).map_err(|e| Error::io(path, e))
}
