//! Expert-versus-AI score agreement and the flag/correct/recompare loop.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Condition, MAX_SCORE};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 10.0;

/// One scored drawing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcRecord {
    pub image_id: String,
    pub condition: Condition,
    pub expert_score: f64,
    pub ai_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub image_id: String,
    pub corrected_score: f64,
    #[serde(default)]
    pub note: String,
}

/// How "R²" is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RSquaredKind {
    /// Squared Pearson correlation between the two lists.
    #[default]
    SquaredPearson,
    /// `1 − SS_res / SS_tot` with the expert scores as ground truth.
    Determination,
}

impl FromStr for RSquaredKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-pearson" | "pearson" => Ok(RSquaredKind::SquaredPearson),
            "determination" => Ok(RSquaredKind::Determination),
            other => Err(Error::config(format!("unknown r-squared kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    /// `None` when the expert scores have zero variance.
    pub r_squared: Option<f64>,
    pub mae: f64,
    pub n: usize,
}

impl Agreement {
    pub fn r_squared(&self) -> Result<f64> {
        self.r_squared
            .ok_or_else(|| Error::Statistics("r² is undefined for constant scores".into()))
    }
}

pub fn compare_scores(expert: &[f64], ai: &[f64]) -> Result<Agreement> {
    compare_scores_with(expert, ai, RSquaredKind::SquaredPearson)
}

pub fn compare_scores_with(expert: &[f64], ai: &[f64], kind: RSquaredKind) -> Result<Agreement> {
    let n = expert.len();
    if n != ai.len() {
        return Err(Error::data(format!("{n} expert scores but {} AI scores", ai.len())));
    }
    if n < 2 {
        return Err(Error::data("score comparison needs at least two pairs"));
    }
    let nf = n as f64;
    let mae = expert.iter().zip(ai).map(|(e, a)| (e - a).abs()).sum::<f64>() / nf;
    let me = expert.iter().sum::<f64>() / nf;
    let ma = ai.iter().sum::<f64>() / nf;
    let see: f64 = expert.iter().map(|e| (e - me).powi(2)).sum();
    let saa: f64 = ai.iter().map(|a| (a - ma).powi(2)).sum();
    let r_squared = match kind {
        RSquaredKind::SquaredPearson => {
            if see == 0.0 || saa == 0.0 {
                None
            } else {
                let sea: f64 = expert.iter().zip(ai).map(|(e, a)| (e - me) * (a - ma)).sum();
                Some((sea * sea / (see * saa)).min(1.0))
            }
        }
        RSquaredKind::Determination => {
            if see == 0.0 {
                None
            } else {
                let ss_res: f64 = expert.iter().zip(ai).map(|(e, a)| (e - a).powi(2)).sum();
                Some(1.0 - ss_res / see)
            }
        }
    };
    Ok(Agreement { r_squared, mae, n })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flag {
    pub image_id: String,
    pub expert_score: f64,
    pub ai_score: f64,
    pub abs_diff: f64,
}

/// Every pair whose scores differ by strictly more than `threshold`.
pub fn flag_discrepancies(records: &[QcRecord], threshold: f64) -> Vec<Flag> {
    records
        .iter()
        .filter_map(|r| {
            let d = (r.expert_score - r.ai_score).abs();
            (d > threshold).then(|| Flag {
                image_id: r.image_id.clone(),
                expert_score: r.expert_score,
                ai_score: r.ai_score,
                abs_diff: d,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub image_id: String,
    pub old_score: f64,
    pub new_score: f64,
    pub note: String,
    /// The image had not been flagged before the correction.
    pub out_of_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcReport {
    pub kind: RSquaredKind,
    pub threshold: f64,
    pub before: Agreement,
    pub after: Option<Agreement>,
    pub flagged: Vec<Flag>,
    pub audit: Vec<AuditEntry>,
}

impl QcReport {
    pub fn corrections_applied(&self) -> usize {
        self.audit.len()
    }

    /// Plain-text before/after summary.
    pub fn summary(&self) -> String {
        let r2 = |a: &Agreement| a.r_squared.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into());
        let mut s = String::new();
        let _ = writeln!(s, "pairs: {}", self.before.n);
        let _ = writeln!(s, "flag threshold: |expert - ai| > {}", self.threshold);
        let _ = writeln!(s, "flagged: {}", self.flagged.len());
        let _ = writeln!(s, "before QC: r2 {}  mae {:.4}", r2(&self.before), self.before.mae);
        if let Some(a) = &self.after {
            let oob = self.audit.iter().filter(|e| e.out_of_band).count();
            let _ = writeln!(s, "corrections applied: {} ({oob} out of band)", self.audit.len());
            let _ = writeln!(s, "after QC:  r2 {}  mae {:.4}", r2(a), a.mae);
        }
        s
    }
}

/// Agreement and flags for the records as they stand.
pub fn review(records: &[QcRecord], threshold: f64, kind: RSquaredKind) -> Result<QcReport> {
    let (e, a) = columns(records);
    Ok(QcReport {
        kind,
        threshold,
        before: compare_scores_with(&e, &a, kind)?,
        after: None,
        flagged: flag_discrepancies(records, threshold),
        audit: Vec::new(),
    })
}

fn columns(records: &[QcRecord]) -> (Vec<f64>, Vec<f64>) {
    records.iter().map(|r| (r.expert_score, r.ai_score)).unzip()
}

/// Replaces expert scores by image id, returning a corrected copy and the
/// before/after report. The input is left untouched.
pub fn apply_corrections(
    records: &[QcRecord],
    corrections: &[Correction],
    threshold: f64,
    kind: RSquaredKind,
) -> Result<(Vec<QcRecord>, QcReport)> {
    let index: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.image_id.as_str(), i)).collect();
    let mut unknown: Vec<&str> = corrections
        .iter()
        .map(|c| c.image_id.as_str())
        .filter(|id| !index.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        unknown.sort_unstable();
        unknown.dedup();
        return Err(Error::data(format!("corrections name unknown images {unknown:?}")));
    }
    if let Some(c) = corrections
        .iter()
        .find(|c| !(0.0..=MAX_SCORE).contains(&c.corrected_score))
    {
        return Err(Error::data(format!(
            "correction for {} sets {} outside [0, 36]",
            c.image_id, c.corrected_score
        )));
    }
    let mut report = review(records, threshold, kind)?;
    let flagged: HashSet<&str> = report.flagged.iter().map(|f| f.image_id.as_str()).collect();
    let mut fixed = records.to_vec();
    for c in corrections {
        let r = &mut fixed[index[c.image_id.as_str()]];
        report.audit.push(AuditEntry {
            image_id: c.image_id.clone(),
            old_score: r.expert_score,
            new_score: c.corrected_score,
            note: c.note.clone(),
            out_of_band: !flagged.contains(c.image_id.as_str()),
        });
        r.expert_score = c.corrected_score;
    }
    let (e, a) = columns(&fixed);
    report.after = Some(compare_scores_with(&e, &a, kind)?);
    Ok((fixed, report))
}

fn csv_err(what: &'static str) -> impl Fn(csv::Error) -> Error {
    move |e| Error::data(format!("{what}: {e}"))
}

/// Reads `image_id,condition,expert_score,ai_score`.
pub fn read_qc_records<R: Read>(r: R) -> Result<Vec<QcRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<QcRecord>().enumerate() {
        let rec = row.map_err(|e| Error::data(format!("QC scores row {}: {e}", i + 2)))?;
        for v in [rec.expert_score, rec.ai_score] {
            if !(0.0..=MAX_SCORE).contains(&v) {
                return Err(Error::data(format!("QC scores row {}: score {v} outside [0, 36]", i + 2)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads `image_id,corrected_score,note`.
pub fn read_corrections<R: Read>(r: R) -> Result<Vec<Correction>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    rdr.deserialize::<Correction>()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::data(format!("corrections row {}: {e}", i + 2))))
        .collect()
}

pub fn write_qc_records<W: Write>(w: W, records: &[QcRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r).map_err(csv_err("writing QC scores"))?;
    }
    wr.flush().map_err(|e| Error::data(format!("writing QC scores: {e}")))
}

pub fn write_corrections<W: Write>(w: W, corrections: &[Correction]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for c in corrections {
        wr.serialize(c).map_err(csv_err("writing corrections"))?;
    }
    wr.flush().map_err(|e| Error::data(format!("writing corrections: {e}")))
}

/// `image_id,expert_score,ai_score,abs_diff`
pub fn write_flags<W: Write>(w: W, flags: &[Flag]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["image_id", "expert_score", "ai_score", "abs_diff"])
        .map_err(csv_err("writing flags"))?;
    for f in flags {
        wr.serialize((&f.image_id, f.expert_score, f.ai_score, f.abs_diff))
            .map_err(csv_err("writing flags"))?;
    }
    wr.flush().map_err(|e| Error::data(format!("writing flags: {e}")))
}

pub fn write_audit<W: Write>(w: W, audit: &[AuditEntry]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for a in audit {
        wr.serialize(a).map_err(csv_err("writing audit log"))?;
    }
    wr.flush().map_err(|e| Error::data(format!("writing audit log: {e}")))
}

/// `stage,n,r_squared,mae` with one row before and, if present, one after.
pub fn write_summary_csv<W: Write>(w: W, report: &QcReport) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["stage", "n", "r_squared", "mae", "flagged", "corrections"])
        .map_err(csv_err("writing QC summary"))?;
    let r2 = |a: &Agreement| a.r_squared.map(|v| format!("{v:.6}")).unwrap_or_default();
    let flagged = report.flagged.len().to_string();
    wr.write_record(["before", &report.before.n.to_string(), &r2(&report.before), &format!("{:.6}", report.before.mae), &flagged, "0"])
        .map_err(csv_err("writing QC summary"))?;
    if let Some(a) = &report.after {
        let after_flags = report.flagged.len()
            - report.audit.iter().filter(|e| !e.out_of_band).map(|e| &e.image_id).collect::<HashSet<_>>().len();
        wr.write_record([
            "after",
            &a.n.to_string(),
            &r2(a),
            &format!("{:.6}", a.mae),
            &after_flags.to_string(),
            &report.audit.len().to_string(),
        ])
        .map_err(csv_err("writing QC summary"))?;
    }
    wr.flush().map_err(|e| Error::data(format!("writing QC summary: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, e: f64, a: f64) -> QcRecord {
        QcRecord {
            image_id: id.into(),
            condition: Condition::Copy,
            expert_score: e,
            ai_score: a,
        }
    }

    #[test]
    fn agreement_examples() {
        let x = [3.0, 10.0, 20.0, 31.0];
        let a = compare_scores(&x, &x).unwrap();
        assert_eq!((a.r_squared, a.mae), (Some(1.0), 0.0));
        let doubled: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        let a = compare_scores(&x, &doubled).unwrap();
        assert!((a.r_squared.unwrap() - 1.0).abs() < 1e-12 && a.mae > 0.0);
        let a = compare_scores(&[0.0, 36.0], &[12.0, 24.0]).unwrap();
        assert_eq!(a.mae, 12.0);
        let a = compare_scores(&[5.0, 5.0], &[4.0, 7.0]).unwrap();
        assert_eq!(a.mae, 1.5);
        assert!(matches!(a.r_squared(), Err(Error::Statistics(_))));
        let d = compare_scores_with(&x, &doubled, RSquaredKind::Determination).unwrap();
        assert!(d.r_squared.unwrap() < 0.0);
    }

    #[test]
    fn flags_are_strict() {
        let recs = [rec("a", 20.0, 10.0), rec("b", 21.0, 10.0), rec("c", 0.0, 0.5)];
        let f = flag_discrepancies(&recs, DEFAULT_THRESHOLD);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].image_id, "b");
        assert!(flag_discrepancies(&[], DEFAULT_THRESHOLD).is_empty());
    }

    #[test]
    fn corrections_are_pure_and_audited() {
        let recs = vec![rec("a", 30.0, 12.0), rec("b", 20.0, 21.0), rec("c", 10.0, 9.0)];
        let (same, rep) = apply_corrections(&recs, &[], DEFAULT_THRESHOLD, RSquaredKind::SquaredPearson).unwrap();
        assert_eq!(same, recs);
        assert_eq!(rep.after, Some(rep.before));

        let fixes = [
            Correction { image_id: "a".into(), corrected_score: 12.0, note: "re-rated".into() },
            Correction { image_id: "c".into(), corrected_score: 9.0, note: String::new() },
        ];
        let (fixed, rep) = apply_corrections(&recs, &fixes, DEFAULT_THRESHOLD, RSquaredKind::SquaredPearson).unwrap();
        assert_eq!(recs[0].expert_score, 30.0);
        assert_eq!(fixed[0].expert_score, 12.0);
        assert_eq!(rep.corrections_applied(), 2);
        assert!(!rep.audit[0].out_of_band);
        assert!(rep.audit[1].out_of_band);
        assert!(rep.after.unwrap().mae < rep.before.mae);

        let bad = [Correction { image_id: "zz".into(), corrected_score: 3.0, note: String::new() }];
        let e = apply_corrections(&recs, &bad, DEFAULT_THRESHOLD, RSquaredKind::SquaredPearson).unwrap_err();
        assert!(e.to_string().contains("zz"));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![rec("s1_copy", 30.0, 29.5), rec("s1_imm", 14.0, 16.25)];
        let mut buf = Vec::new();
        write_qc_records(&mut buf, &recs).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("image_id,condition,expert_score,ai_score\n"));
        assert_eq!(read_qc_records(buf.as_slice()).unwrap(), recs);
        assert!(read_qc_records("image_id,condition,expert_score,ai_score\nx,copy,40,3\n".as_bytes()).is_err());
    }
}
