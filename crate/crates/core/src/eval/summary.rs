//! Descriptive statistics by diagnostic group.

use std::fmt::Write as _;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::data::SubjectRecord;
use crate::domain::{Label, Sex};
use crate::error::{Error, Result};

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_sd(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::Statistics(format!("need at least 2 values, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided Welch (unequal variance) t-test of `a` against `b`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    let (ma, sa) = mean_sd(a)?;
    let (mb, sb) = mean_sd(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sa * sa / na;
    let vb = sb * sb / nb;
    let se2 = va + vb;
    if se2 == 0.0 {
        return if ma == mb {
            Ok(TTest { t: 0.0, df: na + nb - 2.0, p: 1.0 })
        } else {
            Err(Error::Statistics("t statistic undefined: both groups are constant".into()))
        };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Statistics(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { t, df, p })
}

/// Pearson chi-square on a 2×2 table (no continuity correction), 1 df.
/// A table with an empty margin carries no evidence: statistic 0, p 1.
pub fn chi_square_2x2(table: [[u64; 2]; 2]) -> (f64, f64) {
    let [[a, b], [c, d]] = table.map(|r| r.map(|v| v as f64));
    let n = a + b + c + d;
    let margins = (a + b) * (c + d) * (a + c) * (b + d);
    if margins == 0.0 {
        return (0.0, 1.0);
    }
    let chi2 = n * (a * d - b * c).powi(2) / margins;
    let p = 1.0 - ChiSquared::new(1.0).expect("one degree of freedom").cdf(chi2);
    (chi2, p.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuousRow {
    pub field: String,
    pub cn: (f64, f64),
    pub mci: (f64, f64),
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub n_cn: usize,
    pub n_mci: usize,
    pub female_cn: usize,
    pub female_mci: usize,
    pub sex_chi2: f64,
    pub sex_p: f64,
    pub rows: Vec<ContinuousRow>,
}

/// CN versus MCI: mean (SD) and Welch p for each continuous field present
/// on every record, female count and chi-square p for sex.
pub fn group_summary(records: &[SubjectRecord]) -> Result<GroupSummary> {
    let (cn, mci): (Vec<&SubjectRecord>, Vec<&SubjectRecord>) = records.iter().partition(|r| r.label == Label::Cn);
    if cn.len() < 2 || mci.len() < 2 {
        return Err(Error::Statistics(format!(
            "each group needs at least 2 subjects (CN {}, MCI {})",
            cn.len(),
            mci.len()
        )));
    }
    type Getter = fn(&SubjectRecord) -> Option<f64>;
    let fields: [(&str, Getter); 9] = [
        ("age", |r| Some(r.age)),
        ("education", |r| Some(r.education)),
        ("mmse", |r| r.mmse),
        ("expert copy", |r| r.expert_scores.map(|s| s.copy)),
        ("expert immediate", |r| r.expert_scores.map(|s| s.immediate)),
        ("expert delayed", |r| r.expert_scores.map(|s| s.delayed)),
        ("ai copy", |r| r.ai_scores.map(|s| s.copy)),
        ("ai immediate", |r| r.ai_scores.map(|s| s.immediate)),
        ("ai delayed", |r| r.ai_scores.map(|s| s.delayed)),
    ];
    let mut rows = Vec::new();
    for (name, get) in fields {
        let a: Option<Vec<f64>> = cn.iter().map(|r| get(r)).collect();
        let b: Option<Vec<f64>> = mci.iter().map(|r| get(r)).collect();
        if let (Some(a), Some(b)) = (a, b) {
            rows.push(ContinuousRow {
                field: name.to_string(),
                cn: mean_sd(&a)?,
                mci: mean_sd(&b)?,
                test: welch_t_test(&a, &b)?,
            });
        }
    }
    let female = |g: &[&SubjectRecord]| g.iter().filter(|r| r.sex == Sex::Female).count();
    let (fc, fm) = (female(&cn), female(&mci));
    let (sex_chi2, sex_p) = chi_square_2x2([
        [fc as u64, (cn.len() - fc) as u64],
        [fm as u64, (mci.len() - fm) as u64],
    ]);
    Ok(GroupSummary {
        n_cn: cn.len(),
        n_mci: mci.len(),
        female_cn: fc,
        female_mci: fm,
        sex_chi2,
        sex_p,
        rows,
    })
}

impl GroupSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let cn_head = format!("CN (n={})", self.n_cn);
        let mci_head = format!("MCI (n={})", self.n_mci);
        let _ = writeln!(s, "{:<18}  {:<16}  {:<16}  {}", "Characteristic", cn_head, mci_head, "p");
        let pct = |k: usize, n: usize| format!("{k} ({:.1}%)", 100.0 * k as f64 / n as f64);
        let _ = writeln!(
            s,
            "{:<18}  {:<16}  {:<16}  {:.3}",
            "female",
            pct(self.female_cn, self.n_cn),
            pct(self.female_mci, self.n_mci),
            self.sex_p
        );
        for r in &self.rows {
            let ms = |(m, sd): (f64, f64)| format!("{m:.1} ({sd:.1})");
            let _ = writeln!(s, "{:<18}  {:<16}  {:<16}  {:.3}", r.field, ms(r.cn), ms(r.mci), r.test.p);
        }
        s
    }
}
