//! Logistic-regression baselines on score features with demographic
//! covariates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::SubjectRecord;
use crate::domain::Sex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogisticOptions {
    /// Ridge penalty on the coefficients (not the intercept).
    pub l2: f64,
    pub max_iter: usize,
    /// Converged once no parameter moves by more than this.
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            l2: 1e-4,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Fitted model. Coefficients apply to standardized features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Training mean and SD per feature; binary features keep (0, 1).
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ y·η − log(1 + e^η) − λ/2 ‖β‖²`, computed stably.
fn penalized_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, l2: f64) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta
        .iter()
        .zip(y.iter())
        .map(|(&e, &t)| t * e - (e.max(0.0) + (-e.abs()).exp().ln_1p()))
        .sum();
    let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    ll - 0.5 * l2 * pen
}

/// Fits by iteratively reweighted least squares with step halving.
///
/// `continuous[j]` marks features to z-score with the training mean and SD;
/// others (such as a sex indicator) are used as given.
pub fn logistic_fit(
    names: &[&str],
    x: &[Vec<f64>],
    y: &[bool],
    continuous: &[bool],
    opts: &LogisticOptions,
) -> Result<LogisticModel> {
    let n = x.len();
    let d = names.len();
    if y.len() != n || continuous.len() != d {
        return Err(Error::data(format!(
            "{n} rows, {} labels, {d} names, {} continuity flags",
            y.len(),
            continuous.len()
        )));
    }
    if let Some(i) = x.iter().position(|r| r.len() != d) {
        return Err(Error::data(format!("row {i} has {} features, expected {d}", x[i].len())));
    }
    if n <= d {
        return Err(Error::data(format!("{n} rows cannot fit {d} features")));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == n {
        return Err(Error::data("logistic fit needs both classes"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    let mut means = vec![0.0; d];
    let mut sds = vec![1.0; d];
    for j in 0..d {
        if continuous[j] {
            let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            means[j] = m;
            sds[j] = if sd > 0.0 { sd } else { 1.0 };
        }
    }
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { (x[i][j - 1] - means[j - 1]) / sds[j - 1] });
    let target = DVector::from_iterator(n, y.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    let mut beta = DVector::zeros(d + 1);
    let mut ll = penalized_loglik(&design, &target, &beta, opts.l2);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let eta = &design * &beta;
        let p = eta.map(sigmoid);
        let w = p.map(|v| v * (1.0 - v));
        let mut grad = design.transpose() * (&target - &p);
        let mut hess = DMatrix::from_fn(d + 1, d + 1, |a, b| {
            (0..n).map(|i| design[(i, a)] * w[i] * design[(i, b)]).sum::<f64>()
        });
        for j in 1..=d {
            grad[j] -= opts.l2 * beta[j];
            hess[(j, j)] += opts.l2;
        }
        let chol = hess
            .cholesky()
            .ok_or_else(|| Error::Numeric("logistic fit: Hessian is not positive definite".into()))?;
        let full = chol.solve(&grad);
        let mut step = 1.0;
        let mut next;
        loop {
            next = &beta + &full * step;
            let cand = penalized_loglik(&design, &target, &next, opts.l2);
            if cand >= ll || step < 1e-10 {
                ll = cand.max(ll);
                break;
            }
            step *= 0.5;
        }
        let change = (&next - &beta).amax();
        beta = next;
        if !beta.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("logistic fit diverged".into()));
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "logistic fit did not converge in {} iterations (separable data needs l2 > 0)",
            opts.max_iter
        )));
    }
    Ok(LogisticModel {
        feature_names: names.iter().map(|s| s.to_string()).collect(),
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        means,
        sds,
        converged,
        iterations,
    })
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::Tensor(rcft_tensor::TensorError::Contract(format!(
                "model has {} features, input has {}",
                self.coefficients.len(),
                x.len()
            ))));
        }
        Ok(self.intercept
            + x.iter()
                .enumerate()
                .map(|(j, v)| self.coefficients[j] * (v - self.means[j]) / self.sds[j])
                .sum::<f64>())
    }

    /// Coefficients and intercept on the original feature scale.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let coef: Vec<f64> = self.coefficients.iter().zip(&self.sds).map(|(c, s)| c / s).collect();
        let shift: f64 = coef.iter().zip(&self.means).map(|(c, m)| c * m).sum();
        (coef, self.intercept - shift)
    }

    /// `feature,coefficient,raw_coefficient` plus an `(intercept)` row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::data(format!("writing coefficients: {e}"));
        wr.write_record(["feature", "coefficient", "raw_coefficient"]).map_err(err)?;
        let (raw, raw_b0) = self.raw_coefficients();
        wr.write_record(["(intercept)".to_string(), format!("{:.8}", self.intercept), format!("{raw_b0:.8}")])
            .map_err(err)?;
        for ((name, c), r) in self.feature_names.iter().zip(&self.coefficients).zip(&raw) {
            wr.write_record([name.clone(), format!("{c:.8}"), format!("{r:.8}")]).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::data(format!("writing coefficients: {e}")))
    }
}

/// `sigmoid(intercept + coef · standardized x)`.
pub fn logistic_predict(model: &LogisticModel, x: &[f64]) -> Result<f64> {
    Ok(sigmoid(model.linear_predictor(x)?))
}

/// Score-based baselines. Every row also carries age, sex and education.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ScoreBaseline {
    Mmse,
    ExpertScores,
    AiScores,
}

impl ScoreBaseline {
    pub const ALL: [ScoreBaseline; 3] = [ScoreBaseline::Mmse, ScoreBaseline::ExpertScores, ScoreBaseline::AiScores];

    pub fn label(self) -> &'static str {
        match self {
            ScoreBaseline::Mmse => "MMSE scores",
            ScoreBaseline::ExpertScores => "RCFT scores by experts",
            ScoreBaseline::AiScores => "RCFT scores by AI",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ScoreBaseline::Mmse => "mmse",
            ScoreBaseline::ExpertScores => "expert_scores",
            ScoreBaseline::AiScores => "ai_scores",
        }
    }

    pub fn feature_names(self) -> Vec<&'static str> {
        let mut v = match self {
            ScoreBaseline::Mmse => vec!["mmse"],
            ScoreBaseline::ExpertScores => vec!["expert_copy", "expert_imm", "expert_del"],
            ScoreBaseline::AiScores => vec!["ai_copy", "ai_imm", "ai_del"],
        };
        v.extend(["age", "sex_female", "education"]);
        v
    }

    /// Continuity flags matching [`Self::feature_names`].
    pub fn continuous(self) -> Vec<bool> {
        self.feature_names().iter().map(|&n| n != "sex_female").collect()
    }

    /// Feature row, or a data error naming the subject and missing field.
    pub fn features(self, r: &SubjectRecord) -> Result<Vec<f64>> {
        let missing = |what: &str| Error::data(format!("subject {}: no {what} for the {} baseline", r.subject_id, self.label()));
        let mut v = match self {
            ScoreBaseline::Mmse => vec![r.mmse.ok_or_else(|| missing("mmse"))?],
            ScoreBaseline::ExpertScores => r.expert_scores.ok_or_else(|| missing("expert scores"))?.values().to_vec(),
            ScoreBaseline::AiScores => r.ai_scores.ok_or_else(|| missing("AI scores"))?.values().to_vec(),
        };
        v.extend([r.age, if r.sex == Sex::Female { 1.0 } else { 0.0 }, r.education]);
        Ok(v)
    }

    /// Fits on `train` and returns MCI probabilities for `test`.
    pub fn fit_predict(
        self,
        records: &[SubjectRecord],
        train: &[usize],
        test: &[usize],
        opts: &LogisticOptions,
    ) -> Result<(LogisticModel, Vec<f64>)> {
        let rows = |idx: &[usize]| idx.iter().map(|&i| self.features(&records[i])).collect::<Result<Vec<_>>>();
        let x = rows(train)?;
        let y: Vec<bool> = train.iter().map(|&i| records[i].label.is_positive()).collect();
        let model = logistic_fit(&self.feature_names(), &x, &y, &self.continuous(), opts)?;
        let p = rows(test)?
            .iter()
            .map(|r| logistic_predict(&model, r))
            .collect::<Result<Vec<_>>>()?;
        Ok((model, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_examples() {
        let m = LogisticModel {
            feature_names: vec!["a".into(), "b".into()],
            coefficients: vec![0.0, 0.0],
            intercept: 0.0,
            means: vec![0.0, 0.0],
            sds: vec![1.0, 1.0],
            converged: true,
            iterations: 1,
        };
        assert_eq!(logistic_predict(&m, &[3.0, -1.0]).unwrap(), 0.5);
        let sat = LogisticModel { intercept: 30.0, ..m.clone() };
        assert!(logistic_predict(&sat, &[0.0, 0.0]).unwrap() > 1.0 - 1e-9);
        assert!(logistic_predict(&m, &[1.0]).is_err());

        let r = LogisticModel {
            coefficients: vec![0.7, -1.3],
            intercept: 0.2,
            means: vec![1.0, 2.0],
            sds: vec![2.0, 0.5],
            ..m
        };
        let x = [2.5, 1.0];
        let eta: f64 = 0.2 + 0.7 * (2.5 - 1.0) / 2.0 - 1.3 * (1.0 - 2.0) / 0.5;
        assert!((logistic_predict(&r, &x).unwrap() - 1.0 / (1.0 + (-eta).exp())).abs() < 1e-15);
        let (raw, b0) = r.raw_coefficients();
        let eta_raw = b0 + raw[0] * x[0] + raw[1] * x[1];
        assert!((eta_raw - eta).abs() < 1e-12);
    }

    #[test]
    fn sign_follows_the_data() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![if i % 2 == 0 { -1.0 } else { 1.0 }]).collect();
        let y: Vec<bool> = (0..40).map(|i| i % 2 == 1).collect();
        let m = logistic_fit(&["x"], &x, &y, &[true], &LogisticOptions::default()).unwrap();
        assert!(m.converged && m.coefficients[0] > 0.0);
        let unpenalized = LogisticOptions { l2: 0.0, ..LogisticOptions::default() };
        assert!(matches!(logistic_fit(&["x"], &x, &y, &[true], &unpenalized), Err(Error::Numeric(_))));
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let opts = LogisticOptions::default();
        assert!(logistic_fit(&["x"], &[vec![1.0], vec![2.0]], &[true, true], &[true], &opts).is_err());
        assert!(logistic_fit(&["x"], &[vec![1.0]], &[true], &[true], &opts).is_err());
        assert!(logistic_fit(&["x", "y"], &[vec![1.0], vec![2.0], vec![3.0]], &[true, false, true], &[true, true], &opts).is_err());
    }
}
