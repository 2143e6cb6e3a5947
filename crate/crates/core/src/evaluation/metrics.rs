use serde::{Deserialize, Serialize};

use crate::attacks::sorted_sum;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub member: bool,
    pub subject: String,
}

impl LabeledScore {
    pub fn new(score: f64, member: bool, subject: impl Into<String>) -> Self {
        Self {
            score,
            member,
            subject: subject.into(),
        }
    }
}

/// Probability that a random member outscores a random non-member, ties
/// counting one half.
pub fn auc_roc(scores: &[LabeledScore]) -> Result<f64> {
    let n_pos = scores.iter().filter(|s| s.member).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut sorted: Vec<&LabeledScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Sum of member ranks, with tied groups sharing their average rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].score == sorted[i].score {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let members = sorted[i..=j].iter().filter(|s| s.member).count();
        rank_sum += avg_rank * members as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// 0 when nothing is predicted a member.
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
}

/// Scores at or above `threshold` are predicted members.
pub fn classification_metrics(scores: &[LabeledScore], threshold: f64) -> Result<ClassificationMetrics> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("no scores to evaluate".into()));
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for s in scores {
        match (s.score >= threshold, s.member) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ClassificationMetrics {
        accuracy: ratio(c.tp + c.tn, scores.len()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        confusion: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc_roc: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 4] = ["accuracy", "precision", "recall", "auc_roc"];

    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.auc_roc]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub metrics: Metrics,
    pub confusion: Confusion,
    pub scores: Vec<LabeledScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub n_runs: usize,
    pub runs: Vec<RunMetrics>,
    pub mean: Metrics,
}

impl MetricsReport {
    /// One entry of `runs` per experiment run, in run order.
    pub fn from_runs(threshold: f64, runs: Vec<Vec<LabeledScore>>) -> Result<MetricsReport> {
        if runs.is_empty() {
            return Err(Error::InsufficientData("no runs to report".into()));
        }
        let runs = runs
            .into_iter()
            .enumerate()
            .map(|(run, scores)| {
                let c = classification_metrics(&scores, threshold)?;
                Ok(RunMetrics {
                    run,
                    metrics: Metrics {
                        accuracy: c.accuracy,
                        precision: c.precision,
                        recall: c.recall,
                        auc_roc: auc_roc(&scores)?,
                    },
                    confusion: c.confusion,
                    scores,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = runs.len() as f64;
        let mean_of = |f: fn(&Metrics) -> f64| sorted_sum(runs.iter().map(|r| f(&r.metrics))) / n;
        let mean = Metrics {
            accuracy: mean_of(|m| m.accuracy),
            precision: mean_of(|m| m.precision),
            recall: mean_of(|m| m.recall),
            auc_roc: mean_of(|m| m.auc_roc),
        };
        Ok(MetricsReport {
            threshold,
            n_runs: runs.len(),
            runs,
            mean,
        })
    }

    /// `metric,run,value` rows; the mean uses run `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,run,value\n");
        for (i, name) in Metrics::NAMES.iter().enumerate() {
            for r in &self.runs {
                out.push_str(&format!("{name},{},{}\n", r.run, r.metrics.values()[i]));
            }
            out.push_str(&format!("{name},mean,{}\n", self.mean.values()[i]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(score: f64, member: bool) -> LabeledScore {
        LabeledScore::new(score, member, "")
    }

    #[test]
    fn auc_extremes() {
        let perfect = [ls(1.0, true), ls(1.0, true), ls(0.0, false)];
        assert_eq!(auc_roc(&perfect).unwrap(), 1.0);
        let ties = [ls(0.3, true), ls(0.3, false), ls(0.3, false)];
        assert_eq!(auc_roc(&ties).unwrap(), 0.5);
        let inverted = [ls(0.0, true), ls(1.0, false)];
        assert_eq!(auc_roc(&inverted).unwrap(), 0.0);
        assert!(matches!(auc_roc(&[ls(0.1, true)]), Err(Error::SingleClass)));
    }

    #[test]
    fn all_negative_predictions() {
        let m = classification_metrics(&[ls(0.1, true), ls(0.2, false)], 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (0.0, 0.0, 0.5));
    }

    #[test]
    fn perfect_predictions() {
        let m = classification_metrics(&[ls(0.9, true), ls(0.2, false)], 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = classification_metrics(&[ls(0.6, true)], 0.6).unwrap();
        assert_eq!(m.confusion.tp, 1);
    }

    #[test]
    fn report_rows() {
        let run = vec![ls(0.9, true), ls(0.1, false)];
        let r = MetricsReport::from_runs(0.5, vec![run.clone(), run]).unwrap();
        assert_eq!(r.n_runs, 2);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4 * 3);
        assert!(csv.contains("auc_roc,mean,1\n"));
    }
}
