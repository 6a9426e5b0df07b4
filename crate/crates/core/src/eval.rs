//! Hierarchical verdicts and metrics.
//!
//! Per-view argmax → majority vote per branch (segment) → max per artery →
//! max per patient. Ties, both in argmax and in voting, resolve toward the
//! more severe class. Artery and patient ground truth is the max of the
//! children's truths.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::StenosisClass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPrediction {
    pub view_index: usize,
    pub probs: [f64; 3],
}

impl ViewPrediction {
    pub fn new(view_index: usize, probs: [f64; 3]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Argument(format!(
                "view {view_index}: probabilities {probs:?} do not form a distribution"
            )));
        }
        Ok(ViewPrediction { view_index, probs })
    }

    pub fn predicted(&self) -> StenosisClass {
        argmax_severe(&self.probs)
    }
}

/// Argmax with ties resolved toward the higher (more severe) class.
pub fn argmax_severe(probs: &[f64; 3]) -> StenosisClass {
    let mut best = 0;
    for i in 1..3 {
        if probs[i] >= probs[best] {
            best = i;
        }
    }
    StenosisClass::ALL[best]
}

/// Most frequent class; ties go to the more severe class.
pub fn majority_vote(votes: &[StenosisClass]) -> Result<StenosisClass> {
    if votes.is_empty() {
        return Err(Error::Argument("majority vote over no predictions".into()));
    }
    let mut counts = [0usize; 3];
    for v in votes {
        counts[v.index()] += 1;
    }
    let mut best = 0;
    for i in 1..3 {
        if counts[i] >= counts[best] {
            best = i;
        }
    }
    Ok(StenosisClass::ALL[best])
}

pub fn majority_vote_views(views: &[ViewPrediction]) -> Result<StenosisClass> {
    let votes: Vec<_> = views.iter().map(ViewPrediction::predicted).collect();
    majority_vote(&votes)
}

/// Most severe class in a non-empty list.
pub fn max_aggregate(classes: &[StenosisClass]) -> Result<StenosisClass> {
    classes
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Argument("max aggregation over an empty list".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Segment,
    Artery,
    Patient,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Segment, Level::Artery, Level::Patient];

    pub fn name(self) -> &'static str {
        match self {
            Level::Segment => "segment",
            Level::Artery => "artery",
            Level::Patient => "patient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: Level,
    /// (truth, predicted)
    pub pairs: Vec<(StenosisClass, StenosisClass)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub per_class_f1: [f64; 3],
    pub weighted_f1: f64,
    /// Row-normalised by true-class support; rows of absent classes are zero.
    pub confusion: [[f64; 3]; 3],
    /// Raw counts, rows = truth, columns = prediction.
    pub counts: [[usize; 3]; 3],
    pub support: [usize; 3],
}

fn check_pairs(pairs: &[(StenosisClass, StenosisClass)]) -> Result<()> {
    if pairs.is_empty() {
        Err(Error::Argument(
            "metrics need at least one (truth, prediction) pair".into(),
        ))
    } else {
        Ok(())
    }
}

pub fn confusion_counts(pairs: &[(StenosisClass, StenosisClass)]) -> [[usize; 3]; 3] {
    let mut m = [[0usize; 3]; 3];
    for (t, p) in pairs {
        m[t.index()][p.index()] += 1;
    }
    m
}

/// Row-normalised confusion matrix.
pub fn confusion(pairs: &[(StenosisClass, StenosisClass)]) -> Result<[[f64; 3]; 3]> {
    check_pairs(pairs)?;
    let counts = confusion_counts(pairs);
    let mut out = [[0.0; 3]; 3];
    for (row, c) in out.iter_mut().zip(&counts) {
        let s: usize = c.iter().sum();
        if s > 0 {
            for (o, &v) in row.iter_mut().zip(c) {
                *o = v as f64 / s as f64;
            }
        }
    }
    Ok(out)
}

/// One-vs-rest F1 per class, 0 where precision and recall are both undefined.
pub fn per_class_f1(pairs: &[(StenosisClass, StenosisClass)]) -> Result<[f64; 3]> {
    check_pairs(pairs)?;
    let m = confusion_counts(pairs);
    let mut f1 = [0.0; 3];
    for (i, f) in f1.iter_mut().enumerate() {
        let tp = m[i][i] as f64;
        let fp = (0..3).filter(|&r| r != i).map(|r| m[r][i]).sum::<usize>() as f64;
        let fn_ = (0..3).filter(|&c| c != i).map(|c| m[i][c]).sum::<usize>() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        *f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    Ok(f1)
}

/// `Σ F1_i · W_i` with `W_i` the share of true instances of class i.
pub fn weighted_f1(pairs: &[(StenosisClass, StenosisClass)]) -> Result<f64> {
    let f1 = per_class_f1(pairs)?;
    let mut support = [0usize; 3];
    for (t, _) in pairs {
        support[t.index()] += 1;
    }
    let weighted: f64 = f1.iter().zip(&support).map(|(f, &s)| f * s as f64).sum();
    Ok(weighted / pairs.len() as f64)
}

pub fn metrics(pairs: &[(StenosisClass, StenosisClass)]) -> Result<MetricsReport> {
    check_pairs(pairs)?;
    let counts = confusion_counts(pairs);
    let mut support = [0usize; 3];
    for (i, row) in counts.iter().enumerate() {
        support[i] = row.iter().sum();
    }
    let correct: usize = (0..3).map(|i| counts[i][i]).sum();
    Ok(MetricsReport {
        samples: pairs.len(),
        accuracy: correct as f64 / pairs.len() as f64,
        per_class_f1: per_class_f1(pairs)?,
        weighted_f1: weighted_f1(pairs)?,
        confusion: confusion(pairs)?,
        counts,
        support,
    })
}

impl MetricsReport {
    /// Confusion matrix as a text table, rows = truth.
    pub fn confusion_table(&self, level: Level) -> String {
        let mut s = String::new();
        let title = format!("{} level", level.name());
        let _ = writeln!(
            s,
            "{title:<18}{:>16}{:>16}{:>16}",
            "No stenosis", "Non-Significant", "Significant"
        );
        for c in StenosisClass::ALL {
            let row = self.confusion[c.index()];
            let _ = writeln!(s, "{:<18}{:>16.2}{:>16.2}{:>16.2}", c.name(), row[0], row[1], row[2]);
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("truth,no_stenosis,non_significant,significant\n");
        for c in StenosisClass::ALL {
            let r = self.confusion[c.index()];
            let _ = writeln!(s, "{},{},{},{}", c.index(), r[0], r[1], r[2]);
        }
        s
    }
}

/// Identifies a branch across the whole cohort.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BranchKey {
    pub patient: String,
    pub artery: String,
    pub branch: String,
}

impl std::fmt::Display for BranchKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.patient, self.artery, self.branch)
    }
}

/// patient → artery → branches.
pub type Hierarchy = BTreeMap<String, BTreeMap<String, Vec<String>>>;

pub fn hierarchy_of<'a>(keys: impl IntoIterator<Item = &'a BranchKey>) -> Hierarchy {
    let mut h = Hierarchy::new();
    for k in keys {
        let branches = h
            .entry(k.patient.clone())
            .or_default()
            .entry(k.artery.clone())
            .or_default();
        if !branches.contains(&k.branch) {
            branches.push(k.branch.clone());
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub segment: MetricsReport,
    pub artery: MetricsReport,
    pub patient: MetricsReport,
}

impl Evaluation {
    pub fn level(&self, level: Level) -> &MetricsReport {
        match level {
            Level::Segment => &self.segment,
            Level::Artery => &self.artery,
            Level::Patient => &self.patient,
        }
    }
}

/// Builds the three level results for a hierarchy.
pub fn level_results(
    hierarchy: &Hierarchy,
    truths: &BTreeMap<BranchKey, StenosisClass>,
    views: &BTreeMap<BranchKey, Vec<ViewPrediction>>,
) -> Result<[LevelResult; 3]> {
    if let Some(k) = views.keys().find(|k| !truths.contains_key(*k)) {
        return Err(Error::Consistency(format!(
            "branch {k} has predictions but no truth label"
        )));
    }
    let mut seg = Vec::new();
    let mut art = Vec::new();
    let mut pat = Vec::new();
    for (patient, arteries) in hierarchy {
        let mut pt = Vec::new();
        let mut pp = Vec::new();
        for (artery, branches) in arteries {
            let mut at = Vec::new();
            let mut ap = Vec::new();
            for branch in branches {
                let key = BranchKey {
                    patient: patient.clone(),
                    artery: artery.clone(),
                    branch: branch.clone(),
                };
                let truth = *truths
                    .get(&key)
                    .ok_or_else(|| Error::Consistency(format!("branch {key} has no truth label")))?;
                let preds = views
                    .get(&key)
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| Error::Consistency(format!("branch {key} has no predictions")))?;
                let verdict = majority_vote_views(preds)?;
                seg.push((truth, verdict));
                at.push(truth);
                ap.push(verdict);
            }
            let (t, p) = (max_aggregate(&at)?, max_aggregate(&ap)?);
            art.push((t, p));
            pt.push(t);
            pp.push(p);
        }
        pat.push((max_aggregate(&pt)?, max_aggregate(&pp)?));
    }
    Ok([
        LevelResult {
            level: Level::Segment,
            pairs: seg,
        },
        LevelResult {
            level: Level::Artery,
            pairs: art,
        },
        LevelResult {
            level: Level::Patient,
            pairs: pat,
        },
    ])
}

pub fn evaluate(
    hierarchy: &Hierarchy,
    truths: &BTreeMap<BranchKey, StenosisClass>,
    views: &BTreeMap<BranchKey, Vec<ViewPrediction>>,
) -> Result<Evaluation> {
    let [s, a, p] = level_results(hierarchy, truths, views)?;
    Ok(Evaluation {
        segment: metrics(&s.pairs)?,
        artery: metrics(&a.pairs)?,
        patient: metrics(&p.pairs)?,
    })
}

/// One per-view prediction as exchanged in predictions JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub patient: String,
    pub artery: String,
    pub branch: String,
    pub view: usize,
    pub probs: [f64; 3],
}

/// One branch label, as listed in a dataset manifest or a labels file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub patient: String,
    pub artery: String,
    pub branch: String,
    pub class: StenosisClass,
}

/// Evaluates flat prediction records against flat labels. Both sides must
/// describe exactly the same set of branches.
pub fn evaluate_records(labels: &[LabelRecord], preds: &[PredictionRecord]) -> Result<Evaluation> {
    let mut truths = BTreeMap::new();
    for l in labels {
        let key = BranchKey {
            patient: l.patient.clone(),
            artery: l.artery.clone(),
            branch: l.branch.clone(),
        };
        if truths.insert(key.clone(), l.class).is_some() {
            return Err(Error::Consistency(format!("branch {key} labelled twice")));
        }
    }
    let mut views: BTreeMap<BranchKey, Vec<ViewPrediction>> = BTreeMap::new();
    for p in preds {
        let key = BranchKey {
            patient: p.patient.clone(),
            artery: p.artery.clone(),
            branch: p.branch.clone(),
        };
        views
            .entry(key)
            .or_default()
            .push(ViewPrediction::new(p.view, p.probs)?);
    }
    if let Some(k) = truths.keys().find(|k| !views.contains_key(*k)) {
        return Err(Error::Consistency(format!("labelled branch {k} has no predictions")));
    }
    let hierarchy = hierarchy_of(views.keys());
    evaluate(&hierarchy, &truths, &views)
}
