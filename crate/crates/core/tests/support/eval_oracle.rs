//! Brute-force reference evaluator, written without the library's
//! hierarchy or metric helpers, plus random instance generators.

#![allow(dead_code)]

use cass_core::eval::{self, LabelRecord, MetricsReport, PredictionRecord};
use cass_core::labels::StenosisClass;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// accuracy, per-class F1, weighted F1, row-normalised confusion.
#[derive(Debug, Clone)]
pub struct BruteMetrics {
    pub accuracy: f64,
    pub f1: [f64; 3],
    pub weighted_f1: f64,
    pub confusion: [[f64; 3]; 3],
}

fn brute_argmax(p: &[f64; 3]) -> usize {
    // scan from the most severe class; only a strictly larger value wins
    let mut best = 2;
    for c in (0..2).rev() {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}

fn brute_vote(classes: &[usize]) -> usize {
    let count = |c: usize| classes.iter().filter(|&&x| x == c).count();
    let mut best = 2;
    for c in (0..2).rev() {
        if count(c) > count(best) {
            best = c;
        }
    }
    best
}

fn brute_metrics(pairs: &[(usize, usize)]) -> BruteMetrics {
    let n = pairs.len() as f64;
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    let mut f1 = [0.0; 3];
    let mut weighted = 0.0;
    let mut confusion = [[0.0; 3]; 3];
    for c in 0..3 {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let support = tp + fn_;
        // F1 = 2TP / (2TP + FP + FN), which equals 2PR/(P+R) and is 0 when undefined
        f1[c] = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        weighted += f1[c] * support / n;
        for d in 0..3 {
            let k = pairs.iter().filter(|&&(t, p)| t == c && p == d).count() as f64;
            confusion[c][d] = if support == 0.0 { 0.0 } else { k / support };
        }
    }
    BruteMetrics {
        accuracy: correct / n,
        f1,
        weighted_f1: weighted,
        confusion,
    }
}

/// Segment, artery and patient metrics by direct enumeration of the flat
/// records.
pub fn brute_evaluate(labels: &[LabelRecord], preds: &[PredictionRecord]) -> [BruteMetrics; 3] {
    let branch_verdict = |l: &LabelRecord| {
        let votes: Vec<usize> = preds
            .iter()
            .filter(|p| p.patient == l.patient && p.artery == l.artery && p.branch == l.branch)
            .map(|p| brute_argmax(&p.probs))
            .collect();
        brute_vote(&votes)
    };
    let verdicts: Vec<(usize, usize)> = labels.iter().map(|l| (l.class.index(), branch_verdict(l))).collect();

    let mut arteries: Vec<(&str, &str)> = labels.iter().map(|l| (l.patient.as_str(), l.artery.as_str())).collect();
    arteries.sort();
    arteries.dedup();
    let artery_pairs: Vec<(usize, usize)> = arteries
        .iter()
        .map(|&(pa, ar)| {
            let idx = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| l.patient == pa && l.artery == ar);
            idx.fold((0, 0), |(t, p), (i, _)| (t.max(verdicts[i].0), p.max(verdicts[i].1)))
        })
        .collect();

    let mut patients: Vec<&str> = labels.iter().map(|l| l.patient.as_str()).collect();
    patients.sort();
    patients.dedup();
    let patient_pairs: Vec<(usize, usize)> = patients
        .iter()
        .map(|&pa| {
            let idx = labels.iter().enumerate().filter(|(_, l)| l.patient == pa);
            idx.fold((0, 0), |(t, p), (i, _)| (t.max(verdicts[i].0), p.max(verdicts[i].1)))
        })
        .collect();

    [
        brute_metrics(&verdicts),
        brute_metrics(&artery_pairs),
        brute_metrics(&patient_pairs),
    ]
}

/// Largest absolute difference between a library report and the oracle.
pub fn max_diff(lib: &MetricsReport, brute: &BruteMetrics) -> f64 {
    let mut d = (lib.accuracy - brute.accuracy)
        .abs()
        .max((lib.weighted_f1 - brute.weighted_f1).abs());
    for c in 0..3 {
        d = d.max((lib.per_class_f1[c] - brute.f1[c]).abs());
        for e in 0..3 {
            d = d.max((lib.confusion[c][e] - brute.confusion[c][e]).abs());
        }
    }
    d
}

fn random_probs(r: &mut ChaCha8Rng) -> [f64; 3] {
    // small integer weights so that exact ties occur regularly
    loop {
        let w = [
            r.random_range(0..4u32),
            r.random_range(0..4u32),
            r.random_range(0..4u32),
        ];
        let s: u32 = w.iter().sum();
        if s > 0 {
            return w.map(|x| x as f64 / s as f64);
        }
    }
}

/// Up to 10 patients, 1–3 arteries each, 1–4 branches per artery, 1–9
/// views per branch.
pub fn random_instance(r: &mut ChaCha8Rng) -> (Vec<LabelRecord>, Vec<PredictionRecord>) {
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for p in 0..r.random_range(1..=10) {
        for a in ["LAD", "LCX", "RCA"].iter().take(r.random_range(1..=3)) {
            for b in 0..r.random_range(1..=4) {
                let (patient, artery, branch) = (format!("p{p}"), a.to_string(), format!("{a}-{b}"));
                labels.push(LabelRecord {
                    patient: patient.clone(),
                    artery: artery.clone(),
                    branch: branch.clone(),
                    class: StenosisClass::from_index(r.random_range(0..3)).unwrap(),
                });
                for view in 0..r.random_range(1..=9) {
                    preds.push(PredictionRecord {
                        patient: patient.clone(),
                        artery: artery.clone(),
                        branch: branch.clone(),
                        view,
                        probs: random_probs(r),
                    });
                }
            }
        }
    }
    // record order must not matter
    preds.shuffle(r);
    (labels, preds)
}

/// Runs `n` random hierarchies through both evaluators and returns the
/// largest metric disagreement.
pub fn hierarchy_agreement(n: usize, seed: u64) -> Result<f64, String> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let (labels, preds) = random_instance(&mut r);
        let lib = eval::evaluate_records(&labels, &preds).map_err(|e| format!("instance {i}: {e}"))?;
        let brute = brute_evaluate(&labels, &preds);
        worst = worst
            .max(max_diff(&lib.segment, &brute[0]))
            .max(max_diff(&lib.artery, &brute[1]))
            .max(max_diff(&lib.patient, &brute[2]));
    }
    Ok(worst)
}

fn class(i: usize) -> StenosisClass {
    StenosisClass::from_index(i).unwrap()
}

/// Majority permutation invariance, winner monotonicity, max-fold laws and
/// hierarchy monotonicity over `n` random cases.
pub fn unit_laws(n: usize, seed: u64) -> Result<(), String> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let len = r.random_range(1..=50);
        let votes: Vec<StenosisClass> = (0..len).map(|_| class(r.random_range(0..3))).collect();
        let verdict = eval::majority_vote(&votes).map_err(|e| e.to_string())?;
        let brute = brute_vote(&votes.iter().map(|c| c.index()).collect::<Vec<_>>());
        if verdict.index() != brute {
            return Err(format!("case {case}: majority {verdict:?} vs brute-force {brute}"));
        }
        let mut shuffled = votes.clone();
        shuffled.shuffle(&mut r);
        if eval::majority_vote(&shuffled).unwrap() != verdict {
            return Err(format!("case {case}: majority vote not permutation invariant"));
        }
        // moving any vote over to the winning class keeps it the winner
        let i = r.random_range(0..len);
        let mut moved = votes.clone();
        moved[i] = verdict;
        if eval::majority_vote(&moved).unwrap() != verdict {
            return Err(format!("case {case}: an extra vote for the winner changed the verdict"));
        }

        let m = eval::max_aggregate(&votes).unwrap();
        let fold = votes
            .iter()
            .copied()
            .fold(StenosisClass::NoStenosis, StenosisClass::max);
        if m != fold {
            return Err(format!("case {case}: max_aggregate differs from fold-max"));
        }
        if eval::max_aggregate(&[m, m]).unwrap() != m || eval::max_aggregate(&shuffled).unwrap() != m {
            return Err(format!("case {case}: max_aggregate not idempotent/commutative"));
        }
        let cut = r.random_range(0..=len);
        let (a, b) = votes.split_at(cut);
        let nested = match (a.is_empty(), b.is_empty()) {
            (true, _) => eval::max_aggregate(b).unwrap(),
            (_, true) => eval::max_aggregate(a).unwrap(),
            _ => eval::max_aggregate(&[eval::max_aggregate(a).unwrap(), eval::max_aggregate(b).unwrap()]).unwrap(),
        };
        if nested != m {
            return Err(format!("case {case}: max_aggregate not associative"));
        }
    }

    // raising one branch's views never lowers artery or patient verdicts
    for case in 0..n / 10 {
        let (labels, mut preds) = random_instance(&mut r);
        let before = eval::level_results(
            &eval::hierarchy_of(keys(&preds).iter()),
            &truth_map(&labels),
            &view_map(&preds),
        )
        .map_err(|e| e.to_string())?;
        let target = preds[r.random_range(0..preds.len())].clone();
        for p in preds
            .iter_mut()
            .filter(|p| p.patient == target.patient && p.branch == target.branch)
        {
            p.probs = [0.0, 0.0, 1.0];
        }
        let after = eval::level_results(
            &eval::hierarchy_of(keys(&preds).iter()),
            &truth_map(&labels),
            &view_map(&preds),
        )
        .map_err(|e| e.to_string())?;
        for lvl in 0..3 {
            for (x, y) in before[lvl].pairs.iter().zip(&after[lvl].pairs) {
                if y.1 < x.1 {
                    return Err(format!("case {case}: raising a branch lowered a level-{lvl} verdict"));
                }
            }
        }
    }
    Ok(())
}

fn key_of(p: &PredictionRecord) -> eval::BranchKey {
    eval::BranchKey {
        patient: p.patient.clone(),
        artery: p.artery.clone(),
        branch: p.branch.clone(),
    }
}

fn keys(preds: &[PredictionRecord]) -> Vec<eval::BranchKey> {
    preds.iter().map(key_of).collect()
}

fn truth_map(labels: &[LabelRecord]) -> std::collections::BTreeMap<eval::BranchKey, StenosisClass> {
    labels
        .iter()
        .map(|l| {
            (
                eval::BranchKey {
                    patient: l.patient.clone(),
                    artery: l.artery.clone(),
                    branch: l.branch.clone(),
                },
                l.class,
            )
        })
        .collect()
}

fn view_map(preds: &[PredictionRecord]) -> std::collections::BTreeMap<eval::BranchKey, Vec<eval::ViewPrediction>> {
    let mut m: std::collections::BTreeMap<_, Vec<_>> = Default::default();
    for p in preds {
        m.entry(key_of(p))
            .or_default()
            .push(eval::ViewPrediction::new(p.view, p.probs).unwrap());
    }
    m
}
