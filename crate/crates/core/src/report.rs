//! Free-text report parsing into per-branch stenosis findings, CAD-RADS
//! grades and three-class labels.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{BranchId, Section, StenosisClass};

/// Six-grade CAD-RADS stenosis band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CadRadsGrade {
    Normal,
    Minimal,
    Mild,
    Moderate,
    Severe,
    TotalOcclusion,
}

impl CadRadsGrade {
    pub const ALL: [CadRadsGrade; 6] = [
        CadRadsGrade::Normal,
        CadRadsGrade::Minimal,
        CadRadsGrade::Mild,
        CadRadsGrade::Moderate,
        CadRadsGrade::Severe,
        CadRadsGrade::TotalOcclusion,
    ];

    /// `[lo, hi)` band, except the point bands 0 and 100.
    pub fn band(self) -> (f64, f64) {
        match self {
            CadRadsGrade::Normal => (0.0, 0.0),
            CadRadsGrade::Minimal => (0.0, 25.0),
            CadRadsGrade::Mild => (25.0, 50.0),
            CadRadsGrade::Moderate => (50.0, 70.0),
            CadRadsGrade::Severe => (70.0, 100.0),
            CadRadsGrade::TotalOcclusion => (100.0, 100.0),
        }
    }

    pub fn midpoint(self) -> f64 {
        let (lo, hi) = self.band();
        (lo + hi) / 2.0
    }

    pub fn name(self) -> &'static str {
        match self {
            CadRadsGrade::Normal => "normal",
            CadRadsGrade::Minimal => "minimal",
            CadRadsGrade::Mild => "mild",
            CadRadsGrade::Moderate => "moderate",
            CadRadsGrade::Severe => "severe",
            CadRadsGrade::TotalOcclusion => "total occlusion",
        }
    }
}

impl fmt::Display for CadRadsGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_percent(p: f64) -> Result<()> {
    if (0.0..=100.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain {
            value: p,
            domain: "[0, 100] percent",
        })
    }
}

pub fn grade_of(percent: f64) -> Result<CadRadsGrade> {
    check_percent(percent)?;
    Ok(match percent {
        p if p == 0.0 => CadRadsGrade::Normal,
        p if p < 25.0 => CadRadsGrade::Minimal,
        p if p < 50.0 => CadRadsGrade::Mild,
        p if p < 70.0 => CadRadsGrade::Moderate,
        p if p < 100.0 => CadRadsGrade::Severe,
        _ => CadRadsGrade::TotalOcclusion,
    })
}

/// Options of the three-class mapping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRule {
    /// Classify intervals by their midpoint instead of the upper bound.
    pub interval_midpoint: bool,
    /// Put exactly 50% into Significant.
    pub fifty_is_significant: bool,
}

impl ClassRule {
    pub fn class_of(&self, percent: f64) -> Result<StenosisClass> {
        check_percent(percent)?;
        Ok(if percent == 0.0 {
            StenosisClass::NoStenosis
        } else if percent < 50.0 || (percent == 50.0 && !self.fifty_is_significant) {
            StenosisClass::NonSignificant
        } else {
            StenosisClass::Significant
        })
    }

    pub fn class_of_interval(&self, lo: f64, hi: f64) -> Result<StenosisClass> {
        check_percent(lo)?;
        check_percent(hi)?;
        if lo > hi {
            return Err(Error::Argument(format!("interval [{lo}, {hi}] is reversed")));
        }
        self.class_of(if self.interval_midpoint { (lo + hi) / 2.0 } else { hi })
    }
}

/// Default three-class rule: 0 → none, (0, 50] → non-significant, above → significant.
pub fn class_of(percent: f64) -> Result<StenosisClass> {
    ClassRule::default().class_of(percent)
}

/// Interval by its upper bound.
pub fn class_of_interval(lo: f64, hi: f64) -> Result<StenosisClass> {
    ClassRule::default().class_of_interval(lo, hi)
}

/// One branch mention with its percentage (`lo == hi` for a single value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StenosisFinding {
    #[serde(with = "branch_token")]
    pub branch: BranchId,
    pub lo: f64,
    pub hi: f64,
    /// Byte offsets of the sentence the finding came from.
    pub span: (usize, usize),
}

mod branch_token {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &BranchId, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(b.section.token())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BranchId, D::Error> {
        let s = String::deserialize(d)?;
        s.parse::<Section>()
            .map(Section::branch_id)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatientLabelSet {
    pub patient_id: String,
    pub findings: Vec<StenosisFinding>,
    pub classes: BTreeMap<Section, StenosisClass>,
    pub warnings: Vec<String>,
}

impl PatientLabelSet {
    /// Per-branch `(lo, hi)` after resolving repeated mentions to the most
    /// severe one.
    pub fn severities(&self) -> BTreeMap<Section, (f64, f64)> {
        let mut out: BTreeMap<Section, (f64, f64)> = BTreeMap::new();
        for f in &self.findings {
            out.entry(f.branch.section)
                .and_modify(|v| {
                    if (f.hi, f.lo) > (v.1, v.0) {
                        *v = (f.lo, f.hi);
                    }
                })
                .or_insert((f.lo, f.hi));
        }
        out
    }
}

/// Branch synonyms, canonical token first. Matching is case-insensitive.
pub fn synonyms(section: Section) -> &'static [&'static str] {
    match section {
        Section::Lad => &["LAD", "left anterior descending"],
        Section::D1 => &["D-1", "D1", "first diagonal"],
        Section::D2 => &["D-2", "D2", "second diagonal"],
        Section::D3 => &["D-3", "D3", "third diagonal"],
        Section::Lcx => &["LCX", "LCx", "left circumflex", "circumflex"],
        Section::PlvLcx => &["PLV-LCX", "posterolateral branch of the LCX"],
        Section::PdaLcx => &["PDA-LCX", "posterior descending branch of the LCX"],
        Section::Rca => &["RCA", "right coronary artery"],
        Section::Om => &["OM", "obtuse marginal"],
        Section::Om1 => &["OM-1", "OM1", "first obtuse marginal"],
        Section::Om2 => &["OM-2", "OM2", "second obtuse marginal"],
        Section::Om3 => &["OM-3", "OM3", "third obtuse marginal"],
        Section::PlvRca => &["PLV-RCA", "posterolateral branch of the RCA"],
        Section::PdaRca => &["PDA-RCA", "posterior descending branch of the RCA"],
    }
}

/// Phrases read as 0%.
pub const NORMAL_PHRASES: &[&str] = &["normal", "no stenosis", "without stenosis"];
/// Phrases read as 100%.
pub const OCCLUSION_PHRASES: &[&str] = &["total occlusion", "totally occluded", "occluded"];

fn phrase_pattern(p: &str) -> String {
    p.split_whitespace().map(regex::escape).collect::<Vec<_>>().join(r"\s+")
}

struct Lexicon {
    branch: Regex,
    lookup: Vec<(String, Section)>,
    value: Regex,
    patient: Regex,
}

static LEXICON: LazyLock<Lexicon> = LazyLock::new(|| {
    let mut entries: Vec<(String, Section)> = Section::ALL
        .iter()
        .flat_map(|&s| synonyms(s).iter().map(move |syn| (syn.to_ascii_lowercase(), s)))
        .collect();
    entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
    entries.dedup_by(|a, b| a.0 == b.0);
    let alts: Vec<String> = entries.iter().map(|(p, _)| phrase_pattern(p)).collect();
    let branch = Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("branch regex");

    let num = r"(\d+(?:\.\d+)?)";
    let pct = r"\s*(?:%|percent\b)";
    let mut words: Vec<&str> = NORMAL_PHRASES.iter().chain(OCCLUSION_PHRASES).copied().collect();
    words.sort_by_key(|w| std::cmp::Reverse(w.len()));
    let word_alts: Vec<String> = words.iter().map(|w| phrase_pattern(w)).collect();
    let value = Regex::new(&format!(
        r"(?i){num}(?:{pct})?\s*(?:-|–|to)\s*{num}{pct}|{num}{pct}|\b(?P<word>{})\b",
        word_alts.join("|")
    ))
    .expect("value regex");
    let patient = Regex::new(r"(?im)^\s*patient(?:\s+id)?\s*[:#]\s*(\S+)").expect("patient regex");
    Lexicon {
        branch,
        lookup: entries,
        value,
        patient,
    }
});

fn section_for(matched: &str) -> Section {
    let key = matched
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase();
    LEXICON
        .lookup
        .iter()
        .find(|(p, _)| *p == key)
        .map(|&(_, s)| s)
        .expect("matched text comes from the lexicon")
}

/// Sentence boundaries: newline, semicolon, or a period not inside a number.
fn sentences(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let end = match b {
            b'\n' | b';' => true,
            b'.' => !(i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() && i > 0 && bytes[i - 1].is_ascii_digit()),
            _ => false,
        };
        if end {
            if i > start {
                out.push((start, i));
            }
            start = i + 1;
        }
    }
    if start < text.len() {
        out.push((start, text.len()));
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Value {
    start: usize,
    lo: f64,
    hi: f64,
}

fn values_in(text: &str, offset: usize) -> Result<Vec<Value>> {
    let mut out = Vec::new();
    for c in LEXICON.value.captures_iter(text) {
        let m = c.get(0).expect("whole match");
        let (start, end) = (offset + m.start(), offset + m.end());
        let (lo, hi) = if let Some(w) = c.name("word") {
            let w = w
                .as_str()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_ascii_lowercase();
            if NORMAL_PHRASES.contains(&w.as_str()) {
                (0.0, 0.0)
            } else {
                (100.0, 100.0)
            }
        } else if let (Some(a), Some(b)) = (c.get(1), c.get(2)) {
            (a.as_str().parse::<f64>().unwrap(), b.as_str().parse::<f64>().unwrap())
        } else {
            let v = c.get(3).expect("single value").as_str().parse::<f64>().unwrap();
            (v, v)
        };
        if hi > 100.0 || lo > 100.0 {
            return Err(Error::Parse {
                start,
                end,
                message: format!("percentage above 100 in `{}`", m.as_str()),
            });
        }
        if lo > hi {
            return Err(Error::Parse {
                start,
                end,
                message: format!("reversed interval `{}`", m.as_str()),
            });
        }
        out.push(Value { start, lo, hi });
    }
    Ok(out)
}

/// Parses a report with the default class rule.
pub fn parse_report(text: &str) -> Result<PatientLabelSet> {
    parse_report_with(text, ClassRule::default())
}

/// Scans sentence by sentence. A branch mention takes the first value after
/// it and before the next mention; failing that, the nearest unclaimed value
/// before it. Repeated mentions of a branch resolve to the most severe class.
pub fn parse_report_with(text: &str, rule: ClassRule) -> Result<PatientLabelSet> {
    let mut out = PatientLabelSet::default();
    match LEXICON.patient.captures(text) {
        Some(c) => out.patient_id = c[1].to_string(),
        None => out.warnings.push("no patient id line".into()),
    }
    for (s0, s1) in sentences(text) {
        let sentence = &text[s0..s1];
        let mentions: Vec<(usize, usize, Section)> = LEXICON
            .branch
            .find_iter(sentence)
            .map(|m| (s0 + m.start(), s0 + m.end(), section_for(m.as_str())))
            .collect();
        if mentions.is_empty() {
            continue;
        }
        let values = values_in(sentence, s0)?;
        let mut claimed = vec![false; values.len()];
        for (k, &(m0, m1, section)) in mentions.iter().enumerate() {
            let next = mentions.get(k + 1).map_or(s1, |m| m.0);
            let prev = if k == 0 { s0 } else { mentions[k - 1].1 };
            let pick = (0..values.len())
                .find(|&i| !claimed[i] && values[i].start >= m1 && values[i].start < next)
                .or_else(|| {
                    (0..values.len())
                        .rev()
                        .find(|&i| !claimed[i] && values[i].start >= prev && values[i].start < m0)
                });
            match pick {
                Some(i) => {
                    claimed[i] = true;
                    out.findings.push(StenosisFinding {
                        branch: section.branch_id(),
                        lo: values[i].lo,
                        hi: values[i].hi,
                        span: (s0, s1),
                    });
                }
                None => out
                    .warnings
                    .push(format!("no stenosis value for {} in `{}`", section, sentence.trim())),
            }
        }
    }
    if out.findings.is_empty() {
        out.warnings.push("no recognizable branch findings".into());
    }
    for f in &out.findings {
        let c = rule.class_of_interval(f.lo, f.hi)?;
        let e = out.classes.entry(f.branch.section).or_insert(c);
        *e = (*e).max(c);
    }
    Ok(out)
}
