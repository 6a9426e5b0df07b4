//! Procedural curved-vessel MPR stand-ins with ground truth, patient
//! hierarchies and rendered text reports.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabelRecord;
use crate::labels::{Section, StenosisClass};
use crate::preprocess::{Mask, RawMprImage};
use crate::report::{self, CadRadsGrade, NORMAL_PHRASES, OCCLUSION_PHRASES};

/// Brightest value the background and vessel may take; text sits above it.
pub const TISSUE_MAX: f64 = 235.0;
/// Burned-in text intensity.
pub const TEXT_LEVEL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPresence {
    pub section: Section,
    pub prob: f64,
}

/// Default menu: presence rates of each branch in the reference cohort
/// (cases per branch over 828 patients).
pub fn default_branch_menu() -> Vec<BranchPresence> {
    [
        (Section::Lad, 822),
        (Section::D1, 729),
        (Section::D2, 356),
        (Section::D3, 68),
        (Section::Lcx, 639),
        (Section::PlvLcx, 15),
        (Section::PdaLcx, 17),
        (Section::Rca, 91),
        (Section::Om, 6),
        (Section::Om1, 81),
        (Section::Om2, 281),
        (Section::Om3, 75),
        (Section::PlvRca, 609),
        (Section::PdaRca, 71),
    ]
    .into_iter()
    .map(|(section, n)| BranchPresence {
        section,
        prob: n as f64 / 828.0,
    })
    .collect()
}

/// Class mix and the percent range drawn within each class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityDist {
    /// Relative weights of NoStenosis, NonSignificant, Significant.
    pub weights: [f64; 3],
    pub non_significant: (f64, f64),
    pub significant: (f64, f64),
}

impl Default for SeverityDist {
    fn default() -> Self {
        SeverityDist {
            weights: [0.5, 0.25, 0.25],
            non_significant: (25.0, 45.0),
            significant: (65.0, 95.0),
        }
    }
}

impl SeverityDist {
    /// Integer percent.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let u = rng.random_range(0.0..total);
        let range = if u < self.weights[0] {
            return 0.0;
        } else if u < self.weights[0] + self.weights[1] {
            self.non_significant
        } else {
            self.significant
        };
        rng.random_range(range.0.round() as u32..=range.1.round() as u32) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub image_size: usize,
    pub views_per_branch: usize,
    pub patients: usize,
    pub branch_menu: Vec<BranchPresence>,
    pub severity: SeverityDist,
    pub text_overlay: bool,
    /// Probability that a neighbouring vessel shows up in part of a branch's views.
    pub distractor_branch_prob: f64,
    /// Adds small near-saturated blobs off the vessel.
    pub calcified_distractor: bool,
    /// Fraction of views in which the narrowing is visible.
    pub visible_view_fraction: f64,
    /// Background noise σ as a fraction of the 8-bit range.
    pub noise_sigma: f64,
    /// Healthy vessel width in pixels.
    pub vessel_width: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_size: 64,
            views_per_branch: 50,
            patients: 10,
            branch_menu: default_branch_menu(),
            severity: SeverityDist::default(),
            text_overlay: true,
            distractor_branch_prob: 0.1,
            calcified_distractor: false,
            visible_view_fraction: 0.7,
            noise_sigma: 0.05,
            vessel_width: 10.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.views_per_branch == 0 {
            return bad("views_per_branch must be at least 1".into());
        }
        if self.image_size < 24 {
            return bad(format!("image_size {} is below the minimum of 24", self.image_size));
        }
        let probs = self
            .branch_menu
            .iter()
            .map(|b| b.prob)
            .chain([self.distractor_branch_prob, self.visible_view_fraction]);
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.branch_menu.is_empty() {
            return bad("branch menu is empty".into());
        }
        if self.severity.weights.iter().any(|&w| w < 0.0) || self.severity.weights.iter().sum::<f64>() <= 0.0 {
            return bad("severity weights must be non-negative with a positive sum".into());
        }
        if self.noise_sigma < 0.0 || self.vessel_width <= 0.0 {
            return bad("noise_sigma must be non-negative and vessel_width positive".into());
        }
        Ok(())
    }
}

/// Per-image ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub severity: f64,
    pub class: StenosisClass,
    pub vessel_mask: Mask,
    pub text_mask: Mask,
    pub stenosis_visible: bool,
}

const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Stamps `text` (digits only) in a 3×5 font at `(row, col)`.
fn stamp_digits(pixels: &mut [u8], mask: &mut Mask, text: &str, row: usize, col: usize) {
    let w = mask.width;
    for (k, ch) in text.chars().enumerate() {
        let glyph = DIGITS[ch.to_digit(10).expect("digit") as usize];
        for (dy, bits) in glyph.iter().enumerate() {
            for dx in 0..3 {
                if bits & (0b100 >> dx) != 0 {
                    let (y, x) = (row + dy, col + k * 4 + dx);
                    if y < mask.height && x < w {
                        pixels[y * w + x] = TEXT_LEVEL;
                        mask.bits[y * w + x] = true;
                    }
                }
            }
        }
    }
}

/// Vessel geometry shared by all views of a branch: a 3-D sinusoid seen
/// from view angles spread over 180°.
#[derive(Debug, Clone, Copy)]
struct Vessel {
    centre: f64,
    amp_y: f64,
    amp_z: f64,
    freq_y: f64,
    freq_z: f64,
    phase_y: f64,
    phase_z: f64,
    width: f64,
    peak: f64,
}

impl Vessel {
    fn random<R: Rng>(rng: &mut R, size: f64, width: f64, centre: f64) -> Self {
        Vessel {
            centre,
            amp_y: rng.random_range(0.04..0.12) * size,
            amp_z: rng.random_range(0.02..0.08) * size,
            freq_y: rng.random_range(0.6..1.4),
            freq_z: rng.random_range(0.6..1.4),
            phase_y: rng.random_range(0.0..2.0 * PI),
            phase_z: rng.random_range(0.0..2.0 * PI),
            width,
            peak: rng.random_range(140.0..170.0),
        }
    }

    fn centre_at(&self, x: f64, size: f64, theta: f64) -> f64 {
        let t = 2.0 * PI * x / size;
        self.centre
            + self.amp_y * (self.freq_y * t + self.phase_y).sin() * theta.cos()
            + self.amp_z * (self.freq_z * t + self.phase_z).sin() * theta.sin()
    }
}

/// Local narrowing: full depth on a plateau around `at`, cosine taper outside.
#[derive(Debug, Clone, Copy)]
struct Narrowing {
    at: f64,
    depth: f64,
}

const PLATEAU: f64 = 3.0;
const TAPER: f64 = 4.0;

impl Narrowing {
    fn factor(&self, x: f64) -> f64 {
        let d = (x - self.at).abs();
        let g = if d <= PLATEAU {
            1.0
        } else if d < PLATEAU + TAPER {
            0.5 * (1.0 + (PI * (d - PLATEAU) / TAPER).cos())
        } else {
            0.0
        };
        1.0 - self.depth * g
    }
}

/// Adds the band to `values` and, if given, marks its pixels in `mask`.
fn draw_band(
    values: &mut [f64],
    mask: Option<&mut Mask>,
    size: usize,
    vessel: &Vessel,
    narrowing: Option<Narrowing>,
    theta: f64,
) {
    let mut mask = mask;
    for x in 0..size {
        let xf = x as f64;
        let half = 0.5 * vessel.width * narrowing.map_or(1.0, |n| n.factor(xf));
        if half <= 0.0 {
            continue;
        }
        let yc = vessel.centre_at(xf, size as f64, theta);
        // FWHM of the Gaussian cross-section equals the band width
        let sigma = half / (2.0 * 2f64.ln()).sqrt();
        let (y0, y1) = (
            (yc - 4.0 * sigma).floor().max(0.0) as usize,
            (yc + 4.0 * sigma).ceil().max(0.0) as usize,
        );
        for y in y0..=y1.min(size - 1) {
            let d = y as f64 - yc;
            values[y * size + x] += vessel.peak * (-d * d / (2.0 * sigma * sigma)).exp();
            if d.abs() <= half {
                if let Some(m) = mask.as_deref_mut() {
                    m.bits[y * size + x] = true;
                }
            }
        }
    }
}

fn background<R: Rng>(size: usize, noise_sigma: f64, rng: &mut R) -> Vec<f64> {
    let base = rng.random_range(40.0..70.0);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(2..5))
        .map(|_| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                rng.random_range(0.1..0.3) * size as f64,
                rng.random_range(-20.0..25.0),
            )
        })
        .collect();
    let noise = Normal::new(0.0, noise_sigma * 255.0).expect("finite sigma");
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            let tissue: f64 = blobs
                .iter()
                .map(|&(by, bx, r, a)| a * (-((y - by).powi(2) + (x - bx).powi(2)) / (2.0 * r * r)).exp())
                .sum();
            base + tissue + noise.sample(rng)
        })
        .collect()
}

fn check_severity(severity: f64) -> Result<()> {
    if (0.0..=100.0).contains(&severity) {
        Ok(())
    } else {
        Err(Error::Domain {
            value: severity,
            domain: "[0, 100] percent",
        })
    }
}

/// Views in which the narrowing shows: a contiguous arc of view angles
/// (wrapping), `round(fraction · count)` long, at a random start.
fn visible_views<R: Rng>(count: usize, fraction: f64, rng: &mut R) -> Vec<bool> {
    let n = (fraction * count as f64).round() as usize;
    let start = rng.random_range(0..count);
    let mut v = vec![false; count];
    for k in 0..n {
        v[(start + k) % count] = true;
    }
    v
}

/// Renders all views of one branch.
pub fn generate_branch_views<R: Rng>(
    severity: f64,
    view_count: usize,
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<Vec<(RawMprImage, GroundTruth)>> {
    check_severity(severity)?;
    if view_count == 0 {
        return Err(Error::Argument("view_count must be at least 1".into()));
    }
    let size = cfg.image_size;
    let sf = size as f64;
    let class = report::class_of(severity)?;
    let centre = rng.random_range(0.45..0.55) * sf;
    let vessel = Vessel::random(rng, sf, cfg.vessel_width, centre);
    let narrowing = Narrowing {
        at: rng.random_range(0.25..0.75) * sf,
        depth: severity / 100.0,
    };
    let visible = visible_views(view_count, cfg.visible_view_fraction, rng);

    let distractor = rng.random_bool(cfg.distractor_branch_prob).then(|| {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let v = Vessel::random(rng, sf, 0.6 * cfg.vessel_width, vessel.centre + side * 0.3 * sf);
        let n = Narrowing {
            at: rng.random_range(0.25..0.75) * sf,
            depth: if rng.random_bool(0.5) {
                rng.random_range(0.6..0.9)
            } else {
                0.0
            },
        };
        (v, n, visible_views(view_count, 0.25, rng))
    });

    let mut out = Vec::with_capacity(view_count);
    for view in 0..view_count {
        let theta = PI * view as f64 / view_count as f64;
        let mut values = background(size, cfg.noise_sigma, rng);
        let mut vessel_mask = Mask::empty(size, size);
        let shown = severity > 0.0 && visible[view];
        draw_band(
            &mut values,
            Some(&mut vessel_mask),
            size,
            &vessel,
            shown.then_some(narrowing),
            theta,
        );
        if let Some((v, n, present)) = &distractor {
            if present[view] {
                draw_band(&mut values, None, size, v, Some(*n), theta);
            }
        }
        let mut pixels: Vec<u8> = values.iter().map(|&v| v.clamp(0.0, TISSUE_MAX).round() as u8).collect();
        if cfg.calcified_distractor {
            for _ in 0..rng.random_range(1..=3) {
                let x = rng.random_range(0.0..sf);
                let yc = vessel.centre_at(x, sf, theta);
                let off =
                    rng.random_range(0.6 * cfg.vessel_width..0.3 * sf) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let (by, bx) = ((yc + off).clamp(0.0, sf - 1.0), x);
                let level = rng.random_range(240.0..=245.0);
                for y in 0..size {
                    for xx in 0..size {
                        let d2 = (y as f64 - by).powi(2) + (xx as f64 - bx).powi(2);
                        if d2 <= 2.25 {
                            let p = &mut pixels[y * size + xx];
                            *p = (*p).max(level as u8);
                        }
                    }
                }
            }
        }
        let mut text_mask = Mask::empty(size, size);
        if cfg.text_overlay {
            let angle = (180 * view / view_count) as u32;
            stamp_digits(&mut pixels, &mut text_mask, &format!("{angle:03}"), 1, 1);
        }
        let img = RawMprImage::new(size, size, pixels)?;
        out.push((
            img,
            GroundTruth {
                severity,
                class,
                vessel_mask,
                text_mask,
                stenosis_visible: shown,
            },
        ));
    }
    Ok(out)
}

/// Reference labels of one patient, as written into its report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTruth {
    pub patient_id: String,
    /// Section → `(lo, hi)` percent, `lo == hi` for a single value.
    pub findings: BTreeMap<Section, (f64, f64)>,
}

fn fmt_pct(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}

/// Prose report naming every branch once, with synonyms, sentence shapes
/// and ordering drawn from `rng`.
pub fn render_report<R: Rng>(truth: &ReportTruth, rng: &mut R) -> String {
    let mut lines = vec![
        format!("Patient: {}", truth.patient_id),
        "Coronary CT angiography.".to_string(),
    ];
    let mut items: Vec<_> = truth.findings.iter().collect();
    items.shuffle(rng);
    for (&section, &(lo, hi)) in items {
        let name = *report::synonyms(section).choose(rng).expect("non-empty synonyms");
        let sentence = if lo == hi && lo == 0.0 {
            match rng.random_range(0..4) {
                0 => format!("{name}: {}.", NORMAL_PHRASES.choose(rng).unwrap()),
                1 => format!("The {name} is normal."),
                2 => format!("No stenosis in the {name}."),
                _ => format!("The {name} is without stenosis."),
            }
        } else if lo == hi && lo == 100.0 {
            match rng.random_range(0..3) {
                0 => format!("{name}: {}.", OCCLUSION_PHRASES.choose(rng).unwrap()),
                1 => format!("The {name} is totally occluded."),
                _ => format!("Total occlusion of the {name}."),
            }
        } else if lo == hi {
            let p = fmt_pct(lo);
            match rng.random_range(0..4) {
                0 => format!("{name}: {p}% stenosis."),
                1 => format!("{p}% stenosis of the {name}."),
                2 => format!("The {name} shows {p} percent narrowing."),
                _ => format!("{name} with {} {p}% plaque.", grade_word(lo)),
            }
        } else {
            let (a, b) = (fmt_pct(lo), fmt_pct(hi));
            match rng.random_range(0..3) {
                0 => format!("{name}: {} {a}-{b}% stenosis.", grade_word(hi)),
                1 => format!("{} {a}-{b}% stenosis of the {name}.", capitalise(grade_word(hi))),
                _ => format!("The {name} shows {a} to {b} percent narrowing."),
            }
        };
        lines.push(sentence);
    }
    lines.push("End of report.".to_string());
    lines.join("\n") + "\n"
}

fn grade_word(p: f64) -> &'static str {
    match report::grade_of(p).unwrap_or(CadRadsGrade::Severe) {
        CadRadsGrade::Normal | CadRadsGrade::Minimal => "minimal",
        CadRadsGrade::Mild => "mild",
        CadRadsGrade::Moderate => "moderate",
        _ => "severe",
    }
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Random report truth over a random subset of branches, mixing single
/// values, CAD-RADS band intervals, normal and occluded findings.
pub fn random_report_truth<R: Rng>(patient_id: &str, rng: &mut R) -> ReportTruth {
    let mut findings = BTreeMap::new();
    let n = rng.random_range(1..=6);
    let mut sections = Section::ALL.to_vec();
    sections.shuffle(rng);
    for &s in sections.iter().take(n) {
        let v = match rng.random_range(0..5) {
            0 => (0.0, 0.0),
            1 => (100.0, 100.0),
            2 => {
                let (lo, hi) = *[(1.0, 24.0), (25.0, 49.0), (50.0, 69.0), (70.0, 99.0)]
                    .choose(rng)
                    .unwrap();
                (lo, hi)
            }
            3 => {
                let lo = rng.random_range(1..=90) as f64;
                (lo, lo + rng.random_range(5..=10) as f64)
            }
            _ => {
                let p = rng.random_range(1..=99) as f64;
                (p, p)
            }
        };
        findings.insert(s, v);
    }
    ReportTruth {
        patient_id: patient_id.to_string(),
        findings,
    }
}

/// Branch entry of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEntry {
    pub artery: String,
    pub section: Section,
    pub severity: f64,
    pub class: StenosisClass,
    /// Directory relative to the dataset root.
    pub path: String,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub id: String,
    /// Report file relative to the dataset root.
    pub report: String,
    pub branches: Vec<BranchEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub patients: Vec<PatientEntry>,
}

/// Per-branch sidecar written next to the views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTruth {
    pub patient: String,
    pub artery: String,
    pub section: Section,
    pub severity: f64,
    pub class: StenosisClass,
    pub stenosis_visible: Vec<bool>,
    pub text_pixels: Vec<usize>,
}

/// One view of the dataset, as listed by [`Manifest::views`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub patient: String,
    pub artery: String,
    pub branch: String,
    pub view: usize,
    pub class: StenosisClass,
    pub path: PathBuf,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn labels(&self) -> Vec<LabelRecord> {
        self.patients
            .iter()
            .flat_map(|p| {
                p.branches.iter().map(|b| LabelRecord {
                    patient: p.id.clone(),
                    artery: b.artery.clone(),
                    branch: b.section.token().to_string(),
                    class: b.class,
                })
            })
            .collect()
    }

    /// Every view under `root`, in manifest order.
    pub fn views(&self, root: &Path) -> Vec<ViewEntry> {
        let mut out = Vec::new();
        for p in &self.patients {
            for b in &p.branches {
                for v in 0..b.views {
                    out.push(ViewEntry {
                        patient: p.id.clone(),
                        artery: b.artery.clone(),
                        branch: b.section.token().to_string(),
                        view: v,
                        class: b.class,
                        path: root.join(&b.path).join(view_file(v)),
                    });
                }
            }
        }
        out
    }
}

pub fn view_file(view: usize) -> String {
    format!("view_{view:02}.pgm")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Seeded RNG of patient `index`: one ChaCha stream per patient.
pub fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64 + 1);
    r
}

fn generate_patient(cfg: &GenConfig, index: usize, root: &Path) -> Result<PatientEntry> {
    let mut rng = patient_rng(cfg.seed, index);
    let id = format!("patient_{index:03}");
    let mut sections: Vec<Section> = cfg
        .branch_menu
        .iter()
        .filter(|b| rng.random_bool(b.prob))
        .map(|b| b.section)
        .collect();
    if sections.is_empty() {
        sections.push(cfg.branch_menu[0].section);
    }
    sections.sort();
    sections.dedup();

    let mut branches = Vec::new();
    let mut truth = ReportTruth {
        patient_id: id.clone(),
        findings: BTreeMap::new(),
    };
    for section in sections {
        let severity = cfg.severity.sample(&mut rng);
        let artery = section.artery().token().to_string();
        let rel = format!("{id}/{artery}/{}", section.token());
        let dir = root.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let views = generate_branch_views(severity, cfg.views_per_branch, cfg, &mut rng)?;
        let mut sidecar = BranchTruth {
            patient: id.clone(),
            artery: artery.clone(),
            section,
            severity,
            class: report::class_of(severity)?,
            stenosis_visible: Vec::new(),
            text_pixels: Vec::new(),
        };
        for (v, (img, gt)) in views.into_iter().enumerate() {
            img.save_pgm(&dir.join(view_file(v)))?;
            sidecar.stenosis_visible.push(gt.stenosis_visible);
            sidecar.text_pixels.push(gt.text_mask.count());
        }
        write_json(&dir.join("truth.json"), &sidecar)?;
        truth.findings.insert(section, (severity, severity));
        branches.push(BranchEntry {
            artery,
            section,
            severity,
            class: sidecar.class,
            path: rel,
            views: cfg.views_per_branch,
        });
    }
    let report_rel = format!("{id}/report.txt");
    let report_path = root.join(&report_rel);
    fs::write(&report_path, render_report(&truth, &mut rng)).map_err(|e| Error::io(&report_path, e))?;
    Ok(PatientEntry {
        id,
        report: report_rel,
        branches,
    })
}

/// Writes the full dataset under `root`: one directory per patient, artery
/// and section, a report per patient, `manifest.json` and `labels.json`.
pub fn generate_dataset(cfg: &GenConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let patients = (0..cfg.patients)
        .into_par_iter()
        .map(|i| generate_patient(cfg, i, root))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config: cfg.clone(),
        patients,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    write_json(&root.join("labels.json"), &manifest.labels())?;
    Ok(manifest)
}
