//! Report round trip and grade table, shared with the acceptance suite.

use cass_core::labels::StenosisClass::{self, *};
use cass_core::report::{
    self,
    CadRadsGrade::{self, *},
};
use cass_core::synthgen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Grade bands 0, 1–24, 25–49, 50–69, 70–99, 100 and the three-class rule
/// (0 → none, 1–50 → non-significant, above 50 → significant).
pub const BOUNDARY_TABLE: [(f64, CadRadsGrade, StenosisClass); 9] = [
    (0.0, Normal, NoStenosis),
    (24.0, Minimal, NonSignificant),
    (25.0, Mild, NonSignificant),
    (49.0, Mild, NonSignificant),
    (50.0, Moderate, NonSignificant),
    (69.0, Moderate, Significant),
    (70.0, Severe, Significant),
    (99.0, Severe, Significant),
    (100.0, TotalOcclusion, Significant),
];

pub fn boundary_table() -> Result<(), String> {
    for (p, g, c) in BOUNDARY_TABLE {
        let got = (
            report::grade_of(p).map_err(|e| e.to_string())?,
            report::class_of(p).map_err(|e| e.to_string())?,
        );
        if got != (g, c) {
            return Err(format!("{p}%: got {got:?}, want {:?}", (g, c)));
        }
    }
    Ok(())
}

/// Renders `n` random truths and parses them back; `Ok(n)` when all match.
pub fn round_trip(n: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let truth = synthgen::random_report_truth(&format!("patient_{i:03}"), &mut rng);
        let text = synthgen::render_report(&truth, &mut rng);
        let parsed = report::parse_report(&text).map_err(|e| format!("report {i}: {e}\n{text}"))?;
        if parsed.patient_id != truth.patient_id || parsed.severities() != truth.findings {
            return Err(format!(
                "report {i} mismatch\n{text}\nparsed {:?}\nwant {:?}",
                parsed.severities(),
                truth.findings
            ));
        }
        for (s, &(lo, hi)) in &truth.findings {
            if parsed.classes[s] != report::class_of_interval(lo, hi).unwrap() {
                return Err(format!("report {i}: class of {s} differs"));
            }
        }
    }
    Ok(n)
}
