//! FROC analysis: candidate-to-nodule matching with the relevant/irrelevant
//! finding rules, the sensitivity-vs-FP-rate sweep, the seven-rate overall
//! score, and the malignancy top-n sensitivity count. Pure functions over
//! immutable inputs; probabilities are compared by rank, so any strictly
//! monotone rescoring leaves results unchanged.

use crate::error::{CoreError, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// One scored detection.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateRecord {
    pub scan_id: String,
    /// (x, y, z) millimetres
    pub position: [f64; 3],
    pub probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

/// One ground-truth finding. Relevance encodes the reader-agreement and
/// diameter rules; the scorer trusts the flag.
#[derive(Clone, Debug)]
pub struct ReferenceNodule {
    pub scan_id: String,
    pub center: [f64; 3],
    pub diameter_mm: f64,
    pub relevance: Relevance,
    pub malignant: bool,
}

/// Ground truth for a scoring run: the scan list (scans may carry zero
/// nodules) plus the findings.
#[derive(Clone, Debug, Default)]
pub struct ReferenceSet {
    /// Distinct scan ids in file order; defines n_scans.
    pub scans: Vec<String>,
    pub nodules: Vec<ReferenceNodule>,
}

impl ReferenceSet {
    pub fn new(nodules: Vec<ReferenceNodule>) -> ReferenceSet {
        let mut scans = Vec::new();
        for n in &nodules {
            if !scans.contains(&n.scan_id) {
                scans.push(n.scan_id.clone());
            }
        }
        ReferenceSet { scans, nodules }
    }

    pub fn push_scan(&mut self, scan_id: &str) {
        if !self.scans.iter().any(|s| s == scan_id) {
            self.scans.push(scan_id.to_string());
        }
    }

    pub fn n_relevant(&self) -> usize {
        self.nodules
            .iter()
            .filter(|n| n.relevance == Relevance::Relevant)
            .count()
    }
}

/// Outcome of matching one candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateLabel {
    /// Inside the radius of a relevant nodule (index into the reference list).
    Hit(usize),
    FalsePositive,
    /// Hit an irrelevant finding: excluded from both counts.
    Ignored,
}

/// Candidates with their matching outcome.
#[derive(Clone, Debug)]
pub struct MatchedCandidates {
    pub candidates: Vec<CandidateRecord>,
    pub labels: Vec<CandidateLabel>,
    pub n_scans: usize,
    pub n_relevant: usize,
    /// Per reference nodule: highest hit probability, if any.
    pub nodule_probability: Vec<Option<f64>>,
}

/// Match candidates against the reference: a candidate is a hit when its
/// distance to a nodule center is strictly less than the nodule radius; of
/// several matches the nearest wins (reference order breaks distance ties).
/// Hits on irrelevant findings are excluded entirely.
pub fn match_candidates(
    candidates: &[CandidateRecord],
    references: &ReferenceSet,
) -> Result<MatchedCandidates> {
    for c in candidates {
        if !(0.0..=1.0).contains(&c.probability) || !c.probability.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "probability {} outside [0, 1]",
                c.probability
            )));
        }
        if c.position.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument(format!(
                "non-finite candidate position in scan {}",
                c.scan_id
            )));
        }
        if !references.scans.iter().any(|s| s == &c.scan_id) {
            return Err(CoreError::UnknownScan(c.scan_id.clone()));
        }
    }

    let mut labels = Vec::with_capacity(candidates.len());
    let mut nodule_probability = vec![None; references.nodules.len()];
    for c in candidates {
        let mut best: Option<(f64, usize)> = None;
        for (i, n) in references.nodules.iter().enumerate() {
            if n.scan_id != c.scan_id {
                continue;
            }
            let d = dist(&c.position, &n.center);
            if d < n.diameter_mm / 2.0 {
                let better = match best {
                    None => true,
                    Some((bd, _)) => d < bd,
                };
                if better {
                    best = Some((d, i));
                }
            }
        }
        match best {
            Some((_, i)) => {
                if references.nodules[i].relevance == Relevance::Irrelevant {
                    labels.push(CandidateLabel::Ignored);
                } else {
                    labels.push(CandidateLabel::Hit(i));
                    let p = nodule_probability[i].get_or_insert(c.probability);
                    if c.probability > *p {
                        *p = c.probability;
                    }
                }
            }
            None => labels.push(CandidateLabel::FalsePositive),
        }
    }

    Ok(MatchedCandidates {
        candidates: candidates.to_vec(),
        labels,
        n_scans: references.scans.len(),
        n_relevant: references.n_relevant(),
        nodule_probability,
    })
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// The seven predefined average-FP-per-scan rates of the overall score.
pub const REFERENCE_FP_RATES: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrocPoint {
    pub threshold: f64,
    pub fp_per_scan: f64,
    pub sensitivity: f64,
}

#[derive(Clone, Debug)]
pub struct FrocResult {
    pub curve: Vec<FrocPoint>,
    /// Sensitivity at each of [`REFERENCE_FP_RATES`], step-function rule.
    pub sensitivities: [f64; 7],
    pub overall_score: f64,
    pub n_scans: usize,
    pub n_relevant: usize,
}

/// Sweep thresholds over the distinct candidate probabilities (descending)
/// and read off sensitivity at the seven reference FP rates. The overall
/// score is their mean.
pub fn froc_curve(matched: &MatchedCandidates) -> Result<FrocResult> {
    if matched.n_relevant == 0 {
        return Err(CoreError::NoRelevantNodules);
    }
    if matched.n_scans == 0 {
        return Err(CoreError::InvalidArgument("n_scans must be >= 1".into()));
    }

    let detection_probs: Vec<f64> = matched.nodule_probability.iter().flatten().copied().collect();
    let fp_probs: Vec<f64> = matched
        .labels
        .iter()
        .zip(&matched.candidates)
        .filter(|(l, _)| **l == CandidateLabel::FalsePositive)
        .map(|(_, c)| c.probability)
        .collect();

    // Distinct thresholds, descending.
    let mut thresholds: Vec<f64> = detection_probs.iter().chain(fp_probs.iter()).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite probabilities"));
    thresholds.dedup();

    let mut curve = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let detected = detection_probs.iter().filter(|&&p| p >= t).count();
        let fps = fp_probs.iter().filter(|&&p| p >= t).count();
        curve.push(FrocPoint {
            threshold: t,
            fp_per_scan: fps as f64 / matched.n_scans as f64,
            sensitivity: detected as f64 / matched.n_relevant as f64,
        });
    }

    let mut sensitivities = [0.0f64; 7];
    for (i, &rate) in REFERENCE_FP_RATES.iter().enumerate() {
        // Last sweep point (the sweep runs towards higher FP rates) whose
        // rate is still within budget; zero when none is.
        sensitivities[i] = curve
            .iter()
            .filter(|p| p.fp_per_scan <= rate)
            .map(|p| p.sensitivity)
            .next_back()
            .unwrap_or(0.0);
    }
    let overall_score = sensitivities.iter().sum::<f64>() / 7.0;

    Ok(FrocResult {
        curve,
        sensitivities,
        overall_score,
        n_scans: matched.n_scans,
        n_relevant: matched.n_relevant,
    })
}

/// Number of malignant nodules among the `n` highest-probability true
/// positives (one per nodule). `n` past the number of available true
/// positives counts them all.
pub fn malignancy_topn(
    matched: &MatchedCandidates,
    references: &ReferenceSet,
    n: usize,
) -> Result<usize> {
    if n == 0 {
        return Err(CoreError::InvalidArgument("top-n requires n >= 1".into()));
    }
    let mut hits: Vec<(usize, &CandidateRecord)> = matched
        .labels
        .iter()
        .zip(&matched.candidates)
        .filter_map(|(l, c)| match l {
            CandidateLabel::Hit(i) => Some((*i, c)),
            _ => None,
        })
        .collect();
    hits.sort_by(|a, b| {
        b.1.probability
            .partial_cmp(&a.1.probability)
            .expect("finite probabilities")
            .then_with(|| a.1.scan_id.cmp(&b.1.scan_id))
            .then_with(|| {
                a.1.position
                    .partial_cmp(&b.1.position)
                    .expect("finite positions")
            })
    });
    let mut seen = vec![false; references.nodules.len()];
    let mut count = 0usize;
    let mut taken = 0usize;
    for (nodule, _) in hits {
        if seen[nodule] {
            continue;
        }
        seen[nodule] = true;
        taken += 1;
        if references.nodules[nodule].malignant {
            count += 1;
        }
        if taken == n {
            break;
        }
    }
    Ok(count)
}

pub const CANDIDATE_CSV_HEADER: &str = "scan_id,x_mm,y_mm,z_mm,probability";
pub const REFERENCE_CSV_HEADER: &str = "scan_id,x_mm,y_mm,z_mm,diameter_mm,relevance,malignant";

fn csv_err(path: &str, line: usize, msg: impl Into<String>) -> CoreError {
    CoreError::MalformedRecord {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parse the candidate CSV contract. `source` names the input in errors.
pub fn parse_candidates(text: &str, source: &str) -> Result<Vec<CandidateRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CANDIDATE_CSV_HEADER => {}
        Some((_, h)) => {
            return Err(csv_err(source, 1, format!("expected header `{CANDIDATE_CSV_HEADER}`, got `{h}`")))
        }
        None => return Err(csv_err(source, 1, "empty file")),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(csv_err(source, idx + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| csv_err(source, idx + 1, format!("bad {what} `{s}`: {e}")))
        };
        let probability = parse(fields[4], "probability")?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(csv_err(source, idx + 1, format!("probability {probability} outside [0, 1]")));
        }
        out.push(CandidateRecord {
            scan_id: fields[0].to_string(),
            position: [
                parse(fields[1], "x_mm")?,
                parse(fields[2], "y_mm")?,
                parse(fields[3], "z_mm")?,
            ],
            probability,
        });
    }
    Ok(out)
}

/// Parse the reference CSV contract. A row whose nodule fields are all empty
/// (`scan_id,,,,,,`) registers the scan without a finding, so scans with zero
/// nodules still count towards n_scans.
pub fn parse_references(text: &str, source: &str) -> Result<ReferenceSet> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == REFERENCE_CSV_HEADER => {}
        Some((_, h)) => {
            return Err(csv_err(source, 1, format!("expected header `{REFERENCE_CSV_HEADER}`, got `{h}`")))
        }
        None => return Err(csv_err(source, 1, "empty file")),
    }
    let mut set = ReferenceSet::default();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(csv_err(source, idx + 1, format!("expected 7 fields, got {}", fields.len())));
        }
        let scan_id = fields[0].to_string();
        if scan_id.is_empty() {
            return Err(csv_err(source, idx + 1, "empty scan_id"));
        }
        set.push_scan(&scan_id);
        if fields[1..].iter().all(|f| f.is_empty()) {
            continue; // scan marker row
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| csv_err(source, idx + 1, format!("bad {what} `{s}`: {e}")))
        };
        let diameter_mm = parse(fields[4], "diameter_mm")?;
        if diameter_mm <= 0.0 {
            return Err(csv_err(source, idx + 1, format!("diameter {diameter_mm} must be positive")));
        }
        let relevance = match fields[5] {
            "relevant" => Relevance::Relevant,
            "irrelevant" => Relevance::Irrelevant,
            other => {
                return Err(csv_err(source, idx + 1, format!("relevance must be relevant|irrelevant, got `{other}`")))
            }
        };
        let malignant = match fields[6] {
            "0" => false,
            "1" => true,
            other => {
                return Err(csv_err(source, idx + 1, format!("malignant must be 0|1, got `{other}`")))
            }
        };
        set.nodules.push(ReferenceNodule {
            scan_id,
            center: [
                parse(fields[1], "x_mm")?,
                parse(fields[2], "y_mm")?,
                parse(fields[3], "z_mm")?,
            ],
            diameter_mm,
            relevance,
            malignant,
        });
    }
    Ok(set)
}

pub fn candidates_to_csv(candidates: &[CandidateRecord]) -> String {
    let mut out = String::from(CANDIDATE_CSV_HEADER);
    out.push('\n');
    for c in candidates {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.scan_id, c.position[0], c.position[1], c.position[2], c.probability
        );
    }
    out
}

pub fn references_to_csv(set: &ReferenceSet) -> String {
    let mut out = String::from(REFERENCE_CSV_HEADER);
    out.push('\n');
    let mut listed: Vec<&str> = Vec::new();
    for n in &set.nodules {
        listed.push(&n.scan_id);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            n.scan_id,
            n.center[0],
            n.center[1],
            n.center[2],
            n.diameter_mm,
            match n.relevance {
                Relevance::Relevant => "relevant",
                Relevance::Irrelevant => "irrelevant",
            },
            if n.malignant { 1 } else { 0 }
        );
    }
    for s in &set.scans {
        if !listed.iter().any(|l| l == s) {
            let _ = writeln!(out, "{s},,,,,,");
        }
    }
    out
}

/// FROC curve CSV: `threshold,fp_per_scan,sensitivity`.
pub fn curve_to_csv(result: &FrocResult) -> String {
    let mut out = String::from("threshold,fp_per_scan,sensitivity\n");
    for p in &result.curve {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.fp_per_scan, p.sensitivity);
    }
    out
}

/// Human-readable summary with the seven sensitivities and overall score.
pub fn summary_text(result: &FrocResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scans: {}", result.n_scans);
    let _ = writeln!(out, "relevant_nodules: {}", result.n_relevant);
    for (rate, sens) in REFERENCE_FP_RATES.iter().zip(&result.sensitivities) {
        let _ = writeln!(out, "sensitivity@{rate}: {sens:.6}");
    }
    let _ = writeln!(out, "overall_score: {:.6}", result.overall_score);
    out
}

/// Group candidate counts by scan, for diagnostics.
pub fn candidates_per_scan(candidates: &[CandidateRecord]) -> BTreeMap<String, usize> {
    let mut map = BTreeMap::new();
    for c in candidates {
        *map.entry(c.scan_id.clone()).or_insert(0) += 1;
    }
    map
}
