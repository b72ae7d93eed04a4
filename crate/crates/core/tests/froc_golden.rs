//! The hand-enumerated FROC fixture, a brute-force threshold-sweep oracle on
//! random fixtures, rank-only (monotone-transform) invariance, and the
//! malignancy top-n counts.

use octoconv_core::froc::{
    froc_curve, malignancy_topn, match_candidates, CandidateLabel, CandidateRecord,
    MatchedCandidates, ReferenceNodule, ReferenceSet, Relevance, REFERENCE_FP_RATES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nodule(scan: &str, x: f64, relevance: Relevance, malignant: bool) -> ReferenceNodule {
    ReferenceNodule {
        scan_id: scan.into(),
        center: [x, 0.0, 0.0],
        diameter_mm: 6.0,
        relevance,
        malignant,
    }
}

fn candidate(scan: &str, pos: [f64; 3], p: f64) -> CandidateRecord {
    CandidateRecord {
        scan_id: scan.into(),
        position: pos,
        probability: p,
    }
}

/// Two scans, four relevant nodules, one irrelevant finding, six candidates.
/// The sweep was enumerated by hand; see the assertions for the numbers.
fn golden_fixture() -> (Vec<CandidateRecord>, ReferenceSet) {
    let references = ReferenceSet::new(vec![
        nodule("s1", 0.0, Relevance::Relevant, true),
        nodule("s1", 100.0, Relevance::Relevant, false),
        nodule("s1", 200.0, Relevance::Irrelevant, false),
        nodule("s2", 0.0, Relevance::Relevant, false),
        nodule("s2", 100.0, Relevance::Relevant, true),
    ]);
    let candidates = vec![
        candidate("s1", [0.0, 0.0, 1.0], 0.9),    // hit n1
        candidate("s1", [100.0, 0.0, 2.0], 0.7),  // hit n2
        candidate("s1", [200.0, 0.0, 0.0], 0.85), // hits the irrelevant finding
        candidate("s1", [50.0, 50.0, 50.0], 0.6), // false positive
        candidate("s2", [0.0, 2.0, 0.0], 0.5),    // hit n3
        candidate("s2", [300.0, 0.0, 0.0], 0.4),  // false positive
    ];
    (candidates, references)
}

#[test]
fn golden_fixture_matches_hand_sweep() {
    let (candidates, references) = golden_fixture();
    let matched = match_candidates(&candidates, &references).unwrap();
    assert_eq!(matched.n_scans, 2);
    assert_eq!(matched.n_relevant, 4);
    assert_eq!(matched.labels[2], CandidateLabel::Ignored);
    assert_eq!(matched.labels[3], CandidateLabel::FalsePositive);
    assert_eq!(matched.labels[5], CandidateLabel::FalsePositive);

    let result = froc_curve(&matched).unwrap();
    // Sweep by hand over thresholds 0.9, 0.7, 0.6, 0.5, 0.4 (the excluded
    // candidate contributes no threshold):
    //   0.9 -> sens 1/4, fp 0     0.7 -> 2/4, 0     0.6 -> 2/4, 1/2
    //   0.5 -> 3/4, 1/2           0.4 -> 3/4, 1
    let expected_curve = [
        (0.9, 0.0, 0.25),
        (0.7, 0.0, 0.5),
        (0.6, 0.5, 0.5),
        (0.5, 0.5, 0.75),
        (0.4, 1.0, 0.75),
    ];
    assert_eq!(result.curve.len(), expected_curve.len());
    for (p, &(t, fp, s)) in result.curve.iter().zip(&expected_curve) {
        assert_eq!((p.threshold, p.fp_per_scan, p.sensitivity), (t, fp, s));
    }
    // Rates 1/8 and 1/4 admit only the fp=0 points (sens 0.5); all larger
    // rates reach sens 0.75. Overall = (0.5*2 + 0.75*5) / 7 = 4.75/7.
    assert_eq!(result.sensitivities, [0.5, 0.5, 0.75, 0.75, 0.75, 0.75, 0.75]);
    assert_eq!(result.overall_score, 4.75 / 7.0);
}

/// Independent scorer: for every candidate probability as threshold, count
/// detections and false positives directly from the labels.
fn brute_force_overall(matched: &MatchedCandidates) -> f64 {
    let mut probs: Vec<f64> = matched
        .labels
        .iter()
        .zip(&matched.candidates)
        .filter(|(l, _)| **l != CandidateLabel::Ignored)
        .map(|(_, c)| c.probability)
        .collect();
    probs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    probs.dedup();

    let mut best_at_rate = [0.0f64; 7];
    for &t in &probs {
        let mut detected = vec![false; matched.nodule_probability.len()];
        let mut fps = 0usize;
        for (label, cand) in matched.labels.iter().zip(&matched.candidates) {
            if cand.probability < t {
                continue;
            }
            match label {
                CandidateLabel::Hit(i) => detected[*i] = true,
                CandidateLabel::FalsePositive => fps += 1,
                CandidateLabel::Ignored => {}
            }
        }
        let sens = detected.iter().filter(|&&d| d).count() as f64 / matched.n_relevant as f64;
        let rate = fps as f64 / matched.n_scans as f64;
        for (slot, &r) in best_at_rate.iter_mut().zip(REFERENCE_FP_RATES.iter()) {
            if rate <= r && sens > *slot {
                *slot = sens;
            }
        }
    }
    best_at_rate.iter().sum::<f64>() / 7.0
}

fn random_fixture(seed: u64, max_candidates: usize) -> (Vec<CandidateRecord>, ReferenceSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_scans = rng.gen_range(1..=3usize);
    let mut nodules = Vec::new();
    let mut candidates = Vec::new();
    for s in 0..n_scans {
        let scan = format!("s{s}");
        let n_nodules = rng.gen_range(1..=3usize);
        for k in 0..n_nodules {
            let relevance = if rng.gen::<f64>() < 0.75 {
                Relevance::Relevant
            } else {
                Relevance::Irrelevant
            };
            nodules.push(nodule(&scan, 100.0 * k as f64, relevance, rng.gen()));
        }
        let n_cands = rng.gen_range(0..=max_candidates / n_scans);
        for _ in 0..n_cands {
            // Near a nodule slot or far away, with quarter-step probabilities
            // to make ties common.
            let slot = rng.gen_range(0..5usize);
            let jitter = rng.gen_range(-4.0..4.0);
            let p = (rng.gen_range(0..=20) as f64) / 20.0;
            candidates.push(candidate(&scan, [100.0 * slot as f64 + jitter, 0.0, 0.0], p));
        }
    }
    let mut set = ReferenceSet::new(nodules);
    for s in 0..n_scans {
        set.push_scan(&format!("s{s}"));
    }
    (candidates, set)
}

#[test]
fn scorer_agrees_with_brute_force_oracle() {
    let mut checked = 0;
    for seed in 0..60u64 {
        let (candidates, references) = random_fixture(seed, 20);
        if references.n_relevant() == 0 {
            continue;
        }
        let matched = match_candidates(&candidates, &references).unwrap();
        let result = froc_curve(&matched).unwrap();
        let oracle = brute_force_overall(&matched);
        assert_eq!(result.overall_score, oracle, "seed {seed}");
        checked += 1;
    }
    assert!(checked > 40, "too few usable fixtures: {checked}");
}

#[test]
fn score_is_invariant_under_strictly_monotone_transforms() {
    let transforms: [fn(f64) -> f64; 3] = [
        |p| p.powi(3),
        |p| 0.5 + (3.0 * (p - 0.5)).atan() / std::f64::consts::PI,
        |p| (p * 0.2) + 0.4,
    ];
    let mut checked = 0;
    for seed in 100..250u64 {
        let (candidates, references) = random_fixture(seed, 16);
        if references.n_relevant() == 0 || candidates.is_empty() {
            continue;
        }
        let matched = match_candidates(&candidates, &references).unwrap();
        let base = froc_curve(&matched).unwrap();
        let t = transforms[(seed % 3) as usize];
        let rescored: Vec<CandidateRecord> = candidates
            .iter()
            .map(|c| CandidateRecord {
                scan_id: c.scan_id.clone(),
                position: c.position,
                probability: t(c.probability),
            })
            .collect();
        let matched2 = match_candidates(&rescored, &references).unwrap();
        let transformed = froc_curve(&matched2).unwrap();
        assert_eq!(base.sensitivities, transformed.sensitivities, "seed {seed}");
        assert_eq!(base.overall_score, transformed.overall_score, "seed {seed}");
        checked += 1;
        if checked == 100 {
            break;
        }
    }
    assert_eq!(checked, 100, "wanted 100 random fixtures");
}

#[test]
fn removing_a_false_positive_never_lowers_the_score() {
    for seed in 300..340u64 {
        let (candidates, references) = random_fixture(seed, 16);
        if references.n_relevant() == 0 {
            continue;
        }
        let matched = match_candidates(&candidates, &references).unwrap();
        let base = froc_curve(&matched).unwrap();
        if let Some(fp_idx) = matched
            .labels
            .iter()
            .position(|l| *l == CandidateLabel::FalsePositive)
        {
            let mut fewer = candidates.clone();
            fewer.remove(fp_idx);
            let matched2 = match_candidates(&fewer, &references).unwrap();
            let better = froc_curve(&matched2).unwrap();
            assert!(
                better.overall_score >= base.overall_score,
                "seed {seed}: {} < {}",
                better.overall_score,
                base.overall_score
            );
        }
    }
}

#[test]
fn curve_sensitivity_is_monotone_in_fp_rate() {
    for seed in 400..430u64 {
        let (candidates, references) = random_fixture(seed, 20);
        if references.n_relevant() == 0 {
            continue;
        }
        let matched = match_candidates(&candidates, &references).unwrap();
        let result = froc_curve(&matched).unwrap();
        for pair in result.curve.windows(2) {
            assert!(pair[1].sensitivity >= pair[0].sensitivity);
            assert!(pair[1].fp_per_scan >= pair[0].fp_per_scan);
        }
        assert!((0.0..=1.0).contains(&result.overall_score));
    }
}

#[test]
fn malignancy_topn_hand_fixture() {
    // Ten relevant nodules, each hit once. Probabilities descend 0.95..0.50;
    // malignant at 0.95, 0.80, 0.55: top-5 holds 2, top-10 holds 3.
    let mut nodules = Vec::new();
    let mut candidates = Vec::new();
    let malignant_probs = [0.95, 0.80, 0.55];
    for i in 0..10usize {
        let p = 0.95 - 0.05 * i as f64;
        let malignant = malignant_probs.iter().any(|&m| (m - p).abs() < 1e-9);
        nodules.push(nodule("s1", 100.0 * i as f64, Relevance::Relevant, malignant));
        candidates.push(candidate("s1", [100.0 * i as f64, 0.0, 0.0], p));
    }
    let references = ReferenceSet::new(nodules);
    let matched = match_candidates(&candidates, &references).unwrap();
    assert_eq!(malignancy_topn(&matched, &references, 5).unwrap(), 2);
    assert_eq!(malignancy_topn(&matched, &references, 10).unwrap(), 3);
    assert_eq!(malignancy_topn(&matched, &references, 12).unwrap(), 3);
}

#[test]
fn malignancy_topn_dedupes_multiple_hits_on_one_nodule() {
    // Two hits on the same malignant nodule must count it once, keeping the
    // higher-probability hit for the ranking.
    let references = ReferenceSet::new(vec![
        nodule("s1", 0.0, Relevance::Relevant, true),
        nodule("s1", 100.0, Relevance::Relevant, false),
    ]);
    let candidates = vec![
        candidate("s1", [0.0, 0.0, 0.0], 0.9),
        candidate("s1", [1.0, 0.0, 0.0], 0.95),
        candidate("s1", [100.0, 0.0, 0.0], 0.92),
    ];
    let matched = match_candidates(&candidates, &references).unwrap();
    assert_eq!(malignancy_topn(&matched, &references, 1).unwrap(), 1);
    assert_eq!(malignancy_topn(&matched, &references, 2).unwrap(), 1);
}
