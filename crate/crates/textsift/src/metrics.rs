//! Structural damage metrics for perturbed text.
//!
//! Local structure (relative order of immediate neighbors) is quantified by
//! the character-bigram F-score and by the fraction of broken successor
//! pairs; global structure (absolute character positions) by the normalized
//! mean displacement. Compression rates and normalized edit distance round
//! out the per-record bundle.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::perturb::PerturbedRecord;
use crate::tokenize::{compression_rate, BpeVocab};

/// Per-record metric bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub chrf2: f64,
    pub idc: f64,
    pub dnd: f64,
    pub comp_original: f64,
    pub comp_perturbed: f64,
    pub comp_ratio: f64,
    pub lev_norm: f64,
}

impl MetricReport {
    pub const FIELDS: [&'static str; 7] = [
        "chrf2",
        "idc",
        "dnd",
        "comp_original",
        "comp_perturbed",
        "comp_ratio",
        "lev_norm",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.chrf2,
            self.idc,
            self.dnd,
            self.comp_original,
            self.comp_perturbed,
            self.comp_ratio,
            self.lev_norm,
        ]
    }

    /// Unweighted mean of several reports (per-record aggregation over
    /// text fields).
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len() as f64;
        let mut acc = [0.0f64; 7];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        MetricReport {
            chrf2: acc[0] / n,
            idc: acc[1] / n,
            dnd: acc[2] / n,
            comp_original: acc[3] / n,
            comp_perturbed: acc[4] / n,
            comp_ratio: acc[5] / n,
            lev_norm: acc[6] / n,
        }
    }
}

fn bigram_counts(text: &str) -> HashMap<(char, char), u32> {
    let mut counts = HashMap::new();
    let mut chars = text.chars();
    let Some(mut prev) = chars.next() else {
        return counts;
    };
    for c in chars {
        *counts.entry((prev, c)).or_insert(0) += 1;
        prev = c;
    }
    counts
}

/// Character-bigram F-score with recall weight beta = 3, whitespace
/// included. Precision and recall use clipped multiset overlap; returns 0
/// when there is no overlap at all.
pub fn chrf2(reference: &str, hypothesis: &str) -> Result<f64> {
    let r = bigram_counts(reference);
    let h = bigram_counts(hypothesis);
    if r.is_empty() {
        return Err(Error::NoBigrams { side: "reference" });
    }
    if h.is_empty() {
        return Err(Error::NoBigrams { side: "hypothesis" });
    }
    let overlap: u32 = h
        .iter()
        .map(|(gram, &count)| count.min(r.get(gram).copied().unwrap_or(0)))
        .sum();
    let total_h: u32 = h.values().sum();
    let total_r: u32 = r.values().sum();
    let precision = f64::from(overlap) / f64::from(total_h);
    let recall = f64::from(overlap) / f64::from(total_r);
    if overlap == 0 {
        return Ok(0.0);
    }
    const BETA_SQ: f64 = 9.0;
    Ok((1.0 + BETA_SQ) * precision * recall / (BETA_SQ * precision + recall))
}

/// Mean absolute displacement of tracked characters, normalized by the
/// squared tracked length: `(1/k'^2) * sum_j |j - map[j]|` over positions
/// with an origin. Ranges over [0, 0.5] for pure permutations, with 0.5
/// reached exactly by reversing an even-length text.
pub fn idc(index_map: &[Option<usize>], original_len: usize) -> Result<f64> {
    let mut tracked = 0usize;
    let mut sum = 0u64;
    for (j, entry) in index_map.iter().enumerate() {
        let Some(i) = *entry else { continue };
        if i >= original_len {
            return Err(Error::IndexOutOfRange {
                value: i,
                len: original_len,
            });
        }
        tracked += 1;
        sum += j.abs_diff(i) as u64;
    }
    if tracked == 0 {
        return Err(Error::EmptyIndexMap);
    }
    Ok(sum as f64 / (tracked as f64 * tracked as f64))
}

/// Fraction of broken successor relations: over consecutive tracked
/// entries, the pair is preserved when the next entry is exactly the
/// previous entry plus one.
pub fn dnd(index_map: &[Option<usize>]) -> Result<f64> {
    let tracked: Vec<usize> = index_map.iter().flatten().copied().collect();
    if tracked.len() < 2 {
        return Err(Error::IndexMapTooShort);
    }
    let broken = tracked
        .windows(2)
        .filter(|pair| pair[1] != pair[0] + 1)
        .count();
    Ok(broken as f64 / (tracked.len() - 1) as f64)
}

/// Single-character edit distance (insert, delete, substitute), over
/// Unicode scalars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// Edit distance divided by the longer length; 0 when both strings are
/// empty.
pub fn levenshtein_norm(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / max_len as f64
}

/// Compute the full metric bundle for one perturbed record.
pub fn measure(record: &PerturbedRecord, vocab: &BpeVocab) -> Result<MetricReport> {
    let chrf2 = chrf2(&record.original, &record.perturbed).map_err(|e| e.for_metric("chrf2"))?;
    let original_len = record.original.chars().count();
    let idc = idc(&record.index_map, original_len).map_err(|e| e.for_metric("idc"))?;
    let dnd = dnd(&record.index_map).map_err(|e| e.for_metric("dnd"))?;
    let comp_original =
        compression_rate(&record.original, vocab).map_err(|e| e.for_metric("comp_original"))?;
    let comp_perturbed =
        compression_rate(&record.perturbed, vocab).map_err(|e| e.for_metric("comp_perturbed"))?;
    Ok(MetricReport {
        chrf2,
        idc,
        dnd,
        comp_original,
        comp_perturbed,
        comp_ratio: comp_perturbed / comp_original,
        lev_norm: levenshtein_norm(&record.original, &record.perturbed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{apply_perturbation, PerturbKind, PerturbationSpec};
    use crate::rng::rng_from_seed;
    use crate::tokenize::Granularity;
    use rand::Rng;

    const TOL: f64 = 1e-12;

    #[test]
    fn chrf2_identical_texts_score_one() {
        for s in ["ab", "The scholar is typesetting.", "aa aa"] {
            assert!((chrf2(s, s).unwrap() - 1.0).abs() < TOL);
        }
    }

    #[test]
    fn chrf2_hand_counted_example() {
        // overlap {ab}: P = R = 1/3, F3 = 1/3
        assert!((chrf2("abcd", "abdc").unwrap() - 1.0 / 3.0).abs() < TOL);
    }

    #[test]
    fn chrf2_disjoint_bigrams_score_zero() {
        assert_eq!(chrf2("aaaa", "bbbb").unwrap(), 0.0);
    }

    #[test]
    fn chrf2_short_text_is_an_error() {
        assert!(chrf2("a", "ab").is_err());
        assert!(chrf2("ab", "").is_err());
    }

    #[test]
    fn idc_identity_is_zero() {
        let map: Vec<Option<usize>> = (0..10).map(Some).collect();
        assert_eq!(idc(&map, 10).unwrap(), 0.0);
    }

    #[test]
    fn idc_even_reversal_is_exactly_half() {
        let map: Vec<Option<usize>> = (0..4).rev().map(Some).collect();
        assert_eq!(idc(&map, 4).unwrap(), 0.5);
    }

    #[test]
    fn idc_middle_split_matches_hand_trace() {
        let map: Vec<Option<usize>> = (8..14).chain(0..8).map(Some).collect();
        assert!((idc(&map, 14).unwrap() - 96.0 / 196.0).abs() < TOL);
    }

    #[test]
    fn idc_rejects_bad_maps() {
        assert!(matches!(idc(&[None, None], 5), Err(Error::EmptyIndexMap)));
        assert!(idc(&[Some(9)], 5).is_err());
    }

    #[test]
    fn dnd_identity_and_reversal() {
        let map: Vec<Option<usize>> = (0..8).map(Some).collect();
        assert_eq!(dnd(&map).unwrap(), 0.0);
        let map: Vec<Option<usize>> = (0..8).rev().map(Some).collect();
        assert_eq!(dnd(&map).unwrap(), 1.0);
    }

    #[test]
    fn dnd_middle_split_breaks_one_pair() {
        let map: Vec<Option<usize>> = (8..14).chain(0..8).map(Some).collect();
        assert!((dnd(&map).unwrap() - 1.0 / 13.0).abs() < TOL);
    }

    #[test]
    fn dnd_needs_two_entries() {
        assert!(matches!(dnd(&[Some(0)]), Err(Error::IndexMapTooShort)));
    }

    #[test]
    fn levenshtein_classics() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert!((levenshtein_norm("kitten", "sitting") - 3.0 / 7.0).abs() < TOL);
        assert_eq!(levenshtein_norm("", "ab"), 1.0);
        assert_eq!(levenshtein_norm("", ""), 0.0);
        assert_eq!(levenshtein_norm("same", "same"), 0.0);
    }

    #[test]
    fn measure_identity_record() {
        let vocab = BpeVocab::toy_ab();
        let rec =
            apply_perturbation("The scholar is typesetting.", &PerturbationSpec::identity(1), None)
                .unwrap();
        let report = measure(&rec, &vocab).unwrap();
        assert_eq!(report.chrf2, 1.0);
        assert_eq!(report.idc, 0.0);
        assert_eq!(report.dnd, 0.0);
        assert_eq!(report.comp_ratio, 1.0);
        assert_eq!(report.lev_norm, 0.0);
    }

    #[test]
    fn measure_attaches_metric_names_to_errors() {
        let vocab = BpeVocab::toy_ab();
        let rec = apply_perturbation("x", &PerturbationSpec::identity(1), None).unwrap();
        let err = measure(&rec, &vocab).unwrap_err();
        assert!(err.to_string().starts_with("chrf2:"), "{err}");
    }

    #[test]
    fn full_shuffle_idc_concentrates_near_one_third() {
        // mean displacement of a uniform permutation is ~k/3
        let mut rng = rng_from_seed(17);
        let k = 1000usize;
        let mut total = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let mut map: Vec<Option<usize>> = (0..k).map(Some).collect();
            for i in (1..k).rev() {
                let j = rng.random_range(0..=i);
                map.swap(i, j);
            }
            total += idc(&map, k).unwrap();
        }
        let mean = total / trials as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.01, "mean idc {mean}");
    }

    #[test]
    fn neighbor_flip_idc_grows_with_rho_and_stays_below_full() {
        let text: String = {
            let mut rng = rng_from_seed(23);
            (0..1000)
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect()
        };
        let mean_idc = |kind: PerturbKind, rho: Option<f64>| {
            let mut total = 0.0;
            for seed in 0..100u64 {
                let spec =
                    PerturbationSpec::new(Granularity::Character, kind, rho, seed).unwrap();
                let rec = apply_perturbation(&text, &spec, None).unwrap();
                total += idc(&rec.index_map, 1000).unwrap();
            }
            total / 100.0
        };
        let low = mean_idc(PerturbKind::NeighborFlip, Some(0.1));
        let mid = mean_idc(PerturbKind::NeighborFlip, Some(0.5));
        let full = mean_idc(PerturbKind::FullShuffle, None);
        assert!(low < mid && mid < full, "{low} {mid} {full}");
    }

    proptest::proptest! {
        #[test]
        fn idc_of_random_permutations_stays_in_range(seed in 0u64..5000, k in 2usize..200) {
            let mut rng = rng_from_seed(seed);
            let mut map: Vec<Option<usize>> = (0..k).map(Some).collect();
            for i in (1..k).rev() {
                let j = rng.random_range(0..=i);
                map.swap(i, j);
            }
            let v = idc(&map, k).unwrap();
            proptest::prop_assert!((0.0..=0.5).contains(&v));
        }
    }
}
