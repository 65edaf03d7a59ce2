//! Per-subject Dice evaluation, cross-run aggregation, sign-flipping
//! permutation tests with Bonferroni correction, and table emission.
//!
//! Class column order follows the report layout: ET (204), ED (51),
//! NCR/NET (102).

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{LABEL_ED, LABEL_ET, LABEL_NCR_NET};

pub const N_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; N_CLASSES] = ["ET", "ED", "NCR/NET"];
pub const CLASS_VALUES: [u8; N_CLASSES] = [LABEL_ET, LABEL_ED, LABEL_NCR_NET];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction/ground-truth slice sets differ: missing in predictions {missing_in_pred:?}, missing in ground truth {missing_in_gt:?}")]
    SliceMismatch {
        missing_in_pred: Vec<(String, usize)>,
        missing_in_gt: Vec<(String, usize)>,
    },
    #[error("subject {subject} slice {z}: prediction holds {pred} labels, ground truth {gt}")]
    LabelSizeMismatch { subject: String, z: usize, pred: usize, gt: usize },
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("relative improvement needs a positive baseline, got {0}")]
    BadBaseline(f64),
    #[error("no paired subjects shared by both configurations")]
    NoPairs,
}

/// One predicted or ground-truth label map for a (subject, z) slice.
#[derive(Clone, Debug)]
pub struct LabeledSlice {
    pub subject: String,
    pub z: usize,
    pub labels: Vec<u8>,
}

/// Per-subject Dice in class column order ET, ED, NCR/NET.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectDice {
    pub subject: String,
    pub dice: [f64; N_CLASSES],
}

/// Pooled-count Dice per subject and class:
/// `2 |P ∩ G| / (|P| + |G|)`, with both-empty scoring 1. Voxels pool over
/// every slice the subject contributed. Subjects come out in ground-truth
/// first-appearance order.
pub fn dice_per_subject(
    pred: &[LabeledSlice],
    gt: &[LabeledSlice],
) -> Result<Vec<SubjectDice>, EvalError> {
    let key = |s: &LabeledSlice| (s.subject.clone(), s.z);
    let pred_keys: HashSet<_> = pred.iter().map(key).collect();
    let gt_keys: HashSet<_> = gt.iter().map(key).collect();
    if pred_keys != gt_keys {
        let mut missing_in_pred: Vec<_> = gt_keys.difference(&pred_keys).cloned().collect();
        let mut missing_in_gt: Vec<_> = pred_keys.difference(&gt_keys).cloned().collect();
        missing_in_pred.sort();
        missing_in_gt.sort();
        return Err(EvalError::SliceMismatch { missing_in_pred, missing_in_gt });
    }
    let pred_by_key: BTreeMap<(String, usize), &LabeledSlice> =
        pred.iter().map(|s| (key(s), s)).collect();

    let mut order: Vec<String> = Vec::new();
    // counts[subject][class] = (|P|, |G|, |P ∩ G|)
    let mut counts: BTreeMap<String, [[u64; 3]; N_CLASSES]> = BTreeMap::new();
    for g in gt {
        let p = pred_by_key[&key(g)];
        if p.labels.len() != g.labels.len() {
            return Err(EvalError::LabelSizeMismatch {
                subject: g.subject.clone(),
                z: g.z,
                pred: p.labels.len(),
                gt: g.labels.len(),
            });
        }
        if !counts.contains_key(&g.subject) {
            order.push(g.subject.clone());
            counts.insert(g.subject.clone(), [[0; 3]; N_CLASSES]);
        }
        let c = counts.get_mut(&g.subject).unwrap();
        for (pv, gv) in p.labels.iter().zip(&g.labels) {
            for (ci, &value) in CLASS_VALUES.iter().enumerate() {
                let in_p = *pv == value;
                let in_g = *gv == value;
                if in_p {
                    c[ci][0] += 1;
                }
                if in_g {
                    c[ci][1] += 1;
                }
                if in_p && in_g {
                    c[ci][2] += 1;
                }
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|subject| {
            let c = counts[&subject];
            let dice = std::array::from_fn(|ci| {
                let (p, g, i) = (c[ci][0], c[ci][1], c[ci][2]);
                if p + g == 0 {
                    1.0
                } else {
                    2.0 * i as f64 / (p + g) as f64
                }
            });
            SubjectDice { subject, dice }
        })
        .collect())
}

/// One trained model evaluated on the test subjects.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiceReport {
    pub run_id: String,
    pub seed: u64,
    pub subjects: Vec<SubjectDice>,
    pub class_means: [f64; N_CLASSES],
    pub overall_mean: f64,
}

impl DiceReport {
    pub fn from_subjects(run_id: &str, seed: u64, subjects: Vec<SubjectDice>) -> Self {
        assert!(!subjects.is_empty(), "DiceReport: no subjects");
        let n = subjects.len() as f64;
        let class_means = std::array::from_fn(|ci| {
            subjects.iter().map(|s| s.dice[ci]).sum::<f64>() / n
        });
        let overall_mean = class_means.iter().sum::<f64>() / N_CLASSES as f64;
        Self { run_id: run_id.to_string(), seed, subjects, class_means, overall_mean }
    }
}

/// Mean and sample standard deviation (n-1 denominator, 0 for a single
/// run) over repeated trainings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_runs: usize,
    pub class_mean: [f64; N_CLASSES],
    pub class_std: [f64; N_CLASSES],
    pub overall_mean: f64,
    pub overall_std: f64,
}

pub fn aggregate_runs(per_run_class_means: &[[f64; N_CLASSES]]) -> Result<Aggregate, EvalError> {
    if per_run_class_means.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let n = per_run_class_means.len();
    let mean_std = |values: &[f64]| -> (f64, f64) {
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        };
        (mean, std)
    };
    let mut class_mean = [0.0; N_CLASSES];
    let mut class_std = [0.0; N_CLASSES];
    for ci in 0..N_CLASSES {
        let column: Vec<f64> = per_run_class_means.iter().map(|r| r[ci]).collect();
        (class_mean[ci], class_std[ci]) = mean_std(&column);
    }
    let overall: Vec<f64> =
        per_run_class_means.iter().map(|r| r.iter().sum::<f64>() / N_CLASSES as f64).collect();
    let (overall_mean, overall_std) = mean_std(&overall);
    Ok(Aggregate { n_runs: n, class_mean, class_std, overall_mean, overall_std })
}

/// `100 * (improved - baseline) / baseline`.
pub fn relative_improvement(baseline: f64, improved: f64) -> Result<f64, EvalError> {
    if baseline <= 0.0 {
        return Err(EvalError::BadBaseline(baseline));
    }
    Ok(100.0 * (improved - baseline) / baseline)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipMode {
    Exhaustive,
    MonteCarlo { draws: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alternative {
    TwoSided,
    Greater,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignFlipResult {
    pub p: f64,
    /// Every difference was exactly zero; p forced to 1.
    pub all_zero: bool,
    pub exhaustive: bool,
}

/// Permutation test over the 2^n independent sign assignments of the paired
/// differences, statistic T = mean. Exhaustive mode counts assignments with
/// `|T*| >= |T_obs|` (two-sided) or `T* >= T_obs` (greater) out of 2^n;
/// Monte Carlo uses the add-one estimator (k+1)/(draws+1).
pub fn sign_flip_test(diffs: &[f64], mode: FlipMode, alternative: Alternative) -> SignFlipResult {
    assert!(!diffs.is_empty(), "sign_flip_test: empty differences");
    if diffs.iter().all(|&d| d == 0.0) {
        return SignFlipResult { p: 1.0, all_zero: true, exhaustive: matches!(mode, FlipMode::Exhaustive) };
    }
    let n = diffs.len();
    let t_obs: f64 = diffs.iter().sum();
    let beats = |t: f64| -> bool {
        match alternative {
            Alternative::TwoSided => t.abs() >= t_obs.abs(),
            Alternative::Greater => t >= t_obs,
        }
    };
    match mode {
        FlipMode::Exhaustive => {
            assert!(n <= 24, "sign_flip_test: exhaustive over {n} diffs is 2^{n} assignments");
            let total = 1u64 << n;
            let mut count = 0u64;
            for mask in 0..total {
                let mut t = 0.0;
                for (i, &d) in diffs.iter().enumerate() {
                    t += if mask >> i & 1 == 1 { -d } else { d };
                }
                if beats(t) {
                    count += 1;
                }
            }
            SignFlipResult { p: count as f64 / total as f64, all_zero: false, exhaustive: true }
        }
        FlipMode::MonteCarlo { draws, seed } => {
            assert!(draws > 0, "sign_flip_test: zero Monte Carlo draws");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut count = 0u64;
            for _ in 0..draws {
                let mut t = 0.0;
                for &d in diffs {
                    t += if rng.gen_bool(0.5) { -d } else { d };
                }
                if beats(t) {
                    count += 1;
                }
            }
            SignFlipResult {
                p: (count + 1) as f64 / (draws + 1) as f64,
                all_zero: false,
                exhaustive: false,
            }
        }
    }
}

/// `p'_i = min(1, m * p_i)`.
pub fn bonferroni(raw_p: &[f64], m: usize) -> Vec<f64> {
    assert!(m >= raw_p.len(), "bonferroni: m = {m} below the {} tests given", raw_p.len());
    raw_p.iter().map(|&p| (m as f64 * p).min(1.0)).collect()
}

/// Paired comparison of two configurations over shared test subjects.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub config_a: String,
    pub config_b: String,
    pub n_pairs: usize,
    pub raw_p: [f64; N_CLASSES],
    pub adjusted_p: [f64; N_CLASSES],
    pub m: usize,
    pub alternative: Alternative,
    pub exhaustive: bool,
    pub mc_draws: Option<u64>,
    pub mc_seed: Option<u64>,
    pub all_zero: [bool; N_CLASSES],
}

/// Compare two configurations: per subject, average each configuration's
/// Dice over its repeats, difference the averages, and sign-flip test per
/// class. Exhaustive whenever the pair count is at most 20, else Monte
/// Carlo with 2^20 seeded draws. `m` is the number of pairwise
/// configuration comparisons in the executed sweep.
pub fn compare_configurations(
    name_a: &str,
    runs_a: &[DiceReport],
    name_b: &str,
    runs_b: &[DiceReport],
    m: usize,
    alternative: Alternative,
    mc_seed: u64,
) -> Result<ComparisonResult, EvalError> {
    let mean_by_subject = |runs: &[DiceReport]| -> BTreeMap<String, ([f64; N_CLASSES], usize)> {
        let mut acc: BTreeMap<String, ([f64; N_CLASSES], usize)> = BTreeMap::new();
        for run in runs {
            for s in &run.subjects {
                let e = acc.entry(s.subject.clone()).or_insert(([0.0; N_CLASSES], 0));
                for ci in 0..N_CLASSES {
                    e.0[ci] += s.dice[ci];
                }
                e.1 += 1;
            }
        }
        acc
    };
    let a = mean_by_subject(runs_a);
    let b = mean_by_subject(runs_b);
    let shared: Vec<&String> = a.keys().filter(|s| b.contains_key(*s)).collect();
    if shared.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let n = shared.len();
    let exhaustive = n <= 20;
    let mode = if exhaustive {
        FlipMode::Exhaustive
    } else {
        FlipMode::MonteCarlo { draws: 1 << 20, seed: mc_seed }
    };
    let mut raw_p = [0.0; N_CLASSES];
    let mut all_zero = [false; N_CLASSES];
    for ci in 0..N_CLASSES {
        let diffs: Vec<f64> = shared
            .iter()
            .map(|s| {
                let (sa, na) = &a[*s];
                let (sb, nb) = &b[*s];
                sa[ci] / *na as f64 - sb[ci] / *nb as f64
            })
            .collect();
        let res = sign_flip_test(&diffs, mode, alternative);
        raw_p[ci] = res.p;
        all_zero[ci] = res.all_zero;
    }
    let adjusted: Vec<f64> = bonferroni(&raw_p, m.max(1));
    Ok(ComparisonResult {
        config_a: name_a.to_string(),
        config_b: name_b.to_string(),
        n_pairs: n,
        raw_p,
        adjusted_p: [adjusted[0], adjusted[1], adjusted[2]],
        m: m.max(1),
        alternative,
        exhaustive,
        mc_draws: if exhaustive { None } else { Some(1 << 20) },
        mc_seed: if exhaustive { None } else { Some(mc_seed) },
        all_zero,
    })
}

/// One row of the final table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfigAggregate {
    pub config_id: String,
    pub uses_real: bool,
    pub n_gans: usize,
    pub aggregate: Aggregate,
}

/// Emit (CSV, Markdown) tables: one data row per configuration with
/// per-class and overall columns. CSV keeps full round-trip precision;
/// Markdown renders `mean ± std` at 3 decimals.
pub fn emit_table(rows: &[ConfigAggregate]) -> (String, String) {
    let mut csv = String::from(
        "config_id,uses_real,n_gans,n_runs,et_mean,et_std,ed_mean,ed_std,ncr_mean,ncr_std,overall_mean,overall_std\n",
    );
    for r in rows {
        let a = &r.aggregate;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.config_id,
            r.uses_real,
            r.n_gans,
            a.n_runs,
            a.class_mean[0],
            a.class_std[0],
            a.class_mean[1],
            a.class_std[1],
            a.class_mean[2],
            a.class_std[2],
            a.overall_mean,
            a.overall_std,
        ));
    }
    let mut md = String::from("| Original data | # GANs | ET | ED | NCR/NET | Mean |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for r in rows {
        let a = &r.aggregate;
        let cell = |mean: f64, std: f64| format!("{mean:.3} ± {std:.3}");
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            if r.uses_real { "yes" } else { "no" },
            r.n_gans,
            cell(a.class_mean[0], a.class_std[0]),
            cell(a.class_mean[1], a.class_std[1]),
            cell(a.class_mean[2], a.class_std[2]),
            cell(a.overall_mean, a.overall_std),
        ));
    }
    (csv, md)
}

/// Raw per-subject CSV: one row per (configuration, run, subject).
pub fn per_subject_csv(configs: &[(String, bool, usize, &[DiceReport])]) -> String {
    let mut csv =
        String::from("config_id,uses_real,n_gans,run_id,subject_id,dice_et,dice_ed,dice_ncr\n");
    for (config_id, uses_real, n_gans, runs) in configs {
        for run in *runs {
            for s in &run.subjects {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    config_id, uses_real, n_gans, run.run_id, s.subject, s.dice[0], s.dice[1], s.dice[2],
                ));
            }
        }
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn slice(subject: &str, z: usize, labels: Vec<u8>) -> LabeledSlice {
        LabeledSlice { subject: subject.into(), z, labels }
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = vec![
            slice("s0", 0, vec![0, 204, 51, 102, 0, 0]),
            slice("s0", 1, vec![204, 204, 0, 0, 51, 102]),
        ];
        let out = dice_per_subject(&gt, &gt).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].dice, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn empty_prediction_scores_zero_and_both_empty_scores_one() {
        let gt = vec![slice("s0", 0, vec![204, 204, 0, 0])];
        let pred = vec![slice("s0", 0, vec![0, 0, 0, 0])];
        let out = dice_per_subject(&pred, &gt).unwrap();
        assert_eq!(out[0].dice[0], 0.0, "ET missed entirely");
        assert_eq!(out[0].dice[1], 1.0, "ED absent in both");
        assert_eq!(out[0].dice[2], 1.0, "NCR/NET absent in both");
    }

    #[test]
    fn two_four_two_gives_two_thirds() {
        // |P| = 2, |G| = 4, |P ∩ G| = 2 for ET, pooled across two slices.
        let gt = vec![
            slice("s0", 0, vec![204, 204, 0, 0]),
            slice("s0", 1, vec![204, 204, 0, 0]),
        ];
        let pred = vec![
            slice("s0", 0, vec![204, 0, 0, 0]),
            slice("s0", 1, vec![204, 0, 0, 0]),
        ];
        let out = dice_per_subject(&pred, &gt).unwrap();
        assert_eq!(out[0].dice[0], 2.0 * 2.0 / (2.0 + 4.0));
    }

    #[test]
    fn matches_set_oracle_on_random_masks() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..50 {
            let n = 64;
            let random_mask = |rng: &mut StdRng| -> Vec<u8> {
                (0..n)
                    .map(|_| [0u8, 0, 51, 102, 204][rng.gen_range(0..5)])
                    .collect()
            };
            let (p0, p1) = (random_mask(&mut rng), random_mask(&mut rng));
            let (g0, g1) = (random_mask(&mut rng), random_mask(&mut rng));
            let pred = vec![slice("s", 0, p0.clone()), slice("s", 1, p1.clone())];
            let gt = vec![slice("s", 0, g0.clone()), slice("s", 1, g1.clone())];
            let out = dice_per_subject(&pred, &gt).unwrap();
            let back = dice_per_subject(&gt, &pred).unwrap();
            assert_eq!(out[0].dice, back[0].dice, "dice must be symmetric");

            for (ci, &value) in CLASS_VALUES.iter().enumerate() {
                let set = |a: &[u8], b: &[u8]| -> HashSet<usize> {
                    a.iter()
                        .chain(b)
                        .enumerate()
                        .filter(|(_, &v)| v == value)
                        .map(|(i, _)| i)
                        .collect()
                };
                let ps = set(&p0, &p1);
                let gs = set(&g0, &g1);
                let want = if ps.is_empty() && gs.is_empty() {
                    1.0
                } else {
                    2.0 * ps.intersection(&gs).count() as f64 / (ps.len() + gs.len()) as f64
                };
                assert_eq!(out[0].dice[ci], want);
            }
        }
    }

    #[test]
    fn mismatched_slice_sets_error_lists_pairs() {
        let gt = vec![slice("s0", 0, vec![0]), slice("s0", 1, vec![0])];
        let pred = vec![slice("s0", 0, vec![0]), slice("s1", 3, vec![0])];
        match dice_per_subject(&pred, &gt) {
            Err(EvalError::SliceMismatch { missing_in_pred, missing_in_gt }) => {
                assert_eq!(missing_in_pred, vec![("s0".to_string(), 1)]);
                assert_eq!(missing_in_gt, vec![("s1".to_string(), 3)]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_overall_is_mean_of_class_means() {
        let subjects = vec![
            SubjectDice { subject: "a".into(), dice: [0.9, 0.5, 0.4] },
            SubjectDice { subject: "b".into(), dice: [0.7, 0.8, 0.2] },
        ];
        let report = DiceReport::from_subjects("r0", 1, subjects);
        let want = report.class_means.iter().sum::<f64>() / 3.0;
        assert!((report.overall_mean - want).abs() < 1e-12);
        assert!((report.class_means[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn aggregate_two_point_std() {
        let agg = aggregate_runs(&[[0.6, 0.6, 0.6], [0.7, 0.7, 0.7]]).unwrap();
        assert!((agg.class_mean[0] - 0.65).abs() < 1e-12);
        assert!((agg.class_std[0] - 0.1 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((agg.overall_std - 0.1 / 2.0f64.sqrt()).abs() < 1e-12);

        let single = aggregate_runs(&[[0.5, 0.6, 0.7]]).unwrap();
        assert_eq!(single.class_std, [0.0; 3]);
        let constant = aggregate_runs(&[[0.5; 3]; 4]).unwrap();
        assert_eq!(constant.class_std, [0.0; 3]);
        assert!(matches!(aggregate_runs(&[]), Err(EvalError::NoRuns)));
    }

    #[test]
    fn relative_improvement_reproduces_reported_percentages() {
        let cases = [(0.665, 0.696, 4.7), (0.632, 0.702, 11.1), (0.478, 0.545, 14.0)];
        for (baseline, improved, want) in cases {
            let got = relative_improvement(baseline, improved).unwrap();
            assert_eq!((got * 10.0).round() / 10.0, want, "({baseline}, {improved})");
        }
        assert!(matches!(relative_improvement(0.0, 0.5), Err(EvalError::BadBaseline(_))));
    }

    #[test]
    fn ten_equal_positives_give_one_in_1024() {
        let diffs = vec![0.03; 10];
        let res = sign_flip_test(&diffs, FlipMode::Exhaustive, Alternative::Greater);
        assert_eq!(res.p, 1.0 / 1024.0);
        assert!(res.exhaustive);
        assert!(!res.all_zero);
    }

    #[test]
    fn symmetric_pair_two_sided_is_one() {
        let res = sign_flip_test(&[0.2, -0.2], FlipMode::Exhaustive, Alternative::TwoSided);
        assert_eq!(res.p, 1.0);
    }

    #[test]
    fn all_zero_diffs_flagged() {
        let res = sign_flip_test(&[0.0; 6], FlipMode::Exhaustive, Alternative::TwoSided);
        assert_eq!(res.p, 1.0);
        assert!(res.all_zero);
    }

    #[test]
    fn monte_carlo_close_to_exhaustive() {
        let diffs = vec![0.03; 10];
        let exact = 1.0 / 1024.0;
        let res = sign_flip_test(
            &diffs,
            FlipMode::MonteCarlo { draws: 10_000, seed: 5 },
            Alternative::Greater,
        );
        let se = (exact * (1.0 - exact) / 10_000.0).sqrt();
        assert!(
            (res.p - exact).abs() < 3.0 * se + 1.0 / 10_001.0,
            "mc p {} vs exact {exact}",
            res.p
        );
    }

    #[test]
    fn exhaustive_p_invariant_to_permutation_and_scale() {
        let diffs = vec![0.31, -0.05, 0.12, 0.4, -0.22, 0.018, 0.09];
        let base = sign_flip_test(&diffs, FlipMode::Exhaustive, Alternative::TwoSided).p;
        let mut shuffled = diffs.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        assert_eq!(sign_flip_test(&shuffled, FlipMode::Exhaustive, Alternative::TwoSided).p, base);
        for c in [2.0, 0.5, 3.7] {
            let scaled: Vec<f64> = diffs.iter().map(|d| d * c).collect();
            assert_eq!(
                sign_flip_test(&scaled, FlipMode::Exhaustive, Alternative::TwoSided).p,
                base,
                "scale {c}"
            );
        }
    }

    #[test]
    fn exhaustive_p_values_are_dyadic() {
        let diffs = vec![0.5, 0.1, -0.3, 0.2];
        let res = sign_flip_test(&diffs, FlipMode::Exhaustive, Alternative::TwoSided);
        let scaled = res.p * 16.0;
        assert_eq!(scaled, scaled.round());
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(bonferroni(&[0.01], 3), vec![0.03]);
        assert_eq!(bonferroni(&[0.5], 3), vec![1.0]);
        let raw = [0.001, 0.04, 0.02];
        let adj = bonferroni(&raw, 6);
        assert!(adj[0] < adj[2] && adj[2] < adj[1], "ordering preserved");
    }

    #[test]
    fn comparison_pairs_subjects_and_averages_repeats() {
        let make_run = |run: &str, seed: u64, et_a: f64, et_b: f64| {
            DiceReport::from_subjects(
                run,
                seed,
                vec![
                    SubjectDice { subject: "s0".into(), dice: [et_a, 0.5, 0.5] },
                    SubjectDice { subject: "s1".into(), dice: [et_b, 0.5, 0.5] },
                ],
            )
        };
        let a = vec![make_run("a0", 0, 0.8, 0.9), make_run("a1", 1, 0.9, 1.0)];
        let b = vec![make_run("b0", 2, 0.6, 0.7)];
        let cmp = compare_configurations("A", &a, "B", &b, 4, Alternative::TwoSided, 0).unwrap();
        assert_eq!(cmp.n_pairs, 2);
        assert!(cmp.exhaustive);
        // ET diffs per subject: (0.85 - 0.6), (0.95 - 0.7) = 0.25 both;
        // both flips strict: p = 2/4 (identity + nothing else ties |T|).
        assert_eq!(cmp.raw_p[0], 0.25);
        assert_eq!(cmp.adjusted_p[0], 1.0);
        // ED/NCR diffs are exactly zero in every pair.
        assert!(cmp.all_zero[1] && cmp.all_zero[2]);
        assert_eq!(cmp.m, 4);
    }

    #[test]
    fn table_emission_and_round_trip() {
        let rows = vec![
            ConfigAggregate {
                config_id: "real".into(),
                uses_real: true,
                n_gans: 0,
                aggregate: Aggregate {
                    n_runs: 3,
                    class_mean: [0.6481, 0.7, 0.5],
                    class_std: [0.0082, 0.01, 0.02],
                    overall_mean: 0.616033333,
                    overall_std: 0.009,
                },
            },
            ConfigAggregate {
                config_id: "synth-k4".into(),
                uses_real: false,
                n_gans: 4,
                aggregate: Aggregate {
                    n_runs: 3,
                    class_mean: [0.6, 0.62, 0.48],
                    class_std: [0.01, 0.02, 0.03],
                    overall_mean: 0.5666666,
                    overall_std: 0.015,
                },
            },
        ];
        let (csv, md) = emit_table(&rows);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 3, "header plus two rows");
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "real");
        let parsed: f64 = fields[4].parse().unwrap();
        assert_eq!(parsed, 0.6481, "csv must round-trip exactly");

        assert!(md.contains("| Original data | # GANs | ET | ED | NCR/NET | Mean |"));
        assert!(md.contains("0.648 ± 0.008"), "markdown rounds to 3 decimals:\n{md}");
        assert_eq!(md.trim_end().lines().count(), 4);
    }

    #[test]
    fn per_subject_csv_schema() {
        let run = DiceReport::from_subjects(
            "r0",
            7,
            vec![SubjectDice { subject: "s0".into(), dice: [0.5, 0.25, 0.125] }],
        );
        let runs = [run];
        let csv = per_subject_csv(&[("mixed-k1".into(), true, 1, &runs[..])]);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "config_id,uses_real,n_gans,run_id,subject_id,dice_et,dice_ed,dice_ncr");
        assert_eq!(lines[1], "mixed-k1,true,1,r0,s0,0.5,0.25,0.125");
    }
}
