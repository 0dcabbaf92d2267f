//! Consistency, similarity and difference between the concepts a layer
//! learned for an image (`LC`) and the core concepts of a scene (`CC`):
//!
//! ```text
//! CM = |LC ∩ CC| / |CC|     SM = |LC ∩ CC| / |LC ∪ CC|     DM = |LC \ CC| / |CC|
//! ```
//!
//! plus the post-prediction aggregates over false and true predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ConceptSet, SceneId};
use crate::tsv;

fn check(cc: &ConceptSet) -> Result<f64> {
    if cc.is_empty() {
        return Err(Error::EmptyCoreConcepts);
    }
    Ok(cc.len() as f64)
}

pub fn cm(lc: &ConceptSet, cc: &ConceptSet) -> Result<f64> {
    let n = check(cc)?;
    Ok(lc.intersection(cc).count() as f64 / n)
}

pub fn sm(lc: &ConceptSet, cc: &ConceptSet) -> Result<f64> {
    check(cc)?;
    let inter = lc.intersection(cc).count();
    let union = lc.len() + cc.len() - inter;
    Ok(inter as f64 / union as f64)
}

pub fn dm(lc: &ConceptSet, cc: &ConceptSet) -> Result<f64> {
    let n = check(cc)?;
    Ok(lc.difference(cc).count() as f64 / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub cm: f64,
    pub sm: f64,
    pub dm: f64,
}

impl Metrics {
    pub fn compute(lc: &ConceptSet, cc: &ConceptSet) -> Result<Self> {
        Ok(Metrics {
            cm: cm(lc, cc)?,
            sm: sm(lc, cc)?,
            dm: dm(lc, cc)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplanationScores {
    pub image_id: u64,
    /// Scene whose core concepts the metrics were computed against.
    pub scene: SceneId,
    pub metrics: Metrics,
}

/// One image's inputs to the post-prediction aggregates.
#[derive(Debug, Clone)]
pub struct PredictionCase<'a> {
    pub image_id: u64,
    pub target: SceneId,
    pub predicted: SceneId,
    pub learned: &'a ConceptSet,
}

/// Core concepts per scene.
pub type CoreConceptLookup = BTreeMap<SceneId, ConceptSet>;

fn core_of(cc: &CoreConceptLookup, scene: SceneId) -> Result<&ConceptSet> {
    cc.get(&scene).ok_or(Error::EmptyCoreConcepts)
}

/// Share (in percent) of false predictions whose metric against the
/// predicted scene strictly exceeds the metric against the target scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalsePredictionReport {
    pub cm_fp: f64,
    pub dm_fp: f64,
    pub sm_fp: f64,
    pub count: usize,
}

pub fn false_prediction_report(
    df: &[PredictionCase<'_>],
    cc: &CoreConceptLookup,
) -> Result<FalsePredictionReport> {
    if df.is_empty() {
        return Err(Error::EmptyFalseSet);
    }
    let (mut cm_n, mut dm_n, mut sm_n) = (0usize, 0usize, 0usize);
    for case in df {
        if case.predicted == case.target {
            return Err(Error::InvalidParameter(format!(
                "image {} is a correct prediction, not a false one",
                case.image_id
            )));
        }
        let p = Metrics::compute(case.learned, core_of(cc, case.predicted)?)?;
        let t = Metrics::compute(case.learned, core_of(cc, case.target)?)?;
        cm_n += (p.cm > t.cm) as usize;
        dm_n += (p.dm > t.dm) as usize;
        sm_n += (p.sm > t.sm) as usize;
    }
    let pct = |n: usize| 100.0 * n as f64 / df.len() as f64;
    Ok(FalsePredictionReport {
        cm_fp: pct(cm_n),
        dm_fp: pct(dm_n),
        sm_fp: pct(sm_n),
        count: df.len(),
    })
}

/// Mean metrics against the target scene over correct (`dt`) and false
/// (`df`) predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePredictionReport {
    pub cm_tp: f64,
    pub cm_t_fp: f64,
    pub sm_tp: f64,
    pub sm_t_fp: f64,
    pub true_count: usize,
    pub false_count: usize,
}

fn mean_against_target(cases: &[PredictionCase<'_>], cc: &CoreConceptLookup) -> Result<(f64, f64)> {
    let (mut cm_sum, mut sm_sum) = (0.0, 0.0);
    // Summed in slice order for reproducibility.
    for case in cases {
        let m = Metrics::compute(case.learned, core_of(cc, case.target)?)?;
        cm_sum += m.cm;
        sm_sum += m.sm;
    }
    let n = cases.len() as f64;
    Ok((cm_sum / n, sm_sum / n))
}

pub fn true_prediction_report(
    dt: &[PredictionCase<'_>],
    df: &[PredictionCase<'_>],
    cc: &CoreConceptLookup,
) -> Result<TruePredictionReport> {
    if dt.is_empty() {
        return Err(Error::EmptySet("true predictions"));
    }
    if df.is_empty() {
        return Err(Error::EmptySet("false predictions"));
    }
    let (cm_tp, sm_tp) = mean_against_target(dt, cc)?;
    let (cm_t_fp, sm_t_fp) = mean_against_target(df, cc)?;
    Ok(TruePredictionReport {
        cm_tp,
        cm_t_fp,
        sm_tp,
        sm_t_fp,
        true_count: dt.len(),
        false_count: df.len(),
    })
}

/// Both aggregates for one (LC strategy, CC kind) configuration. Either half
/// is `None` when its image set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PpeReport {
    pub strategy: String,
    pub kind: String,
    pub false_report: Option<FalsePredictionReport>,
    pub true_report: Option<TruePredictionReport>,
}

/// Splits cases into correct and false predictions and computes both
/// aggregates over the whole set.
pub fn ppe_report(
    strategy: &str,
    kind: &str,
    cases: &[PredictionCase<'_>],
    cc: &CoreConceptLookup,
) -> Result<PpeReport> {
    let (dt, df): (Vec<_>, Vec<_>) = cases.iter().cloned().partition(|c| c.predicted == c.target);
    let false_report = match false_prediction_report(&df, cc) {
        Ok(r) => Some(r),
        Err(Error::EmptyFalseSet) => None,
        Err(e) => return Err(e),
    };
    let true_report = match true_prediction_report(&dt, &df, cc) {
        Ok(r) => Some(r),
        Err(Error::EmptySet(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(PpeReport {
        strategy: strategy.to_string(),
        kind: kind.to_string(),
        false_report,
        true_report,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Machine-readable report: one row per configuration, percentages for the
/// false-prediction shares and means scaled to percent for the true ones.
pub fn write_ppe_tsv(path: &Path, reports: &[PpeReport]) -> Result<()> {
    let mut out = String::from(
        "#lc\tcc\tCM_FP\tDM_FP\tSM_FP\tCM_TP\tCM_T_FP\tSM_TP\tSM_T_FP\tn_true\tn_false\n",
    );
    for r in reports {
        let f = r.false_report;
        let t = r.true_report;
        let raw = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.strategy,
            r.kind,
            raw(f.map(|f| f.cm_fp)),
            raw(f.map(|f| f.dm_fp)),
            raw(f.map(|f| f.sm_fp)),
            raw(t.map(|t| 100.0 * t.cm_tp)),
            raw(t.map(|t| 100.0 * t.cm_t_fp)),
            raw(t.map(|t| 100.0 * t.sm_tp)),
            raw(t.map(|t| 100.0 * t.sm_t_fp)),
            t.map_or(0, |t| t.true_count),
            f.map_or(t.map_or(0, |t| t.false_count), |f| f.count),
        )
        .unwrap();
    }
    tsv::write_file(path, &out)
}

/// Human-readable table: LC strategy × CC kind rows, false and true
/// prediction columns, all in percent.
pub fn render_ppe_table(reports: &[PpeReport]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<12} {:<4} | {:>7} {:>7} {:>7} | {:>7} {:>8} {:>7} {:>8}",
        "LC", "CC", "CM^FP", "DM^FP", "SM^FP", "CM^TP", "CM^T_FP", "SM^TP", "SM^T_FP"
    )
    .unwrap();
    writeln!(out, "{}", "-".repeat(84)).unwrap();
    for r in reports {
        let f = r.false_report;
        let t = r.true_report;
        writeln!(
            out,
            "{:<12} {:<4} | {:>7} {:>7} {:>7} | {:>7} {:>8} {:>7} {:>8}",
            r.strategy,
            r.kind,
            fmt_opt(f.map(|f| f.cm_fp)),
            fmt_opt(f.map(|f| f.dm_fp)),
            fmt_opt(f.map(|f| f.sm_fp)),
            fmt_opt(t.map(|t| 100.0 * t.cm_tp)),
            fmt_opt(t.map(|t| 100.0 * t.cm_t_fp)),
            fmt_opt(t.map(|t| 100.0 * t.sm_tp)),
            fmt_opt(t.map(|t| 100.0 * t.sm_t_fp)),
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConceptId;

    fn set(ids: &[u32]) -> ConceptSet {
        ids.iter().map(|&i| ConceptId(i)).collect()
    }

    #[test]
    fn worked_example() {
        // LC={a,b,c}, CC={b,c,d,e}: ∩=2, ∪=5, LC\CC=1
        let m = Metrics::compute(&set(&[1, 2, 3]), &set(&[2, 3, 4, 5])).unwrap();
        assert_eq!(
            m,
            Metrics {
                cm: 0.5,
                sm: 0.4,
                dm: 0.25
            }
        );
    }

    #[test]
    fn identity_and_empty() {
        let s = set(&[4, 8]);
        assert_eq!(
            Metrics::compute(&s, &s).unwrap(),
            Metrics {
                cm: 1.0,
                sm: 1.0,
                dm: 0.0
            }
        );
        assert_eq!(
            Metrics::compute(&set(&[]), &s).unwrap(),
            Metrics {
                cm: 0.0,
                sm: 0.0,
                dm: 0.0
            }
        );
        assert!(matches!(cm(&s, &set(&[])), Err(Error::EmptyCoreConcepts)));
        assert!(matches!(sm(&s, &set(&[])), Err(Error::EmptyCoreConcepts)));
        assert!(matches!(dm(&s, &set(&[])), Err(Error::EmptyCoreConcepts)));
    }

    fn case(id: u64, target: u32, predicted: u32, lc: &ConceptSet) -> PredictionCase<'_> {
        PredictionCase {
            image_id: id,
            target: SceneId(target),
            predicted: SceneId(predicted),
            learned: lc,
        }
    }

    #[test]
    fn false_report_counts_strict_wins() {
        let cc: CoreConceptLookup = [(SceneId(0), set(&[1, 2])), (SceneId(1), set(&[3, 4]))].into();
        let closer_to_1 = set(&[3]);
        let tie = set(&[1, 3]);
        let all = [
            case(1, 0, 1, &closer_to_1),
            case(2, 0, 1, &closer_to_1),
            case(3, 0, 1, &tie),
        ];
        let r = false_prediction_report(&all, &cc).unwrap();
        assert!((r.cm_fp - 200.0 / 3.0).abs() < 1e-12);
        let unanimous = false_prediction_report(&all[..2], &cc).unwrap();
        assert_eq!(unanimous.cm_fp, 100.0);
        assert!(matches!(
            false_prediction_report(&[], &cc),
            Err(Error::EmptyFalseSet)
        ));
        assert!(false_prediction_report(&[case(4, 0, 0, &tie)], &cc).is_err());
    }

    #[test]
    fn four_image_fixture_matches_enumeration() {
        let cc: CoreConceptLookup = [(SceneId(0), set(&[1, 2])), (SceneId(1), set(&[3, 4]))].into();
        // Target 0, predicted 1 for all four.
        let lcs = [set(&[3]), set(&[3, 4]), set(&[1, 3, 4]), set(&[1, 2])];
        let cases: Vec<_> = lcs
            .iter()
            .enumerate()
            .map(|(i, l)| case(i as u64, 0, 1, l))
            .collect();
        // Hand enumeration of CM(y_p) > CM(y_t): 0.5>0, 1>0, 1>0.5, 0>1 → 3 of 4.
        let r = false_prediction_report(&cases, &cc).unwrap();
        assert_eq!(r.cm_fp, 75.0);
        let brute = cases
            .iter()
            .filter(|c| {
                cm(c.learned, &cc[&c.predicted]).unwrap() > cm(c.learned, &cc[&c.target]).unwrap()
            })
            .count();
        assert_eq!(brute, 3);
    }

    #[test]
    fn true_report_means() {
        let cc: CoreConceptLookup =
            [(SceneId(0), set(&[1, 2, 3, 4, 5])), (SceneId(1), set(&[9]))].into();
        let three = set(&[1, 2, 3]);
        let r = true_prediction_report(&[case(1, 0, 0, &three)], &[case(2, 0, 1, &three)], &cc)
            .unwrap();
        assert_eq!(r.cm_tp, 0.6);
        assert_eq!(r.cm_tp, r.cm_t_fp);
        assert!(matches!(
            true_prediction_report(&[], &[case(2, 0, 1, &three)], &cc),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn planted_true_false_split() {
        let cc: CoreConceptLookup = [(SceneId(0), set(&[1, 2])), (SceneId(1), set(&[5]))].into();
        let full = set(&[1, 2]);
        let half = set(&[1]);
        let dt = [case(1, 0, 0, &full), case(2, 0, 0, &full)];
        let df = [case(3, 0, 1, &half)];
        let r = true_prediction_report(&dt, &df, &cc).unwrap();
        assert_eq!((r.cm_tp, r.cm_t_fp), (1.0, 0.5));
    }
}
