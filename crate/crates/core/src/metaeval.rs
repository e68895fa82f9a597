//! Correlation of measure scores with the rate of bias across a sweep of
//! bias-controlled models.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{MeasureKind, MeasureScore};

/// Pearson product-moment correlation. Fails on fewer than three points,
/// unequal lengths, non-finite values or a constant vector.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Argument(format!("{} xs against {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Argument(format!("correlation needs at least 3 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Argument("correlation input is not finite".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            if sxx == 0.0 { "first vector is constant" } else { "second vector is constant" }.into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson over average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Argument("correlation input is not finite".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Measure scores of every model in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub corpus_id: String,
    pub seeds: Vec<u64>,
    pub scores: Vec<MeasureScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureCorrelation {
    pub measure: MeasureKind,
    /// `None` when the correlation is undefined.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Scores ordered by r.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub corpus_id: String,
    pub seeds: Vec<u64>,
    pub rates: Vec<f64>,
    pub correlations: Vec<MeasureCorrelation>,
    /// Measures by decreasing Pearson coefficient; undefined ones last.
    pub ranking: Vec<MeasureKind>,
}

fn defined(c: Result<f64>) -> Result<Option<f64>> {
    match c {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Correlates every measure's scores with r. Scores without an r (the
/// base model) are ignored.
pub fn run_meta_eval(sweep: &SweepResult) -> Result<CorrelationReport> {
    let mut cells: BTreeMap<MeasureKind, BTreeMap<u64, f64>> = BTreeMap::new();
    let mut rate_bits = BTreeSet::new();
    for s in &sweep.scores {
        let Some(r) = s.r else { continue };
        if !r.is_finite() {
            return Err(Error::Argument(format!("rate {r} is not finite")));
        }
        rate_bits.insert(r.to_bits());
        if cells.entry(s.measure).or_default().insert(r.to_bits(), s.value).is_some() {
            return Err(Error::Argument(format!("duplicate score for {} at r={r}", s.measure)));
        }
    }
    let mut rates: Vec<f64> = rate_bits.iter().map(|&b| f64::from_bits(b)).collect();
    rates.sort_by(f64::total_cmp);
    if rates.len() < 3 {
        return Err(Error::Argument(format!("meta-evaluation needs at least 3 rates, got {}", rates.len())));
    }
    let mut correlations = Vec::new();
    for (&measure, by_rate) in &cells {
        let values = rates
            .iter()
            .map(|r| {
                by_rate.get(&r.to_bits()).copied().ok_or_else(|| Error::MissingCell {
                    measure: measure.to_string(),
                    r: *r,
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        correlations.push(MeasureCorrelation {
            measure,
            pearson: defined(pearson(&rates, &values))?,
            spearman: defined(spearman(&rates, &values))?,
            values,
        });
    }
    let mut ranking: Vec<&MeasureCorrelation> = correlations.iter().collect();
    ranking.sort_by(|a, b| match (a.pearson, b.pearson) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let ranking = ranking.into_iter().map(|c| c.measure).collect();
    Ok(CorrelationReport {
        corpus_id: sweep.corpus_id.clone(),
        seeds: sweep.seeds.clone(),
        rates,
        correlations,
        ranking,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into())
}

impl CorrelationReport {
    pub fn get(&self, measure: MeasureKind) -> Option<&MeasureCorrelation> {
        self.correlations.iter().find(|c| c.measure == measure)
    }
}

/// Plain-text table with one row per measure and one column per corpus;
/// each cell reads `pearson (spearman)`.
pub fn format_table(reports: &[CorrelationReport]) -> String {
    let mut measures: Vec<MeasureKind> = reports
        .iter()
        .flat_map(|r| r.correlations.iter().map(|c| c.measure))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    measures.sort();
    let width = reports.iter().map(|r| r.corpus_id.len()).max().unwrap_or(0).max(13);
    let mut out = String::new();
    let _ = writeln!(out, "Correlation with the rate of bias r: Pearson (Spearman)");
    let _ = write!(out, "{:<8}", "Measure");
    for r in reports {
        let _ = write!(out, "  {:>width$}", r.corpus_id);
    }
    out.push('\n');
    let _ = write!(out, "{:-<8}", "");
    for _ in reports {
        let _ = write!(out, "  {:->width$}", "");
    }
    out.push('\n');
    for m in measures {
        let _ = write!(out, "{:<8}", m.as_str());
        for r in reports {
            let text = match r.get(m) {
                Some(c) => format!("{} ({})", cell(c.pearson), cell(c.spearman)),
                None => "-".into(),
            };
            let _ = write!(out, "  {text:>width$}");
        }
        out.push('\n');
    }
    out.push('\n');
    for r in reports {
        let order: Vec<&str> = r.ranking.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(out, "ranking ({}): {}", r.corpus_id, order.join(" > "));
    }
    out
}

/// Pearson correlations published for pretrained encoders fine-tuned on
/// two corpora, kept for comparison only. Columns follow
/// [`REFERENCE_COLUMNS`].
pub const REFERENCE_PEARSON: [(MeasureKind, [f64; 4]); 5] = [
    (MeasureKind::Tbs, [0.14, 0.09, 0.25, 0.14]),
    (MeasureKind::Sss, [0.22, 0.22, 0.31, 0.22]),
    (MeasureKind::Cps, [0.30, 0.27, 0.37, 0.22]),
    (MeasureKind::Aul, [0.37, 0.32, 0.55, 0.36]),
    (MeasureKind::Aula, [0.42, 0.34, 0.60, 0.42]),
];

pub const REFERENCE_COLUMNS: [&str; 4] = ["BERT news", "BERT book", "ALBERT news", "ALBERT book"];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn score(measure: MeasureKind, r: f64, value: f64) -> MeasureScore {
        MeasureScore {
            measure,
            model_id: format!("m-{r}"),
            r: Some(r),
            value,
            n_items: 1,
        }
    }

    fn sweep(cells: &[(MeasureKind, fn(f64) -> f64)]) -> SweepResult {
        let rates = [0.0, 0.25, 0.5, 0.75, 1.0];
        SweepResult {
            corpus_id: "test".into(),
            seeds: vec![1],
            scores: cells
                .iter()
                .flat_map(|(m, f)| rates.iter().map(move |&r| score(*m, r, f(r))))
                .collect(),
        }
    }

    #[test]
    fn perfect_and_inverse_lines() {
        assert_eq!(pearson(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[0.0, 0.5, 1.0], &[1.0, 0.5, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn pearson_reference_value() {
        // scipy.stats.pearsonr; by hand 3.5 / sqrt(5 * 4.75)
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 5.0, 4.0]).unwrap();
        assert!((r - 0.7181848464596079).abs() < 1e-12, "{r}");
        let r = pearson(&[0.1, 0.2, 0.4, 0.8, 0.9], &[0.3, 0.1, 0.5, 0.7, 0.95]).unwrap();
        assert!((r - 0.9306697512610373).abs() < 1e-12, "{r}");
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(average_ranks(&[1.0, 3.0, 3.0, 2.0, 5.0]), vec![1.0, 3.5, 3.5, 2.0, 5.0]);
        let r = spearman(&[0.0, 0.5, 1.0, 1.5, 2.0], &[1.0, 3.0, 3.0, 2.0, 5.0]).unwrap();
        assert!((r - 0.6668859288553501).abs() < 1e-12, "{r}");
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[10.0, 20.0, 20.0, 20.0, 15.0, 30.0]).unwrap();
        assert!((r - 0.5768179036829705).abs() < 1e-12, "{r}");
    }

    #[test]
    fn strictly_monotone_is_one() {
        let xs = [0.0, 0.1, 0.2, 0.3];
        assert_eq!(spearman(&xs, &[-5.0, 1.0, 1.5, 100.0]).unwrap(), 1.0);
    }

    #[test]
    fn constant_vector_is_undefined() {
        assert!(matches!(pearson(&[0.0, 0.5, 1.0], &[0.5; 3]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(spearman(&[0.0, 0.5, 1.0], &[0.5; 3]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&[0.0, 1.0], &[0.0, 1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn meta_eval_ranks_and_handles_undefined() {
        let s = sweep(&[
            (MeasureKind::Tbs, |_| 0.5),
            (MeasureKind::Sss, |r| 1.0 - r),
            (MeasureKind::Aul, |r| r),
            (MeasureKind::Aula, |r| r * r),
        ]);
        let report = run_meta_eval(&s).unwrap();
        assert_eq!(report.get(MeasureKind::Aul).unwrap().pearson, Some(1.0));
        assert_eq!(report.get(MeasureKind::Sss).unwrap().pearson, Some(-1.0));
        assert_eq!(report.get(MeasureKind::Tbs).unwrap().pearson, None);
        assert_eq!(
            report.ranking,
            vec![MeasureKind::Aul, MeasureKind::Aula, MeasureKind::Sss, MeasureKind::Tbs]
        );
        let table = format_table(&[report]);
        assert!(table.contains("TBS") && table.contains("n/a (n/a)"), "{table}");
        assert!(table.contains("ranking (test): AUL > AULA > SSS > TBS"), "{table}");
    }

    #[test]
    fn missing_cell_is_named() {
        let mut s = sweep(&[(MeasureKind::Aul, |r| r), (MeasureKind::Cps, |r| r)]);
        s.scores.retain(|c| !(c.measure == MeasureKind::Cps && c.r == Some(0.5)));
        let err = run_meta_eval(&s).unwrap_err();
        assert!(matches!(&err, Error::MissingCell { measure, r } if measure == "CPS" && *r == 0.5), "{err}");
    }

    #[test]
    fn duplicate_cell_and_too_few_rates_fail() {
        let mut s = sweep(&[(MeasureKind::Aul, |r| r)]);
        s.scores.push(score(MeasureKind::Aul, 0.5, 0.1));
        assert!(run_meta_eval(&s).is_err());
        let mut s = sweep(&[(MeasureKind::Aul, |r| r)]);
        s.scores.retain(|c| c.r.unwrap() < 0.3);
        assert!(run_meta_eval(&s).is_err());
    }

    #[test]
    fn base_model_scores_are_ignored() {
        let mut s = sweep(&[(MeasureKind::Aul, |r| r)]);
        s.scores.push(MeasureScore {
            r: None,
            ..score(MeasureKind::Aul, 0.0, 0.9)
        });
        assert_eq!(run_meta_eval(&s).unwrap().get(MeasureKind::Aul).unwrap().pearson, Some(1.0));
    }

    #[test]
    fn reference_ranking_for_bert_news() {
        let mut rows = REFERENCE_PEARSON.to_vec();
        rows.sort_by(|a, b| b.1[0].total_cmp(&a.1[0]));
        let order: Vec<MeasureKind> = rows.iter().map(|r| r.0).collect();
        assert_eq!(
            order,
            vec![MeasureKind::Aula, MeasureKind::Aul, MeasureKind::Cps, MeasureKind::Sss, MeasureKind::Tbs]
        );
    }

    fn finite_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, n)
    }

    proptest! {
        #[test]
        fn pearson_bounded_symmetric_affine_invariant(
            (xs, ys) in (3usize..20).prop_flat_map(|n| (finite_vec(n), finite_vec(n))),
            a in 0.01f64..50.0,
            b in -50.0f64..50.0,
        ) {
            if let Ok(r) = pearson(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((r - pearson(&ys, &xs).unwrap()).abs() < 1e-12);
                let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                prop_assert!((r - pearson(&scaled, &ys).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn spearman_invariant_under_increasing_maps(
            (xs, ys) in (3usize..20).prop_flat_map(|n| (finite_vec(n), finite_vec(n))),
        ) {
            if let Ok(r) = spearman(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let mapped: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
                prop_assert_eq!(r, spearman(&mapped, &ys).unwrap());
                prop_assert!((r - spearman(&ys, &xs).unwrap()).abs() < 1e-12);
            }
        }
    }
}
