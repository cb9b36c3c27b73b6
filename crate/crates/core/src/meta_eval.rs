//! Evaluation of evaluation metrics: rank each query's true class among all
//! class references by metric distance, aggregate accuracy/MRR/NMR, probe the
//! monotone-consistency property, and score label-set adherence with IoU.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{protein_fid, protein_mmd, EmbeddingSet, MetricError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {id} has label {label} not covered by any reference")]
    UnknownLabel { id: String, label: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("duplicate class id {0} in references")]
    DuplicateClass(usize),
    #[error("no queries supplied")]
    NoQueries,
    #[error("probe needs at least 2 interpolation steps, got {0}")]
    TooFewSteps(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Which metric drives the class-distance ranking.
///
/// `PlainMmd` is the sequence-statistics baseline: linear-kernel MMD over the
/// leading 20 embedding dimensions (the monomer-frequency block of the
/// built-in featurizer). `ProteinMmd` uses the full embedding, `ProteinFid`
/// the Fréchet distance (set queries only, n ≥ 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistencyMetric {
    ProteinMmd,
    ProteinFid,
    PlainMmd,
}

impl std::fmt::Display for ConsistencyMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConsistencyMetric::ProteinMmd => "protein-mmd",
            ConsistencyMetric::ProteinFid => "protein-fid",
            ConsistencyMetric::PlainMmd => "plain-mmd",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ConsistencyMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "protein-mmd" => Ok(Self::ProteinMmd),
            "protein-fid" => Ok(Self::ProteinFid),
            "plain-mmd" => Ok(Self::PlainMmd),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

/// Held-out real samples of one class.
#[derive(Debug, Clone)]
pub struct ClassReference {
    pub class_id: usize,
    pub embeddings: EmbeddingSet,
}

/// One test query: an embedding set (singletons are size-1 sets) plus the
/// true class label.
#[derive(Debug, Clone)]
pub struct Query {
    pub id: String,
    pub embeddings: EmbeddingSet,
    pub true_label: usize,
}

/// Distance between a query set and one class reference under the chosen
/// metric. FID requires set queries with n ≥ 2; singleton FID queries are
/// evaluated on the duplicated pair so the moments stay defined.
pub fn class_distance(
    query: &EmbeddingSet,
    reference: &ClassReference,
    metric: ConsistencyMetric,
) -> Result<f64, EvalError> {
    let d = match metric {
        ConsistencyMetric::ProteinMmd => protein_mmd(query, &reference.embeddings)?,
        ConsistencyMetric::PlainMmd => {
            let k = 20.min(query.dim()).min(reference.embeddings.dim());
            protein_mmd(&query.truncated(k)?, &reference.embeddings.truncated(k)?)?
        }
        ConsistencyMetric::ProteinFid => {
            if query.len() >= 2 {
                protein_fid(query, &reference.embeddings)?
            } else {
                let doubled = EmbeddingSet::new(
                    vec![query.row(0).to_vec(), query.row(0).to_vec()],
                    crate::metrics::EmbeddingSource::Raw,
                )?;
                protein_fid(&doubled, &reference.embeddings)?
            }
        }
    };
    Ok(d)
}

/// Per-query ranking outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRanking {
    pub id: String,
    pub true_label: usize,
    /// `(class_id, distance)` sorted ascending by `(distance, class_id)`.
    pub distances: Vec<(usize, f64)>,
    /// 1-based rank of the true class.
    pub rank: usize,
    /// True when the true class tied with another class on distance.
    pub tied: bool,
}

/// Aggregate ranking report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub metric: String,
    pub num_classes: usize,
    pub accuracy: f64,
    pub mrr: f64,
    pub nmr: f64,
    pub tie_count: usize,
    pub queries: Vec<QueryRanking>,
}

impl RankingReport {
    /// CSV with the aggregate line followed by per-query ranks.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,metric,accuracy,mrr,nmr,rank,true_label\n");
        out.push_str(&format!(
            "AGGREGATE,{},{:.6},{:.6},{:.6},,\n",
            self.metric, self.accuracy, self.mrr, self.nmr
        ));
        for q in &self.queries {
            out.push_str(&format!("{},{},,,,{},{}\n", q.id, self.metric, q.rank, q.true_label));
        }
        out
    }
}

fn check_references(refs: &[ClassReference]) -> Result<(), EvalError> {
    if refs.len() < 2 {
        return Err(EvalError::TooFewClasses(refs.len()));
    }
    let mut seen = BTreeSet::new();
    for r in refs {
        if !seen.insert(r.class_id) {
            return Err(EvalError::DuplicateClass(r.class_id));
        }
    }
    Ok(())
}

/// Ranks every query's true class among all references and aggregates
/// accuracy (rank-1 fraction), MRR `(1/|Q|)·Σ 1/rank` and NMR
/// `(1/|Q|)·Σ (rank − 1)/(N − 1)` with `N` the class count.
///
/// Distance ties are broken by ascending class id and counted in `tie_count`.
pub fn evaluate_metric(
    queries: &[Query],
    refs: &[ClassReference],
    metric: ConsistencyMetric,
) -> Result<RankingReport, EvalError> {
    check_references(refs)?;
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let known: BTreeSet<usize> = refs.iter().map(|r| r.class_id).collect();
    let n_classes = refs.len();

    let mut rankings = Vec::with_capacity(queries.len());
    let mut tie_count = 0usize;
    for q in queries {
        if !known.contains(&q.true_label) {
            return Err(EvalError::UnknownLabel { id: q.id.clone(), label: q.true_label });
        }
        let mut distances: Vec<(usize, f64)> = refs
            .iter()
            .map(|r| Ok((r.class_id, class_distance(&q.embeddings, r, metric)?)))
            .collect::<Result<_, EvalError>>()?;
        distances.sort_by(|a, b| {
            a.1.partial_cmp(&b.1).expect("finite distances").then(a.0.cmp(&b.0))
        });
        let rank =
            1 + distances.iter().position(|&(c, _)| c == q.true_label).expect("label known");
        let true_dist = distances[rank - 1].1;
        let tied = distances.iter().any(|&(c, d)| c != q.true_label && d == true_dist);
        if tied {
            tie_count += 1;
        }
        rankings.push(QueryRanking {
            id: q.id.clone(),
            true_label: q.true_label,
            distances,
            rank,
            tied,
        });
    }

    let nq = rankings.len() as f64;
    let accuracy = rankings.iter().filter(|r| r.rank == 1).count() as f64 / nq;
    let mrr = rankings.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / nq;
    let nmr = rankings
        .iter()
        .map(|r| (r.rank - 1) as f64 / (n_classes - 1) as f64)
        .sum::<f64>()
        / nq;

    Ok(RankingReport {
        metric: metric.to_string(),
        num_classes: n_classes,
        accuracy,
        mrr,
        nmr,
        tie_count,
        queries: rankings,
    })
}

/// Result of the monotone-consistency probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub target_class: usize,
    /// Distance to the target class at each interpolation step.
    pub target_distances: Vec<f64>,
    /// Arg-min class at each step.
    pub argmin_per_step: Vec<usize>,
    /// Smallest step index from which the target class stays the arg-min
    /// through the end of the sequence.
    pub stable_from: Option<usize>,
}

/// Walks a synthetic query from `start` toward the target class centroid by
/// convex interpolation in embedding space and records the distance sequence.
///
/// For the linear-kernel metrics the distance to the target is exactly
/// `(1 − λ)²·d(start)` and therefore non-increasing, reaching 0 at the final
/// step where the query coincides with the centroid.
pub fn monotone_consistency_probe(
    refs: &[ClassReference],
    target_class: usize,
    steps: usize,
    metric: ConsistencyMetric,
    start: &[f64],
) -> Result<ProbeReport, EvalError> {
    check_references(refs)?;
    if steps < 2 {
        return Err(EvalError::TooFewSteps(steps));
    }
    let target = refs
        .iter()
        .find(|r| r.class_id == target_class)
        .ok_or(EvalError::UnknownLabel { id: "probe".into(), label: target_class })?;
    let centroid = target.embeddings.mean();
    if start.len() != centroid.len() {
        return Err(EvalError::Metric(MetricError::DimensionMismatch(
            start.len(),
            centroid.len(),
        )));
    }

    let mut target_distances = Vec::with_capacity(steps);
    let mut argmin_per_step = Vec::with_capacity(steps);
    for i in 0..steps {
        let lambda = i as f64 / (steps - 1) as f64;
        let point: Vec<f64> = start
            .iter()
            .zip(&centroid)
            .map(|(s, c)| (1.0 - lambda) * s + lambda * c)
            .collect();
        let query = EmbeddingSet::singleton(point)?;
        let mut best = (usize::MAX, f64::INFINITY);
        for r in refs {
            let d = class_distance(&query, r, metric)?;
            if d < best.1 || (d == best.1 && r.class_id < best.0) {
                best = (r.class_id, d);
            }
            if r.class_id == target_class {
                target_distances.push(d);
            }
        }
        argmin_per_step.push(best.0);
    }

    let stable_from =
        (0..steps).find(|&n| argmin_per_step[n..].iter().all(|&c| c == target_class));

    Ok(ProbeReport { target_class, target_distances, argmin_per_step, stable_from })
}

/// Intersection over union of two label sets; two empty sets count as
/// perfectly matching (IoU 1).
pub fn iou<T: Ord>(predicted: &BTreeSet<T>, truth: &BTreeSet<T>) -> f64 {
    if predicted.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let inter = predicted.intersection(truth).count() as f64;
    let union = predicted.union(truth).count() as f64;
    inter / union
}

/// Aggregate IoU report: mean, max and a 10-bin histogram of scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IouReport {
    pub mean: f64,
    pub max: f64,
    pub histogram: [usize; 10],
}

/// Scores each (predicted, truth) pair and aggregates.
pub fn iou_report<T: Ord>(pairs: &[(BTreeSet<T>, BTreeSet<T>)]) -> IouReport {
    let mut histogram = [0usize; 10];
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for (p, t) in pairs {
        let v = iou(p, t);
        sum += v;
        max = max.max(v);
        let bin = ((v * 10.0).floor() as usize).min(9);
        histogram[bin] += 1;
    }
    let mean = if pairs.is_empty() { 0.0 } else { sum / pairs.len() as f64 };
    IouReport { mean, max, histogram }
}

impl IouReport {
    /// Histogram bins as CSV (`bin_low,bin_high,count`).
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, c) in self.histogram.iter().enumerate() {
            out.push_str(&format!(
                "{:.1},{:.1},{}\n",
                i as f64 / 10.0,
                (i + 1) as f64 / 10.0,
                c
            ));
        }
        out
    }
}
