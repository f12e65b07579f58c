//! Ranking metrics over grouped candidate lists.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;

use crate::error::{Error, Result};

/// Relevance labels of one group in ranked order, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedLabels {
    pub group_id: String,
    pub labels: Vec<u8>,
}

impl RankedLabels {
    pub fn new(group_id: impl Into<String>, labels: Vec<u8>) -> Self {
        Self {
            group_id: group_id.into(),
            labels,
        }
    }

    /// Labels reordered by a ranking of `(candidate, score)` pairs.
    pub fn from_ranking(group_id: impl Into<String>, labels: &[u8], ranking: &[(usize, f64)]) -> Self {
        Self::new(group_id, ranking.iter().map(|&(i, _)| labels[i]).collect())
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }
}

/// Mean over positive ranks `p` of `(positives within the top p) / p`.
/// `None` when the group has no positive.
pub fn average_precision(ranked: &[u8]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in ranked.iter().enumerate() {
        if l > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// `1 / rank` of the first positive.
pub fn reciprocal_rank(ranked: &[u8]) -> Option<f64> {
    ranked.iter().position(|&l| l > 0).map(|i| 1.0 / (i + 1) as f64)
}

/// Fraction of the positives that appear in the top `k`.
pub fn recall_at_k(ranked: &[u8], k: usize) -> Option<f64> {
    let total = ranked.iter().filter(|&&l| l > 0).count();
    if total == 0 {
        return None;
    }
    let hit = ranked.iter().take(k).filter(|&&l| l > 0).count();
    Some(hit as f64 / total as f64)
}

/// Unweighted means over groups that contain at least one positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub map: f64,
    pub mrr: f64,
    pub r1: f64,
    pub r2: f64,
    pub r5: f64,
    pub groups: usize,
    pub groups_skipped: usize,
}

impl Metrics {
    pub const TSV_HEADER: &'static str = "map\tmrr\tr@1\tr@2\tr@5\tgroups\tgroups_skipped";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.map, self.mrr, self.r1, self.r2, self.r5, self.groups, self.groups_skipped
        )
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MAP    {:.4}", self.map)?;
        writeln!(f, "MRR    {:.4}", self.mrr)?;
        writeln!(f, "R@1    {:.4}", self.r1)?;
        writeln!(f, "R@2    {:.4}", self.r2)?;
        writeln!(f, "R@5    {:.4}", self.r5)?;
        write!(
            f,
            "groups {} ({} skipped without a positive)",
            self.groups, self.groups_skipped
        )
    }
}

pub fn evaluate_groups<'a>(groups: impl IntoIterator<Item = &'a RankedLabels>) -> Metrics {
    let mut sums = [0.0; 5];
    let mut n = 0usize;
    let mut skipped = 0usize;
    for g in groups {
        let l = &g.labels;
        let (Some(ap), Some(rr)) = (average_precision(l), reciprocal_rank(l)) else {
            skipped += 1;
            continue;
        };
        let r = |k| recall_at_k(l, k).expect("group has a positive");
        for (s, v) in sums.iter_mut().zip([ap, rr, r(1), r(2), r(5)]) {
            *s += v;
        }
        n += 1;
    }
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Metrics {
        map: mean(sums[0]),
        mrr: mean(sums[1]),
        r1: mean(sums[2]),
        r2: mean(sums[3]),
        r5: mean(sums[4]),
        groups: n,
        groups_skipped: skipped,
    }
}

/// One line of a scored-candidate file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLine {
    pub group_id: String,
    pub score: f64,
    pub label: u8,
}

/// Reads `group_id<TAB>score<TAB>label` lines.
pub fn read_scored_lines<R: BufRead>(input: R) -> Result<Vec<ScoredLine>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(n + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::parse(
                n + 1,
                format!("expected 3 tab-separated fields, found {}", f.len()),
            ));
        }
        let score: f64 = f[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(n + 1, format!("bad score `{}`", f[1])))?;
        let label = match f[2].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(n + 1, format!("label must be 0 or 1, got `{other}`"))),
        };
        out.push(ScoredLine {
            group_id: f[0].to_string(),
            score,
            label,
        });
    }
    Ok(out)
}

/// Groups scored lines and ranks each group by descending score, ties by
/// order of appearance. Groups are returned sorted by id.
pub fn rank_scored_lines(lines: &[ScoredLine]) -> Vec<RankedLabels> {
    let mut groups: BTreeMap<&str, Vec<(f64, u8)>> = BTreeMap::new();
    for l in lines {
        groups.entry(&l.group_id).or_default().push((l.score, l.label));
    }
    groups
        .into_iter()
        .map(|(id, items)| {
            let scores: Vec<f64> = items.iter().map(|x| x.0).collect();
            let labels: Vec<u8> = items.iter().map(|x| x.1).collect();
            RankedLabels::from_ranking(id, &labels, &crate::model::rank_scores(&scores))
        })
        .collect()
}

/// Evaluates rankings against the group ids of a dataset. Every dataset
/// group must be ranked; extra groups in `rankings` are ignored.
pub fn evaluate_against<'a>(
    rankings: &[RankedLabels],
    dataset_groups: impl IntoIterator<Item = &'a str>,
) -> Result<Metrics> {
    let by_id: BTreeMap<&str, &RankedLabels> = rankings.iter().map(|r| (r.group_id.as_str(), r)).collect();
    let mut chosen = Vec::new();
    let mut missing = Vec::new();
    for id in dataset_groups {
        match by_id.get(id) {
            Some(r) => chosen.push(*r),
            None => missing.push(id.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingGroups(missing));
    }
    Ok(evaluate_groups(chosen))
}
