use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub method: String,
    /// Area per column (dataset, or dataset and occlusion).
    pub auc: BTreeMap<String, f64>,
    /// Mean over the columns the method appears in.
    pub average: f64,
    /// 1 is best; ties share a rank.
    pub rank: usize,
}

/// Rank methods by their mean area, highest first.
pub fn rank_methods<I, S, T>(entries: I) -> Vec<RankingRow>
where
    I: IntoIterator<Item = (S, T, f64)>,
    S: Into<String>,
    T: Into<String>,
{
    let mut by_method: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (column, method, auc) in entries {
        by_method.entry(method.into()).or_default().insert(column.into(), auc);
    }
    let mut rows: Vec<RankingRow> = by_method
        .into_iter()
        .map(|(method, auc)| {
            let average = auc.values().sum::<f64>() / auc.len() as f64;
            RankingRow {
                method,
                auc,
                average,
                rank: 0,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.average.total_cmp(&a.average).then_with(|| a.method.cmp(&b.method)));
    for k in 0..rows.len() {
        rows[k].rank = if k > 0 && rows[k].average == rows[k - 1].average { rows[k - 1].rank } else { k + 1 };
    }
    rows
}
