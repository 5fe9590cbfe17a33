//! Token-budgeted rank-and-keep filtering.

use std::cmp::Ordering;

use super::QualityError;
use crate::corpus::Document;

pub const FILTER_SCORE_KEY: &str = "filter_score";

/// Keep the highest-scoring documents until their tokens reach
/// `keep_token_fraction` of the total.
///
/// Documents are ranked by descending score, then ascending id. The kept set
/// is the shortest ranked prefix whose cumulative `token_count` reaches the
/// target; a fraction of exactly 1 keeps everything, including trailing
/// zero-token documents. Each kept document carries its score under
/// `meta["filter_score"]`.
pub fn filter_by_rank(
    scored: Vec<(Document, f64)>,
    keep_token_fraction: f64,
) -> Result<Vec<Document>, QualityError> {
    if !(keep_token_fraction > 0.0 && keep_token_fraction <= 1.0) {
        return Err(QualityError::InvalidFraction(keep_token_fraction));
    }
    if let Some((d, s)) = scored.iter().find(|(_, s)| !(0.0..=1.0).contains(s)) {
        return Err(QualityError::InvalidScore { id: d.id.clone(), score: *s });
    }
    let mut ranked = scored;
    ranked.sort_by(|(da, sa), (db, sb)| match sb.total_cmp(sa) {
        Ordering::Equal => da.id.cmp(&db.id),
        o => o,
    });
    let total: u64 = ranked.iter().map(|(d, _)| d.token_count).sum();
    let keep_all = keep_token_fraction == 1.0;
    let target = keep_token_fraction * total as f64;

    let mut kept = Vec::new();
    let mut cumulative = 0u64;
    for (mut doc, score) in ranked {
        if !keep_all && cumulative as f64 >= target {
            break;
        }
        cumulative += doc.token_count;
        doc.meta.insert(FILTER_SCORE_KEY.to_string(), score.to_string());
        kept.push(doc);
    }
    Ok(kept)
}
