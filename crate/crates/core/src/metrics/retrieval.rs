//! Ranked retrieval lists and the precision family computed on them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::embedding::{euclidean, Embedding};
use crate::par;

/// One gallery image with its identity and embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryEntry {
    pub image_id: String,
    pub patient_id: String,
    pub embedding: Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub image_id: String,
    pub distance: f64,
    pub relevant: bool,
}

/// Gallery ordered by ascending distance, ties broken by ascending image
/// id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub items: Vec<RankedItem>,
    /// Number of relevant items in the list.
    pub r: usize,
}

fn rank_order(a: &RankedItem, b: &RankedItem) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

impl RankedList {
    /// Sorts `items` into rank order.
    pub fn new(query_id: impl Into<String>, mut items: Vec<RankedItem>) -> Self {
        items.sort_by(rank_order);
        let r = items.iter().filter(|i| i.relevant).count();
        RankedList {
            query_id: query_id.into(),
            items,
            r,
        }
    }

    /// 1-based rank of the first relevant item.
    pub fn first_hit(&self) -> Option<usize> {
        self.items.iter().position(|i| i.relevant).map(|p| p + 1)
    }
}

/// Ranks `gallery` by Euclidean distance to `query`; relevance is patient
/// equality. With `exclude_self` the gallery entry whose image id equals
/// `query_id` is dropped.
pub fn rank_gallery(
    query_id: &str,
    query_patient: &str,
    query: &[f64],
    gallery: &[GalleryEntry],
    exclude_self: bool,
) -> RankedList {
    let items: Vec<Option<RankedItem>> = par::map_slice(gallery, |e| {
        if exclude_self && e.image_id == query_id {
            return None;
        }
        Some(RankedItem {
            image_id: e.image_id.clone(),
            distance: euclidean(query, e.embedding.values()),
            relevant: e.patient_id == query_patient,
        })
    });
    RankedList::new(query_id, items.into_iter().flatten().collect())
}

/// Fraction of relevant items among the first R; `None` when R = 0.
pub fn r_precision(list: &RankedList) -> Option<f64> {
    if list.r == 0 {
        return None;
    }
    let hits = list.items[..list.r].iter().filter(|i| i.relevant).count();
    Some(hits as f64 / list.r as f64)
}

/// (1/R) Σ_{i ≤ R} P@i · rel@i; `None` when R = 0.
pub fn average_precision_at_r(list: &RankedList) -> Option<f64> {
    if list.r == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in list.items[..list.r].iter().enumerate() {
        if item.relevant {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / list.r as f64)
}

/// Fraction of lists whose top entry is relevant.
pub fn precision_at_1(lists: &[RankedList]) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Metric("precision@1 of zero queries".into()));
    }
    let hits = lists
        .iter()
        .filter(|l| l.items.first().is_some_and(|i| i.relevant))
        .count();
    Ok(hits as f64 / lists.len() as f64)
}

/// Mean AP@R over queries with R ≥ 1.
pub fn map_at_r(lists: &[RankedList]) -> Result<f64> {
    let aps: Vec<f64> = lists.iter().filter_map(average_precision_at_r).collect();
    if aps.is_empty() {
        return Err(Error::Metric("mAP@R of zero queries with relevant items".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub schema_version: u32,
    /// Queries with at least one relevant gallery item.
    pub queries: usize,
    /// Queries skipped because nothing in the gallery was relevant.
    pub skipped: usize,
    pub map_at_r: f64,
    pub r_precision: f64,
    pub precision_at_1: f64,
}

/// Aggregates over the lists with R ≥ 1; the rest are tallied as skipped.
pub fn retrieval_report(lists: &[RankedList]) -> Result<RetrievalReport> {
    let scored: Vec<RankedList> = lists.iter().filter(|l| l.r > 0).cloned().collect();
    if scored.is_empty() {
        return Err(Error::Metric("no query has a relevant gallery item".into()));
    }
    let q = scored.len() as f64;
    Ok(RetrievalReport {
        schema_version: super::report::SCHEMA_VERSION,
        queries: scored.len(),
        skipped: lists.len() - scored.len(),
        map_at_r: map_at_r(&scored)?,
        r_precision: scored.iter().filter_map(r_precision).sum::<f64>() / q,
        precision_at_1: precision_at_1(&scored)?,
    })
}

/// Every gallery image queried against all others.
pub fn leave_one_out(gallery: &[GalleryEntry]) -> Vec<RankedList> {
    gallery
        .iter()
        .map(|q| rank_gallery(&q.image_id, &q.patient_id, q.embedding.values(), gallery, true))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(rel: &[bool]) -> RankedList {
        RankedList::new(
            "q",
            rel.iter()
                .enumerate()
                .map(|(i, &relevant)| RankedItem {
                    image_id: format!("{i:03}"),
                    distance: i as f64,
                    relevant,
                })
                .collect(),
        )
    }

    #[test]
    fn reference_lists() {
        let l = list(&[true, false, true, false]);
        assert_eq!(r_precision(&l), Some(0.5));
        assert_eq!(average_precision_at_r(&l), Some(0.5));
        let l = list(&[true, true, false]);
        assert_eq!(average_precision_at_r(&l), Some(1.0));
        let l = list(&[false, true, true, true, false]);
        let ap = average_precision_at_r(&l).unwrap();
        assert!((ap - (0.0 + 0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
        assert_eq!(r_precision(&list(&[false, false])), None);
    }

    #[test]
    fn precision_at_one_counts_hits() {
        let lists = vec![
            list(&[true, false]),
            list(&[true]),
            list(&[false, true]),
            list(&[true, true]),
        ];
        assert_eq!(precision_at_1(&lists).unwrap(), 0.75);
    }

    #[test]
    fn ties_break_by_image_id() {
        let l = RankedList::new(
            "q",
            vec![
                RankedItem { image_id: "b".into(), distance: 1.0, relevant: false },
                RankedItem { image_id: "a".into(), distance: 1.0, relevant: true },
            ],
        );
        assert_eq!(l.items[0].image_id, "a");
    }

    #[test]
    fn report_skips_queries_without_relevant_items() {
        let lists = vec![list(&[true, false]), list(&[false, false])];
        let r = retrieval_report(&lists).unwrap();
        assert_eq!((r.queries, r.skipped), (1, 1));
        assert_eq!(r.precision_at_1, 1.0);
    }
}
