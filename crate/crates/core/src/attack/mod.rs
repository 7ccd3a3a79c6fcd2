//! Linkage attacks: rank a gallery against a query image by embedding
//! distance, or sweep a verification model over it.

mod index;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use index::{build_index, GalleryIndex, IndexFailures, INDEX_VERSION};

use crate::catalog::{load_and_preprocess, Manifest, PreprocessSpec};
use crate::error::{Error, Result};
use crate::metrics::{rank_gallery, retrieval_report, RankedList, RetrievalReport};
use crate::nn::Embedding;
use crate::par;
use crate::tensor::Tensor3;

/// Ranks the index against a query embedding.
pub fn rank_query(
    query_id: &str,
    query_patient: &str,
    query: &Embedding,
    index: &GalleryIndex,
    exclude_self: bool,
) -> RankedList {
    rank_gallery(query_id, query_patient, query.values(), index.entries(), exclude_self)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimedMatch {
    pub image_id: String,
    pub score: f64,
}

/// Scores the query against every gallery image and returns those at or
/// above `t`, in gallery order.
pub fn verification_sweep<'a, F>(
    query: &Tensor3,
    gallery: &[(&'a str, &'a Tensor3)],
    verif_fn: F,
    t: f64,
) -> Result<Vec<ClaimedMatch>>
where
    F: Fn(&Tensor3, &Tensor3) -> Result<f64> + Sync + Send,
{
    let scores = par::map_slice(gallery, |&(id, x)| verif_fn(query, x).map(|s| (id, s)));
    let mut out = Vec::new();
    for s in scores {
        let (id, score) = s?;
        if score >= t {
            out.push(ClaimedMatch {
                image_id: id.to_owned(),
                score,
            });
        }
    }
    Ok(out)
}

pub const HIT_RATE_KS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    /// 1-based rank of the first same-patient image.
    pub hit_rank: Option<usize>,
    pub top: Vec<(String, f64)>,
    pub relevant: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub schema_version: u32,
    pub model_id: String,
    pub resolution: u32,
    pub gallery_size: usize,
    pub retrieval: RetrievalReport,
    /// Fraction of queries with R ≥ 1 whose first hit is within the top k.
    pub hit_rate: BTreeMap<usize, f64>,
    pub queries: Vec<QueryRecord>,
}

impl AttackReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `query_id,hit_rank,top1_id,top1_distance`; absent values are empty.
    pub fn per_query_csv(&self) -> String {
        let mut out = String::from("query_id,hit_rank,top1_id,top1_distance\n");
        for q in &self.queries {
            let rank = q.hit_rank.map(|r| r.to_string()).unwrap_or_default();
            let (id, d) = q
                .top
                .first()
                .map(|(id, d)| (id.clone(), d.to_string()))
                .unwrap_or_default();
            out.push_str(&format!("{},{rank},{id},{d}\n", q.query_id));
        }
        out
    }
}

/// Report over already ranked lists.
pub fn report_from_lists(index: &GalleryIndex, lists: &[RankedList], top_k: usize) -> Result<AttackReport> {
    let retrieval = retrieval_report(lists)?;
    let scored: Vec<&RankedList> = lists.iter().filter(|l| l.r > 0).collect();
    let hit_rate = HIT_RATE_KS
        .iter()
        .map(|&k| {
            let hits = scored
                .iter()
                .filter(|l| l.first_hit().is_some_and(|r| r <= k))
                .count();
            (k, hits as f64 / scored.len() as f64)
        })
        .collect();
    let mut queries: Vec<QueryRecord> = lists
        .iter()
        .map(|l| QueryRecord {
            query_id: l.query_id.clone(),
            hit_rank: l.first_hit(),
            top: l
                .items
                .iter()
                .take(top_k)
                .map(|i| (i.image_id.clone(), i.distance))
                .collect(),
            relevant: l.r,
        })
        .collect();
    queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(AttackReport {
        schema_version: crate::metrics::SCHEMA_VERSION,
        model_id: index.model_id.clone(),
        resolution: index.resolution,
        gallery_size: index.len(),
        retrieval,
        hit_rate,
        queries,
    })
}

/// Embeds every query with `embed_fn`, ranks the index, and aggregates.
pub fn attack_report<F>(
    queries: &Manifest,
    index: &GalleryIndex,
    embed_fn: F,
    spec: &PreprocessSpec,
    exclude_self: bool,
    top_k: usize,
) -> Result<AttackReport>
where
    F: Fn(&Tensor3) -> Result<Embedding> + Sync + Send,
{
    let lists = queries
        .records()
        .iter()
        .map(|r| {
            let emb = match index.find(&r.image_id) {
                Some(e) if index.resolution as usize == spec.target_resolution => e.embedding.clone(),
                _ => embed_fn(&load_and_preprocess(&r.source_path, spec)?)?,
            };
            Ok(rank_query(&r.image_id, &r.patient_id, &emb, index, exclude_self))
        })
        .collect::<Result<Vec<_>>>()?;
    report_from_lists(index, &lists, top_k)
}

/// Builds one index per resolution and reports the intra-gallery attack
/// (every image queried against the rest) at each.
pub fn resolution_sweep<F>(
    manifest: &Manifest,
    embed_fn: F,
    resolutions: &[usize],
    model_id: &str,
    top_k: usize,
) -> Result<Vec<AttackReport>>
where
    F: Fn(&Tensor3) -> Result<Embedding> + Sync + Send,
{
    if resolutions.is_empty() {
        return Err(Error::InvalidArgument("no resolutions to sweep".into()));
    }
    resolutions
        .iter()
        .map(|&res| {
            let spec = PreprocessSpec::new(res);
            let (index, failures) = build_index(manifest, &embed_fn, &spec, model_id)?;
            if let Some((id, why)) = failures.first() {
                return Err(Error::InvalidArgument(format!(
                    "{} images failed at resolution {res}, first `{id}`: {why}",
                    failures.len()
                )));
            }
            let lists: Vec<RankedList> = index
                .entries()
                .iter()
                .map(|e| rank_query(&e.image_id, &e.patient_id, &e.embedding, &index, true))
                .collect();
            report_from_lists(&index, &lists, top_k)
        })
        .collect()
}
