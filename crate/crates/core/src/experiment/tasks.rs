//! Task implementations behind [`run`](super::run).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{DataSource, RunConfig, Task};
use crate::attack::{rank_query, report_from_lists, verification_sweep, AttackReport, GalleryIndex};
use crate::catalog::{
    filter_manifest, patient_wise_split, read_manifest, read_split_file, write_split_file, ImageBank, Manifest,
    ManifestSchema, Split, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::metrics::{
    leave_one_out, new_findings, retrieval_report, roc_csv, roc_curve, tpr_by_bins, verification_report, PairMeta,
    ScoredPair,
};
use crate::mining::{balanced_eval_pairs, build_training_pairs, mine_positive_pairs, MiningConfig, PairSet};
use crate::nn::{grad_cam, Checkpoint, EmbeddingNet, Model, ParamStore, VerificationNet};
use crate::rng::derive_seed;
use crate::synthetic::{generate, generate_in_memory};
use crate::train::{embed_manifest, score_pairs, train_reid, train_verification, TrainState, VerifTrainConfig};

/// Seed streams of the runner, kept apart from the library's own.
mod seeds {
    pub const EVAL_PAIRS: u64 = 101;
    pub const BOOTSTRAP: u64 = 102;
    pub const INIT: u64 = 103;
    pub const MINING: u64 = 104;
}

pub(super) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text)
}

/// Manifest of the configured source. Synthetic data also comes with its
/// images preprocessed at `resolution`.
fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    match cfg.data.source {
        DataSource::Synthetic => crate::synthetic::synthetic_manifest(&cfg.synth, Path::new("images")),
        DataSource::Manifest => {
            let path = cfg.data.manifest.as_ref().expect("validated");
            read_manifest(path, &ManifestSchema::chestxray14(), cfg.data.image_root.as_deref())
        }
    }
}

/// Preprocessed images of `manifest` at `resolution`. Images that fail to
/// load are listed in `load_failures.csv` and dropped from the returned
/// manifest.
fn load_images(cfg: &RunConfig, manifest: &Manifest, resolution: usize) -> Result<(Manifest, ImageBank)> {
    let spec = cfg.data.preprocess(resolution);
    match cfg.data.source {
        DataSource::Synthetic => {
            let (_, bank) = generate_in_memory(&cfg.synth, &spec)?;
            Ok((manifest.clone(), bank))
        }
        DataSource::Manifest => {
            let (bank, failures) = ImageBank::load(manifest, &spec);
            if failures.is_empty() {
                return Ok((manifest.clone(), bank));
            }
            let mut csv = String::from("image_id,error\n");
            for (id, why) in &failures {
                let _ = writeln!(csv, "{id},\"{}\"", why.replace('"', "'"));
            }
            write(&cfg.output_dir.join("load_failures.csv"), csv)?;
            let kept = filter_manifest(manifest, |r| bank.contains(&r.image_id));
            if kept.is_empty() {
                return Err(Error::InvalidArgument("no image could be loaded".into()));
            }
            Ok((kept, bank))
        }
    }
}

fn load_split(cfg: &RunConfig, manifest: &Manifest) -> Result<SplitAssignment> {
    match &cfg.data.split_file {
        Some(path) => read_split_file(path, manifest),
        None => patient_wise_split(manifest, cfg.data.split_fractions, cfg.seed),
    }
}

fn mining_config(cfg: &RunConfig, train: &Manifest) -> MiningConfig {
    let target_size = match cfg.mining.target_size {
        0 => 2 * mine_positive_pairs(train).len(),
        n => n,
    };
    MiningConfig {
        mode: cfg.mining.mode,
        target_size,
        seed: derive_seed(cfg.seed, &[seeds::MINING]),
    }
}

fn load_checkpoint(path: &Path) -> Result<(Model, ParamStore, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let (model, store) = ckpt.clone().into_model()?;
    Ok((model, store, ckpt))
}

fn verification_model(path: &Path) -> Result<(VerificationNet, ParamStore, usize)> {
    match load_checkpoint(path)? {
        (Model::Verification(net), store, ckpt) => Ok((net, store, ckpt.header.resolution)),
        _ => Err(Error::InvalidArgument(format!(
            "{} does not hold a verification model",
            path.display()
        ))),
    }
}

fn embedding_model(path: &Path) -> Result<(EmbeddingNet, ParamStore, Checkpoint)> {
    match load_checkpoint(path)? {
        (Model::Embedding(net), store, ckpt) => Ok((net, store, ckpt)),
        _ => Err(Error::InvalidArgument(format!("{} does not hold an embedding model", path.display()))),
    }
}

#[derive(Serialize)]
struct SplitSummary {
    patients: BTreeMap<String, usize>,
    images: BTreeMap<String, usize>,
}

fn split_summary(split: &SplitAssignment, manifest: &Manifest) -> SplitSummary {
    let counts = split.image_counts(manifest);
    SplitSummary {
        patients: Split::ALL
            .iter()
            .map(|s| (s.name().to_owned(), split.patients_in(*s).count()))
            .collect(),
        images: Split::ALL
            .iter()
            .zip(counts)
            .map(|(s, c)| (s.name().to_owned(), c))
            .collect(),
    }
}

fn task_split(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let split = load_split(cfg, &manifest)?;
    write_split_file(&cfg.output_dir.join("split.csv"), &split)?;
    write_json(&cfg.output_dir.join("split_summary.json"), &split_summary(&split, &manifest))
}

fn task_mine(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let split = load_split(cfg, &manifest)?;
    let train = split.subset(&manifest, Split::Train);
    let mining = mining_config(cfg, &train);
    let mut train_pairs = build_training_pairs(&train, &mining, 1)?;
    train_pairs.source_split = "train".into();
    train_pairs.write_csv(&cfg.output_dir.join("train_pairs.csv"))?;
    let mut counts = BTreeMap::new();
    counts.insert("train".to_owned(), train_pairs.len());
    for s in [Split::Val, Split::Test] {
        let subset = split.subset(&manifest, s);
        let mut pairs = balanced_eval_pairs(&subset, derive_seed(cfg.seed, &[seeds::EVAL_PAIRS, s as u64]))?;
        pairs.source_split = s.name().into();
        pairs.write_csv(&cfg.output_dir.join(format!("{}_pairs.csv", s.name())))?;
        counts.insert(s.name().to_owned(), pairs.len());
    }
    write_json(&cfg.output_dir.join("pairs_summary.json"), &counts)
}

fn task_synth(cfg: &RunConfig) -> Result<()> {
    let manifest = generate(&cfg.synth, &cfg.output_dir)?;
    let summary = BTreeMap::from([
        ("images".to_owned(), manifest.len()),
        ("patients".to_owned(), manifest.patient_count()),
    ]);
    write_json(&cfg.output_dir.join("synth_summary.json"), &summary)
}

fn write_lr_trace(path: &Path, state: &TrainState) -> Result<()> {
    let mut out = String::from("step,lr\n");
    for (i, lr) in state.lr_trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{lr}");
    }
    write(path, out)
}

#[derive(Serialize)]
struct TrainSummary {
    model: String,
    parameters: usize,
    epochs: usize,
    steps: u64,
    best_epoch: usize,
    best_monitored: f64,
}

fn task_train_verif(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let (manifest, bank) = load_images(cfg, &manifest, cfg.data.resolution)?;
    let split = load_split(cfg, &manifest)?;
    let train = split.subset(&manifest, Split::Train);
    let val = split.subset(&manifest, Split::Val);
    let spec = cfg.verification_spec()?;
    let (net, store) = VerificationNet::new(&spec, derive_seed(cfg.seed, &[seeds::INIT]))?;
    let v = &cfg.verif;
    let config = VerifTrainConfig {
        learning_rate: v.learning_rate,
        batch_size: v.batch_size,
        patience: v.patience,
        max_epochs: v.max_epochs,
        mining: mining_config(cfg, &train),
        monitor: v.monitor,
        freeze_trunk: v.freeze_trunk,
        val_seed: derive_seed(cfg.seed, &[seeds::EVAL_PAIRS, Split::Val as u64]),
        checkpoint_dir: Some(cfg.output_dir.join("checkpoints")),
    };
    let (best, state) = train_verification(&net, store, &train, &val, &bank, &config)?;
    let model_spec = crate::nn::ModelSpec::Verification(spec);
    Checkpoint::new(&model_spec, &best, state.global_step).save(&cfg.output_dir.join("model.ckpt"))?;
    write_split_file(&cfg.output_dir.join("split.csv"), &split)?;
    state.write_history_csv(&cfg.output_dir.join("history.csv"))?;
    write_json(
        &cfg.output_dir.join("train_summary.json"),
        &TrainSummary {
            model: model_spec.spec_id(),
            parameters: best.len(),
            epochs: state.epoch,
            steps: state.global_step,
            best_epoch: state.best_epoch,
            best_monitored: state.best_val_metric,
        },
    )
}

fn task_train_reid(cfg: &RunConfig) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let (manifest, bank) = load_images(cfg, &manifest, cfg.data.resolution)?;
    let split = load_split(cfg, &manifest)?;
    let train = split.subset(&manifest, Split::Train);
    let val = split.subset(&manifest, Split::Val);
    let spec = cfg.embedding_spec()?;
    let (net, store) = EmbeddingNet::new(&spec, derive_seed(cfg.seed, &[seeds::INIT]))?;
    let val_ref = (!val.is_empty()).then_some(&val);
    let (trained, state) = train_reid(&net, store, &train, val_ref, &bank, &cfg.reid_train_config())?;
    let model_spec = crate::nn::ModelSpec::Embedding(spec);
    Checkpoint::new(&model_spec, &trained, state.global_step).save(&cfg.output_dir.join("model.ckpt"))?;
    write_split_file(&cfg.output_dir.join("split.csv"), &split)?;
    state.write_history_csv(&cfg.output_dir.join("history.csv"))?;
    write_lr_trace(&cfg.output_dir.join("lr_trace.csv"), &state)?;
    write_json(
        &cfg.output_dir.join("train_summary.json"),
        &TrainSummary {
            model: model_spec.spec_id(),
            parameters: trained.len(),
            epochs: state.epoch,
            steps: state.global_step,
            best_epoch: state.best_epoch,
            best_monitored: state.best_val_metric,
        },
    )
}

/// Robustness metadata of a positive pair; negatives get none.
pub fn pair_meta(manifest: &Manifest, a: &str, b: &str, label: u8) -> Option<PairMeta> {
    if label != 1 {
        return None;
    }
    let (ra, rb) = (manifest.find(a)?, manifest.find(b)?);
    let (early, late) = if ra.follow_up_index <= rb.follow_up_index { (ra, rb) } else { (rb, ra) };
    Some(PairMeta {
        age_diff_years: match (ra.age_years, rb.age_years) {
            (Some(x), Some(y)) => Some(x.abs_diff(y)),
            _ => None,
        },
        new_findings: Some(new_findings(&early.finding_labels, &late.finding_labels)),
        view_changed: Some(ra.view != rb.view),
    })
}

fn eval_pairs(cfg: &RunConfig, manifest: &Manifest, split: &SplitAssignment, s: Split) -> Result<PairSet> {
    match &cfg.mining.pairs_file {
        Some(path) => PairSet::read_csv(path, s.name()),
        None => balanced_eval_pairs(
            &split.subset(manifest, s),
            derive_seed(cfg.seed, &[seeds::EVAL_PAIRS, s as u64]),
        ),
    }
}

fn task_eval_verif(cfg: &RunConfig) -> Result<()> {
    let (net, store, resolution) = verification_model(cfg.model.checkpoint.as_deref().expect("validated"))?;
    let manifest = load_manifest(cfg)?;
    let (manifest, bank) = load_images(cfg, &manifest, resolution)?;
    let split = load_split(cfg, &manifest)?;
    let pairs = eval_pairs(cfg, &manifest, &split, cfg.eval.split)?;
    let scores = score_pairs(&net, &store, &pairs, &bank)?;
    let labels: Vec<u8> = pairs.pairs.iter().map(|p| p.label).collect();
    let e = &cfg.eval;
    let report = verification_report(
        &scores,
        &labels,
        e.threshold,
        e.n_boot,
        derive_seed(cfg.seed, &[seeds::BOOTSTRAP]),
    )?;
    let out = &cfg.output_dir;
    write(&out.join("verification_report.json"), report.to_json() + "\n")?;
    write(&out.join("verification_report.csv"), report.to_csv())?;
    write(&out.join("roc.csv"), roc_csv(&roc_curve(&scores, &labels)?))?;
    let mut csv = String::from("image_id_1,image_id_2,label,score\n");
    for (p, s) in pairs.pairs.iter().zip(&scores) {
        let _ = writeln!(csv, "{},{},{},{s}", p.image_id_1, p.image_id_2, p.label);
    }
    write(&out.join("scores.csv"), csv)?;
    let scored: Vec<ScoredPair> = pairs
        .pairs
        .iter()
        .zip(&scores)
        .map(|(p, &score)| ScoredPair {
            score,
            label: p.label,
            meta: pair_meta(&manifest, &p.image_id_1, &p.image_id_2, p.label),
        })
        .collect();
    for &binning in &e.binnings {
        let bins = tpr_by_bins(&scored, binning, e.threshold)?;
        let table: Vec<serde_json::Value> = bins
            .iter()
            .map(|(bin, stat)| {
                serde_json::json!({ "bin": bin.to_string(), "tpr": stat.tpr, "tp": stat.tp, "total": stat.total })
            })
            .collect();
        let name = serde_json::to_value(binning).expect("serializable");
        let name = name.as_str().expect("unit variant");
        write_json(
            &out.join(format!("bins_{name}.json")),
            &serde_json::json!({ "schema_version": crate::metrics::SCHEMA_VERSION, "binning": name, "threshold": e.threshold, "bins": table }),
        )?;
    }
    Ok(())
}

fn gallery(
    cfg: &RunConfig,
    net: &EmbeddingNet,
    store: &ParamStore,
    ckpt: &Checkpoint,
    manifest: &Manifest,
    resolution: usize,
) -> Result<(GalleryIndex, Manifest, ImageBank)> {
    let (manifest, bank) = load_images(cfg, manifest, resolution)?;
    let entries = embed_manifest(net, store, &manifest, &bank)?;
    Ok((GalleryIndex::new(ckpt.header.spec_id.clone(), resolution as u32, entries)?, manifest, bank))
}

fn task_eval_reid(cfg: &RunConfig) -> Result<()> {
    let (net, store, ckpt) = embedding_model(cfg.model.checkpoint.as_deref().expect("validated"))?;
    let manifest = load_manifest(cfg)?;
    let split = load_split(cfg, &manifest)?;
    let subset = split.subset(&manifest, cfg.eval.split);
    let (index, _, _) = gallery(cfg, &net, &store, &ckpt, &subset, ckpt.header.resolution)?;
    let report = retrieval_report(&leave_one_out(index.entries()))?;
    write(&cfg.output_dir.join("retrieval_report.json"), report.to_json() + "\n")?;
    write(&cfg.output_dir.join("retrieval_report.csv"), report.to_csv())
}

fn attack_at(
    cfg: &RunConfig,
    net: &EmbeddingNet,
    store: &ParamStore,
    ckpt: &Checkpoint,
    gallery_manifest: &Manifest,
    queries: &Manifest,
    resolution: usize,
) -> Result<(AttackReport, GalleryIndex)> {
    let (index, _, _) = gallery(cfg, net, store, ckpt, gallery_manifest, resolution)?;
    let (queries, bank) = load_images(cfg, queries, resolution)?;
    let by_id: HashMap<&str, usize> = index
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (e.image_id.as_str(), i))
        .collect();
    let lists = queries
        .records()
        .iter()
        .map(|r| {
            let emb = match by_id.get(r.image_id.as_str()) {
                Some(&i) => index.entries()[i].embedding.clone(),
                None => net.embed(store, bank.get(&r.image_id)?)?,
            };
            Ok(rank_query(&r.image_id, &r.patient_id, &emb, &index, cfg.attack.exclude_self))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((report_from_lists(&index, &lists, cfg.attack.top_k)?, index))
}

fn task_attack(cfg: &RunConfig) -> Result<()> {
    let (net, store, ckpt) = embedding_model(cfg.model.checkpoint.as_deref().expect("validated"))?;
    let manifest = load_manifest(cfg)?;
    let split = load_split(cfg, &manifest)?;
    let a = &cfg.attack;
    let gallery_manifest = split.subset(&manifest, a.gallery_split);
    let queries = split.subset(&manifest, a.query_split);
    let out = &cfg.output_dir;
    let (report, index) = attack_at(cfg, &net, &store, &ckpt, &gallery_manifest, &queries, ckpt.header.resolution)?;
    index.save(&out.join("index.bin"))?;
    write(&out.join("attack_report.json"), report.to_json() + "\n")?;
    write(&out.join("per_query.csv"), report.per_query_csv())?;
    for &res in &a.resolutions {
        let (report, _) = attack_at(cfg, &net, &store, &ckpt, &gallery_manifest, &queries, res)?;
        write(&out.join(format!("attack_report_{res}.json")), report.to_json() + "\n")?;
        write(&out.join(format!("per_query_{res}.csv")), report.per_query_csv())?;
    }
    if let Some(path) = &a.verification_checkpoint {
        let (vnet, vstore, vres) = verification_model(path)?;
        let (gm, gbank) = load_images(cfg, &gallery_manifest, vres)?;
        let (qm, qbank) = load_images(cfg, &queries, vres)?;
        let patient_of = gm.patient_of();
        let gallery: Vec<(&str, &crate::Tensor3)> = gm
            .records()
            .iter()
            .map(|r| Ok((r.image_id.as_str(), gbank.get(&r.image_id)?)))
            .collect::<Result<_>>()?;
        let mut csv = String::from("query_id,image_id,score,same_patient\n");
        for q in qm.records() {
            let x = qbank.get(&q.image_id)?;
            let claims = verification_sweep(x, &gallery, |a, b| vnet.forward(&vstore, a, b), a.threshold)?;
            for c in claims {
                let same = patient_of.get(c.image_id.as_str()) == Some(&q.patient_id.as_str());
                let _ = writeln!(csv, "{},{},{},{}", q.image_id, c.image_id, c.score, same);
            }
        }
        write(&out.join("verification_claims.csv"), csv)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Explained {
    image_id_1: String,
    image_id_2: String,
    label: u8,
    score: f64,
    layer: String,
    map_1: String,
    map_2: String,
}

fn task_explain(cfg: &RunConfig) -> Result<()> {
    let (net, store, resolution) = verification_model(cfg.model.checkpoint.as_deref().expect("validated"))?;
    let layer = match &cfg.explain.layer {
        Some(l) => l.clone(),
        None => net.trunk().spec().layer_ids().last().expect("non-empty trunk").clone(),
    };
    let manifest = load_manifest(cfg)?;
    let split = load_split(cfg, &manifest)?;
    let subset = split.subset(&manifest, cfg.explain.split);
    let (subset, bank) = load_images(cfg, &subset, resolution)?;
    let pairs = balanced_eval_pairs(&subset, derive_seed(cfg.seed, &[seeds::EVAL_PAIRS, cfg.explain.split as u64]))?;
    let dir = cfg.output_dir.join("maps");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::new();
    for (i, p) in pairs.pairs.iter().take(cfg.explain.pairs).enumerate() {
        let (x1, x2) = (bank.get(&p.image_id_1)?, bank.get(&p.image_id_2)?);
        let score = net.forward(&store, x1, x2)?;
        let (m1, m2) = grad_cam(&net, &store, x1, x2, &layer)?;
        let names = [format!("pair_{i:03}_a.png"), format!("pair_{i:03}_b.png")];
        m1.save_png(&dir.join(&names[0]))?;
        m2.save_png(&dir.join(&names[1]))?;
        out.push(Explained {
            image_id_1: p.image_id_1.clone(),
            image_id_2: p.image_id_2.clone(),
            label: p.label,
            score,
            layer: layer.clone(),
            map_1: format!("maps/{}", names[0]),
            map_2: format!("maps/{}", names[1]),
        });
    }
    write_json(&cfg.output_dir.join("explain.json"), &out)
}

pub(super) fn dispatch(cfg: &RunConfig) -> Result<()> {
    match cfg.task {
        Task::Split => task_split(cfg),
        Task::Mine => task_mine(cfg),
        Task::Synth => task_synth(cfg),
        Task::TrainVerif => task_train_verif(cfg),
        Task::TrainReid => task_train_reid(cfg),
        Task::EvalVerif => task_eval_verif(cfg),
        Task::EvalReid => task_eval_reid(cfg),
        Task::Attack => task_attack(cfg),
        Task::Explain => task_explain(cfg),
    }
}

pub(super) fn output_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}
