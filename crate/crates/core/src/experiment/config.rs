//! Run configuration: a sectioned TOML document, fully defaulted and
//! validated with every problem reported at once.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::catalog::{PreprocessSpec, Split};
use crate::error::{Error, Result};
use crate::metrics::Binning;
use crate::mining::MiningMode;
use crate::nn::{registered_trunks, trunk_spec, EmbeddingNetSpec, VerificationNetSpec};
use crate::synthetic::SyntheticSpec;
use crate::train::{Monitor, ReidTrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Split,
    Mine,
    Synth,
    TrainVerif,
    TrainReid,
    EvalVerif,
    EvalReid,
    Attack,
    Explain,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Split,
        Task::Mine,
        Task::Synth,
        Task::TrainVerif,
        Task::TrainReid,
        Task::EvalVerif,
        Task::EvalReid,
        Task::Attack,
        Task::Explain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Split => "split",
            Task::Mine => "mine",
            Task::Synth => "synth",
            Task::TrainVerif => "train-verif",
            Task::TrainReid => "train-reid",
            Task::EvalVerif => "eval-verif",
            Task::EvalReid => "eval-reid",
            Task::Attack => "attack",
            Task::Explain => "explain",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
            Error::Config(vec![format!("unknown task `{s}`{}", suggestion(s, &names))])
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Procedural identities from the `[synth]` section, kept in memory.
    #[default]
    Synthetic,
    /// A ChestX-ray14-style manifest CSV and image directory.
    Manifest,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Imagenet,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Default `synthetic`.
    pub source: DataSource,
    /// Manifest CSV, required when `source = "manifest"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Image directory; default `images/` next to the manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
    /// Existing `patient_id,split` file; default is a fresh seeded split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_file: Option<PathBuf>,
    /// Image fractions of train/val/test, default 0.6/0.2/0.2.
    pub split_fractions: [f64; 3],
    /// Network input side, default 32.
    pub resolution: usize,
    /// Default `imagenet`.
    pub normalization: Normalization,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            manifest: None,
            image_root: None,
            split_file: None,
            split_fractions: [0.6, 0.2, 0.2],
            resolution: 32,
            normalization: Normalization::Imagenet,
        }
    }
}

impl DataConfig {
    pub fn preprocess(&self, resolution: usize) -> PreprocessSpec {
        match self.normalization {
            Normalization::Imagenet => PreprocessSpec::new(resolution),
            Normalization::None => PreprocessSpec::identity_normalization(resolution),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Registered trunk name, default `tiny`.
    pub trunk: String,
    /// Verification pooling grid side, default 8.
    pub pool_grid: usize,
    /// Embedding-head pooling grid side, default 5.
    pub pool_size: usize,
    /// Embedding-head 1×1 convolution width, default 100.
    pub reduce_channels: usize,
    /// Embedding-head hidden width, default 512.
    pub hidden: usize,
    /// Trained checkpoint for the eval, attack and explain tasks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            trunk: "tiny".into(),
            pool_grid: 8,
            pool_size: 5,
            reduce_channels: 100,
            hidden: 512,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    /// `FTS` or `RNP`, default `RNP`.
    pub mode: MiningMode,
    /// Balanced training pairs per epoch; 0 (default) uses every positive
    /// pair once plus as many negatives.
    pub target_size: usize,
    /// Pair CSV scored by `eval-verif` instead of fresh balanced pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs_file: Option<PathBuf>,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection {
            mode: MiningMode::RNP,
            target_size: 0,
            pairs_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifSection {
    /// Adam step size, default 1e-3.
    pub learning_rate: f64,
    /// Default 32.
    pub batch_size: usize,
    /// Default 5.
    pub patience: usize,
    /// Default 100.
    pub max_epochs: usize,
    /// `val_loss` (default) or `val_auc`.
    pub monitor: Monitor,
    /// Train only the layers after the trunk; default false.
    pub freeze_trunk: bool,
}

impl Default for VerifSection {
    fn default() -> Self {
        VerifSection {
            learning_rate: 1e-3,
            batch_size: 32,
            patience: 5,
            max_epochs: 100,
            monitor: Monitor::ValLoss,
            freeze_trunk: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReidSection {
    /// Default 0.0063.
    pub lr_lower: f64,
    /// Default 0.1584.
    pub lr_upper: f64,
    /// Default 1e-5.
    pub weight_decay: f64,
    /// Default 1.
    pub margin: f64,
    /// Default 30.
    pub phase1_epochs: usize,
    /// Default 50.
    pub phase2_epochs: usize,
    /// Default 32.
    pub batch_size: usize,
    /// Default 128.
    pub memory_capacity: usize,
}

impl Default for ReidSection {
    fn default() -> Self {
        let d = ReidTrainConfig::default();
        ReidSection {
            lr_lower: d.lr_lower,
            lr_upper: d.lr_upper,
            weight_decay: d.weight_decay,
            margin: d.margin,
            phase1_epochs: d.phase1_epochs,
            phase2_epochs: d.phase2_epochs,
            batch_size: d.batch_size,
            memory_capacity: d.memory_capacity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Split evaluated, default `test`.
    pub split: Split,
    /// Decision threshold, default 0.5.
    pub threshold: f64,
    /// Bootstrap replicates, default 10000.
    pub n_boot: usize,
    /// Robustness binnings reported by `eval-verif`; default all three.
    pub binnings: Vec<Binning>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: Split::Test,
            threshold: 0.5,
            n_boot: 10_000,
            binnings: vec![Binning::AgeDiff, Binning::Abnormality, Binning::View],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Split whose images form the gallery, default `test`.
    pub gallery_split: Split,
    /// Split whose images are the queries, default `test`.
    pub query_split: Split,
    /// Drop the query image from its own ranking, default true.
    pub exclude_self: bool,
    /// Ranked entries kept per query in the report, default 10.
    pub top_k: usize,
    /// Extra evaluation resolutions, each reported separately; default none.
    pub resolutions: Vec<usize>,
    /// Verification checkpoint for the threshold sweep; default none.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification_checkpoint: Option<PathBuf>,
    /// Verification threshold, default 0.5.
    pub threshold: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            gallery_split: Split::Test,
            query_split: Split::Test,
            exclude_self: true,
            top_k: 10,
            resolutions: Vec::new(),
            verification_checkpoint: None,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Trunk layer id; default the last one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    /// Number of pairs explained, default 4.
    pub pairs: usize,
    /// Split the pairs come from, default `test`.
    pub split: Split,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            layer: None,
            pairs: 4,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Base seed of splitting, mining, initialization and bootstrap;
    /// default 0.
    #[serde(default)]
    pub seed: u64,
    /// Default `runs/<task>`.
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub synth: SyntheticSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mining: MiningSection,
    #[serde(default)]
    pub verif: VerifSection,
    #[serde(default)]
    pub reid: ReidSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub explain: ExplainSection,
}

impl RunConfig {
    /// Pure defaults for `task`.
    pub fn defaults(task: Task) -> Self {
        RunConfig {
            task,
            seed: 0,
            output_dir: default_output_dir(task),
            data: DataConfig::default(),
            synth: SyntheticSpec::default(),
            model: ModelConfig::default(),
            mining: MiningSection::default(),
            verif: VerifSection::default(),
            reid: ReidSection::default(),
            eval: EvalSection::default(),
            attack: AttackSection::default(),
            explain: ExplainSection::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn verification_spec(&self) -> Result<VerificationNetSpec> {
        Ok(VerificationNetSpec {
            trunk: trunk_spec(&self.model.trunk)?,
            pool_grid: self.model.pool_grid,
            input_resolution: self.data.resolution,
        })
    }

    pub fn embedding_spec(&self) -> Result<EmbeddingNetSpec> {
        Ok(EmbeddingNetSpec {
            trunk: trunk_spec(&self.model.trunk)?,
            pool_size: self.model.pool_size,
            reduce_channels: self.model.reduce_channels,
            hidden: self.model.hidden,
            input_resolution: self.data.resolution,
        })
    }

    pub fn reid_train_config(&self) -> ReidTrainConfig {
        let r = &self.reid;
        ReidTrainConfig {
            lr_lower: r.lr_lower,
            lr_upper: r.lr_upper,
            weight_decay: r.weight_decay,
            margin: r.margin,
            phase1_epochs: r.phase1_epochs,
            phase2_epochs: r.phase2_epochs,
            batch_size: r.batch_size,
            memory_capacity: r.memory_capacity,
            seed: self.seed,
            checkpoint_dir: Some(self.output_dir.join("checkpoints")),
        }
    }
}

fn default_output_dir(task: Task) -> PathBuf {
    PathBuf::from("runs").join(task.name())
}

/// Every accepted key, by section (`""` is the top level).
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["task", "seed", "output_dir"]),
    (
        "data",
        &["source", "manifest", "image_root", "split_file", "split_fractions", "resolution", "normalization"],
    ),
    (
        "synth",
        &[
            "n_identities",
            "images_min",
            "images_max",
            "resolution",
            "components",
            "max_frequency",
            "template_weight",
            "rotation_deg",
            "scale_min",
            "scale_max",
            "translate",
            "intensity_shift",
            "noise_sigma",
            "seed",
        ],
    ),
    ("model", &["trunk", "pool_grid", "pool_size", "reduce_channels", "hidden", "checkpoint"]),
    ("mining", &["mode", "target_size", "pairs_file"]),
    ("verif", &["learning_rate", "batch_size", "patience", "max_epochs", "monitor", "freeze_trunk"]),
    (
        "reid",
        &[
            "lr_lower",
            "lr_upper",
            "weight_decay",
            "margin",
            "phase1_epochs",
            "phase2_epochs",
            "batch_size",
            "memory_capacity",
        ],
    ),
    ("eval", &["split", "threshold", "n_boot", "binnings"]),
    (
        "attack",
        &[
            "gallery_split",
            "query_split",
            "exclude_self",
            "top_k",
            "resolutions",
            "verification_checkpoint",
            "threshold",
        ],
    ),
    ("explain", &["layer", "pairs", "split"]),
];

/// Every dotted key (`section.key`, or `key` at the top level).
pub fn known_keys() -> Vec<String> {
    SCHEMA
        .iter()
        .flat_map(|(section, keys)| {
            keys.iter().map(move |k| {
                if section.is_empty() {
                    (*k).to_owned()
                } else {
                    format!("{section}.{k}")
                }
            })
        })
        .collect()
}

fn suggestion(word: &str, candidates: &[&str]) -> String {
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(word, c), *c))
        .filter(|(score, _)| *score > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| format!(" (did you mean `{c}`?)"))
        .unwrap_or_default()
}

fn unknown_keys(table: &Table, errors: &mut Vec<String>) {
    let known = known_keys();
    let known_refs: Vec<&str> = known.iter().map(String::as_str).collect();
    let sections: Vec<&str> = SCHEMA.iter().map(|s| s.0).filter(|s| !s.is_empty()).collect();
    for (key, value) in table {
        match value {
            Value::Table(inner) if sections.contains(&key.as_str()) => {
                for k in inner.keys() {
                    let dotted = format!("{key}.{k}");
                    if !known.contains(&dotted) {
                        errors.push(format!("unknown key `{dotted}`{}", suggestion(&dotted, &known_refs)));
                    }
                }
            }
            Value::Table(_) => errors.push(format!("unknown section `[{key}]`{}", suggestion(key, &sections))),
            _ if sections.contains(&key.as_str()) => errors.push(format!("`{key}` must be a section")),
            _ if !known.contains(key) => errors.push(format!("unknown key `{key}`{}", suggestion(key, &known_refs))),
            _ => {}
        }
    }
}

fn section<T>(table: &Table, name: &str, errors: &mut Vec<String>) -> T
where
    T: Default + serde::de::DeserializeOwned,
{
    let Some(Value::Table(inner)) = table.get(name) else {
        return T::default();
    };
    let mut out = T::default();
    // Fields are checked one at a time so that every bad value is listed.
    let mut good = Table::new();
    for (k, v) in inner {
        let mut probe = Table::new();
        probe.insert(k.clone(), v.clone());
        match Value::Table(probe).try_into::<T>() {
            Ok(_) => {
                good.insert(k.clone(), v.clone());
            }
            Err(e) if e.message().contains("unknown field") => {}
            Err(e) => errors.push(format!("`{name}.{k}`: {}", e.message().trim())),
        }
    }
    if let Ok(parsed) = Value::Table(good).try_into::<T>() {
        out = parsed;
    }
    out
}

/// Parses and validates a config document. `cli_task`, when given, is the
/// task named on the command line; the document may omit `task` then.
pub fn validate_config(text: &str, cli_task: Option<Task>) -> Result<RunConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("not valid TOML: {}", e.message())]))?;
    let mut errors = Vec::new();
    unknown_keys(&table, &mut errors);

    let file_task = match table.get("task") {
        None => None,
        Some(Value::String(s)) => match s.parse::<Task>() {
            Ok(t) => Some(t),
            Err(Error::Config(mut e)) => {
                errors.append(&mut e);
                None
            }
            Err(e) => return Err(e),
        },
        Some(other) => {
            errors.push(format!("`task` must be a string, got {}", other.type_str()));
            None
        }
    };
    let task = match (cli_task, file_task) {
        (Some(c), Some(f)) if c != f => {
            errors.push(format!("config names task `{f}` but `{c}` was requested"));
            Some(c)
        }
        (Some(c), _) => Some(c),
        (None, f) => f,
    };
    let Some(task) = task else {
        errors.push("`task` is required".to_owned());
        return Err(Error::Config(errors));
    };

    let mut config = RunConfig::defaults(task);
    match table.get("seed") {
        None => {}
        Some(Value::Integer(s)) if *s >= 0 => config.seed = *s as u64,
        Some(v) => errors.push(format!("`seed` must be a non-negative integer, got {v}")),
    }
    match table.get("output_dir") {
        None => {}
        Some(Value::String(s)) if !s.is_empty() => config.output_dir = PathBuf::from(s),
        Some(v) => errors.push(format!("`output_dir` must be a non-empty string, got {v}")),
    }
    config.data = section(&table, "data", &mut errors);
    config.synth = section(&table, "synth", &mut errors);
    config.model = section(&table, "model", &mut errors);
    config.mining = section(&table, "mining", &mut errors);
    config.verif = section(&table, "verif", &mut errors);
    config.reid = section(&table, "reid", &mut errors);
    config.eval = section(&table, "eval", &mut errors);
    config.attack = section(&table, "attack", &mut errors);
    config.explain = section(&table, "explain", &mut errors);

    semantic_checks(&config, &mut errors);
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(errors))
    }
}

fn semantic_checks(c: &RunConfig, errors: &mut Vec<String>) {
    let mut bad = |cond: bool, msg: String| {
        if cond {
            errors.push(msg);
        }
    };
    let d = &c.data;
    bad(
        d.source == DataSource::Manifest && d.manifest.is_none() && c.task != Task::Synth,
        "`data.manifest` is required when `data.source = \"manifest\"`".into(),
    );
    let total: f64 = d.split_fractions.iter().sum();
    bad(
        d.split_fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9,
        format!("`data.split_fractions` must be non-negative and sum to 1, got {:?}", d.split_fractions),
    );
    bad(d.resolution < 8, format!("`data.resolution` must be at least 8, got {}", d.resolution));
    if let Err(Error::Config(mut e)) = c.synth.validate() {
        for m in e.iter_mut() {
            *m = format!("[synth] {m}");
        }
        errors.append(&mut e);
    }
    let mut bad = |cond: bool, msg: String| {
        if cond {
            errors.push(msg);
        }
    };
    let m = &c.model;
    let trunks = registered_trunks();
    bad(
        !trunks.contains(&m.trunk.as_str()),
        format!(
            "`model.trunk`: unknown trunk `{}` (registered: {}){}",
            m.trunk,
            trunks.join(", "),
            suggestion(&m.trunk, trunks)
        ),
    );
    bad(m.pool_grid == 0, "`model.pool_grid` must be positive".into());
    bad(m.pool_size == 0, "`model.pool_size` must be positive".into());
    bad(m.reduce_channels == 0, "`model.reduce_channels` must be positive".into());
    bad(m.hidden == 0, "`model.hidden` must be positive".into());
    bad(
        matches!(c.task, Task::EvalVerif | Task::EvalReid | Task::Attack | Task::Explain) && m.checkpoint.is_none(),
        format!("`model.checkpoint` is required for task `{}`", c.task),
    );
    bad(c.mining.target_size % 2 != 0, "`mining.target_size` must be even".into());
    let v = &c.verif;
    bad(
        !(v.learning_rate > 0.0 && v.learning_rate.is_finite()),
        "`verif.learning_rate` must be positive".into(),
    );
    bad(v.batch_size < 2, "`verif.batch_size` must be at least 2".into());
    bad(v.patience < 1, "`verif.patience` must be at least 1".into());
    bad(v.max_epochs < 1, "`verif.max_epochs` must be at least 1".into());
    let r = &c.reid;
    bad(
        !(r.lr_lower > 0.0 && r.lr_lower < r.lr_upper && r.lr_upper.is_finite()),
        "`reid.lr_lower` and `reid.lr_upper` must satisfy 0 < lower < upper".into(),
    );
    bad(!(r.margin > 0.0), "`reid.margin` must be positive".into());
    bad(!(r.weight_decay >= 0.0), "`reid.weight_decay` must be non-negative".into());
    bad(r.batch_size < 2, "`reid.batch_size` must be at least 2".into());
    bad(r.phase1_epochs + r.phase2_epochs == 0, "`reid` needs at least one epoch".into());
    bad(c.eval.n_boot == 0, "`eval.n_boot` must be positive".into());
    bad(
        !(0.0..=1.0).contains(&c.eval.threshold),
        "`eval.threshold` must lie in [0, 1]".into(),
    );
    bad(
        !(0.0..=1.0).contains(&c.attack.threshold),
        "`attack.threshold` must lie in [0, 1]".into(),
    );
    bad(c.attack.top_k == 0, "`attack.top_k` must be positive".into());
    bad(
        c.attack.resolutions.iter().any(|&r| r < 8),
        "`attack.resolutions` entries must be at least 8".into(),
    );
    bad(c.explain.pairs == 0, "`explain.pairs` must be positive".into());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str) -> Vec<String> {
        match validate_config(text, None) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_needs_a_task() {
        assert_eq!(errors(""), vec!["`task` is required"]);
        let c = validate_config("", Some(Task::Split)).unwrap();
        assert_eq!(c, RunConfig::defaults(Task::Split));
    }

    #[test]
    fn misspelled_key_names_nearest() {
        let e = errors("task = \"split\"\n[verif]\nlearning_rat = 0.1\n");
        assert_eq!(e.len(), 1);
        assert!(e[0].contains("verif.learning_rat") && e[0].contains("verif.learning_rate"), "{e:?}");
    }

    #[test]
    fn all_problems_reported() {
        let e = errors("task = \"train-verif\"\nbogus = 1\n[verif]\nbatch_size = \"x\"\npatience = 0\n[reid]\nmargin = -1.0\n");
        assert_eq!(e.len(), 4, "{e:?}");
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let mut c = RunConfig::defaults(Task::Attack);
        c.model.checkpoint = Some("m.ckpt".into());
        c.attack.resolutions = vec![64, 32];
        c.verif.learning_rate = 1e-4;
        let text = c.to_toml();
        let back = validate_config(&text, None).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn schema_covers_every_serialized_key() {
        let mut c = RunConfig::defaults(Task::Split);
        c.data.manifest = Some("a".into());
        c.data.image_root = Some("a".into());
        c.data.split_file = Some("a".into());
        c.model.checkpoint = Some("a".into());
        c.mining.pairs_file = Some("a".into());
        c.attack.verification_checkpoint = Some("a".into());
        c.explain.layer = Some("conv1".into());
        let table: Table = c.to_toml().parse().unwrap();
        let mut found = Vec::new();
        for (k, v) in &table {
            match v {
                Value::Table(t) => found.extend(t.keys().map(|i| format!("{k}.{i}"))),
                _ => found.push(k.clone()),
            }
        }
        found.sort();
        let mut known = known_keys();
        known.sort();
        assert_eq!(found, known);
    }

    #[test]
    fn command_line_task_conflict() {
        let e = validate_config("task = \"split\"", Some(Task::Mine)).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }
}
