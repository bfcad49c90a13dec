//! Config loading and the phase commands behind the `bond` binary.
//!
//! Every phase reads its inputs from and writes its outputs to the run's
//! output directory, so phases can be run one by one or chained by
//! [`cmd_pipeline`]. All files except `manifest.json` are a pure function of
//! the config and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{read_conll, write_conll, Corpus, LabelSchema, LabelSequence, Layer};
use crate::distant::{
    generate_distant_labels, load_gazetteer_dir, load_stamp_rules, match_report, DistantLabeler,
    KnowledgeSource,
};
use crate::error::{Error, Result};
use crate::eval::{entity_prf, token_confusion, Metrics};
use crate::optim::AdamConfig;
use crate::stage1::{stage1_log_csv, train_stage1, DevSet, LabeledSet, Stage1Config};
use crate::stage2::{stage2_log_csv, train_stage2, Stage2Config};
use crate::tagger::{
    encode_checkpoint, featurize_corpus, init_params, predict_labels, read_checkpoint,
    FeatureConfig, FeatureVector, ModelParams,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

const PRESETS: [(&str, &str); 5] = [
    ("conll03", include_str!("../presets/conll03.json")),
    ("tweet", include_str!("../presets/tweet.json")),
    ("ontonotes5", include_str!("../presets/ontonotes5.json")),
    ("webpage", include_str!("../presets/webpage.json")),
    ("wikigold", include_str!("../presets/wikigold.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Result<Value> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown preset {name:?}; available: {}",
                preset_names().collect::<Vec<_>>().join(", ")
            ))
        })?;
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Training corpus; a gold column, if present, is only used for reports.
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Directory of `<TYPE>.txt` gazetteers.
    pub gazetteers: PathBuf,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub entity_types: Vec<String>,
    /// Seeds model initialisation and both stages' minibatch order. Any
    /// `seed` inside `stage1`/`stage2` is replaced by a value derived from it.
    pub seed: u64,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub stage2: Stage2Config,
}

/// Deep-merges `overlay` into `base`; overlay values win.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub preset: Option<String>,
}

impl PipelineConfig {
    /// Parses JSON, overlays the preset, applies overrides and checks the
    /// result. Relative paths are taken relative to `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path, overrides: &Overrides) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        if let Some(name) = &overrides.preset {
            merge(&mut value, preset(name)?);
        }
        if let Some(seed) = overrides.seed {
            merge(&mut value, serde_json::json!({ "seed": seed }));
        }
        let mut cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.resolve(base_dir);
        // --out is relative to the working directory, not the config file.
        if let Some(out) = &overrides.out {
            cfg.paths.output = out.clone();
        }
        cfg.stage1.seed = cfg.seed.wrapping_add(1);
        cfg.stage2.seed = cfg.seed.wrapping_add(2);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base, overrides)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.train);
        fix(&mut p.gazetteers);
        fix(&mut p.output);
        for q in [&mut p.dev, &mut p.test, &mut p.rules].into_iter().flatten() {
            fix(q);
        }
    }

    fn validate(&self) -> Result<()> {
        let p = &self.paths;
        let mut files = vec![("train", &p.train)];
        for (name, q) in [("dev", &p.dev), ("test", &p.test), ("rules", &p.rules)] {
            if let Some(q) = q {
                files.push((name, q));
            }
        }
        for (name, f) in files {
            if !f.is_file() {
                return Err(Error::Config(format!("{name} file {} not found", f.display())));
            }
        }
        if !p.gazetteers.is_dir() {
            return Err(Error::Config(format!(
                "gazetteer directory {} not found",
                p.gazetteers.display()
            )));
        }
        self.schema()?;
        self.features.validate()?;
        self.optimizer.validate()?;
        self.stage2.validate()
    }

    pub fn schema(&self) -> Result<LabelSchema> {
        LabelSchema::new(self.entity_types.iter().map(String::as_str))
    }

    /// SHA-256 of the effective config, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.output.join(name)
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn labeler(cfg: &PipelineConfig, schema: &LabelSchema) -> Result<DistantLabeler> {
    let gaz = load_gazetteer_dir(&cfg.paths.gazetteers, schema)?;
    let rules = match &cfg.paths.rules {
        Some(p) => load_stamp_rules(p, schema)?,
        None => Vec::new(),
    };
    let sources: [&dyn KnowledgeSource; 1] = [&gaz];
    Ok(DistantLabeler::new(schema.clone(), &sources, rules))
}

/// Names of the files each phase writes under the output directory.
pub mod files {
    pub const DISTANT: &str = "train.distant.conll";
    pub const MATCH_REPORT: &str = "match_report.json";
    pub const STAGE1_CKPT: &str = "stage1.ckpt";
    pub const STAGE1_LOG: &str = "stage1_log.csv";
    pub const STAGE2_CKPT: &str = "bond.ckpt";
    pub const STAGE2_LOG: &str = "stage2_log.csv";
    pub const SUMMARY: &str = "summary.txt";
    pub const SUMMARY_JSON: &str = "summary.json";
    pub const MANIFEST: &str = "manifest.json";
}

/// Distant-labels the training corpus. Returns the match report when the
/// corpus carries gold labels.
pub fn cmd_label(cfg: &PipelineConfig) -> Result<Option<crate::distant::MatchReport>> {
    let schema = cfg.schema()?;
    let labeler = labeler(cfg, &schema)?;
    let train = read_conll(&cfg.paths.train, &schema, Layer::Gold)?;
    let labeled = generate_distant_labels(&train, &labeler)?;
    write_file(&cfg.out(files::DISTANT), write_conll(&labeled.corpus, Layer::Distant)?)?;
    if !labeled.corpus.has_layer(Layer::Gold) {
        info!("training corpus has no gold column; match report skipped");
        return Ok(None);
    }
    let report = match_report(&labeled.corpus, &labeled.ambiguous)?;
    write_file(&cfg.out(files::MATCH_REPORT), report.to_json())?;
    info!(
        "distant labels: entity F1 {:.4}, token precision {:.4}, token recall {:.4}",
        report.f1, report.token_precision, report.token_recall
    );
    Ok(Some(report))
}

fn gold_corpus(path: &Path, schema: &LabelSchema, what: &str) -> Result<Corpus> {
    let c = read_conll(path, schema, Layer::Gold)?;
    if !c.has_layer(Layer::Gold) {
        return Err(Error::Config(format!("{what} corpus {} has no gold labels", path.display())));
    }
    Ok(c)
}

struct DevData {
    features: Vec<Vec<FeatureVector>>,
    gold: Vec<LabelSequence>,
}

fn dev_data(cfg: &PipelineConfig, schema: &LabelSchema) -> Result<Option<DevData>> {
    let Some(path) = &cfg.paths.dev else {
        return Ok(None);
    };
    let c = read_conll(path, schema, Layer::Gold)?;
    if !c.has_layer(Layer::Gold) {
        info!("dev corpus has no gold labels; curves will not include dev F1");
        return Ok(None);
    }
    Ok(Some(DevData {
        features: featurize_corpus(&c, &cfg.features),
        gold: c.layer(Layer::Gold)?.to_vec(),
    }))
}

/// Initial parameters shared by Stage I and Stage II re-initialisation.
pub fn initial_model(cfg: &PipelineConfig) -> Result<ModelParams> {
    init_params(cfg.features.dim(), cfg.schema()?.num_labels(), cfg.seed)
}

pub struct Stage1Result {
    pub model: ModelParams,
    pub steps: u64,
}

/// Stage I on the distant-labelled corpus written by [`cmd_label`].
pub fn cmd_train(cfg: &PipelineConfig) -> Result<Stage1Result> {
    let schema = cfg.schema()?;
    let path = cfg.out(files::DISTANT);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "distant-labelled corpus {} not found; run `label` first",
            path.display()
        )));
    }
    let corpus = read_conll(&path, &schema, Layer::Distant)?;
    let labels = corpus.layer(Layer::Distant)?;
    let features = featurize_corpus(&corpus, &cfg.features);
    let dev = dev_data(cfg, &schema)?;
    let out = train_stage1(
        LabeledSet {
            features: &features,
            labels,
        },
        initial_model(cfg)?,
        &cfg.stage1,
        &cfg.optimizer,
        dev.as_ref().map(|d| DevSet {
            features: &d.features,
            gold: &d.gold,
            schema: &schema,
        }),
    )?;
    write_file(&cfg.out(files::STAGE1_CKPT), encode_checkpoint(&out.model, cfg.features.digest()))?;
    write_file(&cfg.out(files::STAGE1_LOG), stage1_log_csv(&out.log))?;
    info!("stage I: {} steps", out.steps);
    Ok(Stage1Result {
        model: out.model,
        steps: out.steps,
    })
}

/// Reads a checkpoint and checks it against the config's schema and
/// feature settings.
pub fn load_compatible(cfg: &PipelineConfig, path: &Path) -> Result<ModelParams> {
    let (header, params) = read_checkpoint(path)?;
    let classes = cfg.schema()?.num_labels() as u64;
    if header.dim != cfg.features.dim() as u64
        || header.classes != classes
        || header.feature_digest != cfg.features.digest()
    {
        return Err(Error::Config(format!(
            "checkpoint {} (dim {}, {} classes) does not match the config (dim {}, {classes} classes) or its feature settings",
            path.display(),
            header.dim,
            header.classes,
            cfg.features.dim()
        )));
    }
    Ok(params)
}

pub struct Stage2Result {
    pub model: ModelParams,
    pub teacher_updates: u64,
    pub student_steps: u64,
    pub student_updates: u64,
}

/// Stage II from `checkpoint` (default: the Stage I output). Training labels
/// are ignored.
pub fn cmd_selftrain(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<Stage2Result> {
    let schema = cfg.schema()?;
    let default = cfg.out(files::STAGE1_CKPT);
    let start = load_compatible(cfg, checkpoint.unwrap_or(&default))?;
    let train = read_conll(&cfg.paths.train, &schema, Layer::Gold)?;
    let features = featurize_corpus(&train, &cfg.features);
    let dev = dev_data(cfg, &schema)?;
    let out = train_stage2(
        &features,
        start,
        initial_model(cfg)?,
        &cfg.stage2,
        &cfg.optimizer,
        dev.as_ref().map(|d| DevSet {
            features: &d.features,
            gold: &d.gold,
            schema: &schema,
        }),
    )?;
    write_file(&cfg.out(files::STAGE2_CKPT), encode_checkpoint(&out.student, cfg.features.digest()))?;
    write_file(&cfg.out(files::STAGE2_LOG), stage2_log_csv(&out.log))?;
    info!(
        "stage II: {} teacher updates, {} student updates",
        out.teacher_updates, out.student_updates
    );
    Ok(Stage2Result {
        model: out.student,
        teacher_updates: out.teacher_updates,
        student_steps: out.student_steps,
        student_updates: out.student_updates,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("eval")
        .to_string()
}

/// Scores `checkpoint` (default: the Stage II output) on `corpus` (default:
/// the test corpus) and writes `<name>.metrics.json` and
/// `<name>.confusion.csv`.
pub fn cmd_eval(cfg: &PipelineConfig, checkpoint: Option<&Path>, corpus: Option<&Path>) -> Result<Metrics> {
    let schema = cfg.schema()?;
    let default_ckpt = cfg.out(files::STAGE2_CKPT);
    let ckpt = checkpoint.unwrap_or(&default_ckpt);
    let path = corpus
        .or(cfg.paths.test.as_deref())
        .ok_or_else(|| Error::Config("no evaluation corpus: pass --corpus or set paths.test".into()))?;
    let model = load_compatible(cfg, ckpt)?;
    let test = gold_corpus(path, &schema, "evaluation")?;
    let gold = test.layer(Layer::Gold)?;
    let pred = predict_labels(&model, &featurize_corpus(&test, &cfg.features), &schema)?;
    let metrics = entity_prf(gold, &pred, &schema)?;
    let name = format!("{}.{}", file_stem(ckpt), file_stem(path));
    write_file(&cfg.out(&format!("{name}.metrics.json")), metrics.to_json())?;
    write_file(
        &cfg.out(&format!("{name}.confusion.csv")),
        token_confusion(gold, &pred, &schema)?.to_csv(&schema),
    )?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// `(method, metrics)` for KB Matching, Stage I and BOND.
    pub rows: Vec<(String, Metrics)>,
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = String::from("method       F1 (P/R)\n");
        for (name, m) in &self.rows {
            let _ = writeln!(s, "{name:<12} {}", m.summary_line());
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n");
        for (i, (name, m)) in self.rows.iter().enumerate() {
            let _ = write!(
                s,
                "  {}: {{\"precision\": {:.6}, \"recall\": {:.6}, \"f1\": {:.6}}}",
                serde_json::to_string(name).expect("string"),
                m.precision,
                m.recall,
                m.f1
            );
            s.push_str(if i + 1 < self.rows.len() { ",\n" } else { "\n" });
        }
        s.push_str("}\n");
        s
    }
}

fn write_manifest(cfg: &PipelineConfig) -> Result<()> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": secs,
        "config": cfg,
    });
    write_file(
        &cfg.out(files::MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )
}

/// label → train → selftrain → eval on the test corpus, with a summary of
/// the distant labels, Stage I and the final model.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<Summary> {
    let schema = cfg.schema()?;
    let test_path = cfg
        .paths
        .test
        .clone()
        .ok_or_else(|| Error::Config("pipeline needs paths.test".into()))?;
    let test = gold_corpus(&test_path, &schema, "test")?;
    write_manifest(cfg)?;

    cmd_label(cfg)?;
    cmd_train(cfg)?;
    cmd_selftrain(cfg, None)?;

    let gold = test.layer(Layer::Gold)?;
    let kb = generate_distant_labels(&test, &labeler(cfg, &schema)?)?;
    let kb_metrics = entity_prf(gold, kb.corpus.layer(Layer::Distant)?, &schema)?;
    write_file(&cfg.out("kb.test.metrics.json"), kb_metrics.to_json())?;
    let stage1_metrics = cmd_eval(cfg, Some(&cfg.out(files::STAGE1_CKPT)), Some(&test_path))?;
    let bond_metrics = cmd_eval(cfg, Some(&cfg.out(files::STAGE2_CKPT)), Some(&test_path))?;

    let summary = Summary {
        rows: vec![
            ("KB Matching".into(), kb_metrics),
            ("Stage I".into(), stage1_metrics),
            ("BOND".into(), bond_metrics),
        ],
    };
    write_file(&cfg.out(files::SUMMARY), summary.to_text())?;
    write_file(&cfg.out(files::SUMMARY_JSON), summary.to_json())?;
    Ok(summary)
}

/// Stage settings written by `demo`: the learning rate decays linearly to
/// zero over each stage's step budget.
pub fn demo_stages() -> (Stage1Config, Stage2Config) {
    let s1 = Stage1Config::default();
    let s1 = Stage1Config {
        lr_decay: s1.lr / s1.steps as f64,
        ..s1
    };
    let s2 = Stage2Config::default();
    let s2 = Stage2Config {
        lr_decay: s2.lr / s2.total_inner_steps() as f64,
        ..s2
    };
    (s1, s2)
}

/// Writes a synthetic dataset and a matching `config.json` into `dir`.
pub fn cmd_demo(dir: &Path, seed: u64, synth: &crate::synth::SynthConfig) -> Result<PathBuf> {
    let data = crate::synth::generate(&crate::synth::SynthConfig {
        seed,
        ..synth.clone()
    })?;
    crate::synth::write_dataset(&data, dir)?;
    let (stage1, stage2) = demo_stages();
    let config = serde_json::json!({
        "paths": {
            "train": "train.conll",
            "dev": "dev.conll",
            "test": "test.conll",
            "gazetteers": "gazetteers",
            "rules": "rules.tsv",
            "output": "out",
        },
        "entity_types": crate::synth::TYPES,
        "seed": seed,
        "features": FeatureConfig { hash_bits: 16, ..Default::default() },
        "stage1": stage1,
        "stage2": stage2,
    });
    let path = dir.join("config.json");
    write_file(&path, serde_json::to_string_pretty(&config)? + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_apply() {
        for name in preset_names() {
            let v = preset(name).unwrap();
            assert_eq!(v["stage2"]["epsilon"], 0.9);
        }
        assert!(preset("nope").is_err());
        let mut base = serde_json::json!({"stage1": {"steps": 5, "lr": 0.1}, "seed": 1});
        merge(&mut base, preset("conll03").unwrap());
        assert_eq!(base["stage1"]["steps"], 900);
        assert_eq!(base["seed"], 1);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
    }
}
