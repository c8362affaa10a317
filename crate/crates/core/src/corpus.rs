//! Instruction-tuning data model, line-delimited dataset files and the
//! curriculum configuration.
//!
//! Dataset files hold one JSON object per line:
//!
//! ```text
//! {"id":"qa-0","task":"QA","input":"...","output":"...","origin":"real","stage_created":0}
//! ```
//!
//! `id`, `origin` and `stage_created` are optional on input. Missing ids are
//! assigned as `line-<n>` (1-based line number).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line {line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: duplicate id {id:?} on line {line} (first seen on line {first})")]
    DuplicateId {
        path: PathBuf,
        id: String,
        line: usize,
        first: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("demo pool for task {task:?} has {available} instances, fewer than K = {k}")]
    PoolTooSmall {
        task: String,
        available: usize,
        k: usize,
    },
    #[error("invalid demo fraction {0}: must be in (0, 1]")]
    BadFraction(f64),
    #[error("invalid curriculum config: {0}")]
    Config(String),
}

/// Where an instance came from.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Real,
    SyntheticRaw,
    SyntheticRefined,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Real => "real",
            Origin::SyntheticRaw => "synthetic_raw",
            Origin::SyntheticRefined => "synthetic_refined",
        })
    }
}

/// One instruction-tuning example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub task: String,
    pub input: String,
    pub output: String,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default)]
    pub stage_created: u32,
}

impl Instance {
    pub fn real(
        id: impl Into<String>,
        task: impl Into<String>,
        input: impl Into<String>,
        output: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            task: task.into(),
            input: input.into(),
            output: output.into(),
            origin: Origin::Real,
            stage_created: 0,
        }
    }
}

/// On-disk record; `id` may be omitted.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: Option<String>,
    task: String,
    input: String,
    output: String,
    #[serde(default)]
    origin: Origin,
    #[serde(default)]
    stage_created: u32,
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<Instance>, CorpusError> {
    let mut out = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        })?;
        if rec.input.trim().is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: lineno,
                reason: "input is empty".into(),
            });
        }
        let id = rec.id.unwrap_or_else(|| format!("line-{lineno}"));
        if let Some(&first) = seen.get(&id) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                id,
                line: lineno,
                first,
            });
        }
        seen.insert(id.clone(), lineno);
        out.push(Instance {
            id,
            task: rec.task,
            input: rec.input,
            output: rec.output,
            origin: rec.origin,
            stage_created: rec.stage_created,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Instance>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, path)
}

/// Renders instances in the dataset format (one record per line, trailing newline).
pub fn render_dataset(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        // Serializing a plain struct of strings and integers cannot fail.
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(instances: &[Instance], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(render_dataset(instances).as_bytes())
        .map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// A task's splits plus its demonstration source.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskSpec {
    pub task: String,
    pub train: Vec<Instance>,
    pub eval: Vec<Instance>,
    /// Held-out instances never used for training; source of "new" demonstrations.
    pub held_out: Vec<Instance>,
    pub demo_pool: Vec<Instance>,
}

impl TaskSpec {
    pub fn new(task: impl Into<String>, train: Vec<Instance>, eval: Vec<Instance>) -> Self {
        Self {
            task: task.into(),
            train,
            eval,
            held_out: Vec::new(),
            demo_pool: Vec::new(),
        }
    }

    /// Checks that train, eval and held-out splits are pairwise disjoint by id.
    pub fn check_disjoint(&self) -> Result<(), CorpusError> {
        let train: HashSet<&str> = self.train.iter().map(|i| i.id.as_str()).collect();
        for (name, split) in [("eval", &self.eval), ("held_out", &self.held_out)] {
            if let Some(dup) = split.iter().find(|i| train.contains(i.id.as_str())) {
                return Err(CorpusError::Config(format!(
                    "task {:?}: id {:?} appears in both train and {name}",
                    self.task, dup.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    #[default]
    Train,
    New,
}

/// Half-up rounding of `ratio * n`, never below 1 when `ratio > 0`.
pub fn ratio_count(ratio: f64, n: usize) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    let raw = (ratio * n as f64 + 0.5).floor() as usize;
    raw.max(1)
}

/// Draws the task's demonstration pool.
///
/// The pool size is `max(k, round_half_up(fraction * |train|))`, clamped to the
/// size of the source split. A pool smaller than `k` is an error.
pub fn build_demo_pool(
    task: &TaskSpec,
    fraction: f64,
    source: DemoSource,
    k: usize,
    seed: u64,
) -> Result<Vec<Instance>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::BadFraction(fraction));
    }
    let wanted = ((fraction * task.train.len() as f64 + 0.5).floor() as usize).max(k);
    let from = match source {
        DemoSource::Train => &task.train,
        DemoSource::New => &task.held_out,
    };
    let size = wanted.min(from.len());
    if size < k || size == 0 {
        return Err(CorpusError::PoolTooSmall {
            task: task.task.clone(),
            available: from.len(),
            k,
        });
    }
    let mut idx: Vec<usize> = (0..from.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["demo_pool", &task.task]));
    idx.shuffle(&mut rng);
    idx.truncate(size);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| from[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    NonRehearsal,
    RandSel,
    KmeansSel,
    Ssr,
    Mtl,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "non_rehearsal" => Strategy::NonRehearsal,
            "rand_sel" => Strategy::RandSel,
            "kmeans_sel" => Strategy::KmeansSel,
            "ssr" => Strategy::Ssr,
            "mtl" => Strategy::Mtl,
            _ => return None,
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::NonRehearsal => "non_rehearsal",
            Strategy::RandSel => "rand_sel",
            Strategy::KmeansSel => "kmeans_sel",
            Strategy::Ssr => "ssr",
            Strategy::Mtl => "mtl",
        })
    }
}

/// How synthetic instances are reduced to the rehearsal budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Kmeans,
    Random,
    SupervisedKmeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DemoOutputs {
    #[default]
    Full,
    InputOnly,
}

/// What text of an instance is embedded for clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContentMode {
    InputOnly,
    #[default]
    InputAndOutput,
}

/// Parameters of the toy learner (see `toylab`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub decay: f64,
    pub sim_threshold: f64,
    pub strength_threshold: f64,
    /// `None` means 10 × total training instances of the curriculum.
    pub capacity: Option<usize>,
    pub dimension: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            decay: 0.5,
            sim_threshold: 0.8,
            strength_threshold: 0.4,
            capacity: None,
            dimension: crate::embed::DEFAULT_DIMENSION,
        }
    }
}

/// The ordered multi-stage plan and every knob of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub order: Vec<String>,
    pub strategy: Strategy,
    /// Rehearsal ratio for `rand_sel` / `kmeans_sel`.
    pub r: f64,
    /// Synthetic ratio for `ssr`.
    pub r_hat: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub demo_fraction: f64,
    pub oversample_factor: usize,
    /// Attempt budget multiplier on top of `target * oversample_factor`.
    pub attempt_factor: usize,
    pub seed: u64,
    pub refine: bool,
    pub selection: SelectionMode,
    pub demo_source: DemoSource,
    pub demo_outputs: DemoOutputs,
    /// Registry name of the backend used for in-context synthesis.
    pub icl_model: String,
    pub content_mode: ContentMode,
    pub embed_dimension: usize,
    /// Replace sampled real outputs with latest-model generations (rand_sel/kmeans_sel only).
    pub regenerate_outputs: bool,
    /// Evaluate every task at every stage instead of seen tasks plus the next one.
    pub full_matrix: bool,
    /// Record zero-shot scores of the untrained model as row 0.
    pub record_stage0: bool,
    pub synth_temperature: f64,
    pub toy: ToyConfig,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            order: Vec::new(),
            strategy: Strategy::Ssr,
            r: 0.01,
            r_hat: 0.10,
            k: 2,
            c: 20,
            demo_fraction: 0.01,
            oversample_factor: 3,
            attempt_factor: 2,
            seed: 0,
            refine: true,
            selection: SelectionMode::Kmeans,
            demo_source: DemoSource::Train,
            demo_outputs: DemoOutputs::Full,
            icl_model: "base".into(),
            content_mode: ContentMode::InputAndOutput,
            embed_dimension: crate::embed::DEFAULT_DIMENSION,
            regenerate_outputs: false,
            full_matrix: false,
            record_stage0: false,
            synth_temperature: 1.0,
            toy: ToyConfig::default(),
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Config(m));
        if self.order.is_empty() {
            return bad("order must name at least one task".into());
        }
        let mut seen = HashSet::new();
        for t in &self.order {
            if !seen.insert(t) {
                return bad(format!("task {t:?} appears twice in order"));
            }
        }
        for (name, v) in [("r", self.r), ("r_hat", self.r_hat)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.k == 0 {
            return bad("K must be >= 1".into());
        }
        if self.c == 0 {
            return bad("C must be >= 1".into());
        }
        if !(self.demo_fraction > 0.0 && self.demo_fraction <= 1.0) {
            return bad(format!(
                "demo_fraction = {} outside (0, 1]",
                self.demo_fraction
            ));
        }
        if self.oversample_factor == 0 || self.attempt_factor == 0 {
            return bad("oversample_factor and attempt_factor must be >= 1".into());
        }
        if self.embed_dimension < crate::embed::MIN_DIMENSION
            || self.toy.dimension < crate::embed::MIN_DIMENSION
        {
            return bad(format!(
                "embedding dimension must be >= {}",
                crate::embed::MIN_DIMENSION
            ));
        }
        if !(self.toy.decay > 0.0 && self.toy.decay < 1.0) {
            return bad(format!("toy.decay = {} outside (0, 1)", self.toy.decay));
        }
        if self.synth_temperature < 0.0 {
            return bad("synth_temperature must be >= 0".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CorpusError> {
        let cfg: CurriculumConfig =
            toml::from_str(text).map_err(|e| CorpusError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CorpusError::Config(m) => CorpusError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Task orders on the five-task benchmark.
pub fn order_preset(name: &str) -> Option<Vec<String>> {
    let order: &[&str] = match name {
        "order1" => &["QA", "QG", "SA", "Sum", "Trans"],
        "order2" => &["Trans", "SA", "QA", "Sum", "QG"],
        "order3" => &["Sum", "QG", "Trans", "QA", "SA"],
        _ => return None,
    };
    Some(order.iter().map(|s| s.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, input: &str, output: &str) -> Instance {
        Instance::real(id, "t", input, output)
    }

    fn task_with(n: usize) -> TaskSpec {
        let train = (0..n)
            .map(|i| inst(&format!("tr{i}"), &format!("in {i}"), "o"))
            .collect();
        let mut t = TaskSpec::new("t", train, vec![]);
        t.held_out = (0..n)
            .map(|i| inst(&format!("ho{i}"), &format!("new {i}"), "o"))
            .collect();
        t
    }

    #[test]
    fn parses_two_lines() {
        let text = "{\"task\":\"a\",\"input\":\"x\",\"output\":\"y\"}\n{\"id\":\"k\",\"task\":\"a\",\"input\":\"x2\",\"output\":\"y2\",\"origin\":\"synthetic_raw\",\"stage_created\":2}\n";
        let xs = parse_dataset(text, Path::new("f")).unwrap();
        assert_eq!(xs.len(), 2);
        assert_eq!(xs[0].id, "line-1");
        assert_eq!(xs[0].origin, Origin::Real);
        assert_eq!(xs[1].origin, Origin::SyntheticRaw);
        assert_eq!(xs[1].stage_created, 2);
    }

    #[test]
    fn missing_output_names_line() {
        let text = "{\"task\":\"a\",\"input\":\"x\",\"output\":\"y\"}\n{\"task\":\"a\",\"input\":\"x\",\"output\":\"y\"}\n{\"task\":\"a\",\"input\":\"x\"}\n";
        let err = parse_dataset(text, Path::new("f")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let line = |id: &str| {
            format!("{{\"id\":\"{id}\",\"task\":\"a\",\"input\":\"x\",\"output\":\"y\"}}\n")
        };
        let text = [line("a"), line("b"), line("c"), line("a")].concat();
        match parse_dataset(&text, Path::new("f")) {
            Err(CorpusError::DuplicateId {
                id, line, first, ..
            }) => {
                assert_eq!((id.as_str(), line, first), ("a", 4, 1));
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn blank_input_rejected() {
        let text = "{\"task\":\"a\",\"input\":\"  \",\"output\":\"y\"}\n";
        assert!(parse_dataset(text, Path::new("f")).is_err());
    }

    #[test]
    fn save_empty_and_many() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        save_dataset(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");

        let many: Vec<_> = (0..1000).map(|i| inst(&i.to_string(), "q", "a")).collect();
        let p = dir.path().join("many.jsonl");
        save_dataset(&many, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1000);
    }

    #[test]
    fn newline_in_output_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let xs = vec![inst("a", "q\u{e9}", "line one\nline two\n")];
        save_dataset(&xs, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), xs);
    }

    #[test]
    fn save_into_unwritable_path_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "").unwrap();
        let err = save_dataset(&[], blocker.join("sub.jsonl")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }

    #[test]
    fn demo_pool_sizes() {
        let t = task_with(2000);
        assert_eq!(
            build_demo_pool(&t, 0.01, DemoSource::Train, 2, 1)
                .unwrap()
                .len(),
            20
        );
        let t = task_with(40);
        let all = build_demo_pool(&t, 1.0, DemoSource::Train, 2, 1).unwrap();
        assert_eq!(all, t.train);
        // 0.4 rounds to 0, floor of K applies
        assert_eq!(
            build_demo_pool(&t, 0.01, DemoSource::Train, 2, 1)
                .unwrap()
                .len(),
            2
        );
        let t = task_with(1);
        assert!(matches!(
            build_demo_pool(&t, 0.01, DemoSource::Train, 2, 1),
            Err(CorpusError::PoolTooSmall { .. })
        ));
        assert!(build_demo_pool(&task_with(5), 0.0, DemoSource::Train, 1, 1).is_err());
    }

    #[test]
    fn demo_pool_is_seeded_and_new_source_is_disjoint() {
        let t = task_with(300);
        let a = build_demo_pool(&t, 0.05, DemoSource::Train, 2, 9).unwrap();
        let b = build_demo_pool(&t, 0.05, DemoSource::Train, 2, 9).unwrap();
        assert_eq!(a, b);
        let fresh = build_demo_pool(&t, 0.05, DemoSource::New, 2, 9).unwrap();
        let train_ids: HashSet<_> = t.train.iter().map(|i| &i.id).collect();
        assert!(fresh.iter().all(|i| !train_ids.contains(&i.id)));
        assert_eq!(fresh.len(), 15);
    }

    #[test]
    fn ratio_rounding() {
        assert_eq!(ratio_count(0.0, 40), 0);
        assert_eq!(ratio_count(0.01, 40), 1);
        assert_eq!(ratio_count(0.10, 40), 4);
        assert_eq!(ratio_count(0.10, 2000), 200);
        assert_eq!(ratio_count(0.5, 5), 3);
    }

    #[test]
    fn config_rejects_unknown_keys_and_duplicates() {
        let ok = "order = [\"a\", \"b\"]\nstrategy = \"ssr\"\nK = 2\nC = 20\n";
        let cfg = CurriculumConfig::from_toml_str(ok).unwrap();
        assert_eq!(cfg.strategy, Strategy::Ssr);
        assert!(CurriculumConfig::from_toml_str("order = [\"a\"]\nbogus = 1\n").is_err());
        assert!(CurriculumConfig::from_toml_str("order = [\"a\", \"a\"]\n").is_err());
        assert!(CurriculumConfig::from_toml_str("order = []\n").is_err());
        assert!(CurriculumConfig::from_toml_str("order = [\"a\"]\nr = 1.5\n").is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = CurriculumConfig {
            order: order_preset("order2").unwrap(),
            ..Default::default()
        };
        let back = CurriculumConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn order_presets_match_table() {
        assert_eq!(
            order_preset("order1").unwrap(),
            ["QA", "QG", "SA", "Sum", "Trans"]
        );
        assert_eq!(order_preset("order3").unwrap()[0], "Sum");
        assert!(order_preset("order4").is_none());
    }

    mod props {
        use super::super::{parse_dataset, render_dataset, Instance, Origin};
        use proptest::prelude::*;
        use std::path::Path;

        fn any_instance() -> impl Strategy<Value = Instance> {
            (
                "[a-z0-9]{1,8}",
                "\\PC{1,20}",
                "[\\PC\n]{0,30}",
                0u32..5,
                prop_oneof![
                    Just(Origin::Real),
                    Just(Origin::SyntheticRaw),
                    Just(Origin::SyntheticRefined)
                ],
            )
                .prop_filter("non-blank input", |(_, i, ..)| !i.trim().is_empty())
                .prop_map(|(task, input, output, stage, origin)| Instance {
                    id: String::new(),
                    task,
                    input,
                    output,
                    origin,
                    stage_created: stage,
                })
        }

        proptest! {
            #[test]
            fn render_parse_identity(mut xs in proptest::collection::vec(any_instance(), 0..20)) {
                for (i, x) in xs.iter_mut().enumerate() {
                    x.id = format!("id-{i}");
                }
                let back = parse_dataset(&render_dataset(&xs), Path::new("mem")).unwrap();
                prop_assert_eq!(back, xs);
            }
        }
    }

    mod pool_props {
        use super::super::{build_demo_pool, DemoSource, Instance, TaskSpec};
        use proptest::prelude::*;
        use std::collections::HashSet;

        fn task(n_train: usize, n_new: usize) -> TaskSpec {
            let mk = |p: &str, n: usize| -> Vec<Instance> {
                (0..n).map(|i| Instance::real(format!("{p}{i}"), "t", format!("{p} {i}"), "o")).collect()
            };
            TaskSpec {
                held_out: mk("new", n_new),
                ..TaskSpec::new("t", mk("tr", n_train), Vec::new())
            }
        }

        proptest! {
            #[test]
            fn pools_are_seeded_and_respect_source(
                n_train in 2usize..200,
                n_new in 2usize..50,
                fraction in 0.001f64..=1.0,
                k in 1usize..3,
                seed in any::<u64>(),
            ) {
                let t = task(n_train, n_new);
                for source in [DemoSource::Train, DemoSource::New] {
                    let a = build_demo_pool(&t, fraction, source, k, seed).unwrap();
                    prop_assert_eq!(&a, &build_demo_pool(&t, fraction, source, k, seed).unwrap());
                    prop_assert!(a.len() >= k);
                    let ids: HashSet<&str> = a.iter().map(|i| i.id.as_str()).collect();
                    prop_assert_eq!(ids.len(), a.len());
                    if source == DemoSource::New {
                        prop_assert!(a.iter().all(|i| i.id.starts_with("new")));
                    }
                }
            }
        }
    }
}
