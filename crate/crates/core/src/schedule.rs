//! Stage orchestration: per-stage training mixtures for every strategy,
//! model-role bookkeeping and the performance matrix.
//!
//! A run directory has this layout:
//!
//! ```text
//! <run>/stage-<t>/mixture.jsonl
//! <run>/stage-<t>/synthetic_store/<task>.jsonl   (ssr only; every entry stored so far)
//! <run>/report.json
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{
    effective_clusters, fit_supervised, kmeans_fit, select_near_centroids, select_random,
    ClusterError, ClusterPick,
};
use crate::corpus::{
    build_demo_pool, ratio_count, save_dataset, ContentMode, CorpusError, CurriculumConfig,
    Instance, Origin, SelectionMode, Strategy, TaskSpec,
};
use crate::embed::{instance_content, EmbedError, Embedder, EmbeddingVector};
use crate::genbackend::{GenerationParams, ModelHandle, Role};
use crate::metrics::{evaluate_model, MetricError, MetricSummary, PerformanceMatrix};
use crate::refine::{refine_pool, regenerate_outputs, RefineError, RefineStats};
use crate::seeds::derive_seed;
use crate::synth::{synthesize_pool, SynthError, SynthesisJob, SynthesisStats};
use crate::toylab::{toy_as_backend, ToyLearner};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("no synthetic store entry for task {task:?} needed at stage {stage}")]
    MissingStore { stage: usize, task: String },
    #[error(
        "instance {id:?} with origin {origin} may not rehearse task {task:?} at stage {stage}"
    )]
    OriginViolation {
        stage: usize,
        task: String,
        id: String,
        origin: Origin,
    },
    #[error("synthetic store for task {0:?} was already written")]
    StoreRewrite(String),
    #[error("task {0:?} in the order has no data")]
    UnknownTask(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("external training failed at stage {stage}: {reason}")]
    External { stage: usize, reason: String },
    #[error("stage {stage} ({task}): {source}")]
    Stage {
        stage: usize,
        task: String,
        #[source]
        source: Box<ScheduleError>,
    },
}

// ---------------------------------------------------------------------------
// Selection

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub mode: SelectionMode,
    pub pool: usize,
    pub total: usize,
    pub clusters: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub picks: Vec<ClusterPick>,
}

pub fn embed_instances(
    embedder: &dyn Embedder,
    instances: &[Instance],
    mode: ContentMode,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let texts: Vec<String> = instances
        .iter()
        .map(|i| instance_content(i, mode))
        .collect();
    embedder.embed_batch(&texts)
}

/// Settings shared by every selection call of a run.
pub struct SelectionContext<'a> {
    pub embedder: &'a dyn Embedder,
    pub clusters: usize,
    pub content_mode: ContentMode,
}

/// Reduces `pool` to `total` instances.
///
/// The pool is sorted by id first, so the chosen set does not depend on the
/// order instances arrive in. `supervision` (real instances) is required for
/// [`SelectionMode::SupervisedKmeans`].
pub fn select_subset(
    pool: &[Instance],
    total: usize,
    mode: SelectionMode,
    supervision: Option<&[Instance]>,
    ctx: &SelectionContext<'_>,
    seed: u64,
) -> Result<(Vec<Instance>, SelectionSummary), ScheduleError> {
    let mut sorted = pool.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut summary = SelectionSummary {
        mode,
        pool: pool.len(),
        total,
        clusters: 0,
        picks: Vec::new(),
    };
    if total > sorted.len() {
        return Err(ClusterError::OverBudget {
            total,
            available: sorted.len(),
        }
        .into());
    }
    if total == 0 {
        return Ok((Vec::new(), summary));
    }
    let chosen = match mode {
        SelectionMode::Random => select_random(&sorted, total, seed)?,
        SelectionMode::Kmeans => {
            let vectors = embed_instances(ctx.embedder, &sorted, ctx.content_mode)?;
            let c = effective_clusters(ctx.clusters, sorted.len());
            let clustering = kmeans_fit(&vectors, c, seed)?;
            let (chosen, picks) = select_near_centroids(&sorted, &vectors, &clustering, total)?;
            summary.clusters = c;
            summary.picks = picks;
            chosen
        }
        SelectionMode::SupervisedKmeans => {
            let mut real = supervision.unwrap_or(&[]).to_vec();
            real.sort_by(|a, b| a.id.cmp(&b.id));
            let c = effective_clusters(ctx.clusters, real.len());
            let real_vectors = embed_instances(ctx.embedder, &real, ctx.content_mode)?;
            let vectors = embed_instances(ctx.embedder, &sorted, ctx.content_mode)?;
            let clustering = fit_supervised(&real_vectors, &vectors, c, seed)?;
            let (chosen, picks) = select_near_centroids(&sorted, &vectors, &clustering, total)?;
            summary.clusters = c;
            summary.picks = picks;
            chosen
        }
    };
    Ok((chosen, summary))
}

// ---------------------------------------------------------------------------
// Mixtures

/// Current data plus `round(r * |d_i|)` real instances of every previous task.
pub fn assemble_rehearsal_data(
    current: &[Instance],
    previous: &[(String, Vec<Instance>)],
    r: f64,
    sampler: SelectionMode,
    ctx: &SelectionContext<'_>,
    seed: u64,
) -> Result<(Vec<Instance>, Vec<SelectionSummary>), ScheduleError> {
    let mut mixture = current.to_vec();
    let mut summaries = Vec::new();
    for (task, data) in previous {
        let n = ratio_count(r, data.len());
        let (chosen, summary) = select_subset(
            data,
            n,
            sampler,
            Some(data),
            ctx,
            derive_seed(seed, &["rehearsal", task]),
        )?;
        mixture.extend(chosen);
        summaries.push(summary);
    }
    Ok((mixture, summaries))
}

/// Current data plus every stored synthetic set of the previous tasks.
/// Stored instances must carry `expected` origin.
pub fn assemble_ssr_data(
    current: &[Instance],
    store: &BTreeMap<String, Vec<Instance>>,
    previous: &[String],
    expected: Origin,
) -> Result<Vec<Instance>, ScheduleError> {
    let stage = previous.len() + 1;
    let mut mixture = current.to_vec();
    for task in previous {
        let set = store.get(task).ok_or_else(|| ScheduleError::MissingStore {
            stage,
            task: task.clone(),
        })?;
        if let Some(bad) = set.iter().find(|i| i.origin != expected) {
            return Err(ScheduleError::OriginViolation {
                stage,
                task: task.clone(),
                id: bad.id.clone(),
                origin: bad.origin,
            });
        }
        mixture.extend(set.iter().cloned());
    }
    Ok(mixture)
}

/// The synthesis job for `spec` at `stage`; `spec.demo_pool` must be built.
pub fn synthesis_job(
    config: &CurriculumConfig,
    spec: &TaskSpec,
    stage: usize,
    target: usize,
) -> SynthesisJob {
    let seed = derive_seed(config.seed, &["synth", &spec.task]);
    SynthesisJob {
        task: spec.task.clone(),
        stage: stage as u32,
        demo_pool: spec.demo_pool.clone(),
        k: config.k,
        target_count: target,
        oversample_factor: config.oversample_factor,
        attempt_factor: config.attempt_factor,
        demo_outputs: config.demo_outputs,
        params: GenerationParams::sampling(config.synth_temperature, seed),
        seed,
    }
}

// ---------------------------------------------------------------------------
// Learners

/// The model being trained stage after stage.
pub trait Learner {
    /// Handle of the untrained model.
    fn initial(&self) -> ModelHandle;
    /// Trains on `mixture` and returns a handle to the updated model.
    fn train(
        &mut self,
        stage: usize,
        mixture: &[Instance],
        mixture_file: Option<&Path>,
    ) -> Result<ModelHandle, ScheduleError>;
}

pub struct ToyTrainer {
    learner: ToyLearner,
}

impl ToyTrainer {
    pub fn new(learner: ToyLearner) -> Self {
        Self { learner }
    }

    pub fn learner(&self) -> &ToyLearner {
        &self.learner
    }
}

impl Learner for ToyTrainer {
    fn initial(&self) -> ModelHandle {
        toy_as_backend(&self.learner, "toy-0", Role::Other)
    }

    fn train(
        &mut self,
        stage: usize,
        mixture: &[Instance],
        _mixture_file: Option<&Path>,
    ) -> Result<ModelHandle, ScheduleError> {
        self.learner.train(mixture);
        Ok(toy_as_backend(
            &self.learner,
            format!("toy-{stage}"),
            Role::Latest,
        ))
    }
}

/// Training happens outside this process: each stage's mixture file is
/// handed to `on_stage`, which returns a handle to the resulting checkpoint.
pub struct ExternalTrainer<F> {
    initial: ModelHandle,
    on_stage: F,
}

impl<F> ExternalTrainer<F>
where
    F: FnMut(usize, &Path) -> Result<ModelHandle, String>,
{
    pub fn new(initial: ModelHandle, on_stage: F) -> Self {
        Self { initial, on_stage }
    }
}

impl<F> Learner for ExternalTrainer<F>
where
    F: FnMut(usize, &Path) -> Result<ModelHandle, String>,
{
    fn initial(&self) -> ModelHandle {
        self.initial.clone()
    }

    fn train(
        &mut self,
        stage: usize,
        _mixture: &[Instance],
        mixture_file: Option<&Path>,
    ) -> Result<ModelHandle, ScheduleError> {
        let path = mixture_file.ok_or_else(|| ScheduleError::External {
            stage,
            reason: "external training needs a run directory".into(),
        })?;
        (self.on_stage)(stage, path).map_err(|reason| ScheduleError::External { stage, reason })
    }
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisRecord {
    pub task: String,
    pub target: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionSummary>,
    pub stored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageManifest {
    pub stage: usize,
    pub task: String,
    pub mixture_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture_file: Option<String>,
    /// task → origin → count
    pub composition: BTreeMap<String, BTreeMap<String, usize>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub synthesis: Vec<SynthesisRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rehearsal: Vec<SelectionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regenerated: Option<RefineStats>,
    /// (task, score) entries written to this stage's matrix row.
    pub evaluated: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub strategy: Strategy,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub matrix: PerformanceMatrix,
    pub metrics: MetricSummary,
    pub stages: Vec<StageManifest>,
    pub config: CurriculumConfig,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn composition(mixture: &[Instance]) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut out: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for i in mixture {
        *out.entry(i.task.clone())
            .or_default()
            .entry(i.origin.to_string())
            .or_default() += 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Curriculum

/// Mutable state threaded through the stages.
#[derive(Debug, Clone)]
pub struct StageState {
    /// Last completed stage (0 before the first).
    pub t: usize,
    /// `trained_models[i]` is the model after stage `i`; index 0 is the untrained model.
    pub trained_models: Vec<ModelHandle>,
    pub synthetic_store: BTreeMap<String, Vec<Instance>>,
    pub matrix: PerformanceMatrix,
    pub manifests: Vec<StageManifest>,
}

pub struct Curriculum<'a> {
    config: CurriculumConfig,
    tasks: Vec<TaskSpec>,
    icl_model: ModelHandle,
    embedder: &'a dyn Embedder,
    learner: Box<dyn Learner + 'a>,
    run_dir: Option<PathBuf>,
}

impl<'a> Curriculum<'a> {
    /// Orders `tasks` by `config.order` and fixes each task's demonstration
    /// pool for the whole run.
    pub fn new(
        config: CurriculumConfig,
        tasks: Vec<TaskSpec>,
        icl_model: ModelHandle,
        embedder: &'a dyn Embedder,
        learner: Box<dyn Learner + 'a>,
    ) -> Result<Self, ScheduleError> {
        config.validate()?;
        let mut by_name: BTreeMap<String, TaskSpec> =
            tasks.into_iter().map(|t| (t.task.clone(), t)).collect();
        let mut ordered = Vec::with_capacity(config.order.len());
        for name in &config.order {
            let mut spec = by_name
                .remove(name)
                .ok_or_else(|| ScheduleError::UnknownTask(name.clone()))?;
            spec.check_disjoint()?;
            if config.strategy == Strategy::Ssr {
                spec.demo_pool = build_demo_pool(
                    &spec,
                    config.demo_fraction,
                    config.demo_source,
                    config.k,
                    config.seed,
                )?;
            }
            ordered.push(spec);
        }
        Ok(Self {
            config,
            tasks: ordered,
            icl_model,
            embedder,
            learner,
            run_dir: None,
        })
    }

    /// Persist mixtures, stores and the report under `dir`.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.run_dir = Some(dir.into());
        self
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn initial_state(&self) -> StageState {
        StageState {
            t: 0,
            trained_models: vec![self.learner.initial()],
            synthetic_store: BTreeMap::new(),
            matrix: PerformanceMatrix::new(self.config.order.clone()),
            manifests: Vec::new(),
        }
    }

    fn stage_dir(&self, stage: usize) -> Option<PathBuf> {
        self.run_dir
            .as_ref()
            .map(|d| d.join(format!("stage-{stage}")))
    }

    fn ctx(&self) -> SelectionContext<'_> {
        SelectionContext {
            embedder: self.embedder,
            clusters: self.config.c,
            content_mode: self.config.content_mode,
        }
    }

    fn score(&self, model: &ModelHandle, task: usize) -> Result<f64, ScheduleError> {
        let spec = &self.tasks[task - 1];
        Ok(evaluate_model(
            model,
            &spec.eval,
            &GenerationParams::greedy(),
        )?)
    }

    fn record(
        &self,
        state: &mut StageState,
        row: usize,
        tasks: impl IntoIterator<Item = usize>,
    ) -> Result<Vec<(String, f64)>, ScheduleError> {
        let model = state.trained_models[row.min(state.trained_models.len() - 1)].clone();
        let mut written = Vec::new();
        for j in tasks {
            let v = self.score(&model, j)?;
            state.matrix.set(row, j, v)?;
            written.push((self.tasks[j - 1].task.clone(), v));
        }
        Ok(written)
    }

    /// Synthesizes, refines and selects the rehearsal set of previous task `i`
    /// (1-based) at stage `t`.
    fn build_store_entry(
        &self,
        state: &StageState,
        t: usize,
        i: usize,
    ) -> Result<(Vec<Instance>, SynthesisRecord), ScheduleError> {
        let spec = &self.tasks[i - 1];
        let target = ratio_count(self.config.r_hat, spec.train.len());
        let mut record = SynthesisRecord {
            task: spec.task.clone(),
            target,
            synthesis: None,
            refine: None,
            selection: None,
            stored: 0,
        };
        if target == 0 {
            return Ok((Vec::new(), record));
        }
        let job = synthesis_job(&self.config, spec, t, target);
        let synthesized = synthesize_pool(&job, &self.icl_model)?;
        record.synthesis = Some(synthesized.stats);
        let pool = if self.config.refine {
            let latest = &state.trained_models[t - 1];
            let refined = refine_pool(&synthesized.instances, latest)?;
            record.refine = Some(refined.stats);
            refined.instances
        } else {
            synthesized.instances
        };
        let total = target.min(pool.len());
        if total < target {
            log::warn!(
                "task {}: only {} synthetic instances survive for a target of {target}",
                spec.task,
                pool.len()
            );
        }
        let (chosen, summary) = select_subset(
            &pool,
            total,
            self.config.selection,
            Some(&spec.train),
            &self.ctx(),
            derive_seed(self.config.seed, &["select", &spec.task]),
        )?;
        record.selection = Some(summary);
        record.stored = chosen.len();
        Ok((chosen, record))
    }

    fn write_dataset(&self, path: &Path, data: &[Instance]) -> Result<(), ScheduleError> {
        save_dataset(data, path)?;
        Ok(())
    }

    /// Runs stage `t` (1-based) for a sequential strategy.
    pub fn run_stage(
        &mut self,
        mut state: StageState,
        t: usize,
    ) -> Result<StageState, ScheduleError> {
        let big_t = self.tasks.len();
        let spec = self.tasks[t - 1].clone();
        let previous: Vec<String> = self.tasks[..t - 1].iter().map(|s| s.task.clone()).collect();

        // zero-shot entry a(t-1, t), before this stage touches the model
        if t >= 2 && state.matrix.get(t - 1, t).is_none() {
            self.record(&mut state, t - 1, [t])?;
        }

        let mut manifest = StageManifest {
            stage: t,
            task: spec.task.clone(),
            mixture_size: 0,
            mixture_file: None,
            composition: BTreeMap::new(),
            synthesis: Vec::new(),
            rehearsal: Vec::new(),
            regenerated: None,
            evaluated: Vec::new(),
        };

        let mixture = match self.config.strategy {
            Strategy::NonRehearsal => spec.train.clone(),
            Strategy::RandSel | Strategy::KmeansSel => {
                let sampler = if self.config.strategy == Strategy::RandSel {
                    SelectionMode::Random
                } else {
                    SelectionMode::Kmeans
                };
                let prev: Vec<(String, Vec<Instance>)> = self.tasks[..t - 1]
                    .iter()
                    .map(|s| (s.task.clone(), s.train.clone()))
                    .collect();
                let (mut mixture, summaries) = assemble_rehearsal_data(
                    &spec.train,
                    &prev,
                    self.config.r,
                    sampler,
                    &self.ctx(),
                    self.config.seed,
                )?;
                manifest.rehearsal = summaries;
                if self.config.regenerate_outputs && mixture.len() > spec.train.len() {
                    let sampled = mixture.split_off(spec.train.len());
                    let regen = regenerate_outputs(&sampled, &state.trained_models[t - 1])?;
                    manifest.regenerated = Some(regen.stats);
                    mixture.extend(regen.instances);
                }
                mixture
            }
            Strategy::Ssr => {
                for i in 1..t {
                    let name = &self.tasks[i - 1].task;
                    if state.synthetic_store.contains_key(name) {
                        continue;
                    }
                    let (entry, record) = self.build_store_entry(&state, t, i)?;
                    if state.synthetic_store.insert(name.clone(), entry).is_some() {
                        return Err(ScheduleError::StoreRewrite(name.clone()));
                    }
                    manifest.synthesis.push(record);
                }
                let expected = if self.config.refine {
                    Origin::SyntheticRefined
                } else {
                    Origin::SyntheticRaw
                };
                assemble_ssr_data(&spec.train, &state.synthetic_store, &previous, expected)?
            }
            Strategy::Mtl => unreachable!("multi-task runs are a single training event"),
        };

        manifest.mixture_size = mixture.len();
        manifest.composition = composition(&mixture);
        let mut mixture_path = None;
        if let Some(dir) = self.stage_dir(t) {
            let path = dir.join("mixture.jsonl");
            self.write_dataset(&path, &mixture)?;
            for (task, set) in &state.synthetic_store {
                self.write_dataset(
                    &dir.join("synthetic_store").join(format!("{task}.jsonl")),
                    set,
                )?;
            }
            manifest.mixture_file = Some(format!("stage-{t}/mixture.jsonl"));
            mixture_path = Some(path);
        }

        let trained = self.learner.train(t, &mixture, mixture_path.as_deref())?;
        state.trained_models.push(trained);

        let columns: Vec<usize> = if self.config.full_matrix {
            (1..=big_t).collect()
        } else {
            (1..=(t + 1).min(big_t)).collect()
        };
        manifest.evaluated = self.record(&mut state, t, columns)?;
        state.t = t;
        state.manifests.push(manifest);
        Ok(state)
    }

    fn run_mtl(&mut self, mut state: StageState) -> Result<StageState, ScheduleError> {
        let big_t = self.tasks.len();
        let mixture: Vec<Instance> = self
            .tasks
            .iter()
            .flat_map(|s| s.train.iter().cloned())
            .collect();
        let mut manifest = StageManifest {
            stage: 1,
            task: "all".into(),
            mixture_size: mixture.len(),
            mixture_file: None,
            composition: composition(&mixture),
            synthesis: Vec::new(),
            rehearsal: Vec::new(),
            regenerated: None,
            evaluated: Vec::new(),
        };
        let mut mixture_path = None;
        if let Some(dir) = self.stage_dir(1) {
            let path = dir.join("mixture.jsonl");
            self.write_dataset(&path, &mixture)?;
            manifest.mixture_file = Some("stage-1/mixture.jsonl".into());
            mixture_path = Some(path);
        }
        let trained = self.learner.train(1, &mixture, mixture_path.as_deref())?;
        state.trained_models.push(trained);
        // the single training event fills the final row
        let model = state.trained_models[1].clone();
        for j in 1..=big_t {
            let v = self.score(&model, j)?;
            state.matrix.set(big_t, j, v)?;
            manifest.evaluated.push((self.tasks[j - 1].task.clone(), v));
        }
        state.t = big_t;
        state.manifests.push(manifest);
        Ok(state)
    }

    fn report(&self, state: &StageState, error: Option<String>) -> RunReport {
        RunReport {
            status: if error.is_some() {
                "failed"
            } else {
                "complete"
            }
            .into(),
            error,
            strategy: self.config.strategy,
            seed: self.config.seed,
            tasks: self.config.order.clone(),
            matrix: state.matrix.clone(),
            metrics: MetricSummary::of(&state.matrix),
            stages: state.manifests.clone(),
            config: self.config.clone(),
        }
    }

    fn persist(&self, report: &RunReport) -> Result<(), ScheduleError> {
        if let Some(dir) = &self.run_dir {
            fs::create_dir_all(dir).map_err(|source| ScheduleError::Io {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join("report.json");
            fs::write(&path, report.to_json())
                .map_err(|source| ScheduleError::Io { path, source })?;
        }
        Ok(())
    }

    fn run_all(&mut self, state: &mut StageState) -> Result<(), ScheduleError> {
        if self.config.record_stage0 {
            let cols: Vec<usize> = (1..=self.tasks.len()).collect();
            self.record(state, 0, cols)?;
        }
        if self.config.strategy == Strategy::Mtl {
            *state = self.run_mtl(state.clone())?;
            return Ok(());
        }
        for t in 1..=self.tasks.len() {
            let task = self.tasks[t - 1].task.clone();
            *state = self
                .run_stage(state.clone(), t)
                .map_err(|e| ScheduleError::Stage {
                    stage: t,
                    task,
                    source: Box::new(e),
                })?;
        }
        Ok(())
    }

    /// Runs every stage. On failure the partial report is still written to
    /// the run directory before the error is returned.
    pub fn run(mut self) -> Result<(StageState, RunReport), ScheduleError> {
        let mut state = self.initial_state();
        let outcome = self.run_all(&mut state);
        let report = self.report(&state, outcome.as_ref().err().map(ToString::to_string));
        self.persist(&report)?;
        outcome.map(|_| (state, report))
    }
}

/// Toy-learner capacity when the config leaves it unset.
pub fn default_toy_capacity(tasks: &[TaskSpec]) -> usize {
    10 * tasks.iter().map(|t| t.train.len()).sum::<usize>()
}

/// Runs a curriculum with a fresh toy learner as the trained model.
pub fn run_curriculum(
    config: &CurriculumConfig,
    tasks: Vec<TaskSpec>,
    icl_model: ModelHandle,
    embedder: &dyn Embedder,
    run_dir: Option<&Path>,
) -> Result<(PerformanceMatrix, RunReport), ScheduleError> {
    let capacity = config
        .toy
        .capacity
        .unwrap_or_else(|| default_toy_capacity(&tasks));
    let learner = ToyTrainer::new(ToyLearner::new(config.toy.clone(), capacity));
    let mut cur = Curriculum::new(
        config.clone(),
        tasks,
        icl_model,
        embedder,
        Box::new(learner),
    )?;
    if let Some(dir) = run_dir {
        cur = cur.with_run_dir(dir);
    }
    let (state, report) = cur.run()?;
    Ok((state.matrix, report))
}

/// Every id in a mixture must be unique; used by manifest checks.
pub fn has_unique_ids(mixture: &[Instance]) -> bool {
    let mut seen = HashSet::new();
    mixture.iter().all(|i| seen.insert(i.id.as_str()))
}
