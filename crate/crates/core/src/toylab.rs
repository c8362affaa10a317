//! A retrieval learner with explicit forgetting, used as a stand-in for a
//! fine-tuned model, and the bundled toy curricula.
//!
//! Training stores every mixture instance at strength 1 and multiplies the
//! strength of everything else by `decay`; entries weaker than
//! `strength_threshold` are pruned. Generation returns the output of the
//! stored input nearest to the query (cosine over [`embed_local`] vectors)
//! when the similarity reaches `sim_threshold`, and the empty string
//! otherwise.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Instance, TaskSpec, ToyConfig};
use crate::embed::{embed_local, EmbeddingVector};
use crate::genbackend::{
    last_input, BackendDescriptor, BackendKind, GenError, GenerationParams, Generator, MockScript,
    ModelHandle, Procedure, Role,
};
use crate::synth::normalize_input;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEntry {
    pub id: String,
    pub task: String,
    pub input: String,
    pub embedding: EmbeddingVector,
    pub output: String,
    pub strength: f64,
    /// Training stage of the last refresh.
    pub stage: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLearner {
    pub config: ToyConfig,
    pub capacity: usize,
    /// Keyed by normalized input.
    entries: BTreeMap<String, ToyEntry>,
    stage: u32,
}

impl ToyLearner {
    pub fn new(config: ToyConfig, capacity: usize) -> Self {
        Self {
            config,
            capacity,
            entries: BTreeMap::new(),
            stage: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stage(&self) -> u32 {
        self.stage
    }

    pub fn entries(&self) -> impl Iterator<Item = &ToyEntry> {
        self.entries.values()
    }

    pub fn strength_of(&self, input: &str) -> Option<f64> {
        self.entries
            .get(&normalize_input(input))
            .map(|e| e.strength)
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        // dimension is validated with the config; fall back to the minimum otherwise
        embed_local(text, self.config.dimension)
            .or_else(|_| embed_local(text, crate::embed::MIN_DIMENSION))
            .expect("minimum dimension embeds")
    }

    /// One training event on `mixture`.
    pub fn train(&mut self, mixture: &[Instance]) {
        self.stage += 1;
        let refreshed: HashSet<String> =
            mixture.iter().map(|i| normalize_input(&i.input)).collect();
        for (key, e) in self.entries.iter_mut() {
            if !refreshed.contains(key) {
                e.strength *= self.config.decay;
            }
        }
        for inst in mixture {
            let key = normalize_input(&inst.input);
            let embedding = self.embed(&inst.input);
            self.entries.insert(
                key,
                ToyEntry {
                    id: inst.id.clone(),
                    task: inst.task.clone(),
                    input: inst.input.clone(),
                    embedding,
                    output: inst.output.clone(),
                    strength: 1.0,
                    stage: self.stage,
                },
            );
        }
        let floor = self.config.strength_threshold;
        self.entries.retain(|_, e| e.strength >= floor);
        if self.entries.len() > self.capacity {
            let mut order: Vec<(f64, u32, String, String)> = self
                .entries
                .iter()
                .map(|(k, e)| (e.strength, e.stage, e.id.clone(), k.clone()))
                .collect();
            order.sort_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(a.1.cmp(&b.1))
                    .then_with(|| a.2.cmp(&b.2))
            });
            let excess = self.entries.len() - self.capacity;
            for (_, _, _, key) in order.into_iter().take(excess) {
                self.entries.remove(&key);
            }
        }
    }

    /// Nearest stored entry to `input` and its cosine similarity.
    /// Ties prefer higher strength, then the lexicographically smaller id.
    pub fn nearest(&self, input: &str) -> Option<(&ToyEntry, f64)> {
        let q = self.embed(input);
        let mut best: Option<(&ToyEntry, f64)> = None;
        for e in self.entries.values() {
            let sim = q.dot(&e.embedding);
            best = match best {
                None => Some((e, sim)),
                Some((b, bs)) => {
                    let better = sim > bs
                        || (sim == bs
                            && (e.strength > b.strength
                                || (e.strength == b.strength && e.id < b.id)));
                    if better {
                        Some((e, sim))
                    } else {
                        Some((b, bs))
                    }
                }
            };
        }
        best
    }

    pub fn generate(&self, input: &str) -> String {
        match self.nearest(input) {
            Some((e, sim)) if sim >= self.config.sim_threshold => e.output.clone(),
            _ => String::new(),
        }
    }
}

/// Read-only generation view of a learner snapshot.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    learner: Arc<ToyLearner>,
}

impl ToyBackend {
    pub fn new(learner: ToyLearner) -> Self {
        Self {
            learner: Arc::new(learner),
        }
    }

    pub fn learner(&self) -> &ToyLearner {
        &self.learner
    }
}

impl Generator for ToyBackend {
    fn generate(&self, prompt: &str, _params: &GenerationParams) -> Result<String, GenError> {
        Ok(self.learner.generate(&last_input(prompt)))
    }
}

/// Wraps a snapshot of `learner` as a model handle.
pub fn toy_as_backend(learner: &ToyLearner, name: impl Into<String>, role: Role) -> ModelHandle {
    ModelHandle::new(
        name,
        BackendKind::Toy,
        role,
        Arc::new(ToyBackend::new(learner.clone())),
    )
}

// ---------------------------------------------------------------------------
// Presets

struct ToyTemplate {
    task: &'static str,
    text: &'static str,
    first: [&'static str; 8],
    second: [&'static str; 8],
    output: &'static str,
}

const TEMPLATES: [ToyTemplate; 5] = [
    ToyTemplate {
        task: "QA",
        text: "question: according to the short story, where does the {1} hide the silver {2} before the storm reaches the harbour village?",
        first: ["baker", "farmer", "sailor", "doctor", "teacher", "painter", "miner", "tailor"],
        second: ["lamp", "coin", "book", "key", "ring", "map", "cup", "bell"],
        output: "under the loose floorboards of the lighthouse",
    },
    ToyTemplate {
        task: "QG",
        text: "write a quiz question whose answer is the {1} mentioned in the paragraph about the {2} exhibition opening next spring",
        first: ["curator", "sponsor", "architect", "mayor", "sculptor", "donor", "critic", "founder"],
        second: ["pottery", "textile", "fossil", "glass", "stamp", "clock", "mask", "kite"],
        output: "who is credited with organising the exhibition described in the paragraph",
    },
    ToyTemplate {
        task: "SA",
        text: "review sentiment: honestly the {1} soundtrack and the {2} cinematography made this film an absolute joy to watch twice",
        first: ["haunting", "playful", "sweeping", "gentle", "bold", "moody", "lively", "tender"],
        second: ["crisp", "dreamy", "vivid", "muted", "stark", "lush", "grainy", "warm"],
        output: "positive",
    },
    ToyTemplate {
        task: "Sum",
        text: "summarize: municipal officials announced that the {1} bridge renovation will reroute {2} traffic during the overnight maintenance works",
        first: ["northern", "eastern", "central", "riverside", "granite", "iron", "harbor", "canal"],
        second: ["bus", "freight", "cyclist", "taxi", "delivery", "commuter", "tram", "ferry"],
        output: "bridge renovation reroutes traffic overnight",
    },
    ToyTemplate {
        task: "Trans",
        text: "translate into french: my {1} grandmother always buys fresh {2} from the covered market on sunday mornings",
        first: ["elderly", "cheerful", "patient", "clever", "quiet", "busy", "kind", "witty"],
        second: ["bread", "cheese", "fish", "apples", "flowers", "herbs", "eggs", "honey"],
        output: "ma grand-mère achète toujours des produits frais au marché couvert le dimanche matin",
    },
];

pub const TRAIN_PER_TASK: usize = 40;
pub const EVAL_PER_TASK: usize = 10;
pub const HELD_OUT_PER_TASK: usize = 10;
const PRESET_SEED: u64 = 20240605;

fn toy_task(t: &ToyTemplate) -> TaskSpec {
    let mut combos: Vec<(usize, usize)> =
        (0..8).flat_map(|a| (0..8).map(move |b| (a, b))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive_seed(PRESET_SEED, &[t.task]));
    combos.shuffle(&mut rng);
    let lower = t.task.to_lowercase();
    let make = |split: &str, n: usize, (a, b): (usize, usize)| {
        Instance::real(
            format!("{lower}-{split}-{n:02}"),
            t.task,
            t.text
                .replace("{1}", t.first[a])
                .replace("{2}", t.second[b]),
            t.output,
        )
    };
    let mut it = combos.into_iter();
    let train = (0..TRAIN_PER_TASK)
        .map(|n| make("train", n, it.next().unwrap()))
        .collect();
    let eval = (0..EVAL_PER_TASK)
        .map(|n| make("eval", n, it.next().unwrap()))
        .collect();
    let held_out = (0..HELD_OUT_PER_TASK)
        .map(|n| make("new", n, it.next().unwrap()))
        .collect();
    TaskSpec {
        held_out,
        ..TaskSpec::new(t.task, train, eval)
    }
}

/// Task ids of a preset, in curriculum order.
pub fn preset_tasks(name: &str) -> Option<Vec<String>> {
    let n = match name {
        "toy3" => 3,
        "toy5" => 5,
        _ => return None,
    };
    Some(TEMPLATES[..n].iter().map(|t| t.task.to_string()).collect())
}

/// Task data of a preset (`toy3`: QA, QG, SA; `toy5`: all five tasks).
pub fn preset(name: &str) -> Option<Vec<TaskSpec>> {
    let n = preset_tasks(name)?.len();
    Some(TEMPLATES[..n].iter().map(toy_task).collect())
}

/// The mock in-context generator used as the base model of the toy presets.
pub fn preset_base_descriptor() -> BackendDescriptor {
    let mut d = BackendDescriptor::mock(
        "base",
        MockScript::procedure(Procedure::IclPerturb {
            seed: PRESET_SEED,
            edits: 1,
            output_noise: 0.3,
        }),
    );
    d.role = Role::Base;
    d
}
