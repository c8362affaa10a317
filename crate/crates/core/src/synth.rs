//! In-context synthesis of rehearsal instances from a task's demonstrations.
//!
//! Prompt template, one block per demonstration followed by the cue:
//!
//! ```text
//! Input:
//! {input}
//! Output:
//! {output}
//!
//! Input:
//! ```
//!
//! In input-only mode the `Output:` line and its text are left out of each
//! block. The model's continuation is read back by
//! [`parse_generated_instance`].

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{DemoOutputs, Instance, Origin};
use crate::genbackend::{complete_many, GenError, GenerationParams, Generator};
use crate::seeds::derive_seed_n;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("demonstration pool has {pool} instances, fewer than K = {k}")]
    PoolTooSmall { pool: usize, k: usize },
    #[error("invalid synthesis job: {0}")]
    InvalidJob(String),
    #[error("no parseable instance for task {task:?} after {attempts} attempts")]
    NothingParsed { task: String, attempts: usize },
    #[error("generation failed for task {task:?} on draw {draw}: {source}")]
    Generation {
        task: String,
        draw: usize,
        #[source]
        source: GenError,
    },
}

/// Frame used to query a model for the output of a bare input, both at
/// evaluation and when refining synthetic outputs.
pub fn eval_prompt(input: &str) -> String {
    format!("Input:\n{input}\nOutput:\n")
}

/// Ordered draw of `k` distinct demonstrations.
///
/// Even draws `2m` take a seeded random ordered subset; odd draws `2m + 1`
/// replay draw `2m` in reverse, so consecutive draws cover both orderings of
/// the same demonstrations. With `k = 1` every draw is independent.
pub fn sample_demonstrations(
    pool: &[Instance],
    k: usize,
    draw_index: usize,
    seed: u64,
) -> Result<Vec<Instance>, SynthError> {
    if k == 0 || pool.len() < k {
        return Err(SynthError::PoolTooSmall {
            pool: pool.len(),
            k,
        });
    }
    let (base, reverse) = if k == 1 {
        (draw_index, false)
    } else {
        (draw_index / 2, draw_index % 2 == 1)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_n(seed, "demos", base as u64));
    let mut picked: Vec<Instance> = pool.choose_multiple(&mut rng, k).cloned().collect();
    picked.shuffle(&mut rng);
    if reverse {
        picked.reverse();
    }
    Ok(picked)
}

pub fn build_icl_prompt(demos: &[Instance], demo_outputs: DemoOutputs) -> String {
    let mut s = String::new();
    for d in demos {
        s.push_str("Input:\n");
        s.push_str(&d.input);
        s.push('\n');
        if demo_outputs == DemoOutputs::Full {
            s.push_str("Output:\n");
            s.push_str(&d.output);
            s.push('\n');
        }
        s.push('\n');
    }
    s.push_str("Input:\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("no \"Output:\" line")]
    MissingOutputMarker,
    #[error("generated input is empty")]
    EmptyInput,
    #[error("generated output is empty")]
    EmptyOutput,
}

/// Splits a continuation into `(input, output)`.
///
/// The input is everything before the first line reading `Output:`. The
/// output runs from there to the first `Input:` line that follows a blank
/// line, or to the end. Both parts are trimmed and must be non-empty.
pub fn parse_generated_instance(raw: &str) -> Result<(String, String), ParseFailure> {
    let lines: Vec<&str> = raw.split('\n').collect();
    let marker = lines
        .iter()
        .position(|l| l.trim_end() == "Output:")
        .ok_or(ParseFailure::MissingOutputMarker)?;
    let input = lines[..marker].join("\n").trim().to_string();
    let mut end = lines.len();
    for i in marker + 1..lines.len() {
        if lines[i].trim_end() == "Input:" && i > marker + 1 && lines[i - 1].trim().is_empty() {
            end = i;
            break;
        }
    }
    let output = lines[marker + 1..end].join("\n").trim().to_string();
    if input.is_empty() {
        return Err(ParseFailure::EmptyInput);
    }
    if output.is_empty() {
        return Err(ParseFailure::EmptyOutput);
    }
    Ok((input, output))
}

/// Inverse of [`parse_generated_instance`] for already-parsed pairs.
pub fn render_generated_instance(input: &str, output: &str) -> String {
    format!("{input}\nOutput:\n{output}")
}

/// Lowercased, whitespace-collapsed form used for duplicate detection.
pub fn normalize_input(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Drops candidates whose normalized input matches a demonstration or an
/// earlier candidate. Order is preserved.
pub fn dedup(candidates: Vec<Instance>, demos: &[Instance]) -> Vec<Instance> {
    let mut seen: HashSet<String> = demos.iter().map(|d| normalize_input(&d.input)).collect();
    candidates
        .into_iter()
        .filter(|c| seen.insert(normalize_input(&c.input)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthesisJob {
    pub task: String,
    pub stage: u32,
    pub demo_pool: Vec<Instance>,
    pub k: usize,
    pub target_count: usize,
    pub oversample_factor: usize,
    /// Attempt budget is `target * oversample * attempt_factor` calls.
    pub attempt_factor: usize,
    pub demo_outputs: DemoOutputs,
    pub params: GenerationParams,
    pub seed: u64,
}

impl SynthesisJob {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.k == 0 || self.demo_pool.len() < self.k {
            return Err(SynthError::PoolTooSmall {
                pool: self.demo_pool.len(),
                k: self.k,
            });
        }
        if self.target_count == 0 {
            return Err(SynthError::InvalidJob("target_count must be >= 1".into()));
        }
        if self.oversample_factor == 0 || self.attempt_factor == 0 {
            return Err(SynthError::InvalidJob(
                "oversample_factor and attempt_factor must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn success_cap(&self) -> usize {
        self.target_count * self.oversample_factor
    }

    pub fn max_attempts(&self) -> usize {
        self.success_cap() * self.attempt_factor
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SynthesisStats {
    pub attempts: usize,
    pub parsed: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub kept: usize,
    pub target: usize,
    /// Set when fewer than `target` instances were kept.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub instances: Vec<Instance>,
    pub stats: SynthesisStats,
}

/// Runs draws in index order until `target * oversample` distinct instances
/// are kept or the attempt budget is spent.
pub fn synthesize_pool(
    job: &SynthesisJob,
    base: &dyn Generator,
) -> Result<SynthesisOutcome, SynthError> {
    job.validate()?;
    let cap = job.success_cap();
    let budget = job.max_attempts();
    let width = base.max_in_flight().max(1);
    let mut seen: HashSet<String> = job
        .demo_pool
        .iter()
        .map(|d| normalize_input(&d.input))
        .collect();
    let mut stats = SynthesisStats {
        target: job.target_count,
        ..Default::default()
    };
    let mut kept = Vec::new();
    let mut draw = 0;
    while draw < budget && kept.len() < cap {
        let n = width.min(budget - draw).min(cap - kept.len()).max(1);
        let mut prompts = Vec::with_capacity(n);
        for d in draw..draw + n {
            let demos = sample_demonstrations(&job.demo_pool, job.k, d, job.seed)?;
            prompts.push(build_icl_prompt(&demos, job.demo_outputs));
        }
        let mut params = job.params.clone();
        params.seed = job.params.seed.wrapping_add(draw as u64);
        for (offset, res) in complete_many(base, &prompts, &params)
            .into_iter()
            .enumerate()
        {
            let d = draw + offset;
            let raw = res.map_err(|source| SynthError::Generation {
                task: job.task.clone(),
                draw: d,
                source,
            })?;
            stats.attempts += 1;
            let (input, output) = match parse_generated_instance(&raw) {
                Ok(pair) => pair,
                Err(why) => {
                    log::debug!("task {} draw {d}: unparseable generation ({why})", job.task);
                    stats.malformed += 1;
                    continue;
                }
            };
            stats.parsed += 1;
            if !seen.insert(normalize_input(&input)) {
                stats.duplicates += 1;
                continue;
            }
            if kept.len() < cap {
                kept.push(Instance {
                    id: format!("syn-{}-s{}-{d:05}", job.task, job.stage),
                    task: job.task.clone(),
                    input,
                    output,
                    origin: Origin::SyntheticRaw,
                    stage_created: job.stage,
                });
            }
        }
        draw += n;
    }
    stats.kept = kept.len();
    if kept.is_empty() {
        return Err(SynthError::NothingParsed {
            task: job.task.clone(),
            attempts: stats.attempts,
        });
    }
    if kept.len() < job.target_count {
        let msg = format!(
            "task {}: kept {} synthetic instances, target was {}",
            job.task,
            kept.len(),
            job.target_count
        );
        log::warn!("{msg}");
        stats.shortfall = Some(msg);
    }
    Ok(SynthesisOutcome {
        instances: kept,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genbackend::{MockBackend, MockScript};

    fn demo(id: &str, input: &str, output: &str) -> Instance {
        Instance::real(id, "t", input, output)
    }

    fn job(pool: Vec<Instance>, target: usize, over: usize) -> SynthesisJob {
        SynthesisJob {
            task: "t".into(),
            stage: 2,
            demo_pool: pool,
            k: 2,
            target_count: target,
            oversample_factor: over,
            attempt_factor: 2,
            demo_outputs: DemoOutputs::Full,
            params: GenerationParams::sampling(1.0, 0),
            seed: 7,
        }
    }

    fn pool() -> Vec<Instance> {
        vec![demo("a", "alpha", "A"), demo("b", "beta", "B")]
    }

    #[test]
    fn both_orderings_across_consecutive_draws() {
        for seed in 0..20 {
            let d0 = sample_demonstrations(&pool(), 2, 0, seed).unwrap();
            let d1 = sample_demonstrations(&pool(), 2, 1, seed).unwrap();
            let ids = |d: &[Instance]| d.iter().map(|i| i.id.clone()).collect::<Vec<_>>();
            let mut both = vec![ids(&d0), ids(&d1)];
            both.sort();
            assert_eq!(both, [vec!["a", "b"], vec!["b", "a"]]);
        }
    }

    #[test]
    fn draws_vary_membership_and_are_reproducible() {
        let big: Vec<_> = (0..10)
            .map(|i| demo(&i.to_string(), &format!("x{i}"), "y"))
            .collect();
        let sets: HashSet<Vec<String>> = (0..20)
            .map(|d| {
                let mut ids: Vec<_> = sample_demonstrations(&big, 2, d, 1)
                    .unwrap()
                    .into_iter()
                    .map(|i| i.id)
                    .collect();
                ids.sort();
                ids
            })
            .collect();
        assert!(sets.len() > 3);
        assert_eq!(
            sample_demonstrations(&big, 3, 4, 1).unwrap(),
            sample_demonstrations(&big, 3, 4, 1).unwrap()
        );
        let one = sample_demonstrations(&big, 1, 0, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!(sample_demonstrations(&big[..1], 2, 0, 1).is_err());
    }

    #[test]
    fn prompt_template() {
        let d = [demo("1", "a", "b")];
        assert_eq!(
            build_icl_prompt(&d, DemoOutputs::Full),
            "Input:\na\nOutput:\nb\n\nInput:\n"
        );
        assert_eq!(
            build_icl_prompt(&d, DemoOutputs::InputOnly),
            "Input:\na\n\nInput:\n"
        );
        let two = [demo("1", "a", "b"), demo("2", "c", "d")];
        assert_eq!(
            build_icl_prompt(&two, DemoOutputs::Full),
            "Input:\na\nOutput:\nb\n\nInput:\nc\nOutput:\nd\n\nInput:\n"
        );
    }

    #[test]
    fn parsing_rules() {
        assert_eq!(
            parse_generated_instance("q1\nOutput:\na1").unwrap(),
            ("q1".into(), "a1".into())
        );
        assert_eq!(
            parse_generated_instance("q1\nOutput:\na1\n\nInput:\nq2\nOutput:\na2").unwrap(),
            ("q1".into(), "a1".into())
        );
        assert_eq!(
            parse_generated_instance("just text, no marker"),
            Err(ParseFailure::MissingOutputMarker)
        );
        assert_eq!(
            parse_generated_instance("\nOutput:\nx"),
            Err(ParseFailure::EmptyInput)
        );
        assert_eq!(
            parse_generated_instance("q\nOutput:\n  "),
            Err(ParseFailure::EmptyOutput)
        );
        assert_eq!(
            parse_generated_instance("two\nlines\nOutput:\nmulti\nline\nInput: inline").unwrap(),
            ("two\nlines".into(), "multi\nline\nInput: inline".into())
        );
    }

    #[test]
    fn dedup_rules() {
        let demos = [demo("d", "Hello World", "x")];
        let c = vec![
            demo("1", "Hello World", "y"),
            demo("2", "fresh one", "y"),
            demo("3", "fresh one   ", "z"),
            demo("4", "FRESH   one", "z"),
            demo("5", "other", "z"),
        ];
        let ids: Vec<_> = dedup(c, &demos).into_iter().map(|i| i.id).collect();
        assert_eq!(ids, ["2", "5"]);
        let distinct = vec![demo("1", "a", "x"), demo("2", "b", "x")];
        assert_eq!(dedup(distinct.clone(), &[]), distinct);
    }

    #[test]
    fn pool_from_well_formed_script() {
        let gens: Vec<String> = (0..6).map(|i| format!("q{i}\nOutput:\na{i}")).collect();
        let m = MockBackend::new(MockScript::queue(gens));
        let out = synthesize_pool(&job(pool(), 2, 3), &m).unwrap();
        assert_eq!(out.instances.len(), 6);
        assert_eq!(out.stats.attempts, 6);
        assert!(out
            .instances
            .iter()
            .all(|i| i.origin == Origin::SyntheticRaw && i.stage_created == 2));
        assert_eq!(m.calls(), 6);
    }

    #[test]
    fn malformed_generations_are_skipped() {
        let gens: Vec<String> = (0..12)
            .map(|i| {
                if i % 2 == 0 {
                    "garbage".to_string()
                } else {
                    format!("q{i}\nOutput:\na{i}")
                }
            })
            .collect();
        let m = MockBackend::new(MockScript::queue(gens));
        let out = synthesize_pool(&job(pool(), 2, 3), &m).unwrap();
        assert_eq!(out.instances.len(), 6);
        assert_eq!(out.stats.malformed, 6);
        assert_eq!(out.stats.attempts, 12);
        assert!(out.stats.shortfall.is_none());
    }

    #[test]
    fn all_malformed_is_an_error() {
        let m = MockBackend::new(MockScript::queue(vec!["nope"; 12]));
        assert!(matches!(
            synthesize_pool(&job(pool(), 2, 3), &m),
            Err(SynthError::NothingParsed { attempts: 12, .. })
        ));
    }

    #[test]
    fn shortfall_is_reported_not_fatal() {
        let mut gens = vec![
            "alpha\nOutput:\ncopy of demo".to_string(),
            "new\nOutput:\nx".into(),
        ];
        gens.extend(std::iter::repeat("bad".to_string()).take(10));
        let m = MockBackend::new(MockScript::queue(gens));
        let out = synthesize_pool(&job(pool(), 2, 3), &m).unwrap();
        assert_eq!(out.instances.len(), 1);
        assert_eq!(out.stats.duplicates, 1);
        assert!(out.stats.shortfall.is_some());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn text() -> impl Strategy<Value = String> {
            "[a-zA-Z0-9 .,?\n]{1,40}".prop_filter("has content", |s| !s.trim().is_empty())
        }

        proptest! {
            #[test]
            fn parsed_pairs_round_trip(raw in "[a-z \n:]{0,60}(\nOutput:\n)?[a-zA-Z \n:]{0,60}") {
                if let Ok((i, o)) = parse_generated_instance(&raw) {
                    let again = parse_generated_instance(&render_generated_instance(&i, &o)).unwrap();
                    prop_assert_eq!(again, (i, o));
                }
            }

            #[test]
            fn rendered_pairs_parse(i in text(), o in text()) {
                let i = i.trim().to_string();
                let o = o.trim().to_string();
                prop_assume!(!i.split('\n').any(|l| l.trim_end() == "Output:"));
                prop_assert_eq!(parse_generated_instance(&render_generated_instance(&i, &o)).unwrap(), (i, o));
            }
        }
    }

    mod pool_props {
        use super::super::*;
        use crate::genbackend::{MockBackend, MockScript, Procedure};
        use proptest::prelude::*;

        fn icl(seed: u64) -> MockBackend {
            MockBackend::new(MockScript::procedure(Procedure::IclPerturb {
                seed,
                edits: 1,
                output_noise: 0.3,
            }))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn pools_are_reproducible_parseable_and_novel(
                words in proptest::collection::vec("[a-z]{2,7}", 8..20),
                n_demos in 2usize..6,
                target in 1usize..5,
                seed in any::<u64>(),
                stage in 1u32..5,
            ) {
                let demos: Vec<Instance> = (0..n_demos)
                    .map(|i| {
                        let input: Vec<&str> = words.iter().skip(i).step_by(2).take(5).map(String::as_str).collect();
                        Instance::real(format!("d{i}"), "t", input.join(" "), format!("answer {i}"))
                    })
                    .collect();
                let job = SynthesisJob {
                    task: "t".into(),
                    stage,
                    demo_pool: demos.clone(),
                    k: 2,
                    target_count: target,
                    oversample_factor: 3,
                    attempt_factor: 2,
                    demo_outputs: DemoOutputs::Full,
                    params: GenerationParams::sampling(1.0, seed),
                    seed,
                };
                let (a, b) = match (synthesize_pool(&job, &icl(seed)), synthesize_pool(&job, &icl(seed))) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(SynthError::NothingParsed { .. }), Err(SynthError::NothingParsed { .. })) => return Ok(()),
                    (a, b) => return Err(TestCaseError::fail(format!("diverging outcomes {:?} / {:?}", a.is_ok(), b.is_ok()))),
                };
                prop_assert_eq!(&a.instances, &b.instances);
                let demo_inputs: HashSet<String> = demos.iter().map(|d| normalize_input(&d.input)).collect();
                for inst in &a.instances {
                    prop_assert_eq!(inst.origin, Origin::SyntheticRaw);
                    prop_assert_eq!(inst.stage_created, stage);
                    prop_assert!(!demo_inputs.contains(&normalize_input(&inst.input)));
                    let back = parse_generated_instance(&render_generated_instance(&inst.input, &inst.output)).unwrap();
                    prop_assert_eq!(back, (inst.input.clone(), inst.output.clone()));
                }
            }
        }
    }
}
