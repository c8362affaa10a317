//! Replaces synthetic outputs with the latest model's own greedy prediction.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Instance, Origin};
use crate::genbackend::{complete, complete_many, GenError, GenerationParams, Generator};
use crate::synth::eval_prompt;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("instance {id:?} has origin {origin}, expected {expected}")]
    WrongOrigin {
        id: String,
        origin: Origin,
        expected: Origin,
    },
    #[error("refinement of {id:?} failed: {source}")]
    Generation {
        id: String,
        #[source]
        source: GenError,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RefineStats {
    pub refined: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub instances: Vec<Instance>,
    pub stats: RefineStats,
}

fn rewrite(inst: &Instance, generated: String) -> Option<Instance> {
    let output = generated.trim().to_string();
    if output.is_empty() {
        log::warn!("dropping {:?}: latest model produced no output", inst.id);
        return None;
    }
    Some(Instance {
        output,
        origin: Origin::SyntheticRefined,
        ..inst.clone()
    })
}

fn check_origin(inst: &Instance, expected: Origin) -> Result<(), RefineError> {
    if inst.origin != expected {
        return Err(RefineError::WrongOrigin {
            id: inst.id.clone(),
            origin: inst.origin,
            expected,
        });
    }
    Ok(())
}

/// Refines one raw synthetic instance. `Ok(None)` means the generation was
/// empty and the instance is dropped.
pub fn refine_output(
    inst: &Instance,
    latest: &dyn Generator,
) -> Result<Option<Instance>, RefineError> {
    check_origin(inst, Origin::SyntheticRaw)?;
    let generated = complete(
        latest,
        &eval_prompt(&inst.input),
        &GenerationParams::greedy(),
    )
    .map_err(|source| RefineError::Generation {
        id: inst.id.clone(),
        source,
    })?;
    Ok(rewrite(inst, generated))
}

fn regenerate(
    pool: &[Instance],
    latest: &dyn Generator,
    expected: Origin,
) -> Result<RefineOutcome, RefineError> {
    for inst in pool {
        check_origin(inst, expected)?;
    }
    let prompts: Vec<String> = pool.iter().map(|i| eval_prompt(&i.input)).collect();
    let results = complete_many(latest, &prompts, &GenerationParams::greedy());
    let mut stats = RefineStats::default();
    let mut instances = Vec::with_capacity(pool.len());
    for (inst, res) in pool.iter().zip(results) {
        let generated = res.map_err(|source| RefineError::Generation {
            id: inst.id.clone(),
            source,
        })?;
        match rewrite(inst, generated) {
            Some(r) => {
                stats.refined += 1;
                instances.push(r);
            }
            None => stats.dropped += 1,
        }
    }
    Ok(RefineOutcome { instances, stats })
}

/// Refines every raw synthetic instance, keeping order and dropping empties.
pub fn refine_pool(
    pool: &[Instance],
    latest: &dyn Generator,
) -> Result<RefineOutcome, RefineError> {
    regenerate(pool, latest, Origin::SyntheticRaw)
}

/// Keeps real inputs and swaps their outputs for the latest model's
/// predictions (real-input / synthetic-output rehearsal).
pub fn regenerate_outputs(
    real: &[Instance],
    latest: &dyn Generator,
) -> Result<RefineOutcome, RefineError> {
    regenerate(real, latest, Origin::Real)
}
