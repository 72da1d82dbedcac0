//! Deterministic synthetic tasks: symbol-sequence copying, the adding
//! problem, and a 2-D spiral classification set.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Vector;
use crate::util::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Predict the input symbol at every position.
    SequenceCopy { len: usize, vocab: usize },
    /// Regress the sum of the two marked values in a value sequence.
    AddingProblem { len: usize },
    /// Classify interleaved 2-D spiral arms. `points` is the total
    /// dataset size; labels stay balanced within one point.
    Spiral2d { classes: usize, points: usize },
}

impl TaskKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskKind::SequenceCopy { len, vocab } => {
                if len < 1 || vocab < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "sequence copy needs len >= 1 and vocab >= 2, got len {len}, vocab {vocab}"
                    )));
                }
            }
            TaskKind::AddingProblem { len } => {
                if len < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "the adding problem needs len >= 2 to place two markers, got {len}"
                    )));
                }
            }
            TaskKind::Spiral2d { classes, points } => {
                if classes < 2 || points < classes {
                    return Err(Error::InvalidConfig(format!(
                        "spiral needs classes >= 2 and points >= classes, got {classes}/{points}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Model input dimension this task feeds.
    pub fn input_dim(&self) -> usize {
        match *self {
            TaskKind::SequenceCopy { vocab, .. } => vocab,
            TaskKind::AddingProblem { .. } => 2,
            TaskKind::Spiral2d { .. } => 2,
        }
    }

    /// Model output dimension this task expects.
    pub fn output_dim(&self) -> usize {
        match *self {
            TaskKind::SequenceCopy { vocab, .. } => vocab,
            TaskKind::AddingProblem { .. } => 1,
            TaskKind::Spiral2d { classes, .. } => classes,
        }
    }

    pub fn is_sequence(&self) -> bool {
        !matches!(self, TaskKind::Spiral2d { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(flatten)]
    pub kind: TaskKind,
    pub seed: u64,
}

/// One copy-task sequence; targets equal inputs position by position.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyInstance {
    pub symbols: Vec<usize>,
    /// One-hot encodings of `symbols`, ready to feed the model.
    pub inputs: Vec<Vector>,
}

/// One adding-problem sequence: per-step `(value, marker)` pairs and the
/// sum of the two marked values.
#[derive(Debug, Clone, PartialEq)]
pub struct AddingInstance {
    pub inputs: Vec<Vector>,
    pub marked: (usize, usize),
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiralPoint {
    pub input: Vector,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Copy {
        vocab: usize,
        instances: Vec<CopyInstance>,
    },
    Adding {
        len: usize,
        instances: Vec<AddingInstance>,
    },
    Spiral {
        classes: usize,
        points: Vec<SpiralPoint>,
    },
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Copy { instances, .. } => instances.len(),
            Dataset::Adding { instances, .. } => instances.len(),
            Dataset::Spiral { points, .. } => points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn one_hot(symbol: usize, vocab: usize) -> Vector {
    let mut v = vec![0.0; vocab];
    v[symbol] = 1.0;
    Vector::from(v)
}

/// Generates a dataset of `count` instances (spiral tasks carry their
/// size in the kind and ignore `count`). Deterministic in the spec.
pub fn generate_task(spec: &TaskSpec, count: usize) -> Result<Dataset> {
    spec.kind.validate()?;
    let mut rng = rng_for(spec.seed, &[0xda7a]);
    match spec.kind {
        TaskKind::SequenceCopy { len, vocab } => {
            if count == 0 {
                return Err(Error::InvalidConfig("dataset count must be >= 1".into()));
            }
            let instances = (0..count)
                .map(|_| {
                    let symbols: Vec<usize> =
                        (0..len).map(|_| rng.random_range(0..vocab)).collect();
                    let inputs = symbols.iter().map(|&s| one_hot(s, vocab)).collect();
                    CopyInstance { symbols, inputs }
                })
                .collect();
            Ok(Dataset::Copy { vocab, instances })
        }
        TaskKind::AddingProblem { len } => {
            if count == 0 {
                return Err(Error::InvalidConfig("dataset count must be >= 1".into()));
            }
            let instances = (0..count)
                .map(|_| {
                    let values: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
                    let first = rng.random_range(0..len);
                    let mut second = rng.random_range(0..len - 1);
                    if second >= first {
                        second += 1;
                    }
                    let inputs = values
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let marker = if i == first || i == second { 1.0 } else { 0.0 };
                            Vector::from(vec![v, marker])
                        })
                        .collect();
                    AddingInstance {
                        inputs,
                        marked: (first.min(second), first.max(second)),
                        target: values[first] + values[second],
                    }
                })
                .collect();
            Ok(Dataset::Adding { len, instances })
        }
        TaskKind::Spiral2d { classes, points } => {
            let mut pts = Vec::with_capacity(points);
            for c in 0..classes {
                // Distribute points as evenly as possible across classes.
                let share = points / classes + usize::from(c < points % classes);
                let offset = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                for i in 0..share {
                    let t = 0.15 + 0.85 * (i as f64 + 0.5) / share as f64;
                    let angle = offset + t * 3.0 * std::f64::consts::PI
                        + rng.random_range(-0.08..0.08);
                    let radius = t + rng.random_range(-0.02..0.02);
                    pts.push(SpiralPoint {
                        input: Vector::from(vec![radius * angle.cos(), radius * angle.sin()]),
                        label: c,
                    });
                }
            }
            pts.shuffle(&mut rng);
            Ok(Dataset::Spiral { classes, points: pts })
        }
    }
}
