//! Built-in synthetic sequence tasks used for training and evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Cross-entropy against a class index.
    Class(usize),
    /// Half squared error against a vector.
    Value(Vec<f64>),
}

/// One input sequence and its per-step supervision (`None` = unsupervised).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Option<Target>>,
}

/// Synthetic sequence task.
///
/// * `copy`: `length` symbols from an alphabet of `alphabet`, `delay` blanks,
///   a delimiter, then `length` blank steps during which the symbols must be
///   reproduced in order. Inputs are one-hot, zero padded to `input_dim`.
/// * `adding`: `length` steps of `(value, marker)`; exactly two markers are
///   set and the final step must output the sum of the marked values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum SyntheticTask {
    Copy {
        alphabet: usize,
        length: usize,
        delay: usize,
        input_dim: usize,
        output_dim: usize,
    },
    Adding {
        length: usize,
        input_dim: usize,
        output_dim: usize,
    },
}

impl SyntheticTask {
    pub fn copy_memory(alphabet: usize, length: usize, delay: usize, input_dim: usize, output_dim: usize) -> Self {
        SyntheticTask::Copy {
            alphabet,
            length,
            delay,
            input_dim,
            output_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SyntheticTask::Copy { input_dim, .. } | SyntheticTask::Adding { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SyntheticTask::Copy { output_dim, .. } | SyntheticTask::Adding { output_dim, .. } => *output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SyntheticTask::Copy {
                alphabet,
                length,
                input_dim,
                output_dim,
                ..
            } => {
                if alphabet < 2 || length == 0 {
                    return Err(Error::Config("copy task needs alphabet >= 2 and length >= 1".into()));
                }
                if input_dim < alphabet + 2 {
                    return Err(Error::Config(format!("copy task needs input_dim >= {}", alphabet + 2)));
                }
                if output_dim < alphabet {
                    return Err(Error::Config(format!("copy task needs output_dim >= {alphabet}")));
                }
            }
            SyntheticTask::Adding {
                length,
                input_dim,
                output_dim,
            } => {
                if length < 2 || input_dim < 2 || output_dim < 1 {
                    return Err(Error::Config(
                        "adding task needs length >= 2, input_dim >= 2, output_dim >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Example {
        match *self {
            SyntheticTask::Copy {
                alphabet,
                length,
                delay,
                input_dim,
                ..
            } => {
                let blank = alphabet;
                let delim = alphabet + 1;
                let symbols: Vec<usize> = (0..length).map(|_| rng.gen_range(0..alphabet)).collect();
                let total = 2 * length + delay + 1;
                let one_hot = |k: usize| {
                    let mut v = vec![0.0; input_dim];
                    v[k] = 1.0;
                    v
                };
                let mut inputs = Vec::with_capacity(total);
                let mut targets = Vec::with_capacity(total);
                for &s in &symbols {
                    inputs.push(one_hot(s));
                    targets.push(None);
                }
                for _ in 0..delay {
                    inputs.push(one_hot(blank));
                    targets.push(None);
                }
                inputs.push(one_hot(delim));
                targets.push(None);
                for &s in &symbols {
                    inputs.push(one_hot(blank));
                    targets.push(Some(Target::Class(s)));
                }
                Example { inputs, targets }
            }
            SyntheticTask::Adding {
                length,
                input_dim,
                output_dim,
            } => {
                let a = rng.gen_range(0..length);
                let mut b = rng.gen_range(0..length - 1);
                if b >= a {
                    b += 1;
                }
                let mut sum = 0.0;
                let inputs = (0..length)
                    .map(|t| {
                        let mut v = vec![0.0; input_dim];
                        v[0] = rng.gen_range(0.0..1.0);
                        if t == a || t == b {
                            v[1] = 1.0;
                            sum += v[0];
                        }
                        v
                    })
                    .collect();
                let mut targets = vec![None; length];
                let mut target = vec![0.0; output_dim];
                target[0] = sum;
                targets[length - 1] = Some(Target::Value(target));
                Example { inputs, targets }
            }
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Example> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

/// Absolute error under which an `adding` prediction counts as correct.
pub const ADDING_TOLERANCE: f64 = 0.04;

/// Loss of one example and its gradient with respect to every output.
///
/// The loss is averaged over supervised steps.
pub fn example_loss(outputs: &[Vec<f64>], ex: &Example) -> Result<(f64, Vec<Vec<f64>>)> {
    if outputs.len() != ex.targets.len() {
        return Err(Error::dim("output and target sequences differ in length"));
    }
    let supervised = ex.targets.iter().filter(|t| t.is_some()).count().max(1) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (out, target) in outputs.iter().zip(&ex.targets) {
        let mut g = vec![0.0; out.len()];
        match target {
            None => {}
            Some(Target::Class(k)) => {
                let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = out.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                loss += -(exps[*k] / z).ln();
                for (gi, e) in g.iter_mut().zip(&exps) {
                    *gi = e / z / supervised;
                }
                g[*k] -= 1.0 / supervised;
            }
            Some(Target::Value(v)) => {
                for ((gi, o), t) in g.iter_mut().zip(out).zip(v) {
                    loss += 0.5 * (o - t) * (o - t);
                    *gi = (o - t) / supervised;
                }
            }
        }
        grads.push(g);
    }
    Ok((loss / supervised, grads))
}

/// Mean loss and error rate over a set of examples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub loss: f64,
    pub error_rate: f64,
}

impl Metrics {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.error_rate
    }
}

/// Counts correct predictions at supervised steps.
pub fn step_correct(out: &[f64], target: &Target) -> bool {
    match target {
        Target::Class(k) => {
            let best = out
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0;
            best == *k
        }
        Target::Value(v) => (out[0] - v[0]).abs() <= ADDING_TOLERANCE,
    }
}

/// Evaluates `forward` on every example.
pub fn evaluate<F>(examples: &[Example], mut forward: F) -> Result<Metrics>
where
    F: FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    let mut loss = 0.0;
    let mut steps = 0usize;
    let mut wrong = 0usize;
    for ex in examples {
        let out = forward(&ex.inputs)?;
        loss += example_loss(&out, ex)?.0;
        for (o, t) in out.iter().zip(&ex.targets) {
            if let Some(t) = t {
                steps += 1;
                if !step_correct(o, t) {
                    wrong += 1;
                }
            }
        }
    }
    Ok(Metrics {
        loss: loss / examples.len().max(1) as f64,
        error_rate: wrong as f64 / steps.max(1) as f64,
    })
}
