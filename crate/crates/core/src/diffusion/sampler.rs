use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

/// Number of recent losses kept per step.
pub const HISTORY: usize = 10;

/// How training draws the diffusion step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StepSampling {
    #[default]
    Uniform,
    Importance,
}

impl std::fmt::Display for StepSampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StepSampling::Uniform => "uniform",
            StepSampling::Importance => "importance",
        })
    }
}

impl std::str::FromStr for StepSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(StepSampling::Uniform),
            "importance" => Ok(StepSampling::Importance),
            other => Err(Error::config(format!("unknown step sampler {other:?}"))),
        }
    }
}

/// Loss-aware step sampler: `p_t ∝ sqrt(mean of the last ten L_t^2)`,
/// uniform until every step has a full history.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceSampler {
    history: Vec<VecDeque<f64>>,
}

impl ImportanceSampler {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("sampler needs at least one step"));
        }
        Ok(ImportanceSampler {
            history: vec![VecDeque::with_capacity(HISTORY); steps],
        })
    }

    pub fn steps(&self) -> usize {
        self.history.len()
    }

    pub fn is_warm(&self) -> bool {
        self.history.iter().all(|h| h.len() == HISTORY)
    }

    /// Records one observed loss at step `t` (1-based).
    pub fn record(&mut self, t: usize, loss: f64) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::usage(format!("step {t} outside 1..={}", self.steps())));
        }
        if !loss.is_finite() {
            return Err(Error::numerical(format!("non-finite loss {loss} recorded at step {t}")));
        }
        let h = &mut self.history[t - 1];
        if h.len() == HISTORY {
            h.pop_front();
        }
        h.push_back(loss);
        Ok(())
    }

    /// Mean of the recorded squared losses per step (0 for empty histories).
    pub fn mean_squares(&self) -> Vec<f64> {
        self.history
            .iter()
            .map(|h| {
                if h.is_empty() {
                    0.0
                } else {
                    h.iter().map(|l| l * l).sum::<f64>() / h.len() as f64
                }
            })
            .collect()
    }

    /// Current sampling distribution over steps `1..=T`.
    pub fn probs(&self) -> Vec<f64> {
        let n = self.steps();
        if !self.is_warm() {
            return vec![1.0 / n as f64; n];
        }
        let roots: Vec<f64> = self.mean_squares().iter().map(|m| m.sqrt()).collect();
        let total: f64 = roots.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return vec![1.0 / n as f64; n];
        }
        roots.iter().map(|r| r / total).collect()
    }

    /// Draws `(t, p_t)` with `t` 1-based.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let p = self.probs();
        if !self.is_warm() {
            return (rng.random_range(1..=self.steps()), p[0]);
        }
        match WeightedIndex::new(&p) {
            Ok(dist) => {
                let i = dist.sample(rng);
                (i + 1, p[i])
            }
            Err(_) => (rng.random_range(1..=self.steps()), 1.0 / self.steps() as f64),
        }
    }

    pub fn histories(&self) -> impl Iterator<Item = &VecDeque<f64>> {
        self.history.iter()
    }

    /// One `;`-separated group per step, values `,`-separated, oldest first.
    pub fn to_text(&self) -> String {
        self.history
            .iter()
            .map(|h| h.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn from_text(text: &str, steps: usize) -> Result<Self> {
        let mut s = ImportanceSampler::new(steps)?;
        let groups: Vec<&str> = text.split(';').collect();
        if groups.len() != steps {
            return Err(Error::input(format!(
                "sampler history has {} steps, expected {steps}",
                groups.len()
            )));
        }
        for (i, g) in groups.iter().enumerate() {
            for v in g.split(',').filter(|v| !v.is_empty()) {
                let v: f64 = v
                    .parse()
                    .map_err(|_| Error::input(format!("bad sampler history value {v:?}")))?;
                s.record(i + 1, v)?;
            }
        }
        Ok(s)
    }
}
