//! The adaptive curriculum parameter `t` and the batch statistics that
//! drive it.
//!
//! `t` starts at 0 and follows an exponential moving average of a per-batch
//! difficulty statistic `r` (by default the mean ground-truth cosine). Early
//! batches have small `r`, keeping `t` small and hard pairs de-emphasized;
//! as the model improves, `r` and therefore `t` grow and hard pairs take
//! over. The EMA also absorbs the batch-to-batch noise of the statistic.

use crate::error::{Error, Result};
use crate::margin_losses::CosineBatch;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// Mean ground-truth cosine over the batch.
    #[default]
    MeanPositiveCosine,
    /// Midpoint of the fullest 0.01-wide histogram bin over `[-1, 1]`;
    /// ties go to the lower bin.
    ModePositiveCosine,
    /// Mean post-softmax ground-truth probability.
    MeanGtProbability,
}

impl StatisticKind {
    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::MeanPositiveCosine => "mean_positive_cosine",
            StatisticKind::ModePositiveCosine => "mode_positive_cosine",
            StatisticKind::MeanGtProbability => "mean_gt_probability",
        }
    }
}

/// Which side of the moving average the `momentum` weight multiplies.
///
/// The update is conventionally written `t_new = a*r + (1-a)*t_old` with
/// `a` called momentum, but a coefficient of 0.99 on the fresh statistic
/// would make `t` track `r` almost instantly (and its originators describe
/// the intent as smoothing). `OnHistory` therefore weights the old value:
/// `t_new = (1-momentum)*r + momentum*t_old`. `OnStatistic` keeps the
/// literal reading for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumPlacement {
    #[default]
    OnHistory,
    OnStatistic,
}

/// EMA state of the curriculum parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    t: f64,
    momentum: f64,
    iteration: u64,
    statistic: StatisticKind,
    placement: MomentumPlacement,
}

impl CurriculumState {
    /// Fresh state: `t = 0` before any update.
    pub fn new(
        momentum: f64,
        statistic: StatisticKind,
        placement: MomentumPlacement,
    ) -> Result<CurriculumState> {
        if !momentum.is_finite() || !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidInput(format!(
                "curriculum momentum must be in [0, 1], got {momentum}"
            )));
        }
        Ok(CurriculumState {
            t: 0.0,
            momentum,
            iteration: 0,
            statistic,
            placement,
        })
    }

    /// Restore a persisted state.
    pub fn restore(
        t: f64,
        momentum: f64,
        iteration: u64,
        statistic: StatisticKind,
        placement: MomentumPlacement,
    ) -> Result<CurriculumState> {
        let mut state = CurriculumState::new(momentum, statistic, placement)?;
        if !t.is_finite() {
            return Err(Error::InvalidInput(format!("curriculum t must be finite, got {t}")));
        }
        state.t = t;
        state.iteration = iteration;
        Ok(state)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn statistic_kind(&self) -> StatisticKind {
        self.statistic
    }

    pub fn placement(&self) -> MomentumPlacement {
        self.placement
    }

    /// Fold one batch statistic into the average and advance the iteration
    /// counter.
    pub fn update(mut self, r: f64) -> Result<CurriculumState> {
        if !r.is_finite() {
            return Err(Error::InvalidInput(format!("batch statistic must be finite, got {r}")));
        }
        self.t = match self.placement {
            MomentumPlacement::OnHistory => (1.0 - self.momentum) * r + self.momentum * self.t,
            MomentumPlacement::OnStatistic => self.momentum * r + (1.0 - self.momentum) * self.t,
        };
        self.iteration += 1;
        Ok(self)
    }
}

/// The per-batch difficulty statistic `r`.
///
/// `prob_gt` is only consulted for [`StatisticKind::MeanGtProbability`] and
/// must then have one entry per sample.
pub fn batch_statistic(batch: &CosineBatch, prob_gt: &[f64], kind: StatisticKind) -> Result<f64> {
    let b = batch.batch_size();
    match kind {
        StatisticKind::MeanPositiveCosine => {
            let mut sum = 0.0;
            for i in 0..b {
                sum += batch.cos_gt(i);
            }
            Ok(sum / b as f64)
        }
        StatisticKind::ModePositiveCosine => {
            let mut counts = [0u32; 200];
            for i in 0..b {
                // Bin k covers [-1 + 0.01k, -1 + 0.01(k+1)); the top edge
                // folds into the last bin.
                let k = (((batch.cos_gt(i) + 1.0) * 100.0).floor() as usize).min(199);
                counts[k] += 1;
            }
            let mut best = 0;
            for k in 1..200 {
                if counts[k] > counts[best] {
                    best = k;
                }
            }
            Ok(-1.0 + 0.01 * best as f64 + 0.005)
        }
        StatisticKind::MeanGtProbability => {
            if prob_gt.len() != b {
                return Err(Error::ShapeMismatch(format!(
                    "{} probabilities for a batch of {b}",
                    prob_gt.len()
                )));
            }
            if let Some(&p) = prob_gt.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
                return Err(Error::InvalidInput(format!(
                    "ground-truth probability {p} outside [0, 1]"
                )));
            }
            Ok(prob_gt.iter().sum::<f64>() / b as f64)
        }
    }
}
