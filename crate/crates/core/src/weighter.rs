//! Adaptive loss weighting driven by descent rates. Each stage loss keeps an
//! exponential moving average; the ratio of consecutive EMAs measures how
//! fast that stage is still improving, and a softmax over the two ratios
//! (scaled by a temperature) hands more weight to the stage that is
//! descending more slowly. Weights are plain scalars — they multiply loss
//! nodes but receive no gradient themselves.

use crate::config::WeighterSection;
use crate::error::{CoreError, Result};

/// Rates are clamped into [1/RATE_CLAMP, RATE_CLAMP] before the softmax so a
/// single degenerate batch cannot saturate the weights.
const RATE_CLAMP: f64 = 10.0;
/// EMAs below this are treated as converged; the rate falls back to 1.
const EMA_FLOOR: f64 = 1e-12;

/// One update's outputs, in trace order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeighterState {
    pub loss_retrieval: f64,
    pub loss_ranking: f64,
    pub rate_retrieval: f64,
    pub rate_ranking: f64,
    pub weight_retrieval: f64,
    pub weight_ranking: f64,
}

/// Streaming weight controller; feed it one (retrieval, ranking) mean-loss
/// pair per step (or per epoch) and apply the weights it returns to the
/// same step's gradient pass.
#[derive(Debug, Clone)]
pub struct AdaptiveWeighter {
    enabled: bool,
    temperature: f64,
    lambda_retrieval: f64,
    lambda_ranking: f64,
    decay: f64,
    ema_retrieval: Option<f64>,
    ema_ranking: Option<f64>,
}

impl AdaptiveWeighter {
    pub fn new(cfg: &WeighterSection) -> Self {
        AdaptiveWeighter {
            enabled: cfg.enabled,
            temperature: cfg.temperature,
            lambda_retrieval: cfg.lambda_retrieval,
            lambda_ranking: cfg.lambda_ranking,
            decay: cfg.ema_decay,
            ema_retrieval: None,
            ema_ranking: None,
        }
    }

    /// Rescales the ranking task's base weight; the trainer uses this once
    /// after the first measurement when `auto_scale` is on.
    pub fn set_lambda_ranking(&mut self, lambda: f64) {
        self.lambda_ranking = lambda;
    }

    pub fn lambda_ranking(&self) -> f64 {
        self.lambda_ranking
    }

    /// The state an epoch-granularity trainer applies before any update has
    /// run: unit rates and the bootstrap (equal-split) weights. Does not
    /// advance the EMAs.
    pub fn initial_state(&self) -> WeighterState {
        let (weight_retrieval, weight_ranking) = if self.enabled {
            (0.5 * self.lambda_retrieval, 0.5 * self.lambda_ranking)
        } else {
            (self.lambda_retrieval, self.lambda_ranking)
        };
        WeighterState {
            loss_retrieval: 0.0,
            loss_ranking: 0.0,
            rate_retrieval: 1.0,
            rate_ranking: 1.0,
            weight_retrieval,
            weight_ranking,
        }
    }

    /// Advances both EMAs and returns this step's rates and weights. The
    /// first call bootstraps the EMAs and reports unit rates (equal split).
    pub fn update(&mut self, loss_retrieval: f64, loss_ranking: f64) -> Result<WeighterState> {
        for (name, loss) in [("retrieval", loss_retrieval), ("ranking", loss_ranking)] {
            if !loss.is_finite() || loss < 0.0 {
                return Err(CoreError::Numeric(format!(
                    "{name} loss {loss} fed to the weighter"
                )));
            }
        }
        let rate_retrieval = Self::advance(
            &mut self.ema_retrieval,
            loss_retrieval,
            self.decay,
            "retrieval",
        );
        let rate_ranking =
            Self::advance(&mut self.ema_ranking, loss_ranking, self.decay, "ranking");

        let (weight_retrieval, weight_ranking) = if self.enabled {
            let (sm_retr, sm_rank) = softmax2(
                rate_retrieval / self.temperature,
                rate_ranking / self.temperature,
            );
            (
                self.lambda_retrieval * sm_retr,
                self.lambda_ranking * sm_rank,
            )
        } else {
            (self.lambda_retrieval, self.lambda_ranking)
        };
        Ok(WeighterState {
            loss_retrieval,
            loss_ranking,
            rate_retrieval,
            rate_ranking,
            weight_retrieval,
            weight_ranking,
        })
    }

    /// EMA step returning the clamped descent rate Ē_t / Ē_{t−1}.
    fn advance(ema: &mut Option<f64>, loss: f64, decay: f64, name: &str) -> f64 {
        match *ema {
            None => {
                *ema = Some(loss);
                1.0
            }
            Some(prev) => {
                let next = decay * prev + (1.0 - decay) * loss;
                *ema = Some(next);
                if prev.abs() < EMA_FLOOR {
                    log::warn!("{name} loss EMA ≈ 0; holding its rate at 1");
                    return 1.0;
                }
                let rate = next / prev;
                if !(1.0 / RATE_CLAMP..=RATE_CLAMP).contains(&rate) {
                    log::warn!("{name} descent rate {rate:.3e} clamped");
                    rate.clamp(1.0 / RATE_CLAMP, RATE_CLAMP)
                } else {
                    rate
                }
            }
        }
    }
}

/// Two-way softmax, stabilized by subtracting the max.
fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let z = ea + eb;
    (ea / z, eb / z)
}
