use alloc::format;
use serde::{Deserialize, Serialize};

use crate::gmm::GmmOptions;
use crate::{Error, Result};

/// Named loop variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Balanced exploit/explore sampling with adaptive `d` and `K`.
    #[default]
    #[serde(rename = "clotho")]
    Adaptive,
    /// Ablation: random batches, `K` and `d` pinned to their initial values.
    GmmBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Balanced,
    Random,
}

/// Space in which exploration distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpace {
    #[default]
    Projected,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Target reference set size `N` (the labelling budget).
    pub target_size: usize,
    pub batch_size: usize,
    /// Fraction of each batch chosen by exploration.
    pub alpha: f64,
    pub runs_per_label: u32,
    pub k_init: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub d_init: usize,
    pub d_min: usize,
    pub d_step: usize,
    pub seed: u64,
    pub preset: Preset,
    /// Overrides the preset's sampling strategy when set.
    pub sampling: Option<Sampling>,
    /// Decrease `K` when perplexity drops below this fraction of `K`.
    pub perplexity_low: f64,
    /// Increase `K` when perplexity exceeds this fraction of `K`.
    pub perplexity_high: f64,
    pub cv_folds: usize,
    pub explore_space: DistanceSpace,
    pub gmm: GmmOptions,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            target_size: 500,
            batch_size: 10,
            alpha: 0.5,
            runs_per_label: 10,
            k_init: 5,
            k_min: 1,
            k_max: 50,
            d_init: 10,
            d_min: 5,
            d_step: 10,
            seed: 0,
            preset: Preset::Adaptive,
            sampling: None,
            perplexity_low: 0.6,
            perplexity_high: 0.9,
            cv_folds: 3,
            explore_space: DistanceSpace::Projected,
            gmm: GmmOptions::default(),
        }
    }
}

impl CampaignConfig {
    pub fn gmm_base() -> Self {
        CampaignConfig { preset: Preset::GmmBase, ..Default::default() }
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling.unwrap_or(match self.preset {
            Preset::Adaptive => Sampling::Balanced,
            Preset::GmmBase => Sampling::Random,
        })
    }

    pub fn adapts(&self) -> bool {
        self.preset == Preset::Adaptive
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &'static str, reason: alloc::string::String| Err(Error::Config { field, reason });
        if self.batch_size == 0 {
            return err("batch_size", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return err("alpha", format!("{} is outside [0, 1]", self.alpha));
        }
        if self.runs_per_label == 0 {
            return err("runs_per_label", "must be at least 1".into());
        }
        if self.k_min == 0 {
            return err("k_min", "must be at least 1".into());
        }
        if self.k_max < self.k_min {
            return err("k_max", format!("{} is below k_min {}", self.k_max, self.k_min));
        }
        if !(self.k_min..=self.k_max).contains(&self.k_init) {
            return err("k_init", format!("{} is outside [k_min, k_max]", self.k_init));
        }
        if self.d_min < 5 {
            return err("d_min", format!("{} is below the floor of 5", self.d_min));
        }
        if self.d_init < self.d_min {
            return err("d_init", format!("{} is below d_min {}", self.d_init, self.d_min));
        }
        if self.d_step == 0 {
            return err("d_step", "must be at least 1".into());
        }
        if !(0.0 < self.perplexity_low && self.perplexity_low < self.perplexity_high && self.perplexity_high <= 1.0) {
            return err("perplexity_low", "need 0 < perplexity_low < perplexity_high <= 1".into());
        }
        if self.cv_folds < 2 {
            return err("cv_folds", "must be at least 2".into());
        }
        if !(self.gmm.tol > 0.0) || self.gmm.max_iter == 0 || !(self.gmm.reg_scale > 0.0) {
            return err("gmm", "tol, max_iter and reg_scale must be positive".into());
        }
        Ok(())
    }
}
