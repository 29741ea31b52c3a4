//! Sub-event distributions: categorical heads for instrument and pitch and
//! a discretized mixture of logistics for time and velocity.

mod categorical;
mod dmol;
pub mod numeric;

pub use categorical::{categorical_log_prob, categorical_sample, CategoricalParams};
pub use dmol::{
    dmol_bin_log_prob, dmol_cdf, dmol_sample, Discretization, DmolParams, LOG_SCALE_FLOOR,
    TIME_DISCRETIZATION, VELOCITY_DISCRETIZATION,
};

use serde::{Deserialize, Serialize};

/// Sampling adjustments applied to one sub-event distribution.
///
/// A temperature of zero is accepted and means the greedy limit: the most
/// likely class or mixture component, and the component location rather
/// than a draw around it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingControls {
    /// Temperature on mixture weights ("which rhythmic interval").
    pub weight_temperature: f64,
    /// Temperature on component scales ("fine timing within it").
    pub scale_temperature: f64,
    pub truncation: Option<(f64, f64)>,
    pub whitelist: Option<Vec<usize>>,
    pub blacklist: Option<Vec<usize>>,
    pub class_temperature: f64,
}

impl Default for SamplingControls {
    fn default() -> Self {
        SamplingControls {
            weight_temperature: 1.0,
            scale_temperature: 1.0,
            truncation: None,
            whitelist: None,
            blacklist: None,
            class_temperature: 1.0,
        }
    }
}

impl SamplingControls {
    pub fn greedy() -> Self {
        SamplingControls {
            weight_temperature: 0.0,
            scale_temperature: 0.0,
            class_temperature: 0.0,
            ..Default::default()
        }
    }

    pub fn with_truncation(mut self, lo: f64, hi: f64) -> Self {
        self.truncation = Some((lo, hi));
        self
    }

    pub fn with_whitelist(mut self, classes: impl IntoIterator<Item = usize>) -> Self {
        self.whitelist = Some(classes.into_iter().collect());
        self
    }

    pub fn with_blacklist(mut self, classes: impl IntoIterator<Item = usize>) -> Self {
        self.blacklist = Some(classes.into_iter().collect());
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        let temps = [
            self.weight_temperature,
            self.scale_temperature,
            self.class_temperature,
        ];
        if temps.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(crate::Error::InvalidQuery(format!(
                "temperatures must be finite and non-negative, got {temps:?}"
            )));
        }
        if let Some((lo, hi)) = self.truncation {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(crate::Error::InvalidQuery(format!(
                    "truncation [{lo}, {hi}] is empty"
                )));
            }
        }
        if matches!(&self.whitelist, Some(w) if w.is_empty()) {
            return Err(crate::Error::InvalidQuery("whitelist is empty".into()));
        }
        Ok(())
    }

    /// Whether `class` survives the white/black lists.
    pub fn allows(&self, class: usize) -> bool {
        self.whitelist.as_ref().map_or(true, |w| w.contains(&class))
            && !self.blacklist.as_ref().map_or(false, |b| b.contains(&class))
    }
}
