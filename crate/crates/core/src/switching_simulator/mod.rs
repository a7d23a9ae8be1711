//! Forward simulation of the output and regime processes under an intensity
//! policy, survival weights, and Monte Carlo valuation of the agent and of
//! each principal.

mod policy;
mod simulate;
mod valuation;

pub use policy::{ConstantRates, IntensityPolicy, OptimalPolicy, TimeVaryingRates};
pub use simulate::{
    check_girsanov, simulate_switching, survival_between, survival_weights, GirsanovReport,
    JumpRecord, SimSetup, SwitchTrajectory, SwitchingSystem, MAX_STEP_JUMP_MASS,
};
pub use valuation::{
    agent_value_mc, agent_value_under, principal_value_direct, principal_value_weighted,
    principal_value_weighted_cv, stay_put_agent_value, ValueReport, ValueSeeds,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityForm {
    /// `U(w) = min(w², cap)`.
    CappedQuadratic,
    /// `U ≡ 0`.
    Zero,
}

/// The principals' cost of paying `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilitySpec {
    pub form: UtilityForm,
    pub cap: f64,
}

impl Default for UtilitySpec {
    fn default() -> Self {
        UtilitySpec {
            form: UtilityForm::CappedQuadratic,
            cap: 1e6,
        }
    }
}

impl UtilitySpec {
    pub fn capped(cap: f64) -> Self {
        UtilitySpec {
            form: UtilityForm::CappedQuadratic,
            cap,
        }
    }

    pub fn zero() -> Self {
        UtilitySpec {
            form: UtilityForm::Zero,
            cap: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cap > 0.0) && self.form == UtilityForm::CappedQuadratic {
            return Err(Error::Config(format!(
                "utility.cap must be > 0, got {}",
                self.cap
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, w: f64) -> f64 {
        match self.form {
            UtilityForm::CappedQuadratic => (w * w).min(self.cap),
            UtilityForm::Zero => 0.0,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.form == UtilityForm::Zero || self.cap.is_finite()
    }
}
