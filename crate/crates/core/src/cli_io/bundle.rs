//! Parameter bundles: the shipped published values, or the output of `estimate`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostParams, InsurancePlan, PreferenceParams};

pub const PUBLISHED_PARAMS_JSON: &str = include_str!("../../data/published_params.json");

/// Cost, preference and plan parameters. Other fields in the file (such as
/// regression tables or provenance notes) are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsBundle {
    pub cost_params: CostParams,
    pub preference_params: PreferenceParams,
    pub plan: InsurancePlan,
}

impl ParamsBundle {
    pub fn published() -> Self {
        Self::from_json(PUBLISHED_PARAMS_JSON).expect("bundled parameter file is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: ParamsBundle = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Data(format!(
                "cannot read parameter file {}: {e}",
                path.display()
            ))
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.cost_params.validate()?;
        self.preference_params.validate()?;
        self.plan.validate()
    }
}

/// The bundled rural-minority preference estimates.
pub fn published_rural_minority() -> PreferenceParams {
    #[derive(Deserialize)]
    struct Extra {
        preference_params_rural_minority: PreferenceParams,
    }
    serde_json::from_str::<Extra>(PUBLISHED_PARAMS_JSON)
        .expect("bundled parameter file is valid")
        .preference_params_rural_minority
}
