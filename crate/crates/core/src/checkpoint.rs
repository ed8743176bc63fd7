//! Versioned JSON checkpoints bundling everything prediction needs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PreprocessPlan, Schema};
use crate::error::{Error, Result};
use crate::finegray::BaselineCif;
use crate::nam::NamModel;
use crate::survival::CensoringModel;
use crate::trainer::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    /// Column roles of the training file, reused to read prediction input.
    pub schema: Option<Schema>,
    /// Absent when the model was trained on already preprocessed data.
    pub plan: Option<PreprocessPlan>,
    pub model: NamModel,
    pub baseline: BaselineCif,
    pub censoring: CensoringModel,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(
        feature_names: Vec<String>,
        schema: Option<Schema>,
        plan: Option<PreprocessPlan>,
        model: NamModel,
        baseline: BaselineCif,
        censoring: CensoringModel,
        config: TrainConfig,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            feature_names,
            schema,
            plan,
            model,
            baseline,
            censoring,
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::InvalidInput(format!(
                    "checkpoint format {v} is not supported (expected {FORMAT_VERSION})"
                )))
            }
            None => {
                return Err(Error::InvalidInput(
                    "checkpoint lacks format_version".into(),
                ))
            }
        }
        let ck: Checkpoint = serde_json::from_value(probe)?;
        ck.model.arch.validate()?;
        if ck.feature_names.len() != ck.model.num_features() {
            return Err(Error::Shape(format!(
                "checkpoint lists {} features for a {}-feature model",
                ck.feature_names.len(),
                ck.model.num_features()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finegray::CauseBaseline;
    use crate::nam::Architecture;

    fn sample() -> Checkpoint {
        let arch = Architecture {
            batch_norm: true,
            ..Architecture::new(2, 2, vec![3, 2])
        };
        let model = NamModel::init(arch, 9).unwrap();
        let baseline = BaselineCif {
            causes: vec![
                CauseBaseline {
                    times: vec![0.1, 0.7],
                    cum_hazard: vec![0.2, 1.0 / 3.0],
                },
                CauseBaseline {
                    times: vec![0.3],
                    cum_hazard: vec![0.123456789012345],
                },
            ],
            max_time: 2.5,
        };
        Checkpoint::new(
            vec!["a".into(), "b".into()],
            Some(Schema::new("time", "event", 2)),
            None,
            model,
            baseline,
            CensoringModel::unit(),
            TrainConfig::default(),
        )
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ck = sample();
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model.flat_params(), ck.model.flat_params());
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn rejects_other_versions() {
        let text = sample()
            .to_json()
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(Checkpoint::from_json(&text).is_err());
    }
}
