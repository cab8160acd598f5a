use serde::{Deserialize, Serialize};

use crate::error::{FormatError, InvariantError};
use crate::json;

/// The five quality scores for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub s_tc: f64,
    pub s_cs: f64,
    pub s_pa: f64,
    pub s_re: f64,
    pub s_ic: f64,
    #[serde(default)]
    pub findings: Vec<String>,
}

impl JudgeReport {
    pub fn validate(&self) -> Result<(), InvariantError> {
        let checks = [
            ("s_tc", self.s_tc, 1.0),
            ("s_cs", self.s_cs, 5.0),
            ("s_pa", self.s_pa, 5.0),
            ("s_re", self.s_re, 5.0),
            ("s_ic", self.s_ic, 1.0),
        ];
        for (name, value, max) in checks {
            if !(0.0..=max).contains(&value) {
                return Err(InvariantError::new("judge report", format!("{name} = {value} outside [0, {max}]")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        json::to_string(self)
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let report: JudgeReport = json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }
}
