//! Portrait Interpretation Quality: equal-weight mean of the four aspect
//! scores, with identity retrieval counted as its own aspect.

use super::MetricsError;

/// Per-task numbers that feed the PIQ score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiqInputs {
    pub macro_map: f64,
    pub macro_rank1: f64,
    /// Gender, age, physique, height macro F1.
    pub appearance: [f64; 4],
    /// Body, arm macro F1.
    pub posture: [f64; 2],
    pub expression: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectScores {
    pub reid: f64,
    pub appearance: f64,
    pub posture: f64,
    pub emotion: f64,
}

impl AspectScores {
    pub fn piq(&self) -> f64 {
        (self.reid + self.appearance + self.posture + self.emotion) / 4.0
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), MetricsError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(MetricsError::RangeError { name, value })
    }
}

impl PiqInputs {
    pub fn validate(&self) -> Result<(), MetricsError> {
        check_unit("macro_map", self.macro_map)?;
        check_unit("macro_rank1", self.macro_rank1)?;
        for (name, v) in ["gender", "age", "physique", "height"]
            .into_iter()
            .zip(self.appearance)
        {
            check_unit(name, v)?;
        }
        for (name, v) in ["body", "arm"].into_iter().zip(self.posture) {
            check_unit(name, v)?;
        }
        check_unit("expression", self.expression)
    }

    pub fn aspect_scores(&self) -> Result<AspectScores, MetricsError> {
        self.validate()?;
        Ok(AspectScores {
            reid: (self.macro_rank1 + self.macro_map) / 2.0,
            appearance: self.appearance.iter().sum::<f64>() / 4.0,
            posture: self.posture.iter().sum::<f64>() / 2.0,
            emotion: self.expression,
        })
    }
}

pub fn piq(inputs: &PiqInputs) -> Result<f64, MetricsError> {
    Ok(inputs.aspect_scores()?.piq())
}
