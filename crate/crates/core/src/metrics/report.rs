//! Evaluation report and its JSON form.
//!
//! Every number in the JSON is written with exactly six decimals.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::piq::{AspectScores, PiqInputs};
use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReidScores {
    pub macro_map: f64,
    pub macro_rank1: f64,
    pub macro_rank5: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceScores {
    pub gender: f64,
    pub age: f64,
    pub physique: f64,
    pub height: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostureScores {
    pub body: f64,
    pub arm: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionScores {
    pub expression: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub reid: ReidScores,
    pub appearance: AppearanceScores,
    pub posture: PostureScores,
    pub emotion: EmotionScores,
    pub piq: f64,
}

impl EvaluationReport {
    /// Assembles the report from retrieval scores and the seven macro F1
    /// values in canonical task order.
    pub fn new(reid: ReidScores, task_f1: [f64; 7]) -> Result<Self, MetricsError> {
        let inputs = PiqInputs {
            macro_map: reid.macro_map,
            macro_rank1: reid.macro_rank1,
            appearance: [task_f1[0], task_f1[1], task_f1[2], task_f1[3]],
            posture: [task_f1[4], task_f1[5]],
            expression: task_f1[6],
        };
        if !(0.0..=1.0).contains(&reid.macro_rank5) {
            return Err(MetricsError::RangeError {
                name: "macro_rank5",
                value: reid.macro_rank5,
            });
        }
        let scores: AspectScores = inputs.aspect_scores()?;
        Ok(Self {
            reid,
            appearance: AppearanceScores {
                gender: task_f1[0],
                age: task_f1[1],
                physique: task_f1[2],
                height: task_f1[3],
                score: scores.appearance,
            },
            posture: PostureScores {
                body: task_f1[4],
                arm: task_f1[5],
                score: scores.posture,
            },
            emotion: EmotionScores {
                expression: task_f1[6],
            },
            piq: scores.piq(),
        })
    }

    pub fn to_json(&self) -> String {
        let out = Fixed {
            reid: FixedReid {
                macro_map: fixed6(self.reid.macro_map),
                macro_rank1: fixed6(self.reid.macro_rank1),
                macro_rank5: fixed6(self.reid.macro_rank5),
            },
            appearance: FixedAppearance {
                gender: fixed6(self.appearance.gender),
                age: fixed6(self.appearance.age),
                physique: fixed6(self.appearance.physique),
                height: fixed6(self.appearance.height),
                score: fixed6(self.appearance.score),
            },
            posture: FixedPosture {
                body: fixed6(self.posture.body),
                arm: fixed6(self.posture.arm),
                score: fixed6(self.posture.score),
            },
            emotion: FixedEmotion {
                expression: fixed6(self.emotion.expression),
            },
            piq: fixed6(self.piq),
        };
        let mut s = serde_json::to_string_pretty(&out).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The report with every value rounded to six decimals, i.e. what a
    /// reader of [`EvaluationReport::to_json`] sees.
    pub fn rounded(&self) -> Self {
        Self::from_json(&self.to_json()).expect("own output parses")
    }
}

fn fixed6(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.6}")).expect("fixed-point literal is valid JSON")
}

#[derive(Serialize)]
struct Fixed {
    reid: FixedReid,
    appearance: FixedAppearance,
    posture: FixedPosture,
    emotion: FixedEmotion,
    piq: Box<RawValue>,
}

#[derive(Serialize)]
struct FixedReid {
    macro_map: Box<RawValue>,
    macro_rank1: Box<RawValue>,
    macro_rank5: Box<RawValue>,
}

#[derive(Serialize)]
struct FixedAppearance {
    gender: Box<RawValue>,
    age: Box<RawValue>,
    physique: Box<RawValue>,
    height: Box<RawValue>,
    score: Box<RawValue>,
}

#[derive(Serialize)]
struct FixedPosture {
    body: Box<RawValue>,
    arm: Box<RawValue>,
    score: Box<RawValue>,
}

#[derive(Serialize)]
struct FixedEmotion {
    expression: Box<RawValue>,
}
