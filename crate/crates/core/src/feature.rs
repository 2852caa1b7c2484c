//! Feature taxonomy, answer validation, question flow and vector encoding.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{Condition, ConditionProblem};
use crate::ErrorCode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical { values: Vec<String> },
    Numeric { min: f64, max: f64 },
    Boolean,
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Categorical { .. } => "categorical",
            FeatureKind::Numeric { .. } => "numeric",
            FeatureKind::Boolean => "boolean",
        }
    }

    /// Number of vector slots this feature occupies.
    pub fn width(&self) -> usize {
        match self {
            FeatureKind::Categorical { values } => values.len(),
            FeatureKind::Numeric { .. } | FeatureKind::Boolean => 1,
        }
    }
}

/// One question of the consultation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub id: String,
    pub prompt: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_condition: Option<Condition>,
    #[serde(default = "default_required")]
    pub required: bool,
}

fn default_required() -> bool {
    true
}

/// A typed answer. On the wire it is a bare JSON string, number or boolean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Bool(bool),
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("{feature}: {value} is outside [{min}, {max}]")]
    ValueOutOfRange {
        feature: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{feature}: {value:?} is not one of the allowed values")]
    NotInVocabulary { feature: String, value: String },
    #[error("{feature}: expected a {expected} answer")]
    TypeMismatch { feature: String, expected: &'static str },
    #[error("features incomplete, next unanswered question is {next:?}")]
    IncompleteFeatures { next: String },
    #[error("schema version mismatch: expected {expected:?}, found {found:?}")]
    SchemaVersionMismatch { expected: String, found: String },
}

impl ErrorCode for FeatureError {
    fn code(&self) -> &'static str {
        match self {
            FeatureError::UnknownFeature(_) => "UnknownFeature",
            FeatureError::ValueOutOfRange { .. } => "ValueOutOfRange",
            FeatureError::NotInVocabulary { .. } => "NotInVocabulary",
            FeatureError::TypeMismatch { .. } => "TypeMismatch",
            FeatureError::IncompleteFeatures { .. } => "IncompleteFeatures",
            FeatureError::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
        }
    }
}

impl FeatureDef {
    /// Normalizes a raw answer. Categorical values match case-insensitively
    /// and come back in their declared spelling; numerics are never clamped.
    pub fn validate(&self, raw: &Answer) -> Result<Answer, FeatureError> {
        let mismatch = || FeatureError::TypeMismatch {
            feature: self.id.clone(),
            expected: self.kind.name(),
        };
        match (&self.kind, raw) {
            (FeatureKind::Categorical { values }, Answer::Text(t)) => {
                let t = t.trim();
                values
                    .iter()
                    .find(|v| v.eq_ignore_ascii_case(t))
                    .map(|v| Answer::Text(v.clone()))
                    .ok_or_else(|| FeatureError::NotInVocabulary {
                        feature: self.id.clone(),
                        value: t.to_string(),
                    })
            }
            (FeatureKind::Numeric { min, max }, raw) => {
                let x = match raw {
                    Answer::Number(x) => *x,
                    Answer::Text(t) => t.trim().parse::<f64>().map_err(|_| mismatch())?,
                    Answer::Bool(_) => return Err(mismatch()),
                };
                if !x.is_finite() {
                    return Err(mismatch());
                }
                if x < *min || x > *max {
                    return Err(FeatureError::ValueOutOfRange {
                        feature: self.id.clone(),
                        value: x,
                        min: *min,
                        max: *max,
                    });
                }
                Ok(Answer::Number(x))
            }
            (FeatureKind::Boolean, Answer::Bool(b)) => Ok(Answer::Bool(*b)),
            (FeatureKind::Boolean, Answer::Text(t)) => match t.trim().to_ascii_lowercase().as_str() {
                "true" | "yes" => Ok(Answer::Bool(true)),
                "false" | "no" => Ok(Answer::Bool(false)),
                _ => Err(mismatch()),
            },
            _ => Err(mismatch()),
        }
    }
}

/// Ordered, immutable question set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: String,
    pub features: Vec<FeatureDef>,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read schema {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema parse error at {path} (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid schema at {path}: {message}")]
    Invalid { path: String, message: String },
}

impl FeatureSchema {
    pub fn from_json_str(text: &str) -> Result<Self, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let schema: FeatureSchema = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            SchemaError::Parse {
                path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        schema.check()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// The ten-question schema shipped with the crate.
    pub fn default_schema() -> Self {
        Self::from_json_str(include_str!("../data/default_schema.json")).expect("bundled schema is valid")
    }

    fn check(&self) -> Result<(), SchemaError> {
        let invalid = |path: String, message: String| SchemaError::Invalid { path, message };
        if self.version.trim().is_empty() {
            return Err(invalid("version".into(), "version must not be empty".into()));
        }
        if self.features.is_empty() {
            return Err(invalid("features".into(), "schema needs at least one feature".into()));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for (i, def) in self.features.iter().enumerate() {
            let at = |field: &str| format!("features[{i}].{field}");
            if def.id.trim().is_empty() {
                return Err(invalid(at("id"), "id must not be empty".into()));
            }
            if !seen.insert(def.id.as_str()) {
                return Err(invalid(at("id"), format!("duplicate feature id {:?}", def.id)));
            }
            match &def.kind {
                FeatureKind::Categorical { values } => {
                    let distinct: HashSet<String> = values.iter().map(|v| v.to_ascii_lowercase()).collect();
                    if distinct.len() != values.len() || values.len() < 2 {
                        return Err(invalid(
                            at("values"),
                            "categorical features need at least two distinct values".into(),
                        ));
                    }
                }
                FeatureKind::Numeric { min, max } => {
                    if !(min.is_finite() && max.is_finite() && min < max) {
                        return Err(invalid(at("min"), format!("need finite min < max, got [{min}, {max}]")));
                    }
                }
                FeatureKind::Boolean => {}
            }
            if let Some(cond) = &def.skip_condition {
                // Only earlier features are visible, which keeps the flow a single forward pass.
                let earlier = FeatureSchema {
                    version: self.version.clone(),
                    features: self.features[..i].to_vec(),
                };
                cond.check(&earlier).map_err(|p| {
                    let message = match p {
                        ConditionProblem::UnknownFeature => format!(
                            "skip_condition references {:?}, which is not an earlier feature",
                            cond.feature
                        ),
                        ConditionProblem::KindMismatch { op, kind } => {
                            format!("operator {op} does not apply to {kind} feature {:?}", cond.feature)
                        }
                        ConditionProblem::BadValue(m) => m,
                    };
                    invalid(at("skip_condition"), message)
                })?;
            }
        }
        Ok(())
    }

    pub fn feature(&self, id: &str) -> Option<&FeatureDef> {
        self.features.iter().find(|d| d.id == id)
    }

    /// Length of every vector produced by [`encode`](Self::encode).
    pub fn dimension(&self) -> usize {
        self.features.iter().map(|d| d.kind.width()).sum()
    }

    /// Validates `raw` as an answer to feature `id`.
    pub fn validate_answer(&self, id: &str, raw: &Answer) -> Result<Answer, FeatureError> {
        self.feature(id)
            .ok_or_else(|| FeatureError::UnknownFeature(id.to_string()))?
            .validate(raw)
    }

    fn is_skipped(def: &FeatureDef, answered: &SessionFeatures) -> bool {
        def.skip_condition.as_ref().is_some_and(|c| c.holds(answered))
    }

    /// First question in schema order that is neither answered, declined
    /// nor skipped. `None` means the flow is done.
    pub fn next_question(&self, answered: &SessionFeatures) -> Option<&FeatureDef> {
        self.features
            .iter()
            .find(|d| !answered.is_settled(&d.id) && !Self::is_skipped(d, answered))
    }

    pub fn encode(&self, features: &SessionFeatures) -> Result<FeatureVector, FeatureError> {
        if features.schema_version != self.version {
            return Err(FeatureError::SchemaVersionMismatch {
                expected: self.version.clone(),
                found: features.schema_version.clone(),
            });
        }
        if let Some(def) = self.next_question(features) {
            return Err(FeatureError::IncompleteFeatures { next: def.id.clone() });
        }
        let mut values = Vec::with_capacity(self.dimension());
        for def in &self.features {
            let answer = if Self::is_skipped(def, features) {
                None
            } else {
                features.answer(&def.id)
            };
            match (&def.kind, answer) {
                (FeatureKind::Categorical { values: vocab }, Some(Answer::Text(t))) => {
                    values.extend(vocab.iter().map(|v| if v.eq_ignore_ascii_case(t) { 1.0 } else { 0.0 }));
                }
                (FeatureKind::Numeric { min, max }, Some(Answer::Number(x))) => {
                    values.push(((x - min) / (max - min)).clamp(0.0, 1.0));
                }
                (FeatureKind::Boolean, Some(Answer::Bool(b))) => values.push(if *b { 1.0 } else { 0.0 }),
                (kind, _) => values.extend(std::iter::repeat_n(0.0, kind.width())),
            }
        }
        Ok(FeatureVector {
            schema_version: self.version.clone(),
            values,
        })
    }
}

/// One session's answers so far.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionFeatures {
    pub schema_version: String,
    pub answers: BTreeMap<String, Answer>,
    /// Optional questions the user chose not to answer.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub declined: BTreeSet<String>,
}

impl SessionFeatures {
    pub fn new(schema: &FeatureSchema) -> Self {
        SessionFeatures {
            schema_version: schema.version.clone(),
            ..Default::default()
        }
    }

    pub fn answer(&self, id: &str) -> Option<&Answer> {
        self.answers.get(id)
    }

    fn is_settled(&self, id: &str) -> bool {
        self.answers.contains_key(id) || self.declined.contains(id)
    }

    /// Validates and stores an answer. `None` declines an optional question.
    pub fn record(&mut self, schema: &FeatureSchema, id: &str, raw: Option<&Answer>) -> Result<(), FeatureError> {
        let def = schema
            .feature(id)
            .ok_or_else(|| FeatureError::UnknownFeature(id.to_string()))?;
        match raw {
            Some(raw) => {
                let answer = def.validate(raw)?;
                self.declined.remove(id);
                self.answers.insert(id.to_string(), answer);
            }
            None if def.required => {
                return Err(FeatureError::TypeMismatch {
                    feature: id.to_string(),
                    expected: def.kind.name(),
                })
            }
            None => {
                self.answers.remove(id);
                self.declined.insert(id.to_string());
            }
        }
        Ok(())
    }

    /// Builder-style helper, mostly for tests and fixtures.
    pub fn with(mut self, schema: &FeatureSchema, id: &str, raw: Answer) -> Result<Self, FeatureError> {
        self.record(schema, id, Some(&raw))?;
        Ok(self)
    }
}

/// Dense encoding of a completed answer set; every component is in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema_version: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(schema_version: impl Into<String>, values: Vec<f64>) -> Self {
        FeatureVector {
            schema_version: schema_version.into(),
            values,
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}
