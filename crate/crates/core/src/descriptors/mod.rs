//! Behavioural descriptors: structural features of the artifact text and behavioural
//! features of its evaluation, assembled in the order a [`DescriptorSpec`] declares.

mod python;

pub use python::PythonAnalyzer;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::candidate::Descriptor;
use crate::error::{Error, Result};
use crate::evaluation::EvalResult;

/// One descriptor dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    CodeLength,
    CyclomaticComplexity,
    LoopCount,
    MaxLoopNesting,
    ComparisonCount,
    MathOpCount,
    BranchCount,
    CallCount,
    ComprehensionCount,
    SubscriptCount,
    RuntimeS,
    /// Per-instance score on the named example.
    ScoreKey(String),
    /// Value produced by a registered [`CustomExtractor`].
    Custom(String),
}

impl Feature {
    pub fn is_structural(&self) -> bool {
        !matches!(self, Feature::RuntimeS | Feature::ScoreKey(_) | Feature::Custom(_))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::ScoreKey(k) => write!(f, "score_key({k})"),
            Feature::Custom(k) => write!(f, "custom({k})"),
            other => {
                let s = serde_json::to_string(other).unwrap_or_default();
                f.write_str(s.trim_matches('"'))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DescriptorSpec {
    pub features: Vec<Feature>,
}

impl DescriptorSpec {
    pub fn new(features: Vec<Feature>) -> Self {
        DescriptorSpec { features }
    }

    /// Six structural dimensions used by default for code problems.
    pub fn default_code() -> Self {
        DescriptorSpec::new(vec![
            Feature::CyclomaticComplexity,
            Feature::ComparisonCount,
            Feature::MathOpCount,
            Feature::BranchCount,
            Feature::MaxLoopNesting,
            Feature::ComprehensionCount,
        ])
    }

    /// Two-dimensional reduced descriptor: code length plus one auxiliary count.
    pub fn weak() -> Self {
        DescriptorSpec::new(vec![Feature::CodeLength, Feature::CallCount])
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn score_keys(&self) -> impl Iterator<Item = &str> {
        self.features.iter().filter_map(|f| match f {
            Feature::ScoreKey(k) => Some(k.as_str()),
            _ => None,
        })
    }

    pub fn validate(&self, discovery_set: &[String]) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::config("descriptor spec must list at least one feature"));
        }
        for key in self.score_keys() {
            if !discovery_set.iter().any(|id| id == key) {
                return Err(Error::config(format!(
                    "score_key '{key}' is not an example id of the discovery set"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Raw construct counts reported by a [`SyntaxAnalyzer`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StructuralCounts {
    pub cyclomatic_complexity: u64,
    pub loop_count: u64,
    pub max_loop_nesting: u64,
    pub comparison_count: u64,
    pub math_op_count: u64,
    pub branch_count: u64,
    pub call_count: u64,
    pub comprehension_count: u64,
    pub subscript_count: u64,
    pub bool_op_count: u64,
}

/// Language front end for structural features.
pub trait SyntaxAnalyzer: Send + Sync {
    fn analyze(&self, source: &str) -> std::result::Result<StructuralCounts, SyntaxError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFeatures {
    pub code_length: u64,
    pub counts: StructuralCounts,
    /// Set when the analyzer rejected the text; counts are then all zero.
    pub parse_error: Option<SyntaxError>,
}

impl StructuralFeatures {
    pub fn parse_failed(&self) -> bool {
        self.parse_error.is_some()
    }

    pub fn value(&self, feature: &Feature) -> Option<f64> {
        let c = &self.counts;
        let v = match feature {
            Feature::CodeLength => self.code_length,
            Feature::CyclomaticComplexity => c.cyclomatic_complexity,
            Feature::LoopCount => c.loop_count,
            Feature::MaxLoopNesting => c.max_loop_nesting,
            Feature::ComparisonCount => c.comparison_count,
            Feature::MathOpCount => c.math_op_count,
            Feature::BranchCount => c.branch_count,
            Feature::CallCount => c.call_count,
            Feature::ComprehensionCount => c.comprehension_count,
            Feature::SubscriptCount => c.subscript_count,
            _ => return None,
        };
        Some(v as f64)
    }
}

pub fn extract_structural(artifact: &str) -> StructuralFeatures {
    extract_structural_with(&PythonAnalyzer, artifact)
}

pub fn extract_structural_with(analyzer: &dyn SyntaxAnalyzer, artifact: &str) -> StructuralFeatures {
    let code_length = artifact.chars().count() as u64;
    match analyzer.analyze(artifact) {
        Ok(counts) => StructuralFeatures {
            code_length,
            counts,
            parse_error: None,
        },
        Err(e) => StructuralFeatures {
            code_length,
            counts: StructuralCounts {
                cyclomatic_complexity: 1,
                ..StructuralCounts::default()
            },
            parse_error: Some(e),
        },
    }
}

/// Behavioural dimensions of `spec`, in order. Structural features are skipped.
///
/// A score key absent from the result contributes 0 and is reported in the returned
/// flag list (this happens for failed candidates and for keys outside a proxy subset).
pub fn extract_behavioral(result: &EvalResult, spec: &DescriptorSpec) -> (Vec<f64>, Vec<String>) {
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for f in &spec.features {
        match f {
            Feature::RuntimeS => values.push(result.runtime_s),
            Feature::ScoreKey(k) => match result.per_instance_scores.get(k) {
                Some(v) if v.is_finite() => values.push(*v),
                _ => {
                    missing.push(k.clone());
                    values.push(0.0);
                }
            },
            _ => {}
        }
    }
    (values, missing)
}

/// User-supplied feature computed from the artifact and its evaluation.
pub trait CustomExtractor: Send + Sync {
    fn extract(&self, artifact: &str, result: &EvalResult) -> f64;
}

impl<F> CustomExtractor for F
where
    F: Fn(&str, &EvalResult) -> f64 + Send + Sync,
{
    fn extract(&self, artifact: &str, result: &EvalResult) -> f64 {
        self(artifact, result)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltDescriptor {
    pub descriptor: Descriptor,
    pub parse_error: Option<SyntaxError>,
    pub missing_score_keys: Vec<String>,
}

/// Assembles raw descriptors for one problem.
#[derive(Clone)]
pub struct DescriptorBuilder {
    spec: DescriptorSpec,
    analyzer: Arc<dyn SyntaxAnalyzer>,
    custom: BTreeMap<String, Arc<dyn CustomExtractor>>,
}

impl fmt::Debug for DescriptorBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DescriptorBuilder")
            .field("spec", &self.spec)
            .field("custom", &self.custom.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl DescriptorBuilder {
    pub fn new(spec: DescriptorSpec) -> Self {
        DescriptorBuilder {
            spec,
            analyzer: Arc::new(PythonAnalyzer),
            custom: BTreeMap::new(),
        }
    }

    pub fn with_analyzer(mut self, analyzer: Arc<dyn SyntaxAnalyzer>) -> Self {
        self.analyzer = analyzer;
        self
    }

    pub fn with_custom(mut self, name: impl Into<String>, extractor: Arc<dyn CustomExtractor>) -> Self {
        self.custom.insert(name.into(), extractor);
        self
    }

    pub fn spec(&self) -> &DescriptorSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.len()
    }

    pub fn build(&self, artifact: &str, result: &EvalResult) -> Result<BuiltDescriptor> {
        let needs_structure = self.spec.features.iter().any(Feature::is_structural);
        let structural = needs_structure.then(|| extract_structural_with(self.analyzer.as_ref(), artifact));
        let (behavioral, missing) = extract_behavioral(result, &self.spec);
        let mut behavioral = behavioral.into_iter();
        let mut raw = Vec::with_capacity(self.spec.len());
        for f in &self.spec.features {
            let v = match f {
                Feature::RuntimeS | Feature::ScoreKey(_) => {
                    behavioral.next().expect("one behavioural value per behavioural feature")
                }
                Feature::Custom(name) => {
                    let ex = self.custom.get(name).ok_or_else(|| {
                        Error::config(format!("no custom extractor registered under '{name}'"))
                    })?;
                    ex.extract(artifact, result)
                }
                structural_feature => structural
                    .as_ref()
                    .and_then(|s| s.value(structural_feature))
                    .expect("structural features computed when requested"),
            };
            raw.push(v);
        }
        Ok(BuiltDescriptor {
            descriptor: Descriptor::from_raw(raw),
            parse_error: structural.and_then(|s| s.parse_error),
            missing_score_keys: missing,
        })
    }
}
