//! JSON run configuration mirroring the harness inputs.

use aircache_core::{
    AllocationMode, Audience, Eviction, NeedleScenario, ScorerPolicy, ToyModelConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::BenchError;

fn default_vocab() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelDoc {
    pub fn to_core(&self) -> ToyModelConfig {
        ToyModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            hidden_dim: self.hidden_dim,
            vocab: self.vocab,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub n_system: usize,
    pub n_visual: usize,
    pub n_text: usize,
    #[serde(default)]
    pub needle_indices: Vec<usize>,
    #[serde(default)]
    pub needle_payload: Vec<usize>,
}

impl ScenarioDoc {
    pub fn to_core(&self) -> NeedleScenario {
        NeedleScenario {
            n_system: self.n_system,
            n_visual: self.n_visual,
            n_text: self.n_text,
            needle_indices: self.needle_indices.clone(),
            needle_payload: self.needle_payload.clone(),
        }
    }
}

/// Scorer selection. `full_cache` skips compression entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerDoc {
    FullCache,
    EliteWindow {
        #[serde(default)]
        alpha: Option<f64>,
    },
    ContinuousTextWindow {
        size: usize,
    },
    AllTextTokens {
        #[serde(default)]
        renormalized: bool,
    },
    VisualWindow {
        size: usize,
    },
    H2oCumulative,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationDoc {
    Aircache,
    StrengthOnly,
    SkewnessOnly,
    Uniform,
    Pyramid,
}

impl AllocationDoc {
    pub fn to_core(self) -> AllocationMode {
        match self {
            AllocationDoc::Aircache => AllocationMode::AirCache,
            AllocationDoc::StrengthOnly => AllocationMode::StrengthOnly,
            AllocationDoc::SkewnessOnly => AllocationMode::SkewnessOnly,
            AllocationDoc::Uniform => AllocationMode::Uniform,
            AllocationDoc::Pyramid => AllocationMode::Pyramid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvictionDoc {
    Drop,
    Merge { fraction: f64 },
}

impl EvictionDoc {
    pub fn to_core(self) -> Eviction {
        match self {
            EvictionDoc::Drop => Eviction::Drop,
            EvictionDoc::Merge { fraction } => Eviction::Merge { fraction },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudienceDoc {
    VisionOnly,
    Unified,
}

impl AudienceDoc {
    pub fn to_core(self) -> Audience {
        match self {
            AudienceDoc::VisionOnly => Audience::VisionOnly,
            AudienceDoc::Unified => Audience::Unified,
        }
    }
}

fn default_allocation() -> AllocationDoc {
    AllocationDoc::Aircache
}

fn default_eviction() -> EvictionDoc {
    EvictionDoc::Drop
}

fn default_audience() -> AudienceDoc {
    AudienceDoc::VisionOnly
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyDoc {
    pub scorer: ScorerDoc,
    #[serde(default = "default_allocation")]
    pub allocation: AllocationDoc,
    #[serde(default = "default_eviction")]
    pub eviction: EvictionDoc,
    #[serde(default = "default_audience")]
    pub audience: AudienceDoc,
}

impl PolicyDoc {
    /// Stable label used for record ordering and reporting.
    pub fn label(&self) -> String {
        let scorer = match self.scorer {
            ScorerDoc::FullCache => "full_cache".to_string(),
            ScorerDoc::EliteWindow { .. } => "elite_window".to_string(),
            ScorerDoc::ContinuousTextWindow { size } => format!("continuous_text_window_{size}"),
            ScorerDoc::AllTextTokens { renormalized: true } => "all_text_tokens_renorm".to_string(),
            ScorerDoc::AllTextTokens {
                renormalized: false,
            } => "all_text_tokens".to_string(),
            ScorerDoc::VisualWindow { size } => format!("visual_window_{size}"),
            ScorerDoc::H2oCumulative => "h2o_cumulative".to_string(),
            ScorerDoc::Random => "random".to_string(),
        };
        let alloc = match self.allocation {
            AllocationDoc::Aircache => "aircache",
            AllocationDoc::StrengthOnly => "strength_only",
            AllocationDoc::SkewnessOnly => "skewness_only",
            AllocationDoc::Uniform => "uniform",
            AllocationDoc::Pyramid => "pyramid",
        };
        let evict = match self.eviction {
            EvictionDoc::Drop => "drop".to_string(),
            EvictionDoc::Merge { fraction } => format!("merge_{fraction}"),
        };
        let audience = match self.audience {
            AudienceDoc::VisionOnly => "vision_only",
            AudienceDoc::Unified => "unified",
        };
        format!("{scorer}/{alloc}/{evict}/{audience}")
    }

    /// Resolves the scorer for a given grid alpha and per-record seed.
    pub fn scorer_policy(&self, alpha: f64, seed: u64) -> ScorerPolicy {
        match self.scorer {
            // Full cache is handled upstream; an identity elite scorer keeps
            // the type total.
            ScorerDoc::FullCache => ScorerPolicy::EliteWindow { alpha: 0.0 },
            ScorerDoc::EliteWindow { alpha: fixed } => ScorerPolicy::EliteWindow {
                alpha: fixed.unwrap_or(alpha),
            },
            ScorerDoc::ContinuousTextWindow { size } => ScorerPolicy::ContinuousTextWindow { size },
            ScorerDoc::AllTextTokens { renormalized } => {
                ScorerPolicy::AllTextTokens { renormalized }
            }
            ScorerDoc::VisualWindow { size } => ScorerPolicy::VisualWindow { size },
            ScorerDoc::H2oCumulative => ScorerPolicy::H2oCumulative,
            ScorerDoc::Random => ScorerPolicy::Random { seed },
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.9]
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelDoc,
    pub scenario: ScenarioDoc,
    pub policies: Vec<PolicyDoc>,
    pub ratios: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub decode_steps: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub out_path: Option<String>,
}

impl RunConfig {
    /// Validates ranges and deduplicates the alpha grid. Returns whether
    /// duplicate alphas were removed.
    pub fn normalize(&mut self) -> Result<bool, BenchError> {
        self.model
            .to_core()
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        self.scenario
            .to_core()
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(BenchError::Config(
                "ratios must be non-empty and in (0, 1]".into(),
            ));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(BenchError::Config(
                "alphas must be non-empty and in [0, 1]".into(),
            ));
        }
        if self.decode_steps == 0 {
            return Err(BenchError::Config("decode_steps must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(BenchError::Config("repeats must be >= 1".into()));
        }
        let before = self.alphas.len();
        let mut seen: Vec<f64> = Vec::new();
        self.alphas.retain(|a| {
            if seen.iter().any(|s| s == a) {
                false
            } else {
                seen.push(*a);
                true
            }
        });
        Ok(self.alphas.len() != before)
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }
}

/// The comparison set used when a config lists no policies: the full
/// pipeline, each baseline scorer, and the uncompressed reference.
pub fn canonical_policies() -> Vec<PolicyDoc> {
    let base = |scorer| PolicyDoc {
        scorer,
        allocation: AllocationDoc::Aircache,
        eviction: EvictionDoc::Drop,
        audience: AudienceDoc::VisionOnly,
    };
    vec![
        base(ScorerDoc::EliteWindow { alpha: None }),
        base(ScorerDoc::AllTextTokens { renormalized: true }),
        base(ScorerDoc::ContinuousTextWindow { size: 8 }),
        base(ScorerDoc::VisualWindow { size: 8 }),
        base(ScorerDoc::H2oCumulative),
        base(ScorerDoc::Random),
        base(ScorerDoc::FullCache),
    ]
}
