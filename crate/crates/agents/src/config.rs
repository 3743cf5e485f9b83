use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AgentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    PpoCnn,
    PpoSpcnn,
    LstmCnn,
    LstmSpcnn,
    OcSa,
    OcCa,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::PpoCnn,
        Architecture::PpoSpcnn,
        Architecture::LstmCnn,
        Architecture::LstmSpcnn,
        Architecture::OcSa,
        Architecture::OcCa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::PpoCnn => "ppo-cnn",
            Architecture::PpoSpcnn => "ppo-spcnn",
            Architecture::LstmCnn => "lstm-cnn",
            Architecture::LstmSpcnn => "lstm-spcnn",
            Architecture::OcSa => "oc-sa",
            Architecture::OcCa => "oc-ca",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name.to_ascii_lowercase())
            .ok_or_else(|| AgentError::Config(format!("unknown architecture {name:?}")))
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Architecture::LstmCnn | Architecture::LstmSpcnn)
    }

    pub fn is_object_centric(self) -> bool {
        matches!(self, Architecture::OcSa | Architecture::OcCa)
    }

    pub fn uses_spcnn(self) -> bool {
        !matches!(self, Architecture::PpoCnn | Architecture::LstmCnn)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One convolution of the strided feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub architecture: Architecture,
    pub cnn_layers: Vec<ConvLayer>,
    pub spcnn_channels: usize,
    pub spcnn_depth: usize,
    pub spcnn_kernel: usize,
    /// Width of the ReLU layer after flattening.
    pub feature_dim: usize,
    pub lstm_hidden: usize,
    pub embed_dim: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub n_slots: usize,
    pub n_heads: usize,
    pub attention_layers: usize,
    pub use_layernorm: bool,
    pub use_residual_mlp: bool,
    pub use_slot_competition: bool,
    pub use_positional_embeddings: bool,
    pub mlp_hidden: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::new(Architecture::PpoCnn)
    }
}

impl AgentConfig {
    /// Published widths for each architecture.
    pub fn new(architecture: Architecture) -> Self {
        let (patch, layers) = match architecture {
            Architecture::OcSa => (8, 2),
            _ => (16, 1),
        };
        Self {
            architecture,
            cnn_layers: vec![
                ConvLayer { channels: 32, kernel: 8, stride: 4 },
                ConvLayer { channels: 64, kernel: 4, stride: 2 },
                ConvLayer { channels: 64, kernel: 3, stride: 1 },
            ],
            spcnn_channels: 64,
            spcnn_depth: 4,
            spcnn_kernel: 5,
            feature_dim: 512,
            lstm_hidden: 256,
            embed_dim: 256,
            patch_size: patch,
            stride: patch,
            n_slots: 8,
            n_heads: 8,
            attention_layers: layers,
            use_layernorm: false,
            use_residual_mlp: false,
            use_slot_competition: false,
            use_positional_embeddings: true,
            mlp_hidden: 256,
        }
    }

    /// Narrow variant for smoke runs and tests on one CPU core.
    pub fn reduced(architecture: Architecture) -> Self {
        Self {
            cnn_layers: vec![
                ConvLayer { channels: 16, kernel: 8, stride: 4 },
                ConvLayer { channels: 32, kernel: 4, stride: 2 },
                ConvLayer { channels: 32, kernel: 3, stride: 1 },
            ],
            spcnn_channels: 8,
            spcnn_depth: 2,
            spcnn_kernel: 5,
            feature_dim: 128,
            lstm_hidden: 64,
            embed_dim: 32,
            n_heads: 4,
            mlp_hidden: 32,
            ..Self::new(architecture)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AgentError::Config(m));
        if self.cnn_layers.is_empty() || self.cnn_layers.iter().any(|l| l.channels == 0 || l.kernel == 0 || l.stride == 0) {
            return bad("convolution layers need positive channels, kernel and stride".into());
        }
        if self.spcnn_channels == 0 || self.spcnn_depth == 0 || self.spcnn_kernel % 2 == 0 {
            return bad("size-preserving stack needs positive width, depth and an odd kernel".into());
        }
        if self.feature_dim == 0 || self.lstm_hidden == 0 || self.embed_dim == 0 || self.mlp_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.architecture.is_object_centric() {
            if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
                return bad(format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.n_heads));
            }
            if self.use_positional_embeddings && self.embed_dim % 2 == 1 {
                return bad("positional embeddings need an even embed_dim".into());
            }
            crafter_nnet::patch_grid(crate::IMAGE, crate::IMAGE, self.patch_size, self.stride)?;
            if self.attention_layers == 0 {
                return bad("at least one attention layer is required".into());
            }
        }
        if self.architecture == Architecture::OcCa && self.n_slots == 0 {
            return bad("cross-attention needs at least one slot".into());
        }
        if self.architecture == Architecture::OcSa && self.use_slot_competition {
            return bad("slot competition applies to cross-attention slots only".into());
        }
        let mut side = crate::IMAGE;
        for l in &self.cnn_layers {
            if l.kernel > side {
                return bad(format!("kernel {} exceeds feature map {side}", l.kernel));
            }
            side = (side - l.kernel) / l.stride + 1;
        }
        Ok(())
    }

    /// Side length of the strided extractor's output.
    pub fn cnn_output_side(&self) -> usize {
        self.cnn_layers
            .iter()
            .fold(crate::IMAGE, |side, l| (side.saturating_sub(l.kernel)) / l.stride + 1)
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        crafter_nnet::patch_grid(crate::IMAGE, crate::IMAGE, self.patch_size, self.stride).unwrap_or((0, 0))
    }

    pub fn n_patches(&self) -> usize {
        let (r, c) = self.patch_grid();
        r * c
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Stable hash of the config, stored in checkpoints.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Switches from the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    LayerNorm(bool),
    ResidualMlp(bool),
    SlotCompetition(bool),
    PositionalEmbeddings(bool),
    Slots(usize),
    Heads(usize),
    Patch { size: usize, stride: usize },
}

impl Ablation {
    /// Parses `layernorm`, `no-layernorm`, `residual`, `slot-competition`,
    /// `no-pe`, `slots=4`, `heads=2`, `patch=12/8`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim().to_ascii_lowercase();
        let (neg, key) = match t.strip_prefix("no-") {
            Some(rest) => (true, rest.to_string()),
            None => (false, t.clone()),
        };
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| AgentError::Config(format!("bad number in ablation {text:?}")))
        };
        if let Some((k, v)) = key.split_once('=') {
            return match k {
                "slots" => Ok(Ablation::Slots(num(v)?)),
                "heads" => Ok(Ablation::Heads(num(v)?)),
                "patch" => {
                    let (s, st) = v.split_once('/').unwrap_or((v, v));
                    Ok(Ablation::Patch { size: num(s)?, stride: num(st)? })
                }
                _ => Err(AgentError::Config(format!("unknown ablation {text:?}"))),
            };
        }
        match key.as_str() {
            "layernorm" => Ok(Ablation::LayerNorm(!neg)),
            "residual" | "residual-mlp" => Ok(Ablation::ResidualMlp(!neg)),
            "slot-competition" => Ok(Ablation::SlotCompetition(!neg)),
            "pe" | "positional-embeddings" => Ok(Ablation::PositionalEmbeddings(!neg)),
            _ => Err(AgentError::Config(format!("unknown ablation {text:?}"))),
        }
    }
}

/// Applies ablation switches to an object-centric config.
pub fn apply_ablation(config: &AgentConfig, toggles: &[Ablation]) -> Result<AgentConfig> {
    let arch = config.architecture;
    if !arch.is_object_centric() && !toggles.is_empty() {
        return Err(AgentError::Unsupported("ablation switches".into(), arch.to_string()));
    }
    let mut out = config.clone();
    for t in toggles {
        match *t {
            Ablation::LayerNorm(on) => out.use_layernorm = on,
            Ablation::ResidualMlp(on) => out.use_residual_mlp = on,
            Ablation::PositionalEmbeddings(on) => out.use_positional_embeddings = on,
            Ablation::SlotCompetition(on) => {
                if arch != Architecture::OcCa {
                    return Err(AgentError::Unsupported("slot competition".into(), arch.to_string()));
                }
                out.use_slot_competition = on;
            }
            Ablation::Slots(n) => {
                if arch != Architecture::OcCa {
                    return Err(AgentError::Unsupported("slot count".into(), arch.to_string()));
                }
                out.n_slots = n;
            }
            Ablation::Heads(h) => out.n_heads = h,
            Ablation::Patch { size, stride } => {
                out.patch_size = size;
                out.stride = stride;
            }
        }
    }
    out.validate()?;
    Ok(out)
}
