use serde::{Deserialize, Serialize};

use super::NnError;

/// One convolution block of the stem: conv (padding `kernel / 2`) followed by ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.padding()).saturating_sub(self.kernel) / self.stride + 1
    }
}

/// Stem used by [`ModelConfig::new`].
pub const DEFAULT_STEM: [ConvSpec; 3] = [
    ConvSpec::new(16, 3, 2),
    ConvSpec::new(32, 3, 2),
    ConvSpec::new(64, 3, 2),
];
pub const DEFAULT_HIDDEN_UNITS: usize = 512;
pub const DEFAULT_DROPOUT: f64 = 0.5;

/// Network shape: conv stem → global average pooling → dense(hidden, ReLU)
/// → dropout → dense(1) → sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Inputs are square, `input_size × input_size`.
    pub input_size: usize,
    pub stem: Vec<ConvSpec>,
    pub hidden_units: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// The standard classifier: three stride-2 conv blocks (16, 32, 64 channels)
    /// and a 512-unit head with dropout 0.5.
    pub fn new(input_channels: usize, input_size: usize) -> Self {
        Self {
            input_channels,
            input_size,
            stem: DEFAULT_STEM.to_vec(),
            hidden_units: DEFAULT_HIDDEN_UNITS,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if !matches!(self.input_channels, 3 | 6) {
            return bad(format!("input_channels must be 3 or 6, got {}", self.input_channels));
        }
        if self.input_size == 0 {
            return bad("input_size must be positive".into());
        }
        if self.stem.is_empty() {
            return bad("stem must have at least one conv block".into());
        }
        let mut size = self.input_size;
        for (i, c) in self.stem.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return bad(format!("stem block {i} has a zero dimension"));
            }
            if size + 2 * c.padding() < c.kernel {
                return bad(format!("stem block {i}: input {size} smaller than kernel {}", c.kernel));
            }
            size = c.output_size(size);
        }
        if self.hidden_units == 0 {
            return bad("hidden_units must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn keep_probability(&self) -> f64 {
        1.0 - self.dropout
    }

    /// Spatial size after each stem block, starting with the input.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_size];
        for c in &self.stem {
            let last = *sizes.last().expect("non-empty");
            sizes.push(c.output_size(last));
        }
        sizes
    }
}

/// Optimizer and early-stopping settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            max_epochs: 100,
            patience: 10,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!("patience must be in 1..=max_epochs, got {}", self.patience));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must be in [0, 1)".into());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive".into());
        }
        Ok(())
    }
}
