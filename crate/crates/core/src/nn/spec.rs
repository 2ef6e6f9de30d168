use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

/// Architecture of a fully connected network: `[input, hidden.., output]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl NetSpec {
    pub fn new(layer_widths: Vec<usize>, output_activation: OutputActivation) -> Result<Self> {
        let spec = Self {
            layer_widths,
            hidden_activation: HiddenActivation::Relu,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds `[input, hidden.., output]` from its parts.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self::new(widths, output_activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layer widths, got {}",
                self.layer_widths.len()
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidSpec("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}
