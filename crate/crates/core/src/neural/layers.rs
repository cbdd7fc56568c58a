use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One node of the layer graph. Every layer consumes the previous layer's
/// output; `Concat` additionally reads the output of layer `skip`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv3x3 { in_channels: usize, out_channels: usize },
    Conv1x1 { in_channels: usize, out_channels: usize },
    BatchNorm { channels: usize },
    Relu,
    /// 2x2 max pooling.
    Downsample,
    /// 2x nearest-neighbour upsampling.
    Upsample,
    /// Channel concatenation `[output of skip, previous output]`.
    Concat { skip: usize },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. } | LayerSpec::Conv1x1 { .. } | LayerSpec::BatchNorm { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    Zero,
    Circular,
}

/// Weight initialization of convolution layers; biases start at zero and
/// batch-norm at the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Normal with variance `2 / fan_in`.
    He,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding: Padding,
    pub init: Init,
}

impl Architecture {
    /// Number of 2x poolings on the deepest path; inputs must be divisible
    /// by `2^depth` in both spatial axes.
    pub fn depth(&self) -> usize {
        let mut level = 0usize;
        let mut deepest = 0;
        for l in &self.layers {
            match l {
                LayerSpec::Downsample => {
                    level += 1;
                    deepest = deepest.max(level);
                }
                LayerSpec::Upsample => level = level.saturating_sub(1),
                _ => {}
            }
        }
        deepest
    }

    /// Checks channel counts along the graph and that every concatenation
    /// joins tensors of the same spatial size.
    pub fn validate(&self) -> Result<()> {
        let bad = |i: usize, reason: String| Error::Validation {
            item: format!("layer {i}"),
            reason,
        };
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channels", "must be positive"));
        }
        let mut channels = self.in_channels;
        let mut level: isize = 0;
        let mut seen: Vec<(usize, isize)> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv3x3 { in_channels, out_channels } | LayerSpec::Conv1x1 { in_channels, out_channels } => {
                    if in_channels != channels {
                        return Err(bad(i, format!("expects {in_channels} input channels, gets {channels}")));
                    }
                    if out_channels == 0 {
                        return Err(bad(i, "zero output channels".into()));
                    }
                    channels = out_channels;
                }
                LayerSpec::BatchNorm { channels: c } => {
                    if c != channels {
                        return Err(bad(i, format!("normalizes {c} channels, gets {channels}")));
                    }
                }
                LayerSpec::Relu => {}
                LayerSpec::Downsample => level += 1,
                LayerSpec::Upsample => {
                    level -= 1;
                    if level < 0 {
                        return Err(bad(i, "upsamples above the input resolution".into()));
                    }
                }
                LayerSpec::Concat { skip } => {
                    let Some(&(c, l)) = seen.get(skip).filter(|_| skip < i) else {
                        return Err(bad(i, format!("concat references layer {skip}, not an earlier layer")));
                    };
                    if l != level {
                        return Err(bad(i, format!("concat joins resolution levels {l} and {level}")));
                    }
                    channels += c;
                }
            }
            seen.push((channels, level));
        }
        if level != 0 {
            return Err(Error::Validation {
                item: "architecture".into(),
                reason: format!("output is at resolution level {level}, not the input level"),
            });
        }
        if channels != self.out_channels {
            return Err(Error::Validation {
                item: "architecture".into(),
                reason: format!("produces {channels} channels, declared {}", self.out_channels),
            });
        }
        Ok(())
    }

    /// Output channel count of every layer.
    pub fn channels(&self) -> Vec<usize> {
        let mut c = self.in_channels;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv3x3 { out_channels, .. } | LayerSpec::Conv1x1 { out_channels, .. } => c = out_channels,
                LayerSpec::Concat { skip } => c += out[skip],
                _ => {}
            }
            out.push(c);
        }
        out
    }
}

/// U-Net with `depth` poolings and `base * 2^l` channels at level `l`:
/// two conv-BN-ReLU blocks per level, transposed path by upsampling plus a
/// 3x3 convolution, skip concatenations, and a final 1x1 projection.
pub fn unet(channels: usize, base: usize, depth: usize, padding: Padding) -> Architecture {
    let mut layers = Vec::new();
    let block = |layers: &mut Vec<LayerSpec>, cin: usize, cout: usize| {
        layers.push(LayerSpec::Conv3x3 {
            in_channels: cin,
            out_channels: cout,
        });
        layers.push(LayerSpec::BatchNorm { channels: cout });
        layers.push(LayerSpec::Relu);
    };
    let width = |l: usize| base << l;
    let mut skips = Vec::with_capacity(depth);
    let mut cin = channels;
    for l in 0..depth {
        block(&mut layers, cin, width(l));
        block(&mut layers, width(l), width(l));
        skips.push(layers.len() - 1);
        layers.push(LayerSpec::Downsample);
        cin = width(l);
    }
    block(&mut layers, cin, width(depth));
    block(&mut layers, width(depth), width(depth));
    for l in (0..depth).rev() {
        layers.push(LayerSpec::Upsample);
        block(&mut layers, width(l + 1), width(l));
        layers.push(LayerSpec::Concat { skip: skips[l] });
        block(&mut layers, 2 * width(l), width(l));
        block(&mut layers, width(l), width(l));
    }
    layers.push(LayerSpec::Conv1x1 {
        in_channels: width(0),
        out_channels: channels,
    });
    Architecture {
        layers,
        in_channels: channels,
        out_channels: channels,
        padding,
        init: Init::He,
    }
}
