//! The traversability network: a pluggable convolutional encoder producing a
//! 2048-channel map, the regression head, and the gradient-reversal domain
//! classifier used for unsupervised adaptation.

pub mod checkpoint;
pub mod layers;
mod network;

use serde::{Deserialize, Serialize};

pub use layers::{ConvGeometry, GradientReversal, ParamRef};
pub use network::{frames_to_batch, DomainTape, FeatureTape, TraversabilityNet};

use crate::error::{Error, Result};

/// Channel count of the encoder output map.
pub const FEATURE_CHANNELS: usize = 2048;

/// One convolution of an encoder, optionally followed by a rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Small strided encoder. A 128x227 input yields a 17x29 map.
    Tiny { width: usize },
    /// Adapter for an external (dilated) convolutional segmentation backbone,
    /// described block by block; weights are imported from a tensor file.
    SegmentationBackbone { blocks: Vec<ConvBlockSpec> },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Tiny { width: 16 }
    }
}

impl EncoderSpec {
    pub fn blocks(&self) -> Vec<ConvBlockSpec> {
        match self {
            EncoderSpec::Tiny { width } => {
                let w = *width;
                let conv = |in_channels, out_channels, padding| ConvBlockSpec {
                    in_channels,
                    out_channels,
                    geometry: ConvGeometry {
                        kernel: 3,
                        stride: 2,
                        padding,
                        dilation: 1,
                    },
                    relu: true,
                };
                vec![
                    conv(3, w, 1),
                    conv(w, 2 * w, 2),
                    conv(2 * w, 2 * w, 1),
                    ConvBlockSpec {
                        in_channels: 2 * w,
                        out_channels: FEATURE_CHANNELS,
                        geometry: ConvGeometry::pointwise(),
                        relu: true,
                    },
                ]
            }
            EncoderSpec::SegmentationBackbone { blocks } => blocks.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = self.blocks();
        let first = blocks.first().ok_or_else(|| Error::config("encoder has no blocks"))?;
        if first.in_channels != 3 {
            return Err(Error::config("encoder must take 3-channel input"));
        }
        for pair in blocks.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::config(format!(
                    "encoder block channels do not chain: {} -> {}",
                    pair[0].out_channels, pair[1].in_channels
                )));
            }
        }
        for b in &blocks {
            let g = b.geometry;
            if g.kernel == 0 || g.stride == 0 || g.dilation == 0 {
                return Err(Error::config(format!("invalid convolution geometry {g:?}")));
            }
        }
        let out = blocks.last().expect("non-empty").out_channels;
        if out != FEATURE_CHANNELS {
            return Err(Error::config(format!(
                "encoder must emit {FEATURE_CHANNELS} channels, got {out}"
            )));
        }
        Ok(())
    }

    /// Spatial size of the encoder map for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        self.blocks().iter().try_fold((h, w), |(h, w), b| {
            Some((b.geometry.output_len(h)?, b.geometry.output_len(w)?))
        })
    }
}

/// Regression head after the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub reduce_channels: usize,
    pub pooled_h: usize,
    pub pooled_w: usize,
    pub outputs: usize,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            reduce_channels: 64,
            pooled_h: 8,
            pooled_w: 8,
            outputs: crate::types::DEFAULT_SECTIONS,
        }
    }
}

impl HeadSpec {
    /// Width of the flattened pooled map (4096 by default).
    pub fn flattened(&self) -> usize {
        self.reduce_channels * self.pooled_h * self.pooled_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainClassifierSpec {
    pub hidden: Vec<usize>,
    pub reversal_scale: f64,
}

impl Default for DomainClassifierSpec {
    fn default() -> Self {
        Self {
            hidden: vec![1024, 256],
            reversal_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub head: HeadSpec,
    pub domain: DomainClassifierSpec,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::default(),
            head: HeadSpec::default(),
            domain: DomainClassifierSpec::default(),
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelSpec {
    pub fn with_sections(k: usize) -> Self {
        let mut spec = Self::default();
        spec.head.outputs = k;
        spec
    }

    pub fn k(&self) -> usize {
        self.head.outputs
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let h = &self.head;
        if h.reduce_channels == 0 || h.pooled_h == 0 || h.pooled_w == 0 || h.outputs == 0 {
            return Err(Error::config(format!("degenerate head {h:?}")));
        }
        if self.domain.hidden.contains(&0) {
            return Err(Error::config("domain classifier layers must be non-empty"));
        }
        Ok(())
    }
}
