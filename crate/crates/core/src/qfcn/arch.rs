use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
        momentum: f64,
    },
    Relu,
    Upsample {
        factor: usize,
    },
}

/// Layer list of one fully convolutional Q-network.
///
/// The text form is a single line, for example
/// `in=2 conv(2,3,3,2,1) bn(3,0.1) relu conv(3,1,1,1,0) up(2)`, where
/// `conv(in,out,kernel,stride,padding)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

fn conv(i: usize, o: usize, k: usize, s: usize, p: usize) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
    }
}

fn bn(c: usize) -> LayerSpec {
    LayerSpec::BatchNorm {
        channels: c,
        momentum: BN_MOMENTUM,
    }
}

impl Architecture {
    /// Four stride-2 3x3 conv+BN+ReLU encoder blocks
    /// (4 -> 16 -> 32 -> 32 -> 32 channels), a 1x1 conv+BN+ReLU, a linear 1x1
    /// conv to one Q channel, and x16 bilinear upsampling.
    pub fn stride16() -> Self {
        Self::encoder(&[2, 2, 2, 2])
    }

    /// Two stride-2 and two stride-1 blocks with x4 upsampling, so Q maps
    /// resolve features a quarter the size of the stride-16 lattice.
    pub fn stride4() -> Self {
        Self::encoder(&[2, 2, 1, 1])
    }

    fn encoder(strides: &[usize; 4]) -> Self {
        let mut layers = Vec::new();
        let widths = [4, 16, 32, 32, 32];
        for (w, &s) in widths.windows(2).zip(strides) {
            layers.extend([conv(w[0], w[1], 3, s, 1), bn(w[1]), LayerSpec::Relu]);
        }
        layers.extend([
            conv(32, 32, 1, 1, 0),
            bn(32),
            LayerSpec::Relu,
            conv(32, 1, 1, 1, 0),
            LayerSpec::Upsample {
                factor: strides.iter().product(),
            },
        ]);
        let arch = Self {
            input_channels: 4,
            layers,
        };
        arch.validate().expect("encoder architecture is valid");
        arch
    }

    /// Two-channel 8x8 network used for gradient checking.
    pub fn tiny() -> Self {
        let arch = Self {
            input_channels: 2,
            layers: vec![
                conv(2, 3, 3, 2, 1),
                bn(3),
                LayerSpec::Relu,
                conv(3, 2, 1, 1, 0),
                bn(2),
                LayerSpec::Relu,
                conv(2, 1, 1, 1, 0),
                LayerSpec::Upsample { factor: 2 },
            ],
        };
        arch.validate().expect("tiny architecture is valid");
        arch
    }

    /// Checks channel continuity and the single-channel output.
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels;
        if channels == 0 {
            return Err(Error::InvalidArchitecture("zero input channels".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => {
                    if in_channels != channels {
                        return Err(Error::InvalidArchitecture(format!(
                            "layer {i}: conv expects {in_channels} channels but receives {channels}"
                        )));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::InvalidArchitecture(format!("layer {i}: degenerate conv")));
                    }
                    channels = out_channels;
                }
                LayerSpec::BatchNorm { channels: c, momentum } => {
                    if c != channels {
                        return Err(Error::InvalidArchitecture(format!(
                            "layer {i}: batch norm over {c} channels but receives {channels}"
                        )));
                    }
                    if !(0.0..=1.0).contains(&momentum) {
                        return Err(Error::InvalidArchitecture(format!("layer {i}: momentum {momentum}")));
                    }
                }
                LayerSpec::Relu => {}
                LayerSpec::Upsample { factor } => {
                    if factor == 0 {
                        return Err(Error::InvalidArchitecture(format!("layer {i}: zero upsample factor")));
                    }
                }
            }
        }
        if channels != 1 {
            return Err(Error::InvalidArchitecture(format!(
                "final layer produces {channels} channels, expected 1"
            )));
        }
        if !matches!(self.layers.iter().rev().find(|l| !matches!(l, LayerSpec::Upsample { .. })), Some(LayerSpec::Conv { .. })) {
            return Err(Error::InvalidArchitecture("network must end in a conv (optionally upsampled)".into()));
        }
        Ok(())
    }

    /// Spatial output size for a given input size.
    pub fn output_size(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        let (mut r, mut c) = (rows, cols);
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    if r + 2 * padding < kernel || c + 2 * padding < kernel {
                        return Err(Error::ShapeMismatch(format!("{r}x{c} input smaller than {kernel}x{kernel} kernel")));
                    }
                    r = (r + 2 * padding - kernel) / stride + 1;
                    c = (c + 2 * padding - kernel) / stride + 1;
                }
                LayerSpec::Upsample { factor } => {
                    r *= factor;
                    c *= factor;
                }
                _ => {}
            }
        }
        Ok((r, c))
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in={}", self.input_channels)?;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => write!(f, " conv({in_channels},{out_channels},{kernel},{stride},{padding})")?,
                LayerSpec::BatchNorm { channels, momentum } => write!(f, " bn({channels},{momentum})")?,
                LayerSpec::Relu => write!(f, " relu")?,
                LayerSpec::Upsample { factor } => write!(f, " up({factor})")?,
            }
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |tok: &str| Error::Parse(format!("bad architecture token `{tok}`"));
        let mut tokens = s.split_whitespace();
        let first = tokens.next().ok_or_else(|| Error::Parse("empty architecture".into()))?;
        let input_channels = first
            .strip_prefix("in=")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(first))?;
        let args = |tok: &str, name: &str| -> Result<Vec<String>> {
            let inner = tok
                .strip_prefix(name)
                .and_then(|t| t.strip_prefix('('))
                .and_then(|t| t.strip_suffix(')'))
                .ok_or_else(|| bad(tok))?;
            Ok(inner.split(',').map(|a| a.trim().to_string()).collect())
        };
        let mut layers = Vec::new();
        for tok in tokens {
            let layer = if tok == "relu" {
                LayerSpec::Relu
            } else if tok.starts_with("conv(") {
                let a = args(tok, "conv")?;
                let n: Vec<usize> = a.iter().map(|x| x.parse().map_err(|_| bad(tok))).collect::<Result<_>>()?;
                if n.len() != 5 {
                    return Err(bad(tok));
                }
                conv(n[0], n[1], n[2], n[3], n[4])
            } else if tok.starts_with("bn(") {
                let a = args(tok, "bn")?;
                if a.len() != 2 {
                    return Err(bad(tok));
                }
                LayerSpec::BatchNorm {
                    channels: a[0].parse().map_err(|_| bad(tok))?,
                    momentum: a[1].parse().map_err(|_| bad(tok))?,
                }
            } else if tok.starts_with("up(") {
                let a = args(tok, "up")?;
                LayerSpec::Upsample {
                    factor: a[0].parse().map_err(|_| bad(tok))?,
                }
            } else {
                return Err(bad(tok));
            };
            layers.push(layer);
        }
        Ok(Self {
            input_channels,
            layers,
        })
    }
}
