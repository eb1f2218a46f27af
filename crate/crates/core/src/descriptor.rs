//! Architecture strings such as `1x29x29-20C4-MP2-40C5-MP3-150N-10N`.
//!
//! Tokens are separated by `-`:
//!
//! * `MxHxW` input with `M` maps of `H`x`W` pixels (first token only)
//! * `<n>C<k>` valid convolution, `n` output maps, `k`x`k` kernel
//! * `MP<p>` or `<n>MP<p>` max pooling over non-overlapping `p`x`p` regions;
//!   the optional `n` must equal the current map count
//! * `<n>N` fully connected layer with `n` units
//!
//! Shapes are inferred while parsing and every layer is validated against
//! its input shape.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Input {
        maps: usize,
        height: usize,
        width: usize,
    },
    Conv {
        maps: usize,
        kernel: usize,
    },
    MaxPool {
        size: usize,
    },
    Fully {
        units: usize,
    },
}

/// Output shape of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial {
        maps: usize,
        height: usize,
        width: usize,
    },
    Flat {
        units: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial {
                maps,
                height,
                width,
            } => maps * height * width,
            Shape::Flat { units } => units,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Spatial {
                maps,
                height,
                width,
            } => vec![maps, height, width],
            Shape::Flat { units } => vec![units],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Spatial {
                maps,
                height,
                width,
            } => write!(f, "{maps}x{height}x{width}"),
            Shape::Flat { units } => write!(f, "{units}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DescriptorError {
    #[error("empty descriptor")]
    Empty,
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("first token `{0}` is not an input layer (expected MxHxW)")]
    FirstNotInput(String),
    #[error("input token `{0}` may only appear first")]
    MisplacedInput(String),
    #[error("token `{0}` has a zero or too small parameter")]
    BadParameter(String),
    #[error("pooling token `{token}`: size {size} does not divide {height}x{width}")]
    PoolNotDivisible {
        token: String,
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("convolution token `{token}`: kernel {kernel} larger than input {height}x{width}")]
    KernelTooLarge {
        token: String,
        kernel: usize,
        height: usize,
        width: usize,
    },
    #[error(
        "pooling token `{token}`: map prefix {found} does not match current map count {expected}"
    )]
    MapPrefixMismatch {
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("spatial token `{0}` follows a fully connected layer")]
    SpatialAfterFully(String),
    #[error("descriptor must end with a fully connected output layer")]
    MissingOutput,
    #[error("output layer needs at least 2 units, got {0}")]
    TooFewClasses(usize),
}

/// A parsed and shape-checked architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetDescriptor {
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
}

fn number(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_input(token: &str) -> Option<LayerSpec> {
    let mut parts = token.split('x');
    let maps = number(parts.next()?)?;
    let height = number(parts.next()?)?;
    let width = number(parts.next()?)?;
    if parts.next().is_some() {
        return None;
    }
    Some(LayerSpec::Input {
        maps,
        height,
        width,
    })
}

enum Token {
    Input(LayerSpec),
    Conv { maps: usize, kernel: usize },
    Pool { prefix: Option<usize>, size: usize },
    Fully { units: usize },
}

fn lex(token: &str) -> Option<Token> {
    if let Some(spec) = parse_input(token) {
        return Some(Token::Input(spec));
    }
    if let Some(idx) = token.find("MP") {
        let prefix = &token[..idx];
        let size = number(&token[idx + 2..])?;
        let prefix = if prefix.is_empty() {
            None
        } else {
            Some(number(prefix)?)
        };
        return Some(Token::Pool { prefix, size });
    }
    if let Some((maps, kernel)) = token.split_once('C') {
        return Some(Token::Conv {
            maps: number(maps)?,
            kernel: number(kernel)?,
        });
    }
    if let Some(units) = token.strip_suffix('N') {
        return Some(Token::Fully {
            units: number(units)?,
        });
    }
    None
}

impl NetDescriptor {
    pub fn parse(s: &str) -> Result<Self, DescriptorError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(DescriptorError::Empty);
        }
        let mut tokens = s.split('-');
        let first = tokens.next().unwrap_or_default();
        let input = match lex(first) {
            Some(Token::Input(spec)) => spec,
            Some(_) => return Err(DescriptorError::FirstNotInput(first.to_string())),
            None => return Err(DescriptorError::UnknownToken(first.to_string())),
        };
        let LayerSpec::Input {
            maps,
            height,
            width,
        } = input
        else {
            unreachable!()
        };
        if maps == 0 || height == 0 || width == 0 {
            return Err(DescriptorError::BadParameter(first.to_string()));
        }
        let mut layers = vec![input];
        let mut shapes = vec![Shape::Spatial {
            maps,
            height,
            width,
        }];

        for token in tokens {
            let current = *shapes.last().unwrap();
            let bad = || DescriptorError::BadParameter(token.to_string());
            let lexed =
                lex(token).ok_or_else(|| DescriptorError::UnknownToken(token.to_string()))?;
            let (spec, shape) = match lexed {
                Token::Input(_) => return Err(DescriptorError::MisplacedInput(token.to_string())),
                Token::Conv { maps, kernel } => {
                    if maps == 0 || kernel == 0 {
                        return Err(bad());
                    }
                    let Shape::Spatial { height, width, .. } = current else {
                        return Err(DescriptorError::SpatialAfterFully(token.to_string()));
                    };
                    if kernel > height || kernel > width {
                        return Err(DescriptorError::KernelTooLarge {
                            token: token.to_string(),
                            kernel,
                            height,
                            width,
                        });
                    }
                    (
                        LayerSpec::Conv { maps, kernel },
                        Shape::Spatial {
                            maps,
                            height: height - kernel + 1,
                            width: width - kernel + 1,
                        },
                    )
                }
                Token::Pool { prefix, size } => {
                    if size < 2 || prefix == Some(0) {
                        return Err(bad());
                    }
                    let Shape::Spatial {
                        maps,
                        height,
                        width,
                    } = current
                    else {
                        return Err(DescriptorError::SpatialAfterFully(token.to_string()));
                    };
                    if let Some(found) = prefix {
                        if found != maps {
                            return Err(DescriptorError::MapPrefixMismatch {
                                token: token.to_string(),
                                expected: maps,
                                found,
                            });
                        }
                    }
                    if height % size != 0 || width % size != 0 {
                        return Err(DescriptorError::PoolNotDivisible {
                            token: token.to_string(),
                            size,
                            height,
                            width,
                        });
                    }
                    (
                        LayerSpec::MaxPool { size },
                        Shape::Spatial {
                            maps,
                            height: height / size,
                            width: width / size,
                        },
                    )
                }
                Token::Fully { units } => {
                    if units == 0 {
                        return Err(bad());
                    }
                    (LayerSpec::Fully { units }, Shape::Flat { units })
                }
            };
            layers.push(spec);
            shapes.push(shape);
        }

        match layers.last() {
            Some(LayerSpec::Fully { units }) if *units < 2 => {
                Err(DescriptorError::TooFewClasses(*units))
            }
            Some(LayerSpec::Fully { .. }) => Ok(Self { layers, shapes }),
            _ => Err(DescriptorError::MissingOutput),
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of every layer, index-aligned with [`Self::layers`].
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self.layers[0] {
            LayerSpec::Input {
                maps,
                height,
                width,
            } => (maps, height, width),
            _ => unreachable!("validated at parse time"),
        }
    }

    pub fn class_count(&self) -> usize {
        self.shapes.last().map(Shape::len).unwrap_or(0)
    }

    /// Number of trainable parameters (weights plus biases) of layer `i`.
    pub fn param_count(&self, i: usize) -> usize {
        let input = match i {
            0 => return 0,
            _ => self.shapes[i - 1],
        };
        match self.layers[i] {
            LayerSpec::Conv { maps, kernel } => {
                let in_maps = input.dims()[0];
                maps * in_maps * kernel * kernel + maps
            }
            LayerSpec::Fully { units } => units * input.len() + units,
            LayerSpec::Input { .. } | LayerSpec::MaxPool { .. } => 0,
        }
    }

    pub fn total_params(&self) -> usize {
        (0..self.layers.len()).map(|i| self.param_count(i)).sum()
    }

    /// Per-layer table in the style of the usual architecture listings.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<5} {:<16} {:<26} {:<8} {:>12}\n",
            "layer", "type", "maps and neurons", "kernel", "params"
        ));
        for (i, (spec, shape)) in self.layers.iter().zip(&self.shapes).enumerate() {
            let (kind, kernel) = match spec {
                LayerSpec::Input { .. } => ("input", String::new()),
                LayerSpec::Conv { kernel, .. } => ("convolutional", format!("{kernel}x{kernel}")),
                LayerSpec::MaxPool { size } => ("max pooling", format!("{size}x{size}")),
                LayerSpec::Fully { .. } => ("fully connected", "1x1".to_string()),
            };
            let neurons = match *shape {
                Shape::Spatial {
                    maps,
                    height,
                    width,
                } => {
                    format!("{maps} maps of {height}x{width} neurons")
                }
                Shape::Flat { units } => format!("{units} neurons"),
            };
            out.push_str(&format!(
                "{:<5} {:<16} {:<26} {:<8} {:>12}\n",
                i,
                kind,
                neurons,
                kernel,
                self.param_count(i)
            ));
        }
        out.push_str(&format!("total parameters: {}\n", self.total_params()));
        out
    }
}

impl fmt::Display for NetDescriptor {
    /// Canonical form; pooling tokens never carry a map prefix.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, spec) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            match spec {
                LayerSpec::Input {
                    maps,
                    height,
                    width,
                } => write!(f, "{maps}x{height}x{width}")?,
                LayerSpec::Conv { maps, kernel } => write!(f, "{maps}C{kernel}")?,
                LayerSpec::MaxPool { size } => write!(f, "MP{size}")?,
                LayerSpec::Fully { units } => write!(f, "{units}N")?,
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for NetDescriptor {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}
