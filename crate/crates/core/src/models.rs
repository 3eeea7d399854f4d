//! Toy segmentation networks used as teacher and student.
//!
//! Layout, for width `F` and `K` classes on 3-channel images:
//!
//! ```text
//! conv 3→F 3×3 pad 1 → relu → conv F→F 3×3 pad 1 → relu ─┬─ feature tap (F channels)
//!                                                          └─ conv F→K 1×1 → score tap (K channels)
//! ```
//!
//! Spatial size is preserved end to end. The feature tap is the
//! pre-classifier activation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dump;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{conv2d, conv2d_backward, conv2d_backward_params, relu, relu_backward, ConvGrads, Shape4, Tensor4};

pub const IN_CHANNELS: usize = 3;

/// Fixed input standardisation applied before the first convolution, taking
/// `[0, 1]` images to `[-1, 1]`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_SCALE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    /// `(c_out, c_in, k, k)`
    pub weight: Tensor4,
    pub bias: Vec<f64>,
    pub pad: usize,
}

impl Conv {
    fn init(rng: &mut Rng, c_in: usize, c_out: usize, k: usize) -> Self {
        let scale = ToyNet::init_scale(c_in * k * k);
        Self {
            weight: Tensor4::uniform(Shape4::new(c_out, c_in, k, k), rng, -scale, scale),
            bias: vec![0.0; c_out],
            pad: k / 2,
        }
    }

    fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        conv2d(x, &self.weight, &self.bias, 1, self.pad)
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    pub width: usize,
    pub classes: usize,
    pub conv1: Conv,
    pub conv2: Conv,
    pub head: Conv,
    /// Seed the parameters were drawn from, when known.
    pub seed: Option<u64>,
}

/// The two distillation taps.
#[derive(Clone, Debug, PartialEq)]
pub struct TapPair {
    pub feature: Tensor4,
    pub score: Tensor4,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Standardised input seen by the first convolution.
    pub input: Tensor4,
    pre1: Tensor4,
    act1: Tensor4,
    pre2: Tensor4,
    pub feature: Tensor4,
    pub score: Tensor4,
}

impl ForwardPass {
    pub fn taps(&self) -> TapPair {
        TapPair {
            feature: self.feature.clone(),
            score: self.score.clone(),
        }
    }

    pub fn into_taps(self) -> TapPair {
        TapPair {
            feature: self.feature,
            score: self.score,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    pub conv1: ConvGrads,
    pub conv2: ConvGrads,
    pub head: ConvGrads,
}

impl NetGrads {
    /// Gradient buffers in [`ToyNet::params`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.conv1.grad_w.data(),
            &self.conv1.grad_b,
            self.conv2.grad_w.data(),
            &self.conv2.grad_b,
            self.head.grad_w.data(),
            &self.head.grad_b,
        ]
    }
}

impl ToyNet {
    /// `sqrt(1 / fan_in)`
    pub fn init_scale(fan_in: usize) -> f64 {
        (1.0 / fan_in as f64).sqrt()
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, zero biases.
    pub fn init(rng: &mut Rng, width: usize, classes: usize) -> Self {
        let conv1 = Conv::init(rng, IN_CHANNELS, width, 3);
        let conv2 = Conv::init(rng, width, width, 3);
        let head = Conv::init(rng, width, classes, 1);
        Self {
            width,
            classes,
            conv1,
            conv2,
            head,
            seed: Some(rng.seed()),
        }
    }

    pub fn from_seed(seed: u64, width: usize, classes: usize) -> Self {
        Self::init(&mut Rng::new(seed), width, classes)
    }

    /// `9·3·F + F + 9·F² + F + F·K + K`
    pub fn param_count_formula(width: usize, classes: usize) -> usize {
        9 * IN_CHANNELS * width + width + 9 * width * width + width + width * classes + classes
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.head.param_count()
    }

    /// Parameter buffers in a fixed order: conv1 w/b, conv2 w/b, head w/b.
    pub fn params(&self) -> Vec<&[f64]> {
        vec![
            self.conv1.weight.data(),
            &self.conv1.bias,
            self.conv2.weight.data(),
            &self.conv2.bias,
            self.head.weight.data(),
            &self.head.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.conv1.weight.data_mut(),
            &mut self.conv1.bias,
            self.conv2.weight.data_mut(),
            &mut self.conv2.bias,
            self.head.weight.data_mut(),
            &mut self.head.bias,
        ]
    }

    pub fn forward(&self, images: &Tensor4) -> Result<ForwardPass> {
        if images.shape().c != IN_CHANNELS {
            return Err(Error::Shape(format!(
                "network expects {IN_CHANNELS} input channels, got {}",
                images.shape()
            )));
        }
        let input = images.map(|v| (v - INPUT_MEAN) / INPUT_SCALE);
        let pre1 = self.conv1.forward(&input)?;
        let act1 = relu(&pre1);
        let pre2 = self.conv2.forward(&act1)?;
        let feature = relu(&pre2);
        let score = self.head.forward(&feature)?;
        Ok(ForwardPass {
            input,
            pre1,
            act1,
            pre2,
            feature,
            score,
        })
    }

    pub fn taps(&self, images: &Tensor4) -> Result<TapPair> {
        Ok(self.forward(images)?.into_taps())
    }

    /// Parameter gradients given gradients on either tap. The score-tap
    /// gradient flows through the head and joins the feature-tap gradient.
    pub fn backward(&self, pass: &ForwardPass, feature_grad: Option<&Tensor4>, score_grad: Option<&Tensor4>) -> Result<NetGrads> {
        let mut g_feat = match feature_grad {
            Some(g) => {
                g.check_same(&pass.feature, "feature-tap gradient")?;
                g.clone()
            }
            None => Tensor4::zeros(pass.feature.shape()),
        };
        let head = match score_grad {
            Some(g) => {
                let hg = conv2d_backward(&pass.feature, &self.head.weight, g, 1, self.head.pad)?;
                g_feat.add_scaled(1.0, &hg.grad_x)?;
                hg
            }
            None => ConvGrads {
                grad_x: Tensor4::zeros(Shape4::new(0, 0, 0, 0)),
                grad_w: Tensor4::zeros(self.head.weight.shape()),
                grad_b: vec![0.0; self.classes],
            },
        };
        let g_pre2 = relu_backward(&pass.pre2, &g_feat)?;
        let conv2 = conv2d_backward(&pass.act1, &self.conv2.weight, &g_pre2, 1, self.conv2.pad)?;
        let g_pre1 = relu_backward(&pass.pre1, &conv2.grad_x)?;
        let conv1 = conv2d_backward_params(&pass.input, &self.conv1.weight, &g_pre1, 1, self.conv1.pad)?;
        Ok(NetGrads { conv1, conv2, head })
    }

    /// Write a manifest plus one CWT1 dump per parameter tensor into `dir`.
    /// Biases are stored as `(1, c, 1, 1)` tensors.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = Vec::new();
        for (name, conv) in self.named_layers() {
            let wfile = format!("{name}.weight.cwt");
            let bfile = format!("{name}.bias.cwt");
            dump::write(&dir.join(&wfile), &conv.weight)?;
            let bias = Tensor4::from_vec(Shape4::new(1, conv.bias.len(), 1, 1), conv.bias.clone())?;
            dump::write(&dir.join(&bfile), &bias)?;
            layers.push(LayerManifest {
                name: name.to_string(),
                weight_shape: conv.weight.shape().dims(),
                pad: conv.pad,
                weight_file: wfile,
                bias_file: bfile,
            });
        }
        let manifest = NetManifest {
            format: MANIFEST_FORMAT.to_string(),
            width: self.width,
            classes: self.classes,
            in_channels: IN_CHANNELS,
            seed: self.seed,
            param_count: self.param_count(),
            layers,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: NetManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT || m.layers.len() != 3 || m.in_channels != IN_CHANNELS {
            return Err(Error::Format {
                path,
                detail: "not a toy-network manifest".into(),
            });
        }
        let mut convs = Vec::new();
        for l in &m.layers {
            let weight = dump::read(&dir.join(&l.weight_file))?;
            let bias = dump::read(&dir.join(&l.bias_file))?.into_data();
            if weight.shape().dims() != l.weight_shape || bias.len() != l.weight_shape[0] {
                return Err(Error::Format {
                    path: dir.join(&l.weight_file),
                    detail: format!("layer {} does not match its manifest", l.name),
                });
            }
            convs.push(Conv {
                weight,
                bias,
                pad: l.pad,
            });
        }
        let head = convs.pop().unwrap();
        let conv2 = convs.pop().unwrap();
        let conv1 = convs.pop().unwrap();
        let net = Self {
            width: m.width,
            classes: m.classes,
            conv1,
            conv2,
            head,
            seed: m.seed,
        };
        if net.conv1.weight.shape() != Shape4::new(m.width, IN_CHANNELS, 3, 3)
            || net.conv2.weight.shape() != Shape4::new(m.width, m.width, 3, 3)
            || net.head.weight.shape() != Shape4::new(m.classes, m.width, 1, 1)
        {
            return Err(Error::Format {
                path,
                detail: "layer shapes inconsistent with width/classes".into(),
            });
        }
        Ok(net)
    }

    fn named_layers(&self) -> [(&'static str, &Conv); 3] {
        [("conv1", &self.conv1), ("conv2", &self.conv2), ("head", &self.head)]
    }
}

pub const MANIFEST_FORMAT: &str = "cwkd-toynet/1";

#[derive(Debug, Serialize, Deserialize)]
struct LayerManifest {
    name: String,
    weight_shape: [usize; 4],
    pad: usize,
    weight_file: String,
    bias_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetManifest {
    format: String,
    width: usize,
    classes: usize,
    in_channels: usize,
    seed: Option<u64>,
    param_count: usize,
    layers: Vec<LayerManifest>,
}
