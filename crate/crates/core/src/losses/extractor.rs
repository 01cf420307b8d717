//! Frozen convolutional feature extractor for the perceptual term.

use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{self, Tensor};
use crate::seeding;

/// Per-channel statistics applied to `[0, 1]` inputs in pretrained mode.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorMode {
    Pretrained,
    #[default]
    FixedRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureExtractorSpec {
    pub mode: ExtractorMode,
    pub n_stages: usize,
    /// Output channels of each stage (fixed_random mode).
    pub stage_widths: Vec<usize>,
    /// Convolutions per stage before pooling (fixed_random mode).
    pub convs_per_stage: usize,
    pub seed: u64,
    pub weights_path: Option<PathBuf>,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        Self {
            mode: ExtractorMode::FixedRandom,
            n_stages: 3,
            stage_widths: vec![8, 16, 32],
            convs_per_stage: 2,
            seed: 0,
            weights_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    cout: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// A stack of stages, each a few 3x3 convolutions with rectifiers followed
/// by 2x2 max pooling. Input images are replicated to three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    stages: Vec<Vec<ConvLayer>>,
    normalize: bool,
}

/// Intermediate values of one extractor pass, kept for the reverse pass.
pub struct ExtractorTrace {
    input: Tensor,
    /// Per stage: the input and output of each convolution, the
    /// pre-pooling activation and the pooling indices.
    stages: Vec<StageTrace>,
}

struct StageTrace {
    conv_inputs: Vec<Tensor>,
    conv_outputs: Vec<Tensor>,
    pool_arg: Vec<usize>,
    output: Tensor,
}

impl FeatureExtractor {
    pub fn build(spec: &FeatureExtractorSpec) -> Result<Self> {
        match spec.mode {
            ExtractorMode::FixedRandom => Self::fixed_random(spec),
            ExtractorMode::Pretrained => {
                let path = spec
                    .weights_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("pretrained extractor needs weights_path".into()))?;
                let ext = Self::from_container(&Container::load(path)?)?;
                if ext.stages.len() < spec.n_stages {
                    return Err(Error::Checkpoint(format!(
                        "{} has {} stages, {} requested",
                        path.display(),
                        ext.stages.len(),
                        spec.n_stages
                    )));
                }
                Ok(Self {
                    stages: ext.stages[..spec.n_stages].to_vec(),
                    normalize: true,
                })
            }
        }
    }

    fn fixed_random(spec: &FeatureExtractorSpec) -> Result<Self> {
        if spec.n_stages == 0 || spec.stage_widths.len() != spec.n_stages || spec.convs_per_stage == 0 {
            return Err(Error::Config(format!(
                "extractor needs n_stages >= 1 widths and convs_per_stage >= 1, got {} stages, widths {:?}",
                spec.n_stages, spec.stage_widths
            )));
        }
        let mut cin = 3;
        let mut stages = Vec::new();
        for (s, &cout) in spec.stage_widths.iter().enumerate() {
            let mut layers = Vec::new();
            for c in 0..spec.convs_per_stage {
                let mut rng = seeding::stream(spec.seed, "extractor", (s * 64 + c) as u64);
                let b = (6.0 / (cin * 9) as f64).sqrt();
                let weight = (0..cout * cin * 9).map(|_| rng.random_range(-b..b)).collect();
                layers.push(ConvLayer {
                    cout,
                    weight,
                    bias: vec![0.0; cout],
                });
                cin = cout;
            }
            stages.push(layers);
        }
        Ok(Self {
            stages,
            normalize: false,
        })
    }

    /// Read arrays named `stage{s}.conv{c}.weight` / `.bias` (both indices
    /// 1-based), weights shaped `[cout, cin, 3, 3]`.
    pub fn from_container(c: &Container) -> Result<Self> {
        let mut stages = Vec::new();
        let mut cin = 3;
        for s in 1.. {
            let mut layers = Vec::new();
            for k in 1.. {
                let name = format!("stage{s}.conv{k}");
                let Some(w) = c.arrays.get(&format!("{name}.weight")) else {
                    break;
                };
                let b = c.get(&format!("{name}.bias"))?;
                let cout = w.shape.first().copied().unwrap_or(0);
                if w.shape != [cout, cin, 3, 3] || b.shape != [cout] {
                    return Err(Error::Checkpoint(format!(
                        "`{name}` has weight {:?} and bias {:?}, expected [{cout}, {cin}, 3, 3] and [{cout}]",
                        w.shape, b.shape
                    )));
                }
                layers.push(ConvLayer {
                    cout,
                    weight: w.data.clone(),
                    bias: b.data.clone(),
                });
                cin = cout;
            }
            if layers.is_empty() {
                break;
            }
            stages.push(layers);
        }
        if stages.is_empty() {
            return Err(Error::Checkpoint("no `stage1.conv1.weight` array".into()));
        }
        Ok(Self {
            stages,
            normalize: true,
        })
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        let mut cin = 3;
        for (s, layers) in self.stages.iter().enumerate() {
            for (k, l) in layers.iter().enumerate() {
                let name = format!("stage{}.conv{}", s + 1, k + 1);
                c.insert(format!("{name}.weight"), vec![l.cout, cin, 3, 3], l.weight.clone());
                c.insert(format!("{name}.bias"), vec![l.cout], l.bias.clone());
                cin = l.cout;
            }
        }
        c
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    fn prepare(&self, image: &Array2<f64>) -> Tensor {
        let (h, w) = image.dim();
        let mut t = Tensor::zeros(3, h, w);
        for c in 0..3 {
            let (m, s) = if self.normalize {
                (IMAGENET_MEAN[c], IMAGENET_STD[c])
            } else {
                (0.0, 1.0)
            };
            for (i, v) in image.iter().enumerate() {
                t.data[c * h * w + i] = (v - m) / s;
            }
        }
        t
    }

    pub fn trace(&self, image: &Array2<f64>) -> ExtractorTrace {
        let input = self.prepare(image);
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut x = input.clone();
        for layers in &self.stages {
            let mut conv_inputs = Vec::new();
            let mut conv_outputs = Vec::new();
            for l in layers {
                let mut y = nn::conv2d(&x, &l.weight, &l.bias, 3, 1, 1);
                nn::relu(&mut y);
                conv_inputs.push(x);
                conv_outputs.push(y.clone());
                x = y;
            }
            let (output, pool_arg) = nn::max_pool2(&x);
            x = output.clone();
            stages.push(StageTrace {
                conv_inputs,
                conv_outputs,
                pool_arg,
                output,
            });
        }
        ExtractorTrace { input, stages }
    }

    /// Outputs of every stage for one image.
    pub fn features(&self, image: &Array2<f64>) -> Vec<Tensor> {
        self.trace(image).stages.into_iter().map(|s| s.output).collect()
    }

    pub fn features_of(&self, trace: &ExtractorTrace) -> Vec<Tensor> {
        trace.stages.iter().map(|s| s.output.clone()).collect()
    }

    /// Gradient with respect to the input image, given gradients with
    /// respect to each stage output.
    pub fn backward(&self, trace: &ExtractorTrace, stage_grads: &[Tensor]) -> Array2<f64> {
        let mut g: Option<Tensor> = None;
        for (s, layers) in self.stages.iter().enumerate().rev() {
            let st = &trace.stages[s];
            let mut go = stage_grads[s].clone();
            if let Some(up) = g.take() {
                for (a, b) in go.data.iter_mut().zip(&up.data) {
                    *a += b;
                }
            }
            let pre = st.conv_outputs.last().expect("non-empty stage");
            let mut gx = nn::max_pool2_backward(&go, &st.pool_arg, pre.shape());
            for (k, l) in layers.iter().enumerate().rev() {
                nn::relu_backward(&st.conv_outputs[k].data, &mut gx.data);
                let cg = nn::conv2d_backward(&st.conv_inputs[k], &l.weight, &gx, 3, 1, 1, false, true);
                gx = cg.input.expect("input gradient requested");
            }
            g = Some(gx);
        }
        let g = g.expect("at least one stage");
        let (h, w) = (trace.input.h, trace.input.w);
        let n = h * w;
        Array2::from_shape_fn((h, w), |(y, x)| {
            let i = y * w + x;
            (0..3)
                .map(|c| {
                    let s = if self.normalize { IMAGENET_STD[c] } else { 1.0 };
                    g.data[c * n + i] / s
                })
                .sum()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, h: usize, w: usize) -> Array2<f64> {
        let mut rng = seeding::rng_from_seed(seed);
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn deterministic_stage_shapes_and_non_constant() {
        let spec = FeatureExtractorSpec::default();
        let a = FeatureExtractor::build(&spec).unwrap();
        assert_eq!(a, FeatureExtractor::build(&spec).unwrap());
        let img = image(1, 32, 24);
        let f = a.features(&img);
        assert_eq!(f, a.features(&img));
        for (k, t) in f.iter().enumerate() {
            assert_eq!((t.c, t.h, t.w), (spec.stage_widths[k], 32 >> (k + 1), 24 >> (k + 1)));
            let (lo, hi) = t.data.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            assert!(hi > lo, "stage {k} is constant");
        }
    }

    #[test]
    fn weights_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = FeatureExtractor::build(&FeatureExtractorSpec::default()).unwrap();
        let path = dir.path().join("vgg.safetensors");
        a.to_container().save(&path).unwrap();
        let spec = FeatureExtractorSpec {
            mode: ExtractorMode::Pretrained,
            n_stages: 2,
            weights_path: Some(path),
            ..FeatureExtractorSpec::default()
        };
        let b = FeatureExtractor::build(&spec).unwrap();
        assert_eq!(b.n_stages(), 2);
        assert_eq!(b.stages[..], a.stages[..2]);
        let missing = FeatureExtractorSpec {
            weights_path: Some(dir.path().join("nope")),
            ..spec
        };
        assert!(FeatureExtractor::build(&missing).is_err());
    }
}
