//! Feature extractor, class predictor, domain classifier and autoencoder.
//!
//! All four are plain MLPs: `x · W + b` per layer with the configured
//! activation between layers and none after the last. Parameters live in
//! [`Mlp`] values; a training step binds them to a tape with [`Mlp::bind`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Number of weight layers shared between the feature extractor and the
/// autoencoder's encoder.
pub const FEATURE_LAYERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    /// Applied after every layer but the last.
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config("widths", format!("need >= 2 positive widths, got {widths:?}")));
        }
        Ok(MlpSpec { widths, activation })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `Σ (w_i · w_{i+1} + w_{i+1})`
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Same layers in reverse order.
    pub fn mirrored(&self) -> MlpSpec {
        MlpSpec { widths: self.widths.iter().rev().copied().collect(), activation: self.activation }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

/// Tape handles for one network's parameters.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
}

impl Mlp {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
                Linear {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("weight dims"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Mlp { spec: spec.clone(), layers }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Linear { weight: Tensor::zeros(&[w[0], w[1]]), bias: Tensor::zeros(&[w[1]]) })
            .collect();
        Mlp { spec: spec.clone(), layers }
    }

    /// Rebuilds a network from stored layers, checking dims against `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Linear>) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return Err(Error::Shape(format!("spec has {} layers, got {}", spec.num_layers(), layers.len())));
        }
        for (i, (l, w)) in layers.iter().zip(spec.widths.windows(2)).enumerate() {
            if l.weight.dims() != [w[0], w[1]] || l.bias.dims() != [w[1]] {
                return Err(Error::Shape(format!(
                    "layer {i}: weight {:?}, bias {:?} do not match widths {}->{}",
                    l.weight.dims(),
                    l.bias.dims(),
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Mlp { spec, layers })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let layers = self.layers.iter().map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))).collect();
        BoundMlp { layers, activation: self.spec.activation }
    }

    /// Parameters in `[w0, b0, w1, b1, ...]` order.
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Forward pass off-tape, for evaluation.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.flatten_rows());
        let consts = BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
                .collect(),
            activation: self.spec.activation,
        };
        let out = consts.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        Ok(h)
    }

    /// Gradients in the same order as [`Mlp::params`].
    pub fn grads(&self, g: &Gradients) -> Vec<Tensor> {
        self.layers.iter().flat_map(|&(w, b)| [g.wrt(w), g.wrt(b)]).collect()
    }
}

/// Default feature-extractor widths for a flattened input of `input` values.
pub fn default_feature_spec(input: usize) -> MlpSpec {
    MlpSpec { widths: vec![input, 256, 128, 64], activation: Activation::Relu }
}

pub fn default_head_spec(features: usize, outputs: usize) -> MlpSpec {
    MlpSpec { widths: vec![features, 32, outputs], activation: Activation::Relu }
}

/// Feature extractor, class predictor and domain classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub feature: Mlp,
    pub classifier: Mlp,
    pub domain: Mlp,
}

/// Tape handles for a whole bundle.
#[derive(Clone, Debug)]
pub struct BoundBundle {
    pub feature: BoundMlp,
    pub classifier: BoundMlp,
    pub domain: BoundMlp,
}

impl ModelBundle {
    pub fn check_specs(feature: &MlpSpec, classifier: &MlpSpec, domain: &MlpSpec) -> Result<()> {
        if feature.num_layers() != FEATURE_LAYERS {
            return Err(Error::config(
                "feature_spec",
                format!("feature extractor needs {FEATURE_LAYERS} weight layers, got {}", feature.num_layers()),
            ));
        }
        let f = feature.output_width();
        if classifier.input_width() != f || domain.input_width() != f {
            return Err(Error::config("head_spec", "classifier and domain heads must take the feature width"));
        }
        if domain.output_width() != 2 {
            return Err(Error::config("domain_spec", "domain classifier must have 2 outputs"));
        }
        Ok(())
    }

    pub fn new(feature: MlpSpec, classifier: MlpSpec, domain: MlpSpec, seed: u64) -> Result<Self> {
        Self::check_specs(&feature, &classifier, &domain)?;
        Ok(ModelBundle {
            feature: Mlp::init(&feature, seed),
            classifier: Mlp::init(&classifier, seed.wrapping_add(1)),
            domain: Mlp::init(&domain, seed.wrapping_add(2)),
        })
    }

    /// Default architecture for `input` flattened features and `classes` classes.
    pub fn with_defaults(input: usize, classes: usize, seed: u64) -> Result<Self> {
        let f = default_feature_spec(input);
        let out = f.output_width();
        Self::new(f, default_head_spec(out, classes), default_head_spec(out, 2), seed)
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.spec.output_width()
    }

    pub fn input_width(&self) -> usize {
        self.feature.spec.input_width()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundBundle {
        BoundBundle {
            feature: self.feature.bind(tape),
            classifier: self.classifier.bind(tape),
            domain: self.domain.bind(tape),
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.feature.params_mut().chain(self.classifier.params_mut()).chain(self.domain.params_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.feature.params().chain(self.classifier.params()).chain(self.domain.params())
    }

    /// Off-tape `G_f(x)`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.feature.infer(x)
    }

    /// Off-tape class logits `D_c(G_f(x))`.
    pub fn class_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.classifier.infer(&self.features(x)?)
    }

    pub fn bit_eq(&self, other: &ModelBundle) -> bool {
        self.params().count() == other.params().count() && self.params().zip(other.params()).all(|(a, b)| a.bit_eq(b))
    }
}

impl BoundBundle {
    /// `G_f` forward on the tape.
    pub fn forward_features(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.feature.forward(tape, x)
    }

    pub fn predict_class(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        self.classifier.forward(tape, f)
    }

    /// `D_d` forward; the caller decides whether `f` went through the
    /// reversal layer first.
    pub fn predict_domain(&self, tape: &mut Tape, f: Var) -> Result<Var> {
        self.domain.forward(tape, f)
    }

    pub fn grads(&self, g: &Gradients) -> Vec<Tensor> {
        let mut out = self.feature.grads(g);
        out.extend(self.classifier.grads(g));
        out.extend(self.domain.grads(g));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl Autoencoder {
    /// Encoder shaped like `feature_spec`, decoder mirroring it.
    pub fn new(feature_spec: &MlpSpec, seed: u64) -> Result<Self> {
        if feature_spec.num_layers() != FEATURE_LAYERS {
            return Err(Error::config("feature_spec", "encoder needs exactly 3 weight layers"));
        }
        Ok(Autoencoder {
            encoder: Mlp::init(feature_spec, seed),
            decoder: Mlp::init(&feature_spec.mirrored(), seed.wrapping_add(1)),
        })
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if decoder.spec.output_width() != encoder.spec.input_width()
            || decoder.spec.input_width() != encoder.spec.output_width()
        {
            return Err(Error::config("decoder", "decoder must map the code back to the input width"));
        }
        Ok(Autoencoder { encoder, decoder })
    }

    /// `Decoder(Encoder(x))`
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decoder.infer(&self.encoder.infer(x)?)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.encoder.params_mut().chain(self.decoder.params_mut())
    }
}

/// Copies the trained encoder into the feature extractor; the heads are
/// left untouched.
pub fn transfer_pretrained(ae: &Autoencoder, bundle: &ModelBundle) -> Result<ModelBundle> {
    if ae.encoder.spec != bundle.feature.spec {
        return Err(Error::config(
            "feature_spec",
            format!(
                "encoder widths {:?} differ from feature extractor widths {:?}",
                ae.encoder.spec.widths, bundle.feature.spec.widths
            ),
        ));
    }
    let mut out = bundle.clone();
    out.feature = ae.encoder.clone();
    Ok(out)
}
