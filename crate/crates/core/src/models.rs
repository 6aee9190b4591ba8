//! The four trainable functions of a continuous-invariance model: featurizer
//! `phi`, classifier `w`, unconditional domain regressor `h`, and
//! label-conditioned domain regressor `g`. Also the binary feature masks used
//! by the feature-selection toy.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    /// Applied after every layer but the last; the output layer is linear.
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        Self {
            widths,
            activation: Activation::Relu,
        }
    }

    pub fn linear(input: usize, output: usize) -> Self {
        Self::new(vec![input, output])
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().expect("validated spec has widths")
    }

    fn validate(&self, part: &str) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Spec(format!("{part}: an MLP needs at least one layer")));
        }
        if self.widths.contains(&0) {
            return Err(Error::Spec(format!("{part}: zero width in {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `fan_in × fan_out`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

/// Tape handles for one MLP's parameters, ordered `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone)]
pub struct MlpVars {
    vars: Vec<Var>,
}

impl MlpVars {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order; zeros where nothing flowed.
    pub fn grads(&self, grads: &Gradients, mlp: &Mlp) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(mlp.params())
            .map(|(v, p)| grads.wrt_or_zeros(*v, p))
            .collect()
    }
}

impl Mlp {
    pub fn init(spec: &MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate("mlp")?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
                Linear {
                    weight: Tensor::from_parts(vec![fan_in, fan_out], data),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate("mlp")?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// Registers parameters as differentiable leaves, or as constants when
    /// `trainable` is false.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        let vars = self
            .params()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        MlpVars { vars }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Result<Var> {
        let width = tape.value(input).cols();
        if width != self.spec.input() {
            return Err(Error::Dimension {
                op: "mlp forward",
                left: tape.value(input).shape().to_vec(),
                right: vec![self.spec.input()],
            });
        }
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, pair) in vars.vars.chunks(2).enumerate() {
            let z = tape.matmul(h, pair[0])?;
            h = tape.add_row_bias(z, pair[1])?;
            if i != last {
                h = match self.spec.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Sigmoid => tape.sigmoid(h),
                    Activation::Identity => h,
                };
            }
        }
        Ok(h)
    }

    /// Untaped forward pass.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let input = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, input)?;
        Ok(tape.value(out).clone())
    }
}

/// Architecture of all four parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub phi: MlpSpec,
    pub w: MlpSpec,
    pub h: MlpSpec,
    pub g: MlpSpec,
    pub classes: usize,
}

impl BundleSpec {
    /// Featurizer with the given hidden widths and feature width, a linear
    /// classifier head, and single-hidden-layer domain regressors.
    pub fn standard(
        input: usize,
        classes: usize,
        domain_dim: usize,
        phi_hidden: &[usize],
        feature_dim: usize,
        penalty_hidden: usize,
    ) -> Self {
        let mut phi = vec![input];
        phi.extend_from_slice(phi_hidden);
        phi.push(feature_dim);
        Self {
            phi: MlpSpec::new(phi),
            w: MlpSpec::linear(feature_dim, logit_width(classes)),
            h: MlpSpec::new(vec![feature_dim, penalty_hidden, domain_dim]),
            g: MlpSpec::new(vec![feature_dim + classes, penalty_hidden, domain_dim]),
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phi.validate("phi")?;
        self.w.validate("w")?;
        self.h.validate("h")?;
        self.g.validate("g")?;
        if self.classes < 2 {
            return Err(Error::Spec(format!("need at least 2 classes, got {}", self.classes)));
        }
        let z = self.phi.output();
        let mismatch = |a: &str, av: usize, b: &str, bv: usize| {
            Error::Spec(format!("width mismatch: {a} = {av} but {b} = {bv}"))
        };
        if self.w.input() != z {
            return Err(mismatch("phi output", z, "w input", self.w.input()));
        }
        if self.h.input() != z {
            return Err(mismatch("phi output", z, "h input", self.h.input()));
        }
        if self.g.input() != z + self.classes {
            return Err(mismatch(
                "phi output + classes",
                z + self.classes,
                "g input",
                self.g.input(),
            ));
        }
        if self.h.output() != self.g.output() {
            return Err(mismatch("h output", self.h.output(), "g output", self.g.output()));
        }
        if self.w.output() != logit_width(self.classes) {
            return Err(mismatch(
                "w output",
                self.w.output(),
                "logit width for classes",
                logit_width(self.classes),
            ));
        }
        Ok(())
    }

    pub fn domain_dim(&self) -> usize {
        self.h.output()
    }
}

/// One logit for binary tasks, one per class otherwise.
pub fn logit_width(classes: usize) -> usize {
    if classes == 2 {
        1
    } else {
        classes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Phi,
    W,
    H,
    G,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::Phi, Part::W, Part::H, Part::G];

    pub fn name(self) -> &'static str {
        match self {
            Part::Phi => "phi",
            Part::W => "w",
            Part::H => "h",
            Part::G => "g",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub phi: Mlp,
    pub w: Mlp,
    pub h: Mlp,
    pub g: Mlp,
    pub classes: usize,
}

/// Which parts receive gradients when bound to a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub phi: bool,
    pub w: bool,
    pub h: bool,
    pub g: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        phi: true,
        w: true,
        h: true,
        g: true,
    };
    pub const NONE: Trainable = Trainable {
        phi: false,
        w: false,
        h: false,
        g: false,
    };
}

#[derive(Debug, Clone)]
pub struct BundleVars {
    pub phi: MlpVars,
    pub w: MlpVars,
    pub h: MlpVars,
    pub g: MlpVars,
}

impl BundleVars {
    /// Reassembles handles for parameters registered in [`ModelBundle::flat_params`] order.
    pub fn from_flat(bundle: &ModelBundle, vars: &[Var]) -> Result<Self> {
        let counts: Vec<usize> = Part::ALL.iter().map(|&p| bundle.part(p).params().count()).collect();
        let total: usize = counts.iter().sum();
        if vars.len() != total {
            return Err(Error::Dimension {
                op: "BundleVars::from_flat",
                left: vec![vars.len()],
                right: vec![total],
            });
        }
        let mut rest = vars;
        let mut take = |k: usize| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            MlpVars { vars: head.to_vec() }
        };
        Ok(Self {
            phi: take(counts[0]),
            w: take(counts[1]),
            h: take(counts[2]),
            g: take(counts[3]),
        })
    }

    pub fn part(&self, part: Part) -> &MlpVars {
        match part {
            Part::Phi => &self.phi,
            Part::W => &self.w,
            Part::H => &self.h,
            Part::G => &self.g,
        }
    }
}

/// Outputs of [`forward_bundle`], all recorded on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BundleOutputs {
    pub logits: Var,
    pub z: Var,
    pub t_h: Var,
    pub t_g: Var,
}

/// Flat JSON entry for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ModelBundle {
    /// Deterministic Glorot-uniform initialization with zero biases.
    pub fn init(spec: &BundleSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            phi: Mlp::init(&spec.phi, &mut rng)?,
            w: Mlp::init(&spec.w, &mut rng)?,
            h: Mlp::init(&spec.h, &mut rng)?,
            g: Mlp::init(&spec.g, &mut rng)?,
            classes: spec.classes,
        })
    }

    pub fn zeros(spec: &BundleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            phi: Mlp::zeros(&spec.phi)?,
            w: Mlp::zeros(&spec.w)?,
            h: Mlp::zeros(&spec.h)?,
            g: Mlp::zeros(&spec.g)?,
            classes: spec.classes,
        })
    }

    pub fn spec(&self) -> BundleSpec {
        BundleSpec {
            phi: self.phi.spec.clone(),
            w: self.w.spec.clone(),
            h: self.h.spec.clone(),
            g: self.g.spec.clone(),
            classes: self.classes,
        }
    }

    pub fn part(&self, part: Part) -> &Mlp {
        match part {
            Part::Phi => &self.phi,
            Part::W => &self.w,
            Part::H => &self.h,
            Part::G => &self.g,
        }
    }

    pub fn part_mut(&mut self, part: Part) -> &mut Mlp {
        match part {
            Part::Phi => &mut self.phi,
            Part::W => &mut self.w,
            Part::H => &mut self.h,
            Part::G => &mut self.g,
        }
    }

    pub fn param_count(&self) -> usize {
        Part::ALL.iter().map(|&p| self.part(p).param_count()).sum()
    }

    pub fn domain_dim(&self) -> usize {
        self.h.spec.output()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: Trainable) -> BundleVars {
        BundleVars {
            phi: self.phi.bind(tape, trainable.phi),
            w: self.w.bind(tape, trainable.w),
            h: self.h.bind(tape, trainable.h),
            g: self.g.bind(tape, trainable.g),
        }
    }

    /// Every parameter tensor, parts in `phi, w, h, g` order.
    pub fn flat_params(&self) -> Vec<Tensor> {
        Part::ALL.iter().flat_map(|&p| self.part(p).params().cloned()).collect()
    }

    pub fn all_finite(&self) -> bool {
        Part::ALL
            .iter()
            .all(|&p| self.part(p).params().all(Tensor::all_finite))
    }

    /// Flat `{name -> {shape, values}}` map, names like `phi.0.weight`.
    pub fn to_param_map(&self) -> BTreeMap<String, ParamEntry> {
        let mut out = BTreeMap::new();
        for part in Part::ALL {
            for (i, layer) in self.part(part).layers.iter().enumerate() {
                for (kind, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
                    out.insert(
                        format!("{}.{i}.{kind}", part.name()),
                        ParamEntry {
                            shape: t.shape().to_vec(),
                            values: t.data().to_vec(),
                        },
                    );
                }
            }
        }
        out
    }

    /// Overwrites parameters from a map produced by [`Self::to_param_map`].
    pub fn load_param_map(&mut self, map: &BTreeMap<String, ParamEntry>) -> Result<()> {
        let expected = self.to_param_map();
        if let Some(extra) = map.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::schema(extra.clone(), "unknown parameter name"));
        }
        for part in Part::ALL {
            for (i, layer) in self.part_mut(part).layers.iter_mut().enumerate() {
                for (kind, t) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                    let name = format!("{}.{i}.{kind}", part.name());
                    let entry = map
                        .get(&name)
                        .ok_or_else(|| Error::schema(name.clone(), "missing parameter"))?;
                    if entry.shape != t.shape() {
                        return Err(Error::schema(
                            name,
                            format!("shape {:?} does not match {:?}", entry.shape, t.shape()),
                        ));
                    }
                    *t = Tensor::new(entry.shape.clone(), entry.values.clone())?;
                }
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_param_map())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads parameters saved by [`Self::save_json`] into a bundle of `spec`.
    pub fn load_json(spec: &BundleSpec, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, ParamEntry> = serde_json::from_str(&text)?;
        let mut bundle = Self::zeros(spec)?;
        bundle.load_param_map(&map)?;
        Ok(bundle)
    }
}

/// `n × classes` one-hot encoding.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        data[i * classes + y] = 1.0;
    }
    Tensor::from_parts(vec![labels.len(), classes], data)
}

/// Runs all four parts on a batch: `z = phi(x)`, `logits = w(z)`,
/// `t_h = h(z)`, `t_g = g(z ⊕ onehot(y))`.
pub fn forward_bundle(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BundleVars,
    x: &Tensor,
    y: &[usize],
) -> Result<BundleOutputs> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            op: "forward_bundle",
            left: x.shape().to_vec(),
            right: vec![y.len()],
        });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= bundle.classes) {
        return Err(Error::validation(format!("label {bad} outside {} classes", bundle.classes)));
    }
    let input = tape.constant(x.clone());
    let z = bundle.phi.forward(tape, &vars.phi, input)?;
    let logits = bundle.w.forward(tape, &vars.w, z)?;
    let t_h = bundle.h.forward(tape, &vars.h, z)?;
    let onehot = tape.constant(one_hot(y, bundle.classes));
    let zy = tape.concat_cols(z, onehot)?;
    let t_g = bundle.g.forward(tape, &vars.g, zy)?;
    Ok(BundleOutputs { logits, z, t_h, t_g })
}

/// Binary mask over input coordinates, split into an invariant block and a
/// spurious block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    bits: Vec<u8>,
    /// Number of leading coordinates that form the invariant block.
    pub invariant_len: usize,
}

impl FeatureMask {
    pub fn new(bits: Vec<u8>, invariant_len: usize) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::validation("feature mask entries must be 0 or 1"));
        }
        if invariant_len > bits.len() {
            return Err(Error::validation("invariant block longer than mask"));
        }
        Ok(Self { bits, invariant_len })
    }

    /// Keeps only the first `invariant_len` of `width` coordinates.
    pub fn invariant_only(width: usize, invariant_len: usize) -> Result<Self> {
        Self::new((0..width).map(|i| u8::from(i < invariant_len)).collect(), invariant_len)
    }

    /// Keeps only the coordinates after the invariant block.
    pub fn spurious_only(width: usize, invariant_len: usize) -> Result<Self> {
        Self::new((0..width).map(|i| u8::from(i >= invariant_len)).collect(), invariant_len)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}

/// Coordinatewise product of every row of `x` with `mask`.
pub fn apply_mask(mask: &FeatureMask, x: &Tensor) -> Result<Tensor> {
    let width = x.cols();
    if width != mask.bits.len() {
        return Err(Error::Dimension {
            op: "apply_mask",
            left: vec![mask.bits.len()],
            right: x.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(width) {
        for (v, &b) in row.iter_mut().zip(&mask.bits) {
            if b == 0 {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}
