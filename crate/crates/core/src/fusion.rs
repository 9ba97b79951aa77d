//! Fusion heads: concatenate, add or multiply an image vector with a text
//! vector and classify the result with three linear layers.
//!
//! ```text
//! Concat:  z = [image ∥ text]
//! Add:     z = P_img(image) + P_txt(text)
//! Mul:     z = P_img(image) ⊙ P_txt(text)
//! logits = fc3(σ(fc2(σ(fc1(z)))))
//! ```
//!
//! Parameters are stored as row-major `out × in` weight matrices plus bias
//! vectors. Batches are row-major `rows × width` slices.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{accumulate_dyt_x, matmul_dy_w, matmul_xwt, Scalar};
use crate::vocab::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    #[serde(alias = "cat")]
    Concat,
    Add,
    Mul,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 3] = [FusionMethod::Concat, FusionMethod::Add, FusionMethod::Mul];

    /// Short name used in model tags (`cat`, `add`, `mul`).
    pub fn short_name(self) -> &'static str {
        match self {
            FusionMethod::Concat => "cat",
            FusionMethod::Add => "add",
            FusionMethod::Mul => "mul",
        }
    }

    pub fn uses_projections(self) -> bool {
        !matches!(self, FusionMethod::Concat)
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat" | "concat" => Ok(FusionMethod::Concat),
            "add" => Ok(FusionMethod::Add),
            "mul" => Ok(FusionMethod::Mul),
            other => Err(Error::Config(format!("unknown fusion method {other:?}"))),
        }
    }
}

/// Nonlinearity between the three classifier layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            // NaN must propagate so that a diverging run is detected
            Activation::Relu => {
                if x > T::zero() || x.is_nan() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and the activation value `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }
}

fn default_common_dim() -> usize {
    512
}

fn default_hidden_dims() -> [usize; 2] {
    [512, 256]
}

fn default_num_classes() -> usize {
    NUM_CLASSES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub method: FusionMethod,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Width both modalities are projected to before add/mul fusion.
    #[serde(default = "default_common_dim")]
    pub common_dim: usize,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: [usize; 2],
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Inverted dropout after each hidden activation, training only. 0 disables it.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FusionConfig {
    pub fn new(method: FusionMethod, image_dim: usize, text_dim: usize) -> Self {
        FusionConfig {
            method,
            image_dim,
            text_dim,
            common_dim: default_common_dim(),
            hidden_dims: default_hidden_dims(),
            num_classes: NUM_CLASSES,
            activation: Activation::default(),
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("image_dim", self.image_dim),
            ("text_dim", self.text_dim),
            ("common_dim", self.common_dim),
            ("hidden_dims[0]", self.hidden_dims[0]),
            ("hidden_dims[1]", self.hidden_dims[1]),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Width of the fused vector fed to the first classifier layer.
    pub fn fused_dim(&self) -> usize {
        match self.method {
            FusionMethod::Concat => self.image_dim + self.text_dim,
            FusionMethod::Add | FusionMethod::Mul => self.common_dim,
        }
    }
}

/// Affine map `y = x·Wᵀ + b` with `W` stored `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Uniform in `±1/sqrt(in_dim)` for weights and biases alike.
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / num_traits::Float::sqrt(in_dim as f64);
        let mut sample = || T::lit((rng.gen::<f64>() * 2.0 - 1.0) * bound);
        let weight = (0..in_dim * out_dim).map(|_| sample()).collect();
        let bias = (0..out_dim).map(|_| sample()).collect();
        Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let mut y = vec![T::zero(); rows * self.out_dim];
        matmul_xwt(x, &self.weight, rows, self.in_dim, self.out_dim, &mut y);
        for row in y.chunks_exact_mut(self.out_dim) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v = *v + *b;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx` when
    /// `want_input_grad` is set.
    fn backward(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Linear<T>, want_input_grad: bool) -> Option<Vec<T>> {
        accumulate_dyt_x(dy, x, rows, self.out_dim, self.in_dim, &mut grad.weight);
        for row in dy.chunks_exact(self.out_dim) {
            for (g, d) in grad.bias.iter_mut().zip(row) {
                *g = *g + *d;
            }
        }
        want_input_grad.then(|| {
            let mut dx = vec![T::zero(); rows * self.in_dim];
            matmul_dy_w(dy, &self.weight, rows, self.out_dim, self.in_dim, &mut dx);
            dx
        })
    }
}

/// Intermediate values of a batched forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub rows: usize,
    proj_image: Vec<T>,
    proj_text: Vec<T>,
    fused: Vec<T>,
    pre1: Vec<T>,
    act1: Vec<T>,
    mask1: Option<Vec<T>>,
    pre2: Vec<T>,
    act2: Vec<T>,
    mask2: Option<Vec<T>>,
    pub logits: Vec<T>,
}

/// A named view of one parameter array.
#[derive(Debug, Clone, Copy)]
pub struct NamedParam<'a, T> {
    pub name: &'static str,
    pub shape: &'a [usize],
    pub data: &'a [T],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel<T> {
    config: FusionConfig,
    image_proj: Option<Linear<T>>,
    text_proj: Option<Linear<T>>,
    fc1: Linear<T>,
    fc2: Linear<T>,
    fc3: Linear<T>,
}

const LINEAR_NAMES: [(&str, &str, &str); 5] = [
    ("image_proj", "image_proj.weight", "image_proj.bias"),
    ("text_proj", "text_proj.weight", "text_proj.bias"),
    ("fc1", "fc1.weight", "fc1.bias"),
    ("fc2", "fc2.weight", "fc2.bias"),
    ("fc3", "fc3.weight", "fc3.bias"),
];

impl<T: Scalar> FusionModel<T> {
    /// Seeded fan-in-scaled initialization; identical for a fixed config.
    pub fn init(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (image_proj, text_proj) = if config.method.uses_projections() {
            (
                Some(Linear::init(config.image_dim, config.common_dim, &mut rng)),
                Some(Linear::init(config.text_dim, config.common_dim, &mut rng)),
            )
        } else {
            (None, None)
        };
        let [h1, h2] = config.hidden_dims;
        let fc1 = Linear::init(config.fused_dim(), h1, &mut rng);
        let fc2 = Linear::init(h1, h2, &mut rng);
        let fc3 = Linear::init(h2, config.num_classes, &mut rng);
        Ok(FusionModel {
            config,
            image_proj,
            text_proj,
            fc1,
            fc2,
            fc3,
        })
    }

    /// A model of the same shape with every parameter zero; used as a
    /// gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear<T>| Linear::zeros(l.in_dim, l.out_dim);
        FusionModel {
            config: self.config.clone(),
            image_proj: self.image_proj.as_ref().map(z),
            text_proj: self.text_proj.as_ref().map(z),
            fc1: z(&self.fc1),
            fc2: z(&self.fc2),
            fc3: z(&self.fc3),
        }
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    fn linears(&self) -> [Option<&Linear<T>>; 5] {
        [
            self.image_proj.as_ref(),
            self.text_proj.as_ref(),
            Some(&self.fc1),
            Some(&self.fc2),
            Some(&self.fc3),
        ]
    }

    fn linears_mut(&mut self) -> [Option<&mut Linear<T>>; 5] {
        [
            self.image_proj.as_mut(),
            self.text_proj.as_mut(),
            Some(&mut self.fc1),
            Some(&mut self.fc2),
            Some(&mut self.fc3),
        ]
    }

    /// Input width of the first classifier layer.
    pub fn first_layer_in_dim(&self) -> usize {
        self.fc1.in_dim
    }

    /// Output widths of the image and text projections (add/mul heads only).
    pub fn projection_out_dims(&self) -> Option<(usize, usize)> {
        match (&self.image_proj, &self.text_proj) {
            (Some(i), Some(t)) => Some((i.out_dim, t.out_dim)),
            _ => None,
        }
    }

    /// Every parameter array in a fixed order, with its name and shape.
    pub fn named_parameters(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for ((_, wname, bname), lin) in LINEAR_NAMES.iter().zip(self.linears()) {
            if let Some(l) = lin {
                out.push((String::from(*wname), vec![l.out_dim, l.in_dim], l.weight.as_slice()));
                out.push((String::from(*bname), vec![l.out_dim], l.bias.as_slice()));
            }
        }
        out
    }

    /// Parameter arrays in the same order as [`Self::named_parameters`].
    pub fn param_slices(&self) -> Vec<&[T]> {
        self.linears()
            .into_iter()
            .flatten()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.linears_mut()
            .into_iter()
            .flatten()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Replaces the contents of one named parameter array.
    pub fn set_parameter(&mut self, name: &str, data: &[T]) -> Result<()> {
        for ((_, wname, bname), lin) in LINEAR_NAMES.iter().zip(self.linears_mut()) {
            let Some(l) = lin else { continue };
            let target = if name == *wname {
                &mut l.weight
            } else if name == *bname {
                &mut l.bias
            } else {
                continue;
            };
            if target.len() != data.len() {
                return Err(Error::Config(format!(
                    "parameter {name} has {} elements, got {}",
                    target.len(),
                    data.len()
                )));
            }
            target.copy_from_slice(data);
            return Ok(());
        }
        Err(Error::Config(format!("no parameter named {name:?} in a {} head", self.config.method)))
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        let c = |l: &Linear<T>| Linear {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weight: l.weight.iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
            bias: l.bias.iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
        };
        FusionModel {
            config: self.config.clone(),
            image_proj: self.image_proj.as_ref().map(c),
            text_proj: self.text_proj.as_ref().map(c),
            fc1: c(&self.fc1),
            fc2: c(&self.fc2),
            fc3: c(&self.fc3),
        }
    }

    fn check_inputs(&self, image: &[T], text: &[T], rows: usize) -> Result<()> {
        if image.len() != rows * self.config.image_dim {
            return Err(Error::Shape {
                modality: "image",
                expected: self.config.image_dim,
                actual: if rows == 0 { image.len() } else { image.len() / rows },
            });
        }
        if text.len() != rows * self.config.text_dim {
            return Err(Error::Shape {
                modality: "text",
                expected: self.config.text_dim,
                actual: if rows == 0 { text.len() } else { text.len() / rows },
            });
        }
        Ok(())
    }

    /// Logits for a single (image, text) pair.
    pub fn forward(&self, image_vec: &[T], text_vec: &[T]) -> Result<Vec<T>> {
        if image_vec.len() != self.config.image_dim {
            return Err(Error::Shape {
                modality: "image",
                expected: self.config.image_dim,
                actual: image_vec.len(),
            });
        }
        if text_vec.len() != self.config.text_dim {
            return Err(Error::Shape {
                modality: "text",
                expected: self.config.text_dim,
                actual: text_vec.len(),
            });
        }
        self.forward_batch(image_vec, text_vec, 1)
    }

    /// Logits (`rows × 56`) for a batch, in inference mode.
    pub fn forward_batch(&self, image: &[T], text: &[T], rows: usize) -> Result<Vec<T>> {
        Ok(self.forward_trace::<ChaCha8Rng>(image, text, rows, None)?.logits)
    }

    /// Forward pass that records intermediates. Dropout is applied only when
    /// an RNG is supplied and the config enables it.
    pub fn forward_trace<R: Rng>(
        &self,
        image: &[T],
        text: &[T],
        rows: usize,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<ForwardTrace<T>> {
        self.check_inputs(image, text, rows)?;
        let (proj_image, proj_text, fused) = match self.config.method {
            FusionMethod::Concat => {
                let mut z = Vec::with_capacity(rows * self.fc1.in_dim);
                for r in 0..rows {
                    z.extend_from_slice(&image[r * self.config.image_dim..(r + 1) * self.config.image_dim]);
                    z.extend_from_slice(&text[r * self.config.text_dim..(r + 1) * self.config.text_dim]);
                }
                (Vec::new(), Vec::new(), z)
            }
            method => {
                let pi = self.image_proj.as_ref().expect("projection").forward(image, rows);
                let pt = self.text_proj.as_ref().expect("projection").forward(text, rows);
                let z = if method == FusionMethod::Add {
                    elementwise_sum(&pi, &pt)
                } else {
                    elementwise_product(&pi, &pt)
                };
                (pi, pt, z)
            }
        };

        let act = self.config.activation;
        let pre1 = self.fc1.forward(&fused, rows);
        let mut act1: Vec<T> = pre1.iter().map(|v| act.apply(*v)).collect();
        let mask1 = self.dropout_mask(act1.len(), dropout_rng.as_deref_mut());
        apply_mask(&mut act1, mask1.as_deref());

        let pre2 = self.fc2.forward(&act1, rows);
        let mut act2: Vec<T> = pre2.iter().map(|v| act.apply(*v)).collect();
        let mask2 = self.dropout_mask(act2.len(), dropout_rng.as_deref_mut());
        apply_mask(&mut act2, mask2.as_deref());

        let logits = self.fc3.forward(&act2, rows);
        Ok(ForwardTrace {
            rows,
            proj_image,
            proj_text,
            fused,
            pre1,
            act1,
            mask1,
            pre2,
            act2,
            mask2,
            logits,
        })
    }

    fn dropout_mask<R: Rng>(&self, len: usize, rng: Option<&mut R>) -> Option<Vec<T>> {
        let p = self.config.dropout;
        let rng = rng?;
        if p <= 0.0 {
            return None;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        Some((0..len).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect())
    }

    /// Backpropagates `dlogits` (`rows × 56`) through the traced pass and
    /// returns parameter gradients shaped like the model.
    pub fn backward(&self, trace: &ForwardTrace<T>, image: &[T], text: &[T], dlogits: &[T]) -> FusionModel<T> {
        let rows = trace.rows;
        let act = self.config.activation;
        let mut grads = self.zeros_like();

        let mut d_act2 = self.fc3.backward(&trace.act2, dlogits, rows, &mut grads.fc3, true).expect("input grad");
        apply_mask(&mut d_act2, trace.mask2.as_deref());
        let d_pre2 = activation_backward(act, &trace.pre2, &d_act2);

        let mut d_act1 = self.fc2.backward(&trace.act1, &d_pre2, rows, &mut grads.fc2, true).expect("input grad");
        apply_mask(&mut d_act1, trace.mask1.as_deref());
        let d_pre1 = activation_backward(act, &trace.pre1, &d_act1);

        let needs_fused = self.config.method.uses_projections();
        let d_fused = self.fc1.backward(&trace.fused, &d_pre1, rows, &mut grads.fc1, needs_fused);

        if let Some(dz) = d_fused {
            let (d_pi, d_pt) = match self.config.method {
                FusionMethod::Add => (dz.clone(), dz),
                _ => (elementwise_product(&dz, &trace.proj_text), elementwise_product(&dz, &trace.proj_image)),
            };
            let (ip, gp) = (self.image_proj.as_ref().expect("projection"), grads.image_proj.as_mut().expect("projection"));
            ip.backward(image, &d_pi, rows, gp, false);
            let (tp, gt) = (self.text_proj.as_ref().expect("projection"), grads.text_proj.as_mut().expect("projection"));
            tp.backward(text, &d_pt, rows, gt, false);
        }
        grads
    }
}

fn apply_mask<T: Scalar>(values: &mut [T], mask: Option<&[T]>) {
    if let Some(mask) = mask {
        for (v, m) in values.iter_mut().zip(mask) {
            *v = *v * *m;
        }
    }
}

/// `d_out` is the gradient w.r.t. the (unmasked) activation output.
fn activation_backward<T: Scalar>(act: Activation, pre: &[T], d_out: &[T]) -> Vec<T> {
    pre.iter()
        .zip(d_out)
        .map(|(x, d)| *d * act.derivative(*x, act.apply(*x)))
        .collect()
}

/// `a + b`, elementwise.
pub fn elementwise_sum<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

/// `a ⊙ b`, elementwise.
pub fn elementwise_product<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| *x * *y).collect()
}

/// Argmax over a logit vector; ties resolve to the lowest index.
pub fn predict<T: Scalar>(logits: &[T]) -> Result<usize> {
    if logits.len() != NUM_CLASSES {
        return Err(Error::Shape {
            modality: "logits",
            expected: NUM_CLASSES,
            actual: logits.len(),
        });
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::NanLogits);
    }
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(method: FusionMethod) -> FusionConfig {
        FusionConfig {
            common_dim: 6,
            hidden_dims: [5, 4],
            seed: 3,
            ..FusionConfig::new(method, 7, 3)
        }
    }

    #[test]
    fn concat_first_layer_width() {
        let m = FusionModel::<f32>::init(FusionConfig::new(FusionMethod::Concat, 2048, 1024)).unwrap();
        assert_eq!(m.first_layer_in_dim(), 3072);
        assert!(m.projection_out_dims().is_none());
    }

    #[test]
    fn projections_reach_common_dim() {
        for method in [FusionMethod::Add, FusionMethod::Mul] {
            let m = FusionModel::<f32>::init(FusionConfig::new(method, 40, 24)).unwrap();
            assert_eq!(m.projection_out_dims(), Some((512, 512)));
            assert_eq!(m.first_layer_in_dim(), 512);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = FusionModel::<f32>::init(small(FusionMethod::Mul)).unwrap();
        let b = FusionModel::<f32>::init(small(FusionMethod::Mul)).unwrap();
        assert_eq!(a, b);
        let c = FusionModel::<f32>::init(FusionConfig { seed: 4, ..small(FusionMethod::Mul) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let m = FusionModel::<f64>::init(FusionConfig::new(FusionMethod::Concat, 100, 44)).unwrap();
        let bound = 1.0 / (144f64).sqrt();
        assert!(m.fc1.weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn config_errors() {
        let mut c = small(FusionMethod::Add);
        c.image_dim = 0;
        assert!(FusionModel::<f32>::init(c).is_err());
        let mut c = small(FusionMethod::Add);
        c.num_classes = 10;
        assert!(FusionModel::<f32>::init(c).is_err());
        let mut c = small(FusionMethod::Add);
        c.dropout = 1.0;
        assert!(FusionModel::<f32>::init(c).is_err());
    }

    #[test]
    fn elementwise_ops() {
        assert_eq!(elementwise_product(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), vec![4.0, 10.0, 18.0]);
        assert_eq!(elementwise_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn shape_errors_name_modality() {
        let m = FusionModel::<f32>::init(small(FusionMethod::Concat)).unwrap();
        let err = m.forward(&[0.0; 6], &[0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Shape { modality: "image", expected: 7, actual: 6 }));
        let err = m.forward(&[0.0; 7], &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::Shape { modality: "text", .. }));
    }

    #[test]
    fn batch_matches_single() {
        let m = FusionModel::<f64>::init(small(FusionMethod::Mul)).unwrap();
        let image: Vec<f64> = (0..14).map(|i| (i as f64 * 0.37).sin()).collect();
        let text: Vec<f64> = (0..6).map(|i| (i as f64 * 0.91).cos()).collect();
        let batch = m.forward_batch(&image, &text, 2).unwrap();
        for r in 0..2 {
            let single = m.forward(&image[r * 7..(r + 1) * 7], &text[r * 3..(r + 1) * 3]).unwrap();
            for (a, b) in single.iter().zip(&batch[r * 56..(r + 1) * 56]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_cases() {
        let mut logits = [0.0f32; 56];
        logits[3] = 1.0;
        assert_eq!(predict(&logits).unwrap(), 3);
        assert_eq!(predict(&[0.5f32; 56]).unwrap(), 0);
        logits[10] = f32::NAN;
        assert_eq!(predict(&logits), Err(Error::NanLogits));
        assert!(predict(&[0.0f32; 5]).is_err());
    }

    #[test]
    fn set_parameter_round_trip() {
        let a = FusionModel::<f32>::init(small(FusionMethod::Add)).unwrap();
        let mut b = FusionModel::<f32>::init(FusionConfig { seed: 99, ..small(FusionMethod::Add) }).unwrap();
        for (name, _, data) in a.named_parameters() {
            b.set_parameter(&name, data).unwrap();
        }
        assert_eq!(a.param_slices(), b.param_slices());
        assert!(b.set_parameter("fc9.weight", &[0.0]).is_err());
        assert!(b.set_parameter("fc1.bias", &[0.0]).is_err());
        let mut concat = FusionModel::<f32>::init(small(FusionMethod::Concat)).unwrap();
        assert!(concat.set_parameter("image_proj.weight", &[]).is_err());
    }

    proptest! {
        #[test]
        fn output_is_56_wide(method_idx in 0usize..3, di in 1usize..9, dt in 1usize..9, rows in 1usize..4, seed: u64) {
            let cfg = FusionConfig { common_dim: 4, hidden_dims: [3, 5], seed, ..FusionConfig::new(FusionMethod::ALL[method_idx], di, dt) };
            let m = FusionModel::<f32>::init(cfg).unwrap();
            let image: Vec<f32> = (0..rows * di).map(|i| i as f32 * 0.1).collect();
            let text: Vec<f32> = (0..rows * dt).map(|i| 1.0 - i as f32 * 0.1).collect();
            let logits = m.forward_batch(&image, &text, rows).unwrap();
            prop_assert_eq!(logits.len(), rows * 56);
            prop_assert!(logits.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn elementwise_fusion_commutes(a in proptest::collection::vec(-10.0f64..10.0, 1..16)) {
            let b: Vec<f64> = a.iter().rev().map(|v| v * 0.5 + 1.0).collect();
            prop_assert_eq!(elementwise_product(&a, &b), elementwise_product(&b, &a));
            prop_assert_eq!(elementwise_sum(&a, &b), elementwise_sum(&b, &a));
        }

        #[test]
        fn argmax_shift_invariance(steps in proptest::collection::vec(-100i32..100, 56), c in -1000i32..1000) {
            // half-integer values keep every shift exact
            let logits: Vec<f64> = steps.iter().map(|s| *s as f64 * 0.5).collect();
            let shifted: Vec<f64> = logits.iter().map(|v| v + c as f64).collect();
            let idx = predict(&logits).unwrap();
            let mut best = 0;
            for i in 0..56 { if logits[i] > logits[best] { best = i; } }
            prop_assert_eq!(idx, best);
            prop_assert_eq!(predict(&shifted).unwrap(), idx);
        }
    }
}
