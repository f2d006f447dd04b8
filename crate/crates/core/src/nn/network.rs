use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{Cache, Dense, Layer, LayerSpec};
use super::loss::softmax_cross_entropy;
use super::{Real, Tensor};

/// RNG stream ids derived from the network seed. Each branch draws from its
/// own stream so adding or removing the GLCM branch leaves the image branch
/// initialization untouched.
const IMAGE_STREAM: u64 = 1;
const GLCM_STREAM: u64 = 2;
const HEAD_STREAM: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Architecture of the dual-branch classifier.
///
/// Each branch runs its layer list, then a flatten (if needed), a dense
/// projection to its feature width and a ReLU. The two feature vectors are
/// concatenated (image first) and mapped to class logits by one dense layer.
/// A GLCM feature width of 0 removes the GLCM branch entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `(C, H, W)` of the whole-image input.
    pub image_shape: [usize; 3],
    /// `(C, L, L)` of the GLCM-image input.
    pub glcm_shape: [usize; 3],
    pub image_branch: Vec<LayerSpec>,
    pub glcm_branch: Vec<LayerSpec>,
    pub image_feature_width: usize,
    pub glcm_feature_width: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Small default stack: three conv/pool stages on the image, one on the
    /// GLCM image, 64 + 16 fused features.
    pub fn desk(image_shape: [usize; 3], glcm_shape: [usize; 3], num_classes: usize) -> Self {
        let conv = |filters| LayerSpec::Conv { filters, kernel: 3, stride: 1, padding: 1 };
        Self {
            image_shape,
            glcm_shape,
            image_branch: vec![
                conv(8),
                LayerSpec::Relu,
                LayerSpec::Maxpool2,
                conv(8),
                LayerSpec::Relu,
                LayerSpec::Maxpool2,
                conv(8),
                LayerSpec::Relu,
                LayerSpec::Maxpool2,
            ],
            glcm_branch: vec![conv(8), LayerSpec::Relu, LayerSpec::Maxpool2],
            image_feature_width: 64,
            glcm_feature_width: 16,
            num_classes,
            seed: 0,
        }
    }

    /// Same architecture without the GLCM branch.
    pub fn image_only(&self) -> Self {
        Self { glcm_feature_width: 0, ..self.clone() }
    }

    pub fn has_glcm_branch(&self) -> bool {
        self.glcm_feature_width > 0
    }

    pub fn fusion_width(&self) -> usize {
        self.image_feature_width + self.glcm_feature_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("network config", "num_classes must be at least 2"));
        }
        if self.image_feature_width == 0 {
            return Err(Error::invalid("network config", "image_feature_width must be positive"));
        }
        if self.image_shape.contains(&0) || self.glcm_shape.contains(&0) {
            return Err(Error::invalid("network config", "input shapes must be positive"));
        }
        Ok(())
    }
}

/// One input branch: its layers plus the appended projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Real> Branch<T> {
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], feature_width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut shape = input_shape.to_vec();
        let mut push = |spec: LayerSpec, shape: &mut Vec<usize>| -> Result<()> {
            let (mut layer, out) = Layer::build(spec, shape)?;
            layer.init(rng);
            layers.push(layer);
            *shape = out;
            Ok(())
        };
        for &spec in specs {
            push(spec, &mut shape)?;
        }
        if shape.len() != 1 {
            push(LayerSpec::Flatten, &mut shape)?;
        }
        push(LayerSpec::Dense { units: feature_width }, &mut shape)?;
        push(LayerSpec::Relu, &mut shape)?;
        Ok(Self { input_shape: input_shape.to_vec(), layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    fn forward(&self, x: &Tensor<T>, caches: Option<&mut Vec<Cache<T>>>) -> Result<Tensor<T>> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                context: "branch input",
                expected: self.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
        let mut h = x.clone();
        match caches {
            Some(caches) => {
                for layer in &self.layers {
                    let (y, c) = layer.forward(h)?;
                    caches.push(c);
                    h = y;
                }
            }
            None => {
                for layer in &self.layers {
                    h = layer.forward(h)?.0;
                }
            }
        }
        Ok(h)
    }

    fn backward(&self, caches: &[Cache<T>], g: Tensor<T>, grads: &mut [Vec<T>]) -> Result<Tensor<T>> {
        let mut g = g;
        let mut end = grads.len();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let n = layer.params().len();
            g = layer.backward(cache, g, &mut grads[end - n..end])?;
            end -= n;
        }
        Ok(g)
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params().len()).sum()
    }
}

/// Per-tensor gradient buffers, in [`DualBranchNet::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<Vec<T>>);

impl<T: Real> Gradients<T> {
    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.0.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn flat(&self) -> Vec<T> {
        self.0.iter().flatten().copied().collect()
    }
}

/// Image branch + optional GLCM branch + fused softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBranchNet<T> {
    config: NetworkConfig,
    image: Branch<T>,
    glcm: Option<Branch<T>>,
    head: Dense<T>,
}

impl<T: Real> DualBranchNet<T> {
    /// Builds and Kaiming-initializes the network from `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let image = Branch::build(
            &config.image_shape,
            &config.image_branch,
            config.image_feature_width,
            &mut stream_rng(config.seed, IMAGE_STREAM),
        )?;
        let glcm = if config.has_glcm_branch() {
            Some(Branch::build(
                &config.glcm_shape,
                &config.glcm_branch,
                config.glcm_feature_width,
                &mut stream_rng(config.seed, GLCM_STREAM),
            )?)
        } else {
            None
        };
        let (mut head, _) = Layer::build(LayerSpec::Dense { units: config.num_classes }, &[config.fusion_width()])?;
        head.init(&mut stream_rng(config.seed, HEAD_STREAM));
        let Layer::Dense(head) = head else { unreachable!("dense spec builds a dense layer") };
        Ok(Self { config, image, glcm, head })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn image_branch(&self) -> &Branch<T> {
        &self.image
    }

    pub fn glcm_branch(&self) -> Option<&Branch<T>> {
        self.glcm.as_ref()
    }

    pub fn glcm_branch_mut(&mut self) -> Option<&mut Branch<T>> {
        self.glcm.as_mut()
    }

    pub fn head(&self) -> &Dense<T> {
        &self.head
    }

    /// Number of parameter tensors belonging to the image branch, GLCM
    /// branch and head respectively.
    pub fn param_groups(&self) -> [usize; 3] {
        [self.image.param_count(), self.glcm.as_ref().map_or(0, |b| b.param_count()), 2]
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.image.layers.iter().flat_map(|l| l.params()).collect();
        if let Some(g) = &self.glcm {
            out.extend(g.layers.iter().flat_map(|l| l.params()));
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.image.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        if let Some(g) = &mut self.glcm {
            out.extend(g.layers.iter_mut().flat_map(|l| l.params_mut()));
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// `(name, shape)` for every parameter tensor, in [`Self::params`] order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut branch = |prefix: &str, b: &Branch<T>| {
            for (i, layer) in b.layers.iter().enumerate() {
                for (name, shape) in layer.param_shapes() {
                    out.push((format!("{prefix}.{i}.{name}"), shape));
                }
            }
        };
        branch("image", &self.image);
        if let Some(g) = &self.glcm {
            branch("glcm", g);
        }
        out.push(("head.weight".into(), vec![self.head.outputs, self.head.inputs]));
        out.push(("head.bias".into(), vec![self.head.outputs]));
        out
    }

    pub fn param_len(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients(self.params().iter().map(|p| vec![T::zero(); p.len()]).collect())
    }

    fn check_glcm_input<'a>(&self, glcm: Option<&'a Tensor<T>>) -> Result<Option<&'a Tensor<T>>> {
        match (&self.glcm, glcm) {
            (Some(_), None) => Err(Error::invalid("network input", "GLCM branch present but no GLCM image given")),
            (Some(_), Some(g)) => Ok(Some(g)),
            (None, _) => Ok(None),
        }
    }

    /// Class logits. The GLCM input is ignored when the network has no GLCM
    /// branch.
    pub fn forward_dual(&self, image: &Tensor<T>, glcm: Option<&Tensor<T>>) -> Result<Vec<T>> {
        let glcm = self.check_glcm_input(glcm)?;
        let mut fused = self.image.forward(image, None)?.into_data();
        if let (Some(branch), Some(g)) = (&self.glcm, glcm) {
            fused.extend(branch.forward(g, None)?.into_data());
        }
        self.head.forward(&fused)
    }

    /// Cross-entropy loss of one sample; gradients are added into `grads`.
    pub fn loss_and_grads(
        &self,
        image: &Tensor<T>,
        glcm: Option<&Tensor<T>>,
        label: usize,
        grads: &mut Gradients<T>,
    ) -> Result<T> {
        let glcm = self.check_glcm_input(glcm)?;
        let mut image_caches = Vec::with_capacity(self.image.layers.len());
        let mut glcm_caches = Vec::new();
        let mut fused = self.image.forward(image, Some(&mut image_caches))?.into_data();
        let f_img = fused.len();
        if let (Some(branch), Some(g)) = (&self.glcm, glcm) {
            fused.extend(branch.forward(g, Some(&mut glcm_caches))?.into_data());
        }
        let logits = self.head.forward(&fused)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;

        let [n_img, n_glcm, _] = self.param_groups();
        let (img_grads, rest) = grads.0.split_at_mut(n_img);
        let (glcm_grads, head_grads) = rest.split_at_mut(n_glcm);
        let (dw, db) = head_grads.split_at_mut(1);
        let dfused = self.head.backward(&fused, &dlogits, &mut dw[0], &mut db[0])?;

        let d_img = Tensor::new(vec![f_img], dfused[..f_img].to_vec())?;
        self.image.backward(&image_caches, d_img, img_grads)?;
        if let Some(branch) = &self.glcm {
            let d_glcm = Tensor::new(vec![dfused.len() - f_img], dfused[f_img..].to_vec())?;
            branch.backward(&glcm_caches, d_glcm, glcm_grads)?;
        }
        Ok(loss)
    }

    /// Element-wise conversion of all parameters.
    pub fn cast<U: Real>(&self) -> DualBranchNet<U> {
        fn layer<T: Real, U: Real>(l: &Layer<T>) -> Layer<U> {
            let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
            match l {
                Layer::Conv(c) => Layer::Conv(super::layers::Conv2d {
                    in_shape: c.in_shape,
                    filters: c.filters,
                    kernel: c.kernel,
                    stride: c.stride,
                    padding: c.padding,
                    weight: conv(&c.weight),
                    bias: conv(&c.bias),
                }),
                Layer::Dense(d) => Layer::Dense(Dense {
                    inputs: d.inputs,
                    outputs: d.outputs,
                    weight: conv(&d.weight),
                    bias: conv(&d.bias),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2 => Layer::MaxPool2,
                Layer::Flatten => Layer::Flatten,
            }
        }
        let branch = |b: &Branch<T>| Branch { input_shape: b.input_shape.clone(), layers: b.layers.iter().map(layer).collect() };
        let Layer::Dense(head) = layer(&Layer::Dense(self.head.clone())) else { unreachable!() };
        DualBranchNet { config: self.config.clone(), image: branch(&self.image), glcm: self.glcm.as_ref().map(branch), head }
    }
}
