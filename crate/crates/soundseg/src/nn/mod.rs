//! A small CPU U-Net: hand-rolled forward/backward convolution kernels,
//! MAE/MSE losses, Adam, and a deterministic training loop.
//!
//! Batches are NHWC (`(batch, freq, time, channels)`) dense tensors. The
//! per-sample kernels use im2col plus a GEMM; batch members are processed in
//! parallel and reduced in a fixed order, so results do not depend on thread
//! count.

mod adam;
mod loss;
mod ops;
mod train;
mod unet;
mod weights;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use loss::{loss, LossKind};
pub use ops::{concat_channels, conv2d, conv2d_transpose, maxpool2d, Padding};
pub use train::{train, TrainOptions, TrainReport};
pub use unet::{backward, unet_forward};
pub use weights::{load_weights, save_weights};

use ndarray::{Array1, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense NHWC batch tensor.
pub type Tensor4<F> = Array4<F>;

/// Element type of the NN engine. Training runs in `f32`; gradient checks
/// instantiate the same code with `f64`.
pub trait Scalar: ndarray::NdFloat {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> f64 {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// U-Net shape configuration.
///
/// Each encoder level applies two `kernel_size` convolutions (ReLU) and a
/// 2x2 max-pool; filter counts start at `base_filters` and double per level.
/// The decoder mirrors the encoder with 2x2 stride-2 transposed convolutions
/// and skip concatenations. The head is a pointwise linear convolution back
/// to `input_channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub kernel_size: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
}

impl UNetConfig {
    /// Configuration for the standard `(512, 128, 1)` training patches.
    pub fn for_patches(depth: usize, base_filters: usize) -> Self {
        UNetConfig {
            depth,
            base_filters,
            kernel_size: 3,
            input_height: crate::dataset::PATCH_FREQ,
            input_width: crate::dataset::PATCH_TIME,
            input_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        if self.base_filters == 0 {
            return Err(Error::invalid("base_filters must be at least 1"));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::invalid("input_channels must be at least 1"));
        }
        let div = 1usize << self.depth;
        if self.input_height % div != 0 || self.input_width % div != 0 {
            return Err(Error::invalid(format!(
                "input {}x{} not divisible by 2^depth = {div}",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    pub(crate) fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// `(in, out)` channels of the two convolutions at an encoder level.
    pub(crate) fn enc_channels(&self, level: usize) -> (usize, usize) {
        let cin = if level == 0 {
            self.input_channels
        } else {
            self.filters(level - 1)
        };
        (cin, self.filters(level))
    }

    /// Canonical `(name, shape)` list, in serialization order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel_size;
        let mut specs = Vec::new();
        let push_conv = |specs: &mut Vec<(String, Vec<usize>)>,
                             prefix: String,
                             kh: usize,
                             kw: usize,
                             cin: usize,
                             cout: usize| {
            specs.push((format!("{prefix}.kernel"), vec![kh, kw, cin, cout]));
            specs.push((format!("{prefix}.bias"), vec![cout]));
        };
        for level in 0..self.depth {
            let (cin, cout) = self.enc_channels(level);
            push_conv(&mut specs, format!("enc{level}.conv1"), k, k, cin, cout);
            push_conv(&mut specs, format!("enc{level}.conv2"), k, k, cout, cout);
        }
        let bin = self.filters(self.depth - 1);
        let bout = self.filters(self.depth);
        push_conv(&mut specs, "bottleneck.conv1".into(), k, k, bin, bout);
        push_conv(&mut specs, "bottleneck.conv2".into(), k, k, bout, bout);
        for level in (0..self.depth).rev() {
            let cout = self.filters(level);
            let cin = self.filters(level + 1);
            // Transposed-conv kernels are stored as (kh, kw, out, in); the
            // bias covers the output channels.
            specs.push((format!("dec{level}.up.kernel"), vec![2, 2, cout, cin]));
            specs.push((format!("dec{level}.up.bias"), vec![cout]));
            push_conv(&mut specs, format!("dec{level}.conv1"), k, k, 2 * cout, cout);
            push_conv(&mut specs, format!("dec{level}.conv2"), k, k, cout, cout);
        }
        push_conv(
            &mut specs,
            "head".into(),
            1,
            1,
            self.base_filters,
            self.input_channels,
        );
        specs
    }
}

/// One convolution layer's parameters. For forward convolutions the kernel is
/// `(kh, kw, in, out)`; for transposed convolutions it is `(kh, kw, out, in)`
/// so that the transpose is the exact adjoint of a stride-2 convolution with
/// the same tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F> {
    pub kernel: Array4<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<F> {
    pub conv1: ConvParams<F>,
    pub conv2: ConvParams<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock<F> {
    pub up: ConvParams<F>,
    pub conv1: ConvParams<F>,
    pub conv2: ConvParams<F>,
}

/// All parameter tensors of a U-Net, in the canonical layout of
/// [`UNetConfig::param_specs`]. `decoder[level]` is indexed by level; levels
/// execute from `depth - 1` down to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub encoder: Vec<ConvBlock<F>>,
    pub bottleneck: ConvBlock<F>,
    pub decoder: Vec<DecoderBlock<F>>,
    pub head: ConvParams<F>,
}

fn he_uniform<F: Scalar>(
    shape: (usize, usize, usize, usize),
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Array4<F> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Array4::from_shape_simple_fn(shape, || {
        F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit)
    })
}

impl<F: Scalar> ModelParams<F> {
    fn build(
        config: &UNetConfig,
        make_kernel: &mut impl FnMut((usize, usize, usize, usize), usize) -> Array4<F>,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        fn conv<F: Scalar>(
            k: usize,
            cin: usize,
            cout: usize,
            mk: &mut impl FnMut((usize, usize, usize, usize), usize) -> Array4<F>,
        ) -> ConvParams<F> {
            ConvParams {
                kernel: mk((k, k, cin, cout), k * k * cin),
                bias: Array1::zeros(cout),
            }
        }

        let mut encoder = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let (cin, cout) = config.enc_channels(level);
            encoder.push(ConvBlock {
                conv1: conv(k, cin, cout, make_kernel),
                conv2: conv(k, cout, cout, make_kernel),
            });
        }
        let bin = config.filters(config.depth - 1);
        let bout = config.filters(config.depth);
        let bottleneck = ConvBlock {
            conv1: conv(k, bin, bout, make_kernel),
            conv2: conv(k, bout, bout, make_kernel),
        };
        let mut decoder_rev = Vec::with_capacity(config.depth);
        for level in (0..config.depth).rev() {
            let cout = config.filters(level);
            let cin = config.filters(level + 1);
            decoder_rev.push((
                level,
                DecoderBlock {
                    // kernel (kh, kw, out, in); fan-in is the input channels
                    up: ConvParams {
                        kernel: make_kernel((2, 2, cout, cin), 2 * 2 * cin),
                        bias: Array1::zeros(cout),
                    },
                    conv1: conv(k, 2 * cout, cout, make_kernel),
                    conv2: conv(k, cout, cout, make_kernel),
                },
            ));
        }
        decoder_rev.sort_by_key(|(level, _)| *level);
        let decoder = decoder_rev.into_iter().map(|(_, b)| b).collect();
        let head = conv(1, config.base_filters, config.input_channels, make_kernel);
        Ok(ModelParams {
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    /// He-uniform kernels, zero biases, drawn deterministically from `seed`.
    pub fn init(config: &UNetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, &mut |shape, fan_in| {
            he_uniform(shape, fan_in, &mut rng)
        })
    }

    /// Zero tensors with the same shapes (gradient / moment accumulators).
    pub fn zeros(config: &UNetConfig) -> Result<Self> {
        Self::build(config, &mut |shape, _| Array4::zeros(shape))
    }

    fn layers(&self) -> Vec<(String, &ConvParams<F>)> {
        let mut out = Vec::new();
        for (level, block) in self.encoder.iter().enumerate() {
            out.push((format!("enc{level}.conv1"), &block.conv1));
            out.push((format!("enc{level}.conv2"), &block.conv2));
        }
        out.push(("bottleneck.conv1".into(), &self.bottleneck.conv1));
        out.push(("bottleneck.conv2".into(), &self.bottleneck.conv2));
        for level in (0..self.decoder.len()).rev() {
            let block = &self.decoder[level];
            out.push((format!("dec{level}.up"), &block.up));
            out.push((format!("dec{level}.conv1"), &block.conv1));
            out.push((format!("dec{level}.conv2"), &block.conv2));
        }
        out.push(("head".into(), &self.head));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut ConvParams<F>> {
        let mut out = Vec::new();
        for block in self.encoder.iter_mut() {
            out.push(&mut block.conv1);
            out.push(&mut block.conv2);
        }
        out.push(&mut self.bottleneck.conv1);
        out.push(&mut self.bottleneck.conv2);
        for block in self.decoder.iter_mut().rev() {
            out.push(&mut block.up);
            out.push(&mut block.conv1);
            out.push(&mut block.conv2);
        }
        out.push(&mut self.head);
        out
    }

    /// `(name, shape, data)` for every tensor, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        for (name, layer) in self.layers() {
            out.push((
                format!("{name}.kernel"),
                layer.kernel.shape().to_vec(),
                layer.kernel.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("{name}.bias"),
                layer.bias.shape().to_vec(),
                layer.bias.as_slice().expect("standard layout"),
            ));
        }
        out
    }

    /// Flat views of every tensor, in canonical order.
    pub fn tensors(&self) -> Vec<&[F]> {
        self.named_tensors().into_iter().map(|(_, _, d)| d).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for layer in self.layers_mut() {
            out.push(layer.kernel.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Total parameter count.
    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        let theirs = other.tensors();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a = *a + *b;
            }
        }
    }

    /// Checks names and shapes against the config's canonical layout.
    pub fn validate_against(&self, config: &UNetConfig) -> Result<()> {
        let specs = self.named_tensors();
        let expected = config.param_specs();
        if specs.len() != expected.len() {
            return Err(Error::invalid(format!(
                "model has {} tensors, config expects {}",
                specs.len(),
                expected.len()
            )));
        }
        for ((name, shape, _), (exp_name, exp_shape)) in specs.iter().zip(expected.iter()) {
            if name != exp_name || shape != exp_shape {
                return Err(Error::invalid(format!(
                    "tensor {name} {shape:?} does not match config's {exp_name} {exp_shape:?}"
                )));
            }
        }
        Ok(())
    }

    /// Rebuilds params from `(name, shape, data)` tuples in canonical order.
    pub fn from_named(config: &UNetConfig, tensors: Vec<(String, Vec<usize>, Vec<F>)>) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let expected = config.param_specs();
        if tensors.len() != expected.len() {
            return Err(Error::format(format!(
                "weights contain {} tensors, config expects {}",
                tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape, data), (exp_name, exp_shape)) in tensors.iter().zip(expected.iter()) {
            if name != exp_name {
                return Err(Error::format(format!(
                    "tensor '{name}' out of order, expected '{exp_name}'"
                )));
            }
            if shape != exp_shape {
                return Err(Error::format(format!(
                    "tensor '{name}' has shape {shape:?}, config expects {exp_shape:?}"
                )));
            }
            let len: usize = shape.iter().product();
            if data.len() != len {
                return Err(Error::format(format!(
                    "tensor '{name}' has {} values, shape {shape:?} needs {len}",
                    data.len()
                )));
            }
        }
        for (slot, (_, _, data)) in params.tensors_mut().into_iter().zip(tensors.iter()) {
            slot.copy_from_slice(data);
        }
        Ok(params)
    }
}
