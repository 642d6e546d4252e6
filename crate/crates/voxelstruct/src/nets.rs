//! The three networks: shape encoder, shape generator, structure detector.
//!
//! The encoder walks a stride-2 downsampling conv ladder, collapses the
//! remaining spatial extent with one full-kernel head convolution, and splits
//! into two dense heads for the latent mean and log-variance. The generator
//! mirrors it layer for layer with transposed convolutions and a final
//! sigmoid. The detector is a stride-1 conv stack with max-pooling after the
//! first three convolutions, followed by three fully connected layers with
//! dropout in between; its final layer is linear so coordinates are only
//! clamped where they are consumed.

pub mod checkpoint;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::util::stream_rng;
use crate::voxel::{tensor_to_grids, LandmarkSet, VoxelGrid, N_LANDMARKS};

/// Architecture hyperparameters for all three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Grid resolution D (power of two, ≥ 16).
    pub grid_dim: usize,
    /// Latent dimensionality Z.
    pub latent_dim: usize,
    /// Encoder conv output channels; the last entry is the spatial-collapse
    /// head. The generator mirrors this list in reverse.
    pub encoder_channels: Vec<usize>,
    /// Detector conv output channels.
    pub detector_channels: Vec<usize>,
    /// Detector conv kernel sizes (odd, stride 1, same padding).
    pub detector_kernels: Vec<usize>,
    /// Sizes of the first two detector fully connected layers; the third
    /// always outputs 3·N coordinates.
    pub detector_fc: Vec<usize>,
    /// Number of structure landmarks (10 for the chair structure).
    pub n_landmarks: usize,
    /// Dropout probability between detector FC layers (training mode only).
    pub dropout_rate: f64,
    /// Kernel size of the encoder downsampling ladder.
    pub encoder_kernel: usize,
    /// Stride of the encoder downsampling ladder.
    pub encoder_stride: usize,
    /// Padding of the encoder downsampling ladder.
    pub encoder_pad: usize,
    /// Insert stateless per-channel standardization after every convolution.
    pub use_norm_layers: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            grid_dim: 32,
            latent_dim: 32,
            encoder_channels: vec![16, 32, 64, 128],
            detector_channels: vec![8, 16, 32, 64],
            detector_kernels: vec![5, 3, 3, 3],
            detector_fc: vec![512, 128],
            n_landmarks: N_LANDMARKS,
            dropout_rate: 0.5,
            encoder_kernel: 4,
            encoder_stride: 2,
            encoder_pad: 1,
            use_norm_layers: false,
        }
    }
}

impl NetConfig {
    /// Full-size architecture: 64³ grids, 200-D latents, encoder channels
    /// 64/128/256/512/400, detector channels 16/32/64/128 with 4096/1024 FC
    /// layers.
    pub fn paper_scale() -> NetConfig {
        NetConfig {
            grid_dim: 64,
            latent_dim: 200,
            encoder_channels: vec![64, 128, 256, 512, 400],
            detector_channels: vec![16, 32, 64, 128],
            detector_kernels: vec![5, 3, 3, 3],
            detector_fc: vec![4096, 1024],
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.grid_dim;
        // D = 8 is admitted so forward passes stay gradient-checkable with
        // finite differences at toy scale; real datasets start at D = 16.
        if d < 8 || !d.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid_dim must be a power of two >= 8, got {d}"
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.encoder_channels.is_empty() || self.detector_channels.is_empty() {
            return Err(Error::Config("channel lists must be non-empty".into()));
        }
        if self.n_landmarks != N_LANDMARKS {
            return Err(Error::Config(format!(
                "the chair structure has {N_LANDMARKS} landmarks, got {}",
                self.n_landmarks
            )));
        }
        if self.detector_kernels.len() != self.detector_channels.len() {
            return Err(Error::Config(
                "detector_kernels must match detector_channels in length".into(),
            ));
        }
        if self.detector_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(
                "detector kernels must be odd for same-size padding".into(),
            ));
        }
        if self.detector_fc.len() != 2 {
            return Err(Error::Config(
                "detector_fc must list exactly two hidden sizes".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0,1)",
                self.dropout_rate
            )));
        }
        let halvings = self.encoder_channels.len() - 1;
        if d >> halvings < 2 {
            return Err(Error::Config(format!(
                "encoder ladder of {halvings} halvings leaves <2 voxels at grid_dim {d}"
            )));
        }
        if self.detector_channels.len() < 3 || d >> 3 < 1 {
            // Three pooling layers after the first three convolutions.
            return Err(Error::Config(
                "detector needs >=3 conv layers and grid_dim >= 8".into(),
            ));
        }
        // The downsampling ladder must halve exactly so the mirror inverts it.
        let (k, s, p) = (self.encoder_kernel, self.encoder_stride, self.encoder_pad);
        if s == 0 || d + 2 * p < k || (d + 2 * p - k) % s != 0 || (d + 2 * p - k) / s + 1 != d / 2 {
            return Err(Error::Config(format!(
                "encoder ladder (kernel {k}, stride {s}, pad {p}) does not halve {d}"
            )));
        }
        Ok(())
    }

    /// Spatial sizes of encoder activations, input included:
    /// `[D, D/2, ..., 1]`.
    pub fn encoder_spatial_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.grid_dim];
        let mut d = self.grid_dim;
        for _ in 0..self.encoder_channels.len() - 1 {
            d /= 2;
            dims.push(d);
        }
        dims.push(1); // head conv collapses the remaining extent
        dims
    }

    /// Flattened feature count after the encoder head (== last channel size,
    /// because the head collapses space to 1³).
    pub fn encoder_features(&self) -> usize {
        *self.encoder_channels.last().unwrap()
    }

    /// Flattened feature count after the detector conv stack.
    pub fn detector_features(&self) -> usize {
        let d = self.grid_dim / 8;
        self.detector_channels.last().unwrap() * d * d * d
    }
}

/// Named tensor collection; iteration order is the sorted key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Tensor) {
        self.map.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.map.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.map.get_mut(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn value_count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Errors unless the key set matches `expected` exactly.
    pub fn validate_keys(&self, expected: &[String], what: &str) -> Result<()> {
        let actual = self.keys();
        if actual != expected {
            return Err(Error::Checkpoint(format!(
                "{what}: key set mismatch\n  expected: {expected:?}\n  actual:   {actual:?}"
            )));
        }
        Ok(())
    }
}

/// Parameter collections for encoder (theta), generator (phi), and
/// detector (beta).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    pub encoder: ParamSet,
    pub generator: ParamSet,
    pub detector: ParamSet,
}

/// Tape-registered view of a ParamSet, used to build forward passes.
pub struct WatchedParams {
    map: BTreeMap<String, Tensor>,
}

impl WatchedParams {
    pub fn get(&self, key: &str) -> &Tensor {
        self.map
            .get(key)
            .unwrap_or_else(|| panic!("missing parameter key {key}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Registers every tensor of a parameter set on the tape. Gradients are
/// accumulated only when `trainable`; a frozen set is recorded as constants
/// and therefore receives exactly zero gradient by construction.
pub fn watch_params(tape: &mut Tape, params: &ParamSet, trainable: bool) -> WatchedParams {
    let mut map = BTreeMap::new();
    for (key, value) in params.iter() {
        let watched = tape.watch(&value.clone().with_requires_grad(trainable));
        map.insert(key.to_string(), watched);
    }
    WatchedParams { map }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    key: String,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct DenseLayer {
    key: String,
    inputs: usize,
    outputs: usize,
}

fn encoder_ladder(cfg: &NetConfig) -> Vec<ConvLayer> {
    let mut layers = Vec::new();
    let mut in_ch = 1;
    let n = cfg.encoder_channels.len();
    let mut spatial = cfg.grid_dim;
    for (i, &out_ch) in cfg.encoder_channels.iter().enumerate() {
        let (kernel, stride, pad) = if i + 1 < n {
            (cfg.encoder_kernel, cfg.encoder_stride, cfg.encoder_pad)
        } else {
            (spatial, 1, 0) // head conv swallows the whole remaining extent
        };
        layers.push(ConvLayer {
            key: format!("enc/conv{i}"),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        });
        in_ch = out_ch;
        if i + 1 < n {
            spatial /= 2;
        }
    }
    layers
}

fn generator_ladder(cfg: &NetConfig) -> Vec<ConvLayer> {
    // Mirror of the encoder: same kernels/strides in reverse order, with
    // in/out channels swapped and the voxel channel (1) at the far end.
    let enc = encoder_ladder(cfg);
    enc.iter()
        .rev()
        .enumerate()
        .map(|(i, l)| ConvLayer {
            key: format!("gen/tconv{i}"),
            in_ch: l.out_ch,
            out_ch: l.in_ch,
            kernel: l.kernel,
            stride: l.stride,
            pad: l.pad,
        })
        .collect()
}

fn detector_convs(cfg: &NetConfig) -> Vec<ConvLayer> {
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for (i, (&out_ch, &k)) in cfg
        .detector_channels
        .iter()
        .zip(&cfg.detector_kernels)
        .enumerate()
    {
        layers.push(ConvLayer {
            key: format!("det/conv{i}"),
            in_ch,
            out_ch,
            kernel: k,
            stride: 1,
            pad: k / 2,
        });
        in_ch = out_ch;
    }
    layers
}

fn detector_fcs(cfg: &NetConfig) -> Vec<DenseLayer> {
    let feat = cfg.detector_features();
    vec![
        DenseLayer {
            key: "det/fc0".into(),
            inputs: feat,
            outputs: cfg.detector_fc[0],
        },
        DenseLayer {
            key: "det/fc1".into(),
            inputs: cfg.detector_fc[0],
            outputs: cfg.detector_fc[1],
        },
        DenseLayer {
            key: "det/out".into(),
            inputs: cfg.detector_fc[1],
            outputs: 3 * cfg.n_landmarks,
        },
    ]
}

/// Expected key sets per component; a pure function of the configuration.
pub fn expected_keys(cfg: &NetConfig) -> (Vec<String>, Vec<String>, Vec<String>) {
    let weight_bias = |key: &str| [format!("{key}/b"), format!("{key}/w")];
    let mut enc: Vec<String> = encoder_ladder(cfg)
        .iter()
        .flat_map(|l| weight_bias(&l.key))
        .collect();
    enc.extend(weight_bias("enc/logvar"));
    enc.extend(weight_bias("enc/mu"));
    enc.sort();

    let mut gen: Vec<String> = generator_ladder(cfg)
        .iter()
        .flat_map(|l| weight_bias(&l.key))
        .collect();
    gen.extend(weight_bias("gen/fc"));
    gen.sort();

    let mut det: Vec<String> = detector_convs(cfg)
        .iter()
        .flat_map(|l| weight_bias(&l.key))
        .collect();
    det.extend(detector_fcs(cfg).iter().flat_map(|l| weight_bias(&l.key)));
    det.sort();

    (enc, gen, det)
}

/// He-style uniform draw: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit).collect()
}

fn init_conv(set: &mut ParamSet, rng: &mut ChaCha8Rng, l: &ConvLayer) {
    let k3 = l.kernel * l.kernel * l.kernel;
    let numel = l.out_ch * l.in_ch * k3;
    let fan_in = l.in_ch * k3;
    let w = Tensor::from_vec(
        vec![l.out_ch, l.in_ch, l.kernel, l.kernel, l.kernel],
        he_uniform(rng, fan_in, numel),
    )
    .expect("conv weight shape");
    set.insert(format!("{}/w", l.key), w);
    set.insert(format!("{}/b", l.key), Tensor::zeros(vec![l.out_ch]));
}

fn init_tconv(set: &mut ParamSet, rng: &mut ChaCha8Rng, l: &ConvLayer) {
    // Transposed conv kernels are [in_ch, out_ch, k, k, k]; fan-in counts the
    // incoming channels.
    let k3 = l.kernel * l.kernel * l.kernel;
    let numel = l.in_ch * l.out_ch * k3;
    let fan_in = l.in_ch * k3;
    let w = Tensor::from_vec(
        vec![l.in_ch, l.out_ch, l.kernel, l.kernel, l.kernel],
        he_uniform(rng, fan_in, numel),
    )
    .expect("tconv weight shape");
    set.insert(format!("{}/w", l.key), w);
    set.insert(format!("{}/b", l.key), Tensor::zeros(vec![l.out_ch]));
}

fn init_dense(set: &mut ParamSet, rng: &mut ChaCha8Rng, l: &DenseLayer) {
    let w = Tensor::from_vec(
        vec![l.inputs, l.outputs],
        he_uniform(rng, l.inputs, l.inputs * l.outputs),
    )
    .expect("dense weight shape");
    set.insert(format!("{}/w", l.key), w);
    set.insert(format!("{}/b", l.key), Tensor::zeros(vec![l.outputs]));
}

/// Initializes all three networks reproducibly from a seed: He-uniform
/// weights, zero biases.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;

    let mut encoder = ParamSet::new();
    let mut rng = stream_rng(seed, "init/enc", 0, 0);
    for l in encoder_ladder(cfg) {
        init_conv(&mut encoder, &mut rng, &l);
    }
    let feat = cfg.encoder_features();
    for head in ["enc/mu", "enc/logvar"] {
        init_dense(
            &mut encoder,
            &mut rng,
            &DenseLayer {
                key: head.into(),
                inputs: feat,
                outputs: cfg.latent_dim,
            },
        );
    }

    let mut generator = ParamSet::new();
    let mut rng = stream_rng(seed, "init/gen", 0, 0);
    init_dense(
        &mut generator,
        &mut rng,
        &DenseLayer {
            key: "gen/fc".into(),
            inputs: cfg.latent_dim,
            outputs: feat,
        },
    );
    for l in generator_ladder(cfg) {
        init_tconv(&mut generator, &mut rng, &l);
    }

    let mut detector = ParamSet::new();
    let mut rng = stream_rng(seed, "init/det", 0, 0);
    for l in detector_convs(cfg) {
        init_conv(&mut detector, &mut rng, &l);
    }
    for l in detector_fcs(cfg) {
        init_dense(&mut detector, &mut rng, &l);
    }

    Ok(ModelParams {
        encoder,
        generator,
        detector,
    })
}

/// Per-component scalar parameter counts (encoder, generator, detector).
pub fn param_count(cfg: &NetConfig) -> Result<(usize, usize, usize)> {
    let p = init_params(cfg, 0)?;
    Ok((
        p.encoder.value_count(),
        p.generator.value_count(),
        p.detector.value_count(),
    ))
}

/// Occupancy grids arrive as values in [0,1]; networks consume them shifted
/// to [-1,1]. This fixed input scaling stands in for input-side statistical
/// normalization.
fn scale_input(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let doubled = tape.scale(x, 2.0);
    let ones = Tensor::full(x.shape().to_vec(), 1.0);
    tape.sub(&doubled, &ones)
}

fn conv_block(
    tape: &mut Tape,
    params: &WatchedParams,
    cfg: &NetConfig,
    layer: &ConvLayer,
    x: &Tensor,
    relu: bool,
) -> Result<Tensor> {
    let y = tape.conv3d(
        x,
        params.get(&format!("{}/w", layer.key)),
        layer.stride,
        layer.pad,
    )?;
    let mut y = tape.bias_channel(&y, params.get(&format!("{}/b", layer.key)))?;
    if cfg.use_norm_layers {
        y = tape.channel_norm(&y, 1e-5)?;
    }
    if relu {
        y = tape.relu(&y);
    }
    Ok(y)
}

/// Encoder forward pass: voxel grids `[B,1,D,D,D]` to latent moments
/// `(mu, logvar)`, each `[B, Z]`.
pub fn encode(
    tape: &mut Tape,
    params: &WatchedParams,
    cfg: &NetConfig,
    grids: &Tensor,
) -> Result<(Tensor, Tensor)> {
    check_grid_input(cfg, grids)?;
    let mut h = scale_input(tape, grids)?;
    let ladder = encoder_ladder(cfg);
    let last = ladder.len() - 1;
    for (i, layer) in ladder.iter().enumerate() {
        h = conv_block(tape, params, cfg, layer, &h, i < last)?;
    }
    let batch = grids.shape()[0];
    let flat = tape.reshape(&h, vec![batch, cfg.encoder_features()])?;
    let mu = tape.dense(&flat, params.get("enc/mu/w"), params.get("enc/mu/b"))?;
    let logvar = tape.dense(&flat, params.get("enc/logvar/w"), params.get("enc/logvar/b"))?;
    Ok((mu, logvar))
}

/// Generator forward pass: latent codes `[B, Z]` to voxel probability grids
/// `[B,1,D,D,D]`, every value strictly inside (0,1).
pub fn generate(
    tape: &mut Tape,
    params: &WatchedParams,
    cfg: &NetConfig,
    z: &Tensor,
) -> Result<Tensor> {
    if z.shape().len() != 2 || z.shape()[1] != cfg.latent_dim {
        return Err(Error::ShapeMismatch {
            op: "generate",
            left: z.shape().to_vec(),
            right: vec![0, cfg.latent_dim],
        });
    }
    let batch = z.shape()[0];
    let h = tape.dense(z, params.get("gen/fc/w"), params.get("gen/fc/b"))?;
    let mut h = tape.reshape(&h, vec![batch, cfg.encoder_features(), 1, 1, 1])?;
    let ladder = generator_ladder(cfg);
    let last = ladder.len() - 1;
    for (i, layer) in ladder.iter().enumerate() {
        let y = tape.conv_transpose3d(
            &h,
            params.get(&format!("{}/w", layer.key)),
            layer.stride,
            layer.pad,
        )?;
        let mut y = tape.bias_channel(&y, params.get(&format!("{}/b", layer.key)))?;
        if i < last {
            if cfg.use_norm_layers {
                y = tape.channel_norm(&y, 1e-5)?;
            }
            y = tape.relu(&y);
        } else {
            y = tape.sigmoid(&y);
        }
        h = y;
    }
    Ok(h)
}

/// Detector forward pass: voxel grids `[B,1,D,D,D]` to flat landmark
/// coordinates `[B, 3N]`, final layer linear.
///
/// `dropout_rng` switches training mode on: dropout masks are drawn between
/// the fully connected layers. Pass `None` for deterministic evaluation.
pub fn detect(
    tape: &mut Tape,
    params: &WatchedParams,
    cfg: &NetConfig,
    grids: &Tensor,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor> {
    check_grid_input(cfg, grids)?;
    let mut h = scale_input(tape, grids)?;
    for (i, layer) in detector_convs(cfg).iter().enumerate() {
        h = conv_block(tape, params, cfg, layer, &h, true)?;
        if i < 3 {
            h = tape.maxpool3d(&h, 2)?;
        }
    }
    let batch = grids.shape()[0];
    let mut h = tape.reshape(&h, vec![batch, cfg.detector_features()])?;
    let fcs = detector_fcs(cfg);
    let mut rng = dropout_rng;
    for (i, l) in fcs.iter().enumerate() {
        h = tape.dense(
            &h,
            params.get(&format!("{}/w", l.key)),
            params.get(&format!("{}/b", l.key)),
        )?;
        if i + 1 < fcs.len() {
            h = tape.relu(&h);
            if let Some(r) = rng.as_deref_mut() {
                h = tape.dropout(&h, cfg.dropout_rate, r)?;
            }
        }
    }
    Ok(h)
}

fn check_grid_input(cfg: &NetConfig, grids: &Tensor) -> Result<()> {
    let d = cfg.grid_dim;
    let want = [1, d, d, d];
    if grids.shape().len() != 5 || grids.shape()[1..] != want {
        return Err(Error::ShapeMismatch {
            op: "grid input",
            left: grids.shape().to_vec(),
            right: vec![0, 1, d, d, d],
        });
    }
    Ok(())
}

// Forward-only conveniences used by evaluation code. Each builds a throwaway
// tape with untracked parameters.

/// Latent moments for a batch of grids.
pub fn encode_eval(params: &ParamSet, cfg: &NetConfig, grids: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let watched = watch_params(&mut tape, params, false);
    encode(&mut tape, &watched, cfg, grids)
}

/// Decodes latent codes into voxel grids.
pub fn generate_eval(params: &ParamSet, cfg: &NetConfig, z: &Tensor) -> Result<Vec<VoxelGrid>> {
    let mut tape = Tape::new();
    let watched = watch_params(&mut tape, params, false);
    let out = generate(&mut tape, &watched, cfg, z)?;
    tensor_to_grids(&out, cfg.grid_dim)
}

/// Eval-mode landmark predictions, clamped into the unit box.
pub fn detect_eval(params: &ParamSet, cfg: &NetConfig, grids: &Tensor) -> Result<Vec<LandmarkSet>> {
    let mut tape = Tape::new();
    let watched = watch_params(&mut tape, params, false);
    let out = detect(&mut tape, &watched, cfg, grids, None)?;
    out.data()
        .chunks(3 * cfg.n_landmarks)
        .map(LandmarkSet::from_flat)
        .collect()
}

/// Mean-branch reconstruction: encode, take mu, decode.
pub fn reconstruct_eval(
    encoder: &ParamSet,
    generator: &ParamSet,
    cfg: &NetConfig,
    grids: &Tensor,
) -> Result<Vec<VoxelGrid>> {
    let (mu, _) = encode_eval(encoder, cfg, grids)?;
    generate_eval(generator, cfg, &mu)
}

/// Per-layer activation standard deviations of the encoder on a given input;
/// used to sanity-check initialization scaling.
pub fn encoder_activation_stats(
    params: &ParamSet,
    cfg: &NetConfig,
    grids: &Tensor,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let watched = watch_params(&mut tape, params, false);
    check_grid_input(cfg, grids)?;
    let mut h = scale_input(&mut tape, grids)?;
    let ladder = encoder_ladder(cfg);
    let last = ladder.len() - 1;
    let mut stats = Vec::new();
    for (i, layer) in ladder.iter().enumerate() {
        h = conv_block(&mut tape, &watched, cfg, layer, &h, i < last)?;
        stats.push(crate::util::std_dev(h.data()));
    }
    Ok(stats)
}

/// Spatial sizes of generator activations (its 1³ latent-side input
/// included), for the mirror-symmetry check.
pub fn generator_spatial_dims(cfg: &NetConfig) -> Vec<usize> {
    let mut dims = vec![1usize];
    let enc_dims = cfg.encoder_spatial_dims();
    // Each transposed layer restores the matching encoder input extent.
    for d in enc_dims[..enc_dims.len() - 1].iter().rev() {
        dims.push(*d);
    }
    dims
}
