//! The denoiser model: a small residual convolutional network.
//!
//! Every layer is a stride-1, shape-preserving convolution; ReLU sits between
//! layers but not after the last one. With `residual = true` the network
//! predicts the noise map and the output is `y - r(y)`, which is much easier
//! to train than predicting the clean image directly.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Network architecture. The desk-scale default (depth 5, width 16) trains
/// in minutes on a CPU while still exhibiting the attack/defense gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Number of convolution layers, at least 2.
    pub depth: usize,
    /// Hidden channel count.
    pub width: usize,
    /// Odd kernel size.
    pub kernel: usize,
    /// Input and output channels: 1 for gray, 3 for RGB.
    pub channels: usize,
    /// Predict the noise map and subtract it, instead of predicting the
    /// clean image directly.
    pub residual: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            depth: 5,
            width: 16,
            kernel: 3,
            channels: 1,
            residual: true,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidArgument(format!(
                "depth must be >= 2, got {}",
                self.depth
            )));
        }
        if self.width < 1 {
            return Err(Error::InvalidArgument("width must be >= 1".into()));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// `(C_out, C_in)` per layer: channels -> width -> ... -> width -> channels.
    fn layer_channels(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let c_in = if l == 0 { self.channels } else { self.width };
                let c_out = if l == self.depth - 1 {
                    self.channels
                } else {
                    self.width
                };
                (c_out, c_in)
            })
            .collect()
    }
}

/// One convolution layer's parameters.
#[derive(Debug, Clone)]
pub struct Layer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Full parameter set of a denoiser.
#[derive(Debug, Clone)]
pub struct ModelParams {
    arch: ArchConfig,
    layers: Vec<Layer>,
}

impl ModelParams {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.len())
            .sum()
    }

    /// Flattens all parameters in layer order (kernel then bias per layer).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.kernel.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Rebuilds parameters from a flat vector laid out like [`flatten`].
    pub fn from_flat(arch: ArchConfig, flat: &[f64]) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::with_capacity(arch.depth);
        let k = arch.kernel;
        let mut pos = 0;
        for (c_out, c_in) in arch.layer_channels() {
            let kn = c_out * c_in * k * k;
            if pos + kn + c_out > flat.len() {
                return Err(Error::InvalidArgument(
                    "flat parameter vector too short".into(),
                ));
            }
            let kernel = Tensor::new(vec![c_out, c_in, k, k], flat[pos..pos + kn].to_vec())?;
            pos += kn;
            let bias = Tensor::new(vec![c_out], flat[pos..pos + c_out].to_vec())?;
            pos += c_out;
            layers.push(Layer { kernel, bias });
        }
        if pos != flat.len() {
            return Err(Error::InvalidArgument(
                "flat parameter vector too long".into(),
            ));
        }
        Ok(ModelParams { arch, layers })
    }

    /// All-zero parameters; with `residual = true` this is the identity
    /// denoiser.
    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let k = arch.kernel;
        let layers = arch
            .layer_channels()
            .into_iter()
            .map(|(c_out, c_in)| Layer {
                kernel: Tensor::zeros(&[c_out, c_in, k, k]),
                bias: Tensor::zeros(&[c_out]),
            })
            .collect();
        Ok(ModelParams { arch, layers })
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.kernel.bit_eq(&b.kernel) && a.bias.bit_eq(&b.bias))
    }
}

/// Kaiming-style initialization: kernels are Gaussian with
/// `std = sqrt(2 / fan_in)`, biases start at zero. Same `(arch, seed)` gives
/// bit-identical parameters.
pub fn init_model(arch: &ArchConfig, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = Rng::seed(seed);
    let k = arch.kernel;
    let layers = arch
        .layer_channels()
        .into_iter()
        .map(|(c_out, c_in)| {
            let fan_in = c_in * k * k;
            let std = (2.0 / fan_in as f64).sqrt();
            let mut data = vec![0.0; c_out * c_in * k * k];
            rng.fill_gaussian(&mut data, std);
            Layer {
                kernel: Tensor::new(vec![c_out, c_in, k, k], data).expect("kernel shape"),
                bias: Tensor::zeros(&[c_out]),
            }
        })
        .collect();
    Ok(ModelParams {
        arch: *arch,
        layers,
    })
}

/// Param leaves plus the output node of one forward pass.
pub struct ForwardNodes {
    pub input: NodeId,
    pub params: Vec<(NodeId, NodeId)>,
    pub output: NodeId,
}

fn check_input(arch: &ArchConfig, y: &Tensor) -> Result<()> {
    let s = y.shape();
    if s.len() != 3 || s[0] != arch.channels {
        return Err(Error::ShapeMismatch {
            op: "denoise input",
            lhs: vec![arch.channels],
            rhs: s.to_vec(),
        });
    }
    Ok(())
}

/// Adds one leaf pair `(kernel, bias)` per layer to the graph.
pub fn add_param_leaves(graph: &mut Graph, params: &ModelParams) -> Vec<(NodeId, NodeId)> {
    params
        .layers
        .iter()
        .map(|l| (graph.leaf(l.kernel.clone()), graph.leaf(l.bias.clone())))
        .collect()
}

/// Runs the network body on an existing input node, reusing existing
/// parameter leaves. Multiple forward passes in one graph (as the training
/// losses need) share the same parameter nodes.
pub fn forward_on(
    graph: &mut Graph,
    arch: &ArchConfig,
    param_nodes: &[(NodeId, NodeId)],
    input: NodeId,
) -> Result<NodeId> {
    check_input(arch, graph.value(input))?;
    if param_nodes.len() != arch.depth {
        return Err(Error::InvalidArgument(format!(
            "expected {} layers of parameter nodes, got {}",
            arch.depth,
            param_nodes.len()
        )));
    }
    let mut h = input;
    for (l, &(kernel, bias)) in param_nodes.iter().enumerate() {
        h = graph.conv2d(h, kernel, Some(bias))?;
        if l + 1 < arch.depth {
            h = graph.relu(h)?;
        }
    }
    if arch.residual {
        h = graph.sub(input, h)?;
    }
    Ok(h)
}

/// Builds a full forward graph for `y`, returning the graph and its nodes.
pub fn build_denoise_graph(params: &ModelParams, y: &Tensor) -> Result<(Graph, ForwardNodes)> {
    check_input(&params.arch, y)?;
    let mut graph = Graph::new();
    let input = graph.leaf(y.clone());
    let param_nodes = add_param_leaves(&mut graph, params);
    let output = forward_on(&mut graph, &params.arch, &param_nodes, input)?;
    Ok((
        graph,
        ForwardNodes {
            input,
            params: param_nodes,
            output,
        },
    ))
}

/// Denoises `y`, returning `y - r(y)` in residual mode or `r(y)` otherwise.
/// Inputs may lie outside `[0, 1]`; attack iterates pass unclipped values.
pub fn denoise(params: &ModelParams, y: &Tensor) -> Result<Tensor> {
    let (graph, nodes) = build_denoise_graph(params, y)?;
    Ok(graph.value(nodes.output).clone())
}

// --- checkpoint format -----------------------------------------------------
//
// magic "OBSD" | u32 version = 1 | u32 depth,width,kernel,channels | u8
// residual | per layer: u32 rank, u32 dims..., f64 LE data (kernel then
// bias) | u32 CRC32 of all preceding bytes. Everything little-endian.

const MAGIC: &[u8; 4] = b"OBSD";
const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    push_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        push_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes parameters to the checkpoint byte format.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, params.arch.depth as u32);
    push_u32(&mut out, params.arch.width as u32);
    push_u32(&mut out, params.arch.kernel as u32);
    push_u32(&mut out, params.arch.channels as u32);
    out.push(params.arch.residual as u8);
    for layer in &params.layers {
        push_tensor(&mut out, &layer.kernel);
        push_tensor(&mut out, &layer.bias);
    }
    let crc = crc32fast::hash(&out);
    push_u32(&mut out, crc);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::MalformedCheckpoint(
                "checkpoint body shorter than declared".into(),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::MalformedCheckpoint(format!(
                "implausible tensor rank {rank} in checkpoint"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new_finite(shape, data, "checkpoint tensor")
    }
}

/// Parses checkpoint bytes: magic first, then the CRC over everything before
/// it, so truncation or corruption surfaces as a checksum error rather than
/// a parse failure deeper in.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 4 {
        return Err(Error::BadMagic {
            found: {
                let mut m = [0u8; 4];
                m[..bytes.len()].copy_from_slice(bytes);
                m
            },
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if &found != MAGIC {
        return Err(Error::BadMagic { found });
    }
    if bytes.len() < 8 {
        return Err(Error::ChecksumMismatch {
            stored: 0,
            computed: crc32fast::hash(bytes),
        });
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut cur = Cursor {
        bytes: body,
        pos: 4,
    };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { found: version });
    }
    let arch = ArchConfig {
        depth: cur.u32()? as usize,
        width: cur.u32()? as usize,
        kernel: cur.u32()? as usize,
        channels: cur.u32()? as usize,
        residual: cur.u8()? != 0,
    };
    arch.validate()?;
    let expected = arch.layer_channels();
    let mut layers = Vec::with_capacity(arch.depth);
    for (c_out, c_in) in expected {
        let kernel = cur.tensor()?;
        let bias = cur.tensor()?;
        if kernel.shape() != [c_out, c_in, arch.kernel, arch.kernel] || bias.shape() != [c_out] {
            return Err(Error::MalformedCheckpoint(format!(
                "layer shapes {:?}/{:?} inconsistent with arch {arch:?}",
                kernel.shape(),
                bias.shape()
            )));
        }
        layers.push(Layer { kernel, bias });
    }
    if cur.pos != body.len() {
        return Err(Error::MalformedCheckpoint(
            "trailing bytes after checkpoint layers".into(),
        ));
    }
    Ok(ModelParams { arch, layers })
}

/// Writes a checkpoint file.
pub fn save_checkpoint(params: &ModelParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: &std::path::Path) -> Result<ModelParams> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gradcheck, GRADCHECK_EPS};

    #[test]
    fn init_is_seed_deterministic() {
        let arch = ArchConfig::default();
        let a = init_model(&arch, 9).unwrap();
        let b = init_model(&arch, 9).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
        let c = init_model(&arch, 10).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn depth_two_width_one_layer_shapes() {
        let arch = ArchConfig {
            depth: 2,
            width: 1,
            kernel: 3,
            channels: 1,
            residual: true,
        };
        let m = init_model(&arch, 1).unwrap();
        assert_eq!(m.layers().len(), 2);
        for layer in m.layers() {
            assert_eq!(layer.kernel.shape(), &[1, 1, 3, 3]);
            assert_eq!(layer.bias.shape(), &[1]);
        }
    }

    #[test]
    fn first_layer_std_close_to_kaiming() {
        let arch = ArchConfig {
            width: 64,
            ..ArchConfig::default()
        };
        let m = init_model(&arch, 4).unwrap();
        let k = &m.layers()[0].kernel;
        let n = k.len() as f64;
        let mean = k.mean();
        let std = (k.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let target = (2.0_f64 / 9.0).sqrt();
        assert!(
            (std - target).abs() < 0.1 * target,
            "std {std}, target {target}"
        );
    }

    #[test]
    fn zero_params_residual_is_identity() {
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let y = crate::corpus::synth_corpus(1, 12, 12, 3).remove(0).clean;
        let out = denoise(&params, &y).unwrap();
        assert!(out.sub(&y).unwrap().inf_norm() == 0.0);
    }

    #[test]
    fn zero_params_nonresidual_is_zero() {
        let arch = ArchConfig {
            residual: false,
            ..ArchConfig::default()
        };
        let params = ModelParams::zeros(arch).unwrap();
        let y = Tensor::full(&[1, 8, 8], 0.7);
        let out = denoise(&params, &y).unwrap();
        assert!(out.inf_norm() == 0.0);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let params = ModelParams::zeros(ArchConfig::default()).unwrap();
        let y = Tensor::zeros(&[3, 8, 8]);
        assert!(matches!(
            denoise(&params, &y),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn reconstruction_loss_gradcheck_wrt_input() {
        let arch = ArchConfig {
            depth: 3,
            width: 4,
            ..ArchConfig::default()
        };
        let params = init_model(&arch, 7).unwrap();
        let x = crate::corpus::synth_corpus(1, 8, 8, 1).remove(0).clean;
        let y = crate::corpus::synth_corpus(1, 8, 8, 2).remove(0).clean;
        let (mut graph, nodes) = build_denoise_graph(&params, &y).unwrap();
        let target = graph.leaf(x);
        let diff = graph.sub(nodes.output, target).unwrap();
        let loss = graph.sq_norm(diff).unwrap();
        let err = gradcheck(&graph, loss, nodes.input, GRADCHECK_EPS).unwrap();
        assert!(err < 1e-5, "gradcheck err {err}");
    }

    #[test]
    fn flatten_roundtrip() {
        let params = init_model(&ArchConfig::default(), 11).unwrap();
        let flat = params.flatten();
        let back = ModelParams::from_flat(*params.arch(), &flat).unwrap();
        assert!(params.bit_eq(&back));
    }

    #[test]
    fn checkpoint_roundtrip_byte_identical() {
        let params = init_model(&ArchConfig::default(), 5).unwrap();
        let bytes = encode_checkpoint(&params);
        let back = decode_checkpoint(&bytes).unwrap();
        assert!(params.bit_eq(&back));
        assert_eq!(bytes, encode_checkpoint(&back));
    }

    #[test]
    fn truncated_checkpoint_is_checksum_error() {
        let params = init_model(&ArchConfig::default(), 5).unwrap();
        let bytes = encode_checkpoint(&params);
        let truncated = &bytes[..bytes.len() - 9];
        assert!(matches!(
            decode_checkpoint(truncated),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn wrong_magic_names_the_magic() {
        let params = init_model(&ArchConfig::default(), 5).unwrap();
        let mut bytes = encode_checkpoint(&params);
        bytes[..4].copy_from_slice(b"NOPE");
        match decode_checkpoint(&bytes) {
            Err(Error::BadMagic { found }) => assert_eq!(&found, b"NOPE"),
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_byte_is_checksum_error() {
        let params = init_model(&ArchConfig::default(), 5).unwrap();
        let mut bytes = encode_checkpoint(&params);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn unsupported_version_is_distinct_error() {
        let params = init_model(&ArchConfig::default(), 5).unwrap();
        let mut bytes = encode_checkpoint(&params);
        bytes[4] = 9; // version field
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::UnsupportedVersion { found: 9 })
        ));
    }
}
