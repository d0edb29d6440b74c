//! Multi-scale network family: topology arithmetic, model construction,
//! forward/backward over a multi-scale patch and the binary model format.
//!
//! A topology `net-{levels}-{convs}-{pools}[-bp]` has one branch per pyramid
//! level. Each branch is `pools + 1` equally sized blocks of valid `k x k`
//! convolutions with ReLU, separated by 2x2 max pooling; the filter count
//! starts at `first_filters` and doubles after every pool. Branch outputs
//! (1x1 maps) are concatenated, optionally followed by the mean-image bypass
//! values, and fused by a linear fully-connected layer with three outputs.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    conv_backward, conv_forward, fc_backward, fc_forward, gaussian_init_with, maxpool2, maxpool2_backward,
    relu_backward, relu_inplace, InitScheme, LayerGrads, LayerKind, LayerParams, PoolIndices, Real, Tensor,
};
use crate::preprocess::{BypassSource, MultiScalePatch};

pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_FIRST_FILTERS: usize = 16;
pub const OUTPUTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TopologySpec {
    pub n_levels: usize,
    pub n_conv: usize,
    pub n_pool: usize,
    pub bypass: bool,
    pub kernel: usize,
    pub first_filters: usize,
}

/// One step of a branch, in forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchOp {
    /// Index into the branch's layer list.
    Conv(usize),
    Pool,
}

impl TopologySpec {
    pub fn new(n_levels: usize, n_conv: usize, n_pool: usize, bypass: bool) -> Result<Self> {
        let spec = Self {
            n_levels,
            n_conv,
            n_pool,
            bypass,
            kernel: DEFAULT_KERNEL,
            first_filters: DEFAULT_FIRST_FILTERS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::preprocess::MAX_LEVELS).contains(&self.n_levels) {
            return Err(Error::InvalidTopology(format!("{} scales (1..=5 allowed)", self.n_levels)));
        }
        let blocks = self.n_pool + 1;
        if self.n_conv == 0 || !self.n_conv.is_multiple_of(blocks) {
            return Err(Error::InvalidTopology(format!(
                "{} conv layers cannot form {blocks} equal blocks",
                self.n_conv
            )));
        }
        if self.kernel == 0 || self.first_filters == 0 {
            return Err(Error::InvalidTopology("kernel and filter count must be positive".into()));
        }
        if self.n_pool > 12 {
            return Err(Error::InvalidTopology(format!("{} pooling layers", self.n_pool)));
        }
        Ok(())
    }

    pub fn convs_per_block(&self) -> usize {
        self.n_conv / (self.n_pool + 1)
    }

    pub fn filters_in_block(&self, block: usize) -> usize {
        self.first_filters << block
    }

    /// Channel count of each branch's final 1x1 map.
    pub fn branch_features(&self) -> usize {
        self.filters_in_block(self.n_pool)
    }

    pub fn fusion_inputs(&self) -> usize {
        self.n_levels * self.branch_features() + if self.bypass { self.n_levels } else { 0 }
    }

    /// Input patch side that reduces one branch to a 1x1 map.
    pub fn roi(&self) -> usize {
        required_roi(self.n_conv, self.n_pool, self.kernel).expect("validated spec")
    }

    pub fn coherence_gap(&self) -> usize {
        coherence_gap(self.n_pool)
    }

    /// Layer kinds of one branch, in order.
    pub fn branch_layers(&self) -> Vec<LayerKind> {
        let mut layers = Vec::with_capacity(self.n_conv);
        let mut in_ch = 1;
        for block in 0..=self.n_pool {
            let out_ch = self.filters_in_block(block);
            for _ in 0..self.convs_per_block() {
                layers.push(LayerKind::Conv {
                    in_ch,
                    out_ch,
                    kernel: self.kernel,
                });
                in_ch = out_ch;
            }
        }
        layers
    }

    pub fn branch_ops(&self) -> Vec<BranchOp> {
        let mut ops = Vec::new();
        let mut layer = 0;
        for block in 0..=self.n_pool {
            if block > 0 {
                ops.push(BranchOp::Pool);
            }
            for _ in 0..self.convs_per_block() {
                ops.push(BranchOp::Conv(layer));
                layer += 1;
            }
        }
        ops
    }

    pub fn fusion_layer(&self) -> LayerKind {
        LayerKind::Dense {
            inputs: self.fusion_inputs(),
            outputs: OUTPUTS,
        }
    }

    /// The twelve topologies of the evaluated family.
    pub fn table() -> Vec<TopologySpec> {
        let mut specs = Vec::new();
        for levels in [1, 3] {
            for (c, p) in [(9, 2), (8, 3), (12, 3)] {
                for bypass in [false, true] {
                    specs.push(TopologySpec::new(levels, c, p, bypass).expect("table entries are valid"));
                }
            }
        }
        specs
    }
}

impl Default for TopologySpec {
    /// `net-3-12-3-bp`.
    fn default() -> Self {
        TopologySpec::new(3, 12, 3, true).expect("valid")
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "net-{}-{}-{}", self.n_levels, self.n_conv, self.n_pool)?;
        if self.bypass {
            write!(f, "-bp")?;
        }
        Ok(())
    }
}

impl FromStr for TopologySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTopology(format!("cannot parse topology name {s:?}"));
        let rest = s.trim().strip_prefix("net-").ok_or_else(bad)?;
        let (rest, bypass) = match rest.strip_suffix("-bp") {
            Some(r) => (r, true),
            None => (rest, false),
        };
        let nums: Vec<usize> = rest
            .split('-')
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match nums.as_slice() {
            &[l, c, p] => TopologySpec::new(l, c, p, bypass),
            _ => Err(bad()),
        }
    }
}

/// Smallest input side for which `n_pool + 1` blocks of valid convolutions
/// separated by exact 2x2 pools end in a 1x1 map.
pub fn required_roi(n_conv: usize, n_pool: usize, kernel: usize) -> Result<usize> {
    let blocks = n_pool + 1;
    if kernel == 0 || n_conv == 0 || !n_conv.is_multiple_of(blocks) {
        return Err(Error::InvalidTopology(format!(
            "no block structure for {n_conv} convs and {n_pool} pools"
        )));
    }
    let per_block = n_conv / blocks;
    let mut side = 1usize;
    for block in (0..blocks).rev() {
        side += per_block * (kernel - 1);
        if block > 0 {
            side *= 2;
        }
    }
    Ok(side)
}

/// Product of all layer strides in a branch.
pub fn coherence_gap(n_pool: usize) -> usize {
    1 << n_pool
}

/// Trainable parameters of one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: TopologySpec,
    /// Normalization window the model was trained with.
    pub window: usize,
    pub bypass_source: BypassSource,
    pub branches: Vec<Vec<LayerParams<T>>>,
    pub fusion: LayerParams<T>,
}

/// Gradients for every parameter of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub branches: Vec<Vec<LayerGrads<T>>>,
    pub fusion: LayerGrads<T>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros(spec: &TopologySpec) -> Self {
        let layers = spec.branch_layers();
        Self {
            branches: (0..spec.n_levels)
                .map(|_| layers.iter().map(|&k| LayerGrads::zeros(k)).collect())
                .collect(),
            fusion: LayerGrads::zeros(spec.fusion_layer()),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads<T>) {
        for (a, b) in self.branches.iter_mut().zip(&other.branches) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y);
            }
        }
        self.fusion.add_assign(&other.fusion);
    }

    /// Flattened in parameter order (branches, then fusion).
    pub fn into_layers(self) -> Vec<LayerGrads<T>> {
        let mut out: Vec<_> = self.branches.into_iter().flatten().collect();
        out.push(self.fusion);
        out
    }

    pub fn iter_values(&self) -> impl Iterator<Item = T> + '_ {
        self.branches
            .iter()
            .flatten()
            .chain(std::iter::once(&self.fusion))
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
    }
}

/// Activations recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Per branch: the input of every op, in op order.
    inputs: Vec<Vec<Tensor<T>>>,
    /// Per branch: pooling indices in pool order.
    pools: Vec<Vec<PoolIndices>>,
    /// Per branch: post-ReLU output of every conv, in conv order.
    activations: Vec<Vec<Tensor<T>>>,
    pub fusion_input: Vec<T>,
    pub output: [T; OUTPUTS],
}

impl<T: Real> Model<T> {
    /// Zero-initialized model.
    pub fn zeros(spec: TopologySpec, window: usize) -> Result<Self> {
        spec.validate()?;
        let layers = spec.branch_layers();
        Ok(Self {
            spec,
            window,
            bypass_source: BypassSource::AllLevels,
            branches: (0..spec.n_levels)
                .map(|_| layers.iter().map(|&k| LayerParams::zeros(k)).collect())
                .collect(),
            fusion: LayerParams::zeros(spec.fusion_layer()),
        })
    }

    pub fn params(&self) -> impl Iterator<Item = &LayerParams<T>> {
        self.branches.iter().flatten().chain(std::iter::once(&self.fusion))
    }

    pub fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        let mut out: Vec<&mut LayerParams<T>> = self.branches.iter_mut().flatten().collect();
        out.push(&mut self.fusion);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.param_count()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec,
            window: self.window,
            bypass_source: self.bypass_source,
            branches: self
                .branches
                .iter()
                .map(|b| b.iter().map(|p| p.cast()).collect())
                .collect(),
            fusion: self.fusion.cast(),
        }
    }

    /// Checks every layer shape against the spec.
    pub fn check_shapes(&self) -> Result<()> {
        self.spec.validate()?;
        let layers = self.spec.branch_layers();
        if self.branches.len() != self.spec.n_levels {
            return Err(Error::shape(format!(
                "{} branches for {} scales",
                self.branches.len(),
                self.spec.n_levels
            )));
        }
        for branch in &self.branches {
            if branch.len() != layers.len() {
                return Err(Error::shape("branch depth differs from topology"));
            }
            for (p, &k) in branch.iter().zip(&layers) {
                if p.kind != k || p.weights.len() != k.weight_len() || p.bias.len() != k.bias_len() {
                    return Err(Error::shape(format!("layer {:?} does not match {k:?}", p.kind)));
                }
            }
        }
        let fk = self.spec.fusion_layer();
        if self.fusion.kind != fk || self.fusion.weights.len() != fk.weight_len() {
            return Err(Error::shape("fusion layer does not match topology"));
        }
        Ok(())
    }

    fn patch_input(patch: &MultiScalePatch, level: usize) -> Tensor<T> {
        let img = &patch.patches[level];
        Tensor {
            channels: 1,
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&v| T::lit(v as f64)).collect(),
        }
    }

    fn check_patch(&self, patch: &MultiScalePatch) -> Result<()> {
        let roi = self.spec.roi();
        if patch.patches.len() != self.spec.n_levels || patch.bypass.len() != self.spec.n_levels {
            return Err(Error::shape(format!(
                "patch has {} scales, model expects {}",
                patch.patches.len(),
                self.spec.n_levels
            )));
        }
        if patch.patches.iter().any(|p| p.width() != roi || p.height() != roi || p.channels() != 1) {
            return Err(Error::shape(format!("patches must be {roi}x{roi} single-channel")));
        }
        Ok(())
    }

    /// Runs one branch on a tensor and returns its final map.
    pub fn branch_forward(&self, level: usize, input: Tensor<T>) -> Result<Tensor<T>> {
        let branch = &self.branches[level];
        let mut x = input;
        for op in self.spec.branch_ops() {
            x = match op {
                BranchOp::Conv(i) => {
                    let mut y = conv_forward(&x, &branch[i])?;
                    relu_inplace(&mut y);
                    y
                }
                BranchOp::Pool => maxpool2(&x)?.0,
            };
        }
        Ok(x)
    }

    /// Concatenated fusion-layer input for per-branch feature vectors and
    /// bypass values.
    pub fn fusion_input(&self, features: &[&[T]], bypass: &[f32]) -> Vec<T> {
        let mut v = Vec::with_capacity(self.spec.fusion_inputs());
        for f in features {
            v.extend_from_slice(f);
        }
        if self.spec.bypass {
            v.extend(bypass.iter().map(|&b| T::lit(b as f64)));
        }
        v
    }

    pub fn forward(&self, patch: &MultiScalePatch) -> Result<[T; OUTPUTS]> {
        self.check_patch(patch)?;
        let mut feats = Vec::with_capacity(self.spec.n_levels);
        for level in 0..self.spec.n_levels {
            let out = self.branch_forward(level, Self::patch_input(patch, level))?;
            debug_assert_eq!((out.height, out.width), (1, 1));
            feats.push(out.data);
        }
        let refs: Vec<&[T]> = feats.iter().map(|f| f.as_slice()).collect();
        let y = fc_forward(&self.fusion_input(&refs, &patch.bypass), &self.fusion)?;
        Ok([y[0], y[1], y[2]])
    }

    pub fn forward_trace(&self, patch: &MultiScalePatch) -> Result<ForwardTrace<T>> {
        self.check_patch(patch)?;
        let ops = self.spec.branch_ops();
        let mut inputs = Vec::with_capacity(self.spec.n_levels);
        let mut pools = Vec::with_capacity(self.spec.n_levels);
        let mut activations = Vec::with_capacity(self.spec.n_levels);
        let mut feats = Vec::with_capacity(self.spec.n_levels);
        for level in 0..self.spec.n_levels {
            let branch = &self.branches[level];
            let mut x = Self::patch_input(patch, level);
            let mut ins = Vec::with_capacity(ops.len());
            let mut ps = Vec::new();
            let mut acts = Vec::new();
            for &op in &ops {
                let y = match op {
                    BranchOp::Conv(i) => {
                        let mut y = conv_forward(&x, &branch[i])?;
                        relu_inplace(&mut y);
                        acts.push(y.clone());
                        y
                    }
                    BranchOp::Pool => {
                        let (y, idx) = maxpool2(&x)?;
                        ps.push(idx);
                        y
                    }
                };
                ins.push(std::mem::replace(&mut x, y));
            }
            if (x.height, x.width) != (1, 1) {
                return Err(Error::shape(format!(
                    "branch produced a {}x{} map instead of 1x1",
                    x.height, x.width
                )));
            }
            feats.push(x.data);
            inputs.push(ins);
            pools.push(ps);
            activations.push(acts);
        }
        let refs: Vec<&[T]> = feats.iter().map(|f| f.as_slice()).collect();
        let fusion_input = self.fusion_input(&refs, &patch.bypass);
        let y = fc_forward(&fusion_input, &self.fusion)?;
        Ok(ForwardTrace {
            inputs,
            pools,
            activations,
            fusion_input,
            output: [y[0], y[1], y[2]],
        })
    }

    /// Backpropagates `grad_output` (d loss / d output) through a recorded pass.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_output: &[T; OUTPUTS]) -> Result<ModelGrads<T>> {
        let (g_fusion_in, fusion_grads) = fc_backward(&trace.fusion_input, &self.fusion, grad_output)?;
        let ops = self.spec.branch_ops();
        let feat = self.spec.branch_features();
        let mut branches = Vec::with_capacity(self.spec.n_levels);
        for level in 0..self.spec.n_levels {
            let branch = &self.branches[level];
            let mut grads: Vec<LayerGrads<T>> = branch.iter().map(|p| LayerGrads::zeros(p.kind)).collect();
            let mut g = Tensor {
                channels: feat,
                height: 1,
                width: 1,
                data: g_fusion_in[level * feat..(level + 1) * feat].to_vec(),
            };
            let mut pool_i = trace.pools[level].len();
            for (step, &op) in ops.iter().enumerate().rev() {
                let x = &trace.inputs[level][step];
                g = match op {
                    BranchOp::Conv(i) => {
                        let g_pre = relu_backward(&trace.activations[level][i], &g);
                        let (gx, lg) = conv_backward(x, &branch[i], &g_pre, step > 0)?;
                        grads[i] = lg;
                        match gx {
                            Some(gx) => gx,
                            None => break,
                        }
                    }
                    BranchOp::Pool => {
                        pool_i -= 1;
                        maxpool2_backward(&trace.pools[level][pool_i], &g)
                    }
                };
            }
            branches.push(grads);
        }
        Ok(ModelGrads {
            branches,
            fusion: fusion_grads,
        })
    }
}

/// Gaussian-initialized model, deterministic per seed.
pub fn build_model<T: Real>(spec: TopologySpec, window: usize, scheme: InitScheme, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec.branch_layers();
    let branches = (0..spec.n_levels)
        .map(|_| layers.iter().map(|&k| gaussian_init_with(k, scheme, &mut rng)).collect())
        .collect();
    let fusion = gaussian_init_with(spec.fusion_layer(), scheme, &mut rng);
    Ok(Model {
        spec,
        window,
        bypass_source: BypassSource::AllLevels,
        branches,
        fusion,
    })
}

pub const MODEL_MAGIC: &[u8; 4] = b"NIRC";
pub const MODEL_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;

fn encode_header(model: &Model<f32>) -> Result<Vec<u8>> {
    let s = &model.spec;
    let fields = [
        s.n_levels,
        s.n_conv,
        s.n_pool,
        s.bypass as usize,
        s.kernel,
        s.first_filters,
        model.window,
        model.bypass_source.code() as usize,
    ];
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for f in fields {
        let v = u16::try_from(f).map_err(|_| Error::ModelFormat(format!("header field {f} exceeds 16 bits")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.resize(HEADER_LEN, 0);
    Ok(out)
}

/// Serializes a model: 64-byte header then little-endian `f32` parameters,
/// branch by branch and layer by layer (weights then biases), fusion last.
pub fn model_to_bytes(model: &Model<f32>) -> Result<Vec<u8>> {
    model.check_shapes()?;
    let mut out = encode_header(model)?;
    out.reserve(model.param_count() * 4);
    for p in model.params() {
        for v in p.weights.iter().chain(&p.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a model; with `expected` set, the stored topology must match it.
pub fn model_from_bytes(bytes: &[u8], expected: Option<&TopologySpec>) -> Result<Model<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::ModelFormat(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let field = |i: usize| u16::from_le_bytes([bytes[4 + 2 * i], bytes[5 + 2 * i]]);
    let version = field(0);
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let f = |i: usize| field(i + 1) as usize;
    let bypass = match f(3) {
        0 => false,
        1 => true,
        other => return Err(Error::ModelFormat(format!("bypass flag {other}"))),
    };
    let spec = TopologySpec {
        n_levels: f(0),
        n_conv: f(1),
        n_pool: f(2),
        bypass,
        kernel: f(4),
        first_filters: f(5),
    };
    spec.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
    if let Some(want) = expected {
        if *want != spec {
            return Err(Error::ShapeMismatch(format!("model file holds {spec}, expected {want}")));
        }
    }
    let window = f(6);
    let bypass_source = BypassSource::from_code(f(7) as u16)?;
    let mut model = Model::<f32>::zeros(spec, window)?;
    model.bypass_source = bypass_source;
    let need = HEADER_LEN + 4 * model.param_count();
    if bytes.len() != need {
        return Err(Error::ModelFormat(format!(
            "{} bytes for {spec}, expected {need}",
            bytes.len()
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for p in model.params_mut() {
        for v in p.weights.iter_mut().chain(p.bias.iter_mut()) {
            *v = values.next().expect("length checked");
        }
    }
    Ok(model)
}

pub fn save_model(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>, expected: Option<&TopologySpec>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes, expected)
}
