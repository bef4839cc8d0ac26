//! MobileNetV2 feature extractor: topology, weight validation, truncation and
//! the forward pass with activation taps.
//!
//! The sixteen indexable blocks are the expansion-6 inverted-residual blocks
//! in network order. The stem convolution and the initial expansion-1 block
//! run but cannot be tapped.
//!
//! Parameter names follow the Keras `MobileNetV2` layer names so that an
//! exported container maps one-to-one onto the published checkpoint:
//!
//! | layer                  | tensor                                        |
//! |------------------------|-----------------------------------------------|
//! | stem conv              | `Conv1/kernel` `[3, 3, 3, 32]`                |
//! | stem BN                | `bn_Conv1/{gamma,beta,moving_mean,moving_variance}` |
//! | block 0 depthwise      | `expanded_conv_depthwise/depthwise_kernel` `[3, 3, 32]` |
//! | block 0 project        | `expanded_conv_project/kernel` `[1, 1, 32, 16]` |
//! | block b expand         | `block_{b}_expand/kernel` `[1, 1, in, 6 in]`  |
//! | block b depthwise      | `block_{b}_depthwise/depthwise_kernel` `[3, 3, 6 in]` |
//! | block b project        | `block_{b}_project/kernel` `[1, 1, 6 in, out]` |
//! | head conv              | `Conv_1/kernel` `[1, 1, 320, 1280]`           |
//!
//! Every convolution is followed by a BN layer named `<conv>_BN` (`bn_Conv1`
//! and `Conv_1_bn` for the stem and head).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::container::Container;
use crate::error::{arg_err, Error, Result};
use crate::preprocess::{InputImage, Preprocessing};
use crate::tensor::{
    add_residual_inplace, conv2d, depthwise_conv2d, output_geometry, relu6_inplace, BnParams,
    ConvKernel, DepthwiseKernel, Padding, Tensor, DEFAULT_BN_EPSILON,
};

pub const BLOCK_COUNT: usize = 16;
pub const EXPANSION: usize = 6;
pub const WEIGHTS_KIND: &str = "weights";

const STEM_CHANNELS: usize = 32;
const BLOCK0_OUT: usize = 16;
const HEAD_CHANNELS: usize = 1280;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub index: usize,
    pub in_channels: usize,
    pub expansion_factor: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub has_residual: bool,
}

impl BlockSpec {
    pub const fn expanded_channels(&self) -> usize {
        self.in_channels * self.expansion_factor
    }
}

const fn spec(index: usize, in_channels: usize, out_channels: usize, stride: usize) -> BlockSpec {
    BlockSpec {
        index,
        in_channels,
        expansion_factor: EXPANSION,
        out_channels,
        stride,
        has_residual: stride == 1 && in_channels == out_channels,
    }
}

pub const BLOCKS: [BlockSpec; BLOCK_COUNT] = [
    spec(1, 16, 24, 2),
    spec(2, 24, 24, 1),
    spec(3, 24, 32, 2),
    spec(4, 32, 32, 1),
    spec(5, 32, 32, 1),
    spec(6, 32, 64, 2),
    spec(7, 64, 64, 1),
    spec(8, 64, 64, 1),
    spec(9, 64, 64, 1),
    spec(10, 64, 96, 1),
    spec(11, 96, 96, 1),
    spec(12, 96, 96, 1),
    spec(13, 96, 160, 2),
    spec(14, 160, 160, 1),
    spec(15, 160, 160, 1),
    spec(16, 160, 320, 1),
];

pub fn block(index: usize) -> Result<BlockSpec> {
    index
        .checked_sub(1)
        .and_then(|i| BLOCKS.get(i))
        .copied()
        .ok_or_else(|| arg_err!("block index {index} outside 1..={BLOCK_COUNT}"))
}

/// Sum of expanded channel counts, i.e. the fused feature dimension.
pub fn feature_dim(block_set: &[usize]) -> Result<usize> {
    block_set
        .iter()
        .map(|&b| block(b).map(|s| s.expanded_channels()))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TapSite {
    /// Output of the ReLU after the expand BN.
    PreRelu,
    /// Output of the depthwise BN.
    Bn,
    /// Output of the ReLU after the depthwise BN.
    PostRelu,
}

impl fmt::Display for TapSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TapSite::PreRelu => "pre_relu",
            TapSite::Bn => "bn",
            TapSite::PostRelu => "post_relu",
        })
    }
}

impl FromStr for TapSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_relu" => Ok(TapSite::PreRelu),
            "bn" => Ok(TapSite::Bn),
            "post_relu" => Ok(TapSite::PostRelu),
            _ => Err(arg_err!("unknown tap site `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tap {
    pub block: usize,
    pub site: TapSite,
}

impl Tap {
    pub fn new(block: usize, site: TapSite) -> Self {
        Tap { block, site }
    }
}

/// How much of the network a container carries. A container truncated at
/// block `b` holds everything up to and including `b`'s depthwise BN, which
/// is enough to produce all three tap sites of `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Depth {
    pub last_block: usize,
    pub head: bool,
}

impl Depth {
    pub const FULL: Depth = Depth {
        last_block: BLOCK_COUNT,
        head: true,
    };

    pub fn truncated(last_block: usize) -> Depth {
        Depth {
            last_block,
            head: false,
        }
    }

    fn has_project(&self, b: usize) -> bool {
        b < self.last_block || self.head
    }
}

const BN_SUFFIXES: [&str; 4] = ["gamma", "beta", "moving_mean", "moving_variance"];

fn conv_shape(kh: usize, cin: usize, cout: usize) -> Vec<usize> {
    vec![kh, kh, cin, cout]
}

/// Every tensor name and shape required at the given depth, in network order.
pub fn parameter_layout(depth: Depth) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let conv = |out: &mut Vec<(String, Vec<usize>)>, kernel: String, shape: Vec<usize>, bn: String, c: usize| {
        out.push((kernel, shape));
        for s in BN_SUFFIXES {
            out.push((format!("{bn}/{s}"), vec![c]));
        }
    };
    conv(&mut out, "Conv1/kernel".into(), conv_shape(3, 3, STEM_CHANNELS), "bn_Conv1".into(), STEM_CHANNELS);
    conv(
        &mut out,
        "expanded_conv_depthwise/depthwise_kernel".into(),
        vec![3, 3, STEM_CHANNELS],
        "expanded_conv_depthwise_BN".into(),
        STEM_CHANNELS,
    );
    conv(
        &mut out,
        "expanded_conv_project/kernel".into(),
        conv_shape(1, STEM_CHANNELS, BLOCK0_OUT),
        "expanded_conv_project_BN".into(),
        BLOCK0_OUT,
    );
    for s in &BLOCKS[..depth.last_block] {
        let (b, e) = (s.index, s.expanded_channels());
        conv(
            &mut out,
            format!("block_{b}_expand/kernel"),
            conv_shape(1, s.in_channels, e),
            format!("block_{b}_expand_BN"),
            e,
        );
        conv(
            &mut out,
            format!("block_{b}_depthwise/depthwise_kernel"),
            vec![3, 3, e],
            format!("block_{b}_depthwise_BN"),
            e,
        );
        if depth.has_project(b) {
            conv(
                &mut out,
                format!("block_{b}_project/kernel"),
                conv_shape(1, e, s.out_channels),
                format!("block_{b}_project_BN"),
                s.out_channels,
            );
        }
    }
    if depth.head {
        let last = BLOCKS[BLOCK_COUNT - 1].out_channels;
        conv(&mut out, "Conv_1/kernel".into(), conv_shape(1, last, HEAD_CHANNELS), "Conv_1_bn".into(), HEAD_CHANNELS);
    }
    out
}

/// A container whose tensors have been checked against the topology.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    container: Container,
    depth: Depth,
    preprocessing: Preprocessing,
}

pub const META_SOURCE: &str = "source_model";
pub const META_PREPROCESSING: &str = "preprocessing";
pub const META_INPUT_SIZE: &str = "input_size";
pub const META_LAST_BLOCK: &str = "last_block";
pub const META_HEAD: &str = "head";
pub const META_BN_EPSILON: &str = "bn_epsilon";

impl WeightContainer {
    pub fn from_container(container: Container) -> Result<Self> {
        if container.kind() != WEIGHTS_KIND {
            return Err(Error::Format(format!(
                "expected a `{WEIGHTS_KIND}` container, found `{}`",
                container.kind()
            )));
        }
        let meta = |k: &str| {
            container
                .meta(k)
                .ok_or_else(|| Error::Format(format!("weights metadata lacks `{k}`")))
        };
        let last_block: usize = meta(META_LAST_BLOCK)?
            .parse()
            .map_err(|_| Error::Format("`last_block` is not an integer".into()))?;
        block(last_block).map_err(|e| Error::Format(e.to_string()))?;
        let head = match meta(META_HEAD)? {
            "true" => true,
            "false" => false,
            other => return Err(Error::Format(format!("`head` must be true/false, got `{other}`"))),
        };
        if head && last_block != BLOCK_COUNT {
            return Err(Error::Format("a container with a head must hold all 16 blocks".into()));
        }
        let size: usize = meta(META_INPUT_SIZE)?
            .parse()
            .ok()
            .filter(|&s| s > 0)
            .ok_or_else(|| Error::Format("`input_size` must be a positive integer".into()))?;
        let preprocessing = Preprocessing {
            scale_id: meta(META_PREPROCESSING)?.to_string(),
            size,
        };
        if let Some(eps) = container.meta(META_BN_EPSILON) {
            eps.parse::<f32>()
                .ok()
                .filter(|e| *e >= 0.0)
                .ok_or_else(|| Error::Format(format!("bad bn_epsilon `{eps}`")))?;
        }
        let depth = Depth { last_block, head };

        let layout = parameter_layout(depth);
        let mut problems = Vec::new();
        for (name, shape) in &layout {
            match container.get(name) {
                None => problems.push(format!("missing tensor `{name}`")),
                Some((s, _)) if s != shape.as_slice() => {
                    problems.push(format!("tensor `{name}` has shape {s:?}, expected {shape:?}"))
                }
                _ => {}
            }
        }
        for e in container.entries() {
            if !layout.iter().any(|(n, _)| *n == e.name) {
                problems.push(format!("unexpected tensor `{}`", e.name));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Topology(problems.join("; ")));
        }
        Ok(WeightContainer {
            container,
            depth,
            preprocessing,
        })
    }

    pub fn container(&self) -> &Container {
        &self.container
    }

    pub fn depth(&self) -> Depth {
        self.depth
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.container.write(path)
    }

    /// Keeps only what is needed to tap blocks `1..=last_block`.
    pub fn truncate(&self, last_block: usize) -> Result<WeightContainer> {
        block(last_block)?;
        let depth = if last_block > self.depth.last_block {
            self.depth
        } else {
            Depth::truncated(last_block)
        };
        let keep: Vec<String> = parameter_layout(depth).into_iter().map(|(n, _)| n).collect();
        let mut c = self.container.retain(|n| keep.iter().any(|k| k == n));
        c.set_meta(META_LAST_BLOCK, depth.last_block.to_string());
        c.set_meta(META_HEAD, depth.head.to_string());
        WeightContainer::from_container(c)
    }

    pub fn count_params(&self) -> usize {
        self.container.param_count()
    }

    pub fn serialized_size_bytes(&self) -> usize {
        self.container.serialized_len()
    }

    pub fn content_hash(&self) -> String {
        self.container.content_hash()
    }

    fn bn_epsilon(&self, layer: &str) -> f32 {
        self.container
            .meta(&format!("{META_BN_EPSILON}:{layer}"))
            .or_else(|| self.container.meta(META_BN_EPSILON))
            .and_then(|v| v.parse().ok())
            .unwrap_or(DEFAULT_BN_EPSILON)
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightContainer> {
    WeightContainer::from_container(Container::read(path)?)
}

/// Fresh weights-kind container with the standard metadata filled in.
pub fn new_weights_container(source: &str, preprocessing: &Preprocessing, depth: Depth) -> Container {
    let mut c = Container::new(WEIGHTS_KIND);
    c.set_meta(META_SOURCE, source);
    c.set_meta(META_PREPROCESSING, preprocessing.scale_id.clone());
    c.set_meta(META_INPUT_SIZE, preprocessing.size.to_string());
    c.set_meta(META_LAST_BLOCK, depth.last_block.to_string());
    c.set_meta(META_HEAD, depth.head.to_string());
    c.set_meta(META_BN_EPSILON, DEFAULT_BN_EPSILON.to_string());
    c
}

#[derive(Debug, Clone)]
struct ConvBn {
    kernel: ConvKernel,
    bn: BnParams,
    stride: usize,
}

impl ConvBn {
    fn run(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = conv2d(x, &self.kernel, self.stride, Padding::Same)?;
        self.bn.apply_inplace(&mut y)?;
        Ok(y)
    }
}

#[derive(Debug, Clone)]
struct DwBn {
    kernel: DepthwiseKernel,
    bn: BnParams,
    stride: usize,
}

impl DwBn {
    fn run(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = depthwise_conv2d(x, &self.kernel, self.stride, Padding::Same)?;
        self.bn.apply_inplace(&mut y)?;
        Ok(y)
    }
}

#[derive(Debug, Clone)]
struct Block {
    spec: BlockSpec,
    expand: ConvBn,
    depthwise: DwBn,
    project: Option<ConvBn>,
}

/// Executable network built from a validated container.
#[derive(Debug, Clone)]
pub struct Network {
    stem: ConvBn,
    block0_dw: DwBn,
    block0_project: ConvBn,
    blocks: Vec<Block>,
    head: Option<ConvBn>,
    depth: Depth,
    preprocessing: Preprocessing,
}

fn load_bn(w: &WeightContainer, layer: &str, c: usize) -> Result<BnParams> {
    let get = |s: &str| w.container.expect(&format!("{layer}/{s}"), &[c]).map(<[f32]>::to_vec);
    BnParams::new(
        get("gamma")?,
        get("beta")?,
        get("moving_mean")?,
        get("moving_variance")?,
        w.bn_epsilon(layer),
    )
    .map_err(|e| Error::Topology(format!("{layer}: {e}")))
}

fn load_conv(w: &WeightContainer, conv: &str, bn: &str, kh: usize, cin: usize, cout: usize, stride: usize) -> Result<ConvBn> {
    let data = w.container.expect(&format!("{conv}/kernel"), &conv_shape(kh, cin, cout))?;
    Ok(ConvBn {
        kernel: ConvKernel::new(kh, kh, cin, cout, data.to_vec())?,
        bn: load_bn(w, bn, cout)?,
        stride,
    })
}

fn load_dw(w: &WeightContainer, conv: &str, c: usize, stride: usize) -> Result<DwBn> {
    let data = w.container.expect(&format!("{conv}/depthwise_kernel"), &[3, 3, c])?;
    Ok(DwBn {
        kernel: DepthwiseKernel::new(3, 3, c, data.to_vec())?,
        bn: load_bn(w, &format!("{conv}_BN"), c)?,
        stride,
    })
}

impl Network {
    pub fn new(w: &WeightContainer) -> Result<Self> {
        let depth = w.depth;
        let stem = load_conv(w, "Conv1", "bn_Conv1", 3, 3, STEM_CHANNELS, 2)?;
        let block0_dw = load_dw(w, "expanded_conv_depthwise", STEM_CHANNELS, 1)?;
        let block0_project = load_conv(
            w,
            "expanded_conv_project",
            "expanded_conv_project_BN",
            1,
            STEM_CHANNELS,
            BLOCK0_OUT,
            1,
        )?;
        let mut blocks = Vec::with_capacity(depth.last_block);
        for s in &BLOCKS[..depth.last_block] {
            let (b, e) = (s.index, s.expanded_channels());
            let expand = load_conv(
                w,
                &format!("block_{b}_expand"),
                &format!("block_{b}_expand_BN"),
                1,
                s.in_channels,
                e,
                1,
            )?;
            let depthwise = load_dw(w, &format!("block_{b}_depthwise"), e, s.stride)?;
            let project = if depth.has_project(b) {
                Some(load_conv(
                    w,
                    &format!("block_{b}_project"),
                    &format!("block_{b}_project_BN"),
                    1,
                    e,
                    s.out_channels,
                    1,
                )?)
            } else {
                None
            };
            blocks.push(Block {
                spec: *s,
                expand,
                depthwise,
                project,
            });
        }
        let head = if depth.head {
            Some(load_conv(w, "Conv_1", "Conv_1_bn", 1, BLOCKS[BLOCK_COUNT - 1].out_channels, HEAD_CHANNELS, 1)?)
        } else {
            None
        };
        Ok(Network {
            stem,
            block0_dw,
            block0_project,
            blocks,
            head,
            depth,
            preprocessing: w.preprocessing.clone(),
        })
    }

    pub fn depth(&self) -> Depth {
        self.depth
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    fn check_input(&self, image: &InputImage) -> Result<()> {
        if image.preprocessing() != &self.preprocessing {
            return Err(Error::Preprocessing {
                image: image.preprocessing().to_string(),
                container: self.preprocessing.to_string(),
            });
        }
        Ok(())
    }

    /// Spatial size after every stage, for the configured input size. Fails
    /// if any stage would collapse to nothing.
    pub fn stage_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut hw = self.preprocessing.size;
        let mut shapes = Vec::new();
        hw = output_geometry(hw, 3, 2, Padding::Same)?.0;
        shapes.push((hw, hw, BLOCK0_OUT));
        for b in &self.blocks {
            hw = output_geometry(hw, 3, b.spec.stride, Padding::Same)?.0;
            let c = if b.project.is_some() {
                b.spec.out_channels
            } else {
                b.spec.expanded_channels()
            };
            shapes.push((hw, hw, c));
        }
        if self.head.is_some() {
            shapes.push((hw, hw, HEAD_CHANNELS));
        }
        Ok(shapes)
    }

    /// Runs blocks `1..=through`, handing every tap site to `visit` as soon
    /// as it is produced.
    pub fn forward_visit(
        &self,
        image: &InputImage,
        through: usize,
        mut visit: impl FnMut(Tap, &Tensor),
    ) -> Result<()> {
        self.check_input(image)?;
        if through > self.depth.last_block {
            return Err(arg_err!(
                "block {through} requested but the container stops at block {}",
                self.depth.last_block
            ));
        }
        let mut x = self.stem.run(image.tensor())?;
        relu6_inplace(&mut x);
        let mut x0 = self.block0_dw.run(&x)?;
        relu6_inplace(&mut x0);
        x = self.block0_project.run(&x0)?;

        for blk in &self.blocks[..through] {
            let b = blk.spec.index;
            let mut e = blk.expand.run(&x)?;
            relu6_inplace(&mut e);
            visit(Tap::new(b, TapSite::PreRelu), &e);
            let mut d = blk.depthwise.run(&e)?;
            visit(Tap::new(b, TapSite::Bn), &d);
            relu6_inplace(&mut d);
            visit(Tap::new(b, TapSite::PostRelu), &d);
            if b == through {
                break;
            }
            let project = blk
                .project
                .as_ref()
                .expect("only the last block of a truncated container lacks a projection");
            let p = project.run(&d)?;
            if blk.spec.has_residual {
                add_residual_inplace(&mut x, &p)?;
            } else {
                x = p;
            }
        }
        Ok(())
    }

    /// Returns the requested taps. With no taps the input and stage shapes
    /// are validated and nothing is computed.
    pub fn forward(&self, image: &InputImage, taps: &[Tap]) -> Result<BTreeMap<Tap, Tensor>> {
        self.check_input(image)?;
        for t in taps {
            block(t.block)?;
        }
        self.stage_shapes()?;
        let mut out = BTreeMap::new();
        let Some(through) = taps.iter().map(|t| t.block).max() else {
            return Ok(out);
        };
        self.forward_visit(image, through, |tap, t| {
            if taps.contains(&tap) {
                out.insert(tap, t.clone());
            }
        })?;
        Ok(out)
    }

    /// Runs the whole extractor including the head, if present.
    pub fn forward_full(&self, image: &InputImage) -> Result<Tensor> {
        self.check_input(image)?;
        if self.depth != Depth::FULL {
            return Err(arg_err!("container is truncated; no head output"));
        }
        let mut x = self.stem.run(image.tensor())?;
        relu6_inplace(&mut x);
        let mut x0 = self.block0_dw.run(&x)?;
        relu6_inplace(&mut x0);
        x = self.block0_project.run(&x0)?;
        for blk in &self.blocks {
            let mut e = blk.expand.run(&x)?;
            relu6_inplace(&mut e);
            let mut d = blk.depthwise.run(&e)?;
            relu6_inplace(&mut d);
            let p = blk.project.as_ref().expect("full container").run(&d)?;
            if blk.spec.has_residual {
                add_residual_inplace(&mut x, &p)?;
            } else {
                x = p;
            }
        }
        let mut h = self.head.as_ref().expect("full container").run(&x)?;
        relu6_inplace(&mut h);
        Ok(h)
    }
}
