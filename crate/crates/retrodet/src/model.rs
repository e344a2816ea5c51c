//! Network assembly: shared spatial backbone, per-level change modules,
//! top-down encoder-decoder fusion and the sigmoid prediction head, plus
//! RCNET1 checkpoint serialization.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elem::Elem;
use crate::graph::{GraphError, NodeId, OpGraph, OpKind};
use crate::tensor::{bilinear_resize, read_rten, write_rten, Dims5, Tensor5, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("temporal length error: {0}")]
    Temporal(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint has bad magic")]
    BadMagic,
    #[error("checkpoint format version {0} unsupported (expected {CHECKPOINT_VERSION})")]
    BadVersion(u16),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint tensor {name}: dims do not match config ({detail})")]
    DimMismatch { name: String, detail: String },
    #[error("checkpoint malformed: {0}")]
    Malformed(String),
}

/// Spatial backbone variants. `Stacked` runs `blocks_per_stage` 3x3 convs
/// per stage instead of one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backbone {
    RawInput,
    Simple3Layer,
    Stacked { blocks_per_stage: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeModule {
    Conv3dPair,
    Retro,
    Arpp,
}

/// Declarative network description.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: Backbone,
    /// Channels per backbone stage (ignored for raw input).
    pub backbone_widths: Vec<usize>,
    pub change_module: ChangeModule,
    /// Branch dilations; must be nonempty iff change_module is Arpp.
    pub arpp_dilations: Vec<usize>,
    /// Change-module filters per tapped level.
    pub change_widths: Vec<usize>,
    /// Number of decoder (deconv + concat + conv) modules; equals taps - 1.
    pub decoder_levels: usize,
    pub input_length_hint: usize,
}

impl ModelConfig {
    /// Desk-scale default: 3-stage backbone (16, 32, 64), ARPP {1, 3},
    /// 64x64 inputs of length 4.
    pub fn desk_default() -> Self {
        ModelConfig {
            backbone: Backbone::Simple3Layer,
            backbone_widths: vec![16, 32, 64],
            change_module: ChangeModule::Arpp,
            arpp_dilations: vec![1, 3],
            change_widths: vec![16, 32, 64],
            decoder_levels: 2,
            input_length_hint: 4,
        }
    }

    /// Number of tapped backbone levels (raw input counts as its own tap).
    pub fn taps(&self) -> usize {
        match self.backbone {
            Backbone::RawInput => 1,
            _ => self.backbone_widths.len(),
        }
    }

    /// All spatial dims must be divisible by 2^taps.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.taps()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        let taps = self.taps();
        if self.backbone != Backbone::RawInput && self.backbone_widths.is_empty() {
            problems.push("backbone_widths must be nonempty".to_string());
        }
        if self.backbone == Backbone::Simple3Layer && self.backbone_widths.len() != 3 {
            problems.push(format!(
                "simple-3layer backbone needs exactly 3 widths, got {}",
                self.backbone_widths.len()
            ));
        }
        if let Backbone::Stacked { blocks_per_stage } = self.backbone {
            if blocks_per_stage == 0 {
                problems.push("stacked backbone needs blocks_per_stage >= 1".to_string());
            }
        }
        if self.change_widths.len() != taps {
            problems.push(format!(
                "change_widths has {} entries but the backbone taps {taps} levels",
                self.change_widths.len()
            ));
        }
        if self.decoder_levels != taps - 1 {
            problems.push(format!(
                "decoder_levels must be taps - 1 = {}, got {}",
                taps - 1,
                self.decoder_levels
            ));
        }
        match self.change_module {
            ChangeModule::Arpp => {
                if self.arpp_dilations.is_empty() {
                    problems.push("arpp change module needs nonempty arpp_dilations".to_string());
                } else {
                    let mut sorted = self.arpp_dilations.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != self.arpp_dilations.len() || sorted[0] == 0 {
                        problems.push("arpp_dilations must be distinct positive integers".to_string());
                    }
                    for &n in &self.change_widths {
                        if n % self.arpp_dilations.len() != 0 {
                            problems.push(format!(
                                "change width {n} not divisible by {} arpp branches",
                                self.arpp_dilations.len()
                            ));
                        }
                    }
                }
            }
            _ => {
                if !self.arpp_dilations.is_empty() {
                    problems.push("arpp_dilations must be empty unless change_module is arpp".to_string());
                }
            }
        }
        if self.input_length_hint < 2 {
            problems.push("input_length_hint must be >= 2".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(problems))
        }
    }

    /// Serialize as deterministic key=value lines (checkpoint config echo).
    pub fn to_kv(&self) -> String {
        let backbone = match &self.backbone {
            Backbone::RawInput => "raw-input".to_string(),
            Backbone::Simple3Layer => "simple-3layer".to_string(),
            Backbone::Stacked { blocks_per_stage } => format!("stacked-{blocks_per_stage}-blocks"),
        };
        let change = match self.change_module {
            ChangeModule::Conv3dPair => "conv3d-pair",
            ChangeModule::Retro => "retro",
            ChangeModule::Arpp => "arpp",
        };
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "backbone={backbone}\nbackbone_widths={}\nchange_module={change}\narpp_dilations={}\nchange_widths={}\ndecoder_levels={}\ninput_length_hint={}\n",
            join(&self.backbone_widths),
            join(&self.arpp_dilations),
            join(&self.change_widths),
            self.decoder_levels,
            self.input_length_hint,
        )
    }

    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Malformed(format!("config line without '=': {line}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String, ModelError> {
            map.get(k).ok_or_else(|| ModelError::Malformed(format!("config missing key {k}")))
        };
        let parse_list = |s: &str| -> Result<Vec<usize>, ModelError> {
            if s.is_empty() {
                return Ok(vec![]);
            }
            s.split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|e| ModelError::Malformed(format!("bad integer {x}: {e}"))))
                .collect()
        };
        let backbone = match get("backbone")?.as_str() {
            "raw-input" => Backbone::RawInput,
            "simple-3layer" => Backbone::Simple3Layer,
            other => {
                let inner = other
                    .strip_prefix("stacked-")
                    .and_then(|r| r.strip_suffix("-blocks"))
                    .ok_or_else(|| ModelError::Malformed(format!("unknown backbone {other}")))?;
                Backbone::Stacked {
                    blocks_per_stage: inner
                        .parse()
                        .map_err(|e| ModelError::Malformed(format!("bad backbone blocks: {e}")))?,
                }
            }
        };
        let change_module = match get("change_module")?.as_str() {
            "conv3d-pair" => ChangeModule::Conv3dPair,
            "retro" => ChangeModule::Retro,
            "arpp" => ChangeModule::Arpp,
            other => return Err(ModelError::Malformed(format!("unknown change module {other}"))),
        };
        let cfg = ModelConfig {
            backbone,
            backbone_widths: parse_list(get("backbone_widths")?)?,
            change_module,
            arpp_dilations: parse_list(get("arpp_dilations")?)?,
            change_widths: parse_list(get("change_widths")?)?,
            decoder_levels: get("decoder_levels")?
                .parse()
                .map_err(|e| ModelError::Malformed(format!("bad decoder_levels: {e}")))?,
            input_length_hint: get("input_length_hint")?
                .parse()
                .map_err(|e| ModelError::Malformed(format!("bad input_length_hint: {e}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Conservative receptive-field radius at input resolution, in pixels.
    pub fn receptive_radius(&self) -> usize {
        let taps = self.taps();
        let max_dil = match self.change_module {
            ChangeModule::Arpp => *self.arpp_dilations.iter().max().unwrap_or(&1),
            _ => 1,
        };
        let blocks = match self.backbone {
            Backbone::RawInput => 0,
            Backbone::Simple3Layer => 1,
            Backbone::Stacked { blocks_per_stage } => blocks_per_stage,
        };
        let mut radius = 0usize;
        for level in 0..taps {
            let scale = 1usize << level;
            // pool reaching this level, backbone convs, change module
            // (retro + two convs, or two 3x3x3 convs), decoder conv/deconv.
            if level > 0 {
                radius += scale;
            }
            radius += blocks * scale;
            radius += (max_dil + 2) * scale;
            radius += 2 * scale;
        }
        radius + 2
    }
}

/// Built network: an operator graph over f32 plus its provenance.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub graph: OpGraph<f32>,
}

struct GraphBuilder<'a, T: Elem> {
    g: OpGraph<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<'a, T: Elem> GraphBuilder<'a, T> {
    /// He-style uniform init in +-sqrt(6 / fan_in), which preserves
    /// activation scale through the ReLU stack; biases start at zero.
    fn conv_params(&mut self, name: &str, d: usize, c: usize, lk: usize, k: usize) -> (usize, usize) {
        let fan_in = c * lk * k * k;
        let bound = (6.0 / fan_in as f64).sqrt();
        let dims = Dims5::new(d, c, lk, k, k);
        let data: Vec<T> = (0..dims.count().unwrap())
            .map(|_| T::from_f64(self.rng.gen_range(-bound..bound)))
            .collect();
        let w = self.g.add_param(format!("{name}.weight"), Tensor5::from_vec(dims, data).unwrap());
        let b = self
            .g
            .add_param(format!("{name}.bias"), Tensor5::zeros(Dims5::new(d, 1, 1, 1, 1)).unwrap());
        (w, b)
    }

    fn conv_relu(&mut self, name: &str, src: NodeId, c_in: usize, c_out: usize) -> NodeId {
        let (w, b) = self.conv_params(name, c_out, c_in, 1, 3);
        let conv = self
            .g
            .add_node(name, OpKind::Conv3d { w, b, stride: (1, 1), pad: (1, 1), pad_l: 0 }, vec![src])
            .expect("builder order");
        self.g.add_node(format!("{name}.relu"), OpKind::Relu, vec![conv]).expect("builder order")
    }

    /// Retro module branch: atrous retro conv -> ReLU -> two 3x3 convs with
    /// ReLU -> full-length temporal mean.
    fn retro_branch(&mut self, name: &str, src: NodeId, c_in: usize, filters: usize, dilation: usize) -> NodeId {
        let (rw, rb) = {
            let fan_in = c_in * 2 * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            let dims = Dims5::new(filters, c_in, 2, 3, 3);
            let data: Vec<T> = (0..dims.count().unwrap())
                .map(|_| T::from_f64(self.rng.gen_range(-bound..bound)))
                .collect();
            let w = self.g.add_param(format!("{name}.retro.weight"), Tensor5::from_vec(dims, data).unwrap());
            let b = self
                .g
                .add_param(format!("{name}.retro.bias"), Tensor5::zeros(Dims5::new(filters, 1, 1, 1, 1)).unwrap());
            (w, b)
        };
        let rc = self
            .g
            .add_node(format!("{name}.retro"), OpKind::RetroConv { w: rw, b: rb, dilation }, vec![src])
            .expect("builder order");
        let a = self.g.add_node(format!("{name}.retro.relu"), OpKind::Relu, vec![rc]).expect("builder order");
        let c1 = self.conv_relu(&format!("{name}.conv1"), a, filters, filters);
        let c2 = self.conv_relu(&format!("{name}.conv2"), c1, filters, filters);
        self.g
            .add_node(format!("{name}.pool"), OpKind::TemporalAvgPool, vec![c2])
            .expect("builder order")
    }

    /// Two cascaded 3x3x3 convolutions (temporal zero padding 1) with ReLU,
    /// then temporal mean. The 3D-convolution ablation arm.
    fn conv3d_pair(&mut self, name: &str, src: NodeId, c_in: usize, filters: usize) -> NodeId {
        let (w1, b1) = self.conv_params(&format!("{name}.conv3d1"), filters, c_in, 3, 3);
        let c1 = self
            .g
            .add_node(
                format!("{name}.conv3d1"),
                OpKind::Conv3d { w: w1, b: b1, stride: (1, 1), pad: (1, 1), pad_l: 1 },
                vec![src],
            )
            .expect("builder order");
        let a1 = self.g.add_node(format!("{name}.relu1"), OpKind::Relu, vec![c1]).expect("builder order");
        let (w2, b2) = self.conv_params(&format!("{name}.conv3d2"), filters, filters, 3, 3);
        let c2 = self
            .g
            .add_node(
                format!("{name}.conv3d2"),
                OpKind::Conv3d { w: w2, b: b2, stride: (1, 1), pad: (1, 1), pad_l: 1 },
                vec![a1],
            )
            .expect("builder order");
        let a2 = self.g.add_node(format!("{name}.relu2"), OpKind::Relu, vec![c2]).expect("builder order");
        self.g
            .add_node(format!("{name}.pool"), OpKind::TemporalAvgPool, vec![a2])
            .expect("builder order")
    }

    fn change_module(&mut self, cfg: &ModelConfig, level: usize, src: NodeId, c_in: usize) -> NodeId {
        let filters = cfg.change_widths[level];
        let name = format!("change{level}");
        match cfg.change_module {
            ChangeModule::Conv3dPair => self.conv3d_pair(&name, src, c_in, filters),
            ChangeModule::Retro => self.retro_branch(&name, src, c_in, filters, 1),
            ChangeModule::Arpp => {
                let per = filters / cfg.arpp_dilations.len();
                let mut acc: Option<NodeId> = None;
                for (bi, &dil) in cfg.arpp_dilations.iter().enumerate() {
                    let branch = self.retro_branch(&format!("{name}.branch{bi}"), src, c_in, per, dil);
                    acc = Some(match acc {
                        None => branch,
                        Some(prev) => self
                            .g
                            .add_node(format!("{name}.concat{bi}"), OpKind::ConcatChannels, vec![prev, branch])
                            .expect("builder order"),
                    });
                }
                acc.expect("at least one branch")
            }
        }
    }
}

/// Build the full graph for a config at the given element width.
pub fn build_graph<T: Elem>(cfg: &ModelConfig, seed: u64) -> Result<OpGraph<T>, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder { g: OpGraph::new(), rng: &mut rng };
    let input = b.g.input();

    // Backbone: per-stage shared spatial convs with maxpool between stages.
    let mut taps: Vec<(NodeId, usize)> = Vec::new();
    match cfg.backbone {
        Backbone::RawInput => taps.push((input, 3)),
        _ => {
            let blocks = match cfg.backbone {
                Backbone::Stacked { blocks_per_stage } => blocks_per_stage,
                _ => 1,
            };
            let mut cur = input;
            let mut c_in = 3usize;
            for (s, &width) in cfg.backbone_widths.iter().enumerate() {
                if s > 0 {
                    cur = b
                        .g
                        .add_node(format!("stage{s}.pool"), OpKind::MaxPool2, vec![cur])
                        .expect("builder order");
                }
                for blk in 0..blocks {
                    cur = b.conv_relu(&format!("stage{s}.conv{blk}"), cur, c_in, width);
                    c_in = width;
                }
                taps.push((cur, width));
            }
        }
    }

    // Per-level change modules.
    let changes: Vec<NodeId> = taps
        .iter()
        .enumerate()
        .map(|(level, &(node, c_in))| b.change_module(cfg, level, node, c_in))
        .collect();

    // Top-down decoders: deconv2x2 -> concat -> 3x3 conv + ReLU.
    let mut x = *changes.last().expect("at least one tap");
    let mut x_c = *cfg.change_widths.last().unwrap();
    for level in (0..cfg.taps() - 1).rev() {
        let target_c = cfg.change_widths[level];
        let name = format!("decoder{level}");
        let (dw, db) = {
            let fan_in = x_c * 4;
            let bound = (6.0 / fan_in as f64).sqrt();
            let dims = Dims5::new(target_c, x_c, 1, 2, 2);
            let data: Vec<T> = (0..dims.count().unwrap())
                .map(|_| T::from_f64(b.rng.gen_range(-bound..bound)))
                .collect();
            let w = b.g.add_param(format!("{name}.deconv.weight"), Tensor5::from_vec(dims, data).unwrap());
            let bias = b
                .g
                .add_param(format!("{name}.deconv.bias"), Tensor5::zeros(Dims5::new(target_c, 1, 1, 1, 1)).unwrap());
            (w, bias)
        };
        let up = b
            .g
            .add_node(format!("{name}.deconv"), OpKind::Deconv2x2 { w: dw, b: db }, vec![x])
            .expect("builder order");
        let cat = b
            .g
            .add_node(format!("{name}.concat"), OpKind::ConcatChannels, vec![up, changes[level]])
            .expect("builder order");
        x = b.conv_relu(&format!("{name}.conv"), cat, target_c + target_c, target_c);
        x_c = target_c;
    }

    // Head: 1x1 conv to one channel, then sigmoid.
    let (hw, hb) = b.conv_params("head", 1, x_c, 1, 1);
    let head = b
        .g
        .add_node("head", OpKind::Conv3d { w: hw, b: hb, stride: (1, 1), pad: (0, 0), pad_l: 0 }, vec![x])
        .expect("builder order");
    b.g.add_node("head.sigmoid", OpKind::Sigmoid, vec![head]).expect("builder order");
    Ok(b.g)
}

/// Build a model with deterministic-given-seed parameter initialization.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model, ModelError> {
    Ok(Model { config: cfg.clone(), seed, graph: build_graph(cfg, seed)? })
}

impl Model {
    fn check_clip(&self, clip: &Tensor5<f32>) -> Result<(), ModelError> {
        let d = clip.dims();
        if d.l < 2 {
            return Err(ModelError::Temporal(format!("clips need L >= 2, got {}", d.l)));
        }
        if d.c != 3 {
            return Err(ModelError::Shape(format!("clips must have 3 channels, got {}", d.c)));
        }
        let div = self.config.spatial_divisor();
        if d.h % div != 0 || d.w % div != 0 {
            return Err(ModelError::Shape(format!(
                "spatial dims {}x{} must be divisible by {div}",
                d.h, d.w
            )));
        }
        Ok(())
    }

    /// Per-pixel change probability map of shape (N, 1, 1, H, W).
    pub fn infer(&self, clip: &Tensor5<f32>) -> Result<Tensor5<f32>, ModelError> {
        self.check_clip(clip)?;
        Ok(self.graph.forward(clip)?.output().clone())
    }

    /// Multi-scale inference: predict at each scale, resize probabilities
    /// back to native resolution, average elementwise.
    pub fn infer_multiscale(&self, clip: &Tensor5<f32>, scales: &[f64]) -> Result<Tensor5<f32>, ModelError> {
        if scales.is_empty() {
            return Err(ModelError::Config(vec!["scale list must be nonempty".into()]));
        }
        let d = clip.dims();
        let mut acc: Option<Tensor5<f32>> = None;
        for &s in scales {
            if !(s > 0.0) {
                return Err(ModelError::Config(vec![format!("scale {s} must be positive")]));
            }
            let (sh, sw) = (
                (d.h as f64 * s).round() as usize,
                (d.w as f64 * s).round() as usize,
            );
            let scaled = bilinear_resize(clip, sh.max(1), sw.max(1))?;
            let pred = self.infer(&scaled)?;
            let native = bilinear_resize(&pred, d.h, d.w)?;
            acc = Some(match acc {
                None => native,
                Some(prev) => prev.add(&native)?,
            });
        }
        let inv = 1.0f32 / scales.len() as f32;
        Ok(acc.unwrap().scale(inv))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"RCNET1";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Serialize: magic, version u16, seed u64, length-prefixed config text,
/// count-prefixed (name, RTEN1 tensor) records. All integers little-endian.
pub fn checkpoint_bytes(m: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&m.seed.to_le_bytes());
    let cfg = m.config.to_kv();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(m.graph.params().len() as u32).to_le_bytes());
    for p in m.graph.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&write_rten(&p.value));
    }
    out
}

pub fn save_checkpoint(m: &Model, path: &Path) -> Result<(), ModelError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(m))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Truncated(format!("while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(6, "magic")? != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::BadVersion(version));
    }
    let seed = u64::from_le_bytes(cur.take(8, "seed")?.try_into().unwrap());
    let cfg_len = cur.u32("config length")? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len, "config")?)
        .map_err(|e| ModelError::Malformed(format!("config not UTF-8: {e}")))?;
    let config = ModelConfig::from_kv(cfg_text)?;
    let mut model = build_model(&config, seed)?;
    let count = cur.u32("tensor count")? as usize;
    if count != model.graph.params().len() {
        return Err(ModelError::Malformed(format!(
            "checkpoint has {count} tensors, config implies {}",
            model.graph.params().len()
        )));
    }
    for idx in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|e| ModelError::Malformed(format!("tensor name not UTF-8: {e}")))?
            .to_string();
        // RTEN1 header is 46 bytes and carries the dims; read it, compute the
        // payload size, then hand the whole record to the tensor parser.
        let header_start = cur.pos;
        let header = cur.take(46, "tensor header")?;
        if &header[..5] != crate::tensor::RTEN_MAGIC {
            return Err(ModelError::Malformed(format!("tensor {name}: bad RTEN1 magic")));
        }
        let mut count_elems = 1usize;
        for k in 0..5 {
            let off = 6 + k * 8;
            count_elems = count_elems
                .checked_mul(u64::from_le_bytes(header[off..off + 8].try_into().unwrap()) as usize)
                .ok_or_else(|| ModelError::Malformed(format!("tensor {name}: dim overflow")))?;
        }
        cur.take(count_elems * 4, "tensor payload")?;
        let value: Tensor5<f32> = read_rten(&bytes[header_start..cur.pos])
            .map_err(|e| ModelError::Malformed(format!("tensor {name}: {e}")))?;
        let param = &mut model.graph.params_mut()[idx];
        if param.name != name {
            return Err(ModelError::Malformed(format!(
                "tensor {idx} named {name}, config implies {}",
                param.name
            )));
        }
        if param.value.dims() != value.dims() {
            return Err(ModelError::DimMismatch {
                name,
                detail: format!("{:?} vs {:?}", value.dims(), param.value.dims()),
            });
        }
        param.value = value;
    }
    if cur.pos != bytes.len() {
        return Err(ModelError::Malformed("trailing bytes after last tensor".into()));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(change: ChangeModule) -> ModelConfig {
        ModelConfig {
            backbone: Backbone::Stacked { blocks_per_stage: 1 },
            backbone_widths: vec![4, 8],
            change_module: change,
            arpp_dilations: if change == ChangeModule::Arpp { vec![1, 3] } else { vec![] },
            change_widths: vec![4, 8],
            decoder_levels: 1,
            input_length_hint: 4,
        }
    }

    fn random_clip(n: usize, l: usize, h: usize, w: usize, seed: u64) -> Tensor5<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims5::new(n, 3, l, h, w);
        let data = (0..dims.count().unwrap()).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor5::from_vec(dims, data).unwrap()
    }

    #[test]
    fn validation_collects_all_violations() {
        let cfg = ModelConfig {
            backbone: Backbone::Simple3Layer,
            backbone_widths: vec![4, 8],
            change_module: ChangeModule::Arpp,
            arpp_dilations: vec![2, 2],
            change_widths: vec![4],
            decoder_levels: 5,
            input_length_hint: 1,
        };
        match cfg.validate() {
            Err(ModelError::Config(v)) => assert!(v.len() >= 4, "got {v:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn raw_input_has_no_decoder_or_backbone_nodes() {
        let cfg = ModelConfig {
            backbone: Backbone::RawInput,
            backbone_widths: vec![],
            change_module: ChangeModule::Retro,
            arpp_dilations: vec![],
            change_widths: vec![4],
            decoder_levels: 0,
            input_length_hint: 4,
        };
        let m = build_model(&cfg, 7).unwrap();
        for node in m.graph.nodes() {
            assert!(
                !node.name.starts_with("decoder") && !node.name.starts_with("stage"),
                "unexpected node {}",
                node.name
            );
        }
        let clip = random_clip(1, 4, 8, 8, 1);
        let out = m.infer(&clip).unwrap();
        assert_eq!(out.dims(), Dims5::new(1, 1, 1, 8, 8));
    }

    #[test]
    fn build_is_deterministic_in_seed() {
        let cfg = tiny_cfg(ChangeModule::Arpp);
        let a = build_model(&cfg, 42).unwrap();
        let b = build_model(&cfg, 42).unwrap();
        let c = build_model(&cfg, 43).unwrap();
        for (pa, pb) in a.graph.params().iter().zip(b.graph.params()) {
            assert_eq!(pa.value.data(), pb.value.data(), "param {}", pa.name);
        }
        let differs = a
            .graph
            .params()
            .iter()
            .zip(c.graph.params())
            .any(|(pa, pc)| pa.value.data() != pc.value.data());
        assert!(differs, "different seeds must give different weights");
    }

    #[test]
    fn output_shape_and_range() {
        for change in [ChangeModule::Conv3dPair, ChangeModule::Retro, ChangeModule::Arpp] {
            let m = build_model(&tiny_cfg(change), 5).unwrap();
            let clip = random_clip(2, 4, 16, 16, 9);
            let out = m.infer(&clip).unwrap();
            assert_eq!(out.dims(), Dims5::new(2, 1, 1, 16, 16));
            assert!(out.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn static_clip_prediction_invariant_to_length() {
        // Every historical frame equals the current frame, so the retro
        // responses coincide frame-for-frame and the temporal mean cannot
        // depend on L.
        let m = build_model(&tiny_cfg(ChangeModule::Arpp), 11).unwrap();
        let frame = random_clip(1, 1, 16, 16, 3);
        let make = |l: usize| {
            // layout is (N, C, L, H, W): replicate each channel plane l times
            let dims = Dims5::new(1, 3, l, 16, 16);
            let hw = 16 * 16;
            let mut data = Vec::with_capacity(dims.count().unwrap());
            for c in 0..3 {
                for _ in 0..l {
                    data.extend_from_slice(&frame.data()[c * hw..(c + 1) * hw]);
                }
            }
            Tensor5::from_vec(dims, data).unwrap()
        };
        let base = m.infer(&make(2)).unwrap();
        for l in [4usize, 6, 8] {
            let out = m.infer(&make(l)).unwrap();
            for (a, b) in base.data().iter().zip(out.data()) {
                assert!((a - b).abs() < 1e-6, "L={l}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn batch_entries_are_independent() {
        let m = build_model(&tiny_cfg(ChangeModule::Retro), 21).unwrap();
        let a = random_clip(1, 3, 16, 16, 100);
        let b = random_clip(1, 3, 16, 16, 200);
        let dims = Dims5::new(2, 3, 3, 16, 16);
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        let both = m.infer(&Tensor5::from_vec(dims, data).unwrap()).unwrap();
        let oa = m.infer(&a).unwrap();
        let ob = m.infer(&b).unwrap();
        let hw = 16 * 16;
        assert_eq!(&both.data()[..hw], oa.data());
        assert_eq!(&both.data()[hw..], ob.data());
    }

    #[test]
    fn infer_rejects_bad_clips() {
        let m = build_model(&tiny_cfg(ChangeModule::Retro), 1).unwrap();
        let short = random_clip(1, 1, 16, 16, 0);
        assert!(matches!(m.infer(&short), Err(ModelError::Temporal(_))));
        let odd = random_clip(1, 3, 18, 16, 0);
        assert!(matches!(m.infer(&odd), Err(ModelError::Shape(_))));
        let gray = Tensor5::<f32>::zeros(Dims5::new(1, 1, 3, 16, 16)).unwrap();
        assert!(matches!(m.infer(&gray), Err(ModelError::Shape(_))));
    }

    #[test]
    fn multiscale_with_unit_scale_matches_single_scale() {
        let m = build_model(&tiny_cfg(ChangeModule::Arpp), 17).unwrap();
        let clip = random_clip(1, 4, 16, 16, 55);
        let single = m.infer(&clip).unwrap();
        let ms = m.infer_multiscale(&clip, &[1.0]).unwrap();
        assert_eq!(single.data(), ms.data(), "scale [1.0] must be bitwise identical");
        let ms2 = m.infer_multiscale(&clip, &[1.0, 0.5]).unwrap();
        assert_eq!(ms2.dims(), single.dims());
        assert!(ms2.data().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn config_kv_round_trips() {
        for cfg in [
            ModelConfig::desk_default(),
            tiny_cfg(ChangeModule::Conv3dPair),
            tiny_cfg(ChangeModule::Retro),
        ] {
            let parsed = ModelConfig::from_kv(&cfg.to_kv()).unwrap();
            assert_eq!(parsed, cfg);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let m = build_model(&tiny_cfg(ChangeModule::Arpp), 99).unwrap();
        let bytes = checkpoint_bytes(&m);
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(checkpoint_bytes(&loaded), bytes);
        assert_eq!(loaded.seed, m.seed);
        assert_eq!(loaded.config, m.config);
        // loaded model predicts identically
        let clip = random_clip(1, 4, 16, 16, 2);
        assert_eq!(m.infer(&clip).unwrap().data(), loaded.infer(&clip).unwrap().data());
    }

    #[test]
    fn checkpoint_load_errors_are_distinct() {
        let m = build_model(&tiny_cfg(ChangeModule::Retro), 3).unwrap();
        let good = checkpoint_bytes(&m);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&bad_magic), Err(ModelError::BadMagic)));

        let mut bad_version = good.clone();
        bad_version[6] = 9;
        assert!(matches!(checkpoint_from_bytes(&bad_version), Err(ModelError::BadVersion(_))));

        let truncated = &good[..good.len() - 5];
        assert!(matches!(checkpoint_from_bytes(truncated), Err(ModelError::Truncated(_))));

        // grow one tensor dim in place: flip the D dim of the first record
        let mut bad_dims = good.clone();
        let cfg_len = u32::from_le_bytes(good[16..20].try_into().unwrap()) as usize;
        let mut pos = 20 + cfg_len + 4; // past config + tensor count
        let name_len = u32::from_le_bytes(bad_dims[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4 + name_len + 6; // name, RTEN magic + dtype
        bad_dims[pos] = bad_dims[pos].wrapping_add(1);
        assert!(matches!(
            checkpoint_from_bytes(&bad_dims),
            Err(ModelError::DimMismatch { .. }) | Err(ModelError::Truncated(_))
        ));
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rcnet");
        let m = build_model(&tiny_cfg(ChangeModule::Conv3dPair), 8).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(checkpoint_bytes(&loaded), checkpoint_bytes(&m));
    }

    #[test]
    fn receptive_radius_is_positive_and_grows_with_depth() {
        let shallow = ModelConfig {
            backbone: Backbone::RawInput,
            backbone_widths: vec![],
            change_module: ChangeModule::Retro,
            arpp_dilations: vec![],
            change_widths: vec![4],
            decoder_levels: 0,
            input_length_hint: 4,
        };
        let deep = ModelConfig::desk_default();
        assert!(shallow.receptive_radius() > 0);
        assert!(deep.receptive_radius() > shallow.receptive_radius());
    }
}
