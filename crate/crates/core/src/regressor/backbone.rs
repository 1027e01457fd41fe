//! Depthwise-separable bottleneck backbone with SGE inside every unit and
//! Coordinate Attention between consecutive layers.
//!
//! ```text
//! image 3×S×S → stem conv3×3/2 + swish
//!   → layer 1 (units: expand 1×1 → swish → dw 3×3/s → swish → project 1×1
//!              [+ residual] → SGE) → CA
//!   → layer 2 … → CA → … → last layer
//!   → global average pool → affine head (62)
//! ```
//!
//! All weights live in one flat `Vec<f64>`; [`Layout`] names the slices.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layers::{
    conv3_backward, conv3_forward, conv3_out, depthwise_backward, depthwise_forward,
    pointwise_backward, pointwise_forward,
};
use crate::attention::{
    ca_backward, ca_forward, sge_backward, sge_forward, swish, swish_grad, CAParams, FeatureMap,
    SGEParams,
};
use crate::config::{kv, parse_value, unknown_key, KeyValueConfig};
use crate::morphable_model::PARAM_DIM;
use crate::{Error, Result};

pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub channels: usize,
    pub stride: usize,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    pub layers: Vec<LayerSpec>,
    /// Channel multiplier of the expand convolution.
    pub expansion: usize,
    pub sge_groups: usize,
    pub ca_reduction: usize,
    /// Lower bound on the Coordinate Attention strip width.
    pub ca_min_mid: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    /// Desk-scale network: 64×64 crops, four layers.
    fn default() -> Self {
        BackboneConfig {
            input_size: 64,
            stem_channels: 8,
            layers: parse_layers("8:1:1,16:2:1,32:2:1,32:2:1").unwrap(),
            expansion: 2,
            sge_groups: 4,
            ca_reduction: 8,
            ca_min_mid: 8,
            seed: 7,
        }
    }
}

impl BackboneConfig {
    /// 120×120 crops and seven layers.
    pub fn full_size() -> Self {
        BackboneConfig {
            input_size: 120,
            stem_channels: 16,
            layers: parse_layers("16:1:1,24:2:2,32:2:3,64:2:4,96:1:3,160:2:3,320:1:1").unwrap(),
            expansion: 6,
            sge_groups: 8,
            ca_reduction: 8,
            ca_min_mid: 8,
            seed: 7,
        }
    }
}

impl KeyValueConfig for BackboneConfig {
    fn entries(&self) -> Vec<(String, String)> {
        vec![
            kv("input_size", self.input_size),
            kv("stem_channels", self.stem_channels),
            kv("layers", render_layers(&self.layers)),
            kv("expansion", self.expansion),
            kv("sge_groups", self.sge_groups),
            kv("ca_reduction", self.ca_reduction),
            kv("ca_min_mid", self.ca_min_mid),
            kv("seed", self.seed),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input_size" => self.input_size = parse_value(key, value)?,
            "stem_channels" => self.stem_channels = parse_value(key, value)?,
            "layers" => self.layers = parse_layers(value)?,
            "expansion" => self.expansion = parse_value(key, value)?,
            "sge_groups" => self.sge_groups = parse_value(key, value)?,
            "ca_reduction" => self.ca_reduction = parse_value(key, value)?,
            "ca_min_mid" => self.ca_min_mid = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size < 2 || self.stem_channels == 0 || self.expansion == 0 {
            return bad("input_size >= 2, stem_channels and expansion >= 1 required".into());
        }
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        if self.sge_groups == 0 || self.ca_reduction == 0 {
            return bad("sge_groups and ca_reduction must be positive".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.channels == 0 || l.units == 0 || !(l.stride == 1 || l.stride == 2) {
                return bad(format!("layer {i}: channels/units >= 1 and stride 1 or 2 required"));
            }
            if l.channels % self.sge_groups != 0 {
                return bad(format!(
                    "layer {i}: {} channels not divisible by sge_groups {}",
                    l.channels, self.sge_groups
                ));
            }
            if l.channels % self.ca_reduction != 0 {
                return bad(format!(
                    "layer {i}: {} channels not divisible by ca_reduction {}",
                    l.channels, self.ca_reduction
                ));
            }
        }
        Ok(())
    }
}

/// `channels:stride:units` triples separated by commas.
pub fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    text.split(',')
        .map(|t| {
            let f: Vec<usize> = t
                .trim()
                .split(':')
                .map(|n| n.parse().map_err(|_| Error::Config(format!("layer spec {t:?}"))))
                .collect::<Result<_>>()?;
            match f.as_slice() {
                &[channels, stride, units] => Ok(LayerSpec {
                    channels,
                    stride,
                    units,
                }),
                _ => Err(Error::Config(format!("layer spec {t:?} is not channels:stride:units"))),
            }
        })
        .collect()
}

pub fn render_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| format!("{}:{}:{}", l.channels, l.stride, l.units))
        .collect::<Vec<_>>()
        .join(",")
}

/// A named slice of the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    pub blobs: Vec<Blob>,
    pub total: usize,
}

impl Layout {
    fn alloc(&mut self, name: String, len: usize) -> Range<usize> {
        let range = self.total..self.total + len;
        self.blobs.push(Blob {
            name,
            range: range.clone(),
        });
        self.total += len;
        range
    }
}

/// Shape of one bottleneck unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BottleneckUnit {
    pub in_channels: usize,
    pub expanded: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub sge_groups: usize,
}

/// Borrowed weights of one bottleneck unit.
#[derive(Debug, Clone, Copy)]
pub struct UnitWeights<'a> {
    pub expand_w: &'a [f64],
    pub expand_b: &'a [f64],
    pub dw_w: &'a [f64],
    pub dw_b: &'a [f64],
    pub project_w: &'a [f64],
    pub project_b: &'a [f64],
    pub sge_gamma: &'a [f64],
    pub sge_beta: &'a [f64],
}

#[derive(Debug, Clone)]
struct UnitRanges {
    expand_w: Range<usize>,
    expand_b: Range<usize>,
    dw_w: Range<usize>,
    dw_b: Range<usize>,
    project_w: Range<usize>,
    project_b: Range<usize>,
    sge_gamma: Range<usize>,
    sge_beta: Range<usize>,
}

impl UnitRanges {
    fn view<'a>(&self, w: &'a [f64]) -> UnitWeights<'a> {
        UnitWeights {
            expand_w: &w[self.expand_w.clone()],
            expand_b: &w[self.expand_b.clone()],
            dw_w: &w[self.dw_w.clone()],
            dw_b: &w[self.dw_b.clone()],
            project_w: &w[self.project_w.clone()],
            project_b: &w[self.project_b.clone()],
            sge_gamma: &w[self.sge_gamma.clone()],
            sge_beta: &w[self.sge_beta.clone()],
        }
    }
}

/// Intermediate activations of one unit kept for the backward pass.
#[derive(Debug, Clone)]
pub struct UnitTape {
    x: FeatureMap,
    expand_pre: FeatureMap,
    dw_pre: FeatureMap,
    sum: FeatureMap,
}

impl BottleneckUnit {
    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    fn check(&self, x: &FeatureMap, w: &UnitWeights) -> Result<()> {
        let (ci, ce, co) = (self.in_channels, self.expanded, self.out_channels);
        if x.channels() != ci {
            return Err(Error::Shape(format!(
                "bottleneck expects {ci} input channels, got {}",
                x.channels()
            )));
        }
        let ok = w.expand_w.len() == ce * ci
            && w.expand_b.len() == ce
            && w.dw_w.len() == ce * 9
            && w.dw_b.len() == ce
            && w.project_w.len() == co * ce
            && w.project_b.len() == co
            && w.sge_gamma.len() == self.sge_groups
            && w.sge_beta.len() == self.sge_groups;
        if !ok {
            return Err(Error::Shape("bottleneck weight sizes do not match the unit shape".into()));
        }
        Ok(())
    }

    fn sge_params(&self, w: &UnitWeights) -> SGEParams {
        let mut p = SGEParams::new(self.sge_groups);
        p.gamma.copy_from_slice(w.sge_gamma);
        p.beta.copy_from_slice(w.sge_beta);
        p
    }

    pub fn forward(&self, x: &FeatureMap, w: &UnitWeights) -> Result<FeatureMap> {
        Ok(self.forward_tape(x, w)?.0)
    }

    pub fn forward_tape(&self, x: &FeatureMap, w: &UnitWeights) -> Result<(FeatureMap, UnitTape)> {
        self.check(x, w)?;
        let expand_pre = pointwise_forward(x, w.expand_w, w.expand_b);
        let dw_pre = depthwise_forward(&expand_pre.map(swish), w.dw_w, w.dw_b, self.stride);
        let mut sum = pointwise_forward(&dw_pre.map(swish), w.project_w, w.project_b);
        if self.has_residual() {
            for (s, v) in sum.data_mut().iter_mut().zip(x.data()) {
                *s += v;
            }
        }
        let out = sge_forward(&sum, &self.sge_params(w))?;
        Ok((
            out,
            UnitTape {
                x: x.clone(),
                expand_pre,
                dw_pre,
                sum,
            },
        ))
    }

    /// Returns the input gradient; weight gradients are accumulated into `g`.
    pub fn backward(
        &self,
        tape: &UnitTape,
        w: &UnitWeights,
        upstream: &FeatureMap,
        g: &mut UnitGrads<'_>,
    ) -> Result<FeatureMap> {
        let (d_sum, sge_g) = sge_backward(&tape.sum, &self.sge_params(w), upstream)?;
        for (a, b) in g.sge_gamma.iter_mut().zip(&sge_g.gamma) {
            *a += b;
        }
        for (a, b) in g.sge_beta.iter_mut().zip(&sge_g.beta) {
            *a += b;
        }
        let dw_act = tape.dw_pre.map(swish);
        let mut d_dw = pointwise_backward(&dw_act, w.project_w, &d_sum, g.project_w, g.project_b);
        for (d, &pre) in d_dw.data_mut().iter_mut().zip(tape.dw_pre.data()) {
            *d *= swish_grad(pre);
        }
        let expand_act = tape.expand_pre.map(swish);
        let mut d_exp =
            depthwise_backward(&expand_act, w.dw_w, self.stride, &d_dw, g.dw_w, g.dw_b);
        for (d, &pre) in d_exp.data_mut().iter_mut().zip(tape.expand_pre.data()) {
            *d *= swish_grad(pre);
        }
        let mut dx = pointwise_backward(&tape.x, w.expand_w, &d_exp, g.expand_w, g.expand_b);
        if self.has_residual() {
            for (d, s) in dx.data_mut().iter_mut().zip(d_sum.data()) {
                *d += s;
            }
        }
        Ok(dx)
    }
}

/// Mutable gradient slices matching [`UnitWeights`].
pub struct UnitGrads<'a> {
    pub expand_w: &'a mut [f64],
    pub expand_b: &'a mut [f64],
    pub dw_w: &'a mut [f64],
    pub dw_b: &'a mut [f64],
    pub project_w: &'a mut [f64],
    pub project_b: &'a mut [f64],
    pub sge_gamma: &'a mut [f64],
    pub sge_beta: &'a mut [f64],
}

/// Free-function form of [`BottleneckUnit::forward`].
pub fn bottleneck_unit_forward(
    x: &FeatureMap,
    unit: &BottleneckUnit,
    weights: &UnitWeights,
) -> Result<FeatureMap> {
    unit.forward(x, weights)
}

#[derive(Debug, Clone)]
struct CaRanges {
    channels: usize,
    mid: usize,
    w1: Range<usize>,
    b1: Range<usize>,
    wh: Range<usize>,
    bh: Range<usize>,
    ww: Range<usize>,
    bw: Range<usize>,
}

#[derive(Debug, Clone)]
enum Stage {
    Stem {
        w: Range<usize>,
        b: Range<usize>,
    },
    Unit {
        unit: BottleneckUnit,
        ranges: UnitRanges,
    },
    Ca(CaRanges),
    Head {
        w: Range<usize>,
        b: Range<usize>,
        in_channels: usize,
    },
}

#[derive(Debug, Clone)]
enum StageTape {
    Stem { x: FeatureMap, pre: FeatureMap },
    Unit(UnitTape),
    Ca { x: FeatureMap },
    Head { x: FeatureMap, pooled: Vec<f64> },
}

/// Activations recorded by [`Backbone::forward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    stages: Vec<StageTape>,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    layout: Layout,
    weights: Vec<f64>,
    stages: Vec<Stage>,
}

impl Backbone {
    /// Builds the network and draws seeded initial weights.
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = Layout::default();
        let mut stages = Vec::new();
        let sc = config.stem_channels;
        stages.push(Stage::Stem {
            w: layout.alloc("stem.weight".into(), sc * INPUT_CHANNELS * 9),
            b: layout.alloc("stem.bias".into(), sc),
        });
        let mut cin = sc;
        for (li, spec) in config.layers.iter().enumerate() {
            for u in 0..spec.units {
                let unit = BottleneckUnit {
                    in_channels: cin,
                    expanded: cin * config.expansion,
                    out_channels: spec.channels,
                    stride: if u == 0 { spec.stride } else { 1 },
                    sge_groups: config.sge_groups,
                };
                let p = format!("layer{}.unit{}", li + 1, u);
                let (ce, co) = (unit.expanded, unit.out_channels);
                let ranges = UnitRanges {
                    expand_w: layout.alloc(format!("{p}.expand.weight"), ce * cin),
                    expand_b: layout.alloc(format!("{p}.expand.bias"), ce),
                    dw_w: layout.alloc(format!("{p}.depthwise.weight"), ce * 9),
                    dw_b: layout.alloc(format!("{p}.depthwise.bias"), ce),
                    project_w: layout.alloc(format!("{p}.project.weight"), co * ce),
                    project_b: layout.alloc(format!("{p}.project.bias"), co),
                    sge_gamma: layout.alloc(format!("{p}.sge.gamma"), config.sge_groups),
                    sge_beta: layout.alloc(format!("{p}.sge.beta"), config.sge_groups),
                };
                stages.push(Stage::Unit { unit, ranges });
                cin = spec.channels;
            }
            if li + 1 < config.layers.len() {
                let c = spec.channels;
                let mid = CAParams::zeros(c, config.ca_reduction, config.ca_min_mid)?.mid;
                let p = format!("ca{}", li + 1);
                stages.push(Stage::Ca(CaRanges {
                    channels: c,
                    mid,
                    w1: layout.alloc(format!("{p}.w1"), mid * c),
                    b1: layout.alloc(format!("{p}.b1"), mid),
                    wh: layout.alloc(format!("{p}.wh"), c * mid),
                    bh: layout.alloc(format!("{p}.bh"), c),
                    ww: layout.alloc(format!("{p}.ww"), c * mid),
                    bw: layout.alloc(format!("{p}.bw"), c),
                }));
            }
        }
        stages.push(Stage::Head {
            w: layout.alloc("head.weight".into(), PARAM_DIM * cin),
            b: layout.alloc("head.bias".into(), PARAM_DIM),
            in_channels: cin,
        });

        let mut weights = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |w: &mut [f64], r: &Range<usize>, std: f64| {
            for v in &mut w[r.clone()] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        for stage in &stages {
            match stage {
                Stage::Stem { w, .. } => {
                    fill(&mut weights, w, (2.0 / (INPUT_CHANNELS * 9) as f64).sqrt())
                }
                Stage::Unit { unit, ranges } => {
                    fill(&mut weights, &ranges.expand_w, (2.0 / unit.in_channels as f64).sqrt());
                    fill(&mut weights, &ranges.dw_w, (2.0 / 9.0f64).sqrt());
                    fill(&mut weights, &ranges.project_w, (2.0 / unit.expanded as f64).sqrt());
                }
                Stage::Ca(r) => {
                    fill(&mut weights, &r.w1, (1.0 / r.channels as f64).sqrt());
                    fill(&mut weights, &r.wh, (1.0 / r.mid as f64).sqrt());
                    fill(&mut weights, &r.ww, (1.0 / r.mid as f64).sqrt());
                }
                Stage::Head { w, in_channels, .. } => {
                    fill(&mut weights, w, 0.1 / (*in_channels as f64).sqrt())
                }
            }
        }
        // Weights live at f32 precision so checkpoints store them exactly.
        for w in &mut weights {
            *w = *w as f32 as f64;
        }
        Ok(Backbone {
            config,
            layout,
            weights,
            stages,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }
    pub fn layout(&self) -> &Layout {
        &self.layout
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    /// Replaces all weights (e.g. from a checkpoint).
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.layout.total {
            return Err(Error::Shape(format!(
                "{} weights given, network has {}",
                weights.len(),
                self.layout.total
            )));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.layout.blobs.iter().find(|b| b.name == name)
    }

    fn ca_params(&self, r: &CaRanges) -> CAParams {
        let w = &self.weights;
        CAParams {
            reduction: self.config.ca_reduction,
            channels: r.channels,
            mid: r.mid,
            w1: w[r.w1.clone()].to_vec(),
            b1: w[r.b1.clone()].to_vec(),
            wh: w[r.wh.clone()].to_vec(),
            bh: w[r.bh.clone()].to_vec(),
            ww: w[r.ww.clone()].to_vec(),
            bw: w[r.bw.clone()].to_vec(),
        }
    }

    fn check_input(&self, image: &FeatureMap) -> Result<()> {
        let s = self.config.input_size;
        if image.shape() != (INPUT_CHANNELS, s, s) {
            return Err(Error::Shape(format!(
                "input image is {:?}, network expects ({INPUT_CHANNELS}, {s}, {s})",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Data-dependent rescaling of the initial convolution weights.
    ///
    /// Walks the network in order and divides each convolution's weights so
    /// that its output has unit RMS over `probe`. Without normalisation
    /// layers, swish (≈ x/2 near zero), SGE at its 0.5 starting gain and CA
    /// gates near 0.5 would otherwise shrink the signal geometrically with
    /// depth. Biases must still be zero, as after [`Backbone::new`].
    pub fn calibrate(&mut self, probe: &[FeatureMap]) -> Result<()> {
        for x in probe {
            self.check_input(x)?;
        }
        if probe.is_empty() {
            return Ok(());
        }
        fn rms(maps: &[FeatureMap]) -> f64 {
            let (mut s, mut n) = (0.0, 0usize);
            for m in maps {
                s += m.data().iter().map(|v| v * v).sum::<f64>();
                n += m.data().len();
            }
            (s / n.max(1) as f64).sqrt()
        }
        fn rescale(w: &mut [f64], r: &Range<usize>, by: f64) {
            if by > 1e-12 && by.is_finite() {
                for v in &mut w[r.clone()] {
                    *v = (*v / by) as f32 as f64;
                }
            }
        }
        let stages = self.stages.clone();
        let mut acts: Vec<FeatureMap> = probe.to_vec();
        for stage in &stages {
            match stage {
                Stage::Stem { w, b } => {
                    let run = |net: &Self, x: &FeatureMap| {
                        conv3_forward(x, &net.weights[w.clone()], &net.weights[b.clone()], 2)
                    };
                    let pre: Vec<FeatureMap> = acts.iter().map(|x| run(self, x)).collect();
                    rescale(&mut self.weights, w, rms(&pre));
                    acts = acts.iter().map(|x| run(self, x).map(swish)).collect();
                }
                Stage::Unit { unit, ranges } => {
                    let r = ranges.clone();
                    let e_pre: Vec<FeatureMap> = acts
                        .iter()
                        .map(|x| pointwise_forward(x, &self.weights[r.expand_w.clone()], &self.weights[r.expand_b.clone()]))
                        .collect();
                    let by = rms(&e_pre);
                    rescale(&mut self.weights, &r.expand_w, by);
                    let e_act: Vec<FeatureMap> = acts
                        .iter()
                        .map(|x| pointwise_forward(x, &self.weights[r.expand_w.clone()], &self.weights[r.expand_b.clone()]).map(swish))
                        .collect();
                    let d_pre: Vec<FeatureMap> = e_act
                        .iter()
                        .map(|x| depthwise_forward(x, &self.weights[r.dw_w.clone()], &self.weights[r.dw_b.clone()], unit.stride))
                        .collect();
                    rescale(&mut self.weights, &r.dw_w, rms(&d_pre));
                    let d_act: Vec<FeatureMap> = e_act
                        .iter()
                        .map(|x| depthwise_forward(x, &self.weights[r.dw_w.clone()], &self.weights[r.dw_b.clone()], unit.stride).map(swish))
                        .collect();
                    let proj: Vec<FeatureMap> = d_act
                        .iter()
                        .map(|x| pointwise_forward(x, &self.weights[r.project_w.clone()], &self.weights[r.project_b.clone()]))
                        .collect();
                    rescale(&mut self.weights, &r.project_w, rms(&proj));
                    acts = acts
                        .iter()
                        .map(|x| unit.forward(x, &r.view(&self.weights)))
                        .collect::<Result<_>>()?;
                }
                Stage::Ca(r) => {
                    let params = self.ca_params(r);
                    acts = acts
                        .iter()
                        .map(|x| ca_forward(x, &params))
                        .collect::<Result<_>>()?;
                }
                Stage::Head { .. } => {}
            }
        }
        Ok(())
    }

    /// Whitened 62-dim prediction.
    pub fn forward(&self, image: &FeatureMap) -> Result<[f64; PARAM_DIM]> {
        Ok(self.forward_tape(image)?.0)
    }

    pub fn forward_tape(&self, image: &FeatureMap) -> Result<([f64; PARAM_DIM], Tape)> {
        self.check_input(image)?;
        let w = &self.weights;
        let mut x = image.clone();
        let mut tape = Vec::with_capacity(self.stages.len());
        let mut out = [0.0; PARAM_DIM];
        for stage in &self.stages {
            match stage {
                Stage::Stem { w: wr, b, .. } => {
                    let pre = conv3_forward(&x, &w[wr.clone()], &w[b.clone()], 2);
                    let next = pre.map(swish);
                    tape.push(StageTape::Stem { x, pre });
                    x = next;
                }
                Stage::Unit { unit, ranges } => {
                    let (next, t) = unit.forward_tape(&x, &ranges.view(w))?;
                    tape.push(StageTape::Unit(t));
                    x = next;
                }
                Stage::Ca(r) => {
                    let next = ca_forward(&x, &self.ca_params(r))?;
                    tape.push(StageTape::Ca { x });
                    x = next;
                }
                Stage::Head { w: wr, b, in_channels } => {
                    let c = *in_channels;
                    let pooled: Vec<f64> = (0..c)
                        .map(|ch| x.channel(ch).iter().sum::<f64>() / x.plane() as f64)
                        .collect();
                    let hw = &w[wr.clone()];
                    for (k, o) in out.iter_mut().enumerate() {
                        *o = w[b.start + k]
                            + hw[k * c..(k + 1) * c]
                                .iter()
                                .zip(&pooled)
                                .map(|(a, p)| a * p)
                                .sum::<f64>();
                    }
                    tape.push(StageTape::Head {
                        x: x.clone(),
                        pooled,
                    });
                }
            }
        }
        Ok((out, Tape { stages: tape }))
    }

    /// Accumulates `d loss / d weights` into `grads` given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, d_out: &[f64; PARAM_DIM], grads: &mut [f64]) -> Result<()> {
        if grads.len() != self.weights.len() {
            return Err(Error::Shape("gradient buffer size != weight count".into()));
        }
        let w = &self.weights;
        let mut d_x: Option<FeatureMap> = None;
        for (stage, rec) in self.stages.iter().zip(&tape.stages).rev() {
            match (stage, rec) {
                (Stage::Head { w: wr, b, in_channels }, StageTape::Head { x, pooled }) => {
                    let c = *in_channels;
                    let mut d_pool = vec![0.0; c];
                    for k in 0..PARAM_DIM {
                        grads[b.start + k] += d_out[k];
                        for ch in 0..c {
                            grads[wr.start + k * c + ch] += d_out[k] * pooled[ch];
                            d_pool[ch] += w[wr.start + k * c + ch] * d_out[k];
                        }
                    }
                    let (ch_n, h, wd) = x.shape();
                    let m = (h * wd) as f64;
                    d_x = Some(FeatureMap::from_fn(ch_n, h, wd, |ch, _, _| d_pool[ch] / m));
                }
                (Stage::Ca(r), StageTape::Ca { x }) => {
                    let up = d_x.take().expect("upstream gradient");
                    let (dx, g) = ca_backward(x, &self.ca_params(r), &up)?;
                    for (range, src) in [
                        (&r.w1, &g.w1),
                        (&r.b1, &g.b1),
                        (&r.wh, &g.wh),
                        (&r.bh, &g.bh),
                        (&r.ww, &g.ww),
                        (&r.bw, &g.bw),
                    ] {
                        for (a, b) in grads[range.clone()].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                    d_x = Some(dx);
                }
                (Stage::Unit { unit, ranges }, StageTape::Unit(t)) => {
                    let up = d_x.take().expect("upstream gradient");
                    let dx = {
                        let mut g = unit_grads(grads, ranges);
                        unit.backward(t, &ranges.view(w), &up, &mut g)?
                    };
                    d_x = Some(dx);
                }
                (Stage::Stem { w: wr, b, .. }, StageTape::Stem { x, pre }) => {
                    let mut up = d_x.take().expect("upstream gradient");
                    for (d, &p) in up.data_mut().iter_mut().zip(pre.data()) {
                        *d *= swish_grad(p);
                    }
                    let (gw, gb) = split_two(grads, wr.clone(), b.clone());
                    let _ = conv3_backward(x, &w[wr.clone()], 2, &up, gw, gb);
                }
                _ => return Err(Error::Shape("tape does not match the network".into())),
            }
        }
        Ok(())
    }
}

fn split_two(g: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

/// Disjoint mutable views of one unit's gradient slices (allocated contiguously in order).
fn unit_grads<'a>(g: &'a mut [f64], r: &UnitRanges) -> UnitGrads<'a> {
    let base = r.expand_w.start;
    let region = &mut g[base..r.sge_beta.end];
    let (expand_w, rest) = region.split_at_mut(r.expand_w.len());
    let (expand_b, rest) = rest.split_at_mut(r.expand_b.len());
    let (dw_w, rest) = rest.split_at_mut(r.dw_w.len());
    let (dw_b, rest) = rest.split_at_mut(r.dw_b.len());
    let (project_w, rest) = rest.split_at_mut(r.project_w.len());
    let (project_b, rest) = rest.split_at_mut(r.project_b.len());
    let (sge_gamma, sge_beta) = rest.split_at_mut(r.sge_gamma.len());
    UnitGrads {
        expand_w,
        expand_b,
        dw_w,
        dw_b,
        project_w,
        project_b,
        sge_gamma,
        sge_beta,
    }
}

/// Spatial size after the stem and every layer's stride.
pub fn feature_size(config: &BackboneConfig) -> usize {
    let mut s = conv3_out(config.input_size, 2);
    for l in &config.layers {
        s = conv3_out(s, l.stride);
    }
    s
}
