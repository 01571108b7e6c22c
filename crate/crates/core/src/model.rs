//! The base classifier: five `conv → batchnorm → relu → maxpool → dropout`
//! blocks, then `flatten → head[0] → head[1] → softmax`. The head is either
//! two standard dense layers or two kernelized dense layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::layers::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, KernelDense, LayerState, MaxPool, Mode, ParamKind, Relu, Softmax,
};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor, Window};

pub const CONV_BLOCKS: usize = 5;
const DROPOUT_STREAM: u64 = 0xd0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadType {
    Fc,
    Kdl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(rename = "type")]
    pub kind: HeadType,
    #[serde(default = "linear")]
    pub kernel: KernelSpec,
    #[serde(default = "default_hidden")]
    pub hidden_units: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
}

fn linear() -> KernelSpec {
    KernelSpec::Linear
}

fn default_hidden() -> usize {
    128
}

fn default_classes() -> usize {
    7
}

impl HeadConfig {
    pub fn fc(hidden_units: usize, num_classes: usize) -> Self {
        HeadConfig {
            kind: HeadType::Fc,
            kernel: KernelSpec::Linear,
            hidden_units,
            num_classes,
        }
    }

    pub fn kdl(kernel: KernelSpec, hidden_units: usize, num_classes: usize) -> Self {
        HeadConfig {
            kind: HeadType::Kdl,
            kernel,
            hidden_units,
            num_classes,
        }
    }

    /// Short label used in logs and ablation tables, e.g. `fc` or `kdl_n3`.
    pub fn label(&self) -> String {
        match (self.kind, self.kernel) {
            (HeadType::Fc, _) => "fc".into(),
            (HeadType::Kdl, KernelSpec::Linear) => "kdl_linear".into(),
            (HeadType::Kdl, KernelSpec::Polynomial { n }) => format!("kdl_n{n}"),
            (HeadType::Kdl, k) => format!("kdl_{}", k.name()),
        }
    }

    /// The first head layer is followed by ReLU for fc heads and degree-1 kernels.
    pub fn hidden_relu(&self) -> bool {
        self.kind == HeadType::Fc || self.kernel.takes_activation()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// (channels, height, width)
    pub input_shape: [usize; 3],
    /// Five block widths, or empty for a head-only model on flat features.
    pub conv_channels: Vec<usize>,
    pub conv_kernel: [usize; 2],
    pub dropout_rates: Vec<f64>,
    pub head: HeadConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_shape: [1, 48, 48],
            conv_channels: vec![32, 64, 128, 256, 512],
            conv_kernel: [3, 3],
            dropout_rates: vec![0.25; CONV_BLOCKS],
            head: HeadConfig::kdl(KernelSpec::polynomial(3), 128, 7),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Head-only model (no convolution blocks) over `features` inputs.
    pub fn head_only(features: usize, head: HeadConfig, seed: u64) -> Self {
        ModelConfig {
            input_shape: [1, 1, features],
            conv_channels: Vec::new(),
            conv_kernel: [3, 3],
            dropout_rates: Vec::new(),
            head,
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    fn conv_window(&self) -> Window {
        let [kh, kw] = self.conv_kernel;
        Window::new(kh, kw, 1, (kh.min(kw).max(1) - 1) / 2)
    }

    /// Spatial size after each block, starting with the input size.
    pub fn spatial_trace(&self) -> Result<Vec<(usize, usize)>> {
        trace_for(self.conv_window(), self.conv_channels.len(), self.input_shape[1], self.input_shape[2])
    }

    pub fn flatten_len(&self) -> Result<usize> {
        let trace = self.spatial_trace()?;
        let (h, w) = *trace.last().expect("trace starts with the input");
        let ch = self.conv_channels.last().copied().unwrap_or(self.input_shape[0]);
        Ok(ch * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_shape.contains(&0) {
            return bad(format!("input_shape {:?} has a zero dimension", self.input_shape));
        }
        if !(self.conv_channels.is_empty() || self.conv_channels.len() == CONV_BLOCKS) {
            return bad(format!(
                "conv_channels must list exactly {CONV_BLOCKS} blocks (or none), got {}",
                self.conv_channels.len()
            ));
        }
        if self.conv_channels.contains(&0) {
            return bad("conv_channels entries must be positive".into());
        }
        if self.conv_kernel.contains(&0) {
            return bad("conv_kernel entries must be positive".into());
        }
        if self.dropout_rates.len() != self.conv_channels.len() {
            return bad(format!(
                "dropout_rates has {} entries for {} conv blocks",
                self.dropout_rates.len(),
                self.conv_channels.len()
            ));
        }
        if let Some(p) = self.dropout_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return bad(format!("dropout rate {p} outside [0, 1)"));
        }
        if self.head.hidden_units == 0 || self.head.num_classes == 0 {
            return bad("head hidden_units and num_classes must be positive".into());
        }
        self.head
            .kernel
            .validate()
            .map_err(|e| Error::Config(format!("head.kernel: {e}")))?;
        if self.spatial_trace().is_err() {
            let min = self.min_input_size();
            return bad(format!(
                "input {}x{} is too small for {} pooling stages; minimum input size is {min}x{min}",
                self.input_shape[1],
                self.input_shape[2],
                self.conv_channels.len()
            ));
        }
        Ok(())
    }

    /// Smallest square input that survives every block.
    pub fn min_input_size(&self) -> usize {
        (1..=1 << 16)
            .find(|&s| trace_for(self.conv_window(), self.conv_channels.len(), s, s).is_ok())
            .unwrap_or(usize::MAX)
    }
}

fn trace_for(win: Window, blocks: usize, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
    let mut trace = vec![(h, w)];
    let (mut h, mut w) = (h, w);
    for _ in 0..blocks {
        let (ch, cw) = win.output_hw(h, w)?;
        h = ch / 2;
        w = cw / 2;
        if h == 0 || w == 0 {
            return Err(Error::Config(format!("spatial size reaches zero: {trace:?}")));
        }
        trace.push((h, w));
    }
    Ok(trace)
}

/// A named view of one trainable tensor.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: &'a mut Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T = f32> {
    config: ModelConfig,
    layers: Vec<LayerState<T>>,
    names: Vec<String>,
}

impl<T: Scalar> Model<T> {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let root = RngStream::new(config.seed);
        let mut layers = Vec::new();
        let mut names = Vec::new();
        let mut push = |name: String, layer: LayerState<T>| {
            names.push(name);
            layers.push(layer);
        };
        let [kh, kw] = config.conv_kernel;
        let win = config.conv_window();
        let mut in_ch = config.input_shape[0];
        for (i, (&ch, &p)) in config.conv_channels.iter().zip(&config.dropout_rates).enumerate() {
            let mut rng = root.derive(&[i as u64]);
            push(
                format!("block{i}.conv"),
                LayerState::Conv2d(Conv2d::he_init(in_ch, ch, (kh, kw), win.stride, win.pad, &mut rng)?),
            );
            push(format!("block{i}.bn"), LayerState::BatchNorm(BatchNorm::new(ch)));
            push(format!("block{i}.relu"), LayerState::Relu(Relu::new()));
            push(format!("block{i}.pool"), LayerState::MaxPool(MaxPool::default()));
            push(
                format!("block{i}.dropout"),
                LayerState::Dropout(Dropout::new(p, root.derive(&[DROPOUT_STREAM, i as u64]))?),
            );
            in_ch = ch;
        }
        push("flatten".into(), LayerState::Flatten(Flatten::default()));

        let head = &config.head;
        let flat = config.flatten_len()?;
        let blocks = config.conv_channels.len() as u64;
        let mut rng0 = root.derive(&[blocks]);
        let mut rng1 = root.derive(&[blocks + 1]);
        let (h0, h1) = match head.kind {
            HeadType::Fc => (
                LayerState::Dense(Dense::he_init(flat, head.hidden_units, true, &mut rng0)?),
                LayerState::Dense(Dense::he_init(head.hidden_units, head.num_classes, false, &mut rng1)?),
            ),
            HeadType::Kdl => (
                LayerState::Kdl(KernelDense::he_init(head.kernel, flat, head.hidden_units, true, &mut rng0)?),
                LayerState::Kdl(KernelDense::he_init(
                    head.kernel,
                    head.hidden_units,
                    head.num_classes,
                    false,
                    &mut rng1,
                )?),
            ),
        };
        push("head.0".into(), h0);
        push("head.1".into(), h1);
        push("softmax".into(), LayerState::Softmax(Softmax::new()));
        Ok(Model {
            config: config.clone(),
            layers,
            names,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerState<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerState<T>] {
        &mut self.layers
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerState::param_count).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.config.head.num_classes
    }

    /// Runs the whole stack; rows of the result are class probabilities.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let [c, h, w] = self.config.input_shape;
        match *batch.shape() {
            [_, bc, bh, bw] if [bc, bh, bw] == [c, h, w] => {}
            _ => {
                return Err(Error::dim(
                    "model",
                    format!("batch {:?} does not match input shape B×{c}×{h}×{w}", batch.shape()),
                ))
            }
        }
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer
                .forward(&x, mode)
                .map_err(|e| in_layer(e, i, &self.names[i]))?;
        }
        Ok(x)
    }

    /// Backpropagates the gradient with respect to the pre-softmax logits
    /// (the softmax/cross-entropy pair is differentiated jointly by the loss).
    /// Returns one gradient per trainable tensor, in [`Model::params_mut`] order.
    pub fn backward(&mut self, d_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let last = self.layers.len() - 1;
        self.layers[last].clear_cache();
        let mut g = d_logits.clone();
        let mut per_layer = Vec::with_capacity(last);
        for i in (0..last).rev() {
            let bundle = self.layers[i]
                .backward(&g)
                .map_err(|e| in_layer(e, i, &self.names[i]))?;
            g = bundle.d_input;
            per_layer.push(bundle.d_params);
        }
        per_layer.reverse();
        let grads = per_layer.into_iter().flatten().map(|(_, t)| t).collect();
        Ok(grads)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for (layer, lname) in self.layers.iter_mut().zip(&self.names) {
            for (pname, kind, value) in layer.params_mut() {
                out.push(ParamMut {
                    name: format!("{lname}.{pname}"),
                    kind,
                    value,
                });
            }
        }
        out
    }

    /// Every persisted tensor (parameters then buffers, per layer) with its name.
    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (layer, lname) in self.layers.iter().zip(&self.names) {
            for (pname, _, t) in layer.params() {
                out.push((format!("{lname}.{pname}"), t));
            }
            for (bname, t) in layer.buffers() {
                out.push((format!("{lname}.{bname}"), t));
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (layer, lname) in self.layers.iter_mut().zip(&self.names) {
            for (name, t) in layer.state_mut() {
                out.push((format!("{lname}.{name}"), t));
            }
        }
        out
    }

    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.state().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) {
        for ((_, dst), src) in self.state_mut().into_iter().zip(snapshot) {
            *dst = src.clone();
        }
    }
}

fn in_layer(e: Error, index: usize, name: &str) -> Error {
    match e {
        Error::Dimension { op, detail } => Error::Dimension {
            op,
            detail: format!("layer {index} ({name}): {detail}"),
        },
        other => other.at(|| format!("layer {index} ({name})")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(head: HeadConfig) -> ModelConfig {
        ModelConfig {
            input_shape: [1, 48, 48],
            conv_channels: vec![8; 5],
            conv_kernel: [3, 3],
            dropout_rates: vec![0.25; 5],
            head,
            seed: 3,
        }
    }

    #[test]
    fn spatial_trace_halves() {
        let cfg = small(HeadConfig::kdl(KernelSpec::polynomial(2), 16, 7));
        let trace: Vec<usize> = cfg.spatial_trace().unwrap().iter().map(|t| t.0).collect();
        assert_eq!(trace, vec![48, 24, 12, 6, 3, 1]);
        assert_eq!(cfg.flatten_len().unwrap(), 8);
    }

    #[test]
    fn input_too_small_names_minimum() {
        let mut cfg = small(HeadConfig::fc(16, 7));
        cfg.input_shape = [1, 16, 16];
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("minimum input size is 32x32"), "{msg}");
    }

    #[test]
    fn layer_sequence() {
        let m: Model<f32> = Model::build(&small(HeadConfig::kdl(KernelSpec::polynomial(3), 16, 7))).unwrap();
        let kinds: Vec<&str> = m.layers().iter().map(|l| l.kind()).collect();
        let mut want = Vec::new();
        for _ in 0..5 {
            want.extend(["conv2d", "batchnorm", "relu", "maxpool", "dropout"]);
        }
        want.extend(["flatten", "kdl", "kdl", "softmax"]);
        assert_eq!(kinds, want);
        match &m.layers()[26] {
            LayerState::Kdl(k) => assert!(!k.relu_active()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn uniform_output_with_zero_head() {
        let mut m: Model<f64> = Model::build(&small(HeadConfig::kdl(KernelSpec::polynomial(2), 16, 7))).unwrap();
        for p in m.params_mut() {
            if p.name.starts_with("head.1") {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = RngStream::new(1).sample_normal(0.5, 0.2, [2, 1, 48, 48]).unwrap();
        let y = m.forward(&x, Mode::Infer).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_json_keys() {
        let cfg = ModelConfig::default();
        let v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["conv_channels", "conv_kernel", "dropout_rates", "head", "input_shape", "seed"]
        );
        let mut hk: Vec<&String> = v["head"].as_object().unwrap().keys().collect();
        hk.sort();
        assert_eq!(hk, ["hidden_units", "kernel", "num_classes", "type"]);
        assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
