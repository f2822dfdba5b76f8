//! Toy velocity / noise predictors.
//!
//! Two topologies are available: an MLP over flattened tensors for
//! low-dimensional toy distributions, and a three-level convolutional
//! encoder–decoder with skip connections for image chips. Both take the
//! condition by channel concatenation and inject a projected time embedding
//! additively at the entry of every level.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::embedding::TimeEmbedding;
use super::tape::{ConvParams, LinearParams, NodeId, ParamAllocator, Tape};
use crate::error::{Error, Result};
use crate::raster::container::{read_container, write_container, DType};
use crate::rng::SeededRng;
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// Predicts `dx/dt` for flow matching.
    Velocity,
    /// Predicts the added noise `ε` for diffusion.
    Noise,
}

impl fmt::Display for FieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldMode::Velocity => f.write_str("velocity"),
            FieldMode::Noise => f.write_str("noise"),
        }
    }
}

/// Anything that maps `(x_t, t, condition)` to a tensor shaped like `x_t`.
///
/// Samplers are written against this trait so analytic oracle fields and
/// trained networks are interchangeable.
pub trait Field: Sync {
    fn mode(&self) -> FieldMode;

    fn evaluate(&self, x_t: &ImageTensor, t: f64, condition: Option<&ImageTensor>)
        -> Result<ImageTensor>;
}

/// Wraps a closure as a [`Field`].
pub struct FnField<F> {
    mode: FieldMode,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&ImageTensor, f64, Option<&ImageTensor>) -> Result<ImageTensor> + Sync,
{
    pub fn new(mode: FieldMode, f: F) -> Self {
        Self { mode, f }
    }
}

impl<F> Field for FnField<F>
where
    F: Fn(&ImageTensor, f64, Option<&ImageTensor>) -> Result<ImageTensor> + Sync,
{
    fn mode(&self) -> FieldMode {
        self.mode
    }

    fn evaluate(
        &self,
        x_t: &ImageTensor,
        t: f64,
        condition: Option<&ImageTensor>,
    ) -> Result<ImageTensor> {
        (self.f)(x_t, t, condition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Mlp {
        data_shape: Shape,
        /// Zero means unconditional.
        cond_len: usize,
        hidden: Vec<usize>,
        time_hidden: usize,
    },
    UNet {
        channels: usize,
        cond_channels: usize,
        widths: [usize; 3],
        time_hidden: usize,
    },
}

impl Topology {
    pub fn mlp(data_shape: Shape, cond_len: usize) -> Self {
        Topology::Mlp {
            data_shape,
            cond_len,
            hidden: vec![128, 128, 128],
            time_hidden: 64,
        }
    }

    pub fn unet(channels: usize, cond_channels: usize) -> Self {
        Topology::UNet {
            channels,
            cond_channels,
            widths: [16, 32, 64],
            time_hidden: 64,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Topology::Mlp {
                data_shape,
                hidden,
                time_hidden,
                ..
            } => data_shape.validate().is_ok() && !hidden.is_empty() && !hidden.contains(&0) && *time_hidden > 0,
            Topology::UNet {
                channels,
                widths,
                time_hidden,
                ..
            } => *channels > 0 && !widths.contains(&0) && *time_hidden > 0,
        };
        if !ok {
            return Err(Error::invalid(format!("invalid topology {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Layout {
    Mlp {
        time_in: LinearParams,
        layers: Vec<LinearParams>,
        time_proj: Vec<LinearParams>,
        out: LinearParams,
    },
    UNet {
        time_in: LinearParams,
        // encoder levels 1..=3: (entry conv, second conv, time projection)
        enc: [(ConvParams, ConvParams, LinearParams); 3],
        // decoder levels 2 and 1: (conv over the concatenation, time projection)
        dec: [(ConvParams, LinearParams); 2],
        out: ConvParams,
    },
}

impl Layout {
    fn build(topology: &Topology, emb_dim: usize) -> (Self, usize) {
        let mut alloc = ParamAllocator::default();
        let layout = match topology {
            Topology::Mlp {
                data_shape,
                cond_len,
                hidden,
                time_hidden,
            } => {
                let time_in = LinearParams::allocate(&mut alloc, emb_dim, *time_hidden);
                let mut layers = Vec::new();
                let mut time_proj = Vec::new();
                let mut width = data_shape.len() + cond_len;
                for &h in hidden {
                    layers.push(LinearParams::allocate(&mut alloc, width, h));
                    time_proj.push(LinearParams::allocate(&mut alloc, *time_hidden, h));
                    width = h;
                }
                let out = LinearParams::allocate(&mut alloc, width, data_shape.len());
                Layout::Mlp {
                    time_in,
                    layers,
                    time_proj,
                    out,
                }
            }
            Topology::UNet {
                channels,
                cond_channels,
                widths: [w1, w2, w3],
                time_hidden,
            } => {
                let time_in = LinearParams::allocate(&mut alloc, emb_dim, *time_hidden);
                let level = |cin: usize, w: usize, alloc: &mut ParamAllocator| {
                    (
                        ConvParams::allocate(alloc, cin, w),
                        ConvParams::allocate(alloc, w, w),
                        LinearParams::allocate(alloc, *time_hidden, w),
                    )
                };
                let enc = [
                    level(channels + cond_channels, *w1, &mut alloc),
                    level(*w1, *w2, &mut alloc),
                    level(*w2, *w3, &mut alloc),
                ];
                let dec = [
                    (
                        ConvParams::allocate(&mut alloc, w3 + w2, *w2),
                        LinearParams::allocate(&mut alloc, *time_hidden, *w2),
                    ),
                    (
                        ConvParams::allocate(&mut alloc, w2 + w1, *w1),
                        LinearParams::allocate(&mut alloc, *time_hidden, *w1),
                    ),
                ];
                let out = ConvParams::allocate(&mut alloc, *w1, *channels);
                Layout::UNet {
                    time_in,
                    enc,
                    dec,
                    out,
                }
            }
        };
        (layout, alloc.total())
    }

    /// Every weight tensor with its fan-in, in allocation order. Biases are
    /// not listed (they start at zero). The final entry is the output layer.
    fn weights(&self) -> Vec<(super::tape::ParamRange, usize)> {
        let mut out = Vec::new();
        match self {
            Layout::Mlp {
                time_in,
                layers,
                time_proj,
                out: o,
            } => {
                out.push((time_in.weight, time_in.in_dim));
                for (l, p) in layers.iter().zip(time_proj) {
                    out.push((l.weight, l.in_dim));
                    out.push((p.weight, p.in_dim));
                }
                out.push((o.weight, o.in_dim));
            }
            Layout::UNet {
                time_in,
                enc,
                dec,
                out: o,
            } => {
                out.push((time_in.weight, time_in.in_dim));
                for (a, b, p) in enc {
                    out.push((a.weight, a.in_channels * 9));
                    out.push((b.weight, b.in_channels * 9));
                    out.push((p.weight, p.in_dim));
                }
                for (c, p) in dec {
                    out.push((c.weight, c.in_channels * 9));
                    out.push((p.weight, p.in_dim));
                }
                out.push((o.weight, o.in_channels * 9));
            }
        }
        out
    }
}

/// Recorded intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    tape: Tape,
    output: NodeId,
    output_shape: Shape,
}

#[derive(Debug, Clone)]
pub struct FieldModel {
    topology: Topology,
    mode: FieldMode,
    embedding: TimeEmbedding,
    params: Vec<f64>,
    layout: Layout,
}

impl FieldModel {
    /// Random hidden weights (scaled normal, fan-in variance) with zero
    /// biases and a zero output layer.
    pub fn new(topology: Topology, mode: FieldMode, seed: u64) -> Result<Self> {
        Self::initialized(topology, mode, TimeEmbedding::default(), seed, true)
    }

    pub fn initialized(
        topology: Topology,
        mode: FieldMode,
        embedding: TimeEmbedding,
        seed: u64,
        zero_output: bool,
    ) -> Result<Self> {
        topology.validate()?;
        embedding.validate()?;
        let (layout, count) = Layout::build(&topology, embedding.dim);
        let mut params = vec![0.0; count];
        let mut rng = SeededRng::new(seed);
        let weights = layout.weights();
        let last = weights.len() - 1;
        for (i, (range, fan_in)) in weights.into_iter().enumerate() {
            if zero_output && i == last {
                continue;
            }
            let std = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[range.offset..range.offset + range.len] {
                *p = std * rng.standard_normal();
            }
        }
        Ok(Self {
            topology,
            mode,
            embedding,
            params,
            layout,
        })
    }

    pub fn from_params(
        topology: Topology,
        mode: FieldMode,
        embedding: TimeEmbedding,
        params: Vec<f64>,
    ) -> Result<Self> {
        topology.validate()?;
        embedding.validate()?;
        let (layout, count) = Layout::build(&topology, embedding.dim);
        if params.len() != count {
            return Err(Error::shape(format!(
                "topology needs {count} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            topology,
            mode,
            embedding,
            params,
            layout,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn mode(&self) -> FieldMode {
        self.mode
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Rounds every parameter to the nearest `f32`, so the model can be
    /// stored with 32-bit weights losslessly.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    fn check_inputs(&self, x_t: &ImageTensor, condition: Option<&ImageTensor>) -> Result<()> {
        match &self.topology {
            Topology::Mlp {
                data_shape,
                cond_len,
                ..
            } => {
                x_t.require_shape(*data_shape, "model input x_t")?;
                let got = condition.map_or(0, |c| c.shape().len());
                if got != *cond_len {
                    return Err(Error::shape(format!(
                        "condition has {got} values, model expects {cond_len}"
                    )));
                }
                if let Some(c) = condition {
                    if c.height() != x_t.height() || c.width() != x_t.width() {
                        return Err(Error::shape(format!(
                            "condition {} does not match x_t {} spatially",
                            c.shape(),
                            x_t.shape()
                        )));
                    }
                }
            }
            Topology::UNet {
                channels,
                cond_channels,
                ..
            } => {
                if x_t.channels() != *channels {
                    return Err(Error::shape(format!(
                        "x_t has {} channels, model expects {channels}",
                        x_t.channels()
                    )));
                }
                if x_t.height() % 4 != 0 || x_t.width() % 4 != 0 {
                    return Err(Error::shape(format!(
                        "encoder–decoder needs spatial dims divisible by 4, got {}",
                        x_t.shape()
                    )));
                }
                match condition {
                    None if *cond_channels == 0 => {}
                    Some(c) if c.channels() == *cond_channels => {
                        if c.height() != x_t.height() || c.width() != x_t.width() {
                            return Err(Error::shape(format!(
                                "condition {} does not match x_t {} spatially",
                                c.shape(),
                                x_t.shape()
                            )));
                        }
                    }
                    other => {
                        return Err(Error::shape(format!(
                            "condition with {} channels, model expects {cond_channels}",
                            other.map_or(0, |c| c.channels())
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    fn run(
        &self,
        params: &[f64],
        x_t: &ImageTensor,
        t: f64,
        condition: Option<&ImageTensor>,
    ) -> Result<Trace> {
        self.check_inputs(x_t, condition)?;
        if !t.is_finite() {
            return Err(Error::NonFinite("time argument".into()));
        }
        let mut tape = Tape::new();
        let sinusoid = tape.input(self.embedding.embed(t));
        let mut input = x_t.data().to_vec();
        if let Some(c) = condition {
            input.extend_from_slice(c.data());
        }
        let input = tape.input(input);

        let output = match &self.layout {
            Layout::Mlp {
                time_in,
                layers,
                time_proj,
                out,
            } => {
                let e = tape.linear(params, sinusoid, *time_in);
                let e = tape.silu(e);
                let mut h = input;
                for (layer, proj) in layers.iter().zip(time_proj) {
                    let z = tape.linear(params, h, *layer);
                    let p = tape.linear(params, e, *proj);
                    let z = tape.add_per_channel(z, p, 1);
                    h = tape.silu(z);
                }
                tape.linear(params, h, *out)
            }
            Layout::UNet {
                time_in,
                enc,
                dec,
                out,
            } => {
                let e = tape.linear(params, sinusoid, *time_in);
                let e = tape.silu(e);
                let (h0, w0) = (x_t.height(), x_t.width());
                let dims = [(h0, w0), (h0 / 2, w0 / 2), (h0 / 4, w0 / 4)];

                let mut skips = Vec::with_capacity(3);
                let mut h = input;
                for (level, (entry, second, proj)) in enc.iter().enumerate() {
                    let (hh, ww) = dims[level];
                    if level > 0 {
                        let (ph, pw) = dims[level - 1];
                        h = tape.avg_pool2(h, entry.in_channels, ph, pw);
                    }
                    let z = tape.conv3x3(params, h, *entry, hh, ww);
                    let p = tape.linear(params, e, *proj);
                    let z = tape.add_per_channel(z, p, hh * ww);
                    let a = tape.silu(z);
                    let z = tape.conv3x3(params, a, *second, hh, ww);
                    h = tape.silu(z);
                    skips.push(h);
                }

                let mut below_channels = enc[2].1.out_channels;
                for (i, (conv, proj)) in dec.iter().enumerate() {
                    let level = 1 - i;
                    let (hh, ww) = dims[level];
                    let (bh, bw) = dims[level + 1];
                    let up = tape.upsample2(h, below_channels, bh, bw);
                    let cat = tape.concat(up, skips[level]);
                    let z = tape.conv3x3(params, cat, *conv, hh, ww);
                    let p = tape.linear(params, e, *proj);
                    let z = tape.add_per_channel(z, p, hh * ww);
                    h = tape.silu(z);
                    below_channels = conv.out_channels;
                }
                tape.conv3x3(params, h, *out, h0, w0)
            }
        };
        Ok(Trace {
            tape,
            output,
            output_shape: x_t.shape(),
        })
    }

    pub fn forward(
        &self,
        x_t: &ImageTensor,
        t: f64,
        condition: Option<&ImageTensor>,
    ) -> Result<ImageTensor> {
        let (out, _) = self.forward_traced(x_t, t, condition)?;
        Ok(out)
    }

    pub fn forward_traced(
        &self,
        x_t: &ImageTensor,
        t: f64,
        condition: Option<&ImageTensor>,
    ) -> Result<(ImageTensor, Trace)> {
        self.forward_with_params(&self.params, x_t, t, condition)
    }

    /// Forward pass with an explicit parameter vector (same layout as
    /// [`FieldModel::params`]). Used by gradient checks.
    pub fn forward_with_params(
        &self,
        params: &[f64],
        x_t: &ImageTensor,
        t: f64,
        condition: Option<&ImageTensor>,
    ) -> Result<(ImageTensor, Trace)> {
        if params.len() != self.params.len() {
            return Err(Error::shape("parameter vector length does not match topology"));
        }
        let trace = self.run(params, x_t, t, condition)?;
        let out = ImageTensor::new(trace.output_shape, trace.tape.value(trace.output).to_vec())?;
        Ok((out, trace))
    }

    /// Gradient of a scalar loss with respect to every parameter, given
    /// `∂loss/∂output` for the traced forward pass.
    pub fn backward(&self, trace: &Trace, output_adjoint: &ImageTensor) -> Result<Vec<f64>> {
        output_adjoint.require_shape(trace.output_shape, "output adjoint")?;
        trace
            .tape
            .backward(&self.params, trace.output, output_adjoint.data())
    }

    pub fn save(&self, path: &Path, dtype: DType) -> Result<()> {
        if !matches!(dtype, DType::F32 | DType::F64) {
            return Err(Error::invalid("checkpoints store f32 or f64 weights"));
        }
        let header = json!({
            "kind": "checkpoint",
            "mode": self.mode,
            "topology": self.topology,
            "embedding": self.embedding,
            "dtype": dtype,
            "param_count": self.params.len(),
        });
        let mut payload = Vec::new();
        dtype.encode(&self.params, &mut payload)?;
        write_container(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            kind: String,
            mode: FieldMode,
            topology: Topology,
            embedding: TimeEmbedding,
            dtype: DType,
            param_count: usize,
        }
        let (header, payload) = read_container(path)?;
        let h: Header = serde_json::from_value(header)
            .map_err(|e| Error::format(format!("{}: bad checkpoint header: {e}", path.display())))?;
        if h.kind != "checkpoint" {
            return Err(Error::format(format!(
                "{}: expected a checkpoint, found {:?}",
                path.display(),
                h.kind
            )));
        }
        if payload.len() != h.param_count * h.dtype.size() {
            return Err(Error::format(format!(
                "{}: declared {} parameters but payload has {} bytes",
                path.display(),
                h.param_count,
                payload.len()
            )));
        }
        let params = h.dtype.decode(&payload);
        Self::from_params(h.topology, h.mode, h.embedding, params)
    }
}

impl Field for FieldModel {
    fn mode(&self) -> FieldMode {
        self.mode
    }

    fn evaluate(
        &self,
        x_t: &ImageTensor,
        t: f64,
        condition: Option<&ImageTensor>,
    ) -> Result<ImageTensor> {
        self.forward(x_t, t, condition)
    }
}

/// Stateful wrapper enforcing forward-before-backward ordering.
#[derive(Debug)]
pub struct TracedModel<'a> {
    model: &'a FieldModel,
    trace: Option<Trace>,
}

impl<'a> TracedModel<'a> {
    pub fn new(model: &'a FieldModel) -> Self {
        Self { model, trace: None }
    }

    pub fn forward(
        &mut self,
        x_t: &ImageTensor,
        t: f64,
        condition: Option<&ImageTensor>,
    ) -> Result<ImageTensor> {
        let (out, trace) = self.model.forward_traced(x_t, t, condition)?;
        self.trace = Some(trace);
        Ok(out)
    }

    /// Consumes the recorded forward pass.
    pub fn backward(&mut self, output_adjoint: &ImageTensor) -> Result<Vec<f64>> {
        let trace = self.trace.take().ok_or(Error::NoForwardTrace)?;
        self.model.backward(&trace, output_adjoint)
    }
}

/// Mean absolute error and its adjoint with respect to `prediction`.
/// The subgradient of `|·|` at zero is taken as zero.
pub fn l1_loss(prediction: &ImageTensor, target: &ImageTensor) -> Result<(f64, ImageTensor)> {
    target.require_shape(prediction.shape(), "L1 target")?;
    let n = prediction.data().len() as f64;
    let mut loss = 0.0;
    let adjoint = prediction.zip_map(target, |p, t| {
        let d = p - t;
        loss += d.abs();
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    })?;
    Ok((loss / n, adjoint))
}
