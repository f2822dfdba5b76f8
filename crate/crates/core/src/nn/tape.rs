//! Reverse-mode differentiation over a fixed set of layer primitives.
//!
//! A [`Tape`] records every intermediate value produced during a forward
//! pass together with the operation that produced it. Parameters live in one
//! flat vector owned by the caller; operations refer to them by
//! [`ParamRange`]. [`Tape::backward`] walks the records in reverse and
//! returns the gradient with respect to that flat vector.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Slice of the flat parameter vector owned by one weight or bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRange {
    pub offset: usize,
    pub len: usize,
}

impl ParamRange {
    #[inline]
    fn of<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.len]
    }
}

/// Hands out consecutive parameter ranges while a topology is laid out.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    next: usize,
}

impl ParamAllocator {
    pub fn take(&mut self, len: usize) -> ParamRange {
        let range = ParamRange {
            offset: self.next,
            len,
        };
        self.next += len;
        range
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub weight: ParamRange,
    pub bias: ParamRange,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearParams {
    pub fn allocate(alloc: &mut ParamAllocator, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: alloc.take(in_dim * out_dim),
            bias: alloc.take(out_dim),
            in_dim,
            out_dim,
        }
    }
}

/// 3×3 convolution with unit stride and one pixel of zero padding.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub weight: ParamRange,
    pub bias: ParamRange,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvParams {
    pub fn allocate(alloc: &mut ParamAllocator, in_channels: usize, out_channels: usize) -> Self {
        Self {
            weight: alloc.take(out_channels * in_channels * 9),
            bias: alloc.take(out_channels),
            in_channels,
            out_channels,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Linear {
        input: NodeId,
        layer: LinearParams,
    },
    Conv3x3 {
        input: NodeId,
        layer: ConvParams,
        height: usize,
        width: usize,
    },
    Silu {
        input: NodeId,
    },
    /// `out[c, p] = input[c, p] + per_channel[c]`
    AddPerChannel {
        input: NodeId,
        per_channel: NodeId,
        plane: usize,
    },
    AvgPool2 {
        input: NodeId,
        channels: usize,
        height: usize,
        width: usize,
    },
    UpsampleNearest2 {
        input: NodeId,
        channels: usize,
        height: usize,
        width: usize,
    },
    Concat {
        first: NodeId,
        second: NodeId,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn linear(&mut self, params: &[f64], input: NodeId, layer: LinearParams) -> NodeId {
        let x = self.value(input);
        debug_assert_eq!(x.len(), layer.in_dim);
        let w = layer.weight.of(params);
        let mut out = layer.bias.of(params).to_vec();
        for (o, acc) in out.iter_mut().enumerate() {
            let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
            *acc += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(out, Op::Linear { input, layer })
    }

    pub fn conv3x3(
        &mut self,
        params: &[f64],
        input: NodeId,
        layer: ConvParams,
        height: usize,
        width: usize,
    ) -> NodeId {
        let x = self.value(input);
        debug_assert_eq!(x.len(), layer.in_channels * height * width);
        let w = layer.weight.of(params);
        let b = layer.bias.of(params);
        let plane = height * width;
        let mut out = vec![0.0; layer.out_channels * plane];
        for o in 0..layer.out_channels {
            let out_plane = &mut out[o * plane..(o + 1) * plane];
            out_plane.fill(b[o]);
            for i in 0..layer.in_channels {
                let in_plane = &x[i * plane..(i + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = w[((o * layer.in_channels + i) * 3 + ky) * 3 + kx];
                        conv_tap_mut(in_plane, out_plane, height, width, ky, kx, |acc, v| {
                            *acc += wv * v
                        });
                    }
                }
            }
        }
        self.push(
            out,
            Op::Conv3x3 {
                input,
                layer,
                height,
                width,
            },
        )
    }

    pub fn silu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).iter().map(|&v| v * sigmoid(v)).collect();
        self.push(out, Op::Silu { input })
    }

    pub fn add_per_channel(&mut self, input: NodeId, per_channel: NodeId, plane: usize) -> NodeId {
        let v = self.value(per_channel);
        let mut out = self.value(input).to_vec();
        debug_assert_eq!(out.len(), v.len() * plane);
        for (c, chunk) in out.chunks_exact_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|x| *x += v[c]);
        }
        self.push(
            out,
            Op::AddPerChannel {
                input,
                per_channel,
                plane,
            },
        )
    }

    pub fn avg_pool2(&mut self, input: NodeId, channels: usize, height: usize, width: usize) -> NodeId {
        let x = self.value(input);
        let (oh, ow) = (height / 2, width / 2);
        let mut out = vec![0.0; channels * oh * ow];
        for c in 0..channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let base = c * height * width;
                    let s = x[base + 2 * y * width + 2 * xo]
                        + x[base + 2 * y * width + 2 * xo + 1]
                        + x[base + (2 * y + 1) * width + 2 * xo]
                        + x[base + (2 * y + 1) * width + 2 * xo + 1];
                    out[(c * oh + y) * ow + xo] = 0.25 * s;
                }
            }
        }
        self.push(
            out,
            Op::AvgPool2 {
                input,
                channels,
                height,
                width,
            },
        )
    }

    /// `height`/`width` are the input (pre-upsampling) dimensions.
    pub fn upsample2(&mut self, input: NodeId, channels: usize, height: usize, width: usize) -> NodeId {
        let x = self.value(input);
        let (oh, ow) = (height * 2, width * 2);
        let mut out = vec![0.0; channels * oh * ow];
        for c in 0..channels {
            for y in 0..oh {
                for xo in 0..ow {
                    out[(c * oh + y) * ow + xo] = x[(c * height + y / 2) * width + xo / 2];
                }
            }
        }
        self.push(
            out,
            Op::UpsampleNearest2 {
                input,
                channels,
                height,
                width,
            },
        )
    }

    pub fn concat(&mut self, first: NodeId, second: NodeId) -> NodeId {
        let mut out = self.value(first).to_vec();
        out.extend_from_slice(self.value(second));
        self.push(out, Op::Concat { first, second })
    }

    /// Propagates `output_adjoint` (∂loss/∂output) from `output` back to the
    /// parameters. Input nodes receive no gradient.
    pub fn backward(
        &self,
        params: &[f64],
        output: NodeId,
        output_adjoint: &[f64],
    ) -> Result<Vec<f64>> {
        if self.nodes.is_empty() {
            return Err(Error::NoForwardTrace);
        }
        if output_adjoint.len() != self.value(output).len() {
            return Err(Error::shape(format!(
                "adjoint has {} values, output has {}",
                output_adjoint.len(),
                self.value(output).len()
            )));
        }
        let mut grads = vec![0.0; params.len()];
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(output_adjoint.to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Input => {}
                Op::Linear { input, layer } => {
                    let x = self.value(input);
                    let w = layer.weight.of(params);
                    let mut dx = vec![0.0; layer.in_dim];
                    for (o, &go) in g.iter().enumerate() {
                        grads[layer.bias.offset + o] += go;
                        if go == 0.0 {
                            continue;
                        }
                        let row = o * layer.in_dim;
                        let dw = &mut grads[layer.weight.offset + row..layer.weight.offset + row + layer.in_dim];
                        for ((d, &xv), (dxi, &wv)) in dw
                            .iter_mut()
                            .zip(x)
                            .zip(dx.iter_mut().zip(&w[row..row + layer.in_dim]))
                        {
                            *d += go * xv;
                            *dxi += go * wv;
                        }
                    }
                    accumulate(&mut adj, input, dx);
                }
                Op::Conv3x3 {
                    input,
                    layer,
                    height,
                    width,
                } => {
                    let x = self.value(input);
                    let w = layer.weight.of(params);
                    let plane = height * width;
                    let mut dx = vec![0.0; x.len()];
                    for o in 0..layer.out_channels {
                        let g_plane = &g[o * plane..(o + 1) * plane];
                        grads[layer.bias.offset + o] += g_plane.iter().sum::<f64>();
                        for i in 0..layer.in_channels {
                            let in_plane = &x[i * plane..(i + 1) * plane];
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let widx = ((o * layer.in_channels + i) * 3 + ky) * 3 + kx;
                                    let mut dw = 0.0;
                                    conv_tap(in_plane, g_plane, height, width, ky, kx, |gv, v| {
                                        dw += *gv * v
                                    });
                                    grads[layer.weight.offset + widx] += dw;
                                    let wv = w[widx];
                                    let dx_plane = &mut dx[i * plane..(i + 1) * plane];
                                    conv_tap_transpose(g_plane, dx_plane, height, width, ky, kx, wv);
                                }
                            }
                        }
                    }
                    accumulate(&mut adj, input, dx);
                }
                Op::Silu { input } => {
                    let x = self.value(input);
                    let dx = x
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * (s + v * s * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut adj, input, dx);
                }
                Op::AddPerChannel {
                    input,
                    per_channel,
                    plane,
                } => {
                    let dv = g.chunks_exact(plane).map(|c| c.iter().sum()).collect();
                    accumulate(&mut adj, per_channel, dv);
                    accumulate(&mut adj, input, g);
                }
                Op::AvgPool2 {
                    input,
                    channels,
                    height,
                    width,
                } => {
                    let (oh, ow) = (height / 2, width / 2);
                    let mut dx = vec![0.0; channels * height * width];
                    for c in 0..channels {
                        for y in 0..height {
                            for xi in 0..width {
                                if y / 2 < oh && xi / 2 < ow {
                                    dx[(c * height + y) * width + xi] =
                                        0.25 * g[(c * oh + y / 2) * ow + xi / 2];
                                }
                            }
                        }
                    }
                    accumulate(&mut adj, input, dx);
                }
                Op::UpsampleNearest2 {
                    input,
                    channels,
                    height,
                    width,
                } => {
                    let (oh, ow) = (height * 2, width * 2);
                    let mut dx = vec![0.0; channels * height * width];
                    for c in 0..channels {
                        for y in 0..oh {
                            for xo in 0..ow {
                                dx[(c * height + y / 2) * width + xo / 2] += g[(c * oh + y) * ow + xo];
                            }
                        }
                    }
                    accumulate(&mut adj, input, dx);
                }
                Op::Concat { first, second } => {
                    let split = self.value(first).len();
                    let (a, b) = g.split_at(split);
                    accumulate(&mut adj, first, a.to_vec());
                    accumulate(&mut adj, second, b.to_vec());
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
    match &mut adj[id.0] {
        Some(existing) => existing.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta),
    }
}

/// Visits every `(out[y, x], in[y + ky - 1, x + kx - 1])` pair that lies
/// inside the image.
#[inline]
fn conv_tap(
    input: &[f64],
    out: &[f64],
    height: usize,
    width: usize,
    ky: usize,
    kx: usize,
    mut f: impl FnMut(&f64, f64),
) {
    let (y_lo, y_hi) = tap_range(height, ky);
    let (x_lo, x_hi) = tap_range(width, kx);
    for y in y_lo..y_hi {
        let src_row = (y + ky - 1) * width;
        let dst_row = y * width;
        for x in x_lo..x_hi {
            f(&out[dst_row + x], input[src_row + x + kx - 1]);
        }
    }
}

// Mutable twin of `conv_tap`, used on the forward accumulation path.
#[inline]
fn conv_tap_mut(
    input: &[f64],
    out: &mut [f64],
    height: usize,
    width: usize,
    ky: usize,
    kx: usize,
    mut f: impl FnMut(&mut f64, f64),
) {
    let (y_lo, y_hi) = tap_range(height, ky);
    let (x_lo, x_hi) = tap_range(width, kx);
    for y in y_lo..y_hi {
        let src = &input[(y + ky - 1) * width + x_lo + kx - 1..(y + ky - 1) * width + x_hi + kx - 1];
        let dst = &mut out[y * width + x_lo..y * width + x_hi];
        for (d, &s) in dst.iter_mut().zip(src) {
            f(d, s);
        }
    }
}

#[inline]
fn conv_tap_transpose(
    g_plane: &[f64],
    dx_plane: &mut [f64],
    height: usize,
    width: usize,
    ky: usize,
    kx: usize,
    w: f64,
) {
    let (y_lo, y_hi) = tap_range(height, ky);
    let (x_lo, x_hi) = tap_range(width, kx);
    for y in y_lo..y_hi {
        let src = &g_plane[y * width + x_lo..y * width + x_hi];
        let start = (y + ky - 1) * width + x_lo + kx - 1;
        let dst = &mut dx_plane[start..start + (x_hi - x_lo)];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    }
}

/// Output rows (or columns) `lo..hi` whose tap at offset `k - 1` stays in bounds.
#[inline]
fn tap_range(n: usize, k: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n.saturating_sub(1) } else { n };
    (lo, hi.max(lo))
}
