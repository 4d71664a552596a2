//! Declarative network architectures, a shape-derivation engine and the
//! structural rules very deep CNNs must satisfy.

pub mod catalog;
mod format;
pub(crate) mod network;

pub use catalog::{catalog, catalog_names, catalog_spec};
pub use format::{emit_spec, parse_spec};
pub use network::{build_network, Layer, LayerCache, MomentumState, Network, ParamGrads};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    Relu,
    Sigmoid,
}

/// One layer of an architecture description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        out_maps: usize,
        kt: usize,
        kf: usize,
        pad_t: usize,
        pad_f: usize,
    },
    Pool {
        pt: usize,
        pf: usize,
        truncate: bool,
        /// Non-overlapping pooling leaves this None (stride == window).
        /// A different stride can be requested in a spec file, but
        /// validation rejects it.
        stride: Option<(usize, usize)>,
    },
    Activation(ActKind),
    Flatten,
    Fc { out_dim: usize },
    /// Marks where a joint network concatenates its auxiliary stream.
    ConcatAux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetFamily {
    /// Subject to the very-deep-CNN structural rules.
    Vdcnn,
    /// Baseline CNN/DNN; exempt from the VDCNN rules.
    Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub name: String,
    /// (n_maps, T, F)
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub n_states: usize,
    pub family: NetFamily,
}

/// Intermediate value shape while walking a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueShape {
    Maps { maps: usize, t: usize, f: usize },
    Flat(usize),
}

impl ValueShape {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            ValueShape::Maps { maps, t, f } => vec![*maps, *t, *f],
            ValueShape::Flat(n) => vec![*n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerShape {
    pub index: usize,
    pub desc: String,
    pub in_shape: ValueShape,
    pub out_shape: ValueShape,
    pub param_count: usize,
    pub receptive_field_t: usize,
    pub receptive_field_f: usize,
}

#[derive(Debug, Clone)]
pub struct ShapeTrace {
    pub layers: Vec<LayerShape>,
    pub total_params: usize,
    pub n_logits: usize,
}

impl ShapeTrace {
    pub fn conv_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.desc.starts_with("conv"))
            .count()
    }

    /// Shape of the last map-valued intermediate, i.e. the input to flatten.
    pub fn final_map_shape(&self) -> Option<(usize, usize, usize)> {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l.out_shape {
                ValueShape::Maps { maps, t, f } => Some((maps, t, f)),
                ValueShape::Flat(_) => None,
            })
    }

    /// Receptive field of the last convolutional layer, (time, freq).
    pub fn last_conv_receptive_field(&self) -> Option<(usize, usize)> {
        self.layers
            .iter()
            .rev()
            .find(|l| l.desc.starts_with("conv"))
            .map(|l| (l.receptive_field_t, l.receptive_field_f))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<4} {:<22} {:>14} {:>14} {:>12} {:>8} {:>8}\n",
            "#", "layer", "in", "out", "params", "rf_t", "rf_f"
        ));
        for l in &self.layers {
            out.push_str(&format!(
                "{:<4} {:<22} {:>14} {:>14} {:>12} {:>8} {:>8}\n",
                l.index,
                l.desc,
                shape_str(&l.in_shape),
                shape_str(&l.out_shape),
                l.param_count,
                l.receptive_field_t,
                l.receptive_field_f
            ));
        }
        out.push_str(&format!("total parameters: {}\n", self.total_params));
        out
    }
}

fn shape_str(s: &ValueShape) -> String {
    match s {
        ValueShape::Maps { maps, t, f } => format!("{maps}x{t}x{f}"),
        ValueShape::Flat(n) => format!("{n}"),
    }
}

/// Walks the layer list, deriving every intermediate shape, per-layer
/// parameter counts and receptive fields. Fails on the first impossible
/// layer. `aux_width` is the width spliced in at a `concat-aux` marker
/// (0 outside joint networks, which also makes the marker an error).
pub fn derive_shapes_with_aux(spec: &ArchitectureSpec, aux_width: usize) -> Result<ShapeTrace> {
    let (maps, t, f) = spec.input_shape;
    if maps == 0 || t == 0 || f == 0 {
        return Err(Error::Shape {
            layer: 0,
            kind: "input".into(),
            detail: format!("non-positive input shape {maps}x{t}x{f}"),
        });
    }
    let mut shape = ValueShape::Maps { maps, t, f };
    // Receptive-field bookkeeping: rf grows by (k-1)*jump per conv/pool,
    // jump multiplies by the pooling stride.
    let (mut rf_t, mut rf_f) = (1usize, 1usize);
    let (mut jump_t, mut jump_f) = (1usize, 1usize);
    let mut trace = Vec::with_capacity(spec.layers.len());
    let mut total = 0usize;

    for (i, layer) in spec.layers.iter().enumerate() {
        let in_shape = shape.clone();
        let (desc, params) = match *layer {
            LayerSpec::Conv {
                out_maps,
                kt,
                kf,
                pad_t,
                pad_f,
            } => {
                let ValueShape::Maps { maps, t, f } = shape else {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "conv".into(),
                        detail: "convolution after flatten".into(),
                    });
                };
                if kt == 0 || kf == 0 || out_maps == 0 {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "conv".into(),
                        detail: format!("degenerate filter {out_maps}@{kt}x{kf}"),
                    });
                }
                if t + 2 * pad_t < kt || f + 2 * pad_f < kf {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "conv".into(),
                        detail: format!(
                            "{kt}x{kf} filter does not fit {t}x{f} input with pad {pad_t}x{pad_f}"
                        ),
                    });
                }
                let t2 = t + 2 * pad_t - kt + 1;
                let f2 = f + 2 * pad_f - kf + 1;
                // Coverage is capped by the input itself; padded stacks
                // would otherwise report fields wider than the input.
                rf_t = (rf_t + (kt - 1) * jump_t).min(spec.input_shape.1);
                rf_f = (rf_f + (kf - 1) * jump_f).min(spec.input_shape.2);
                shape = ValueShape::Maps {
                    maps: out_maps,
                    t: t2,
                    f: f2,
                };
                (
                    format!("conv {out_maps} {kt}x{kf} pad {pad_t}x{pad_f}"),
                    out_maps * maps * kt * kf + out_maps,
                )
            }
            LayerSpec::Pool {
                pt,
                pf,
                truncate,
                stride,
            } => {
                let ValueShape::Maps { maps, t, f } = shape else {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "pool".into(),
                        detail: "pooling after flatten".into(),
                    });
                };
                if let Some(s) = stride {
                    if s != (pt, pf) {
                        return Err(Error::Shape {
                            layer: i,
                            kind: "pool".into(),
                            detail: format!(
                                "stride {}x{} differs from window {pt}x{pf}; only non-overlapping pooling is supported",
                                s.0, s.1
                            ),
                        });
                    }
                }
                if !truncate {
                    if t % pt != 0 {
                        return Err(Error::Divisibility {
                            axis: "time",
                            extent: t,
                            pool: pt,
                        });
                    }
                    if f % pf != 0 {
                        return Err(Error::Divisibility {
                            axis: "frequency",
                            extent: f,
                            pool: pf,
                        });
                    }
                }
                let t2 = t / pt;
                let f2 = f / pf;
                if t2 == 0 || f2 == 0 {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "pool".into(),
                        detail: format!("{pt}x{pf} pooling empties a {t}x{f} map"),
                    });
                }
                rf_t = (rf_t + (pt - 1) * jump_t).min(spec.input_shape.1);
                rf_f = (rf_f + (pf - 1) * jump_f).min(spec.input_shape.2);
                jump_t *= pt;
                jump_f *= pf;
                shape = ValueShape::Maps { maps, t: t2, f: f2 };
                let trunc = if truncate { " trunc" } else { "" };
                (format!("pool {pt}x{pf}{trunc}"), 0)
            }
            LayerSpec::Activation(kind) => {
                let name = match kind {
                    ActKind::Relu => "relu",
                    ActKind::Sigmoid => "sigmoid",
                };
                (name.to_string(), 0)
            }
            LayerSpec::Flatten => {
                let ValueShape::Maps { maps, t: mt, f: mf } = shape else {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "flatten".into(),
                        detail: "input already flat".into(),
                    });
                };
                shape = ValueShape::Flat(maps * mt * mf);
                // Once flattened, every unit sees the whole input.
                rf_t = t;
                rf_f = f;
                ("flatten".to_string(), 0)
            }
            LayerSpec::Fc { out_dim } => {
                let ValueShape::Flat(n) = shape else {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "fc".into(),
                        detail: "fully-connected layer requires flattened input".into(),
                    });
                };
                if out_dim == 0 {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "fc".into(),
                        detail: "zero-width layer".into(),
                    });
                }
                shape = ValueShape::Flat(out_dim);
                rf_t = t;
                rf_f = f;
                (format!("fc {out_dim}"), out_dim * n + out_dim)
            }
            LayerSpec::ConcatAux => {
                let ValueShape::Flat(n) = shape else {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "concat-aux".into(),
                        detail: "concatenation point must come after flatten".into(),
                    });
                };
                if aux_width == 0 {
                    return Err(Error::Shape {
                        layer: i,
                        kind: "concat-aux".into(),
                        detail: "auxiliary stream width unknown outside a joint network".into(),
                    });
                }
                shape = ValueShape::Flat(n + aux_width);
                ("concat-aux".to_string(), 0)
            }
        };
        total += params;
        trace.push(LayerShape {
            index: i,
            desc,
            in_shape,
            out_shape: shape.clone(),
            param_count: params,
            receptive_field_t: rf_t,
            receptive_field_f: rf_f,
        });
    }

    let n_logits = match shape {
        ValueShape::Flat(n) => n,
        ValueShape::Maps { .. } => {
            return Err(Error::Shape {
                layer: spec.layers.len(),
                kind: "output".into(),
                detail: "network does not end in a flat logit vector".into(),
            })
        }
    };
    Ok(ShapeTrace {
        layers: trace,
        total_params: total,
        n_logits,
    })
}

pub fn derive_shapes(spec: &ArchitectureSpec) -> Result<ShapeTrace> {
    derive_shapes_with_aux(spec, 0)
}

/// One broken structural rule.
#[derive(Debug, Clone)]
pub struct Violation {
    pub layer: Option<usize>,
    pub rule: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layer {l}: [{}] {}", self.rule, self.detail),
            None => write!(f, "[{}] {}", self.rule, self.detail),
        }
    }
}

const VDCNN_CHANNELS: [usize; 3] = [64, 128, 256];
const FINAL_MAPS: [(usize, usize); 4] = [(1, 2), (1, 3), (2, 2), (1, 1)];

/// Checks the very-deep-CNN design rules. Baseline-family specs are only
/// checked structurally (shape derivation and output layer).
pub fn validate(spec: &ArchitectureSpec) -> Vec<Violation> {
    let mut violations = Vec::new();

    // Structural rules that apply to every family.
    match spec.layers.last() {
        Some(LayerSpec::Fc { out_dim }) if *out_dim == spec.n_states => {}
        _ => violations.push(Violation {
            layer: None,
            rule: "output-layer",
            detail: format!(
                "network must end in an fc layer of {} states",
                spec.n_states
            ),
        }),
    }
    let trace = match derive_shapes(spec) {
        Ok(t) => Some(t),
        Err(e) => {
            violations.push(Violation {
                layer: None,
                rule: "shape",
                detail: e.to_string(),
            });
            None
        }
    };
    if spec.family == NetFamily::Baseline {
        return violations;
    }

    let mut prev_maps = 0usize;
    let mut fc_hidden = 0usize;
    let fc_total = spec
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Fc { .. }))
        .count();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv { out_maps, kt, kf, .. } => {
                if !(kt == 1 || kt == 3) || !(kf == 1 || kf == 3) {
                    violations.push(Violation {
                        layer: Some(i),
                        rule: "filter-size",
                        detail: format!(
                            "{kt}x{kf} filter; very deep CNNs use 3x3, 1x3 or 3x1 filters"
                        ),
                    });
                }
                if !VDCNN_CHANNELS.contains(&out_maps) {
                    violations.push(Violation {
                        layer: Some(i),
                        rule: "channel-schedule",
                        detail: format!("{out_maps} feature maps; schedule draws from 64, 128, 256"),
                    });
                } else if out_maps < prev_maps {
                    violations.push(Violation {
                        layer: Some(i),
                        rule: "channel-schedule",
                        detail: format!("feature maps decrease from {prev_maps} to {out_maps}"),
                    });
                }
                prev_maps = prev_maps.max(out_maps);
            }
            LayerSpec::Pool { pt, pf, stride, .. } => {
                if pt > 2 || pf > 2 || (pt == 1 && pf == 1) {
                    violations.push(Violation {
                        layer: Some(i),
                        rule: "pool-size",
                        detail: format!("{pt}x{pf} pooling; only 1x2, 2x1 or 2x2 are allowed"),
                    });
                }
                if let Some(s) = stride {
                    if s != (pt, pf) {
                        violations.push(Violation {
                            layer: Some(i),
                            rule: "non-overlapping-pooling",
                            detail: format!(
                                "stride {}x{} on a {pt}x{pf} window; only non-overlapping pooling is used",
                                s.0, s.1
                            ),
                        });
                    }
                }
            }
            LayerSpec::Activation(ActKind::Sigmoid) => {
                violations.push(Violation {
                    layer: Some(i),
                    rule: "activation",
                    detail: "very deep CNNs use ReLU hidden nodes".into(),
                });
            }
            LayerSpec::Fc { .. } => {
                fc_hidden += 1;
            }
            _ => {}
        }
    }
    // The final fc is the softmax layer; the ones before it are hidden.
    if fc_total > 0 && fc_hidden.saturating_sub(1) != 4 {
        violations.push(Violation {
            layer: None,
            rule: "fc-stack",
            detail: format!(
                "{} hidden fully-connected layers before the output; very deep CNNs use 4",
                fc_hidden.saturating_sub(1)
            ),
        });
    }
    if let Some(trace) = &trace {
        if let Some((_, t, f)) = trace.final_map_shape() {
            if !FINAL_MAPS.contains(&(t, f)) {
                violations.push(Violation {
                    layer: None,
                    rule: "final-map",
                    detail: format!(
                        "{t}x{f} map before flatten; expected a small final map (1x1, 1x2, 1x3 or 2x2)"
                    ),
                });
            }
        }
    }
    violations
}
