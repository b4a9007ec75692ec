//! Declarative description of the 28-layer regressor.

use serde::{Deserialize, Serialize};

use super::LocnetError;
use crate::tensorize::{CHANNELS, COLS, ROWS};

pub const LAYER_COUNT: usize = 28;
pub const POOL_LAYER: usize = 15;
pub const FLATTEN_LAYER: usize = 19;
pub const OUTPUT_UNITS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Pool,
    Flatten,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Selu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    /// 1-based position in the network.
    pub index: usize,
    pub kind: LayerKind,
    /// Output channels for conv layers, units for dense layers, 0 otherwise.
    pub units: usize,
    /// Kernel `(h, w)` for conv and pool layers.
    pub kernel: Option<[usize; 2]>,
    pub activation: Activation,
    pub frozen: bool,
}

/// Activation tensor shape, channel-major. Dense outputs are `(units, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBudget {
    pub total: [f64; 2],
    pub dense: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    /// `(rows, subcarriers, channels)` of the input tensor.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub param_budget: Option<ParamBudget>,
}

/// Per-layer parameter counts (weights + biases), index 0 is layer 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamAudit {
    pub per_layer: Vec<usize>,
}

impl ParamAudit {
    pub fn total(&self) -> usize {
        self.per_layer.iter().sum()
    }

    /// Parameters of layers 20..=28.
    pub fn dense(&self) -> usize {
        self.per_layer[FLATTEN_LAYER..].iter().sum()
    }

    pub fn prefix(&self, k: usize) -> usize {
        self.per_layer[..k.min(self.per_layer.len())].iter().sum()
    }
}

impl std::fmt::Display for ParamAudit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, n) in self.per_layer.iter().enumerate() {
            writeln!(f, "layer {:>2}: {n}", i + 1)?;
        }
        write!(f, "total: {} (dense {})", self.total(), self.dense())
    }
}

/// Expected layer kind at 1-based position `index`.
pub fn kind_at(index: usize) -> LayerKind {
    match index {
        POOL_LAYER => LayerKind::Pool,
        FLATTEN_LAYER => LayerKind::Flatten,
        i if i < FLATTEN_LAYER => LayerKind::Conv,
        _ => LayerKind::Dense,
    }
}

impl ModelSpec {
    /// Builds a spec from the 17 conv channel counts (layers 1-14, 16-18) and
    /// the width of dense layers 20-27.
    pub fn from_schedule(name: &str, conv_channels: [usize; 17], dense_width: usize) -> Self {
        let mut conv = conv_channels.iter();
        let layers = (1..=LAYER_COUNT)
            .map(|index| {
                let kind = kind_at(index);
                let (units, kernel, activation) = match kind {
                    LayerKind::Conv => (*conv.next().unwrap(), Some([3, 3]), Activation::Selu),
                    LayerKind::Pool => (0, Some([2, 2]), Activation::Linear),
                    LayerKind::Flatten => (0, None, Activation::Linear),
                    LayerKind::Dense if index == LAYER_COUNT => (OUTPUT_UNITS, None, Activation::Linear),
                    LayerKind::Dense => (dense_width, None, Activation::Selu),
                };
                LayerSpec {
                    index,
                    kind,
                    units,
                    kernel,
                    activation,
                    frozen: false,
                }
            })
            .collect();
        Self {
            name: name.to_string(),
            input_shape: [ROWS, COLS, CHANNELS],
            layers,
            param_budget: None,
        }
    }

    /// The full-size network: about 5.6M parameters, 2.3M of them dense.
    pub fn paper_default() -> Self {
        let mut spec = Self::from_schedule(
            "default",
            [
                32, 32, 32, 32, 64, 64, 64, 64, 128, 128, 128, 128, 256, 256, 256, 256, 256,
            ],
            16,
        );
        spec.param_budget = Some(ParamBudget {
            total: [5.4e6, 6.6e6],
            dense: [1.6e6, 2.6e6],
        });
        spec
    }

    /// Default schedule with conv channels divided by 8 and dense width 8.
    pub fn tiny() -> Self {
        Self::from_schedule("tiny", [4, 4, 4, 4, 8, 8, 8, 8, 16, 16, 16, 16, 32, 32, 32, 32, 32], 8)
    }

    /// Default schedule with conv channels divided by 16 and dense width 8.
    pub fn micro() -> Self {
        Self::from_schedule("micro", [2, 2, 2, 2, 4, 4, 4, 4, 8, 8, 8, 8, 16, 16, 16, 16, 16], 8)
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::paper_default()),
            "tiny" => Some(Self::tiny()),
            "micro" => Some(Self::micro()),
            _ => None,
        }
    }

    pub fn input(&self) -> Shape {
        Shape {
            c: self.input_shape[2],
            h: self.input_shape[0],
            w: self.input_shape[1],
        }
    }

    pub fn frozen_flags(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.frozen).collect()
    }

    /// Number of leading frozen layers.
    pub fn frozen_prefix(&self) -> usize {
        self.layers.iter().take_while(|l| l.frozen).count()
    }

    /// Structural checks; does not apply the parameter budget.
    pub fn validate(&self) -> Result<(), LocnetError> {
        let bad = |msg: String| Err(LocnetError::InvalidSpec(msg));
        if self.layers.len() != LAYER_COUNT {
            return bad(format!("{} layers, expected {LAYER_COUNT}", self.layers.len()));
        }
        if self.input_shape.contains(&0) {
            return bad(format!("input shape {:?} has an empty axis", self.input_shape));
        }
        for (pos, l) in self.layers.iter().enumerate() {
            let index = pos + 1;
            if l.index != index {
                return bad(format!("layer at position {index} has index {}", l.index));
            }
            if l.kind != kind_at(index) {
                return bad(format!("layer {index} is {:?}, expected {:?}", l.kind, kind_at(index)));
            }
            let expected_act = match l.kind {
                LayerKind::Conv => Activation::Selu,
                LayerKind::Dense if index == LAYER_COUNT => Activation::Linear,
                LayerKind::Dense => Activation::Selu,
                LayerKind::Pool | LayerKind::Flatten => Activation::Linear,
            };
            if l.activation != expected_act {
                return bad(format!(
                    "layer {index} activation {:?}, expected {expected_act:?}",
                    l.activation
                ));
            }
            match l.kind {
                LayerKind::Conv => match l.kernel {
                    Some([kh, kw]) if kh % 2 == 1 && kw % 2 == 1 && l.units > 0 => {}
                    _ => return bad(format!("conv layer {index} needs odd kernel and > 0 channels")),
                },
                LayerKind::Pool => match l.kernel {
                    Some([kh, kw]) if kh > 0 && kw > 0 => {}
                    _ => return bad(format!("pool layer {index} needs a kernel")),
                },
                LayerKind::Dense if l.units == 0 => return bad(format!("dense layer {index} has 0 units")),
                _ => {}
            }
        }
        if self.layers[LAYER_COUNT - 1].units != OUTPUT_UNITS {
            return bad(format!("output layer must have {OUTPUT_UNITS} units"));
        }
        let shapes = self.output_shapes();
        if shapes[POOL_LAYER - 1].is_empty() {
            return bad("pooling collapses the feature map".into());
        }
        Ok(())
    }

    /// Output shape of every layer, index 0 is layer 1.
    pub fn output_shapes(&self) -> Vec<Shape> {
        let mut cur = self.input();
        self.layers
            .iter()
            .map(|l| {
                cur = match l.kind {
                    LayerKind::Conv => Shape { c: l.units, ..cur },
                    LayerKind::Pool => {
                        let [kh, kw] = l.kernel.unwrap_or([1, 1]);
                        Shape {
                            c: cur.c,
                            h: cur.h / kh.max(1),
                            w: cur.w / kw.max(1),
                        }
                    }
                    LayerKind::Flatten => Shape {
                        c: cur.len(),
                        h: 1,
                        w: 1,
                    },
                    LayerKind::Dense => Shape { c: l.units, h: 1, w: 1 },
                };
                cur
            })
            .collect()
    }

    /// Input shape of every layer, index 0 is layer 1.
    pub fn input_shapes(&self) -> Vec<Shape> {
        let mut v = vec![self.input()];
        v.extend(self.output_shapes());
        v.truncate(LAYER_COUNT);
        v
    }

    pub fn param_audit(&self) -> ParamAudit {
        let per_layer = self
            .layers
            .iter()
            .zip(self.input_shapes())
            .map(|(l, input)| match l.kind {
                LayerKind::Conv => {
                    let [kh, kw] = l.kernel.unwrap_or([1, 1]);
                    kh * kw * input.c * l.units + l.units
                }
                LayerKind::Dense => input.len() * l.units + l.units,
                LayerKind::Pool | LayerKind::Flatten => 0,
            })
            .collect();
        ParamAudit { per_layer }
    }

    /// Checks the parameter budget when the spec carries one.
    pub fn check_budget(&self) -> Result<ParamAudit, LocnetError> {
        let audit = self.param_audit();
        if let Some(b) = self.param_budget {
            let total = audit.total() as f64;
            let dense = audit.dense() as f64;
            if total < b.total[0] || total > b.total[1] || dense < b.dense[0] || dense > b.dense[1] {
                return Err(LocnetError::Budget {
                    audit: audit.to_string(),
                });
            }
        }
        Ok(audit)
    }

    pub fn trainable_params(&self) -> usize {
        let audit = self.param_audit();
        self.layers
            .iter()
            .zip(&audit.per_layer)
            .filter(|(l, _)| !l.frozen)
            .map(|(_, n)| n)
            .sum()
    }
}
