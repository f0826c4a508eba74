use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Ordered named tensors packed into one flat buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn from_shapes(shapes: impl IntoIterator<Item = (String, Vec<usize>)>) -> Result<Self> {
        let mut tensors = Vec::new();
        let mut total = 0;
        for (name, shape) in shapes {
            if tensors.iter().any(|t: &TensorSpec| t.name == name) {
                return Err(Error::Format(format!("duplicate tensor name {name}")));
            }
            let spec = TensorSpec {
                name,
                shape,
                offset: total,
            };
            total += spec.numel();
            tensors.push(spec);
        }
        Ok(ParamLayout { tensors, total })
    }

    pub fn for_config(cfg: &ModelConfig) -> Self {
        let d = cfg.model_width;
        let h = cfg.hidden_width();
        let mut shapes = vec![
            ("tok_emb".to_string(), vec![cfg.vocab_size, d]),
            ("pos_emb".to_string(), vec![cfg.context_window, d]),
        ];
        for l in 0..cfg.layer_count {
            let p = |s: &str| format!("h{l}.{s}");
            shapes.extend([
                (p("ln1.g"), vec![d]),
                (p("ln1.b"), vec![d]),
                (p("attn.qkv.w"), vec![d, 3 * d]),
                (p("attn.qkv.b"), vec![3 * d]),
                (p("attn.proj.w"), vec![d, d]),
                (p("attn.proj.b"), vec![d]),
                (p("ln2.g"), vec![d]),
                (p("ln2.b"), vec![d]),
                (p("mlp.fc.w"), vec![d, h]),
                (p("mlp.fc.b"), vec![h]),
                (p("mlp.proj.w"), vec![h, d]),
                (p("mlp.proj.b"), vec![d]),
            ]);
        }
        shapes.push(("lnf.g".to_string(), vec![d]));
        shapes.push(("lnf.b".to_string(), vec![d]));
        shapes.push(("head.w".to_string(), vec![d, cfg.vocab_size]));
        ParamLayout::from_shapes(shapes).expect("generated names are unique")
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub(crate) fn range(&self, name: &str) -> Range<usize> {
        self.get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
            .range()
    }
}

/// Parameter values over a shared layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    layout: Arc<ParamLayout>,
    data: Vec<T>,
}

impl<T: Copy + Default> Params<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![T::default(); layout.total()];
        Params { layout, data }
    }

    pub fn from_data(layout: Arc<ParamLayout>, data: Vec<T>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a layout of {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(Params { layout, data })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Params<U> {
        Params {
            layout: Arc::clone(&self.layout),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Offsets of every tensor, resolved once per layout.
#[derive(Clone, Debug)]
pub(crate) struct Slots {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerSlots>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub head_w: Range<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerSlots {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub mproj_w: Range<usize>,
    pub mproj_b: Range<usize>,
}

impl Slots {
    pub fn new(layout: &ParamLayout, cfg: &ModelConfig) -> Self {
        let layers = (0..cfg.layer_count)
            .map(|l| {
                let r = |s: &str| layout.range(&format!("h{l}.{s}"));
                LayerSlots {
                    ln1_g: r("ln1.g"),
                    ln1_b: r("ln1.b"),
                    qkv_w: r("attn.qkv.w"),
                    qkv_b: r("attn.qkv.b"),
                    proj_w: r("attn.proj.w"),
                    proj_b: r("attn.proj.b"),
                    ln2_g: r("ln2.g"),
                    ln2_b: r("ln2.b"),
                    fc_w: r("mlp.fc.w"),
                    fc_b: r("mlp.fc.b"),
                    mproj_w: r("mlp.proj.w"),
                    mproj_b: r("mlp.proj.b"),
                }
            })
            .collect();
        Slots {
            tok_emb: layout.range("tok_emb"),
            pos_emb: layout.range("pos_emb"),
            layers,
            lnf_g: layout.range("lnf.g"),
            lnf_b: layout.range("lnf.b"),
            head_w: layout.range("head.w"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let layout = ParamLayout::for_config(&ModelConfig::default());
        let mut next = 0;
        for t in layout.tensors() {
            assert_eq!(t.offset, next);
            next += t.numel();
        }
        assert_eq!(next, layout.total());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let layout = Arc::new(ParamLayout::from_shapes([("w".to_string(), vec![2, 3])]).unwrap());
        assert!(Params::<f32>::from_data(Arc::clone(&layout), vec![0.0; 5]).is_err());
        assert!(Params::<f32>::from_data(layout, vec![0.0; 6]).is_ok());
    }
}
