use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("dimensions must be positive, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Number of rows when viewed as a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Row width when viewed as a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, index: usize) -> Result<&[f64]> {
        if index >= self.rows() {
            return Err(Error::Range {
                what: "table",
                index,
                size: self.rows(),
            });
        }
        let w = self.cols();
        Ok(&self.values[index * w..(index + 1) * w])
    }

    pub fn row_mut(&mut self, index: usize) -> Result<&mut [f64]> {
        if index >= self.rows() {
            return Err(Error::Range {
                what: "table",
                index,
                size: self.rows(),
            });
        }
        let w = self.cols();
        Ok(&mut self.values[index * w..(index + 1) * w])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Handle to a parameter inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    tensor: Tensor,
    // Lookup tables only receive optimizer updates on rows touched since the
    // last update.
    row_sparse: bool,
    touched: BTreeSet<usize>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

/// Named trainable tensors plus Adam moment buffers and the update counter.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    slots: Vec<Slot>,
    by_name: BTreeMap<String, ParamId>,
    step: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a dense parameter. It is marked `requires_grad`.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        self.insert(name.into(), tensor, false)
    }

    /// Register a lookup table whose rows are updated only when looked up.
    pub fn add_table(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        if tensor.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "lookup table must be 2-d, got {:?}",
                tensor.shape()
            )));
        }
        self.insert(name.into(), tensor, true)
    }

    fn insert(&mut self, name: String, mut tensor: Tensor, row_sparse: bool) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(Error::duplicate("parameter", name));
        }
        tensor.requires_grad = true;
        tensor.grad = None;
        let id = ParamId(self.slots.len());
        let n = tensor.len();
        self.by_name.insert(name.clone(), id);
        self.slots.push(Slot {
            name,
            tensor,
            row_sparse,
            touched: BTreeSet::new(),
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::unknown("parameter", name))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self.id(name)?;
        Ok(self.get_mut(id))
    }

    pub fn is_row_sparse(&self, id: ParamId) -> bool {
        self.slots[id.0].row_sparse
    }

    pub fn set_trainable(&mut self, id: ParamId, on: bool) {
        let slot = &mut self.slots[id.0];
        slot.tensor.set_requires_grad(on);
        if !on {
            slot.touched.clear();
        }
    }

    /// Number of optimizer updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        let slot = &self.slots[id.0];
        (&slot.first_moment, &slot.second_moment)
    }

    /// Add a backward pass's gradients into the stored `grad` buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, entry) in &grads.entries {
            let slot = &mut self.slots[id.0];
            if !slot.tensor.requires_grad {
                continue;
            }
            let buf = slot
                .tensor
                .grad
                .get_or_insert_with(|| vec![0.0; entry.values.len()]);
            for (b, g) in buf.iter_mut().zip(&entry.values) {
                *b += g;
            }
            if slot.row_sparse {
                slot.touched.extend(entry.rows.iter().copied());
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for slot in &mut self.slots {
            slot.tensor.grad = None;
            slot.touched.clear();
        }
    }

    pub fn has_grad(&self) -> bool {
        self.slots.iter().any(|s| s.tensor.grad.is_some())
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|s| s.tensor.all_finite())
    }

    /// Visit every trainable parameter holding a gradient, together with its
    /// moment buffers and the rows an update may touch (`None` = all rows).
    pub(crate) fn for_each_update<F>(&mut self, mut f: F)
    where
        F: FnMut(&mut [f64], &[f64], &mut [f64], &mut [f64], Option<(&BTreeSet<usize>, usize)>),
    {
        for slot in &mut self.slots {
            if !slot.tensor.requires_grad {
                continue;
            }
            let Some(grad) = slot.tensor.grad.take() else {
                continue;
            };
            let rows = if slot.row_sparse {
                Some((&slot.touched, slot.tensor.cols()))
            } else {
                None
            };
            f(
                &mut slot.tensor.values,
                &grad,
                &mut slot.first_moment,
                &mut slot.second_moment,
                rows,
            );
            slot.touched.clear();
        }
        self.step += 1;
    }

    /// Serialize all parameter values as text: one line per parameter,
    /// `name<TAB>d1xd2...<TAB>v1 v2 ...`, values with 17 significant digits.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        for (name, id) in &self.by_name {
            let t = &self.slots[id.0].tensor;
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let _ = write!(out, "{name}\t{}\t", dims.join("x"));
            for (i, v) in t.values.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    /// Overwrite values from a checkpoint produced by [`to_checkpoint`].
    /// Every parameter of this set must be present with an identical shape.
    ///
    /// [`to_checkpoint`]: ParameterSet::to_checkpoint
    pub fn load_checkpoint(&mut self, text: &str) -> Result<()> {
        let entries = read_checkpoint(text)?;
        let mut seen = BTreeSet::new();
        for (name, tensor) in entries {
            let id = self.id(&name)?;
            let slot = &mut self.slots[id.0];
            if slot.tensor.shape != tensor.shape {
                return Err(Error::Shape(format!(
                    "checkpoint shape {:?} for {name} does not match {:?}",
                    tensor.shape, slot.tensor.shape
                )));
            }
            slot.tensor.values = tensor.values;
            seen.insert(name);
        }
        if let Some(missing) = self.by_name.keys().find(|n| !seen.contains(*n)) {
            return Err(Error::Invalid(format!("checkpoint lacks parameter {missing}")));
        }
        Ok(())
    }
}

/// Parse a text checkpoint into `(name, tensor)` pairs in file order.
pub fn read_checkpoint(text: &str) -> Result<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(name), Some(dims), Some(values)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::parse(lineno, "expected name, shape and values"));
        };
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(lineno, format!("bad shape {dims:?}: {e}")))?;
        let values = values
            .split_ascii_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(lineno, format!("bad value: {e}")))?;
        let tensor = Tensor::new(shape, values).map_err(|e| Error::parse(lineno, e.to_string()))?;
        out.push((name.to_string(), tensor));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub(crate) struct GradEntry {
    pub(crate) values: Vec<f64>,
    pub(crate) rows: BTreeSet<usize>,
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) entries: BTreeMap<ParamId, GradEntry>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries.get(&id).map(|e| e.values.as_slice())
    }

    /// Rows of a lookup table that received gradient.
    pub fn rows(&self, id: ParamId) -> Option<&BTreeSet<usize>> {
        self.entries.get(&id).map(|e| &e.rows)
    }

    pub(crate) fn entry(&mut self, id: ParamId, len: usize) -> &mut GradEntry {
        self.entries.entry(id).or_insert_with(|| GradEntry {
            values: vec![0.0; len],
            rows: BTreeSet::new(),
        })
    }
}
