use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::Array2;

use super::tape::{Grads, Tape, Var};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SWVE";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
}

/// Named parameter groups plus their Adam moments.
///
/// Each group is a 2-D array; biases are stored as `1 x n` rows.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    step: u64,
}

/// Identifies one group inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a group; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let dim = value.dim();
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Adam step count.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&Array2<f64>, &Array2<f64>) {
        let p = &self.params[id.0];
        (&p.m, &p.v)
    }

    /// Copies parameter values (not optimizer state) from a store with the
    /// same layout.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.dim() != src.value.dim() {
                return Err(Error::Config(format!(
                    "parameter `{}` does not match `{}`",
                    dst.name, src.name
                )));
            }
            dst.value.assign(&src.value);
        }
        Ok(())
    }

    /// Puts every group on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.param(p.value.clone()))
                .collect(),
        }
    }

    /// Puts every group on `tape` as a constant (no gradient).
    pub fn bind_constant(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            grads: self
                .params
                .iter()
                .map(|p| Array2::zeros(p.value.dim()))
                .collect(),
        }
    }

    pub(crate) fn adam_update(
        &mut self,
        grads: &Gradients,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<()> {
        if grads.grads.len() != self.params.len() {
            return Err(Error::Config("gradient layout does not match store".into()));
        }
        for (p, g) in self.params.iter().zip(&grads.grads) {
            if g.dim() != p.value.dim() {
                return Err(Error::Config(format!("gradient shape for `{}`", p.name)));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::numerical(format!("gradient of {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
        Ok(())
    }

    /// Writes the flat binary checkpoint.
    ///
    /// Layout: `SWVE`, version `u32`, then per group: name length `u32`,
    /// UTF-8 name, rank `u32`, dims `u64` each, row-major `f64` values. All
    /// integers and reals are little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&2u32.to_le_bytes())?;
            let (r, c) = p.value.dim();
            w.write_all(&(r as u64).to_le_bytes())?;
            w.write_all(&(c as u64).to_le_bytes())?;
            for x in p.value.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`write_checkpoint`](Self::write_checkpoint).
    /// Rank-1 groups load as `1 x n`.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { buf: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut store = ParameterStore::new();
        while cur.pos < bytes.len() {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            let dims: Vec<usize> = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<_>>()?;
            let (rows, cols) = match dims.as_slice() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => return Err(Error::Format(format!("unsupported rank {rank}"))),
            };
            let mut vals = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                vals.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            let arr = Array2::from_shape_vec((rows, cols), vals)
                .map_err(|e| Error::Format(e.to_string()))?;
            store.insert(name, arr).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Tape handles for every group of one store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradient per group; groups the loss does not touch get zeros.
    pub fn collect(&self, tape: &Tape, grads: &Grads) -> Gradients {
        Gradients {
            grads: self
                .vars
                .iter()
                .map(|&v| match grads.get(v) {
                    Some(g) => g.clone(),
                    None => Array2::zeros(tape.shape(v)),
                })
                .collect(),
        }
    }
}

/// Gradient arrays aligned with a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Array2<f64>>,
}

impl Gradients {
    /// Wraps raw arrays; they must follow the order of the target store.
    pub fn from_arrays(grads: Vec<Array2<f64>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grads.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * c);
        }
    }
}
