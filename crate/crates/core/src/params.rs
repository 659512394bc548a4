//! Named model parameters, their initialization, and the `WSTW` weight file.
//!
//! File layout (all integers `u32` little-endian):
//!
//! ```text
//! "WSTW" | version | count | count × { name_len | name (UTF-8) | ndim | dims[ndim] | f32 LE payload }
//! ```
//!
//! Payloads are row-major in the tensor's own layout (`Cout×Cin×kh×kw`
//! for convolution weights).

use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 4] = b"WSTW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T: Element = f32> {
    params: IndexMap<String, Tensor<T>>,
    grads: IndexMap<String, Tensor<T>>,
}

/// Parameters registered on a tape, addressable by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: IndexMap::new(),
            grads: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            grads: IndexMap::new(),
        }
    }

    /// Register every parameter as a tracked leaf on `tape`.
    pub fn bind<U: Element>(&self, tape: &mut Tape<U>) -> Result<Bound> {
        let mut vars = IndexMap::with_capacity(self.params.len());
        for (k, v) in &self.params {
            vars.insert(k.clone(), tape.param(v.cast())?);
        }
        Ok(Bound { vars })
    }

    /// Copy gradients from a tape after `backward`. Parameters that did
    /// not influence the loss get a zero gradient.
    pub fn collect_grads<U: Element>(&mut self, tape: &Tape<U>, bound: &Bound) -> Result<()> {
        self.grads.clear();
        for (name, p) in &self.params {
            let var = bound.get(name)?;
            let g = match tape.grad(var) {
                Some(g) => g.cast(),
                None => Tensor::zeros(p.shape().to_vec()),
            };
            self.grads.insert(name.clone(), g);
        }
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn grads(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        self.grads.clear();
    }
}

impl ParameterStore<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("weight file: bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "weight file: unsupported version {version}"
            )));
        }
        let count = r.u32()?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("weight file: name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store
                .insert(name, Tensor::new(dims, data)?)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("weight file: trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("weight file: truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Seeded parameter initializer (ChaCha8 stream).
///
/// Convolution weights are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
/// with `fan_in = Cin·kh·kw`; biases start at zero.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Adds `{name}.w` (`cout×cin×k×k`) and `{name}.b` (`cout`).
    pub fn conv(&mut self, store: &mut ParameterStore, name: &str, cout: usize, cin: usize, k: usize) -> Result<()> {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let w = Tensor::from_fn([cout, cin, k, k], |_| self.rng.random_range(-bound..bound) as f32);
        store.insert(format!("{name}.w"), w)?;
        store.insert(format!("{name}.b"), Tensor::zeros([cout]))
    }

    /// Like [`Init::conv`] but with all-zero weights.
    pub fn conv_zero(&mut self, store: &mut ParameterStore, name: &str, cout: usize, cin: usize, k: usize) -> Result<()> {
        store.insert(format!("{name}.w"), Tensor::zeros([cout, cin, k, k]))?;
        store.insert(format!("{name}.b"), Tensor::zeros([cout]))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }
}
