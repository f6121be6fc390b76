//! Named parameter storage, the Adam update, and checkpoint I/O.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::TensorError;
use crate::seeding::sub_seed;

/// One named differentiable tensor with its gradient and Adam moments.
///
/// Interior mutability keeps binding cheap: forward passes snapshot the
/// value, backward passes accumulate into `grad`, and the optimizer
/// rewrites `value` in place.
pub struct ParamCell {
    name: String,
    shape: Vec<usize>,
    value: RefCell<Vec<f64>>,
    grad: RefCell<Vec<f64>>,
    moment1: RefCell<Vec<f64>>,
    moment2: RefCell<Vec<f64>>,
    touched: Cell<bool>,
}

impl ParamCell {
    fn new(name: String, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let len = value.len();
        Self {
            name,
            shape,
            value: RefCell::new(value),
            grad: RefCell::new(vec![0.0; len]),
            moment1: RefCell::new(vec![0.0; len]),
            moment2: RefCell::new(vec![0.0; len]),
            touched: Cell::new(false),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value_snapshot(&self) -> Vec<f64> {
        self.value.borrow().clone()
    }

    pub fn grad_snapshot(&self) -> Vec<f64> {
        self.grad.borrow().clone()
    }

    pub(super) fn accumulate_grad(&self, g: &[f64]) {
        let mut grad = self.grad.borrow_mut();
        for (o, gi) in grad.iter_mut().zip(g) {
            *o += gi;
        }
        self.touched.set(true);
    }

    pub fn zero_grad(&self) {
        self.grad.borrow_mut().fill(0.0);
        self.touched.set(false);
    }

    /// Read one coordinate of the value.
    pub fn value_at(&self, idx: usize) -> f64 {
        self.value.borrow()[idx]
    }

    /// Overwrite one coordinate of the value (finite-difference probes).
    pub fn set_value_at(&self, idx: usize, v: f64) {
        self.value.borrow_mut()[idx] = v;
    }

    pub fn grad_at(&self, idx: usize) -> f64 {
        self.grad.borrow()[idx]
    }

    /// Replace the whole value buffer.
    pub fn set_value(&self, data: Vec<f64>) {
        assert_eq!(data.len(), self.len());
        *self.value.borrow_mut() = data;
    }
}

/// Initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    UniformFanIn { fan_in: usize },
    Zeros,
    Ones,
}

/// Adam hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-7,
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TPCKPT01";

/// Name-keyed parameter collection.
#[derive(Default)]
pub struct ParamStore {
    params: BTreeMap<String, Rc<ParamCell>>,
    adam_step: Cell<u64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a parameter initialized from `(seed, name)`, so the result is
    /// independent of insertion order.
    pub fn insert_init(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: Init,
        seed: u64,
    ) -> Rc<ParamCell> {
        let len: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
            Init::UniformFanIn { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(seed, name));
                (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        let cell = Rc::new(ParamCell::new(name.to_string(), shape, value));
        self.params.insert(name.to_string(), Rc::clone(&cell));
        cell
    }

    /// Insert a parameter with explicit contents.
    pub fn insert_raw(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        value: Vec<f64>,
    ) -> Result<Rc<ParamCell>, TensorError> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(TensorError::BadShape {
                op: "insert_raw",
                expected: "value length matching the shape",
                got: shape,
            });
        }
        let cell = Rc::new(ParamCell::new(name.to_string(), shape, value));
        self.params.insert(name.to_string(), Rc::clone(&cell));
        Ok(cell)
    }

    pub fn get(&self, name: &str) -> Result<&Rc<ParamCell>, TensorError> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn cells(&self) -> impl Iterator<Item = (&String, &Rc<ParamCell>)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn coordinate_count(&self) -> usize {
        self.params.values().map(|c| c.len()).sum()
    }

    pub fn zero_grads(&self) {
        for cell in self.params.values() {
            cell.zero_grad();
        }
    }

    /// One Adam update over every parameter: decoupled weight decay first,
    /// then the bias-corrected moment update; gradients are zeroed after.
    pub fn adam_step(&self, cfg: &AdamConfig) -> Result<(), TensorError> {
        if !self.params.values().any(|c| c.touched.get()) {
            return Err(TensorError::MissingGrad);
        }
        let t = self.adam_step.get() + 1;
        self.adam_step.set(t);
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for cell in self.params.values() {
            let mut value = cell.value.borrow_mut();
            let grad = cell.grad.borrow();
            let mut m = cell.moment1.borrow_mut();
            let mut v = cell.moment2.borrow_mut();
            let decay = 1.0 - cfg.lr * cfg.weight_decay;
            for i in 0..value.len() {
                value[i] *= decay;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        self.zero_grads();
        Ok(())
    }

    /// Write all parameters: a version tag, then the name-sorted map of
    /// name -> shape -> little-endian f64 payload.
    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        let file = std::fs::File::create(path).map_err(ck_io)?;
        let mut w = BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC).map_err(ck_io)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())
            .map_err(ck_io)?;
        for (name, cell) in &self.params {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(ck_io)?;
            w.write_all(bytes).map_err(ck_io)?;
            w.write_all(&(cell.shape.len() as u32).to_le_bytes())
                .map_err(ck_io)?;
            for dim in &cell.shape {
                w.write_all(&(*dim as u64).to_le_bytes()).map_err(ck_io)?;
            }
            for v in cell.value.borrow().iter() {
                w.write_all(&v.to_le_bytes()).map_err(ck_io)?;
            }
        }
        w.flush().map_err(ck_io)
    }

    /// Load a checkpoint saved by [`ParamStore::save`]; values are restored
    /// bit-identically, optimizer moments start fresh.
    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let file = std::fs::File::open(path).map_err(ck_io)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(ck_io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic/version tag".into()));
        }
        let count = read_u64(&mut r)? as usize;
        let mut store = Self::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(ck_io)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| TensorError::Checkpoint("non-utf8 parameter name".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut value = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf).map_err(ck_io)?;
                value.push(f64::from_le_bytes(buf));
            }
            store
                .params
                .insert(name.clone(), Rc::new(ParamCell::new(name, shape, value)));
        }
        Ok(store)
    }
}

fn ck_io(e: std::io::Error) -> TensorError {
    TensorError::Checkpoint(e.to_string())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(ck_io)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, TensorError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(ck_io)?;
    Ok(u64::from_le_bytes(buf))
}
