//! Small named-parameter store and dense layers on top of candle.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

use crate::error::{HaoiError, Result};

pub fn device() -> Device {
    Device::Cpu
}

#[derive(Debug, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    frozen: Vec<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f32>) -> Result<Var> {
        let name = name.into();
        if self.vars.contains_key(&name) {
            return Err(HaoiError::Invariant(format!("parameter {name} registered twice")));
        }
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &device())?)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    /// Uniform in `[-scale, scale]`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut impl Rng) -> Result<Var> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-scale..=scale) as f32).collect();
        self.add(name, shape, values)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> Result<Var> {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }

    /// Excludes every parameter whose name starts with `prefix` from [`Self::trainable`].
    pub fn freeze_prefix(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(n, _)| !self.is_frozen(n))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path).map_err(HaoiError::from)
    }

    /// Overwrites every registered parameter from a file; names and shapes must match exactly.
    pub fn load(&self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(HaoiError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "weights file not found"),
            ));
        }
        let loaded = candle_core::safetensors::load(path, &device())?;
        self.assign(&loaded, &path.display().to_string())
    }

    pub fn assign(&self, tensors: &HashMap<String, Tensor>, source: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| HaoiError::validation(format!("{source}: missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(HaoiError::validation(format!(
                    "{source}: parameter {name} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        if let Some(extra) = tensors.keys().find(|k| !self.vars.contains_key(*k)) {
            return Err(HaoiError::validation(format!("{source}: unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        let scale = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &[input, output], scale, rng)?,
            bias: store.constant(format!("{name}.bias"), &[output], 0.0)?,
        })
    }

    pub fn zeros(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: store.constant(format!("{name}.weight"), &[input, output], 0.0)?,
            bias: store.constant(format!("{name}.bias"), &[output], 0.0)?,
        })
    }

    /// `x · W + b` over the last dimension of a rank-2 or rank-3 input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = match x.rank() {
            2 => x.matmul(self.weight.as_tensor())?,
            3 => {
                let (b, n, d) = x.dims3()?;
                x.reshape((b * n, d))?
                    .matmul(self.weight.as_tensor())?
                    .reshape((b, n, self.weight.dims()[1]))?
            }
            r => return Err(HaoiError::Invariant(format!("linear layer on rank-{r} input"))),
        };
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Dense layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Self::build(store, name, widths, false, rng)
    }

    /// Same as [`Self::new`] with the output layer initialized to zero.
    pub fn with_zero_output(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Self::build(store, name, widths, true, rng)
    }

    fn build(store: &mut ParamStore, name: &str, widths: &[usize], zero_last: bool, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(HaoiError::Invariant(format!("mlp {name} needs at least two widths")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_last && i + 1 == n {
                    Linear::zeros(store, &lname, widths[i], widths[i + 1])
                } else {
                    Linear::new(store, &lname, widths[i], widths[i + 1], rng)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Var,
    pub bias: Var,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.constant(format!("{name}.gain"), &[dim], 1.0)?,
            bias: store.constant(format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::layer_norm_slow(
            x,
            self.gain.as_tensor(),
            self.bias.as_tensor(),
            1e-5,
        )?)
    }
}

pub fn tensor2(values: Vec<f32>, rows: usize, cols: usize) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, (rows, cols), &device())?)
}

pub fn to_rows_f64(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t
        .to_dtype(DType::F32)?
        .to_vec2::<f32>()?
        .into_iter()
        .map(|r| r.into_iter().map(f64::from).collect())
        .collect())
}
