use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::graph::{Graph, Mat, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

/// A named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat, decay: bool) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            decay,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.params[id].value
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.params[id].value
    }

    pub fn param(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter by parameter.
    pub fn soft_update_from(&mut self, online: &ParamStore, tau: f64) {
        assert_eq!(self.len(), online.len(), "target and online layouts differ");
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            assert_eq!(t.value.dim(), o.value.dim());
            t.value.zip_mut_with(&o.value, |t, o| *t = tau * o + (1.0 - tau) * *t);
        }
    }
}

/// How a store's parameters enter a graph: as differentiable leaves or as constants.
#[derive(Debug, Clone, Copy)]
pub enum Bind<'a> {
    Train(&'a ParamStore),
    Frozen(&'a ParamStore),
}

impl<'a> Bind<'a> {
    pub fn var(&self, g: &mut Graph, id: usize) -> Var {
        match self {
            Bind::Train(s) => g.param(id, s.get(id).clone()),
            Bind::Frozen(s) => g.constant(s.get(id).clone()),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        match self {
            Bind::Train(s) | Bind::Frozen(s) => s,
        }
    }
}

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng));
        let b = Array2::from_shape_simple_fn((1, fan_out), || dist.sample(rng));
        Linear {
            weight: store.add(format!("{name}.weight"), w, true),
            bias: store.add(format!("{name}.bias"), b, true),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, bind: Bind, x: Var) -> Var {
        let w = bind.var(g, self.weight);
        let b = bind.var(g, self.bias);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

/// Two linear layers with a GELU between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.0"), fan_in, hidden, rng),
            output: Linear::new(store, &format!("{name}.1"), hidden, fan_out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, bind: Bind, x: Var) -> Var {
        let h = self.hidden.forward(g, bind, x);
        let h = g.gelu(h);
        self.output.forward(g, bind, h)
    }
}

pub fn normal_matrix<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Mat {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}
