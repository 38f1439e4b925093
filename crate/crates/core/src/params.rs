//! Named parameter trees.
//!
//! Model weights live off-tape in plain [`Param`] structs organized as
//! nested groups. Groups expose a deterministic walk over `(path, tensor)`
//! pairs, used for initialization order, optimizer state alignment, and
//! checkpoints, and a `bind` step that copies the current values onto a
//! [`Tape`] as leaves for one forward pass.

use rand::Rng;

use crate::tensor::{Tape, TensorId};

/// One trainable tensor, stored off-tape between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Param { data, shape }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param { data: vec![0.0; n], shape }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param { data: vec![1.0; n], shape }
    }

    /// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
    pub fn kaiming(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Self {
        assert!(fan_in > 0, "fan_in must be positive");
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Param { data, shape }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub(crate) fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

/// Deterministic traversal of every trainable tensor (and every persistent
/// non-trainable buffer) in a parameter group.
pub trait ParamWalk {
    fn walk<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Param));
    fn walk_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Param));
    fn walk_buffers<'a>(&'a self, _path: &str, _f: &mut dyn FnMut(String, &'a [f64])) {}
    fn walk_buffers_mut(&mut self, _path: &str, _f: &mut dyn FnMut(String, &mut Vec<f64>)) {}
}

impl ParamWalk for Param {
    fn walk<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(path.to_string(), self);
    }
    fn walk_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(path.to_string(), self);
    }
}

impl<T: ParamWalk> ParamWalk for Option<T> {
    fn walk<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Param)) {
        if let Some(x) = self {
            x.walk(path, f);
        }
    }
    fn walk_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Param)) {
        if let Some(x) = self {
            x.walk_mut(path, f);
        }
    }
    fn walk_buffers<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        if let Some(x) = self {
            x.walk_buffers(path, f);
        }
    }
    fn walk_buffers_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        if let Some(x) = self {
            x.walk_buffers_mut(path, f);
        }
    }
}

impl<T: ParamWalk> ParamWalk for Vec<T> {
    fn walk<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Param)) {
        for (i, x) in self.iter().enumerate() {
            x.walk(&join(path, &i.to_string()), f);
        }
    }
    fn walk_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, x) in self.iter_mut().enumerate() {
            x.walk_mut(&join(path, &i.to_string()), f);
        }
    }
    fn walk_buffers<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        for (i, x) in self.iter().enumerate() {
            x.walk_buffers(&join(path, &i.to_string()), f);
        }
    }
    fn walk_buffers_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        for (i, x) in self.iter_mut().enumerate() {
            x.walk_buffers_mut(&join(path, &i.to_string()), f);
        }
    }
}

/// Implements [`ParamWalk`] for a struct by recursing into the listed
/// fields in declaration order.
macro_rules! param_group {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::params::ParamWalk for $ty {
            fn walk<'a>(
                &'a self,
                path: &str,
                f: &mut dyn FnMut(String, &'a $crate::params::Param),
            ) {
                $( self.$field.walk(&$crate::params::join(path, stringify!($field)), f); )*
            }
            fn walk_mut(
                &mut self,
                path: &str,
                f: &mut dyn FnMut(String, &mut $crate::params::Param),
            ) {
                $( self.$field.walk_mut(&$crate::params::join(path, stringify!($field)), f); )*
            }
            fn walk_buffers<'a>(
                &'a self,
                path: &str,
                f: &mut dyn FnMut(String, &'a [f64]),
            ) {
                $( self.$field.walk_buffers(
                    &$crate::params::join(path, stringify!($field)), f); )*
            }
            fn walk_buffers_mut(
                &mut self,
                path: &str,
                f: &mut dyn FnMut(String, &mut Vec<f64>),
            ) {
                $( self.$field.walk_buffers_mut(
                    &$crate::params::join(path, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use param_group;

pub fn named_params<T: ParamWalk>(group: &T) -> Vec<(String, &Param)> {
    let mut out = Vec::new();
    group.walk("", &mut |name, p| out.push((name, p)));
    out
}

/// Total number of trainable scalar values in a group.
pub fn param_count<T: ParamWalk>(group: &T) -> usize {
    let mut n = 0;
    group.walk("", &mut |_, p| n += p.numel());
    n
}

/// Copies parameters onto a tape for one forward pass, remembering the
/// `(path, tensor)` binding so gradients can be read back by name.
pub struct Binder<'a> {
    pub tape: &'a mut Tape,
    ids: Vec<(String, TensorId)>,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &'a mut Tape) -> Self {
        Binder { tape, ids: Vec::new() }
    }

    pub fn bind(&mut self, path: &str, p: &Param) -> TensorId {
        let id = if self.tape.grad_enabled() {
            self.tape.leaf_grad(p.data.clone(), p.shape.clone())
        } else {
            self.tape.leaf(p.data.clone(), p.shape.clone())
        };
        self.ids.push((path.to_string(), id));
        id
    }

    pub fn finish(self) -> Bindings {
        Bindings { ids: self.ids }
    }
}

/// The name-to-tensor map produced by a bind pass.
pub struct Bindings {
    ids: Vec<(String, TensorId)>,
}

impl Bindings {
    pub fn id(&self, path: &str) -> TensorId {
        self.ids
            .iter()
            .find(|(n, _)| n == path)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("no bound parameter named {path}"))
    }

    pub fn names(&self) -> Vec<&str> {
        self.ids.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Gradient of every bound parameter, by name, after a backward pass.
    pub fn gradients<'t>(&self, tape: &'t Tape) -> Vec<(&str, &'t [f64])> {
        self.ids
            .iter()
            .map(|(n, id)| {
                let g = tape
                    .grad(*id)
                    .unwrap_or_else(|| panic!("parameter {n} has no gradient"));
                (n.as_str(), g)
            })
            .collect()
    }
}
