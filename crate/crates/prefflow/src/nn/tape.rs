//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Losses are recorded as a Wengert list: each node stores its value and the
//! local partials with respect to its parents, laid out contiguously. A
//! single reverse sweep then accumulates adjoints. Inputs (the differentiated
//! parameters) must be registered first so their adjoints sit at the front of
//! the adjoint vector.
//!
//! The op set is deliberately small: scalar arithmetic, the activations used
//! by the regressor, and two fused n-ary ops (`dot_affine`, `sq_dist`) that
//! keep node counts proportional to neurons rather than weights.

use crate::error::{Error, Result};
use crate::math;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

/// Reverse-mode tape.
pub struct Tape {
    vals: Vec<f64>,
    /// Prefix offsets into `parents`/`partials`; `edge_start.len() == nodes + 1`.
    edge_start: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    n_inputs: usize,
    sealed_inputs: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            edge_start: vec![0],
            parents: Vec::new(),
            partials: Vec::new(),
            n_inputs: 0,
            sealed_inputs: false,
        }
    }

    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    fn push(&mut self, value: f64, edges: &[(Var, f64)]) -> Var {
        let id = self.vals.len() as u32;
        self.vals.push(value);
        for &(p, d) in edges {
            self.parents.push(p.0);
            self.partials.push(d);
        }
        self.edge_start.push(self.parents.len() as u32);
        Var(id)
    }

    /// Register a differentiated input. Must precede all other nodes.
    pub fn input(&mut self, value: f64) -> Var {
        assert!(
            !self.sealed_inputs,
            "inputs must be registered before any other node"
        );
        self.n_inputs += 1;
        let id = self.vals.len() as u32;
        self.vals.push(value);
        self.edge_start.push(self.parents.len() as u32);
        Var(id)
    }

    /// Register a slice of inputs at once.
    pub fn inputs(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    /// A node the sweep treats as constant (zero incoming partials).
    pub fn constant(&mut self, value: f64) -> Var {
        self.sealed_inputs = true;
        self.push(value, &[])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.sealed_inputs = true;
        let v = self.value(a) + self.value(b);
        self.push(v, &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.sealed_inputs = true;
        let v = self.value(a) - self.value(b);
        self.push(v, &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.sealed_inputs = true;
        let (va, vb) = (self.value(a), self.value(b));
        self.push(va * vb, &[(a, vb), (b, va)])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.sealed_inputs = true;
        let v = k * self.value(a);
        self.push(v, &[(a, k)])
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        self.sealed_inputs = true;
        let v = self.value(a) + k;
        self.push(v, &[(a, 1.0)])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.sealed_inputs = true;
        let va = self.value(a);
        self.push(va * va, &[(a, 2.0 * va)])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.sealed_inputs = true;
        let t = self.value(a).tanh();
        self.push(t, &[(a, 1.0 - t * t)])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.sealed_inputs = true;
        let x = self.value(a);
        self.push(math::silu(x), &[(a, math::silu_deriv(x))])
    }

    /// `ln(1 + exp(x))`, the stable form of `-ln sigma(-x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.sealed_inputs = true;
        let x = self.value(a);
        self.push(math::softplus(x), &[(a, math::sigmoid(x))])
    }

    /// Fused `sum_i w_i * x_i + b`.
    pub fn dot_affine(&mut self, w: &[Var], x: &[Var], b: Var) -> Var {
        assert_eq!(w.len(), x.len(), "dot_affine operand lengths differ");
        self.sealed_inputs = true;
        let mut v = self.value(b);
        for (&wi, &xi) in w.iter().zip(x) {
            v += self.value(wi) * self.value(xi);
        }
        let id = self.vals.len() as u32;
        self.vals.push(v);
        for (&wi, &xi) in w.iter().zip(x) {
            self.parents.push(wi.0);
            self.partials.push(self.vals[xi.0 as usize]);
            self.parents.push(xi.0);
            self.partials.push(self.vals[wi.0 as usize]);
        }
        self.parents.push(b.0);
        self.partials.push(1.0);
        self.edge_start.push(self.parents.len() as u32);
        Var(id)
    }

    /// Fused `sum_i (y_i - target_i)^2` against a constant target.
    pub fn sq_dist(&mut self, y: &[Var], target: &[f64]) -> Var {
        assert_eq!(y.len(), target.len(), "sq_dist operand lengths differ");
        self.sealed_inputs = true;
        let mut v = 0.0;
        let id = self.vals.len() as u32;
        for (&yi, &ti) in y.iter().zip(target) {
            let d = self.vals[yi.0 as usize] - ti;
            v += d * d;
            self.parents.push(yi.0);
            self.partials.push(2.0 * d);
        }
        self.vals.push(v);
        self.edge_start.push(self.parents.len() as u32);
        Var(id)
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        self.sealed_inputs = true;
        let v: f64 = xs.iter().map(|&x| self.value(x)).sum();
        let edges: Vec<(Var, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
        self.push(v, &edges)
    }

    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Contract("mean over empty node list".into()));
        }
        self.sealed_inputs = true;
        let k = 1.0 / xs.len() as f64;
        let v: f64 = xs.iter().map(|&x| self.value(x)).sum::<f64>() * k;
        let edges: Vec<(Var, f64)> = xs.iter().map(|&x| (x, k)).collect();
        Ok(self.push(v, &edges))
    }

    /// Reverse sweep from `loss`; returns adjoints of the registered inputs.
    pub fn backward(&self, loss: Var) -> Vec<f64> {
        let n = self.vals.len();
        let mut adj = vec![0.0; n];
        adj[loss.0 as usize] = 1.0;
        for i in (self.n_inputs..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let (s, e) = (self.edge_start[i] as usize, self.edge_start[i + 1] as usize);
            for k in s..e {
                adj[self.parents[k] as usize] += a * self.partials[k];
            }
        }
        adj.truncate(self.n_inputs);
        adj
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
