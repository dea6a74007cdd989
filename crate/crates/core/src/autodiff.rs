//! Scalar-tape differentiation engine.
//!
//! Energy functions are recorded once as a straight-line program over
//! scalar primitives (a Wengert list) and then evaluated many times. The
//! engine supports three queries:
//!
//! 1. forward value,
//! 2. reverse-mode gradient with respect to the coefficient inputs or the
//!    parameter inputs (a numeric sweep, no new nodes),
//! 3. *symbolic* gradient emission: the adjoint computation is appended
//!    to the tape as ordinary nodes, so any scalar expression built on
//!    top of the emitted gradient — a training loss consuming
//!    `grad_p E(p; theta)` — remains differentiable. A plain reverse
//!    sweep over the extended tape then yields the mixed second-order
//!    gradient `grad_theta g(grad_p E)` in one pass.
//!
//! Every primitive is chosen so its adjoint is expressible in the same
//! primitive set, which is what makes the symbolic emission close under
//! differentiation. The non-smooth primitives take subgradient 0 at
//! their kink: `pos_part` has derivative `step(x)` with `step(0) = 0`,
//! and `sqrt_guard`/`recip_guard` return derivative 0 at non-positive
//! arguments, so norms are safe to differentiate at the origin.
//!
//! Node values are per-call scratch, so a shared `Function` may be
//! evaluated from multiple threads concurrently.

use crate::Vector;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    /// Coefficient input `p[i]` (the density-optimization variable).
    Coeff(usize),
    /// Parameter input `theta[i]`.
    Param(usize),
    /// Auxiliary per-evaluation input (molecule data: dsad coefficients,
    /// features, ground-state coefficients).
    Aux(usize),
    Const(f64),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Tanh(NodeId),
    /// sqrt(x) for x > 0, else 0; derivative 0 at x <= 0.
    SqrtGuard(NodeId),
    /// 1/x for x > 0, else 0; derivative -1/x^2 for x > 0, else 0.
    RecipGuard(NodeId),
    /// max(0, x); derivative step(x).
    PosPart(NodeId),
    /// 1 for x > 0, else 0; derivative 0 everywhere.
    Step(NodeId),
}

/// A growable straight-line program. Input nodes are created up front so
/// node ids `0..n_coeff` are the coefficients, the next `n_param` ids the
/// parameters, and the next `n_aux` ids the auxiliary inputs.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    n_coeff: usize,
    n_param: usize,
    n_aux: usize,
}

impl Tape {
    pub fn new(n_coeff: usize, n_param: usize, n_aux: usize) -> Self {
        let mut ops = Vec::with_capacity(n_coeff + n_param + n_aux);
        ops.extend((0..n_coeff).map(Op::Coeff));
        ops.extend((0..n_param).map(Op::Param));
        ops.extend((0..n_aux).map(Op::Aux));
        Self {
            ops,
            n_coeff,
            n_param,
            n_aux,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn coeff_id(&self, i: usize) -> NodeId {
        assert!(i < self.n_coeff);
        i
    }

    pub fn param_id(&self, i: usize) -> NodeId {
        assert!(i < self.n_param);
        self.n_coeff + i
    }

    pub fn aux_id(&self, i: usize) -> NodeId {
        assert!(i < self.n_aux);
        self.n_coeff + self.n_param + i
    }

    pub fn coeff_ids(&self) -> Vec<NodeId> {
        (0..self.n_coeff).collect()
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        (self.n_coeff..self.n_coeff + self.n_param).collect()
    }

    pub fn aux_ids(&self) -> Vec<NodeId> {
        let base = self.n_coeff + self.n_param;
        (base..base + self.n_aux).collect()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        self.ops.len() - 1
    }

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.push(Op::Const(v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn sqrt_guard(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SqrtGuard(a))
    }

    pub fn recip_guard(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RecipGuard(a))
    }

    pub fn pos_part(&mut self, a: NodeId) -> NodeId {
        self.push(Op::PosPart(a))
    }

    pub fn step(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Step(a))
    }

    /// Multiplies a node by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = self.constant(c);
        self.mul(a, c)
    }

    pub fn scale_vec(&mut self, xs: &[NodeId], c: f64) -> Vec<NodeId> {
        let c = self.constant(c);
        xs.iter().map(|&x| self.mul(x, c)).collect()
    }

    pub fn add_vec(&mut self, xs: &[NodeId], ys: &[NodeId]) -> Vec<NodeId> {
        assert_eq!(xs.len(), ys.len());
        xs.iter().zip(ys).map(|(&x, &y)| self.add(x, y)).collect()
    }

    pub fn sub_vec(&mut self, xs: &[NodeId], ys: &[NodeId]) -> Vec<NodeId> {
        assert_eq!(xs.len(), ys.len());
        xs.iter().zip(ys).map(|(&x, &y)| self.sub(x, y)).collect()
    }

    /// Left-to-right inner product; empty input yields the constant 0.
    pub fn dot(&mut self, xs: &[NodeId], ys: &[NodeId]) -> NodeId {
        assert_eq!(xs.len(), ys.len());
        let mut acc = None;
        for (&x, &y) in xs.iter().zip(ys) {
            let term = self.mul(x, y);
            acc = Some(match acc {
                Some(prev) => self.add(prev, term),
                None => term,
            });
        }
        acc.unwrap_or_else(|| self.constant(0.0))
    }

    pub fn sum_squares(&mut self, xs: &[NodeId]) -> NodeId {
        self.dot(xs, xs)
    }

    /// Euclidean norm `sqrt(sum x_i^2)`, with derivative 0 at the origin.
    pub fn norm(&mut self, xs: &[NodeId]) -> NodeId {
        let ss = self.sum_squares(xs);
        self.sqrt_guard(ss)
    }

    /// Dense affine map `y = W x + b`. `weights` is row-major with
    /// `biases.len()` rows and `xs.len()` columns.
    pub fn affine(&mut self, xs: &[NodeId], weights: &[NodeId], biases: &[NodeId]) -> Vec<NodeId> {
        let rows = biases.len();
        let cols = xs.len();
        assert_eq!(weights.len(), rows * cols);
        (0..rows)
            .map(|r| {
                let mut acc = biases[r];
                for (c, &x) in xs.iter().enumerate() {
                    let term = self.mul(weights[r * cols + c], x);
                    acc = self.add(acc, term);
                }
                acc
            })
            .collect()
    }

    /// Appends the adjoint computation of `output` with respect to each
    /// node in `wrt` as new tape nodes and returns their ids. Nodes that
    /// `output` does not depend on map to the constant 0.
    ///
    /// The emitted nodes perform the same arithmetic, in the same order,
    /// as the numeric reverse sweep in [`Function::input_gradient`], so
    /// the two routes agree bitwise.
    pub fn gradient_nodes(&mut self, output: NodeId, wrt: &[NodeId]) -> Vec<NodeId> {
        let frozen_len = self.ops.len();
        assert!(output < frozen_len, "output node out of range");
        let mut adjoint: Vec<Option<NodeId>> = vec![None; frozen_len];
        adjoint[output] = Some(self.constant(1.0));
        for id in (0..frozen_len).rev() {
            let Some(a_bar) = adjoint[id] else { continue };
            match self.ops[id] {
                Op::Coeff(_) | Op::Param(_) | Op::Aux(_) | Op::Const(_) | Op::Step(_) => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adjoint, a, a_bar);
                    self.accumulate(&mut adjoint, b, a_bar);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adjoint, a, a_bar);
                    let neg = self.neg(a_bar);
                    self.accumulate(&mut adjoint, b, neg);
                }
                Op::Mul(a, b) => {
                    let ta = self.mul(a_bar, b);
                    self.accumulate(&mut adjoint, a, ta);
                    let tb = self.mul(a_bar, a);
                    self.accumulate(&mut adjoint, b, tb);
                }
                Op::Neg(a) => {
                    let t = self.neg(a_bar);
                    self.accumulate(&mut adjoint, a, t);
                }
                Op::Tanh(a) => {
                    // d tanh = 1 - tanh^2, reusing the forward node.
                    let sq = self.mul(id, id);
                    let one = self.constant(1.0);
                    let d = self.sub(one, sq);
                    let t = self.mul(a_bar, d);
                    self.accumulate(&mut adjoint, a, t);
                }
                Op::SqrtGuard(a) => {
                    // d sqrt = 1/(2 sqrt), 0 where clamped.
                    let r = self.recip_guard(id);
                    let half = self.constant(0.5);
                    let d = self.mul(half, r);
                    let t = self.mul(a_bar, d);
                    self.accumulate(&mut adjoint, a, t);
                }
                Op::RecipGuard(a) => {
                    // d (1/x) = -1/x^2 = -(value^2), 0 where clamped.
                    let sq = self.mul(id, id);
                    let d = self.neg(sq);
                    let t = self.mul(a_bar, d);
                    self.accumulate(&mut adjoint, a, t);
                }
                Op::PosPart(a) => {
                    let s = self.step(a);
                    let t = self.mul(a_bar, s);
                    self.accumulate(&mut adjoint, a, t);
                }
            }
        }
        wrt.iter()
            .map(|&w| {
                assert!(w < frozen_len, "gradient target out of range");
                adjoint[w].unwrap_or_else(|| self.constant(0.0))
            })
            .collect()
    }

    fn accumulate(&mut self, adjoint: &mut [Option<NodeId>], target: NodeId, term: NodeId) {
        adjoint[target] = Some(match adjoint[target] {
            Some(prev) => self.add(prev, term),
            None => term,
        });
    }
}

fn step_value(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn recip_guard_value(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x
    } else {
        0.0
    }
}

fn sqrt_guard_value(x: f64) -> f64 {
    if x > 0.0 {
        x.sqrt()
    } else {
        0.0
    }
}

/// A finished program with a designated scalar output.
#[derive(Debug, Clone)]
pub struct Function {
    tape: Tape,
    output: NodeId,
}

impl Function {
    pub fn new(tape: Tape, output: NodeId) -> Self {
        assert!(output < tape.len(), "output node out of range");
        Self { tape, output }
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn n_coeff(&self) -> usize {
        self.tape.n_coeff
    }

    pub fn n_param(&self) -> usize {
        self.tape.n_param
    }

    pub fn n_aux(&self) -> usize {
        self.tape.n_aux
    }

    fn check_dims(&self, p: &[f64], theta: &[f64], aux: &[f64]) {
        assert_eq!(p.len(), self.tape.n_coeff, "coefficient dimension mismatch");
        assert_eq!(theta.len(), self.tape.n_param, "parameter dimension mismatch");
        assert_eq!(aux.len(), self.tape.n_aux, "auxiliary dimension mismatch");
    }

    fn forward(&self, p: &[f64], theta: &[f64], aux: &[f64]) -> Vec<f64> {
        self.check_dims(p, theta, aux);
        let mut values: Vec<f64> = Vec::with_capacity(self.tape.ops.len());
        for op in &self.tape.ops {
            let v = match *op {
                Op::Coeff(i) => p[i],
                Op::Param(i) => theta[i],
                Op::Aux(i) => aux[i],
                Op::Const(c) => c,
                Op::Add(a, b) => values[a] + values[b],
                Op::Sub(a, b) => values[a] - values[b],
                Op::Mul(a, b) => values[a] * values[b],
                Op::Neg(a) => -values[a],
                Op::Tanh(a) => values[a].tanh(),
                Op::SqrtGuard(a) => sqrt_guard_value(values[a]),
                Op::RecipGuard(a) => recip_guard_value(values[a]),
                Op::PosPart(a) => values[a].max(0.0),
                Op::Step(a) => step_value(values[a]),
            };
            values.push(v);
        }
        values
    }

    /// Forward evaluation of the output.
    pub fn value(&self, p: &[f64], theta: &[f64], aux: &[f64]) -> f64 {
        self.forward(p, theta, aux)[self.output]
    }

    /// Full forward pass, returning every node value indexed by
    /// [`NodeId`]. Lets callers that track specific node ids (emitted
    /// gradients, embedded energies) read them from a single evaluation.
    pub fn forward_pass(&self, p: &[f64], theta: &[f64], aux: &[f64]) -> Vec<f64> {
        self.forward(p, theta, aux)
    }

    /// Parameter gradient computed from a forward pass obtained with
    /// [`Function::forward_pass`], sparing the repeated forward sweep.
    pub fn param_gradient_from_forward(&self, values: &[f64]) -> Vector {
        assert_eq!(values.len(), self.tape.len(), "forward pass length mismatch");
        let adjoint = self.reverse_sweep(values);
        let base = self.tape.n_coeff;
        Vector::from_iterator(
            self.tape.n_param,
            adjoint[base..base + self.tape.n_param].iter().copied(),
        )
    }

    fn reverse_sweep(&self, values: &[f64]) -> Vec<f64> {
        let mut adjoint = vec![0.0; values.len()];
        adjoint[self.output] = 1.0;
        for id in (0..values.len()).rev() {
            let a_bar = adjoint[id];
            if a_bar == 0.0 {
                continue;
            }
            match self.tape.ops[id] {
                Op::Coeff(_) | Op::Param(_) | Op::Aux(_) | Op::Const(_) | Op::Step(_) => {}
                Op::Add(a, b) => {
                    adjoint[a] += a_bar;
                    adjoint[b] += a_bar;
                }
                Op::Sub(a, b) => {
                    adjoint[a] += a_bar;
                    adjoint[b] += -a_bar;
                }
                Op::Mul(a, b) => {
                    adjoint[a] += a_bar * values[b];
                    adjoint[b] += a_bar * values[a];
                }
                Op::Neg(a) => adjoint[a] += -a_bar,
                Op::Tanh(a) => {
                    let t = values[id];
                    adjoint[a] += a_bar * (1.0 - t * t);
                }
                Op::SqrtGuard(a) => {
                    adjoint[a] += a_bar * (0.5 * recip_guard_value(values[id]));
                }
                Op::RecipGuard(a) => {
                    let r = values[id];
                    adjoint[a] += a_bar * -(r * r);
                }
                Op::PosPart(a) => {
                    adjoint[a] += a_bar * step_value(values[a]);
                }
            }
        }
        adjoint
    }

    /// Reverse-mode gradient with respect to the coefficient inputs only.
    pub fn input_gradient(&self, p: &[f64], theta: &[f64], aux: &[f64]) -> Vector {
        self.value_and_input_gradient(p, theta, aux).1
    }

    pub fn value_and_input_gradient(&self, p: &[f64], theta: &[f64], aux: &[f64]) -> (f64, Vector) {
        let values = self.forward(p, theta, aux);
        let adjoint = self.reverse_sweep(&values);
        let grad = Vector::from_iterator(self.tape.n_coeff, adjoint[..self.tape.n_coeff].iter().copied());
        (values[self.output], grad)
    }

    /// Reverse-mode gradient with respect to the parameter inputs only.
    pub fn param_gradient(&self, p: &[f64], theta: &[f64], aux: &[f64]) -> Vector {
        self.value_and_param_gradient(p, theta, aux).1
    }

    pub fn value_and_param_gradient(&self, p: &[f64], theta: &[f64], aux: &[f64]) -> (f64, Vector) {
        let values = self.forward(p, theta, aux);
        let adjoint = self.reverse_sweep(&values);
        let base = self.tape.n_coeff;
        let grad = Vector::from_iterator(
            self.tape.n_param,
            adjoint[base..base + self.tape.n_param].iter().copied(),
        );
        (values[self.output], grad)
    }
}

/// Parameter gradient of a scalar function of the input gradient:
/// `grad_theta [ g(grad_p f(p; theta)) ]`.
///
/// `g` receives a tape extended with symbolic gradient nodes and must
/// return the id of its scalar result. Training loops that reuse the
/// same `g` should build the extended [`Function`] once and call
/// [`Function::param_gradient`] directly; this helper rebuilds it per
/// call.
pub fn mixed_gradient<G>(f: &Function, p: &[f64], theta: &[f64], aux: &[f64], g: G) -> Vector
where
    G: FnOnce(&mut Tape, &[NodeId]) -> NodeId,
{
    let mut tape = f.tape.clone();
    let coeff_ids = tape.coeff_ids();
    let grad_ids = tape.gradient_nodes(f.output, &coeff_ids);
    let output = g(&mut tape, &grad_ids);
    Function::new(tape, output).param_gradient(p, theta, aux)
}
