//! Feed-forward networks over a flat parameter vector.
//!
//! Layer `l` owns two segments, `layer{l}.weight` (out × in) and
//! `layer{l}.bias` (1 × out), so a layer computes `X Wᵀ + b`. A store may carry
//! further named segments after the network's own (the energy model keeps its
//! expert weights there).

use serde::{Deserialize, Serialize};

use super::graph::{sigmoid, softplus, Graph, Smoothness, Var};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn is_twice_differentiable(self) -> bool {
        !matches!(self, Activation::LeakyRelu(_))
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    fn apply_graph(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::LeakyRelu(s) => g.leaky_relu(v, s),
            Activation::Tanh => g.tanh(v),
            Activation::Sigmoid => g.sigmoid(v),
            Activation::Softplus => g.softplus(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
    hidden: Vec<Activation>,
    output: OutputActivation,
}

impl MlpSpec {
    /// `widths` lists input, hidden and output widths; `hidden` has one entry
    /// per hidden layer.
    pub fn new(widths: Vec<usize>, hidden: Vec<Activation>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument("MLP widths must be positive".into()));
        }
        if hidden.len() != widths.len() - 2 {
            return Err(Error::DimensionMismatch {
                context: "MlpSpec hidden activations",
                expected: widths.len() - 2,
                found: hidden.len(),
            });
        }
        for a in &hidden {
            if let Activation::LeakyRelu(s) = a {
                if !s.is_finite() {
                    return Err(Error::InvalidArgument("leaky-relu slope must be finite".into()));
                }
            }
        }
        Ok(MlpSpec {
            widths,
            hidden,
            output,
        })
    }

    /// Same activation on every hidden layer.
    pub fn uniform(widths: Vec<usize>, activation: Activation, output: OutputActivation) -> Result<Self> {
        let n_hidden = widths.len().saturating_sub(2);
        Self::new(widths, vec![activation; n_hidden], output)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn hidden(&self) -> &[Activation] {
        &self.hidden
    }

    pub fn output(&self) -> OutputActivation {
        self.output
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn is_twice_differentiable(&self) -> bool {
        self.hidden.iter().all(|a| a.is_twice_differentiable())
    }

    pub fn with_output(&self, output: OutputActivation) -> Self {
        MlpSpec {
            output,
            ..self.clone()
        }
    }

    pub fn layout(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            out.push(Segment::new(format!("layer{l}.weight"), fan_out, fan_in, offset));
            offset += fan_in * fan_out;
            out.push(Segment::new(format!("layer{l}.bias"), 1, fan_out, offset));
            offset += fan_out;
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.layout().iter().map(Segment::len).sum()
    }

    fn check_store(&self, params: &ParamStore) -> Result<()> {
        let expected = self.layout();
        let ok = params.layout.len() >= expected.len()
            && expected.iter().zip(&params.layout).all(|(a, b)| a == b);
        if !ok {
            return Err(Error::InvalidArgument(
                "parameter layout does not match the network".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_width() {
            return Err(Error::DimensionMismatch {
                context: "MLP input width",
                expected: self.input_width(),
                found: cols,
            });
        }
        Ok(())
    }

    /// Batched forward pass without recording a graph.
    ///
    /// Performs the same floating-point operations in the same order as
    /// [`MlpSpec::forward_graph`], so both give bit-identical outputs.
    pub fn forward(&self, params: &ParamStore, x: &Matrix) -> Result<Matrix> {
        self.check_store(params)?;
        self.check_input(x.cols())?;
        let mut h = x.clone();
        for l in 0..self.n_layers() {
            let w = params.segment_matrix(2 * l);
            let b = params.segment_slice(2 * l + 1);
            let mut z = h.matmul_t(&w, false, true)?;
            for r in 0..z.rows() {
                for (v, bias) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bias;
                }
            }
            h = if l + 1 < self.n_layers() {
                let act = self.hidden[l];
                z.map(|v| act.apply(v))
            } else {
                match self.output {
                    OutputActivation::Identity => z,
                    OutputActivation::Sigmoid => z.map(sigmoid),
                }
            };
        }
        if !h.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(h)
    }

    /// Records the forward pass on `g`. `vars` are the store's segment
    /// variables from [`ParamStore::to_graph`].
    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        if vars.len() < 2 * self.n_layers() {
            return Err(Error::DimensionMismatch {
                context: "MLP parameter variables",
                expected: 2 * self.n_layers(),
                found: vars.len(),
            });
        }
        self.check_input(g.shape(x).1)?;
        let mut h = x;
        for l in 0..self.n_layers() {
            let z = g.matmul_t(h, vars[2 * l], false, true)?;
            let z = g.add_row(z, vars[2 * l + 1])?;
            h = if l + 1 < self.n_layers() {
                self.hidden[l].apply_graph(g, z)
            } else {
                match self.output {
                    OutputActivation::Identity => z,
                    OutputActivation::Sigmoid => g.sigmoid(z),
                }
            };
        }
        Ok(h)
    }
}

/// A named rows × cols block of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, offset: usize) -> Self {
        Segment {
            name: name.into(),
            rows,
            cols,
            offset,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    layout: Vec<Segment>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layout = spec.layout();
        let n = layout.iter().map(Segment::len).sum();
        ParamStore {
            layout,
            values: vec![0.0; n],
        }
    }

    /// Uniform `±√(6/(fan_in + fan_out))` weights and zero biases.
    pub fn glorot(spec: &MlpSpec, rng: &mut RngStream) -> Self {
        let mut store = Self::zeros(spec);
        for seg in store.layout.clone() {
            if seg.name.ends_with(".weight") {
                store.fill_glorot(&seg, rng);
            }
        }
        store
    }

    fn fill_glorot(&mut self, seg: &Segment, rng: &mut RngStream) {
        let limit = (6.0 / (seg.rows + seg.cols) as f64).sqrt();
        for v in &mut self.values[seg.offset..seg.offset + seg.len()] {
            *v = rng.uniform_range(-limit, limit);
        }
    }

    /// Builds a store from an explicit layout, validating contiguity and finiteness.
    pub fn from_parts(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        for seg in &layout {
            if seg.offset != offset {
                return Err(Error::InvalidArgument(format!(
                    "segment {} starts at {}, expected {offset}",
                    seg.name, seg.offset
                )));
            }
            offset += seg.len();
        }
        if offset != values.len() {
            return Err(Error::DimensionMismatch {
                context: "ParamStore values",
                expected: offset,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter values".into()));
        }
        Ok(ParamStore { layout, values })
    }

    /// Appends a segment of the given values.
    pub fn push_segment(&mut self, name: impl Into<String>, m: &Matrix) {
        let seg = Segment::new(name, m.rows(), m.cols(), self.values.len());
        self.values.extend_from_slice(m.data());
        self.layout.push(seg);
    }

    /// Appends a Glorot-initialized rows × cols segment.
    pub fn push_glorot_segment(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut RngStream) {
        self.push_segment(name, &Matrix::zeros(rows, cols));
        let seg = self.layout.last().expect("just pushed").clone();
        self.fill_glorot(&seg, rng);
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
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

    pub fn segment_index(&self, name: &str) -> Option<usize> {
        self.layout.iter().position(|s| s.name == name)
    }

    pub fn segment_slice(&self, index: usize) -> &[f64] {
        let s = &self.layout[index];
        &self.values[s.offset..s.offset + s.len()]
    }

    pub fn segment_matrix(&self, index: usize) -> Matrix {
        let s = &self.layout[index];
        Matrix::from_vec(s.rows, s.cols, self.segment_slice(index).to_vec())
            .expect("segment length matches its shape")
    }

    pub fn set_segment(&mut self, index: usize, m: &Matrix) -> Result<()> {
        let s = self.layout[index].clone();
        if m.shape() != (s.rows, s.cols) {
            return Err(Error::DimensionMismatch {
                context: "ParamStore::set_segment",
                expected: s.len(),
                found: m.len(),
            });
        }
        self.values[s.offset..s.offset + s.len()].copy_from_slice(m.data());
        Ok(())
    }

    /// One leaf per segment, in layout order.
    pub fn to_graph(&self, g: &mut Graph) -> Vec<Var> {
        (0..self.layout.len())
            .map(|i| g.leaf(self.segment_matrix(i)))
            .collect()
    }

    /// Concatenates per-segment gradient nodes into a flat vector in layout order.
    pub fn flatten_grads(&self, g: &Graph, grads: &[Var]) -> Result<Vec<f64>> {
        if grads.len() != self.layout.len() {
            return Err(Error::DimensionMismatch {
                context: "ParamStore::flatten_grads",
                expected: self.layout.len(),
                found: grads.len(),
            });
        }
        let mut out = Vec::with_capacity(self.values.len());
        for (seg, &v) in self.layout.iter().zip(grads) {
            let m = g.value(v);
            if m.shape() != (seg.rows, seg.cols) {
                return Err(Error::DimensionMismatch {
                    context: "ParamStore::flatten_grads segment",
                    expected: seg.len(),
                    found: m.len(),
                });
            }
            out.extend_from_slice(m.data());
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok(out)
    }
}

/// Value and flat parameter gradient of a scalar loss built by `build`.
///
/// `build` receives a fresh graph and the store's segment variables.
pub fn grad_params<F>(params: &ParamStore, smoothness: Smoothness, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_smoothness(smoothness);
    let vars = params.to_graph(&mut g);
    let loss = build(&mut g, &vars)?;
    g.check_finite(loss, "loss")?;
    let value = g.value(loss).item();
    let grads = g.grad(loss, &vars)?;
    Ok((value, params.flatten_grads(&g, &grads)?))
}

/// Per-row input gradients `∇ₓ f(xᵢ)` of a scalar-output network.
pub fn grad_input(spec: &MlpSpec, params: &ParamStore, x: &Matrix) -> Result<Matrix> {
    if spec.output_width() != 1 {
        return Err(Error::DimensionMismatch {
            context: "grad_input needs a scalar output",
            expected: 1,
            found: spec.output_width(),
        });
    }
    spec.check_store(params)?;
    let mut g = Graph::with_smoothness(Smoothness::PiecewiseConstant);
    let vars = params.to_graph(&mut g);
    let xv = g.leaf(x.clone());
    let out = spec.forward_graph(&mut g, &vars, xv)?;
    // rows are independent, so the gradient of the sum holds each row's gradient
    let total = g.sum(out);
    let gx = g.grad(total, &[xv])?[0];
    g.check_finite(gx, "input gradient")?;
    Ok(g.value(gx).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(act: Activation, out: OutputActivation) -> MlpSpec {
        MlpSpec::uniform(vec![3, 5, 4, 2], act, out).unwrap()
    }

    #[test]
    fn spec_validation_and_layout() {
        assert!(MlpSpec::new(vec![2], vec![], OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![2, 0, 1], vec![Activation::Tanh], OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![2, 3, 1], vec![], OutputActivation::Identity).is_err());
        let s = small_spec(Activation::Tanh, OutputActivation::Identity);
        assert_eq!(s.n_params(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
        let layout = s.layout();
        assert_eq!(layout[2].name, "layer1.weight");
        assert_eq!((layout[2].rows, layout[2].cols), (4, 5));
        assert!(s.is_twice_differentiable());
        assert!(!small_spec(Activation::LeakyRelu(0.2), OutputActivation::Identity).is_twice_differentiable());
    }

    #[test]
    fn zero_network_outputs_zero_and_affine_case() {
        let s = small_spec(Activation::Softplus, OutputActivation::Identity);
        let p = ParamStore::zeros(&s);
        let x = Matrix::filled(4, 3, 0.7);
        assert_eq!(s.forward(&p, &x).unwrap(), Matrix::zeros(4, 2));

        let lin = MlpSpec::new(vec![2, 3], vec![], OutputActivation::Identity).unwrap();
        let mut p = ParamStore::zeros(&lin);
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0], vec![3.0, 0.5]]).unwrap();
        p.set_segment(0, &w).unwrap();
        p.set_segment(1, &Matrix::row_vector(&[0.1, 0.2, 0.3])).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![-2.0, 0.5]]).unwrap();
        let y = lin.forward(&p, &x).unwrap();
        let expected = Matrix::from_rows(&[vec![3.1, -0.8, 3.8], vec![-0.9, -0.3, -5.45]]).unwrap();
        assert!(y.sub(&expected).max_abs() < 1e-14);
    }

    #[test]
    fn graph_and_plain_forward_agree_bitwise() {
        let mut rng = RngStream::new(4);
        for act in [Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid, Activation::Softplus] {
            let s = small_spec(act, OutputActivation::Sigmoid);
            let p = ParamStore::glorot(&s, &mut rng);
            let x = rng.normal_matrix(6, 3);
            let plain = s.forward(&p, &x).unwrap();
            let mut g = Graph::new();
            let vars = p.to_graph(&mut g);
            let xv = g.leaf(x);
            let out = s.forward_graph(&mut g, &vars, xv).unwrap();
            assert_eq!(g.value(out), &plain);
        }
    }

    #[test]
    fn glorot_limits_and_zero_biases() {
        let s = MlpSpec::uniform(vec![4, 128, 2], Activation::Tanh, OutputActivation::Identity).unwrap();
        let p = ParamStore::glorot(&s, &mut RngStream::new(1));
        let lim0 = (6.0 / 132.0f64).sqrt();
        assert!(p.segment_slice(0).iter().all(|v| v.abs() <= lim0));
        assert!(p.segment_slice(1).iter().all(|&v| v == 0.0));
        assert!(p.segment_slice(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_input_linear_and_softplus() {
        let lin = MlpSpec::new(vec![3, 1], vec![], OutputActivation::Identity).unwrap();
        let mut p = ParamStore::zeros(&lin);
        p.set_segment(0, &Matrix::row_vector(&[0.5, -1.0, 2.0])).unwrap();
        p.set_segment(1, &Matrix::scalar(4.0)).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 9.0]]).unwrap();
        let gx = grad_input(&lin, &p, &x).unwrap();
        for r in 0..2 {
            assert_eq!(gx.row(r), &[0.5, -1.0, 2.0]);
        }

        // softplus(wᵀx) as a one-hidden-unit net with identity read-out
        let s = MlpSpec::new(vec![2, 1, 1], vec![Activation::Softplus], OutputActivation::Identity).unwrap();
        let mut p = ParamStore::zeros(&s);
        p.set_segment(0, &Matrix::row_vector(&[0.3, -0.7])).unwrap();
        p.set_segment(2, &Matrix::scalar(1.0)).unwrap();
        let x = Matrix::row_vector(&[1.5, 0.4]);
        let gx = grad_input(&s, &p, &x).unwrap();
        let a = 0.3 * 1.5 - 0.7 * 0.4;
        let sg = 1.0 / (1.0 + f64::exp(-a));
        assert!((gx.get(0, 0) - sg * 0.3).abs() < 1e-15);
        assert!((gx.get(0, 1) + sg * 0.7).abs() < 1e-15);

        let vec_out = small_spec(Activation::Tanh, OutputActivation::Identity);
        assert!(grad_input(&vec_out, &ParamStore::zeros(&vec_out), &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn grad_params_half_square_norm_and_constant() {
        let s = small_spec(Activation::Tanh, OutputActivation::Identity);
        let p = ParamStore::glorot(&s, &mut RngStream::new(2));
        let (_, grad) = grad_params(&p, Smoothness::Strict, |g, vars| {
            let mut total = g.scalar(0.0);
            for &v in vars {
                let sq = g.square(v);
                let s = g.sum(sq);
                total = g.add(total, s)?;
            }
            Ok(g.scale(total, 0.5))
        })
        .unwrap();
        assert_eq!(grad, p.values());
        let (_, grad) = grad_params(&p, Smoothness::Strict, |g, _| Ok(g.scalar(3.0))).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn store_round_trip_and_validation() {
        let s = small_spec(Activation::Tanh, OutputActivation::Identity);
        let mut p = ParamStore::glorot(&s, &mut RngStream::new(3));
        p.push_glorot_segment("extra", 2, 3, &mut RngStream::new(4));
        assert_eq!(p.segment_index("extra"), Some(6));
        let q = ParamStore::from_parts(p.layout().to_vec(), p.values().to_vec()).unwrap();
        assert_eq!(p, q);
        // a store with trailing segments still drives the network
        assert!(s.forward(&p, &Matrix::zeros(1, 3)).is_ok());
        let mut bad = p.values().to_vec();
        bad[0] = f64::NAN;
        assert!(ParamStore::from_parts(p.layout().to_vec(), bad).is_err());
        assert!(ParamStore::from_parts(p.layout().to_vec(), vec![0.0; 3]).is_err());
    }
}
