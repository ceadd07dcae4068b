//! The four networks: generator, product-of-experts energy, Wasserstein/JS
//! critic and Stein critic.

use serde::{Deserialize, Serialize};

use crate::autodiff::graph::{softplus, Graph, Var};
use crate::autodiff::{Activation, Checkpoint, MlpSpec, OutputActivation, ParamStore};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngStream, SampleBatch};

pub const DATA_DIM: usize = 2;
pub const HIDDEN_WIDTH: usize = 128;
pub const NOISE_DIM: usize = 4;
pub const N_EXPERTS: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.2;

fn meta_field<'a>(ck: &'a Checkpoint, key: &str) -> Result<&'a serde_json::Value> {
    ck.meta
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing meta field {key:?}")))
}

fn from_meta<T: for<'de> Deserialize<'de>>(ck: &Checkpoint, key: &str) -> Result<T> {
    serde_json::from_value(meta_field(ck, key)?.clone())
        .map_err(|e| Error::Checkpoint(format!("meta field {key:?}: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    StandardNormal,
    /// Uniform on `[-1, 1]^k`.
    UniformCube,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub noise: NoiseKind,
    pub spec: MlpSpec,
    pub params: ParamStore,
}

impl Generator {
    pub fn new(spec: MlpSpec, noise: NoiseKind, params: ParamStore) -> Result<Self> {
        if params.layout().len() != spec.layout().len() {
            return Err(Error::InvalidArgument("generator parameters do not match its spec".into()));
        }
        Ok(Generator { noise, spec, params })
    }

    pub fn init(spec: MlpSpec, noise: NoiseKind, rng: &mut RngStream) -> Self {
        let params = ParamStore::glorot(&spec, rng);
        Generator { noise, spec, params }
    }

    /// 4 → 128 → 128 → 2 with leaky-relu(0.2) and standard-normal noise.
    pub fn default_spec() -> MlpSpec {
        MlpSpec::uniform(
            vec![NOISE_DIM, HIDDEN_WIDTH, HIDDEN_WIDTH, DATA_DIM],
            Activation::LeakyRelu(LEAKY_SLOPE),
            OutputActivation::Identity,
        )
        .expect("valid default")
    }

    pub fn noise_dim(&self) -> usize {
        self.spec.input_width()
    }

    pub fn data_dim(&self) -> usize {
        self.spec.output_width()
    }

    pub fn sample_noise(&self, n: usize, rng: &mut RngStream) -> Matrix {
        match self.noise {
            NoiseKind::StandardNormal => rng.normal_matrix(n, self.noise_dim()),
            NoiseKind::UniformCube => rng.uniform_matrix(n, self.noise_dim(), -1.0, 1.0),
        }
    }

    pub fn forward(&self, z: &Matrix) -> Result<SampleBatch> {
        self.spec.forward(&self.params, z)
    }

    pub fn generate(&self, n: usize, rng: &mut RngStream) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::InvalidArgument("cannot generate an empty batch".into()));
        }
        self.forward(&self.sample_noise(n, rng))
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], z: Var) -> Result<Var> {
        self.spec.forward_graph(g, vars, z)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "generator",
            self.spec.clone(),
            serde_json::json!({ "noise": self.noise }),
            self.params.clone(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        ck.expect_kind("generator")?;
        Self::new(ck.spec.clone(), from_meta(ck, "noise")?, ck.params.clone())
    }
}

/// `E(x) = Σᵢ softplus(−(Wᵢ·n(x) + bᵢ))` over learned features `n(x)`.
///
/// The feature network's parameters are followed in the same store by two
/// segments, `expert_w` (experts × features) and `expert_b` (1 × experts).
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub feature: MlpSpec,
    pub params: ParamStore,
}

impl EnergyModel {
    pub fn new(feature: MlpSpec, params: ParamStore) -> Result<Self> {
        let n_feature = feature.layout().len();
        let layout = params.layout();
        let ok = layout.len() == n_feature + 2
            && layout[n_feature].name == "expert_w"
            && layout[n_feature].cols == feature.output_width()
            && layout[n_feature + 1].name == "expert_b"
            && layout[n_feature + 1].rows == 1
            && layout[n_feature + 1].cols == layout[n_feature].rows;
        if !ok {
            return Err(Error::InvalidArgument("energy parameters do not match its feature network".into()));
        }
        Ok(EnergyModel { feature, params })
    }

    pub fn init(feature: MlpSpec, n_experts: usize, rng: &mut RngStream) -> Result<Self> {
        if n_experts == 0 {
            return Err(Error::InvalidArgument("need at least one expert".into()));
        }
        let mut params = ParamStore::glorot(&feature, rng);
        params.push_glorot_segment("expert_w", n_experts, feature.output_width(), rng);
        params.push_segment("expert_b", &Matrix::zeros(1, n_experts));
        Self::new(feature, params)
    }

    /// Builds a model from explicit expert weights (rows are experts).
    pub fn with_experts(feature: MlpSpec, feature_params: &ParamStore, w: &Matrix, b: &[f64]) -> Result<Self> {
        let mut params = ParamStore::from_parts(
            feature_params.layout()[..feature.layout().len()].to_vec(),
            feature_params.values()[..feature.n_params()].to_vec(),
        )?;
        params.push_segment("expert_w", w);
        params.push_segment("expert_b", &Matrix::row_vector(b));
        Self::new(feature, params)
    }

    /// 2 → 128 → 128 → 4 with tanh, four experts.
    pub fn default_spec() -> MlpSpec {
        MlpSpec::uniform(
            vec![DATA_DIM, HIDDEN_WIDTH, HIDDEN_WIDTH, N_EXPERTS],
            Activation::Tanh,
            OutputActivation::Identity,
        )
        .expect("valid default")
    }

    pub fn n_experts(&self) -> usize {
        self.params.layout()[self.expert_w_index()].rows
    }

    pub fn data_dim(&self) -> usize {
        self.feature.input_width()
    }

    fn expert_w_index(&self) -> usize {
        self.feature.layout().len()
    }

    /// Per-row energies.
    pub fn energy(&self, x: &Matrix) -> Result<Vec<f64>> {
        let feats = self.feature.forward(&self.params, x)?;
        let w = self.params.segment_matrix(self.expert_w_index());
        let b = self.params.segment_slice(self.expert_w_index() + 1);
        let a = feats.matmul_t(&w, false, true)?;
        let out: Vec<f64> = a
            .row_iter()
            .map(|row| row.iter().zip(b).map(|(v, bias)| softplus(-(v + bias))).sum())
            .collect();
        if out.iter().any(|e: &f64| !e.is_finite()) {
            return Err(Error::NonFinite("energy".into()));
        }
        Ok(out)
    }

    /// Per-row scores `−∇ₓE(xᵢ)`.
    pub fn score(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let vars = self.params.to_graph(&mut g);
        let xv = g.leaf(x.clone());
        let s = self.score_graph(&mut g, &vars, xv)?;
        g.check_finite(s, "score")?;
        Ok(g.value(s).clone())
    }

    /// Energies as an n×1 node.
    pub fn energy_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let n_feature = self.expert_w_index();
        let feats = self.feature.forward_graph(g, &vars[..n_feature], x)?;
        let a = g.matmul_t(feats, vars[n_feature], false, true)?;
        let a = g.add_row(a, vars[n_feature + 1])?;
        let neg = g.neg(a);
        let sp = g.softplus(neg);
        Ok(g.sum_cols(sp))
    }

    /// Scores as an n×d node, differentiable in the parameters.
    pub fn score_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let e = self.energy_graph(g, vars, x)?;
        let total = g.sum(e);
        let grad = g.grad(total, &[x])?[0];
        Ok(g.neg(grad))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "energy",
            self.feature.clone(),
            serde_json::json!({ "n_experts": self.n_experts() }),
            self.params.clone(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        ck.expect_kind("energy")?;
        Self::new(ck.spec.clone(), ck.params.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    Wasserstein,
    /// Sigmoid output, used as a GAN discriminator.
    Js,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinCritic {
    pub mode: CriticMode,
    pub spec: MlpSpec,
    pub params: ParamStore,
}

impl WassersteinCritic {
    /// The output activation of `spec` is overridden by the mode.
    pub fn new(spec: MlpSpec, mode: CriticMode, params: ParamStore) -> Result<Self> {
        if spec.output_width() != 1 {
            return Err(Error::DimensionMismatch {
                context: "critic output width",
                expected: 1,
                found: spec.output_width(),
            });
        }
        let spec = spec.with_output(match mode {
            CriticMode::Wasserstein => OutputActivation::Identity,
            CriticMode::Js => OutputActivation::Sigmoid,
        });
        if params.layout() != spec.layout().as_slice() {
            return Err(Error::InvalidArgument("critic parameters do not match its spec".into()));
        }
        Ok(WassersteinCritic { mode, spec, params })
    }

    pub fn init(spec: MlpSpec, mode: CriticMode, rng: &mut RngStream) -> Result<Self> {
        let params = ParamStore::glorot(&spec, rng);
        Self::new(spec, mode, params)
    }

    /// 2 → 128 → 128 → 1 with leaky-relu(0.2).
    pub fn default_spec() -> MlpSpec {
        MlpSpec::uniform(
            vec![DATA_DIM, HIDDEN_WIDTH, HIDDEN_WIDTH, 1],
            Activation::LeakyRelu(LEAKY_SLOPE),
            OutputActivation::Identity,
        )
        .expect("valid default")
    }

    pub fn value(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.spec.forward(&self.params, x)?.into_vec())
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        self.spec.forward_graph(g, vars, x)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "critic",
            self.spec.clone(),
            serde_json::json!({ "mode": self.mode }),
            self.params.clone(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        ck.expect_kind("critic")?;
        Self::new(ck.spec.clone(), from_meta(ck, "mode")?, ck.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteinCriticNet {
    pub spec: MlpSpec,
    pub params: ParamStore,
}

impl SteinCriticNet {
    pub fn new(spec: MlpSpec, params: ParamStore) -> Result<Self> {
        if spec.output_width() != spec.input_width() {
            return Err(Error::DimensionMismatch {
                context: "Stein critic output width",
                expected: spec.input_width(),
                found: spec.output_width(),
            });
        }
        if params.layout() != spec.layout().as_slice() {
            return Err(Error::InvalidArgument("Stein critic parameters do not match its spec".into()));
        }
        Ok(SteinCriticNet { spec, params })
    }

    pub fn init(spec: MlpSpec, rng: &mut RngStream) -> Result<Self> {
        let params = ParamStore::glorot(&spec, rng);
        Self::new(spec, params)
    }

    /// 2 → 128 → 128 → 2 with tanh: its divergence is differentiated again
    /// during training, which needs a twice-differentiable activation.
    pub fn default_spec() -> MlpSpec {
        MlpSpec::uniform(
            vec![DATA_DIM, HIDDEN_WIDTH, HIDDEN_WIDTH, DATA_DIM],
            Activation::Tanh,
            OutputActivation::Identity,
        )
        .expect("valid default")
    }

    pub fn value(&self, x: &Matrix) -> Result<Matrix> {
        self.spec.forward(&self.params, x)
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        self.spec.forward_graph(g, vars, x)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new("stein_critic", self.spec.clone(), serde_json::Value::Null, self.params.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        ck.expect_kind("stein_critic")?;
        Self::new(ck.spec.clone(), ck.params.clone())
    }
}
