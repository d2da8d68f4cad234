//! Variable-input operator network and the fixed-sensor DeepONet baseline.
//!
//! A [`SensorSet`] of `(x_j, u(x_j))` pairs is encoded row-wise as
//! `psi_j = Psi_c(x_j) + Psi_v(u(x_j))`. Each head `l` turns the encodings into
//! softmax weights `w_j = softmax_j(omega_l(psi_j) / sqrt(d_enc))` and returns
//! the convex combination `sum_j w_j nu_l(psi_j)`. The heads are concatenated
//! and mapped by the combiner `Phi` to `p` branch coefficients `beta`, and the
//! prediction at a query `y` is `tau_0(y) + sum_k beta_k tau_k(y)`.
//!
//! Sensors are sorted into a canonical order before encoding, so the branch
//! output is bit-identical under any permutation of the input rows.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpSpec};
use crate::tensor::{Tape, Tensor, Var};

/// Unordered set of `m >= 1` sensor readings: coordinates `[m x d]` and
/// values `[m x d_v]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSet {
    coords: Tensor,
    values: Tensor,
}

impl SensorSet {
    pub fn new(coords: Tensor, values: Tensor) -> Result<Self> {
        if coords.shape().len() != 2 || values.shape().len() != 2 || coords.rows() != values.rows() {
            return Err(Error::dim("sensor set", coords.shape(), values.shape()));
        }
        if coords.rows() == 0 {
            return Err(Error::Domain("a sensor set needs at least one sensor".into()));
        }
        Ok(Self { coords, values })
    }

    /// From flat row-major buffers with `coord_dim` and `value_dim` columns.
    pub fn from_flat(coords: Vec<f64>, coord_dim: usize, values: Vec<f64>, value_dim: usize) -> Result<Self> {
        let m = coords.len() / coord_dim.max(1);
        Self::new(
            Tensor::matrix(m, coord_dim, coords)?,
            Tensor::matrix(values.len() / value_dim.max(1), value_dim, values)?,
        )
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coord_dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn value_dim(&self) -> usize {
        self.values.cols()
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Rows reordered as `new[i] = old[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::dim("permutation", &[self.len()], &[perm.len()]));
        }
        let gather = |t: &Tensor| {
            let c = t.cols();
            let data = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect();
            Tensor::matrix(perm.len(), c, data)
        };
        Self::new(gather(&self.coords)?, gather(&self.values)?)
    }

    /// Every sensor repeated `times` times.
    pub fn replicated(&self, times: usize) -> Result<Self> {
        let perm: Vec<usize> = (0..times).flat_map(|_| 0..self.len()).collect();
        let gather = |t: &Tensor| {
            let data = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect();
            Tensor::matrix(perm.len(), t.cols(), data)
        };
        Self::new(gather(&self.coords)?, gather(&self.values)?)
    }

    /// Rows sorted lexicographically by coordinates, then values, under the
    /// IEEE total order.
    pub fn canonical(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            lex_cmp(self.coords.row(a), self.coords.row(b))
                .then_with(|| lex_cmp(self.values.row(a), self.values.row(b)))
        });
        if order.iter().enumerate().all(|(i, &j)| i == j) {
            return self.clone();
        }
        self.permuted(&order).expect("permutation of own rows")
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Hyperparameters of a VIDON instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VidonSpec {
    /// Sensor coordinate dimension `d`.
    pub coord_dim: usize,
    /// Sensor value dimension `d_v`.
    pub value_dim: usize,
    /// Encoding width `d_enc`.
    pub enc_dim: usize,
    /// Number of heads `H`.
    pub heads: usize,
    /// Number of branch/trunk pairs `p`.
    pub basis: usize,
    /// Output width of each head's value network.
    pub head_out: usize,
    /// Query coordinate dimension of the trunk.
    pub query_dim: usize,
    pub coord_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub weight_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub combiner_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl VidonSpec {
    fn mlp(&self, i: usize, hidden: &[usize], o: usize) -> MlpSpec {
        MlpSpec::new(i, hidden, o).with_activation(self.activation)
    }

    /// `Psi_c: d -> d_enc`.
    pub fn coord_encoder(&self) -> MlpSpec {
        self.mlp(self.coord_dim, &self.coord_hidden, self.enc_dim)
    }

    /// `Psi_v: d_v -> d_enc`.
    pub fn value_encoder(&self) -> MlpSpec {
        self.mlp(self.value_dim, &self.value_hidden, self.enc_dim)
    }

    /// Head logit network `d_enc -> 1`.
    pub fn weight_net(&self) -> MlpSpec {
        self.mlp(self.enc_dim, &self.weight_hidden, 1)
    }

    /// Head value network `d_enc -> head_out`.
    pub fn value_net(&self) -> MlpSpec {
        self.mlp(self.enc_dim, &self.head_hidden, self.head_out)
    }

    /// `Phi: H * head_out -> p`.
    pub fn combiner(&self) -> MlpSpec {
        self.mlp(self.heads * self.head_out, &self.combiner_hidden, self.basis)
    }

    /// `tau: query_dim -> p + 1`.
    pub fn trunk(&self) -> MlpSpec {
        self.mlp(self.query_dim, &self.trunk_hidden, self.basis + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.basis == 0 {
            return Err(Error::Config(
                "VIDON needs at least one head and one basis function".into(),
            ));
        }
        for s in [
            self.coord_encoder(),
            self.value_encoder(),
            self.weight_net(),
            self.value_net(),
            self.combiner(),
            self.trunk(),
        ] {
            s.validate()?;
        }
        Ok(())
    }

    /// Parameter count from the layer widths alone.
    pub fn count_params(&self) -> usize {
        self.coord_encoder().count_params()
            + self.value_encoder().count_params()
            + self.heads * (self.weight_net().count_params() + self.value_net().count_params())
            + self.combiner().count_params()
            + self.trunk().count_params()
    }
}

/// Weight and value networks of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weight: Mlp,
    pub value: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VidonParams {
    spec: VidonSpec,
    pub coord_encoder: Mlp,
    pub value_encoder: Mlp,
    pub heads: Vec<Head>,
    pub combiner: Mlp,
    pub trunk: Mlp,
}

struct VidonLeaves<'a> {
    coord: &'a [Var],
    value: &'a [Var],
    heads: Vec<(&'a [Var], &'a [Var])>,
    combiner: &'a [Var],
    trunk: &'a [Var],
}

impl VidonParams {
    pub fn init(spec: &VidonSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let coord_encoder = Mlp::init(&spec.coord_encoder(), rng);
        let value_encoder = Mlp::init(&spec.value_encoder(), rng);
        let heads = (0..spec.heads)
            .map(|_| Head {
                weight: Mlp::init(&spec.weight_net(), rng),
                value: Mlp::init(&spec.value_net(), rng),
            })
            .collect();
        let combiner = Mlp::init(&spec.combiner(), rng);
        let trunk = Mlp::init(&spec.trunk(), rng);
        Ok(Self {
            spec: spec.clone(),
            coord_encoder,
            value_encoder,
            heads,
            combiner,
            trunk,
        })
    }

    /// All-zero parameters; useful for hand-built instances.
    pub fn zeros(spec: &VidonSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            coord_encoder: Mlp::zeros(&spec.coord_encoder()),
            value_encoder: Mlp::zeros(&spec.value_encoder()),
            heads: (0..spec.heads)
                .map(|_| Head {
                    weight: Mlp::zeros(&spec.weight_net()),
                    value: Mlp::zeros(&spec.value_net()),
                })
                .collect(),
            combiner: Mlp::zeros(&spec.combiner()),
            trunk: Mlp::zeros(&spec.trunk()),
        })
    }

    pub fn spec(&self) -> &VidonSpec {
        &self.spec
    }

    fn mlps(&self) -> Vec<(&Mlp, String)> {
        let mut out = vec![
            (&self.coord_encoder, "coord_encoder".to_string()),
            (&self.value_encoder, "value_encoder".to_string()),
        ];
        for (l, h) in self.heads.iter().enumerate() {
            out.push((&h.weight, format!("head{l}.weight_net")));
            out.push((&h.value, format!("head{l}.value_net")));
        }
        out.push((&self.combiner, "combiner".to_string()));
        out.push((&self.trunk, "trunk".to_string()));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.mlps().into_iter().flat_map(|(m, _)| m.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.coord_encoder.tensors_mut());
        out.extend(self.value_encoder.tensors_mut());
        for h in &mut self.heads {
            out.extend(h.weight.tensors_mut());
            out.extend(h.value.tensors_mut());
        }
        out.extend(self.combiner.tensors_mut());
        out.extend(self.trunk.tensors_mut());
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.mlps()
            .into_iter()
            .flat_map(|(m, name)| m.tensor_names(&name))
            .collect()
    }

    /// Total number of scalar parameters; independent of the sensor count.
    pub fn count_params(&self) -> usize {
        self.mlps().into_iter().map(|(m, _)| m.count_params()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.mlps()
            .into_iter()
            .flat_map(|(m, _)| m.bind(tape, trainable))
            .collect()
    }

    fn split<'a>(&self, leaves: &'a [Var]) -> VidonLeaves<'a> {
        let (coord, rest) = leaves.split_at(self.coord_encoder.num_tensors());
        let (value, mut rest) = rest.split_at(self.value_encoder.num_tensors());
        let mut heads = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (w, r) = rest.split_at(h.weight.num_tensors());
            let (v, r) = r.split_at(h.value.num_tensors());
            heads.push((w, v));
            rest = r;
        }
        let (combiner, trunk) = rest.split_at(self.combiner.num_tensors());
        VidonLeaves {
            coord,
            value,
            heads,
            combiner,
            trunk,
        }
    }

    fn check_sensors(&self, s: &SensorSet) -> Result<()> {
        if s.coord_dim() != self.spec.coord_dim || s.value_dim() != self.spec.value_dim {
            return Err(Error::dim(
                "sensor dims",
                &[self.spec.coord_dim, self.spec.value_dim],
                &[s.coord_dim(), s.value_dim()],
            ));
        }
        Ok(())
    }

    fn encode_traced(&self, tape: &mut Tape, leaves: &VidonLeaves<'_>, s: &SensorSet) -> Result<Var> {
        self.check_sensors(s)?;
        let x = tape.constant(s.coords().clone());
        let u = tape.constant(s.values().clone());
        let pc = self.coord_encoder.forward_traced(tape, leaves.coord, x)?;
        let pv = self.value_encoder.forward_traced(tape, leaves.value, u)?;
        tape.add(pc, pv)
    }

    fn head_traced(&self, tape: &mut Tape, leaves: &VidonLeaves<'_>, l: usize, psi: Var) -> Result<Var> {
        let m = tape.value(psi).rows();
        let (wl, vl) = leaves.heads[l];
        let head = &self.heads[l];
        let logits = head.weight.forward_traced(tape, wl, psi)?;
        let w = tape.softmax_scaled(logits, (self.spec.enc_dim as f64).sqrt())?;
        let w = tape.reshape(w, &[1, m])?;
        let values = head.value.forward_traced(tape, vl, psi)?;
        tape.matmul(w, values)
    }

    fn branch_inner(&self, tape: &mut Tape, leaves: &VidonLeaves<'_>, s: &SensorSet) -> Result<Var> {
        let s = s.canonical();
        let psi = self.encode_traced(tape, leaves, &s)?;
        let heads = (0..self.heads.len())
            .map(|l| self.head_traced(tape, leaves, l, psi))
            .collect::<Result<Vec<_>>>()?;
        let nu = tape.concat_cols(&heads)?;
        self.combiner.forward_traced(tape, leaves.combiner, nu)
    }

    /// Branch coefficients `[1 x p]` on `tape`.
    pub fn branch_traced(&self, tape: &mut Tape, leaves: &[Var], s: &SensorSet) -> Result<Var> {
        let parts = self.split(leaves);
        self.branch_inner(tape, &parts, s)
    }

    /// Predictions `[q x 1]` on `tape`.
    pub fn forward_traced(&self, tape: &mut Tape, leaves: &[Var], s: &SensorSet, queries: &Tensor) -> Result<Var> {
        let parts = self.split(leaves);
        let beta = self.branch_inner(tape, &parts, s)?;
        let q = self.trunk_inner(tape, &parts, queries)?;
        combine_branch_trunk(tape, beta, q, self.spec.basis)
    }

    fn trunk_inner(&self, tape: &mut Tape, leaves: &VidonLeaves<'_>, queries: &Tensor) -> Result<Var> {
        if queries.shape().len() != 2 || queries.cols() != self.spec.query_dim {
            return Err(Error::dim("queries", queries.shape(), &[self.spec.query_dim]));
        }
        let y = tape.constant(queries.clone());
        self.trunk.forward_traced(tape, leaves.trunk, y)
    }

    /// Sensor encodings `[m x d_enc]`, one row per sensor in input order.
    pub fn encode_sensors(&self, s: &SensorSet) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leaves = self.bind(&mut tape, false);
        let parts = self.split(&leaves);
        let psi = self.encode_traced(&mut tape, &parts, s)?;
        Ok(tape.value(psi).clone())
    }

    fn check_head(&self, l: usize, psi: &Tensor) -> Result<()> {
        if l >= self.heads.len() {
            return Err(Error::Domain(format!(
                "head {l} out of range (H = {})",
                self.heads.len()
            )));
        }
        if psi.shape().len() != 2 || psi.cols() != self.spec.enc_dim || psi.rows() == 0 {
            return Err(Error::dim("encodings", psi.shape(), &[self.spec.enc_dim]));
        }
        Ok(())
    }

    /// Softmax weights `[m]` of head `l` (zero-based) for encodings `psi`.
    pub fn head_weights(&self, l: usize, psi: &Tensor) -> Result<Tensor> {
        self.check_head(l, psi)?;
        let logits = self.heads[l].weight.forward(psi)?;
        Tensor::vector(logits.into_vec()).softmax_scaled((self.spec.enc_dim as f64).sqrt())
    }

    /// Output `[head_out]` of head `l` (zero-based) for encodings `psi`.
    pub fn head_output(&self, l: usize, psi: &Tensor) -> Result<Tensor> {
        self.check_head(l, psi)?;
        let mut tape = Tape::new();
        let leaves = self.bind(&mut tape, false);
        let parts = self.split(&leaves);
        let p = tape.constant(psi.clone());
        let out = self.head_traced(&mut tape, &parts, l, p)?;
        Ok(Tensor::vector(tape.value(out).data().to_vec()))
    }

    /// Branch coefficients `[p]`; invariant under sensor permutations.
    pub fn branch(&self, s: &SensorSet) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leaves = self.bind(&mut tape, false);
        let beta = self.branch_traced(&mut tape, &leaves, s)?;
        Ok(Tensor::vector(tape.value(beta).data().to_vec()))
    }

    /// Trunk evaluations `[q x (p + 1)]`.
    pub fn trunk_values(&self, queries: &Tensor) -> Result<Tensor> {
        self.trunk.forward(queries)
    }

    /// Predictions `[q x 1]`.
    pub fn forward(&self, s: &SensorSet, queries: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leaves = self.bind(&mut tape, false);
        let out = self.forward_traced(&mut tape, &leaves, s, queries)?;
        Ok(tape.value(out).clone())
    }
}

/// `tau_0(y) + sum_k beta_k tau_k(y)` for `beta: [1 x p]`, `tau: [q x (p+1)]`.
fn combine_branch_trunk(tape: &mut Tape, beta: Var, tau: Var, p: usize) -> Result<Var> {
    let bias = tape.slice_cols(tau, 0, 1)?;
    let basis = tape.slice_cols(tau, 1, p + 1)?;
    let beta = tape.reshape(beta, &[p, 1])?;
    let weighted = tape.matmul(basis, beta)?;
    tape.add(bias, weighted)
}

/// Fixed-sensor DeepONet: a branch MLP on `m_fixed * d_v` ordered values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeeponetSpec {
    pub sensors: usize,
    pub value_dim: usize,
    pub basis: usize,
    pub query_dim: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl DeeponetSpec {
    pub fn branch(&self) -> MlpSpec {
        MlpSpec::new(self.sensors * self.value_dim, &self.branch_hidden, self.basis).with_activation(self.activation)
    }

    pub fn trunk(&self) -> MlpSpec {
        MlpSpec::new(self.query_dim, &self.trunk_hidden, self.basis + 1).with_activation(self.activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis == 0 {
            return Err(Error::Config("DeepONet needs at least one basis function".into()));
        }
        self.branch().validate()?;
        self.trunk().validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeeponetParams {
    spec: DeeponetSpec,
    pub branch: Mlp,
    pub trunk: Mlp,
}

impl DeeponetParams {
    pub fn init(spec: &DeeponetSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let branch = Mlp::init(&spec.branch(), rng);
        let trunk = Mlp::init(&spec.trunk(), rng);
        Ok(Self {
            spec: spec.clone(),
            branch,
            trunk,
        })
    }

    pub fn from_parts(spec: &DeeponetSpec, branch: Mlp, trunk: Mlp) -> Result<Self> {
        spec.validate()?;
        if branch.spec() != &spec.branch() || trunk.spec() != &spec.trunk() {
            return Err(Error::Config("DeepONet parts do not match their settings".into()));
        }
        Ok(Self {
            spec: spec.clone(),
            branch,
            trunk,
        })
    }

    pub fn spec(&self) -> &DeeponetSpec {
        &self.spec
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.branch.tensors().chain(self.trunk.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.branch.tensors_mut().chain(self.trunk.tensors_mut()).collect()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = self.branch.tensor_names("branch");
        names.extend(self.trunk.tensor_names("trunk"));
        names
    }

    pub fn count_params(&self) -> usize {
        self.branch.count_params() + self.trunk.count_params()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        let mut v = self.branch.bind(tape, trainable);
        v.extend(self.trunk.bind(tape, trainable));
        v
    }

    /// Predictions `[q x 1]` from `m_fixed * d_v` values in canonical sensor order.
    pub fn forward_traced(&self, tape: &mut Tape, leaves: &[Var], values: &Tensor, queries: &Tensor) -> Result<Var> {
        let expected = self.spec.sensors * self.spec.value_dim;
        if values.len() != expected {
            return Err(Error::dim("deeponet input", &[expected], values.shape()));
        }
        if queries.shape().len() != 2 || queries.cols() != self.spec.query_dim {
            return Err(Error::dim("queries", queries.shape(), &[self.spec.query_dim]));
        }
        let (bl, tl) = leaves.split_at(self.branch.num_tensors());
        let x = tape.constant(values.reshape(&[1, expected])?);
        let beta = self.branch.forward_traced(tape, bl, x)?;
        let y = tape.constant(queries.clone());
        let tau = self.trunk.forward_traced(tape, tl, y)?;
        combine_branch_trunk(tape, beta, tau, self.spec.basis)
    }

    pub fn forward(&self, values: &Tensor, queries: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leaves = self.bind(&mut tape, false);
        let out = self.forward_traced(&mut tape, &leaves, values, queries)?;
        Ok(tape.value(out).clone())
    }

    pub fn trunk_values(&self, queries: &Tensor) -> Result<Tensor> {
        self.trunk.forward(queries)
    }
}

/// Serializable description of either architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Vidon(VidonSpec),
    Deeponet(DeeponetSpec),
}

impl ModelSpec {
    pub fn init(&self, rng: &mut impl Rng) -> Result<OperatorModel> {
        Ok(match self {
            ModelSpec::Vidon(s) => OperatorModel::Vidon(VidonParams::init(s, rng)?),
            ModelSpec::Deeponet(s) => OperatorModel::Deeponet(DeeponetParams::init(s, rng)?),
        })
    }
}

/// A trainable operator network of either kind.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum OperatorModel {
    Vidon(VidonParams),
    Deeponet(DeeponetParams),
}

impl OperatorModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            OperatorModel::Vidon(p) => ModelSpec::Vidon(p.spec().clone()),
            OperatorModel::Deeponet(p) => ModelSpec::Deeponet(p.spec().clone()),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            OperatorModel::Vidon(p) => p.tensors(),
            OperatorModel::Deeponet(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            OperatorModel::Vidon(p) => p.tensors_mut(),
            OperatorModel::Deeponet(p) => p.tensors_mut(),
        }
    }

    pub fn tensor_names(&self) -> Vec<String> {
        match self {
            OperatorModel::Vidon(p) => p.tensor_names(),
            OperatorModel::Deeponet(p) => p.tensor_names(),
        }
    }

    pub fn count_params(&self) -> usize {
        match self {
            OperatorModel::Vidon(p) => p.count_params(),
            OperatorModel::Deeponet(p) => p.count_params(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        match self {
            OperatorModel::Vidon(p) => p.bind(tape, trainable),
            OperatorModel::Deeponet(p) => p.bind(tape, trainable),
        }
    }

    /// Predictions `[q x 1]`. The DeepONet reads sensor values in the order given.
    pub fn forward_traced(&self, tape: &mut Tape, leaves: &[Var], s: &SensorSet, queries: &Tensor) -> Result<Var> {
        match self {
            OperatorModel::Vidon(p) => p.forward_traced(tape, leaves, s, queries),
            OperatorModel::Deeponet(p) => p.forward_traced(tape, leaves, s.values(), queries),
        }
    }

    pub fn forward(&self, s: &SensorSet, queries: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leaves = self.bind(&mut tape, false);
        let out = self.forward_traced(&mut tape, &leaves, s, queries)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> VidonSpec {
        VidonSpec {
            coord_dim: 2,
            value_dim: 1,
            enc_dim: 4,
            heads: 2,
            basis: 3,
            head_out: 5,
            query_dim: 2,
            coord_hidden: vec![6],
            value_hidden: vec![6],
            weight_hidden: vec![7],
            head_hidden: vec![7],
            combiner_hidden: vec![8],
            trunk_hidden: vec![9],
            activation: Activation::Tanh,
        }
    }

    fn random_sensors(m: usize, rng: &mut impl Rng) -> SensorSet {
        let c = (0..2 * m).map(|_| rng.random::<f64>()).collect();
        let v = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        SensorSet::from_flat(c, 2, v, 1).unwrap()
    }

    fn affine(w: &[f64], rows: usize, cols: usize, b: &[f64]) -> Dense {
        Dense {
            weight: Tensor::matrix(rows, cols, w.to_vec()).unwrap(),
            bias: Tensor::vector(b.to_vec()),
        }
    }

    #[test]
    fn zero_coordinate_encoder_depends_only_on_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        p.coord_encoder = Mlp::zeros(&small_spec().coord_encoder());
        let s = random_sensors(5, &mut rng);
        let moved = SensorSet::new(s.coords().map(|x| x + 0.37), s.values().clone()).unwrap();
        assert_eq!(p.encode_sensors(&s).unwrap(), p.encode_sensors(&moved).unwrap());
    }

    #[test]
    fn encoding_is_row_wise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        let s = random_sensors(6, &mut rng);
        let perm = [3, 0, 5, 1, 4, 2];
        let a = p.encode_sensors(&s).unwrap();
        let b = p.encode_sensors(&s.permuted(&perm).unwrap()).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(b.row(i), a.row(j));
        }
    }

    #[test]
    fn single_sensor_encoding_by_hand() {
        let spec = VidonSpec {
            coord_hidden: vec![],
            value_hidden: vec![],
            enc_dim: 2,
            ..small_spec()
        };
        let mut p = VidonParams::zeros(&spec).unwrap();
        p.coord_encoder = Mlp::from_layers(
            &spec.coord_encoder(),
            vec![affine(&[1.0, 2.0, -1.0, 0.5], 2, 2, &[0.1, 0.2])],
        )
        .unwrap();
        p.value_encoder =
            Mlp::from_layers(&spec.value_encoder(), vec![affine(&[3.0, -2.0], 2, 1, &[1.0, 0.0])]).unwrap();
        let s = SensorSet::from_flat(vec![0.5, 0.25], 2, vec![2.0], 1).unwrap();
        let psi = p.encode_sensors(&s).unwrap();
        // Psi_c = (0.5 + 0.5 + 0.1, -0.5 + 0.125 + 0.2); Psi_v = (6 + 1, -4)
        let expect = [1.1 + 7.0, -0.175 - 4.0];
        assert!((psi.data()[0] - expect[0]).abs() < 1e-14);
        assert!((psi.data()[1] - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn constant_logits_give_mean_of_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        p.heads[1].weight = Mlp::zeros(&small_spec().weight_net());
        let psi = p.encode_sensors(&random_sensors(9, &mut rng)).unwrap();
        let out = p.head_output(1, &psi).unwrap();
        let values = p.heads[1].value.forward(&psi).unwrap();
        for k in 0..small_spec().head_out {
            let mean = (0..9).map(|j| values.row(j)[k]).sum::<f64>() / 9.0;
            assert!((out.data()[k] - mean).abs() < 1e-13);
        }
    }

    #[test]
    fn singleton_head_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        let psi = p.encode_sensors(&random_sensors(1, &mut rng)).unwrap();
        let out = p.head_output(0, &psi).unwrap();
        let v = p.heads[0].value.forward(&psi).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn two_sensor_convex_combination_by_hand() {
        // enc_dim 1 so sqrt(d_enc) = 1; logits = psi itself.
        let spec = VidonSpec {
            enc_dim: 1,
            head_out: 1,
            weight_hidden: vec![],
            head_hidden: vec![],
            ..small_spec()
        };
        let mut p = VidonParams::zeros(&spec).unwrap();
        p.heads[0].weight = Mlp::from_layers(&spec.weight_net(), vec![affine(&[1.0], 1, 1, &[0.0])]).unwrap();
        p.heads[0].value = Mlp::from_layers(&spec.value_net(), vec![affine(&[2.0], 1, 1, &[1.0])]).unwrap();
        let psi = Tensor::matrix(2, 1, vec![2f64.ln(), 0.0]).unwrap();
        let out = p.head_output(0, &psi).unwrap();
        let expect = 2.0 / 3.0 * (2.0 * 2f64.ln() + 1.0) + 1.0 / 3.0 * 1.0;
        assert!((out.data()[0] - expect).abs() < 1e-15);
        let w = p.head_weights(0, &psi).unwrap();
        assert!((w.data()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn branch_is_bitwise_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        let s = random_sensors(33, &mut rng);
        let base = p.branch(&s).unwrap();
        let mut perm: Vec<usize> = (0..33).collect();
        for _ in 0..5 {
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            assert_eq!(p.branch(&s.permuted(&perm).unwrap()).unwrap(), base);
        }
    }

    #[test]
    fn single_head_identity_combiner_mean_pools() {
        let spec = VidonSpec {
            heads: 1,
            head_out: 3,
            combiner_hidden: vec![],
            ..small_spec()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = VidonParams::init(&spec, &mut rng).unwrap();
        p.heads[0].weight = Mlp::zeros(&spec.weight_net());
        p.combiner = Mlp::from_layers(
            &spec.combiner(),
            vec![Dense {
                weight: Tensor::identity(3),
                bias: Tensor::zeros(&[3]),
            }],
        )
        .unwrap();
        let s = random_sensors(7, &mut rng);
        let psi = p.encode_sensors(&s.canonical()).unwrap();
        let v = p.heads[0].value.forward(&psi).unwrap();
        let beta = p.branch(&s).unwrap();
        for k in 0..3 {
            let mean = (0..7).map(|j| v.row(j)[k]).sum::<f64>() / 7.0;
            assert!((beta.data()[k] - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicated_sensors_leave_branch_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        let s = random_sensors(20, &mut rng);
        let a = p.branch(&s).unwrap();
        let b = p.branch(&s.replicated(2).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn zero_trunk_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        p.trunk = Mlp::zeros(&small_spec().trunk());
        let q = Tensor::from_rows(&[[0.1, 0.2], [0.9, 0.4]]).unwrap();
        let y = p.forward(&random_sensors(4, &mut rng), &q).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_branch_isolates_trunk_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        p.combiner = Mlp::zeros(&small_spec().combiner());
        let q = Tensor::from_rows(&[[0.3, 0.7], [0.5, 0.5], [0.0, 1.0]]).unwrap();
        let y = p.forward(&random_sensors(4, &mut rng), &q).unwrap();
        let tau = p.trunk_values(&q).unwrap();
        for i in 0..3 {
            assert_eq!(y.data()[i], tau.row(i)[0]);
        }
    }

    #[test]
    fn one_basis_prediction_by_hand() {
        let spec = VidonSpec {
            coord_dim: 1,
            value_dim: 1,
            enc_dim: 1,
            heads: 1,
            basis: 1,
            head_out: 1,
            query_dim: 1,
            coord_hidden: vec![],
            value_hidden: vec![],
            weight_hidden: vec![],
            head_hidden: vec![],
            combiner_hidden: vec![],
            trunk_hidden: vec![],
            activation: Activation::Tanh,
        };
        let mut p = VidonParams::zeros(&spec).unwrap();
        // psi = u; head value = u (single sensor); beta = 2u + 1; tau = (y, 3y - 1)
        p.value_encoder = Mlp::from_layers(&spec.value_encoder(), vec![affine(&[1.0], 1, 1, &[0.0])]).unwrap();
        p.heads[0].value = Mlp::from_layers(&spec.value_net(), vec![affine(&[1.0], 1, 1, &[0.0])]).unwrap();
        p.combiner = Mlp::from_layers(&spec.combiner(), vec![affine(&[2.0], 1, 1, &[1.0])]).unwrap();
        p.trunk = Mlp::from_layers(&spec.trunk(), vec![affine(&[1.0, 3.0], 2, 1, &[0.0, -1.0])]).unwrap();
        let s = SensorSet::from_flat(vec![0.4], 1, vec![0.75], 1).unwrap();
        let y = p.forward(&s, &Tensor::matrix(1, 1, vec![0.5]).unwrap()).unwrap();
        let expect = 0.5 + (2.0 * 0.75 + 1.0) * (3.0 * 0.5 - 1.0);
        assert!((y.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn query_dim_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        let err = p.forward(&random_sensors(3, &mut rng), &Tensor::zeros(&[2, 3]));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn output_shape_depends_only_on_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = VidonParams::init(&small_spec(), &mut rng).unwrap();
        let q = Tensor::zeros(&[5, 2]);
        for m in [1, 2, 17, 100] {
            assert_eq!(p.forward(&random_sensors(m, &mut rng), &q).unwrap().shape(), &[5, 1]);
        }
    }

    fn deeponet_spec() -> DeeponetSpec {
        DeeponetSpec {
            sensors: 4,
            value_dim: 1,
            basis: 3,
            query_dim: 2,
            branch_hidden: vec![6],
            trunk_hidden: vec![9],
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn deeponet_zero_branch_gives_trunk_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut d = DeeponetParams::init(&deeponet_spec(), &mut rng).unwrap();
        d.branch = Mlp::zeros(&deeponet_spec().branch());
        let q = Tensor::from_rows(&[[0.2, 0.1], [0.6, 0.9]]).unwrap();
        let y = d.forward(&Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]), &q).unwrap();
        let tau = d.trunk_values(&q).unwrap();
        assert_eq!(y.data(), &[tau.row(0)[0], tau.row(1)[0]]);
    }

    #[test]
    fn deeponet_one_basis_by_hand() {
        let spec = DeeponetSpec {
            sensors: 2,
            value_dim: 1,
            basis: 1,
            query_dim: 1,
            branch_hidden: vec![],
            trunk_hidden: vec![],
            activation: Activation::Tanh,
        };
        let branch = Mlp::from_layers(&spec.branch(), vec![affine(&[1.0, -1.0], 1, 2, &[0.5])]).unwrap();
        let trunk = Mlp::from_layers(&spec.trunk(), vec![affine(&[2.0, 1.0], 2, 1, &[0.0, 0.25])]).unwrap();
        let d = DeeponetParams::from_parts(&spec, branch, trunk).unwrap();
        let y = d
            .forward(
                &Tensor::vector(vec![3.0, 1.0]),
                &Tensor::matrix(1, 1, vec![0.5]).unwrap(),
            )
            .unwrap();
        let expect = 1.0 + (3.0 - 1.0 + 0.5) * (0.5 + 0.25);
        assert!((y.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn deeponet_rejects_wrong_input_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let d = DeeponetParams::init(&deeponet_spec(), &mut rng).unwrap();
        let q = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            d.forward(&Tensor::vector(vec![0.0; 5]), &q),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn shared_trunk_agrees_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let v = VidonParams::init(&small_spec(), &mut rng).unwrap();
        let spec = DeeponetSpec {
            trunk_hidden: small_spec().trunk_hidden,
            ..deeponet_spec()
        };
        let d = DeeponetParams::from_parts(&spec, Mlp::init(&spec.branch(), &mut rng), v.trunk.clone()).unwrap();
        let q = Tensor::from_rows(&[[0.1, 0.9], [0.4, 0.3]]).unwrap();
        assert_eq!(d.trunk_values(&q).unwrap(), v.trunk_values(&q).unwrap());
    }

    #[test]
    fn affine_count_closed_form() {
        let spec = VidonSpec {
            coord_hidden: vec![],
            value_hidden: vec![],
            weight_hidden: vec![],
            head_hidden: vec![],
            combiner_hidden: vec![],
            trunk_hidden: vec![],
            ..small_spec()
        };
        let (d, dv, e, h, p, o, q) = (2, 1, 4, 2, 3, 5, 2);
        let expect = (d * e + e) + (dv * e + e) + h * ((e + 1) + (e * o + o)) + (h * o * p + p) + (q * (p + 1) + p + 1);
        let params = VidonParams::zeros(&spec).unwrap();
        assert_eq!(params.count_params(), expect);
        assert_eq!(spec.count_params(), expect);
    }

    #[test]
    fn doubling_heads_doubles_head_contribution_only() {
        let s1 = small_spec();
        let s2 = VidonSpec {
            heads: 4,
            combiner_hidden: vec![8],
            ..small_spec()
        };
        let head = s1.weight_net().count_params() + s1.value_net().count_params();
        // combiner input width also grows with H * head_out
        let combiner_delta = s2.combiner().count_params() - s1.combiner().count_params();
        assert_eq!(s2.count_params() - s1.count_params(), 2 * head + combiner_delta);
        assert_eq!(combiner_delta, 2 * s1.head_out * 8);
    }
}
