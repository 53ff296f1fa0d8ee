//! The MIL backbone: an MLP instance embedder, a bag aggregator (mean, max or
//! gated attention) and a single linear bag classifier.
//!
//! Every aggregator is expressed as attention weights `a_k` over the bag, with
//! the bag representation `H = Σ a_k h_k`. Mean pooling uses `a_k = 1/K`; max
//! pooling puts all weight on the instance whose representation gets the
//! highest positive-class logit from the current classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bagdata::Bag;
use crate::error::{Error, Result};
use crate::gradcore::{
    accumulate_linear_grads, activation_backward, activation_forward, dot, sigmoid,
    softmax_backward, softmax_nonempty, Activation, Linear, Param, Tensor2,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregatorKind {
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "max")]
    Max,
    #[serde(rename = "abmil", alias = "gated_attention")]
    GatedAttention,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Max => "max",
            AggregatorKind::GatedAttention => "abmil",
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "abmil" | "gated_attention" => Ok(Self::GatedAttention),
            other => Err(Error::Config(format!(
                "unknown backbone `{other}` (expected mean, max or abmil)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Instance representation width `M`.
    pub rep_dim: usize,
    /// Inner width `D` of the gated attention.
    pub attention_dim: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            rep_dim: 32,
            attention_dim: 16,
            activation: Activation::Tanh,
        }
    }
}

/// MLP with the activation after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Everything the embedder backward pass needs.
#[derive(Debug, Clone)]
pub struct EmbedTrace {
    inputs: Vec<Tensor2>,
    pre: Vec<Tensor2>,
}

impl EmbedTrace {
    pub fn output(&self) -> &Tensor2 {
        self.pre.last().expect("embedder has at least one layer")
    }
}

impl Embedder {
    /// `dims` lists every width from input to output, e.g. `[16, 64, 32]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "embedder needs an input and an output width");
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Self { layers, activation }
    }

    /// Single identity layer; `embed` then returns the features unchanged.
    pub fn identity(dim: usize) -> Self {
        let mut layer = Linear::zeros(dim, dim);
        layer.weight.value = Tensor2::identity(dim);
        Self {
            layers: vec![layer],
            activation: Activation::Tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Linear::out_dim))
            .collect()
    }

    /// Instance representations, one row per input row.
    pub fn embed(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&activation_forward(&h, self.activation))?;
        }
        Ok(h)
    }

    pub fn embed_traced(&self, x: &Tensor2) -> Result<EmbedTrace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Tensor2> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 {
                x.clone()
            } else {
                activation_forward(&pre[i - 1], self.activation)
            };
            pre.push(layer.forward(&input)?);
            inputs.push(input);
        }
        Ok(EmbedTrace { inputs, pre })
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, trace: &EmbedTrace, upstream: &Tensor2) -> Result<Tensor2> {
        let mut g = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let g_in = self.layers[i].backward(&trace.inputs[i], &g)?;
            if i == 0 {
                return Ok(g_in);
            }
            g = activation_backward(&trace.pre[i - 1], self.activation, &g_in)?;
        }
        unreachable!("loop returns at layer 0")
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Gated attention scorer: `s_k = ωᵀ(tanh(V₁h_k) ⊙ sigm(V₂h_k))`, softmaxed
/// over the bag. `V₁`, `V₂` are stored transposed (`M×D`) so they act on row
/// vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedAttention {
    pub v1: Param,
    pub v2: Param,
    pub omega: Param,
}

#[derive(Debug, Clone)]
pub struct GatedCache {
    tanh_branch: Tensor2,
    gate_branch: Tensor2,
    product: Tensor2,
    /// Pre-softmax scores.
    pub scores: Vec<f64>,
}

impl GatedAttention {
    pub fn new<R: Rng + ?Sized>(rep_dim: usize, inner_dim: usize, rng: &mut R) -> Self {
        Self {
            v1: Param::uniform(rep_dim, inner_dim, rep_dim, rng),
            v2: Param::uniform(rep_dim, inner_dim, rep_dim, rng),
            omega: Param::uniform(inner_dim, 1, inner_dim, rng),
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.omega.value.rows()
    }

    pub fn score(&self, reps: &Tensor2) -> Result<GatedCache> {
        let tanh_branch = reps.matmul(&self.v1.value)?.map(f64::tanh);
        let gate_branch = reps.matmul(&self.v2.value)?.map(sigmoid);
        let product = tanh_branch.zip_map(&gate_branch, |t, g| t * g)?;
        let scores = product.matmul(&self.omega.value)?.into_data();
        Ok(GatedCache {
            tanh_branch,
            gate_branch,
            product,
            scores,
        })
    }

    /// Given `dL/ds`, accumulates parameter grads and returns `dL/dreps`
    /// through the score path only.
    fn backward(&mut self, reps: &Tensor2, cache: &GatedCache, dscores: &[f64]) -> Result<Tensor2> {
        let k = reps.rows();
        let ds = Tensor2::from_vec(k, 1, dscores.to_vec())?;
        cache.product.add_transposed_matmul_into(&ds, &mut self.omega.grad)?;
        let omega = self.omega.value.data();
        let mut du1 = Tensor2::zeros(k, omega.len());
        let mut du2 = Tensor2::zeros(k, omega.len());
        for r in 0..k {
            for (d, &w) in omega.iter().enumerate() {
                let dprod = dscores[r] * w;
                let t = cache.tanh_branch.get(r, d);
                let g = cache.gate_branch.get(r, d);
                du1.set(r, d, dprod * g * (1.0 - t * t));
                du2.set(r, d, dprod * t * g * (1.0 - g));
            }
        }
        reps.add_transposed_matmul_into(&du1, &mut self.v1.grad)?;
        reps.add_transposed_matmul_into(&du2, &mut self.v2.grad)?;
        let mut dreps = du1.matmul_transposed(&self.v1.value)?;
        dreps.add_assign(&du2.matmul_transposed(&self.v2.value)?)?;
        Ok(dreps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Aggregator {
    Mean,
    Max,
    GatedAttention(GatedAttention),
}

#[derive(Debug, Clone)]
pub struct AggregateTrace {
    pub attention: Vec<f64>,
    /// `1×M` bag representation.
    pub bag_rep: Tensor2,
    pub gated: Option<GatedCache>,
}

impl Aggregator {
    pub fn new<R: Rng + ?Sized>(
        kind: AggregatorKind,
        rep_dim: usize,
        inner_dim: usize,
        rng: &mut R,
    ) -> Self {
        match kind {
            AggregatorKind::Mean => Aggregator::Mean,
            AggregatorKind::Max => Aggregator::Max,
            AggregatorKind::GatedAttention => {
                Aggregator::GatedAttention(GatedAttention::new(rep_dim, inner_dim, rng))
            }
        }
    }

    pub fn kind(&self) -> AggregatorKind {
        match self {
            Aggregator::Mean => AggregatorKind::Mean,
            Aggregator::Max => AggregatorKind::Max,
            Aggregator::GatedAttention(_) => AggregatorKind::GatedAttention,
        }
    }

    /// Attention weights over the bag and the pooled representation. Max
    /// pooling consults `classifier` to pick its instance.
    pub fn aggregate(&self, reps: &Tensor2, classifier: &BagClassifier) -> Result<AggregateTrace> {
        let k = reps.rows();
        if k == 0 {
            return Err(Error::arg("cannot aggregate an empty bag"));
        }
        let (attention, gated) = match self {
            Aggregator::Mean => (vec![1.0 / k as f64; k], None),
            Aggregator::Max => {
                let logits = classifier.positive_logits(reps)?;
                let mut best = 0;
                for (i, &l) in logits.iter().enumerate() {
                    if l > logits[best] {
                        best = i;
                    }
                }
                let mut a = vec![0.0; k];
                a[best] = 1.0;
                (a, None)
            }
            Aggregator::GatedAttention(att) => {
                if reps.cols() != att.v1.value.rows() {
                    return Err(Error::Dimension {
                        op: "gated_attention",
                        left: reps.shape(),
                        right: att.v1.value.shape(),
                    });
                }
                let cache = att.score(reps)?;
                (softmax_nonempty(&cache.scores), Some(cache))
            }
        };
        let mut bag_rep = Tensor2::zeros(1, reps.cols());
        for (h, &a) in reps.iter_rows().zip(&attention) {
            for (o, &v) in bag_rep.data_mut().iter_mut().zip(h) {
                *o += a * v;
            }
        }
        Ok(AggregateTrace {
            attention,
            bag_rep,
            gated,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Aggregator::GatedAttention(a) => vec![&a.v1, &a.v2, &a.omega],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Aggregator::GatedAttention(a) => vec![&mut a.v1, &mut a.v2, &mut a.omega],
            _ => Vec::new(),
        }
    }
}

/// Single linear layer from `M` to `C` classes, followed by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct BagClassifier {
    pub linear: Linear,
}

impl BagClassifier {
    pub fn new<R: Rng + ?Sized>(rep_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(rep_dim, num_classes, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.linear.out_dim()
    }

    pub fn logits(&self, reps: &Tensor2) -> Result<Tensor2> {
        self.linear.forward(reps)
    }

    /// Class distribution for a `1×M` representation.
    pub fn classify(&self, rep: &Tensor2) -> Result<Vec<f64>> {
        if rep.rows() != 1 {
            return Err(Error::Dimension {
                op: "classify",
                left: rep.shape(),
                right: self.linear.weight.value.shape(),
            });
        }
        Ok(softmax_nonempty(self.logits(rep)?.data()))
    }

    /// Logit of the last class for every row of `reps`.
    pub fn positive_logits(&self, reps: &Tensor2) -> Result<Vec<f64>> {
        let w = &self.linear.weight.value;
        if reps.cols() != w.rows() {
            return Err(Error::Dimension {
                op: "positive_logits",
                left: reps.shape(),
                right: w.shape(),
            });
        }
        let c = w.cols() - 1;
        let column: Vec<f64> = (0..w.rows()).map(|r| w.get(r, c)).collect();
        let bias = self.linear.bias.value.get(0, c);
        Ok(reps.iter_rows().map(|h| dot(h, &column) + bias).collect())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.linear.params().into()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.linear.params_mut().into()
    }
}

/// Aggregation plus classification of an already-embedded bag.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub aggregate: AggregateTrace,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn head_forward(
    aggregator: &Aggregator,
    classifier: &BagClassifier,
    reps: &Tensor2,
) -> Result<HeadTrace> {
    let aggregate = aggregator.aggregate(reps, classifier)?;
    let logits = classifier.logits(&aggregate.bag_rep)?.into_data();
    let probs = softmax_nonempty(&logits);
    Ok(HeadTrace {
        aggregate,
        logits,
        probs,
    })
}

/// Backward through classifier and aggregator from `dL/dlogits`.
///
/// Returns `dL/dreps` when `want_reps_grad` is set. Max pooling's instance
/// choice is piecewise constant, so no gradient flows through the selection.
pub fn head_backward(
    aggregator: &mut Aggregator,
    classifier: &mut BagClassifier,
    reps: &Tensor2,
    trace: &HeadTrace,
    dlogits: &[f64],
    want_reps_grad: bool,
) -> Result<Option<Tensor2>> {
    let g = Tensor2::row_vector(dlogits);
    let bag_rep = &trace.aggregate.bag_rep;
    let linear = &mut classifier.linear;
    accumulate_linear_grads(bag_rep, &mut linear.weight, &mut linear.bias, &g)?;
    let dh = g.matmul_transposed(&linear.weight.value)?;
    let dh = dh.data();
    let attention = &trace.aggregate.attention;

    let mut dreps = want_reps_grad.then(|| {
        let mut d = Tensor2::zeros(reps.rows(), reps.cols());
        for (k, &a) in attention.iter().enumerate() {
            if a != 0.0 {
                for (o, &v) in d.row_mut(k).iter_mut().zip(dh) {
                    *o = a * v;
                }
            }
        }
        d
    });

    if let Aggregator::GatedAttention(att) = aggregator {
        let cache = trace
            .aggregate
            .gated
            .as_ref()
            .ok_or_else(|| Error::arg("gated attention trace missing its cache"))?;
        let dattention: Vec<f64> = reps.iter_rows().map(|h| dot(h, dh)).collect();
        let dscores = softmax_backward(attention, &dattention);
        let through_scores = att.backward(reps, cache, &dscores)?;
        if let Some(d) = dreps.as_mut() {
            d.add_assign(&through_scores)?;
        }
    }
    Ok(dreps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilModel {
    pub embedder: Embedder,
    pub aggregator: Aggregator,
    pub classifier: BagClassifier,
}

/// Forward record of one bag: representations `h_k`, attention `a_k`, pooled
/// `H` and the class distribution.
#[derive(Debug, Clone)]
pub struct BagForwardTrace {
    pub embed: EmbedTrace,
    pub head: HeadTrace,
}

impl BagForwardTrace {
    pub fn reps(&self) -> &Tensor2 {
        self.embed.output()
    }

    pub fn attention(&self) -> &[f64] {
        &self.head.aggregate.attention
    }

    pub fn bag_rep(&self) -> &Tensor2 {
        &self.head.aggregate.bag_rep
    }

    pub fn probs(&self) -> &[f64] {
        &self.head.probs
    }
}

impl MilModel {
    pub fn new<R: Rng + ?Sized>(
        d_raw: usize,
        num_classes: usize,
        kind: AggregatorKind,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![d_raw];
        dims.extend(&config.hidden);
        dims.push(config.rep_dim);
        let embedder = Embedder::new(&dims, config.activation, rng);
        let (aggregator, classifier) =
            Self::fresh_head(kind, config.rep_dim, config.attention_dim, num_classes, rng);
        Self {
            embedder,
            aggregator,
            classifier,
        }
    }

    pub fn fresh_head<R: Rng + ?Sized>(
        kind: AggregatorKind,
        rep_dim: usize,
        attention_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> (Aggregator, BagClassifier) {
        let aggregator = Aggregator::new(kind, rep_dim, attention_dim, rng);
        let classifier = BagClassifier::new(rep_dim, num_classes, rng);
        (aggregator, classifier)
    }

    pub fn forward_features(&self, features: &Tensor2) -> Result<BagForwardTrace> {
        if features.rows() == 0 {
            return Err(Error::arg("bag has no instances"));
        }
        if features.cols() != self.embedder.input_dim() {
            return Err(Error::Dimension {
                op: "bag_forward",
                left: features.shape(),
                right: (self.embedder.input_dim(), self.embedder.output_dim()),
            });
        }
        let embed = self.embedder.embed_traced(features)?;
        let head = head_forward(&self.aggregator, &self.classifier, embed.output())?;
        Ok(BagForwardTrace { embed, head })
    }

    pub fn bag_forward(&self, bag: &Bag) -> Result<BagForwardTrace> {
        self.forward_features(&bag.feature_matrix())
    }

    /// Class distribution without keeping the trace.
    pub fn predict(&self, features: &Tensor2) -> Result<Vec<f64>> {
        let reps = self.embedder.embed(features)?;
        Ok(head_forward(&self.aggregator, &self.classifier, &reps)?.probs)
    }

    /// Backward from `dL/dlogits` into every parameter.
    pub fn backward(&mut self, trace: &BagForwardTrace, dlogits: &[f64]) -> Result<()> {
        let dreps = head_backward(
            &mut self.aggregator,
            &mut self.classifier,
            trace.reps(),
            &trace.head,
            dlogits,
            true,
        )?
        .expect("requested");
        self.embedder.backward(&trace.embed, &dreps)?;
        Ok(())
    }

    /// All parameters in declaration order: embedder, aggregator, classifier.
    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.embedder.params();
        p.extend(self.aggregator.params());
        p.extend(self.classifier.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.embedder.params_mut();
        p.extend(self.aggregator.params_mut());
        p.extend(self.classifier.params_mut());
        p
    }

    pub fn head_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.aggregator.params_mut();
        p.extend(self.classifier.params_mut());
        p
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// SHA-256 over the bit patterns of parameter values, for frozen-part checks.
pub fn param_digest<'a>(params: impl IntoIterator<Item = &'a Param>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for p in params {
        let (r, c) = p.shape();
        hasher.update((r as u64).to_le_bytes());
        hasher.update((c as u64).to_le_bytes());
        for v in p.value.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}
