//! Frozen linear layers and the low-rank updates attached to them.
//!
//! A LoRA adapter contributes `ΔW = s · B·A` with `s = alpha / rank`. A LoRAN
//! adapter keeps the same two factors and maps the product elementwise:
//! `ΔW = f(s · B·A)` when the scale sits inside the map, `s · f(B·A)`
//! otherwise. Both record the full computation on a [`Tape`] so gradients
//! reach `B` and `A` through `f′`.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `y = W0 · x + b` with `W0` and `b` never trained.
#[derive(Clone, Debug)]
pub struct FrozenLinear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl FrozenLinear {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::InvalidTensor("frozen weight must be a matrix".into()));
        }
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(Error::shape("bias", weight.shape(), b.shape()));
            }
        }
        Ok(Self {
            weight: weight.detached(),
            bias: bias.map(|b| b.detached()),
        })
    }

    /// Gaussian weights with variance `1/k`, and optionally `N(0, 0.1²)` bias.
    pub fn random(d: usize, k: usize, with_bias: bool, rng: &mut SeededRng) -> Self {
        let weight = Tensor::randn(d, k, 1.0 / (k as f64).sqrt(), rng);
        let bias = with_bias.then(|| {
            let b = Tensor::randn(d, 1, 0.1, rng);
            Tensor::vector(b.into_data()).expect("nonempty")
        });
        Self { weight, bias }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn fingerprint(&self) -> String {
        let mut s = self.weight.fingerprint();
        if let Some(b) = &self.bias {
            s.push(':');
            s.push_str(&b.fingerprint());
        }
        s
    }

    /// Records `W0·x + b`, then `+ ΔW·x` when `delta` is given.
    ///
    /// The base output is formed first so that a zero update leaves it
    /// bit-for-bit unchanged.
    pub fn forward(&self, tape: &mut Tape, x: Var, delta: Option<Var>) -> Result<Var> {
        let w = tape.constant(self.weight.clone());
        let mut out = tape.matmul(w, x)?;
        if let Some(b) = &self.bias {
            let b = tape.constant(b.clone());
            out = tape.add_column(out, b)?;
        }
        if let Some(delta) = delta {
            let dw = tape.value(delta).shape();
            if dw != self.weight.shape() {
                return Err(Error::shape("adapter delta", self.weight.shape(), dw));
            }
            let dx = tape.matmul(delta, x)?;
            out = tape.add(out, dx)?;
        }
        Ok(out)
    }

    /// Forward pass without an adapter, off tape.
    pub fn forward_plain(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.detached());
        let y = self.forward(&mut tape, xv, None)?;
        Ok(tape.value(y).detached())
    }
}

/// Anything that produces a `d × k` weight update from trainable tensors.
pub trait WeightUpdate {
    /// `(d, k)` of the produced update.
    fn dims(&self) -> (usize, usize);

    fn parameters(&self) -> Vec<&Tensor>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records the update on `tape` from handles to [`Self::parameters`],
    /// given in the same order.
    fn record_delta(&self, tape: &mut Tape, params: &[Var]) -> Result<Var>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Registers the parameters as leaves and records the update.
    fn bind(&self, tape: &mut Tape) -> Result<(Vec<Var>, Var)> {
        let params: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|p| tape.leaf(p.detached()))
            .collect();
        let delta = self.record_delta(tape, &params)?;
        Ok((params, delta))
    }

    /// Materialises the update matrix.
    fn delta_weight(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|p| tape.constant(p.detached()))
            .collect();
        let delta = self.record_delta(&mut tape, &params)?;
        Ok(tape.value(delta).detached())
    }
}

#[derive(Clone, Debug)]
pub struct LoraAdapter {
    b: Tensor,
    a: Tensor,
    rank: usize,
    alpha: f64,
}

impl LoraAdapter {
    /// `B = 0` and `A ~ N(0, 1/r)` drawn from `seed`.
    pub fn init(d: usize, k: usize, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        check_rank(d, k, rank)?;
        let mut rng = SeededRng::new(seed);
        let a = Tensor::randn(rank, k, 1.0 / (rank as f64).sqrt(), &mut rng);
        Ok(Self {
            b: Tensor::zeros(d, rank),
            a,
            rank,
            alpha,
        })
    }

    pub fn from_factors(b: Tensor, a: Tensor, alpha: f64) -> Result<Self> {
        if b.shape().len() != 2 || a.shape().len() != 2 || b.cols() != a.rows() {
            return Err(Error::shape("lora factors", b.shape(), a.shape()));
        }
        let rank = b.cols();
        check_rank(b.rows(), a.cols(), rank)?;
        Ok(Self {
            b: b.detached(),
            a: a.detached(),
            rank,
            alpha,
        })
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

fn check_rank(d: usize, k: usize, rank: usize) -> Result<()> {
    if rank == 0 || rank > d.min(k) {
        return Err(Error::InvalidRank { rank, d, k });
    }
    Ok(())
}

impl WeightUpdate for LoraAdapter {
    fn dims(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.b, &self.a]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.b, &mut self.a]
    }

    fn record_delta(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        let product = tape.matmul(params[0], params[1])?;
        tape.scale(product, self.scale())
    }
}

#[derive(Clone, Debug)]
pub struct LoranAdapter {
    inner: LoraAdapter,
    activation: Activation,
    scale_inside: bool,
}

impl LoranAdapter {
    pub fn new(inner: LoraAdapter, activation: Activation, scale_inside: bool) -> Result<Self> {
        activation.validate()?;
        Ok(Self {
            inner,
            activation,
            scale_inside,
        })
    }

    pub fn inner(&self) -> &LoraAdapter {
        &self.inner
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn scale_inside(&self) -> bool {
        self.scale_inside
    }
}

impl WeightUpdate for LoranAdapter {
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn parameters(&self) -> Vec<&Tensor> {
        self.inner.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.inner.parameters_mut()
    }

    fn record_delta(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        let product = tape.matmul(params[0], params[1])?;
        let s = self.inner.scale();
        if self.scale_inside {
            let scaled = tape.scale(product, s)?;
            tape.map_unary(scaled, &self.activation)
        } else {
            let mapped = tape.map_unary(product, &self.activation)?;
            tape.scale(mapped, s)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Lora,
    Loran,
}

/// Either adapter flavour behind one type.
#[derive(Clone, Debug)]
pub enum Adapter {
    Lora(LoraAdapter),
    Loran(LoranAdapter),
}

impl Adapter {
    pub fn kind(&self) -> AdapterKind {
        match self {
            Adapter::Lora(_) => AdapterKind::Lora,
            Adapter::Loran(_) => AdapterKind::Loran,
        }
    }

    pub fn lora(&self) -> &LoraAdapter {
        match self {
            Adapter::Lora(a) => a,
            Adapter::Loran(a) => a.inner(),
        }
    }
}

impl WeightUpdate for Adapter {
    fn dims(&self) -> (usize, usize) {
        self.lora().dims()
    }

    fn parameters(&self) -> Vec<&Tensor> {
        self.lora().parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Adapter::Lora(a) => a.parameters_mut(),
            Adapter::Loran(a) => a.parameters_mut(),
        }
    }

    fn record_delta(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        match self {
            Adapter::Lora(a) => a.record_delta(tape, params),
            Adapter::Loran(a) => a.record_delta(tape, params),
        }
    }
}

/// An unconstrained `d × k` update trained directly; the full fine-tuning
/// reference for spectrum comparisons.
#[derive(Clone, Debug)]
pub struct DenseUpdate {
    delta: Tensor,
}

impl DenseUpdate {
    pub fn zeros(d: usize, k: usize) -> Self {
        Self {
            delta: Tensor::zeros(d, k),
        }
    }
}

impl WeightUpdate for DenseUpdate {
    fn dims(&self) -> (usize, usize) {
        (self.delta.rows(), self.delta.cols())
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.delta]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.delta]
    }

    fn record_delta(&self, _tape: &mut Tape, params: &[Var]) -> Result<Var> {
        Ok(params[0])
    }
}

/// Output of [`adapter_forward`]: the layer output and the parameter handles
/// whose gradients `backward` will fill.
#[derive(Clone, Debug)]
pub struct AdaptedOutput {
    pub output: Var,
    pub params: Vec<Var>,
    pub delta: Var,
}

/// Records `W0·x + b + ΔW·x` with the adapter's factors as leaves.
pub fn adapter_forward(
    tape: &mut Tape,
    layer: &FrozenLinear,
    adapter: &dyn WeightUpdate,
    x: Var,
) -> Result<AdaptedOutput> {
    let (params, delta) = adapter.bind(tape)?;
    let output = layer.forward(tape, x, Some(delta))?;
    Ok(AdaptedOutput {
        output,
        params,
        delta,
    })
}

/// Off-tape convenience for [`adapter_forward`].
pub fn adapted_output(
    layer: &FrozenLinear,
    adapter: &dyn WeightUpdate,
    x: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.detached());
    let out = adapter_forward(&mut tape, layer, adapter, xv)?;
    Ok(tape.value(out.output).detached())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_adapter_is_exact_zero() {
        for (d, k, r) in [(4, 4, 1), (6, 5, 2), (64, 32, 8)] {
            let ad = LoraAdapter::init(d, k, r, 16.0, 9).unwrap();
            let dw = ad.delta_weight().unwrap();
            assert_eq!(dw.shape(), &[d, k]);
            assert!(dw.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn invalid_rank_rejected() {
        assert!(matches!(
            LoraAdapter::init(4, 3, 4, 1.0, 0),
            Err(Error::InvalidRank { rank: 4, d: 4, k: 3 })
        ));
        assert!(LoraAdapter::init(4, 3, 0, 1.0, 0).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = LoraAdapter::init(8, 8, 2, 4.0, 11).unwrap();
        let b = LoraAdapter::init(8, 8, 2, 4.0, 11).unwrap();
        let c = LoraAdapter::init(8, 8, 2, 4.0, 12).unwrap();
        assert!(a.a().bitwise_eq(b.a()));
        assert!(!a.a().bitwise_eq(c.a()));
    }

    #[test]
    fn sinter_rank_one_example() {
        let b = Tensor::matrix(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let a = Tensor::matrix(1, 4, vec![1.0; 4]).unwrap();
        let inner = LoraAdapter::from_factors(b, a, 1.0).unwrap();
        let f = Activation::Sinter { amplitude: 0.5, omega: 1.0 };
        let expected = 1.0 + 0.5 * 1f64.sin();
        for inside in [true, false] {
            let dw = LoranAdapter::new(inner.clone(), f, inside)
                .unwrap()
                .delta_weight()
                .unwrap();
            for j in 0..4 {
                assert_eq!(dw.get(0, j), expected);
                for i in 1..4 {
                    assert_eq!(dw.get(i, j), 0.0);
                }
            }
        }
        assert!((expected - 1.420_735_492_403_948_3).abs() < 1e-15);
    }

    #[test]
    fn identity_loran_matches_lora_bitwise() {
        let mut rng = SeededRng::new(4);
        let b = Tensor::randn(7, 3, 1.0, &mut rng);
        let a = Tensor::randn(3, 5, 1.0, &mut rng);
        let lora = LoraAdapter::from_factors(b, a, 6.0).unwrap();
        let reference = lora.delta_weight().unwrap();
        for inside in [true, false] {
            let loran = LoranAdapter::new(lora.clone(), Activation::Identity, inside).unwrap();
            assert!(loran.delta_weight().unwrap().bitwise_eq(&reference));
        }
    }

    #[test]
    fn parameter_counts() {
        let lora = LoraAdapter::init(64, 64, 8, 16.0, 0).unwrap();
        assert_eq!(lora.parameter_count(), 1024);
        let loran = LoranAdapter::new(lora, Activation::default(), true).unwrap();
        assert_eq!(loran.parameter_count(), 1024);
        let big = LoraAdapter::init(768, 768, 64, 16.0, 0).unwrap();
        assert_eq!(big.parameter_count(), 98_304);
    }

    #[test]
    fn forward_shape_mismatch() {
        let mut rng = SeededRng::new(0);
        let layer = FrozenLinear::random(6, 5, true, &mut rng);
        let ad = LoraAdapter::init(6, 4, 2, 2.0, 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(5, 3));
        assert!(adapter_forward(&mut tape, &layer, &ad, x).is_err());
    }

    #[test]
    fn bias_length_checked() {
        let w = Tensor::zeros(3, 2);
        assert!(FrozenLinear::new(w.clone(), Some(Tensor::vector(vec![0.0; 2]).unwrap())).is_err());
        assert!(FrozenLinear::new(w, Some(Tensor::vector(vec![0.0; 3]).unwrap())).is_ok());
    }
}
