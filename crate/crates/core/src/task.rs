//! Synthetic tasks and the small frozen-backbone classifier.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::Activation;
use crate::adapter::FrozenLinear;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::{hex_digest, Tensor};

fn default_noise() -> f64 {
    1.0
}

/// Gaussian clusters around random unit-norm centres scaled by `spread`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsTask {
    pub classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    /// Per-coordinate standard deviation around each centre.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BlobsTask {
    fn default() -> Self {
        Self {
            classes: 4,
            n_per_class: 50,
            dim: 16,
            spread: 6.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl BlobsTask {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "blobs needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.n_per_class == 0 || self.dim == 0 {
            return Err(Error::Config("blobs needs n_per_class > 0 and dim > 0".into()));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::Config(format!("bad spread {}", self.spread)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("bad noise {}", self.noise)));
        }
        Ok(())
    }
}

/// Labelled points stored column-wise: `features` is `dim × n`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.features.fingerprint().as_bytes());
        for &l in &self.labels {
            hasher.update((l as u64).to_le_bytes());
        }
        hex_digest(hasher)
    }

    /// One row per point: `label,x0,x1,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = self.features.rows();
        let mut header = vec!["label".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (j, label) in self.labels.iter().enumerate() {
            let mut row = vec![label.to_string()];
            row.extend((0..dim).map(|i| self.features.get(i, j).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn gen_blobs(cfg: &BlobsTask) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.iter().map(|x| cfg.spread * x / norm).collect()
        })
        .collect();

    let n = cfg.classes * cfg.n_per_class;
    let mut features = Tensor::zeros(cfg.dim, n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for i in 0..cfg.n_per_class {
            let col = c * cfg.n_per_class + i;
            for (row, mu) in center.iter().enumerate() {
                features.set(row, col, mu + cfg.noise * rng.normal());
            }
            labels.push(c);
        }
    }
    Ok(Dataset {
        features,
        labels,
        classes: cfg.classes,
    })
}

/// Fit a `d × k` target of exact rank `rank`, built as the product of seeded
/// `d × rank` and `rank × k` Gaussian factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherTask {
    pub d: usize,
    pub k: usize,
    pub rank: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TeacherTask {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::Config("teacher needs d > 0 and k > 0".into()));
        }
        if self.rank == 0 || self.rank > self.d.min(self.k) {
            return Err(Error::Config(format!(
                "teacher rank {} must lie in 1..={}",
                self.rank,
                self.d.min(self.k)
            )));
        }
        Ok(())
    }

    /// Entries have unit variance.
    pub fn target(&self) -> Result<Tensor> {
        self.validate()?;
        let mut rng = SeededRng::new(self.seed);
        let left = Tensor::randn(self.d, self.rank, 1.0, &mut rng);
        let right = Tensor::randn(self.rank, self.k, 1.0 / (self.rank as f64).sqrt(), &mut rng);
        left.matmul(&right)
    }
}

/// `‖ΔW − target‖²_F / (d·k)` recorded on the tape.
pub fn teacher_loss(tape: &mut Tape, delta: Var, target: &Tensor) -> Result<Var> {
    let t = tape.constant(target.detached());
    let diff = tape.sub(delta, t)?;
    let sq = tape.hadamard(diff, diff)?;
    tape.mean(sq)
}

pub fn teacher_loss_value(delta: &Tensor, target: &Tensor) -> Result<f64> {
    let diff = delta.sub(target)?;
    Ok(diff.frobenius_sq() / diff.len() as f64)
}

/// Which frozen layer of [`ToyClassifier`] carries the adapter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterSite {
    /// The input projection, ahead of the tanh.
    #[default]
    Hidden,
    /// The output projection producing logits.
    Head,
}

/// Two frozen layers, `input → hidden` with tanh, then `hidden → classes`.
#[derive(Clone, Debug)]
pub struct ToyClassifier {
    hidden: FrozenLinear,
    head: FrozenLinear,
    site: AdapterSite,
}

impl ToyClassifier {
    pub fn new(inputs: usize, hidden: usize, classes: usize, site: AdapterSite, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        Self {
            hidden: FrozenLinear::random(hidden, inputs, true, &mut rng),
            head: FrozenLinear::random(classes, hidden, true, &mut rng),
            site,
        }
    }

    pub fn from_layers(hidden: FrozenLinear, head: FrozenLinear, site: AdapterSite) -> Result<Self> {
        if head.in_features() != hidden.out_features() {
            return Err(Error::shape(
                "classifier layers",
                hidden.weight().shape(),
                head.weight().shape(),
            ));
        }
        Ok(Self { hidden, head, site })
    }

    pub fn site(&self) -> AdapterSite {
        self.site
    }

    pub fn hidden_layer(&self) -> &FrozenLinear {
        &self.hidden
    }

    pub fn head_layer(&self) -> &FrozenLinear {
        &self.head
    }

    /// `(d, k)` of the adapted layer's weight.
    pub fn adapted_dims(&self) -> (usize, usize) {
        let layer = match self.site {
            AdapterSite::Hidden => &self.hidden,
            AdapterSite::Head => &self.head,
        };
        (layer.out_features(), layer.in_features())
    }

    pub fn fingerprint(&self) -> String {
        format!("{}|{}", self.hidden.fingerprint(), self.head.fingerprint())
    }

    /// Logits as an `n × classes` node for the columns of `x`.
    pub fn logits(&self, tape: &mut Tape, x: Var, delta: Option<Var>) -> Result<Var> {
        let (hidden_delta, head_delta) = match self.site {
            AdapterSite::Hidden => (delta, None),
            AdapterSite::Head => (None, delta),
        };
        let pre = self.hidden.forward(tape, x, hidden_delta)?;
        let h = tape.map_unary(pre, &Activation::Tanh)?;
        let z = self.head.forward(tape, h, head_delta)?;
        tape.transpose(z)
    }

    /// Fraction of points whose arg-max logit equals the label. Ties go to the
    /// lower class index.
    pub fn accuracy(&self, delta: Option<&Tensor>, data: &Dataset) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(data.features.clone());
        let delta = delta.map(|d| tape.constant(d.detached()));
        let logits = self.logits(&mut tape, x, delta)?;
        let z = tape.value(logits);
        let correct = data
            .labels
            .iter()
            .enumerate()
            .filter(|(i, &label)| {
                let row = z.row(*i);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best == label
            })
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::numerical_rank;
    use crate::svd::svd_values;

    #[test]
    fn blobs_are_reproducible() {
        let cfg = BlobsTask::default();
        let a = gen_blobs(&cfg).unwrap();
        let b = gen_blobs(&cfg).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let other = gen_blobs(&BlobsTask { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.fingerprint(), other.fingerprint());
        assert_eq!(a.len(), 200);
        assert_eq!(a.features.shape(), &[16, 200]);
    }

    #[test]
    fn blobs_need_two_classes() {
        let cfg = BlobsTask {
            classes: 1,
            ..BlobsTask::default()
        };
        assert!(matches!(gen_blobs(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn blob_centres_sit_at_spread() {
        let cfg = BlobsTask {
            n_per_class: 2000,
            noise: 1.0,
            ..BlobsTask::default()
        };
        let data = gen_blobs(&cfg).unwrap();
        for c in 0..cfg.classes {
            let cols: Vec<usize> = (c * 2000..(c + 1) * 2000).collect();
            let pts = data.features.select_columns(&cols);
            let norm = (0..cfg.dim)
                .map(|i| pts.row(i).iter().sum::<f64>() / 2000.0)
                .map(|m| m * m)
                .sum::<f64>()
                .sqrt();
            assert!((norm - 6.0).abs() < 0.15, "class {c} centre norm {norm}");
        }
    }

    #[test]
    fn teacher_has_exact_rank() {
        for (d, k, t) in [(32, 32, 16), (20, 12, 5), (8, 8, 8)] {
            let task = TeacherTask { d, k, rank: t, seed: 3 };
            let sv = svd_values(&task.target().unwrap()).unwrap();
            assert_eq!(numerical_rank(&sv, 1e-10), t);
        }
    }

    #[test]
    fn teacher_loss_reference_points() {
        let task = TeacherTask { d: 6, k: 4, rank: 2, seed: 0 };
        let target = task.target().unwrap();
        assert_eq!(teacher_loss_value(&target, &target).unwrap(), 0.0);
        let zero = Tensor::zeros(6, 4);
        let expected = target.frobenius_sq() / 24.0;
        assert!((teacher_loss_value(&zero, &target).unwrap() - expected).abs() < 1e-15);

        let mut tape = Tape::new();
        let d = tape.leaf(zero);
        let l = teacher_loss(&mut tape, d, &target).unwrap();
        assert!((tape.value(l).data()[0] - expected).abs() < 1e-15);
        assert!(teacher_loss_value(&Tensor::zeros(4, 6), &target).is_err());
    }

    #[test]
    fn classifier_dims_follow_site() {
        let m = ToyClassifier::new(16, 32, 4, AdapterSite::Hidden, 0);
        assert_eq!(m.adapted_dims(), (32, 16));
        let m = ToyClassifier::new(16, 32, 4, AdapterSite::Head, 0);
        assert_eq!(m.adapted_dims(), (4, 32));
    }

    #[test]
    fn dataset_csv_export() {
        let data = gen_blobs(&BlobsTask {
            n_per_class: 2,
            dim: 3,
            ..BlobsTask::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,x0,x1,x2\n"));
        assert_eq!(text.lines().count(), 9);
    }
}
