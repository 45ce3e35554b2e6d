//! Elementwise maps applied to the low-rank product, each with a closed-form
//! first derivative.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitude used for Sinter when none is given.
pub const DEFAULT_AMPLITUDE: f64 = 5e-5;
/// Angular frequency used for Sinter when none is given.
pub const DEFAULT_OMEGA: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "RawActivation")]
pub enum Activation {
    Identity,
    Sigmoid,
    Relu,
    Tanh,
    /// `x · σ(βx)`.
    Swish { beta: f64 },
    /// Scaled sine interference, `A · sin(ωx) · x + x`.
    Sinter { amplitude: f64, omega: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Sinter {
            amplitude: DEFAULT_AMPLITUDE,
            omega: DEFAULT_OMEGA,
        }
    }
}

/// Flat wire form, so that parameters foreign to the named kind are rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawActivation {
    kind: String,
    beta: Option<f64>,
    amplitude: Option<f64>,
    omega: Option<f64>,
}

impl TryFrom<RawActivation> for Activation {
    type Error = Error;

    fn try_from(raw: RawActivation) -> Result<Self> {
        let RawActivation {
            kind,
            beta,
            amplitude,
            omega,
        } = raw;
        let stray = |allowed: &[&str]| -> Result<()> {
            for (name, present) in [
                ("beta", beta.is_some()),
                ("amplitude", amplitude.is_some()),
                ("omega", omega.is_some()),
            ] {
                if present && !allowed.contains(&name) {
                    return Err(Error::InvalidActivation(format!(
                        "{kind} does not take `{name}`"
                    )));
                }
            }
            Ok(())
        };
        let spec = match kind.as_str() {
            "identity" | "sigmoid" | "relu" | "tanh" => {
                stray(&[])?;
                kind.parse()?
            }
            "swish" => {
                stray(&["beta"])?;
                Activation::Swish {
                    beta: beta.unwrap_or(1.0),
                }
            }
            "sinter" => {
                stray(&["amplitude", "omega"])?;
                Activation::Sinter {
                    amplitude: amplitude.unwrap_or(DEFAULT_AMPLITUDE),
                    omega: omega.unwrap_or(DEFAULT_OMEGA),
                }
            }
            other => {
                return Err(Error::InvalidActivation(format!(
                    "unknown activation kind {other:?}"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Logistic function evaluated without overflow on either tail.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::Swish { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                Error::InvalidActivation(format!("swish needs a finite beta > 0, got {beta}")),
            ),
            Activation::Sinter { amplitude, omega } => {
                if !amplitude.is_finite() {
                    return Err(Error::InvalidActivation(format!(
                        "sinter amplitude must be finite, got {amplitude}"
                    )));
                }
                if !(omega > 0.0 && omega.is_finite()) {
                    return Err(Error::InvalidActivation(format!(
                        "sinter needs a finite omega > 0, got {omega}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Swish { beta } => x * sigmoid(beta * x),
            Activation::Sinter { amplitude, omega } => x * (1.0 + amplitude * (omega * x).sin()),
        }
    }

    /// First derivative. ReLU uses 0 at the kink.
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Swish { beta } => {
                let s = sigmoid(beta * x);
                s + beta * x * s * (1.0 - s)
            }
            Activation::Sinter { amplitude, omega } => {
                let wx = omega * x;
                1.0 + amplitude * wx.sin() + amplitude * wx * wx.cos()
            }
        }
    }

    /// `f(0) == 0`, so a zero update stays zero after the map.
    pub fn is_zero_fixing(&self) -> bool {
        !matches!(self, Activation::Sigmoid)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Activation::Identity)
    }

    /// Angular frequency for Sinter, 0 otherwise.
    pub fn omega(&self) -> f64 {
        match *self {
            Activation::Sinter { omega, .. } => omega,
            _ => 0.0,
        }
    }

    /// The seven maps of the activation ablation, in table order.
    pub fn ablation_family() -> Vec<Activation> {
        vec![
            Activation::Identity,
            Activation::Sigmoid,
            Activation::Relu,
            Activation::Tanh,
            Activation::Swish { beta: 1.0 },
            Activation::Swish { beta: 25.0 },
            Activation::default(),
        ]
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => f.write_str("identity"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Swish { beta } => write!(f, "swish:{beta}"),
            Activation::Sinter { amplitude, omega } => write!(f, "sinter:{amplitude:e}:{omega:e}"),
        }
    }
}

/// Parses `identity`, `sigmoid`, `relu`, `tanh`, `swish[:beta]` and
/// `sinter[:amplitude[:omega]]`. The output of `Display` parses back.
impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::InvalidActivation(format!("bad number {p:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        let spec = match (name.as_str(), args.as_slice()) {
            ("identity", []) => Activation::Identity,
            ("sigmoid", []) => Activation::Sigmoid,
            ("relu", []) => Activation::Relu,
            ("tanh", []) => Activation::Tanh,
            ("swish", []) => Activation::Swish { beta: 1.0 },
            ("swish", [beta]) => Activation::Swish { beta: *beta },
            ("sinter", []) => Activation::default(),
            ("sinter", [amplitude]) => Activation::Sinter {
                amplitude: *amplitude,
                omega: DEFAULT_OMEGA,
            },
            ("sinter", [amplitude, omega]) => Activation::Sinter {
                amplitude: *amplitude,
                omega: *omega,
            },
            _ => return Err(Error::InvalidActivation(format!("unrecognised {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER_SINTER: Activation = Activation::Sinter {
        amplitude: 5e-5,
        omega: 1e4,
    };

    fn grid() -> impl Iterator<Item = f64> {
        (-300..=300).map(|i| i as f64 * 0.01)
    }

    #[test]
    fn sinter_fixes_zero_and_degenerates() {
        for (a, w) in [(0.5, 5e3), (-3.0, 1.0), (5e-5, 1e4)] {
            let s = Activation::Sinter { amplitude: a, omega: w };
            assert_eq!(s.eval(0.0), 0.0);
            assert_eq!(s.deriv(0.0), 1.0);
        }
        let flat = Activation::Sinter { amplitude: 0.0, omega: 7.0 };
        for x in grid() {
            assert_eq!(flat.eval(x).to_bits(), x.to_bits());
            assert_eq!(flat.deriv(x), 1.0);
        }
    }

    #[test]
    fn sinter_at_operating_point() {
        // 1e-4 + 5e-5·sin(1)·1e-4, evaluated at 40 digits.
        let expected = 1.000_042_073_549_240_4e-4;
        let got = PAPER_SINTER.eval(1e-4);
        assert!(((got - expected) / expected).abs() < 1e-15, "{got:e}");
    }

    #[test]
    fn plotted_parameterisations_are_valid() {
        for a in [0.1, 0.5, 1.0] {
            let s = Activation::Sinter { amplitude: a, omega: 5e3 };
            s.validate().unwrap();
            assert!((s.eval(1e-3) - 1e-3 * (1.0 + a * 5f64.sin())).abs() < 1e-18);
        }
        for w in [1e3, 5e3, 1e4] {
            Activation::Sinter { amplitude: 0.5, omega: w }.validate().unwrap();
        }
    }

    #[test]
    fn standard_values() {
        assert_eq!(Activation::Sigmoid.eval(0.0), 0.5);
        assert_eq!(Activation::Tanh.deriv(0.0), 1.0);
        assert_eq!(Activation::Relu.deriv(0.0), 0.0);
        assert_eq!(Activation::Relu.eval(-2.0), 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn zero_fixing_dichotomy() {
        for f in Activation::ablation_family() {
            if f.is_zero_fixing() {
                assert_eq!(f.eval(0.0), 0.0, "{f}");
            } else {
                assert_eq!(f.eval(0.0), 0.5, "{f}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // five-point stencil; the step keeps ωh ≤ 1e-2 for oscillating maps
        let mut family = Activation::ablation_family();
        family.push(Activation::Sinter { amplitude: 0.5, omega: 3.0 });
        family.push(Activation::Sinter { amplitude: 0.5, omega: 5e3 });
        for f in family {
            let h = if f.omega() > 0.0 { (1e-2 / f.omega()).min(1e-3) } else { 1e-3 };
            for x in grid() {
                if matches!(f, Activation::Relu) && x.abs() < 3.0 * h {
                    continue;
                }
                let numeric = (f.eval(x - 2.0 * h) - 8.0 * f.eval(x - h) + 8.0 * f.eval(x + h)
                    - f.eval(x + 2.0 * h))
                    / (12.0 * h);
                let analytic = f.deriv(x);
                let rel = (numeric - analytic).abs() / (analytic.abs() + numeric.abs()).max(1e-12);
                assert!(rel < 1e-6, "{f} at {x}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn swish_approaches_relu() {
        let sharp = Activation::Swish { beta: 25.0 };
        for x in grid() {
            let gap = (sharp.eval(x) - Activation::Relu.eval(x)).abs();
            assert!(gap <= x.abs() * sigmoid(-25.0 * x.abs()) + 1e-15, "{x}");
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(Activation::Swish { beta: 0.0 }.validate().is_err());
        assert!(Activation::Swish { beta: -1.0 }.validate().is_err());
        assert!(Activation::Sinter { amplitude: 1.0, omega: 0.0 }.validate().is_err());
        assert!(Activation::Sinter { amplitude: f64::NAN, omega: 1.0 }.validate().is_err());
        assert!(Activation::Sinter { amplitude: -2.0, omega: 1.0 }.validate().is_ok());
    }

    #[test]
    fn parse_and_display() {
        for f in Activation::ablation_family() {
            assert_eq!(f.to_string().parse::<Activation>().unwrap(), f);
        }
        assert_eq!(
            "sinter:0.5:5e3".parse::<Activation>().unwrap(),
            Activation::Sinter { amplitude: 0.5, omega: 5e3 }
        );
        assert!("swish:0".parse::<Activation>().is_err());
        assert!("gelu".parse::<Activation>().is_err());
    }

    #[test]
    fn json_shape() {
        let j = serde_json::to_string(&PAPER_SINTER).unwrap();
        assert_eq!(j, r#"{"kind":"sinter","amplitude":0.00005,"omega":10000.0}"#);
        let back: Activation = serde_json::from_str(r#"{"kind":"swish","beta":25}"#).unwrap();
        assert_eq!(back, Activation::Swish { beta: 25.0 });
        assert!(serde_json::from_str::<Activation>(r#"{"kind":"relu","beta":1}"#).is_err());
        assert!(serde_json::from_str::<Activation>(r#"{"kind":"swish","beta":-1}"#).is_err());
        assert!(serde_json::from_str::<Activation>(r#"{"kind":"sinter","gain":1}"#).is_err());
        let d: Activation = serde_json::from_str(r#"{"kind":"sinter"}"#).unwrap();
        assert_eq!(d, PAPER_SINTER);
    }
}
