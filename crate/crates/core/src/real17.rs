//! Serde helpers that write reals as decimals with 17 significant digits.
//!
//! Seventeen significant digits are enough for every finite `f64` to parse
//! back to the identical bit pattern, which keeps checkpoints byte-stable
//! across save/load cycles.

use serde::de::Deserializer;
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

/// Formats a finite real with 17 significant digits in exponent notation.
pub fn format_real(x: f64) -> String {
    format!("{:.16e}", x)
}

fn raw(x: f64) -> Result<Box<RawValue>, String> {
    if !x.is_finite() {
        return Err(format!("cannot serialize non-finite real {x}"));
    }
    RawValue::from_string(format_real(x)).map_err(|e| e.to_string())
}

/// `#[serde(with = "real17::scalar")]`
pub mod scalar {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        raw(*x).map_err(serde::ser::Error::custom)?.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

/// `#[serde(with = "real17::vec")]`
pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for &x in xs {
            seq.serialize_element(&raw(x).map_err(serde::ser::Error::custom)?)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<f64>::deserialize(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap {
        #[serde(with = "vec")]
        xs: Vec<f64>,
    }

    #[test]
    fn writes_seventeen_digits() {
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        assert_eq!(format_real(-2.0), "-2.0000000000000000e0");
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(xs in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 0..20)) {
            let text = serde_json::to_string(&Wrap { xs: xs.clone() }).unwrap();
            let back: Wrap = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.xs.len(), xs.len());
            for (a, b) in back.xs.iter().zip(&xs) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
