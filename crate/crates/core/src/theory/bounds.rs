//! Closed-form Rademacher complexity bounds.
//!
//! Every universal constant is taken as `C = 6 sqrt(pi)`; the bounds are
//! therefore reported under that convention rather than as sharp values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The implemented value of every universal constant.
pub fn universal_constant() -> f64 {
    6.0 * std::f64::consts::PI.sqrt()
}

/// Constants a bound may use; each variant reads only the fields it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub l_psi: Option<f64>,
    pub l_phi: Option<f64>,
    pub l_f: Option<f64>,
    /// Per-layer Lipschitz constant of a depth-`ell` network.
    pub l0: Option<f64>,
    pub ell: Option<u32>,
    /// Diameter of the input domain.
    pub d: Option<f64>,
    pub t: Option<f64>,
    pub m: Option<u64>,
    pub d_y: Option<u64>,
    pub n: Option<u64>,
    pub b_phi: Option<f64>,
    /// Kinetic-energy budget.
    pub e: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// `C L_psi L_phi D e^{L_f T} sqrt(m d_y) / sqrt(n)`
    Dinr,
    /// `C L_psi L_phi L0^ell D sqrt(m d_y) / sqrt(n)`
    Inr,
    /// `C L_psi L_phi D e^{L0^ell T} sqrt(m d_y) / sqrt(n)`
    DinrDepth,
    /// `C L_psi L_phi D sqrt(m) (B_phi + sqrt(T E)) / sqrt(n)`
    KeRegularized,
}

impl BoundVariant {
    pub const ALL: [BoundVariant; 4] = [BoundVariant::Dinr, BoundVariant::Inr, BoundVariant::DinrDepth, BoundVariant::KeRegularized];

    pub fn name(self) -> &'static str {
        match self {
            BoundVariant::Dinr => "dinr",
            BoundVariant::Inr => "inr",
            BoundVariant::DinrDepth => "dinr-depth",
            BoundVariant::KeRegularized => "ke-regularized",
        }
    }
}

impl fmt::Display for BoundVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown bound variant `{s}`")))
    }
}

fn need<T: Copy>(v: Option<T>, name: &'static str) -> Result<T> {
    v.ok_or(Error::MissingField(name))
}

fn nonneg(v: f64, name: &str) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(format!("`{name}` must be finite and nonnegative, got {v}")))
    }
}

fn positive_count(v: u64, name: &str) -> Result<f64> {
    if v == 0 {
        return Err(Error::invalid(format!("`{name}` must be at least 1")));
    }
    Ok(v as f64)
}

pub fn rademacher_bound(inputs: &BoundInputs, variant: BoundVariant) -> Result<f64> {
    let get = |v: Option<f64>, name: &'static str| need(v, name).and_then(|x| nonneg(x, name));
    let l_psi = get(inputs.l_psi, "l_psi")?;
    let l_phi = get(inputs.l_phi, "l_phi")?;
    let d = get(inputs.d, "d")?;
    let m = positive_count(need(inputs.m, "m")?, "m")?;
    let n = positive_count(need(inputs.n, "n")?, "n")?;
    let base = universal_constant() * l_psi * l_phi * d / n.sqrt();
    let depth_factor = || -> Result<f64> {
        let l0 = get(inputs.l0, "l0")?;
        Ok(l0.powi(need(inputs.ell, "ell")? as i32))
    };
    let d_y = || -> Result<f64> { positive_count(need(inputs.d_y, "d_y")?, "d_y") };
    let value = match variant {
        BoundVariant::Dinr => {
            let (l_f, t) = (get(inputs.l_f, "l_f")?, get(inputs.t, "t")?);
            base * (l_f * t).exp() * (m * d_y()?).sqrt()
        }
        BoundVariant::Inr => base * depth_factor()? * (m * d_y()?).sqrt(),
        BoundVariant::DinrDepth => {
            let t = get(inputs.t, "t")?;
            base * (depth_factor()? * t).exp() * (m * d_y()?).sqrt()
        }
        BoundVariant::KeRegularized => {
            let (b_phi, t, e) = (get(inputs.b_phi, "b_phi")?, get(inputs.t, "t")?, get(inputs.e, "e")?);
            base * m.sqrt() * (b_phi + (t * e).sqrt())
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BoundInputs {
        BoundInputs {
            l_psi: Some(1.0),
            l_phi: Some(1.0),
            l_f: Some(1.0),
            l0: Some(1.0),
            ell: Some(1),
            d: Some(1.0),
            t: Some(0.0),
            m: Some(1),
            d_y: Some(1),
            n: Some(1),
            b_phi: Some(1.0),
            e: Some(0.0),
        }
    }

    #[test]
    fn unit_constants_give_the_universal_constant() {
        let b = rademacher_bound(&unit(), BoundVariant::Dinr).unwrap();
        assert!((b - 10.6347).abs() < 1e-4);
    }

    #[test]
    fn missing_field_is_named() {
        let inputs = BoundInputs { e: None, ..unit() };
        assert!(matches!(rademacher_bound(&inputs, BoundVariant::KeRegularized), Err(Error::MissingField("e"))));
        assert!(rademacher_bound(&inputs, BoundVariant::Dinr).is_ok());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in BoundVariant::ALL {
            assert_eq!(v.name().parse::<BoundVariant>().unwrap(), v);
        }
    }
}
