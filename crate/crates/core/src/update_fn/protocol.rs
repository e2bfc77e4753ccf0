use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize};

use super::UpdateFnError;

/// Largest sample size accepted for built-in protocols.
pub const MAX_K: u32 = 1001;

const PMF_TOL: f64 = 1e-12;

/// A consensus protocol, described by how a vertex forms its next opinion.
///
/// Serialized as tagged JSON, e.g. `{"kind":"kmaj","k":3}` or
/// `{"kind":"k_neighb_rand","k":5,"q_pmf":{"2":0.25,"3":0.5,"4":0.25}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ProtocolSpec {
    /// Majority of `k` uniform samples, ties broken uniformly.
    #[serde(rename = "kmaj")]
    KMaj { k: u32 },
    /// `k`-majority with `k` drawn from a finite pmf.
    #[serde(rename = "rand_kmaj")]
    RandKMaj {
        #[serde(deserialize_with = "string_keyed")]
        pmf: BTreeMap<u32, f64>,
    },
    /// Adopt `X` if at least `q` of `k` samples hold `X`, with `q` drawn from `q_pmf`.
    #[serde(rename = "k_neighb_rand")]
    KNeighbRand {
        k: u32,
        #[serde(deserialize_with = "string_keyed")]
        q_pmf: BTreeMap<u32, f64>,
    },
    /// Monomial coefficients `c_0, c_1, ...` of a custom update polynomial.
    #[serde(rename = "poly")]
    CustomPolynomial { coeffs: Vec<f64> },
}

/// Tagged enums buffer their content, which turns JSON object keys into
/// strings that the default integer-key visitor refuses.
fn string_keyed<'de, D: Deserializer<'de>>(de: D) -> Result<BTreeMap<u32, f64>, D::Error> {
    BTreeMap::<String, f64>::deserialize(de)?
        .into_iter()
        .map(|(k, w)| k.trim().parse().map(|k| (k, w)).map_err(de::Error::custom))
        .collect()
}

impl ProtocolSpec {
    pub fn kmaj(k: u32) -> Self {
        ProtocolSpec::KMaj { k }
    }

    /// Structural checks that do not require evaluating `f`.
    pub fn check(&self) -> Result<(), UpdateFnError> {
        match self {
            ProtocolSpec::KMaj { k } => check_k(*k, 3),
            ProtocolSpec::RandKMaj { pmf } => {
                check_pmf(pmf)?;
                for &k in pmf.keys() {
                    check_k(k, 3)?;
                }
                Ok(())
            }
            ProtocolSpec::KNeighbRand { k, q_pmf } => {
                check_k(*k, 4)?;
                check_pmf(q_pmf)?;
                for (&q, &w) in q_pmf {
                    if q < 2 || q > k - 1 {
                        return Err(UpdateFnError::SupportOutOfRange { value: q });
                    }
                    let mirror = q_pmf.get(&(k + 1 - q)).copied().unwrap_or(0.0);
                    if (w - mirror).abs() > PMF_TOL {
                        return Err(UpdateFnError::AsymmetricThreshold { q, k: *k });
                    }
                }
                Ok(())
            }
            ProtocolSpec::CustomPolynomial { coeffs } => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(UpdateFnError::Parse(
                        "polynomial needs at least one finite coefficient".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

fn check_k(k: u32, min: u32) -> Result<(), UpdateFnError> {
    if k < min {
        return Err(UpdateFnError::InvalidK { k, min });
    }
    if k > MAX_K {
        return Err(UpdateFnError::SupportOutOfRange { value: k });
    }
    Ok(())
}

fn check_pmf(pmf: &BTreeMap<u32, f64>) -> Result<(), UpdateFnError> {
    if pmf.is_empty() {
        return Err(UpdateFnError::EmptyPmf);
    }
    if pmf.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(UpdateFnError::NegativeWeight);
    }
    let sum: f64 = pmf.values().sum();
    if (sum - 1.0).abs() > PMF_TOL {
        return Err(UpdateFnError::PmfNotNormalized { sum });
    }
    Ok(())
}

impl fmt::Display for ProtocolSpec {
    /// Shorthand form accepted by [`FromStr`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn pairs(pmf: &BTreeMap<u32, f64>) -> String {
            pmf.iter()
                .map(|(k, w)| format!("{k}={w}"))
                .collect::<Vec<_>>()
                .join(",")
        }
        match self {
            ProtocolSpec::KMaj { k } => write!(f, "kmaj:{k}"),
            ProtocolSpec::RandKMaj { pmf } => write!(f, "randkmaj:{}", pairs(pmf)),
            ProtocolSpec::KNeighbRand { k, q_pmf } => write!(f, "kneighb:{k};{}", pairs(q_pmf)),
            ProtocolSpec::CustomPolynomial { coeffs } => {
                let cs: Vec<String> = coeffs.iter().map(|c| c.to_string()).collect();
                write!(f, "poly:{}", cs.join(","))
            }
        }
    }
}

impl FromStr for ProtocolSpec {
    type Err = UpdateFnError;

    /// Parses JSON (anything starting with `{`) or one of the shorthands
    /// `kmaj:K`, `randkmaj:3=0.5,5=0.5`, `kneighb:5;2=0.25,3=0.5,4=0.25`,
    /// `poly:c0,c1,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let spec = if s.starts_with('{') {
            serde_json::from_str(s).map_err(|e| UpdateFnError::Parse(e.to_string()))?
        } else {
            let (head, rest) = s
                .split_once(':')
                .ok_or_else(|| UpdateFnError::Parse(format!("missing ':' in protocol `{s}`")))?;
            match head {
                "kmaj" => ProtocolSpec::KMaj { k: parse_num(rest)? },
                "randkmaj" => ProtocolSpec::RandKMaj { pmf: parse_pmf(rest)? },
                "kneighb" => {
                    let (k, pmf) = rest.split_once(';').ok_or_else(|| {
                        UpdateFnError::Parse("kneighb needs `K;q=w,...`".into())
                    })?;
                    ProtocolSpec::KNeighbRand { k: parse_num(k)?, q_pmf: parse_pmf(pmf)? }
                }
                "poly" => ProtocolSpec::CustomPolynomial {
                    coeffs: rest
                        .split(',')
                        .map(parse_num::<f64>)
                        .collect::<Result<_, _>>()?,
                },
                other => {
                    return Err(UpdateFnError::Parse(format!("unknown protocol kind `{other}`")))
                }
            }
        };
        spec.check()?;
        Ok(spec)
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T, UpdateFnError> {
    s.trim()
        .parse()
        .map_err(|_| UpdateFnError::Parse(format!("not a number: `{s}`")))
}

fn parse_pmf(s: &str) -> Result<BTreeMap<u32, f64>, UpdateFnError> {
    s.split(',')
        .map(|pair| {
            let (k, w) = pair
                .split_once('=')
                .ok_or_else(|| UpdateFnError::Parse(format!("expected `k=w`, got `{pair}`")))?;
            Ok((parse_num(k)?, parse_num(w)?))
        })
        .collect()
}
