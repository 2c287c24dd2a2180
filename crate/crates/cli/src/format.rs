//! JSON matrix files. Entries are `[re, im]` pairs, written with 17
//! significant digits so that a write/read cycle is bit-exact.

use qmaj::channel::Channel;
use qmaj::linalg::{c, BipartiteState, CMatrix, FactoredDims};
use serde::de::Error as _;
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    State,
    Channel,
    Operator,
}

impl Kind {
    fn word(self) -> &'static str {
        match self {
            Kind::State => "state",
            Kind::Channel => "channel",
            Kind::Operator => "operator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    /// `[d_A, d_B]`; `[d]` is a single system, stored as `(d, 1)`.
    Factors(usize, usize),
    Channel {
        d_in: usize,
        d_out: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub kind: Kind,
    pub dims: Dims,
    pub data: CMatrix,
}

/// A double written as a JSON number with 17 significant digits.
struct Exact(f64);

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

struct Rows<'a>(&'a CMatrix);

impl Serialize for Rows<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = self.0;
        let mut rows = s.serialize_seq(Some(m.nrows()))?;
        for i in 0..m.nrows() {
            let row: Vec<[Exact; 2]> = (0..m.ncols())
                .map(|j| [Exact(m[(i, j)].re), Exact(m[(i, j)].im)])
                .collect();
            rows.serialize_element(&row)?;
        }
        rows.end()
    }
}

impl Serialize for MatrixFile {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(3))?;
        map.serialize_entry("kind", self.kind.word())?;
        match self.dims {
            Dims::Factors(a, 1) => map.serialize_entry("dims", &[a])?,
            Dims::Factors(a, b) => map.serialize_entry("dims", &[a, b])?,
            Dims::Channel { d_in, d_out } => {
                map.serialize_entry("dims", &serde_json::json!({"d_in": d_in, "d_out": d_out}))?
            }
        }
        map.serialize_entry("data", &Rows(&self.data))?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for MatrixFile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        MatrixFile::from_value(&v).map_err(D::Error::custom)
    }
}

fn entry(v: &Value, i: usize, j: usize) -> CliResult<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| CliError::Input(format!("entry ({i}, {j}) is not a number")))?;
    if !x.is_finite() {
        return Err(CliError::Input(format!("entry ({i}, {j}) is not finite")));
    }
    Ok(x)
}

fn dim_of(v: &Value, key: &str) -> CliResult<usize> {
    v.get(key)
        .and_then(Value::as_u64)
        .filter(|d| *d > 0)
        .map(|d| d as usize)
        .ok_or_else(|| CliError::Input(format!("dims.{key} must be a positive integer")))
}

impl MatrixFile {
    pub fn state(data: CMatrix, dims: FactoredDims) -> Self {
        Self {
            kind: Kind::State,
            dims: Dims::Factors(dims.a, dims.b),
            data,
        }
    }

    pub fn channel(ch: &Channel) -> Self {
        Self {
            kind: Kind::Channel,
            dims: Dims::Channel {
                d_in: ch.d_in(),
                d_out: ch.d_out(),
            },
            data: ch.choi().clone(),
        }
    }

    pub fn operator(data: CMatrix) -> Self {
        Self {
            kind: Kind::Operator,
            dims: Dims::Factors(data.nrows(), 1),
            data,
        }
    }

    pub fn bipartite_operator(data: CMatrix, dims: FactoredDims) -> Self {
        Self {
            kind: Kind::Operator,
            dims: Dims::Factors(dims.a, dims.b),
            data,
        }
    }

    pub fn from_value(v: &Value) -> CliResult<Self> {
        let kind = match v.get("kind").and_then(Value::as_str) {
            Some("state") => Kind::State,
            Some("channel") => Kind::Channel,
            Some("operator") => Kind::Operator,
            Some(k) => return Err(CliError::Input(format!("unknown kind {k:?}"))),
            None => return Err(CliError::Input("missing \"kind\"".into())),
        };
        let dv = v
            .get("dims")
            .ok_or_else(|| CliError::Input("missing \"dims\"".into()))?;
        let dims = match (kind, dv) {
            (Kind::Channel, Value::Object(_)) => Dims::Channel {
                d_in: dim_of(dv, "d_in")?,
                d_out: dim_of(dv, "d_out")?,
            },
            (Kind::Channel, _) => return Err(CliError::Input("channel dims must be {\"d_in\", \"d_out\"}".into())),
            (_, Value::Array(a)) => {
                let ds: Vec<usize> = a
                    .iter()
                    .map(|x| x.as_u64().filter(|d| *d > 0).map(|d| d as usize))
                    .collect::<Option<_>>()
                    .ok_or_else(|| CliError::Input("dims must be positive integers".into()))?;
                match ds[..] {
                    [a] => Dims::Factors(a, 1),
                    [a, b] => Dims::Factors(a, b),
                    _ => return Err(CliError::Input("dims must be [d_A, d_B]".into())),
                }
            }
            _ => return Err(CliError::Input("dims must be [d_A, d_B]".into())),
        };
        let n = match dims {
            Dims::Factors(a, b) => a * b,
            Dims::Channel { d_in, d_out } => d_in * d_out,
        };
        let rows = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| CliError::Input("\"data\" must be an array of rows".into()))?;
        if rows.len() != n {
            return Err(CliError::Input(format!("data has {} rows, dims imply {n}", rows.len())));
        }
        let mut m = CMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            let row = row
                .as_array()
                .filter(|r| r.len() == n)
                .ok_or_else(|| CliError::Input(format!("row {i} must have {n} entries")))?;
            for (j, e) in row.iter().enumerate() {
                let pair = e
                    .as_array()
                    .filter(|p| p.len() == 2)
                    .ok_or_else(|| CliError::Input(format!("entry ({i}, {j}) must be [re, im]")))?;
                m[(i, j)] = c(entry(&pair[0], i, j)?, entry(&pair[1], i, j)?);
            }
        }
        Ok(Self { kind, dims, data: m })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| CliError::Input(format!("malformed JSON: {e}")))?;
        Self::from_value(&v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }

    pub fn factored_dims(&self) -> CliResult<FactoredDims> {
        match self.dims {
            Dims::Factors(a, b) => Ok(FactoredDims::new(a, b)?),
            Dims::Channel { .. } => Err(CliError::Input("expected a state, got a channel".into())),
        }
    }

    pub fn into_state(self) -> CliResult<BipartiteState> {
        if self.kind != Kind::State {
            return Err(CliError::Input(format!("expected a state, got {}", self.kind.word())));
        }
        let dims = self.factored_dims()?;
        Ok(BipartiteState::new(self.data, dims)?)
    }

    pub fn into_channel(self) -> CliResult<Channel> {
        match (self.kind, self.dims) {
            (Kind::Channel, Dims::Channel { d_in, d_out }) => Ok(Channel::from_choi(self.data, d_in, d_out)?),
            _ => Err(CliError::Input(format!("expected a channel, got {}", self.kind.word()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qmaj::linalg;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(0.1 + 0.2, -1e-300);
        m[(0, 1)] = c(1.0 / 3.0, f64::MIN_POSITIVE);
        m[(1, 0)] = c(-0.0, 2f64.sqrt());
        m[(1, 1)] = c(1e300, -7.0);
        let f = MatrixFile::operator(m.clone());
        let back = MatrixFile::parse(&f.to_json()).unwrap();
        for (x, y) in m.iter().zip(back.data.iter()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }

    #[test]
    fn accepts_decimal_strings() {
        let f = MatrixFile::parse(r#"{"kind":"state","dims":[1,2],"data":[[["0.5","0"],[0,0]],[[0,0],["0.5","0"]]]}"#)
            .unwrap();
        assert_eq!(f.into_state().unwrap().matrix(), &linalg::maximally_mixed(2));
    }

    #[test]
    fn rejects_bad_input() {
        let bad = [
            "{",
            r#"{"kind":"state","dims":[2,2],"data":[]}"#,
            r#"{"kind":"state","dims":[1,1],"data":[[["NaN",0]]]}"#,
            r#"{"kind":"blob","dims":[1,1],"data":[[[1,0]]]}"#,
            r#"{"kind":"channel","dims":[1,1],"data":[[[1,0]]]}"#,
            r#"{"kind":"state","dims":[1,1],"data":[[[1]]]}"#,
        ];
        for b in bad {
            assert!(matches!(MatrixFile::parse(b), Err(CliError::Input(_))), "{b}");
        }
    }

    #[test]
    fn channel_dims_round_trip() {
        let ch = qmaj::channel::depolarizing(2, 0.3).unwrap();
        let f = MatrixFile::channel(&ch);
        let back = MatrixFile::parse(&f.to_json()).unwrap().into_channel().unwrap();
        assert_eq!(back.choi(), ch.choi());
    }
}
