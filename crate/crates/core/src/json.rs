//! JSON helpers. Non-finite floats are written as the strings `"inf"`,
//! `"-inf"` and `"nan"` instead of `null`.

pub const SCHEMA_VERSION: u32 = 1;

pub fn float(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::String(num::label(v).to_owned())
    }
}

pub mod num {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub(crate) fn label(v: f64) -> &'static str {
        if v.is_nan() {
            "nan"
        } else if v > 0.0 {
            "inf"
        } else {
            "-inf"
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(label(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    fn parse<E: Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("expected a number, got \"{other}\""))),
            },
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        parse(Repr::deserialize(d)?)
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                if x.is_finite() {
                    seq.serialize_element(x)?;
                } else {
                    seq.serialize_element(super::label(*x))?;
                }
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<super::Repr>::deserialize(d)?
                .into_iter()
                .map(super::parse)
                .collect()
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<super::Repr>::deserialize(d)?.map(super::parse).transpose()
        }
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Probe {
        #[serde(with = "super::num")]
        a: f64,
        #[serde(with = "super::num::vec")]
        b: Vec<f64>,
        #[serde(with = "super::num::option")]
        c: Option<f64>,
    }

    #[test]
    fn non_finite_round_trip() {
        let p = Probe {
            a: f64::INFINITY,
            b: vec![1.5, f64::NEG_INFINITY],
            c: Some(2.0),
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"a":"inf","b":[1.5,"-inf"],"c":2.0}"#);
        assert_eq!(serde_json::from_str::<Probe>(&s).unwrap(), p);
        assert!(serde_json::from_str::<Probe>(r#"{"a":"x","b":[],"c":null}"#).is_err());
        assert_eq!(super::float(f64::NAN), serde_json::json!("nan"));
    }
}
