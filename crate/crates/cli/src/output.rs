//! JSON emission with 17 significant digits and string-encoded infinities.

use std::io;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{Map, Value};

struct SigDigits;

impl Formatter for SigDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", format_f64(value))
    }
}

/// `value` with 17 significant digits in JSON number syntax.
pub fn format_f64(value: f64) -> String {
    if value == 0.0 {
        return "0.0".into();
    }
    let s = format!("{value:.16e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
        let neg = value < 0.0;
        let mut out = String::new();
        if neg {
            out.push('-');
        }
        if exp >= 0 {
            let split = exp as usize + 1;
            out.push_str(&digits[..split]);
            out.push('.');
            out.push_str(&digits[split..]);
        } else {
            out.push_str("0.");
            out.push_str(&"0".repeat((-exp - 1) as usize));
            out.push_str(&digits);
        }
        out
    } else {
        format!("{mantissa}e{exp}")
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    value.serialize(&mut ser).expect("serializing to memory");
    String::from_utf8(buf).expect("utf-8 json")
}

/// Finite values as numbers, infinities as strings, NaN as null.
pub fn num(x: f64) -> Value {
    if x.is_nan() {
        Value::Null
    } else if x == f64::INFINITY {
        Value::String("inf".into())
    } else if x == f64::NEG_INFINITY {
        Value::String("-inf".into())
    } else {
        Value::from(x)
    }
}

pub fn vector(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

pub fn slice(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect()))
            .collect(),
    )
}

pub fn object(pairs: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    for (k, v) in pairs {
        map.insert(k.to_string(), v);
    }
    Value::Object(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, -2.0627128, 1e-300, 123456.789, 0.000123, 7.0, -1e20] {
            let s = format_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
            assert!(digits >= 17, "{s}");
        }
        assert_eq!(format_f64(0.5), "0.50000000000000000");
        assert_eq!(format_f64(-0.039), "-0.039000000000000000");
    }

    #[test]
    fn infinities_are_strings() {
        let v = Value::Array(vec![num(f64::INFINITY), num(f64::NEG_INFINITY), num(f64::NAN), num(1.0)]);
        assert_eq!(to_json_string(&v), r#"["inf","-inf",null,1.0000000000000000]"#);
    }
}
