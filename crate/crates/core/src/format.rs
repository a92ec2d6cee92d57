//! Text formats: `%.17g`-style floats and NDJSON trajectory files.
//!
//! A dataset file holds one trajectory per line:
//! `{"seed":1,"t":[...],"s":[[...],...],"sdot":[[...],...]}`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::physics::Trajectory;

/// Formats like C's `printf("%.17g", x)`: 17 significant digits, trailing
/// zeros removed, exponent notation outside `1e-4 <= |x| < 1e17`. Enough
/// digits to round-trip every `f64`.
pub fn format_g17(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), sign, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn push_array(out: &mut String, values: &[f64]) -> Result<()> {
    out.push('[');
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("cannot serialize {v}")));
        }
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_g17(v));
    }
    out.push(']');
    Ok(())
}

/// One NDJSON line (without the newline).
pub fn trajectory_line(t: &Trajectory) -> Result<String> {
    let mut out = String::new();
    write!(out, "{{\"seed\":{},\"t\":", t.seed).expect("string write");
    push_array(&mut out, &t.times)?;
    for (key, rows) in [("s", &t.states), ("sdot", &t.derivs)] {
        write!(out, ",\"{key}\":[").expect("string write");
        for (i, row) in rows.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_array(&mut out, row)?;
        }
        out.push(']');
    }
    out.push('}');
    Ok(out)
}

pub fn write_trajectories<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<()> {
    for t in trajectories {
        writeln!(w, "{}", trajectory_line(t)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectories(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<()> {
    let file = fs::File::create(path)?;
    write_trajectories(std::io::BufWriter::new(file), trajectories)
}

/// Parses NDJSON; blank lines are skipped.
pub fn read_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    read_trajectories(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn matches_printf_g17() {
        let cases = [
            (1.0, "1"),
            (0.1, "0.10000000000000001"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (0.0001, "0.0001"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (123456789.0, "123456789"),
            (std::f64::consts::PI, "3.1415926535897931"),
            (6.02214076e23, "6.0221407599999999e+23"),
            (-0.0, "-0"),
            (5e-324, "4.9406564584124654e-324"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g17(x), want, "{x:e}");
        }
    }

    #[test]
    fn line_layout_and_round_trip() {
        let t = Trajectory {
            seed: 7,
            times: vec![0.0, 0.5],
            states: vec![vec![1.0, 0.1], vec![-3.0, 2.0]],
            derivs: vec![vec![0.0, -1.0], vec![1e-7, 2.0]],
        };
        let line = trajectory_line(&t).unwrap();
        assert_eq!(
            line,
            r#"{"seed":7,"t":[0,0.5],"s":[[1,0.10000000000000001],[-3,2]],"sdot":[[0,-1],[9.9999999999999995e-08,2]]}"#
        );
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &[t.clone(), t.clone()]).unwrap();
        let back = read_trajectories(buf.as_slice()).unwrap();
        assert_eq!(back, vec![t.clone(), t]);
    }

    #[test]
    fn rejects_non_finite_and_malformed() {
        let t = Trajectory {
            seed: 0,
            times: vec![f64::NAN],
            states: vec![vec![0.0]],
            derivs: vec![vec![0.0]],
        };
        assert!(trajectory_line(&t).is_err());
        assert!(matches!(
            read_trajectories("{\"seed\":1}\n".as_bytes()),
            Err(Error::Format(_))
        ));
    }

    proptest! {
        #[test]
        fn g17_round_trips_bitwise(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let s = format_g17(x);
            let back: f64 = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
