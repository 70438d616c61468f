use std::io::{BufRead, Write};

use super::{DynamicsError, ForceSample, State};

/// Shortest round-trip-safe rendering: 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `t, q_1..q_n, qdot_1..qdot_n, f_1..f_n[, fc_1..fc_n, fn_1..fn_n]`.
/// The split columns appear only when every sample carries it.
pub fn write_samples_csv<W: Write>(mut w: W, samples: &[ForceSample]) -> Result<(), DynamicsError> {
    let Some(first) = samples.first() else {
        return Err(DynamicsError::EmptyDataset("nothing to write".into()));
    };
    let n = first.state.dim();
    let split = samples.iter().all(|s| s.f_c_true.is_some() && s.f_n_true.is_some());
    let mut header = vec!["t".to_string()];
    for prefix in ["q", "qdot", "f"] {
        header.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    if split {
        for prefix in ["fc", "fn"] {
            header.extend((1..=n).map(|i| format!("{prefix}_{i}")));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for s in samples {
        let mut row = vec![format_real(s.state.t)];
        let mut cols: Vec<&[f64]> = vec![&s.state.q, &s.state.qdot, &s.f];
        if split {
            cols.push(s.f_c_true.as_deref().unwrap_or_default());
            cols.push(s.f_n_true.as_deref().unwrap_or_default());
        }
        for c in cols {
            row.extend(c.iter().map(|v| format_real(*v)));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_samples_csv`].
pub fn read_samples_csv<R: BufRead>(r: R) -> Result<Vec<ForceSample>, DynamicsError> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(DynamicsError::EmptyDataset("missing header".into())),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with("q_")).count();
    let split = cols.iter().any(|c| c.starts_with("fc_"));
    let expected = 1 + n * if split { 5 } else { 3 };
    if n == 0 || cols.len() != expected || cols[0] != "t" {
        return Err(DynamicsError::Parse {
            line: 1,
            reason: format!("unexpected header `{header}`"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DynamicsError::Parse {
                line: i + 2,
                reason: e.to_string(),
            })?;
        if vals.len() != expected {
            return Err(DynamicsError::Parse {
                line: i + 2,
                reason: format!("expected {expected} fields, got {}", vals.len()),
            });
        }
        let block = |k: usize| vals[1 + k * n..1 + (k + 1) * n].to_vec();
        out.push(ForceSample {
            state: State::new(block(0), block(1), vals[0]),
            f: block(2),
            f_c_true: split.then(|| block(3)),
            f_n_true: split.then(|| block(4)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_gaussian_states, SystemKind, SystemSpec};

    #[test]
    fn seventeen_significant_digits() {
        let s = format_real(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = SystemSpec::new(SystemKind::HoMf);
        let data = sample_gaussian_states(&spec, 50, 9).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,q_1,q_2,qdot_1,qdot_2,f_1,f_2,fc_1,fc_2,fn_1,fn_2\n"));
        let back = read_samples_csv(&buf[..]).unwrap();
        assert_eq!(back, data);
    }
}
