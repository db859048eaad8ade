use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense matrix from a CSV (comma or whitespace separated) or a Matrix Market
/// file (`.mtx`, array or coordinate).
pub fn load_dense_matrix<T: Real>(path: impl AsRef<Path>) -> Result<Array2<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
        parse_matrix_market_dense(&text, path)
    } else {
        parse_dense_csv(&text, path)
    }
}

fn err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn parse_dense_csv<T: Real>(text: &str, path: &Path) -> Result<Array2<T>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(err(path, n + 1, format!("expected {c} columns, got {}", fields.len())))
            }
            _ => {}
        }
        for f in fields {
            let v: f64 = f.parse().map_err(|_| err(path, n + 1, format!("bad number {f:?}")))?;
            data.push(T::lit(v));
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Empty(path.display().to_string()))?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn parse_matrix_market_dense<T: Real>(text: &str, path: &Path) -> Result<Array2<T>> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.to_ascii_lowercase()).unwrap_or_default();
    if !header.starts_with("%%matrixmarket") {
        return Err(err(path, 1, "missing Matrix Market header"));
    }
    let coordinate = header.contains("coordinate");
    let mut out: Option<Array2<T>> = None;
    let mut next = 0usize;
    for (n, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(path, n + 1, format!("bad number {s:?}")));
        let idx = |s: &str| s.parse::<usize>().map_err(|_| err(path, n + 1, format!("bad index {s:?}")));
        let Some(m) = out.as_mut() else {
            if fields.len() < 2 {
                return Err(err(path, n + 1, "expected matrix dimensions"));
            }
            out = Some(Array2::zeros((idx(fields[0])?, idx(fields[1])?)));
            continue;
        };
        let (rows, cols) = m.dim();
        if coordinate {
            if fields.len() < 3 {
                return Err(err(path, n + 1, "expected `row col value`"));
            }
            let (i, j) = (idx(fields[0])?, idx(fields[1])?);
            if i == 0 || j == 0 || i > rows || j > cols {
                return Err(err(path, n + 1, format!("index ({i}, {j}) out of range")));
            }
            m[[i - 1, j - 1]] = T::lit(num(fields[2])?);
        } else {
            // Array format is column-major.
            if next >= rows * cols {
                return Err(err(path, n + 1, "more values than the declared size"));
            }
            m[[next % rows, next / rows]] = T::lit(num(fields[0])?);
            next += 1;
        }
    }
    let m = out.ok_or_else(|| Error::Empty(path.display().to_string()))?;
    if !coordinate && next != m.len() {
        return Err(err(path, 0, format!("expected {} values, got {next}", m.len())));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_and_mtx() {
        let p = Path::new("x");
        let a: Array2<f64> = parse_dense_csv("1,2\n3, 4\n", p).unwrap();
        assert_eq!(a, array![[1.0, 2.0], [3.0, 4.0]]);
        assert!(parse_dense_csv::<f64>("1,2\n3\n", p).is_err());
        let b: Array2<f64> = parse_matrix_market_dense("%%MatrixMarket matrix array real general\n2 2\n1\n3\n2\n4\n", p).unwrap();
        assert_eq!(b, a);
    }
}
