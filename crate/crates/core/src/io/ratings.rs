use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{Entry, ObservationMask};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingsFormat {
    /// `user::item::rating[::timestamp]`
    DoubleColon,
    /// `user<TAB>item<TAB>rating[<TAB>...]`
    Tsv,
    /// Matrix Market coordinate file.
    MatrixMarket,
}

impl std::str::FromStr for RatingsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double_colon" => Ok(Self::DoubleColon),
            "tsv" => Ok(Self::Tsv),
            "matrix_market" => Ok(Self::MatrixMarket),
            other => Err(Error::Config(format!("unknown ratings format {other:?}"))),
        }
    }
}

/// Dense 0-based indices for external ids, in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.external.len();
        self.external.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn external(&self, i: usize) -> Option<&str> {
        self.external.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// CSV with header `index,external_id`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("index,external_id\n");
        for (i, id) in self.external.iter().enumerate() {
            out.push_str(&format!("{i},{id}\n"));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ratings<T> {
    pub mask: ObservationMask<T>,
    pub users: IdMap,
    pub items: IdMap,
}

impl<T> Ratings<T> {
    /// Writes `users.csv` and `items.csv` into `dir`.
    pub fn write_id_maps(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.users.write_csv(dir.join("users.csv"))?;
        self.items.write_csv(dir.join("items.csv"))
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn load_ratings<T: Real>(path: impl AsRef<Path>, format: RatingsFormat) -> Result<Ratings<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text, path, format)
}

/// Parses ratings text; `path` is only used in error messages.
pub fn parse_ratings<T: Real>(text: &str, path: &Path, format: RatingsFormat) -> Result<Ratings<T>> {
    if format == RatingsFormat::MatrixMarket {
        return parse_matrix_market(text, path);
    }
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            RatingsFormat::DoubleColon => line.split("::").collect(),
            _ => line.split('\t').collect(),
        };
        if fields.len() < 3 {
            return Err(parse_err(path, n + 1, format!("expected user, item and rating, got {line:?}")));
        }
        let (u, i) = (fields[0].trim(), fields[1].trim());
        if u.is_empty() || i.is_empty() {
            return Err(parse_err(path, n + 1, "empty user or item id"));
        }
        let value: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, n + 1, format!("bad rating {:?}", fields[2])))?;
        if !value.is_finite() {
            return Err(parse_err(path, n + 1, "rating is not finite"));
        }
        let (row, col) = (users.intern(u), items.intern(i));
        if !seen.insert((row, col)) {
            return Err(parse_err(path, n + 1, format!("duplicate rating for user {u} and item {i}")));
        }
        entries.push(Entry {
            row,
            col,
            value: T::lit(value),
        });
    }
    if entries.is_empty() {
        return Err(Error::Empty(path.display().to_string()));
    }
    let mask = ObservationMask::new(users.len(), items.len(), entries)?;
    Ok(Ratings { mask, users, items })
}

fn parse_matrix_market<T: Real>(text: &str, path: &Path) -> Result<Ratings<T>> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.to_ascii_lowercase()).unwrap_or_default();
    if !header.starts_with("%%matrixmarket") || !header.contains("coordinate") {
        return Err(parse_err(path, 1, "expected a Matrix Market coordinate header"));
    }
    let symmetric = header.contains("symmetric");
    let pattern = header.contains("pattern");
    let mut dims = None;
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (n, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some((rows, cols)) = dims else {
            if fields.len() != 3 {
                return Err(parse_err(path, n + 1, "expected `rows cols nnz`"));
            }
            let parse = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, n + 1, format!("bad size {s:?}")));
            dims = Some((parse(fields[0])?, parse(fields[1])?));
            continue;
        };
        let need = if pattern { 2 } else { 3 };
        if fields.len() < need {
            return Err(parse_err(path, n + 1, format!("expected {need} fields, got {line:?}")));
        }
        let idx = |s: &str, bound: usize| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| parse_err(path, n + 1, format!("bad index {s:?}")))?;
            if v == 0 || v > bound {
                return Err(parse_err(path, n + 1, format!("index {v} outside 1..={bound}")));
            }
            Ok(v - 1)
        };
        let (row, col) = (idx(fields[0], rows)?, idx(fields[1], cols)?);
        let value: f64 = if pattern {
            1.0
        } else {
            fields[2]
                .parse()
                .map_err(|_| parse_err(path, n + 1, format!("bad value {:?}", fields[2])))?
        };
        let mut push = |row: usize, col: usize| -> Result<()> {
            if !seen.insert((row, col)) {
                return Err(parse_err(path, n + 1, format!("duplicate entry ({}, {})", row + 1, col + 1)));
            }
            entries.push(Entry {
                row,
                col,
                value: T::lit(value),
            });
            Ok(())
        };
        push(row, col)?;
        if symmetric && row != col {
            push(col, row)?;
        }
    }
    let Some((rows, cols)) = dims else {
        return Err(Error::Empty(path.display().to_string()));
    };
    if entries.is_empty() {
        return Err(Error::Empty(path.display().to_string()));
    }
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    for r in 1..=rows {
        users.intern(&r.to_string());
    }
    for c in 1..=cols {
        items.intern(&c.to_string());
    }
    let mask = ObservationMask::new(rows, cols, entries)?;
    Ok(Ratings { mask, users, items })
}

/// Number of training entries: `round(fraction · n)` with halves rounded up.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).min(n)
}

/// Random partition of the entries into `round(fraction · N)` training
/// entries and the rest; entries keep their relative order in each part.
pub fn split_train_test<T: Real>(
    mask: &ObservationMask<T>,
    fraction: f64,
    seed: u64,
) -> Result<(ObservationMask<T>, ObservationMask<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = mask.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &k in &order[..train_count(n, fraction)] {
        is_train[k] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, e) in mask.entries().iter().enumerate() {
        if is_train[k] {
            train.push(*e);
        } else {
            test.push(*e);
        }
    }
    Ok((
        ObservationMask::new(mask.rows(), mask.cols(), train)?,
        ObservationMask::new(mask.rows(), mask.cols(), test)?,
    ))
}
