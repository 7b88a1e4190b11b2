//! FCIDUMP reader and writer (Molpro convention).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Entries whose duplicates differ by less than this are treated as equal.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

#[inline]
fn pair_index(p: usize, q: usize) -> usize {
    let (a, b) = if p >= q { (p, q) } else { (q, p) };
    a * (a + 1) / 2 + b
}

/// Canonical compressed index of `(pq|rs)` under the 8-fold permutational
/// symmetry of real orbitals.
#[inline]
pub fn eri_index(p: usize, q: usize, r: usize, s: usize) -> usize {
    pair_index(pair_index(p, q), pair_index(r, s))
}

/// Active-space integrals in Hartree, 0-based spatial orbital indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralTable {
    pub n_orb: usize,
    pub n_elec: usize,
    pub ms2: i32,
    pub core_energy: f64,
    h: Vec<f64>,
    g: Vec<f64>,
    /// Header keys other than NORB/NELEC/MS2, kept verbatim.
    pub extra_header: BTreeMap<String, Vec<String>>,
}

impl IntegralTable {
    pub fn zeros(n_orb: usize, n_elec: usize, ms2: i32) -> Self {
        let n_pair = n_orb * (n_orb + 1) / 2;
        IntegralTable {
            n_orb,
            n_elec,
            ms2,
            core_energy: 0.0,
            h: vec![0.0; n_orb * n_orb],
            g: vec![0.0; n_pair * (n_pair + 1) / 2],
            extra_header: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn one_body(&self, p: usize, q: usize) -> f64 {
        self.h[p * self.n_orb + q]
    }

    /// `(pq|rs)` in chemists' notation.
    #[inline]
    pub fn eri(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.g[eri_index(p, q, r, s)]
    }

    pub fn set_one_body(&mut self, p: usize, q: usize, value: f64) {
        self.h[p * self.n_orb + q] = value;
        self.h[q * self.n_orb + p] = value;
    }

    pub fn set_eri(&mut self, p: usize, q: usize, r: usize, s: usize, value: f64) {
        self.g[eri_index(p, q, r, s)] = value;
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse_fcidump(&text)
    }

    pub fn from_reader(mut reader: impl Read) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        parse_fcidump(&text)
    }
}

fn parse_value(token: &str) -> Option<f64> {
    token.replace(['D', 'd'], "e").parse().ok()
}

/// Parses FCIDUMP text. Duplicate records of the same canonical integral
/// must agree to [`DUPLICATE_TOLERANCE`]; the later one is kept.
pub fn parse_fcidump(text: &str) -> Result<IntegralTable> {
    let mut lines = text.lines().enumerate();
    let mut header = String::new();
    let mut terminated = false;
    for (_, line) in lines.by_ref() {
        let trimmed = line.trim();
        let upper = trimmed.to_ascii_uppercase();
        if let Some(pos) = upper.find("&END") {
            header.push_str(&trimmed[..pos]);
            terminated = true;
            break;
        }
        if trimmed == "/" || upper.ends_with('/') {
            header.push_str(trimmed.trim_end_matches('/'));
            terminated = true;
            break;
        }
        header.push_str(trimmed);
        header.push(' ');
    }
    if !terminated {
        return Err(Error::MalformedHeader("missing &END or / terminator".into()));
    }
    let fields = parse_header_fields(&header)?;
    let get_int = |key: &str| -> Result<Option<i64>> {
        match fields.get(key) {
            None => Ok(None),
            Some(vals) => vals
                .first()
                .and_then(|v| v.parse::<i64>().ok())
                .map(Some)
                .ok_or_else(|| Error::MalformedHeader(format!("{key} is not an integer"))),
        }
    };
    let n_orb = get_int("NORB")?.ok_or_else(|| Error::MalformedHeader("NORB missing".into()))?;
    let n_elec = get_int("NELEC")?.ok_or_else(|| Error::MalformedHeader("NELEC missing".into()))?;
    let ms2 = get_int("MS2")?.unwrap_or(0);
    if n_orb <= 0 || n_elec < 0 || n_elec > 2 * n_orb {
        return Err(Error::MalformedHeader(format!("NORB={n_orb}, NELEC={n_elec}")));
    }
    let n_orb = n_orb as usize;
    let mut table = IntegralTable::zeros(n_orb, n_elec as usize, ms2 as i32);
    table.extra_header = fields
        .into_iter()
        .filter(|(k, _)| !matches!(k.as_str(), "NORB" | "NELEC" | "MS2"))
        .collect();

    // Keyed by the canonical storage slot: 0 = core, 1 = one-body, 2 = two-body.
    let mut seen: BTreeMap<(u8, usize), f64> = BTreeMap::new();
    for (line_no, line) in lines {
        let line_no = line_no + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(Error::MalformedRecord {
                line: line_no,
                msg: format!("expected 5 fields, found {}", tokens.len()),
            });
        }
        let value = parse_value(tokens[0]).ok_or_else(|| Error::MalformedRecord {
            line: line_no,
            msg: format!("bad value {:?}", tokens[0]),
        })?;
        let mut idx = [0usize; 4];
        for (slot, tok) in idx.iter_mut().zip(&tokens[1..]) {
            *slot = tok.parse().map_err(|_| Error::MalformedRecord {
                line: line_no,
                msg: format!("bad index {tok:?}"),
            })?;
            if *slot > n_orb {
                return Err(Error::IndexOutOfRange {
                    line: line_no,
                    index: *slot,
                    n_orb,
                });
            }
        }
        let [i, j, k, l] = idx;
        let key = match (i, j, k, l) {
            (0, 0, 0, 0) => (0u8, 0usize),
            (_, _, 0, 0) if i > 0 && j > 0 => (1, pair_index(i - 1, j - 1)),
            _ if i > 0 && j > 0 && k > 0 && l > 0 => (2, eri_index(i - 1, j - 1, k - 1, l - 1)),
            // Orbital energies (i 0 0 0) carry no integral information here.
            (_, 0, 0, 0) => continue,
            _ => {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    msg: format!("unsupported index pattern {idx:?}"),
                })
            }
        };
        if let Some(&first) = seen.get(&key) {
            if (first - value).abs() > DUPLICATE_TOLERANCE {
                return Err(Error::DuplicateInconsistentEntry {
                    indices: idx,
                    first,
                    second: value,
                });
            }
        }
        seen.insert(key, value);
        match key.0 {
            0 => table.core_energy = value,
            1 => table.set_one_body(i - 1, j - 1, value),
            _ => table.set_eri(i - 1, j - 1, k - 1, l - 1, value),
        }
    }
    Ok(table)
}

fn parse_header_fields(header: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let body = header.trim();
    let upper = body.to_ascii_uppercase();
    let body = match upper.find("&FCI") {
        Some(pos) => &body[pos + 4..],
        None => return Err(Error::MalformedHeader("missing &FCI".into())),
    };
    let mut fields: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for token in body.replace(',', " ").split_whitespace() {
        if let Some((key, value)) = token.split_once('=') {
            let key = key.trim().to_ascii_uppercase();
            if key.is_empty() {
                return Err(Error::MalformedHeader(format!("dangling '=' in {token:?}")));
            }
            let entry = fields.entry(key.clone()).or_default();
            if !value.is_empty() {
                entry.push(value.to_string());
            }
            current = Some(key);
        } else {
            match &current {
                Some(key) => fields.get_mut(key).unwrap().push(token.to_string()),
                None => return Err(Error::MalformedHeader(format!("value {token:?} before any key"))),
            }
        }
    }
    Ok(fields)
}

/// Serializes a table; values use the shortest round-tripping exponent form,
/// so parsing the output reproduces every integral exactly.
pub fn write_fcidump(table: &IntegralTable) -> String {
    let n = table.n_orb;
    let mut out = String::new();
    let _ = write!(out, " &FCI NORB={},NELEC={},MS2={},", n, table.n_elec, table.ms2);
    for (key, values) in &table.extra_header {
        let _ = write!(out, "\n  {}={},", key, values.join(","));
    }
    out.push_str("\n &END\n");
    for i in 0..n {
        for j in 0..=i {
            for k in 0..n {
                for l in 0..=k {
                    if pair_index(k, l) > pair_index(i, j) {
                        continue;
                    }
                    let v = table.eri(i, j, k, l);
                    if v != 0.0 {
                        let _ = writeln!(out, "{:e} {} {} {} {}", v, i + 1, j + 1, k + 1, l + 1);
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let v = table.one_body(i, j);
            if v != 0.0 {
                let _ = writeln!(out, "{:e} {} {} 0 0", v, i + 1, j + 1);
            }
        }
    }
    let _ = writeln!(out, "{:e} 0 0 0 0", table.core_energy);
    out
}
