//! Artifact writing: JSON and CSV with 17 significant digits, and a
//! manifest with SHA-256 checksums of every file in the output directory.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Seventeen significant digits, positional for decimal exponents in
/// `[-5, 17)` and scientific otherwise. Parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let s = format!("{x:.16e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..17).contains(&exp) {
        return format!("{mantissa}e{exp}");
    }
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if exp >= 0 {
        let split = exp as usize + 1;
        let frac = &digits[split..];
        format!("{sign}{}.{}", &digits[..split], if frac.is_empty() { "0" } else { frac })
    } else {
        format!("{sign}0.{}{digits}", "0".repeat((-exp - 1) as usize))
    }
}

/// Pretty JSON whose floats go through [`fmt_f64`].
struct Pretty17<'a>(PrettyFormatter<'a>);

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {$(
        fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        }
    )*};
}

impl Formatter for Pretty17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    forward! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

/// Serialize with two-space indentation, a trailing newline and 17-digit
/// floats. Non-finite floats become `null`.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Pretty17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A cell of a CSV row.
#[derive(Debug, Clone, Copy)]
pub enum Cell {
    Int(u64),
    Float(f64),
}

impl Cell {
    fn render(self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(v),
        }
    }
}

pub fn csv(header: &[String], rows: &[Vec<Cell>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| c.render()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the canonical config JSON.
    pub config_sha256: String,
    pub master_seed: u64,
    pub replications: usize,
    /// How per-replication streams are derived from the master seed.
    pub seed_derivation: String,
    pub workers: usize,
    /// The feasibility conditions failed and the run was forced.
    pub forced: bool,
    pub assumption_failures: Vec<String>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    /// File name to SHA-256, manifest excluded.
    pub files: BTreeMap<String, String>,
}

pub const SEED_DERIVATION: &str = "ChaCha8 keyed by a splitmix64 expansion of (master_seed, replication); \
     stream 0 noise, 1 initial point, 2 auxiliary; step n starts at word n*stride";

/// Write `files` into `dir` and a manifest listing their checksums.
pub fn write_artifacts(dir: &Path, files: &[(String, Vec<u8>)], mut manifest: Manifest) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(dir)?;
    manifest.files.clear();
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes)?;
        manifest.files.insert(name.clone(), sha256_hex(bytes));
    }
    std::fs::write(dir.join(MANIFEST), to_json(&manifest))?;
    Ok(manifest)
}

/// Recompute the checksums listed in `dir/manifest.json`. Returns the names
/// of missing or modified files.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("bad manifest: {e}")))?;
    let mut bad = Vec::new();
    for (name, sum) in &manifest.files {
        match std::fs::read(dir.join(name)) {
            Ok(bytes) if &sha256_hex(&bytes) == sum => {}
            _ => bad.push(name.clone()),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        assert_eq!(fmt_f64(0.75), "0.75000000000000000");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000");
        assert_eq!(fmt_f64(-(2f64.powi(-20))), "-9.5367431640625000e-7");
        assert_eq!(fmt_f64(-2.5e-7), "-2.4999999999999999e-7");
        assert_eq!(fmt_f64(1e20), "1.0000000000000000e20");
        assert_eq!(fmt_f64(123456.0), "123456.00000000000");
        for &x in &[0.1, 1.0 / 3.0, std::f64::consts::PI * 1e-5, 6.02214076e23, -1.7976931348623157e308, 5e-324] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x, "{x}");
            let digits = fmt_f64(x).chars().filter(|c| c.is_ascii_digit()).count();
            assert!(digits >= 17);
        }
    }

    #[test]
    fn json_floats_use_the_fixed_format() {
        let s = to_json(&serde_json::json!({"a": 0.1, "b": [1, 2.0], "c": f64::NAN}));
        assert!(s.contains("\"a\": 0.10000000000000001"), "{s}");
        assert!(s.contains("2.0000000000000000"));
        assert!(s.contains("\"c\": null"));
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn manifest_detects_modified_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            tool: "t".into(),
            version: "0".into(),
            command: "simulate".into(),
            config_sha256: sha256_hex(b"{}"),
            master_seed: 1,
            replications: 2,
            seed_derivation: SEED_DERIVATION.into(),
            workers: 1,
            forced: false,
            assumption_failures: vec![],
            started_unix_seconds: 0,
            wall_clock_seconds: 0.0,
            files: BTreeMap::new(),
        };
        let files = vec![("a.csv".to_string(), b"x\n1\n".to_vec()), ("b.json".to_string(), b"{}\n".to_vec())];
        let written = write_artifacts(dir.path(), &files, m).unwrap();
        assert_eq!(written.files["a.csv"], sha256_hex(b"x\n1\n"));
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        std::fs::remove_file(dir.path().join("b.json")).unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["a.csv".to_string(), "b.json".to_string()]);
    }
}
