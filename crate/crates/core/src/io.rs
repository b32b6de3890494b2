//! File formats: ensemble CSV and the binary tensor format with its JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensembles::{EnsembleKind, WeightEnsemble};
use crate::error::{Error, Result};
use crate::tensors::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"SYMT";
pub const TENSOR_VERSION: u32 = 1;

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn ensemble_to_csv(w: &WeightEnsemble) -> String {
    let mut out = format!("# d={} r={} kind={} seed={}\n", w.d(), w.r(), w.kind, w.seed);
    for row in w.rows() {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn ensemble_from_csv(text: &str) -> Result<WeightEnsemble> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty ensemble file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse(format!("missing '# d=.. r=.. kind=.. seed=..' header, got {header:?}")))?;
    let (mut d, mut r, mut kind, mut seed) = (None, None, None, None);
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("malformed header field {field:?}")))?;
        let bad = |_| Error::Parse(format!("bad value for {key}: {value:?}"));
        match key {
            "d" => d = Some(value.parse::<usize>().map_err(bad)?),
            "r" => r = Some(value.parse::<usize>().map_err(bad)?),
            "kind" => kind = Some(value.parse::<EnsembleKind>()?),
            "seed" => seed = Some(value.parse::<u64>().map_err(bad)?),
            other => return Err(Error::Parse(format!("unknown header field {other:?}"))),
        }
    }
    let missing = |name: &str| Error::Parse(format!("header lacks {name}"));
    let (d, r) = (d.ok_or_else(|| missing("d"))?, r.ok_or_else(|| missing("r"))?);
    let mut data = Vec::with_capacity(d * r);
    for (line_no, line) in lines.enumerate() {
        let before = data.len();
        for cell in line.split(',') {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {}: cannot parse {cell:?}", line_no + 1)))?;
            data.push(v);
        }
        if data.len() - before != d {
            return Err(Error::Parse(format!("row {} has {} values, expected {d}", line_no + 1, data.len() - before)));
        }
    }
    if data.len() != d * r {
        return Err(Error::Parse(format!("expected {r} rows, found {}", data.len() / d.max(1))));
    }
    WeightEnsemble::from_flat(d, data, kind.unwrap_or(EnsembleKind::Custom), seed.unwrap_or(0))
}

pub fn write_ensemble(path: &Path, w: &WeightEnsemble) -> Result<()> {
    fs::write(path, ensemble_to_csv(w))?;
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<WeightEnsemble> {
    ensemble_from_csv(&fs::read_to_string(path)?)
}

/// Provenance stored next to a tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub order: usize,
    pub dim: usize,
    pub ensemble_kind: String,
    pub seed: u64,
    pub rows: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn tensor_to_bytes(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.order() as u32).to_le_bytes());
    out.extend_from_slice(&(t.dim() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<DenseTensor> {
    if bytes.len() < 16 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Parse("not a SYMT tensor file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
    let version = word(4);
    if version != TENSOR_VERSION {
        return Err(Error::Parse(format!("unsupported tensor file version {version}")));
    }
    let (order, dim) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() % 8 != 0 {
        return Err(Error::Parse("tensor payload is not a whole number of f64 values".into()));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    DenseTensor::from_data(order, dim, data).map_err(|e| Error::Parse(format!("tensor payload: {e}")))
}

pub fn write_tensor(path: &Path, t: &DenseTensor, sidecar: &TensorSidecar) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&tensor_to_bytes(t))?;
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    tensor_from_bytes(&fs::read(path)?)
}

pub fn read_sidecar(path: &Path) -> Result<TensorSidecar> {
    let text = fs::read_to_string(sidecar_path(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::make_random_isotropic;

    #[test]
    fn csv_round_trip_is_exact() {
        let w = make_random_isotropic(5, 7, 11).unwrap();
        let back = ensemble_from_csv(&ensemble_to_csv(&w)).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let text = "# d=2 r=2 kind=custom seed=0\n1,0\n0.5\n";
        assert!(matches!(ensemble_from_csv(text), Err(Error::Parse(_))));
        assert!(ensemble_from_csv("1,0\n").is_err());
    }

    #[test]
    fn tensor_bytes_round_trip() {
        let t = DenseTensor::from_data(2, 2, vec![1.0, -0.5, -0.5, 1e-300]).unwrap();
        let bytes = tensor_to_bytes(&t);
        assert_eq!(&bytes[..4], b"SYMT");
        assert_eq!(bytes.len(), 16 + 32);
        assert_eq!(tensor_from_bytes(&bytes).unwrap(), t);
        assert!(tensor_from_bytes(&bytes[..20]).is_err());
    }
}
