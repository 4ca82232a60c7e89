//! Dataset directory format.
//!
//! ```text
//! DIR/classes.txt     one class name per line
//! DIR/manifest.tsv    id label_index s_path s_len s_dim v_path v_len v_dim t_path t_len t_dim
//! DIR/<file>.f32      "CMARRF32" | T: u32 LE | d: u32 LE | T*d f32 LE, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Instance, Modality};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const F32_MAGIC: &[u8; 8] = b"CMARRF32";

const MANIFEST_HEADER: [&str; 11] = [
    "id",
    "label_index",
    "s_path",
    "s_len",
    "s_dim",
    "v_path",
    "v_len",
    "v_dim",
    "t_path",
    "t_len",
    "t_dim",
];

pub fn write_f32_file(path: &Path, t: &Tensor) -> Result<()> {
    let (rows, cols) = t.dims();
    let mut buf = Vec::with_capacity(16 + 4 * t.len());
    buf.extend_from_slice(F32_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_f32_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::format(path, "referenced feature file does not exist")
        }
        _ => Error::io(path, e),
    })?;
    if bytes.len() < 16 {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..8] != F32_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, expected {rows}*{cols}*4",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::matrix(rows, cols, data).map_err(|e| Error::format(path, e.to_string()))
}

fn feature_file(id: &str, m: Modality) -> String {
    format!("{id}.{}.f32", m.short())
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let classes = dataset.class_names.join("\n") + "\n";
    let classes_path = dir.join("classes.txt");
    fs::write(&classes_path, classes).map_err(|e| Error::io(&classes_path, e))?;

    let mut manifest = MANIFEST_HEADER.join("\t");
    manifest.push('\n');
    for inst in &dataset.instances {
        if inst.id.contains(['\t', '\n', '/']) {
            return Err(Error::arg(format!(
                "instance id {:?} is not file-safe",
                inst.id
            )));
        }
        let mut cols = vec![inst.id.clone(), inst.label.to_string()];
        for m in Modality::ALL {
            let file = feature_file(&inst.id, m);
            let t = inst.feature(m);
            write_f32_file(&dir.join(&file), t)?;
            cols.extend([file, t.rows().to_string(), t.cols().to_string()]);
        }
        manifest.push_str(&cols.join("\t"));
        manifest.push('\n');
    }
    let manifest_path = dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))
}

fn parse_usize(path: &Path, line: usize, what: &str, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::format(path, format!("line {line}: bad {what} {s:?}")))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let classes_path = dir.join("classes.txt");
    let class_text = fs::read_to_string(&classes_path).map_err(|e| Error::io(&classes_path, e))?;
    let class_names: Vec<String> = class_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();

    let manifest_path = dir.join("manifest.tsv");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.split('\t').eq(MANIFEST_HEADER) => {}
        _ => return Err(Error::format(&manifest_path, "missing or wrong header row")),
    }

    let mut instances = Vec::new();
    let mut dims: Option<[usize; 3]> = None;
    for (ln, line) in lines {
        let ln = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != MANIFEST_HEADER.len() {
            return Err(Error::format(
                &manifest_path,
                format!(
                    "line {ln}: expected {} columns, got {}",
                    MANIFEST_HEADER.len(),
                    cols.len()
                ),
            ));
        }
        let label = parse_usize(&manifest_path, ln, "label_index", cols[1])?;
        if label >= class_names.len() {
            return Err(Error::format(
                &manifest_path,
                format!(
                    "line {ln}: label {label} but only {} classes",
                    class_names.len()
                ),
            ));
        }
        let mut row_dims = [0usize; 3];
        let mut feats = Vec::with_capacity(3);
        for m in Modality::ALL {
            let base = 2 + 3 * m.index();
            let path: PathBuf = dir.join(cols[base]);
            let len = parse_usize(&manifest_path, ln, "length", cols[base + 1])?;
            let dim = parse_usize(&manifest_path, ln, "dim", cols[base + 2])?;
            let t = read_f32_file(&path)?;
            if t.dims() != (len, dim) {
                return Err(Error::format(
                    &path,
                    format!("file holds {:?} but manifest says ({len}, {dim})", t.dims()),
                ));
            }
            row_dims[m.index()] = dim;
            feats.push(t);
        }
        match dims {
            None => dims = Some(row_dims),
            Some(d) if d != row_dims => {
                return Err(Error::format(
                    &manifest_path,
                    format!("line {ln}: dims {row_dims:?} differ from earlier rows {d:?}"),
                ))
            }
            _ => {}
        }
        let [s, v, t]: [Tensor; 3] = feats.try_into().unwrap();
        instances.push(Instance {
            id: cols[0].to_string(),
            features: [s, v, t],
            label,
        });
    }
    Ok(Dataset {
        instances,
        class_names,
        dims: dims.unwrap_or([0; 3]),
    })
}
