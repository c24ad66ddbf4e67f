// SPDX-License-Identifier: MIT OR Apache-2.0

//! File-backed store of precomputed per-layer sentence vectors.
//!
//! Text format:
//!
//! ```text
//! CLSTORE v1 <hidden_dim> <layer_count>
//! <text_id>\t<layer_index>\t<comma-separated floats>
//! ```
//!
//! Binary format: an index file with the same header followed by
//! `<text_id>\t<row_offset>` lines, and a sidecar of little-endian `f32`
//! values, row-major, one row of `hidden_dim` values per layer. The entry
//! for a text occupies rows `row_offset .. row_offset + layer_count`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::encoder::{Latent, LayeredEncoder};
use crate::error::{Error, Result};

const MAGIC: &str = "CLSTORE";
const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct LatentStore {
    hidden_dim: usize,
    layer_count: usize,
    entries: BTreeMap<String, Vec<Latent>>,
}

impl LatentStore {
    pub fn new(hidden_dim: usize, layer_count: usize) -> Self {
        Self {
            hidden_dim,
            layer_count,
            entries: BTreeMap::new(),
        }
    }

    /// Encodes every `(id, text)` pair with `encoder`.
    pub fn from_encoder<'a>(
        encoder: &LayeredEncoder,
        texts: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut store = Self::new(encoder.hidden_dim(), encoder.layer_count());
        for (id, text) in texts {
            store.insert(id, encoder.forward(text))?;
        }
        Ok(store)
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, id: &str, layers: Vec<Latent>) -> Result<()> {
        if id.is_empty() || id.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidConfig(format!("invalid text id {id:?}")));
        }
        if layers.len() != self.layer_count {
            return Err(Error::Shape {
                expected: self.layer_count,
                found: layers.len(),
            });
        }
        if let Some(bad) = layers.iter().find(|v| v.len() != self.hidden_dim) {
            return Err(Error::Shape {
                expected: self.hidden_dim,
                found: bad.len(),
            });
        }
        self.entries.insert(id.to_owned(), layers);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[Latent]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// Vector of `id` at `layer`.
    pub fn layer(&self, id: &str, layer: usize) -> Option<&Latent> {
        self.entries.get(id).and_then(|v| v.get(layer))
    }

    fn header(&self) -> String {
        format!("{MAGIC} {VERSION} {} {}", self.hidden_dim, self.layer_count)
    }

    pub fn to_text(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for (id, layers) in &self.entries {
            for (k, v) in layers.iter().enumerate() {
                let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                out.push_str(&format!("{id}\t{k}\t{}\n", values.join(",")));
            }
        }
        out
    }

    pub fn parse_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (hidden_dim, layer_count) = parse_header(lines.next(), origin)?;
        let mut partial: BTreeMap<String, Vec<Option<Latent>>> = BTreeMap::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: String| Error::parse(origin, lineno + 1, m);
            let mut fields = line.split('\t');
            let (Some(id), Some(layer), Some(values), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(err("expected <text_id>\\t<layer>\\t<values>".into()));
            };
            let layer: usize = layer
                .parse()
                .map_err(|_| err(format!("invalid layer index '{layer}'")))?;
            if layer >= layer_count {
                return Err(err(format!("layer {layer} >= layer_count {layer_count}")));
            }
            let values = values
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(format!("invalid float: {e}")))?;
            if values.len() != hidden_dim {
                return Err(err(format!(
                    "expected {hidden_dim} values, found {}",
                    values.len()
                )));
            }
            let slot = partial
                .entry(id.to_owned())
                .or_insert_with(|| vec![None; layer_count]);
            if slot[layer].is_some() {
                return Err(err(format!("duplicate record for {id} layer {layer}")));
            }
            slot[layer] = Some(DVector::from_vec(values));
        }
        let mut store = Self::new(hidden_dim, layer_count);
        for (id, layers) in partial {
            let layers: Option<Vec<Latent>> = layers.into_iter().collect();
            let layers = layers.ok_or_else(|| {
                Error::parse(origin, 0, format!("entry '{id}' is missing layers"))
            })?;
            store.insert(&id, layers)?;
        }
        Ok(store)
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, &path.display().to_string())
    }

    /// Writes the index file and the `f32` sidecar. Values are narrowed to `f32`.
    pub fn save_binary(&self, index_path: &Path, data_path: &Path) -> Result<()> {
        let mut index = self.header();
        index.push('\n');
        let mut data =
            Vec::with_capacity(self.entries.len() * self.layer_count * self.hidden_dim * 4);
        for (row, (id, layers)) in self.entries.iter().enumerate() {
            index.push_str(&format!("{id}\t{}\n", row * self.layer_count));
            for v in layers {
                for x in v.iter() {
                    data.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
        }
        std::fs::write(index_path, index).map_err(|e| Error::io(index_path, e))?;
        let mut f = std::fs::File::create(data_path).map_err(|e| Error::io(data_path, e))?;
        f.write_all(&data).map_err(|e| Error::io(data_path, e))
    }

    pub fn load_binary(index_path: &Path, data_path: &Path) -> Result<Self> {
        let origin = index_path.display().to_string();
        let index = std::fs::read_to_string(index_path).map_err(|e| Error::io(index_path, e))?;
        let data = std::fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
        let floats = read_f32_le(&data, &data_path.display().to_string())?;
        let mut lines = index.lines().enumerate();
        let (hidden_dim, layer_count) = parse_header(lines.next(), &origin)?;
        let rows = floats.len() / hidden_dim;
        let mut store = Self::new(hidden_dim, layer_count);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: String| Error::parse(origin.as_str(), lineno + 1, m);
            let (id, offset) = line
                .split_once('\t')
                .ok_or_else(|| err("expected <text_id>\\t<row_offset>".into()))?;
            let offset: usize = offset
                .trim()
                .parse()
                .map_err(|_| err(format!("invalid row offset '{offset}'")))?;
            if offset + layer_count > rows {
                return Err(err(format!(
                    "row offset {offset} exceeds sidecar with {rows} rows"
                )));
            }
            let layers = (0..layer_count)
                .map(|k| {
                    let start = (offset + k) * hidden_dim;
                    DVector::from_iterator(
                        hidden_dim,
                        floats[start..start + hidden_dim].iter().map(|&x| x as f64),
                    )
                })
                .collect();
            store.insert(id, layers)?;
        }
        Ok(store)
    }
}

fn parse_header(line: Option<(usize, &str)>, origin: &str) -> Result<(usize, usize)> {
    let Some((_, line)) = line else {
        return Err(Error::parse(origin, 1, "missing CLSTORE header"));
    };
    let parts: Vec<&str> = line.split_whitespace().collect();
    match parts.as_slice() {
        [MAGIC, VERSION, h, l] => {
            let h: usize = h
                .parse()
                .map_err(|_| Error::parse(origin, 1, "invalid hidden_dim"))?;
            let l: usize = l
                .parse()
                .map_err(|_| Error::parse(origin, 1, "invalid layer_count"))?;
            if h == 0 || l == 0 {
                return Err(Error::parse(origin, 1, "dimensions must be positive"));
            }
            Ok((h, l))
        }
        _ => Err(Error::parse(
            origin,
            1,
            format!("expected '{MAGIC} {VERSION} <hidden_dim> <layer_count>'"),
        )),
    }
}

/// Decodes a little-endian `f32` buffer.
pub fn read_f32_le(bytes: &[u8], origin: &str) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::parse(
            origin,
            0,
            "binary length is not a multiple of 4",
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
