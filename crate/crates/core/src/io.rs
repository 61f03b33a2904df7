//! Text formats for datasets, keyword labels, models with masks, and reports.
//!
//! Reals are written as `{:.16e}` (17 significant digits), which reads back
//! to the identical bit pattern. Every parser reports failures as
//! [`Error::Parse`] with the 1-based line and the byte offset of the
//! offending token.
//!
//! Feature file:
//!
//! ```text
//! feature_dim,40
//! num_classes,3
//! 2,1.0000000000000000e0,...      (label, then feature_dim values)
//! ```
//!
//! Model file:
//!
//! ```text
//! PRUNEKIT-MODEL v1
//! input_dim 40
//! layers 2
//! layer 0 64 40 relu              (index, rows, cols, activation)
//! w <cols values>                 (one line per row)
//! b <rows values>
//! ...
//! mask 3                          (optional; generation)
//! mask_layer 0 120                (index, stored count)
//! row_ptr <rows + 1 offsets>
//! col_idx <stored column indices>
//! end
//! ```

use std::io::{Read, Write};
use std::str::FromStr;

use crate::decomposition::LayerDecomposition;
use crate::error::{Error, Result};
use crate::kws::RocCurve;
use crate::linalg::Matrix;
use crate::mask::PruneMask;
use crate::nn::{Activation, DenseNet, FrameDataset, Layer};
use crate::pruning::GenerationRecord;

pub const MODEL_MAGIC: &str = "PRUNEKIT-MODEL v1";

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

struct Line<'a> {
    number: usize,
    offset: usize,
    text: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0, line: 0 }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn eof_error(&self, what: &str) -> Error {
        Error::Parse {
            line: self.line + 1,
            offset: self.text.len(),
            message: format!("unexpected end of file, expected {what}"),
        }
    }

    fn next(&mut self, what: &str) -> Result<Line<'a>> {
        if self.at_end() {
            return Err(self.eof_error(what));
        }
        let rest = &self.text[self.pos..];
        let len = rest.find('\n').unwrap_or(rest.len());
        let raw = &rest[..len];
        let line = Line {
            number: self.line + 1,
            offset: self.pos,
            text: raw.strip_suffix('\r').unwrap_or(raw),
        };
        self.pos += len + 1;
        self.line += 1;
        Ok(line)
    }
}

impl<'a> Line<'a> {
    fn error_at(&self, token: &str, message: String) -> Error {
        let within = token.as_ptr() as usize - self.text.as_ptr() as usize;
        Error::Parse {
            line: self.number,
            offset: self.offset + within,
            message,
        }
    }

    fn error(&self, message: String) -> Error {
        Error::Parse {
            line: self.number,
            offset: self.offset,
            message,
        }
    }

    fn tokens(&self, sep: char) -> Vec<&'a str> {
        if sep == ' ' {
            self.text.split_whitespace().collect()
        } else {
            self.text.split(sep).map(str::trim).collect()
        }
    }

    fn parse<T: FromStr>(&self, token: &str, what: &str) -> Result<T> {
        token
            .parse()
            .map_err(|_| self.error_at(token, format!("cannot parse {what} from `{token}`")))
    }

    /// `keyword value` with a separator.
    fn keyed<T: FromStr>(&self, key: &str, sep: char) -> Result<T> {
        let t = self.tokens(sep);
        if t.len() != 2 || t[0] != key {
            return Err(self.error(format!("expected `{key}{sep}<value>`")));
        }
        self.parse(t[1], key)
    }

    fn reals(&self, tokens: &[&str], expected: usize, what: &str) -> Result<Vec<f64>> {
        if tokens.len() != expected {
            return Err(self.error(format!("expected {expected} {what}, found {}", tokens.len())));
        }
        tokens
            .iter()
            .map(|t| {
                let v: f64 = self.parse(t, what)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(self.error_at(t, format!("non-finite {what} `{t}`")))
                }
            })
            .collect()
    }
}

fn read_all<R: Read>(mut r: R) -> Result<String> {
    let mut s = String::new();
    r.read_to_string(&mut s)?;
    Ok(s)
}

pub fn write_features<W: Write>(mut w: W, data: &FrameDataset) -> Result<()> {
    writeln!(w, "feature_dim,{}", data.feature_dim())?;
    writeln!(w, "num_classes,{}", data.num_classes())?;
    for (x, label) in data.iter() {
        write!(w, "{label}")?;
        for v in x {
            write!(w, ",{}", fmt_real(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn parse_features(text: &str) -> Result<FrameDataset> {
    let mut cur = Cursor::new(text);
    let dim: usize = cur.next("feature_dim header")?.keyed("feature_dim", ',')?;
    let classes_line = cur.next("num_classes header")?;
    let classes: usize = classes_line.keyed("num_classes", ',')?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    while !cur.at_end() {
        let line = cur.next("frame")?;
        if line.text.is_empty() {
            continue;
        }
        let t = line.tokens(',');
        let label: usize = line.parse(t[0], "label")?;
        if label >= classes {
            return Err(line.error_at(t[0], format!("label {label} outside {classes} classes")));
        }
        features.extend(line.reals(&t[1..], dim, "feature values")?);
        labels.push(label);
    }
    FrameDataset::new(dim, classes, features, labels).map_err(|e| classes_line.error(e.to_string()))
}

pub fn read_features<R: Read>(r: R) -> Result<FrameDataset> {
    parse_features(&read_all(r)?)
}

/// Keyword label rows `(stream_id, keyword_end_frame)`.
pub fn write_labels<W: Write>(mut w: W, rows: &[(usize, usize)]) -> Result<()> {
    writeln!(w, "stream_id,keyword_end_frame")?;
    for (s, e) in rows {
        writeln!(w, "{s},{e}")?;
    }
    Ok(())
}

pub fn parse_labels(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut cur = Cursor::new(text);
    let header = cur.next("label header")?;
    if header.tokens(',') != ["stream_id", "keyword_end_frame"] {
        return Err(header.error("expected header `stream_id,keyword_end_frame`".into()));
    }
    let mut rows = Vec::new();
    while !cur.at_end() {
        let line = cur.next("label row")?;
        if line.text.is_empty() {
            continue;
        }
        let t = line.tokens(',');
        if t.len() != 2 {
            return Err(line.error(format!("expected 2 fields, found {}", t.len())));
        }
        rows.push((line.parse(t[0], "stream id")?, line.parse(t[1], "frame index")?));
    }
    Ok(rows)
}

pub fn read_labels<R: Read>(r: R) -> Result<Vec<(usize, usize)>> {
    parse_labels(&read_all(r)?)
}

pub fn write_model<W: Write>(mut w: W, net: &DenseNet, mask: Option<&PruneMask>) -> Result<()> {
    if let Some(m) = mask {
        m.check_shape(net)?;
    }
    writeln!(w, "{MODEL_MAGIC}")?;
    writeln!(w, "input_dim {}", net.input_dim())?;
    writeln!(w, "layers {}", net.layers().len())?;
    let join = |vals: &[f64]| vals.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>().join(" ");
    for (k, layer) in net.layers().iter().enumerate() {
        let (rows, cols) = layer.weights.shape();
        writeln!(w, "layer {k} {rows} {cols} {}", layer.activation)?;
        for r in 0..rows {
            writeln!(w, "w {}", join(layer.weights.row(r)))?;
        }
        writeln!(w, "b {}", join(&layer.bias))?;
    }
    if let Some(m) = mask {
        writeln!(w, "mask {}", m.generation())?;
        for (k, lm) in m.layers().iter().enumerate() {
            writeln!(w, "mask_layer {k} {}", lm.remain_count())?;
            let mut row_ptr = vec![0usize];
            let mut cols = Vec::with_capacity(lm.remain_count());
            for r in 0..lm.rows() {
                cols.extend((0..lm.cols()).filter(|&c| lm.is_kept(r, c)));
                row_ptr.push(cols.len());
            }
            let ints = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            writeln!(w, "row_ptr {}", ints(&row_ptr))?;
            writeln!(w, "col_idx {}", ints(&cols))?;
        }
    }
    writeln!(w, "end")?;
    Ok(())
}

fn expect_tag<'a>(line: &Line<'a>, tag: &str) -> Result<Vec<&'a str>> {
    let t = line.tokens(' ');
    if t.first() != Some(&tag) {
        return Err(line.error(format!("expected a `{tag}` line")));
    }
    Ok(t[1..].to_vec())
}

pub fn parse_model(text: &str) -> Result<(DenseNet, Option<PruneMask>)> {
    let mut cur = Cursor::new(text);
    let magic = cur.next("model header")?;
    if magic.text.trim() != MODEL_MAGIC {
        return Err(magic.error(format!("expected `{MODEL_MAGIC}`")));
    }
    let input_line = cur.next("input_dim")?;
    let input_dim: usize = input_line.keyed("input_dim", ' ')?;
    let count: usize = cur.next("layer count")?.keyed("layers", ' ')?;
    let mut layers = Vec::with_capacity(count);
    for k in 0..count {
        let head = cur.next("layer header")?;
        let t = expect_tag(&head, "layer")?;
        if t.len() != 4 {
            return Err(head.error("expected `layer <index> <rows> <cols> <activation>`".into()));
        }
        let index: usize = head.parse(t[0], "layer index")?;
        if index != k {
            return Err(head.error_at(t[0], format!("layer index {index}, expected {k}")));
        }
        let rows: usize = head.parse(t[1], "rows")?;
        let cols: usize = head.parse(t[2], "cols")?;
        let activation: Activation = head.parse(t[3], "activation")?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = cur.next("weight row")?;
            let vals = expect_tag(&line, "w")?;
            data.extend(line.reals(&vals, cols, "weights")?);
        }
        let line = cur.next("bias")?;
        let vals = expect_tag(&line, "b")?;
        let bias = line.reals(&vals, rows, "biases")?;
        let weights = Matrix::new(rows, cols, data).map_err(|e| head.error(e.to_string()))?;
        layers.push(Layer::new(weights, bias, activation).map_err(|e| head.error(e.to_string()))?);
    }
    let net = DenseNet::new(input_dim, layers).map_err(|e| input_line.error(e.to_string()))?;

    let next = cur.next("`mask` or `end`")?;
    let mask = match next.tokens(' ').first().copied() {
        Some("end") => None,
        Some("mask") => {
            let generation: usize = next.keyed("mask", ' ')?;
            let mut keep = Vec::with_capacity(count);
            for (k, layer) in net.layers().iter().enumerate() {
                let (rows, cols) = layer.weights.shape();
                let head = cur.next("mask_layer")?;
                let t = expect_tag(&head, "mask_layer")?;
                if t.len() != 2 {
                    return Err(head.error("expected `mask_layer <index> <count>`".into()));
                }
                let index: usize = head.parse(t[0], "layer index")?;
                if index != k {
                    return Err(head.error_at(t[0], format!("mask layer {index}, expected {k}")));
                }
                let nnz: usize = head.parse(t[1], "stored count")?;
                let ptr_line = cur.next("row_ptr")?;
                let ptr_tokens = expect_tag(&ptr_line, "row_ptr")?;
                if ptr_tokens.len() != rows + 1 {
                    return Err(ptr_line.error(format!("expected {} row offsets", rows + 1)));
                }
                let row_ptr = ptr_tokens
                    .iter()
                    .map(|t| ptr_line.parse::<usize>(t, "row offset"))
                    .collect::<Result<Vec<_>>>()?;
                let idx_line = cur.next("col_idx")?;
                let idx_tokens = expect_tag(&idx_line, "col_idx")?;
                if idx_tokens.len() != nnz || row_ptr[0] != 0 || row_ptr[rows] != nnz {
                    return Err(idx_line.error(format!("expected {nnz} column indices matching row_ptr")));
                }
                let mut layer_keep = vec![false; rows * cols];
                for r in 0..rows {
                    if row_ptr[r] > row_ptr[r + 1] {
                        return Err(ptr_line.error("row offsets decrease".into()));
                    }
                    let mut prev = None;
                    for tok in &idx_tokens[row_ptr[r]..row_ptr[r + 1]] {
                        let c: usize = idx_line.parse(tok, "column index")?;
                        if c >= cols || prev.is_some_and(|p| p >= c) {
                            return Err(idx_line.error_at(tok, format!("column {c} out of order or range")));
                        }
                        prev = Some(c);
                        layer_keep[r * cols + c] = true;
                    }
                }
                keep.push(layer_keep);
            }
            let end = cur.next("end")?;
            if end.text.trim() != "end" {
                return Err(end.error("expected `end`".into()));
            }
            Some(PruneMask::from_keep(&net.shapes(), keep, generation).map_err(|e| next.error(e.to_string()))?)
        }
        _ => return Err(next.error("expected `mask` or `end`".into())),
    };
    Ok((net, mask))
}

pub fn read_model<R: Read>(r: R) -> Result<(DenseNet, Option<PruneMask>)> {
    parse_model(&read_all(r)?)
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[GenerationRecord]) -> Result<()> {
    writeln!(w, "generation,remain_rate,loss,frame_acc")?;
    for h in history {
        writeln!(
            w,
            "{},{},{},{}",
            h.generation,
            fmt_real(h.remain_rate),
            fmt_real(h.loss),
            fmt_real(h.frame_acc)
        )?;
    }
    Ok(())
}

pub fn write_decomposition_csv<W: Write>(mut w: W, layers: &[LayerDecomposition]) -> Result<()> {
    writeln!(w, "layer,m,n,r,frob_error,oracle_error,params_before,params_after")?;
    for l in layers {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            l.layer,
            l.m,
            l.n,
            l.r,
            fmt_real(l.frob_error),
            fmt_real(l.oracle_error),
            l.params_before,
            l.params_after
        )?;
    }
    Ok(())
}

pub fn write_roc_csv<W: Write>(mut w: W, roc: &RocCurve) -> Result<()> {
    writeln!(w, "threshold,ta_rate,fa_per_hour")?;
    for p in &roc.points {
        writeln!(
            w,
            "{},{},{}",
            fmt_real(p.threshold),
            fmt_real(p.ta_rate),
            fmt_real(p.fa_per_hour)
        )?;
    }
    Ok(())
}
