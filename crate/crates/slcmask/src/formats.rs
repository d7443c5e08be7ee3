//! Text and binary file formats.
//!
//! **Annotations** (`.ann`), one record per line, `#` lines are comments:
//!
//! ```text
//! tile x1 y1 x2 y2
//! inst tile_id class x1 y1 x2 y2 run run run ...
//! ```
//!
//! `tile` lines declare frames in the coordinates of the source image and
//! are numbered from 0 in file order. `inst` coordinates are in the frame of
//! their tile. The runs encode the instance mask over the pixel window
//! `floor(x1)..ceil(x2)` x `floor(y1)..ceil(y2)`, row-major, as alternating
//! zero/one run lengths starting with zeros (a leading zero-length run is
//! written when the first pixel is set).
//!
//! **Manifest** (`manifest.txt`): `split image annotations` per line, where
//! split is `train` or `test` and the paths are relative to the manifest.
//!
//! **Checkpoint**: `<name>.ckpt` holds the parameters as consecutive `SLCT`
//! tensor records; `<name>.params` lists `name extent,extent,...` per
//! parameter in the same order.

use std::fmt::Write as _;
use std::path::Path;

use slcmask_core::geometry::BBox;
use slcmask_core::mask::{Annotation, InstanceMask};
use slcmask_core::metrics::{AblationRow, MetricsReport, ABLATION_COLUMNS};
use slcmask_core::pipeline::{LossRecord, LossTerms, Model};
use slcmask_core::tensor;
use slcmask_core::Tensor;

use crate::error::{CliError, CliResult};

/// Prefixes every line of `text` with `# ` so it can head any text artifact.
pub fn comment_block(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

/// Alternating zero/one run lengths, starting with zeros.
pub fn encode_rle(bits: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    runs
}

/// Inverse of [`encode_rle`]; the runs must cover exactly `len` pixels.
pub fn decode_rle(runs: &[usize], len: usize) -> Result<Vec<bool>, String> {
    let total: usize = runs.iter().try_fold(0usize, |acc, &r| acc.checked_add(r)).ok_or("run lengths overflow")?;
    if total != len {
        return Err(format!("runs cover {total} pixels, window has {len}"));
    }
    let mut bits = Vec::with_capacity(len);
    for (i, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat(i % 2 == 1).take(r));
    }
    Ok(bits)
}

/// Integer pixel window `(x0, y0, width, height)` covering a box.
pub fn pixel_window(b: &BBox) -> (i64, i64, usize, usize) {
    let x0 = b.x1.floor() as i64;
    let y0 = b.y1.floor() as i64;
    let x1 = b.x2.ceil() as i64;
    let y1 = b.y2.ceil() as i64;
    (x0, y0, (x1 - x0).max(0) as usize, (y1 - y0).max(0) as usize)
}

/// One instance as stored on disk: its mask is held over the pixel window
/// of its box, so the record does not depend on the frame size.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub tile: usize,
    pub class_id: u32,
    pub bbox: BBox,
    /// Mask bits over [`pixel_window`] of `bbox`, row-major.
    pub bits: Vec<bool>,
}

impl InstanceRecord {
    /// Crops the annotation's full-frame mask to its box window.
    pub fn from_annotation(tile: usize, a: &Annotation) -> Self {
        let (x0, y0, w, h) = pixel_window(&a.bbox);
        let (fw, fh) = (a.mask.width() as i64, a.mask.height() as i64);
        let mut bits = Vec::with_capacity(w * h);
        for y in y0..y0 + h as i64 {
            for x in x0..x0 + w as i64 {
                let inside = x >= 0 && y >= 0 && x < fw && y < fh;
                bits.push(inside && a.mask.get(x as usize, y as usize));
            }
        }
        Self { tile, class_id: a.class_id, bbox: a.bbox, bits }
    }

    /// Places the window mask into a `width x height` frame; pixels falling
    /// outside the frame are dropped.
    pub fn to_annotation(&self, width: usize, height: usize) -> Annotation {
        let (x0, y0, w, _) = pixel_window(&self.bbox);
        let mut mask = InstanceMask::empty(width, height);
        for (i, &b) in self.bits.iter().enumerate() {
            let (x, y) = (x0 + (i % w.max(1)) as i64, y0 + (i / w.max(1)) as i64);
            if b && x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                mask.set(x as usize, y as usize, true);
            }
        }
        Annotation { class_id: self.class_id, bbox: self.bbox, mask }
    }

    /// The same instance expressed in a frame whose origin sits at integer
    /// pixel `(ox, oy)` of the current frame.
    pub fn shifted(&self, tile: usize, ox: i64, oy: i64) -> Self {
        Self {
            tile,
            bbox: self.bbox.translate(-(ox as f64), -(oy as f64)),
            ..self.clone()
        }
    }
}

/// Parsed contents of an annotation file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationFile {
    /// Comment lines, without the leading `#`.
    pub header: Vec<String>,
    pub tiles: Vec<BBox>,
    pub instances: Vec<InstanceRecord>,
}

impl AnnotationFile {
    /// A single whole-image frame holding `annotations`.
    pub fn whole_image(width: usize, height: usize, annotations: &[Annotation]) -> Self {
        Self {
            header: Vec::new(),
            tiles: vec![BBox::new(0.0, 0.0, width as f64, height as f64)],
            instances: annotations.iter().map(|a| InstanceRecord::from_annotation(0, a)).collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for h in &self.header {
            let _ = writeln!(out, "#{h}");
        }
        for t in &self.tiles {
            let _ = writeln!(out, "tile {} {} {} {}", t.x1, t.y1, t.x2, t.y2);
        }
        for r in &self.instances {
            let b = &r.bbox;
            let _ = write!(out, "inst {} {} {} {} {} {}", r.tile, r.class_id, b.x1, b.y1, b.x2, b.y2);
            for run in encode_rle(&r.bits) {
                let _ = write!(out, " {run}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses `text`; errors carry the byte offset of the offending line.
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let mut file = AnnotationFile::default();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            let line = line.trim_end_matches(['\n', '\r']);
            let bad = |msg: String| CliError::corrupt(path, start, msg);
            if let Some(c) = line.strip_prefix('#') {
                file.header.push(c.to_string());
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.first() {
                None => continue,
                Some(&"tile") => {
                    let c = coords(&fields[1..]).map_err(bad)?;
                    if fields.len() != 5 {
                        return Err(bad("tile line needs exactly four coordinates".into()));
                    }
                    file.tiles.push(c);
                }
                Some(&"inst") => {
                    if fields.len() < 8 {
                        return Err(bad("inst line needs tile, class, four coordinates and runs".into()));
                    }
                    let tile: usize = fields[1].parse().map_err(|_| bad(format!("bad tile id `{}`", fields[1])))?;
                    if tile >= file.tiles.len() {
                        return Err(bad(format!("tile id {tile} not declared")));
                    }
                    let class_id: u32 = fields[2].parse().map_err(|_| bad(format!("bad class `{}`", fields[2])))?;
                    let bbox = coords(&fields[3..7]).map_err(bad)?;
                    let runs = fields[7..]
                        .iter()
                        .map(|r| r.parse::<usize>().map_err(|_| bad(format!("bad run length `{r}`"))))
                        .collect::<CliResult<Vec<usize>>>()?;
                    let (_, _, w, h) = pixel_window(&bbox);
                    let bits = decode_rle(&runs, w * h).map_err(bad)?;
                    file.instances.push(InstanceRecord { tile, class_id, bbox, bits });
                }
                Some(other) => return Err(bad(format!("unknown record `{other}`"))),
            }
        }
        Ok(file)
    }
}

fn coords(fields: &[&str]) -> Result<BBox, String> {
    let v: Vec<f64> = fields
        .iter()
        .take(4)
        .map(|s| s.parse::<f64>().map_err(|_| format!("bad coordinate `{s}`")))
        .collect::<Result<_, _>>()?;
    if v.len() != 4 || v.iter().any(|c| !c.is_finite()) {
        return Err("expected four finite coordinates".into());
    }
    let b = BBox::new(v[0], v[1], v[2], v[3]);
    if !b.is_valid() {
        return Err(format!("degenerate box {v:?}"));
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub image: String,
    pub annotations: String,
}

pub fn render_manifest(header: &str, entries: &[ManifestEntry]) -> String {
    let mut out = comment_block(header);
    for e in entries {
        let _ = writeln!(out, "{} {} {}", e.split.as_str(), e.image, e.annotations);
    }
    out
}

pub fn parse_manifest(text: &str, path: &Path) -> CliResult<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let split = match f.first() {
            Some(&"train") => Split::Train,
            Some(&"test") => Split::Test,
            _ => return Err(CliError::corrupt(path, start, format!("expected `train|test image annotations`, got `{line}`"))),
        };
        if f.len() != 3 {
            return Err(CliError::corrupt(path, start, "manifest line needs exactly three fields"));
        }
        entries.push(ManifestEntry { split, image: f[1].to_string(), annotations: f[2].to_string() });
    }
    Ok(entries)
}

/// Encodes every parameter of `model` as `(binary records, name listing)`.
pub fn encode_checkpoint(model: &Model, header: &str) -> (Vec<u8>, String) {
    let mut bin = Vec::new();
    let mut listing = comment_block(header);
    for (name, t) in model.named_params() {
        tensor::encode_into(t, &mut bin);
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(listing, "{name} {}", dims.join(","));
    }
    (bin, listing)
}

/// Decodes a checkpoint, checking every record against the listing.
pub fn decode_checkpoint(bin: &[u8], listing: &str, bin_path: &Path, listing_path: &Path) -> CliResult<Vec<(String, Tensor)>> {
    let mut params = Vec::new();
    let mut offset = 0;
    let mut line_offset = 0;
    for line in listing.split_inclusive('\n') {
        let start = line_offset;
        line_offset += line.len();
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, dims) = line
            .split_once(' ')
            .ok_or_else(|| CliError::corrupt(listing_path, start, format!("expected `name extents`, got `{line}`")))?;
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| d.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::corrupt(listing_path, start, format!("bad extents `{dims}`")))?;
        let (t, used) = tensor::decode(&bin[offset..], offset).map_err(|e| match e {
            slcmask_core::Error::Decode { offset, msg } => CliError::corrupt(bin_path, offset, msg),
            other => CliError::corrupt(bin_path, offset, other.to_string()),
        })?;
        if t.shape() != shape.as_slice() {
            return Err(CliError::corrupt(
                bin_path,
                offset,
                format!("record for `{name}` has shape {:?}, listing says {shape:?}", t.shape()),
            ));
        }
        offset += used;
        params.push((name.to_string(), t));
    }
    if offset != bin.len() {
        return Err(CliError::corrupt(bin_path, offset, format!("{} trailing bytes after the last listed parameter", bin.len() - offset)));
    }
    Ok(params)
}

/// Column names of the loss log.
pub fn loss_columns() -> Vec<&'static str> {
    let mut cols = vec!["epoch", "iter"];
    cols.extend(LossTerms::NAMES);
    cols.push("total");
    cols
}

/// Loss log as CSV with a commented header.
pub fn loss_csv(header: &str, records: &[LossRecord]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("writing loss log: {e}"));
    w.write_record(loss_columns()).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.epoch.to_string(), r.iter.to_string()];
        row.extend(r.terms.values().iter().map(|v| v.to_string()));
        row.push(r.terms.total().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Usage(format!("writing loss log: {e}")))?;
    Ok(comment_block(header) + &String::from_utf8(body).expect("csv output is utf-8"))
}

/// Pads every column to its widest cell.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(|s| s.as_str()).collect());
    for r in rows {
        out += &line(r.iter().map(|s| s.as_str()).collect());
    }
    out
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("writing report: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Usage(format!("writing report: {e}")))?;
    Ok(String::from_utf8(body).expect("csv output is utf-8"))
}

/// Columns of the metrics report: mask and box recall / AP.
pub const METRICS_COLUMNS: [&str; 8] = ["Method", "R(%)", "AP(%)", "R^bb(%)", "AP^bb(%)", "IoU", "GT", "Detections"];

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

pub fn metrics_row(method: &str, m: &MetricsReport) -> Vec<String> {
    vec![
        method.to_string(),
        pct(m.recall_mask),
        pct(m.ap_mask),
        pct(m.recall_box),
        pct(m.ap_box),
        m.iou_threshold.to_string(),
        m.num_gt.to_string(),
        m.num_detections.to_string(),
    ]
}

/// `(csv, aligned table)` for metrics rows.
pub fn metrics_report(header: &str, rows: &[Vec<String>]) -> CliResult<(String, String)> {
    Ok((
        comment_block(header) + &csv_text(&METRICS_COLUMNS, rows)?,
        comment_block(header) + &aligned_table(&METRICS_COLUMNS, rows),
    ))
}

/// `(csv, aligned table)` for ablation rows; failed rows carry their error
/// text in a trailing comment.
pub fn ablation_report(header: &str, rows: &[AblationRow]) -> CliResult<(String, String)> {
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.cells().to_vec()).collect();
    let mut table = comment_block(header) + &aligned_table(&ABLATION_COLUMNS, &cells);
    for (i, r) in rows.iter().enumerate() {
        if let Err(e) = &r.outcome {
            let _ = writeln!(table, "# row {}: {e}", i + 1);
        }
    }
    Ok((comment_block(header) + &csv_text(&ABLATION_COLUMNS, &cells)?, table))
}
