//! Full-sky maps and masks plus their two on-disk formats.
//!
//! * Raw: a 16-byte header (`b"SMAP"`, `u32` nside, `u32` ordering with
//!   0 = ring / 1 = nested, `u32` flags) followed by `12 nside^2`
//!   little-endian `f64` values. Flag bit 0 marks [`UNSEEN`] as the
//!   missing-pixel sentinel.
//! * FITS: a binary table whose first column holds the pixel values, with
//!   `NSIDE` and `ORDERING` header keywords (the HEALPix convention).
//!
//! Loaded maps are always converted to ring ordering.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::healpix::{self, check_nside, npix};

/// HEALPix convention for missing pixels.
pub const UNSEEN: f64 = -1.6375e30;

const RAW_MAGIC: &[u8; 4] = b"SMAP";
const RAW_FLAG_UNSEEN: u32 = 1;
const FITS_BLOCK: usize = 2880;
const FITS_CARD: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Ring,
    Nested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFormat {
    Raw,
    Fits,
}

impl MapFormat {
    /// `.fits`/`.fit` paths are FITS, anything else raw.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("fits") || e.eq_ignore_ascii_case("fit") => MapFormat::Fits,
            _ => MapFormat::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Map,
    Mask,
}

/// A scalar field sampled on the HEALPix grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereMap {
    n_side: u32,
    ordering: Ordering,
    values: Vec<f64>,
    bad_value: Option<f64>,
}

impl SphereMap {
    pub fn new(n_side: u32, ordering: Ordering, values: Vec<f64>, bad_value: Option<f64>) -> Result<Self> {
        check_nside(n_side)?;
        let expected = npix(n_side);
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if bad_value.is_some_and(|b| value == b) {
                continue;
            }
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
        }
        Ok(Self {
            n_side,
            ordering,
            values,
            bad_value,
        })
    }

    pub fn ring(n_side: u32, values: Vec<f64>) -> Result<Self> {
        Self::new(n_side, Ordering::Ring, values, None)
    }

    pub fn constant(n_side: u32, value: f64) -> Result<Self> {
        check_nside(n_side)?;
        Self::ring(n_side, vec![value; npix(n_side)])
    }

    pub fn n_side(&self) -> u32 {
        self.n_side
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bad_value(&self) -> Option<f64> {
        self.bad_value
    }

    pub fn npix(&self) -> usize {
        self.values.len()
    }

    pub fn is_bad(&self, pix: usize) -> bool {
        self.bad_value.is_some_and(|b| self.values[pix] == b)
    }

    /// Replace one pixel value. Non-finite values are rejected.
    pub fn set(&mut self, pix: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite { index: pix, value });
        }
        self.values[pix] = value;
        Ok(())
    }

    pub fn to_ring(&self) -> SphereMap {
        SphereMap {
            n_side: self.n_side,
            ordering: Ordering::Ring,
            values: reorder_to_ring(self.n_side, self.ordering, &self.values),
            bad_value: self.bad_value,
        }
    }

    /// Range of the valid (non-sentinel) values, `None` if every pixel is bad.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        let mut it = (0..self.npix()).filter(|&p| !self.is_bad(p)).map(|p| self.values[p]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

/// Binary mask on the HEALPix grid: 1 = missing/noisy pixel, 0 = clean.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMap {
    n_side: u32,
    ordering: Ordering,
    values: Vec<u8>,
}

impl MaskMap {
    pub fn new(n_side: u32, ordering: Ordering, values: Vec<u8>) -> Result<Self> {
        check_nside(n_side)?;
        let expected = npix(n_side);
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        if let Some((pixel, &v)) = values.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::NonBinaryMask {
                pixel,
                value: f64::from(v),
            });
        }
        Ok(Self {
            n_side,
            ordering,
            values,
        })
    }

    pub fn from_f64(n_side: u32, ordering: Ordering, values: &[f64]) -> Result<Self> {
        let mut out = Vec::with_capacity(values.len());
        for (pixel, &value) in values.iter().enumerate() {
            out.push(match value {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                _ => return Err(Error::NonBinaryMask { pixel, value }),
            });
        }
        Self::new(n_side, ordering, out)
    }

    pub fn empty(n_side: u32) -> Result<Self> {
        check_nside(n_side)?;
        Self::new(n_side, Ordering::Ring, vec![0; npix(n_side)])
    }

    pub fn n_side(&self) -> u32 {
        self.n_side
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn is_hole(&self, pix: usize) -> bool {
        self.values[pix] == 1
    }

    pub fn n_holes(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn set(&mut self, pix: usize, hole: bool) {
        self.values[pix] = u8::from(hole);
    }

    /// Flip the polarity, for masks distributed with 1 = valid.
    pub fn inverted(&self) -> MaskMap {
        MaskMap {
            n_side: self.n_side,
            ordering: self.ordering,
            values: self.values.iter().map(|v| 1 - v).collect(),
        }
    }

    pub fn to_ring(&self) -> MaskMap {
        MaskMap {
            n_side: self.n_side,
            ordering: Ordering::Ring,
            values: reorder_to_ring(self.n_side, self.ordering, &self.values),
        }
    }
}

fn reorder_to_ring<T: Copy + Default>(n_side: u32, ordering: Ordering, values: &[T]) -> Vec<T> {
    match ordering {
        Ordering::Ring => values.to_vec(),
        Ordering::Nested => {
            let mut out = vec![T::default(); values.len()];
            for (p, &v) in values.iter().enumerate() {
                out[healpix::nest2ring(n_side, p)] = v;
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedMap {
    Map(SphereMap),
    Mask(MaskMap),
}

/// Raw header-level contents shared by both formats.
struct RawContents {
    n_side: u32,
    ordering: Ordering,
    values: Vec<f64>,
    bad_value: Option<f64>,
}

/// Load a map or mask from either supported format, returning it in ring order.
pub fn load_map(path: impl AsRef<Path>, kind: MapKind) -> Result<LoadedMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = if bytes.starts_with(RAW_MAGIC) {
        decode_raw(&bytes)?
    } else if bytes.starts_with(b"SIMPLE") {
        decode_fits(&bytes)?
    } else {
        return Err(Error::MalformedHeader(format!(
            "{}: neither a raw SMAP file nor FITS",
            path.display()
        )));
    };
    Ok(match kind {
        MapKind::Map => LoadedMap::Map(SphereMap::new(raw.n_side, raw.ordering, raw.values, raw.bad_value)?.to_ring()),
        MapKind::Mask => LoadedMap::Mask(MaskMap::from_f64(raw.n_side, raw.ordering, &raw.values)?.to_ring()),
    })
}

pub fn read_sphere_map(path: impl AsRef<Path>) -> Result<SphereMap> {
    match load_map(path, MapKind::Map)? {
        LoadedMap::Map(m) => Ok(m),
        LoadedMap::Mask(_) => unreachable!(),
    }
}

pub fn read_mask_map(path: impl AsRef<Path>) -> Result<MaskMap> {
    match load_map(path, MapKind::Mask)? {
        LoadedMap::Mask(m) => Ok(m),
        LoadedMap::Map(_) => unreachable!(),
    }
}

pub fn save_map(path: impl AsRef<Path>, map: &SphereMap, format: MapFormat) -> Result<()> {
    let values: Vec<f64> = match map.bad_value {
        Some(b) if b != UNSEEN => map.values.iter().map(|&v| if v == b { UNSEEN } else { v }).collect(),
        _ => map.values.clone(),
    };
    let contents = RawContents {
        n_side: map.n_side,
        ordering: map.ordering,
        values,
        bad_value: map.bad_value.map(|_| UNSEEN),
    };
    write_contents(path.as_ref(), &contents, format, "TEMPERATURE")
}

pub fn save_mask(path: impl AsRef<Path>, mask: &MaskMap, format: MapFormat) -> Result<()> {
    let contents = RawContents {
        n_side: mask.n_side,
        ordering: mask.ordering,
        values: mask.values.iter().map(|&v| f64::from(v)).collect(),
        bad_value: None,
    };
    write_contents(path.as_ref(), &contents, format, "MASK")
}

fn write_contents(path: &Path, contents: &RawContents, format: MapFormat, column: &str) -> Result<()> {
    let bytes = match format {
        MapFormat::Raw => encode_raw(contents),
        MapFormat::Fits => encode_fits(contents, column),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_raw(c: &RawContents) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * c.values.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&c.n_side.to_le_bytes());
    let ordering: u32 = match c.ordering {
        Ordering::Ring => 0,
        Ordering::Nested => 1,
    };
    out.extend_from_slice(&ordering.to_le_bytes());
    let flags = if c.bad_value.is_some() { RAW_FLAG_UNSEEN } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for v in &c.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_raw(bytes: &[u8]) -> Result<RawContents> {
    if bytes.len() < 16 {
        return Err(Error::MalformedHeader("raw header shorter than 16 bytes".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let n_side = word(4);
    let ordering = match word(8) {
        0 => Ordering::Ring,
        1 => Ordering::Nested,
        o => return Err(Error::MalformedHeader(format!("unknown ordering code {o}"))),
    };
    let flags = word(12);
    if flags & !RAW_FLAG_UNSEEN != 0 {
        return Err(Error::MalformedHeader(format!("unknown flag bits {flags:#x}")));
    }
    check_nside(n_side).map_err(|_| Error::MalformedHeader(format!("invalid nside {n_side}")))?;
    let body = &bytes[16..];
    if body.len() % 8 != 0 {
        return Err(Error::MalformedHeader("payload is not a whole number of f64 values".into()));
    }
    let found = body.len() / 8;
    let expected = npix(n_side);
    if found != expected {
        return Err(Error::LengthMismatch { expected, found });
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawContents {
        n_side,
        ordering,
        values,
        bad_value: (flags & RAW_FLAG_UNSEEN != 0).then_some(UNSEEN),
    })
}

// ---------------------------------------------------------------------------
// FITS

fn card(key: &str, value: &str, comment: &str) -> String {
    let mut s = if value.is_empty() {
        format!("{key:<8}")
    } else {
        let mut s = format!("{key:<8}= {value:>20}");
        if !comment.is_empty() {
            s.push_str(" / ");
            s.push_str(comment);
        }
        s
    };
    s.truncate(FITS_CARD);
    format!("{s:<80}")
}

fn quoted(s: &str) -> String {
    format!("{:<20}", format!("'{s:<8}'"))
}

fn push_header(out: &mut Vec<u8>, cards: &[String]) {
    let start = out.len();
    for c in cards {
        out.extend_from_slice(c.as_bytes());
    }
    out.extend_from_slice(card("END", "", "").as_bytes());
    let len = out.len() - start;
    out.resize(start + len.div_ceil(FITS_BLOCK) * FITS_BLOCK, b' ');
}

fn encode_fits(c: &RawContents, column: &str) -> Vec<u8> {
    let n = c.values.len();
    let mut out = Vec::new();
    push_header(
        &mut out,
        &[
            card("SIMPLE", "T", "conforms to FITS standard"),
            card("BITPIX", "8", ""),
            card("NAXIS", "0", ""),
            card("EXTEND", "T", ""),
        ],
    );
    let ordering = match c.ordering {
        Ordering::Ring => "RING",
        Ordering::Nested => "NESTED",
    };
    let mut cards = vec![
        card("XTENSION", &quoted("BINTABLE"), "binary table extension"),
        card("BITPIX", "8", ""),
        card("NAXIS", "2", ""),
        card("NAXIS1", "8", "bytes per row"),
        card("NAXIS2", &n.to_string(), "number of rows"),
        card("PCOUNT", "0", ""),
        card("GCOUNT", "1", ""),
        card("TFIELDS", "1", ""),
        card("TTYPE1", &quoted(column), ""),
        card("TFORM1", &quoted("D"), ""),
        card("PIXTYPE", &quoted("HEALPIX"), ""),
        card("ORDERING", &quoted(ordering), ""),
        card("NSIDE", &c.n_side.to_string(), ""),
        card("FIRSTPIX", "0", ""),
        card("LASTPIX", &(n - 1).to_string(), ""),
        card("INDXSCHM", &quoted("IMPLICIT"), ""),
        card("OBJECT", &quoted("FULLSKY"), ""),
    ];
    if let Some(b) = c.bad_value {
        cards.push(card("BAD_DATA", &format!("{b:E}"), "missing pixel sentinel"));
    }
    push_header(&mut out, &cards);
    let start = out.len();
    for v in &c.values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    let len = out.len() - start;
    out.resize(start + len.div_ceil(FITS_BLOCK) * FITS_BLOCK, 0);
    out
}

#[derive(Default)]
struct FitsHeader {
    cards: Vec<(String, String)>,
}

impl FitsHeader {
    fn get(&self, key: &str) -> Option<&str> {
        self.cards.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn int(&self, key: &str) -> Result<Option<i64>> {
        self.get(key)
            .map(|v| {
                v.parse::<i64>()
                    .map_err(|_| Error::MalformedHeader(format!("{key} = {v} is not an integer")))
            })
            .transpose()
    }

    fn required_int(&self, key: &str) -> Result<i64> {
        self.int(key)?
            .ok_or_else(|| Error::MalformedHeader(format!("missing keyword {key}")))
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.replace('D', "E")
                    .parse::<f64>()
                    .map_err(|_| Error::MalformedHeader(format!("{key} = {v} is not a number")))
            })
            .transpose()
    }
}

fn parse_value(raw: &str) -> String {
    let raw = raw.trim_start();
    if let Some(rest) = raw.strip_prefix('\'') {
        // Quoted string: '' escapes a quote.
        let mut s = String::new();
        let mut chars = rest.chars().peekable();
        while let Some(ch) = chars.next() {
            if ch == '\'' {
                if chars.peek() == Some(&'\'') {
                    s.push('\'');
                    chars.next();
                } else {
                    break;
                }
            } else {
                s.push(ch);
            }
        }
        s.trim_end().to_string()
    } else {
        raw.split('/').next().unwrap_or("").trim().to_string()
    }
}

/// Parse one header starting at `offset`; returns the header and the offset of
/// the following data unit.
fn read_header(bytes: &[u8], mut offset: usize) -> Result<(FitsHeader, usize)> {
    let mut header = FitsHeader::default();
    loop {
        if offset + FITS_BLOCK > bytes.len() {
            return Err(Error::MalformedHeader("header runs past end of file (no END card)".into()));
        }
        let block = &bytes[offset..offset + FITS_BLOCK];
        offset += FITS_BLOCK;
        for raw in block.chunks_exact(FITS_CARD) {
            let text = std::str::from_utf8(raw)
                .map_err(|_| Error::MalformedHeader("non-ASCII header card".into()))?;
            let key = text[..8].trim();
            if key == "END" {
                return Ok((header, offset));
            }
            if &text[8..10] == "= " {
                header.cards.push((key.to_string(), parse_value(&text[10..])));
            }
        }
    }
}

fn data_size(h: &FitsHeader) -> Result<usize> {
    let naxis = h.required_int("NAXIS")?;
    if naxis == 0 {
        return Ok(0);
    }
    let bitpix = h.required_int("BITPIX")?;
    let mut n: i64 = 1;
    for i in 1..=naxis {
        n *= h.required_int(&format!("NAXIS{i}"))?;
    }
    let pcount = h.int("PCOUNT")?.unwrap_or(0);
    let gcount = h.int("GCOUNT")?.unwrap_or(1);
    let bits = bitpix.abs() * gcount * (pcount + n);
    if bits < 0 {
        return Err(Error::MalformedHeader("negative data size".into()));
    }
    Ok((bits / 8) as usize)
}

fn parse_tform(tform: &str) -> Result<(usize, char, usize)> {
    let tform = tform.trim();
    let split = tform
        .find(|c: char| !c.is_ascii_digit())
        .ok_or_else(|| Error::MalformedHeader(format!("bad TFORM {tform}")))?;
    let repeat = if split == 0 {
        1
    } else {
        tform[..split]
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("bad TFORM {tform}")))?
    };
    let code = tform[split..].chars().next().unwrap();
    let width = match code {
        'B' | 'L' => 1,
        'I' => 2,
        'J' | 'E' => 4,
        'K' | 'D' => 8,
        _ => return Err(Error::MalformedHeader(format!("unsupported column type {tform}"))),
    };
    Ok((repeat, code, width))
}

fn decode_fits(bytes: &[u8]) -> Result<RawContents> {
    let (primary, mut offset) = read_header(bytes, 0)?;
    offset += data_size(&primary)?.div_ceil(FITS_BLOCK) * FITS_BLOCK;
    let (ext, data_start) = read_header(bytes, offset)?;
    if ext.get("XTENSION") != Some("BINTABLE") {
        return Err(Error::MalformedHeader("first extension is not a BINTABLE".into()));
    }
    let lookup = |k: &str| ext.get(k).or_else(|| primary.get(k));
    let row_bytes = ext.required_int("NAXIS1")? as usize;
    let rows = ext.required_int("NAXIS2")? as usize;
    if ext.required_int("TFIELDS")? < 1 {
        return Err(Error::MalformedHeader("table has no columns".into()));
    }
    let (repeat, code, width) = parse_tform(
        ext.get("TFORM1")
            .ok_or_else(|| Error::MalformedHeader("missing keyword TFORM1".into()))?,
    )?;
    if repeat * width > row_bytes {
        return Err(Error::MalformedHeader("TFORM1 wider than a table row".into()));
    }
    if data_start + row_bytes * rows > bytes.len() {
        return Err(Error::MalformedHeader("table data truncated".into()));
    }
    let scale = ext.float("TSCAL1")?.unwrap_or(1.0);
    let zero = ext.float("TZERO1")?.unwrap_or(0.0);
    let mut values = Vec::with_capacity(rows * repeat);
    for r in 0..rows {
        let row = &bytes[data_start + r * row_bytes..];
        for k in 0..repeat {
            let b = &row[k * width..(k + 1) * width];
            let v = match code {
                'B' | 'L' => f64::from(b[0]),
                'I' => f64::from(i16::from_be_bytes(b.try_into().unwrap())),
                'J' => f64::from(i32::from_be_bytes(b.try_into().unwrap())),
                'K' => i64::from_be_bytes(b.try_into().unwrap()) as f64,
                'E' => f64::from(f32::from_be_bytes(b.try_into().unwrap())),
                'D' => f64::from_be_bytes(b.try_into().unwrap()),
                _ => unreachable!(),
            };
            values.push(v * scale + zero);
        }
    }
    let ordering = match lookup("ORDERING").map(|s| s.to_ascii_uppercase()) {
        Some(o) if o == "RING" => Ordering::Ring,
        Some(o) if o == "NESTED" || o == "NEST" => Ordering::Nested,
        Some(o) => return Err(Error::MalformedHeader(format!("unknown ORDERING {o}"))),
        None => return Err(Error::MalformedHeader("missing keyword ORDERING".into())),
    };
    let n_side = match lookup("NSIDE") {
        Some(v) => v
            .parse::<u32>()
            .map_err(|_| Error::MalformedHeader(format!("NSIDE = {v} is not an integer")))?,
        None => return Err(Error::MalformedHeader("missing keyword NSIDE".into())),
    };
    check_nside(n_side).map_err(|_| Error::MalformedHeader(format!("invalid NSIDE {n_side}")))?;
    let expected = npix(n_side);
    if values.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: values.len(),
        });
    }
    // f32 columns store UNSEEN rounded; any NaN or sentinel-like value is missing.
    let declared = ext.float("BAD_DATA")?.or(primary.float("BAD_DATA")?);
    let mut any_bad = false;
    for v in values.iter_mut() {
        let is_bad = v.is_nan()
            || declared.is_some_and(|b| (*v - b).abs() <= 1e-6 * b.abs())
            || (*v - UNSEEN).abs() <= 1e-6 * UNSEEN.abs();
        if is_bad {
            *v = UNSEEN;
            any_bad = true;
        }
    }
    Ok(RawContents {
        n_side,
        ordering,
        values,
        bad_value: any_bad.then_some(UNSEEN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn zero_map_of_nside_one() {
        let dir = tmp();
        let p = dir.path().join("zero.smap");
        save_map(&p, &SphereMap::constant(1, 0.0).unwrap(), MapFormat::Raw).unwrap();
        let m = read_sphere_map(&p).unwrap();
        assert_eq!(m.npix(), 12);
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raw_and_fits_round_trips_are_bit_identical() {
        let dir = tmp();
        let mut rng = crate::seeding::rng_from_seed(3);
        let values: Vec<f64> = (0..npix(4)).map(|_| rng.random::<f64>() * 1e-4 - 3e-5).collect();
        let map = SphereMap::ring(4, values).unwrap();
        for (name, fmt) in [("m.smap", MapFormat::Raw), ("m.fits", MapFormat::Fits)] {
            let p = dir.path().join(name);
            save_map(&p, &map, fmt).unwrap();
            let back = read_sphere_map(&p).unwrap();
            assert_eq!(
                back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                map.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn nested_files_are_reordered_to_ring() {
        let dir = tmp();
        let n_side = 4;
        // value = ring index of the pixel, written in nested order
        let nested: Vec<f64> = (0..npix(n_side)).map(|p| healpix::nest2ring(n_side, p) as f64).collect();
        let map = SphereMap::new(n_side, Ordering::Nested, nested, None).unwrap();
        let p = dir.path().join("n.fits");
        save_map(&p, &map, MapFormat::Fits).unwrap();
        let back = read_sphere_map(&p).unwrap();
        assert_eq!(back.ordering(), Ordering::Ring);
        for (i, v) in back.values().iter().enumerate() {
            assert_eq!(*v, i as f64);
        }
    }

    #[test]
    fn non_binary_mask_is_rejected() {
        let dir = tmp();
        let mut values = vec![0.0; 12];
        values[5] = 0.5;
        let p = dir.path().join("mask.smap");
        save_map(&p, &SphereMap::ring(1, values).unwrap(), MapFormat::Raw).unwrap();
        let err = load_map(&p, MapKind::Mask).unwrap_err();
        assert_eq!(err.code(), "non-binary-mask");
    }

    #[test]
    fn bad_lengths_and_headers_have_distinct_codes() {
        let dir = tmp();
        let p = dir.path().join("short.smap");
        let mut bytes = encode_raw(&RawContents {
            n_side: 2,
            ordering: Ordering::Ring,
            values: vec![0.0; 48],
            bad_value: None,
        });
        bytes.truncate(16 + 8 * 40);
        fs::write(&p, &bytes).unwrap();
        assert_eq!(load_map(&p, MapKind::Map).unwrap_err().code(), "length-mismatch");

        fs::write(&p, b"JUNKJUNKJUNKJUNK").unwrap();
        assert_eq!(load_map(&p, MapKind::Map).unwrap_err().code(), "malformed-header");

        bytes[8] = 7;
        fs::write(&p, &bytes).unwrap();
        assert_eq!(load_map(&p, MapKind::Map).unwrap_err().code(), "malformed-header");
    }

    #[test]
    fn unseen_pixels_survive_both_formats() {
        let dir = tmp();
        let mut values = vec![1.0; 48];
        values[7] = UNSEEN;
        let map = SphereMap::new(2, Ordering::Ring, values, Some(UNSEEN)).unwrap();
        for name in ["u.smap", "u.fits"] {
            let p = dir.path().join(name);
            save_map(&p, &map, MapFormat::from_path(&p)).unwrap();
            let back = read_sphere_map(&p).unwrap();
            assert_eq!(back.bad_value(), Some(UNSEEN));
            assert!(back.is_bad(7));
            assert!(!back.is_bad(6));
        }
    }

    #[test]
    fn mask_round_trip_and_inversion() {
        let dir = tmp();
        let mut mask = MaskMap::empty(2).unwrap();
        mask.set(3, true);
        mask.set(40, true);
        let p = dir.path().join("mask.fits");
        save_mask(&p, &mask, MapFormat::Fits).unwrap();
        let back = read_mask_map(&p).unwrap();
        assert_eq!(back, mask);
        assert_eq!(back.inverted().n_holes(), 46);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut v = vec![0.0; 12];
        v[2] = f64::INFINITY;
        assert_eq!(SphereMap::ring(1, v).unwrap_err().code(), "non-finite");
        assert_eq!(SphereMap::ring(3, vec![0.0; 108]).unwrap_err().code(), "invalid-nside");
    }
}
