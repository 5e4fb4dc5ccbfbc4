//! Map and field file formats.
//!
//! Text and image files list rows top first: the first body line (or the
//! first pixel row) is the grid row with the largest y.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use trfmm_core::{Cell, GridError, GridMap, ScalarField, WorldPoint};

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("malformed map: {0}")]
    Malformed(String),
    #[error("unsupported map format: {0}")]
    UnsupportedFormat(String),
    #[error("PGM maps need a resolution")]
    MissingResolution,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn malformed(msg: impl Into<String>) -> MapError {
    MapError::Malformed(msg.into())
}

/// Reads a map file. ASCII maps carry their own resolution; binary PGM
/// maps take `resolution` and `origin` from the caller.
pub fn load_map(path: &Path, resolution: Option<f64>, origin: WorldPoint) -> Result<GridMap, MapError> {
    let bytes = std::fs::read(path).map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_map(&bytes, resolution, origin)
}

/// Sniffs the format from the first bytes.
pub fn parse_map(bytes: &[u8], resolution: Option<f64>, origin: WorldPoint) -> Result<GridMap, MapError> {
    if bytes.starts_with(b"P5") {
        return parse_pgm(bytes, resolution.ok_or(MapError::MissingResolution)?, origin);
    }
    if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        return Err(MapError::UnsupportedFormat(format!("netpbm P{}", bytes[1] as char)));
    }
    let text = std::str::from_utf8(bytes).map_err(|_| MapError::UnsupportedFormat("binary data".into()))?;
    let mut map = parse_ascii(text)?;
    if origin != WorldPoint::default() {
        map = GridMap::new(map.width(), map.height(), map.resolution(), origin, map.cells().to_vec())?;
    }
    Ok(map)
}

/// `W H RES` on the first line, then `H` lines of `W` characters, `#` for
/// occupied and `.` for free.
pub fn parse_ascii(text: &str) -> Result<GridMap, MapError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed("empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [w, h, res] = fields[..] else {
        return Err(malformed(format!("header {header:?} is not `W H RES`")));
    };
    let w: usize = w.parse().map_err(|_| malformed(format!("bad width {w:?}")))?;
    let h: usize = h.parse().map_err(|_| malformed(format!("bad height {h:?}")))?;
    let res: f64 = res.parse().map_err(|_| malformed(format!("bad resolution {res:?}")))?;
    let body: Vec<&str> = lines.map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty()).collect();
    if body.len() != h {
        return Err(malformed(format!("expected {h} rows, found {}", body.len())));
    }
    let mut cells = vec![Cell::Free; w * h];
    for (k, line) in body.iter().enumerate() {
        let row = h - 1 - k;
        if line.chars().count() != w {
            return Err(malformed(format!("row {} has {} columns, expected {w}", k + 1, line.chars().count())));
        }
        for (col, ch) in line.chars().enumerate() {
            cells[row * w + col] = match ch {
                '.' => Cell::Free,
                '#' => Cell::Occupied,
                other => return Err(malformed(format!("unexpected character {other:?} in row {}", k + 1))),
            };
        }
    }
    Ok(GridMap::new(w, h, res, WorldPoint::default(), cells)?)
}

pub fn write_ascii(map: &GridMap) -> String {
    let mut out = format!("{} {} {}\n", map.width(), map.height(), map.resolution());
    for row in (0..map.height()).rev() {
        for col in 0..map.width() {
            out.push(if map.cell_at(col as isize, row as isize) == Cell::Free { '.' } else { '#' });
        }
        out.push('\n');
    }
    out
}

/// Binary PGM. Pixels darker than half scale are occupied.
pub fn parse_pgm(bytes: &[u8], resolution: f64, origin: WorldPoint) -> Result<GridMap, MapError> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in &mut header {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(malformed("truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *slot = digits.parse().map_err(|_| malformed("bad PGM header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("PGM header must end with one whitespace byte"));
    }
    pos += 1;
    let [w, h, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(format!("bad PGM maxval {maxval}")));
    }
    let depth = if maxval < 256 { 1 } else { 2 };
    let data = &bytes[pos..];
    if data.len() != w * h * depth {
        return Err(malformed(format!("PGM body has {} bytes, expected {}", data.len(), w * h * depth)));
    }
    let mut cells = vec![Cell::Free; w * h];
    for k in 0..h {
        let row = h - 1 - k;
        for col in 0..w {
            let i = (k * w + col) * depth;
            let v = if depth == 1 {
                data[i] as usize
            } else {
                (data[i] as usize) << 8 | data[i + 1] as usize
            };
            // v/maxval < 128/255
            if v * 255 < 128 * maxval {
                cells[row * w + col] = Cell::Occupied;
            }
        }
    }
    Ok(GridMap::new(w, h, resolution, origin, cells)?)
}

/// 8-bit PGM with 0 for occupied and 255 for free.
pub fn write_pgm(map: &GridMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    for row in (0..map.height()).rev() {
        for col in 0..map.width() {
            out.push(if map.cell_at(col as isize, row as isize) == Cell::Free { 255 } else { 0 });
        }
    }
    out
}

/// SHA-256 over dimensions, resolution, origin and cells, as hex.
pub fn map_digest(map: &GridMap) -> String {
    let mut h = Sha256::new();
    h.update((map.width() as u64).to_le_bytes());
    h.update((map.height() as u64).to_le_bytes());
    h.update(map.resolution().to_le_bytes());
    h.update(map.origin().x.to_le_bytes());
    h.update(map.origin().y.to_le_bytes());
    h.update(map.cells().iter().map(|c| (*c == Cell::Occupied) as u8).collect::<Vec<u8>>());
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("malformed field dump: {0}")]
    Malformed(String),
    #[error("field is {got:?}, map is {want:?}")]
    SizeMismatch { got: (usize, usize), want: (usize, usize) },
}

/// `W H` on the first line, then one comma-separated line per row, top
/// first. Unreached cells are written as `inf`.
pub fn field_to_csv(field: &ScalarField) -> String {
    let (w, h) = (field.width(), field.height());
    let mut out = format!("{w} {h}\n");
    for row in (0..h).rev() {
        for col in 0..w {
            if col > 0 {
                out.push(',');
            }
            match field.get_linear(row * w + col) {
                Some(v) => {
                    let _ = write!(out, "{v}");
                }
                None => out.push_str("inf"),
            }
        }
        out.push('\n');
    }
    out
}

fn parse_header(line: &str) -> Result<(usize, usize), FieldError> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) => Ok((w, h)),
        _ => Err(FieldError::Malformed(format!("header {line:?} is not `W H`"))),
    }
}

fn check_size(map: &GridMap, w: usize, h: usize) -> Result<(), FieldError> {
    if (w, h) != (map.width(), map.height()) {
        return Err(FieldError::SizeMismatch {
            got: (w, h),
            want: (map.width(), map.height()),
        });
    }
    Ok(())
}

pub fn field_from_csv(map: &GridMap, text: &str) -> Result<ScalarField, FieldError> {
    let mut lines = text.lines();
    let (w, h) = parse_header(lines.next().unwrap_or(""))?;
    check_size(map, w, h)?;
    let mut values = vec![None; w * h];
    let rows: Vec<&str> = lines.filter(|l| !l.is_empty()).collect();
    if rows.len() != h {
        return Err(FieldError::Malformed(format!("expected {h} rows, found {}", rows.len())));
    }
    for (k, line) in rows.iter().enumerate() {
        let row = h - 1 - k;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != w {
            return Err(FieldError::Malformed(format!("row {} has {} values", k + 1, cols.len())));
        }
        for (col, s) in cols.iter().enumerate() {
            let v: f64 = s.trim().parse().map_err(|_| FieldError::Malformed(format!("bad value {s:?}")))?;
            values[row * w + col] = v.is_finite().then_some(v);
        }
    }
    Ok(ScalarField::from_values(map, &values))
}

/// `W H\n` followed by little-endian f64 values, top row first, `+inf`
/// for unreached cells.
pub fn field_to_bytes(field: &ScalarField) -> Vec<u8> {
    let (w, h) = (field.width(), field.height());
    let mut out = format!("{w} {h}\n").into_bytes();
    for row in (0..h).rev() {
        for col in 0..w {
            let v = field.get_linear(row * w + col).unwrap_or(f64::INFINITY);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn field_from_bytes(map: &GridMap, bytes: &[u8]) -> Result<ScalarField, FieldError> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| FieldError::Malformed("missing header".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| FieldError::Malformed("binary header".into()))?;
    let (w, h) = parse_header(header)?;
    check_size(map, w, h)?;
    let body = &bytes[nl + 1..];
    if body.len() != w * h * 8 {
        return Err(FieldError::Malformed(format!("body has {} bytes, expected {}", body.len(), w * h * 8)));
    }
    let mut values = vec![None; w * h];
    for (k, chunk) in body.chunks_exact(8).enumerate() {
        let (r, col) = (k / w, k % w);
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        values[(h - 1 - r) * w + col] = v.is_finite().then_some(v);
    }
    Ok(ScalarField::from_values(map, &values))
}
