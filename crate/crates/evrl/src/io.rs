//! Event streams (EVT1 binary and CSV), network checkpoints, and PGM frame dumps.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use evrl_core::event::{Event, EventFrame, Polarity};
use evrl_core::qnet::{NetworkConfig, QNetwork};
use evrl_core::scene::IntensityFrame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Failure while reading or writing one of the formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    /// Underlying I/O failure.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed binary data.
    #[error("byte offset {offset}: {message}")]
    Binary {
        /// Offset of the offending byte or record.
        offset: u64,
        /// What is wrong.
        message: String,
    },
    /// Malformed text data.
    #[error("line {line}: {message}")]
    Text {
        /// One-based line number.
        line: u64,
        /// What is wrong.
        message: String,
    },
    /// Input that is well-formed but unusable, such as unsorted events or a
    /// checkpoint for another network shape.
    #[error("{0}")]
    Invalid(String),
}

/// Result alias for this module.
pub type Result<T> = std::result::Result<T, FormatError>;

fn binary(offset: usize, message: impl Into<String>) -> FormatError {
    FormatError::Binary {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Magic bytes of an EVT1 file.
pub const EVT_MAGIC: [u8; 4] = *b"EVT1";
/// EVT1 format version written and accepted.
pub const EVT_VERSION: u16 = 1;
/// Header size of an EVT1 file.
pub const EVT_HEADER_LEN: usize = 18;
/// Size of one EVT1 event record.
pub const EVT_RECORD_LEN: usize = 16;

/// Events with the sensor size they were recorded at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    /// Sensor width.
    pub width: u16,
    /// Sensor height.
    pub height: u16,
    /// Events, ascending in `t`.
    pub events: Vec<Event>,
}

impl EventStream {
    /// Stream with no events.
    pub fn empty(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Checks dimensions, coordinate ranges and time order.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(FormatError::Invalid("stream dimensions must be positive".into()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(FormatError::Invalid(format!(
                    "event {i} at ({}, {}) outside {}x{}",
                    e.x, e.y, self.width, self.height
                )));
            }
            if i > 0 && e.t < self.events[i - 1].t {
                return Err(FormatError::Invalid(format!("event {i} is earlier than its predecessor")));
            }
        }
        Ok(())
    }
}

/// Serializes a stream as EVT1.
pub fn encode_events(stream: &EventStream) -> Result<Vec<u8>> {
    stream.validate()?;
    let mut out = Vec::with_capacity(EVT_HEADER_LEN + EVT_RECORD_LEN * stream.events.len());
    out.extend_from_slice(&EVT_MAGIC);
    out.extend_from_slice(&EVT_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity.as_i8() as u8);
        out.extend_from_slice(&[0; 3]);
    }
    Ok(out)
}

/// Parses an EVT1 byte buffer.
pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < EVT_HEADER_LEN {
        return Err(binary(bytes.len(), format!("header needs {EVT_HEADER_LEN} bytes")));
    }
    if bytes[0..4] != EVT_MAGIC {
        return Err(binary(0, "bad magic, expected EVT1"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != EVT_VERSION {
        return Err(binary(4, format!("unsupported version {version}")));
    }
    let (width, height) = (u16_at(6), u16_at(8));
    if width == 0 || height == 0 {
        return Err(binary(6, "dimensions must be positive"));
    }
    let count = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
    let body = bytes.len() - EVT_HEADER_LEN;
    let available = (body / EVT_RECORD_LEN) as u64;
    if count > available {
        let offset = EVT_HEADER_LEN + available as usize * EVT_RECORD_LEN;
        return Err(binary(
            offset,
            format!("truncated: header declares {count} events, data holds {available} complete records"),
        ));
    }
    let end = EVT_HEADER_LEN + count as usize * EVT_RECORD_LEN;
    if end != bytes.len() {
        return Err(binary(end, "trailing bytes after the last record"));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut prev_t = 0;
    for (i, rec) in bytes[EVT_HEADER_LEN..].chunks_exact(EVT_RECORD_LEN).enumerate() {
        let offset = EVT_HEADER_LEN + i * EVT_RECORD_LEN;
        let t = u64::from_le_bytes(rec[0..8].try_into().expect("8 bytes"));
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let polarity = Polarity::from_i8(rec[12] as i8)
            .ok_or_else(|| binary(offset + 12, format!("polarity {} is not +1 or -1", rec[12] as i8)))?;
        if rec[13..16] != [0; 3] {
            return Err(binary(offset + 13, "nonzero padding"));
        }
        if x >= width || y >= height {
            return Err(binary(offset + 8, format!("({x}, {y}) outside {width}x{height}")));
        }
        if t < prev_t {
            return Err(binary(offset, "timestamps out of order"));
        }
        prev_t = t;
        events.push(Event::new(t, x, y, polarity));
    }
    Ok(EventStream { width, height, events })
}

/// Writes a stream as EVT1 to `w`.
pub fn write_events<W: Write>(mut w: W, stream: &EventStream) -> Result<()> {
    w.write_all(&encode_events(stream)?)?;
    Ok(())
}

/// Reads an EVT1 stream from `r`.
pub fn read_events<R: Read>(mut r: R) -> Result<EventStream> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_events(&bytes)
}

/// Writes an EVT1 file; nothing is created if the stream is invalid.
pub fn write_events_file(path: impl AsRef<Path>, stream: &EventStream) -> Result<()> {
    let bytes = encode_events(stream)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads an EVT1 file.
pub fn read_events_file(path: impl AsRef<Path>) -> Result<EventStream> {
    decode_events(&fs::read(path)?)
}

/// Writes events as `t,x,y,p` lines without a header.
pub fn write_events_csv<W: Write>(w: W, events: &[Event]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for (i, e) in events.iter().enumerate() {
        if i > 0 && e.t < events[i - 1].t {
            return Err(FormatError::Invalid(format!("event {i} is earlier than its predecessor")));
        }
        out.serialize((e.t, e.x, e.y, e.polarity.as_i8()))
            .map_err(|err| FormatError::Invalid(err.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Parses `t,x,y,p` lines.
pub fn read_events_csv<R: Read>(r: R) -> Result<Vec<Event>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut events: Vec<Event> = Vec::new();
    for row in reader.deserialize::<(u64, u16, u16, i8)>() {
        let (t, x, y, p) = row.map_err(|err| {
            let line = err.position().map_or(0, |p| p.line());
            let message = match err.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                other => format!("{other:?}"),
            };
            FormatError::Text { line, message }
        })?;
        let line = events.len() as u64 + 1;
        let polarity = Polarity::from_i8(p).ok_or_else(|| FormatError::Text {
            line,
            message: format!("polarity {p} is not 1 or -1"),
        })?;
        if events.last().is_some_and(|prev| t < prev.t) {
            return Err(FormatError::Text {
                line,
                message: "timestamps out of order".into(),
            });
        }
        events.push(Event::new(t, x, y, polarity));
    }
    Ok(events)
}

/// Magic bytes of a checkpoint.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EVRL";
/// Checkpoint format version written and accepted.
pub const CHECKPOINT_VERSION: u16 = 1;

/// A network with the number of gradient steps that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Parameters and batch-norm statistics.
    pub network: QNetwork<f32>,
    /// Gradient steps taken in training.
    pub step: u64,
}

/// Serializes a checkpoint: magic, version, network config, trainer step,
/// then every array as a u32 length and little-endian f32 values.
pub fn encode_checkpoint(network: &QNetwork<f32>, step: u64) -> Vec<u8> {
    let c = network.config();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.width, c.height, c.actions, c.stride, c.padding, c.hidden] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&step.to_le_bytes());
    for (_, values) in network.arrays() {
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(binary(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint; the embedded config determines every array shape.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(binary(0, "bad magic, expected EVRL"));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(binary(4, format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = cur.u32("network config")? as usize;
    }
    let config = NetworkConfig {
        width: dims[0],
        height: dims[1],
        actions: dims[2],
        stride: dims[3],
        padding: dims[4],
        hidden: dims[5],
    };
    config
        .validate()
        .map_err(|e| binary(6, format!("invalid network config: {e}")))?;
    let step = u64::from_le_bytes(cur.take(8, "step counter")?.try_into().expect("8 bytes"));
    let mut network = QNetwork::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| FormatError::Invalid(e.to_string()))?;
    let names: Vec<&'static str> = network.arrays().iter().map(|(n, _)| *n).collect();
    for (name, array) in names.into_iter().zip(network.arrays_mut()) {
        let at = cur.pos;
        let len = cur.u32(name)? as usize;
        if len != array.len() {
            return Err(binary(
                at,
                format!("{name} holds {len} values, config implies {}", array.len()),
            ));
        }
        let raw = cur.take(4 * len, name)?;
        for (dst, chunk) in array.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        if let Some(i) = array.iter().position(|v| !v.is_finite()) {
            return Err(binary(at + 4 + 4 * i, format!("{name} contains a non-finite value")));
        }
        if name.ends_with("running_var") && array.iter().any(|&v| v <= 0.0) {
            return Err(binary(at, format!("{name} must be positive")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(binary(cur.pos, "trailing bytes after the last array"));
    }
    Ok(Checkpoint { network, step })
}

/// Writes a checkpoint file.
pub fn save_checkpoint(path: impl AsRef<Path>, network: &QNetwork<f32>, step: u64) -> Result<()> {
    fs::write(path, encode_checkpoint(network, step))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

/// Reads a checkpoint and requires it to match `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &NetworkConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let found = ckpt.network.config();
    if found != expected {
        return Err(FormatError::Invalid(format!(
            "checkpoint shape mismatch: file has {}x{} input, {} actions, stride {}, padding {}, hidden {}; \
             expected {}x{} input, {} actions, stride {}, padding {}, hidden {}",
            found.width,
            found.height,
            found.actions,
            found.stride,
            found.padding,
            found.hidden,
            expected.width,
            expected.height,
            expected.actions,
            expected.stride,
            expected.padding,
            expected.hidden
        )));
    }
    Ok(ckpt)
}

fn pgm(width: usize, height: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

/// Gray level of an event value: −1 → 0, 0 → 128, +1 → 255.
pub fn event_gray(v: i8) -> u8 {
    match v {
        -1 => 0,
        0 => 128,
        _ => 255,
    }
}

/// Binary PGM of an event frame.
pub fn encode_frame_pgm(frame: &EventFrame) -> Vec<u8> {
    pgm(frame.width(), frame.height(), frame.values().iter().map(|&v| event_gray(v)))
}

/// Binary PGM of a rendered frame, linear intensity scaled to 0–255.
pub fn encode_intensity_pgm(frame: &IntensityFrame) -> Vec<u8> {
    pgm(
        frame.width,
        frame.height,
        frame
            .values
            .iter()
            .map(|&l| (255.0 * (l as f64).exp()).round().clamp(0.0, 255.0) as u8),
    )
}

/// Writes an event frame as a binary PGM.
pub fn write_frame_pgm(path: impl AsRef<Path>, frame: &EventFrame) -> Result<()> {
    fs::write(path, encode_frame_pgm(frame))?;
    Ok(())
}

/// Writes a rendered frame as a binary PGM.
pub fn write_intensity_pgm(path: impl AsRef<Path>, frame: &IntensityFrame) -> Result<()> {
    fs::write(path, encode_intensity_pgm(frame))?;
    Ok(())
}

/// Parses a PGM written by [`encode_frame_pgm`] back into a ternary frame.
pub fn decode_frame_pgm(bytes: &[u8]) -> Result<EventFrame> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(binary(pos, "truncated PGM header"));
        }
        fields.push((start, &bytes[start..pos]));
    }
    pos += 1;
    if fields[0].1 != b"P5" {
        return Err(binary(0, "not a binary PGM"));
    }
    let num = |(at, f): (usize, &[u8])| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| binary(at, "expected a decimal number"))
    };
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(binary(fields[3].0, "maxval must be 255"));
    }
    if bytes.len() < pos || bytes.len() - pos != w * h {
        return Err(binary(bytes.len().min(pos), format!("expected {} pixel bytes", w * h)));
    }
    let values = bytes[pos..]
        .iter()
        .enumerate()
        .map(|(i, &g)| match g {
            0 => Ok(-1),
            128 => Ok(0),
            255 => Ok(1),
            _ => Err(binary(pos + i, format!("gray level {g} is not an event value"))),
        })
        .collect::<Result<Vec<i8>>>()?;
    EventFrame::from_values(w, h, values).map_err(|e| FormatError::Invalid(e.to_string()))
}

/// Reads an event-frame PGM file.
pub fn read_frame_pgm(path: impl AsRef<Path>) -> Result<EventFrame> {
    decode_frame_pgm(&fs::read(path)?)
}
