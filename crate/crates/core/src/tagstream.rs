//! Time-tag file I/O and per-shot folding.
//!
//! # QTT1 format
//!
//! Little-endian throughout. A 32-byte header
//!
//! | offset | size | field                  |
//! |-------:|-----:|------------------------|
//! | 0      | 4    | magic `"QTT1"`         |
//! | 4      | 2    | version (= 1)          |
//! | 6      | 2    | header_len (= 32)      |
//! | 8      | 8    | clock_resolution_ps (= 1) |
//! | 16     | 8    | f_rep in mHz           |
//! | 24     | 4    | t_int in ms            |
//! | 28     | 2    | n_channels             |
//! | 30     | 2    | reserved (= 0)         |
//!
//! is followed by 16-byte records: `timestamp_ps: u64 | channel: u16 | 6 reserved zero bytes`.
//! Channel 0 is the shot sync (placed at `t_0` of every shot), 1 the signal APD
//! and 2 the monitor APD.

use std::io::{self, BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BinError, TagError};
use crate::model::{DetectionWindow, ExperimentConfig};
use crate::time::{Time, PS_PER_MS};

pub const MAGIC: [u8; 4] = *b"QTT1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;

pub const CH_SYNC: u16 = 0;
pub const CH_SIGNAL: u16 = 1;
pub const CH_MONITOR: u16 = 2;
pub const N_CHANNELS: u16 = 3;

pub fn channel_name(ch: u16) -> &'static str {
    match ch {
        CH_SYNC => "sync",
        CH_SIGNAL => "signal",
        CH_MONITOR => "monitor",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTagRecord {
    /// Picoseconds since acquisition start.
    pub timestamp: u64,
    pub channel: u16,
}

impl TimeTagRecord {
    pub fn new(timestamp: u64, channel: u16) -> Self {
        TimeTagRecord { timestamp, channel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagHeader {
    pub clock_resolution_ps: u64,
    pub f_rep_mhz: u64,
    pub t_int_ms: u32,
    pub n_channels: u16,
}

impl TagHeader {
    pub fn new(f_rep_hz: f64, t_int: Time) -> Self {
        TagHeader {
            clock_resolution_ps: 1,
            f_rep_mhz: (f_rep_hz * 1e3).round() as u64,
            t_int_ms: (t_int.as_ps() / PS_PER_MS) as u32,
            n_channels: N_CHANNELS,
        }
    }

    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        Self::new(cfg.f_rep_hz, cfg.t_int)
    }

    pub fn f_rep_hz(&self) -> f64 {
        self.f_rep_mhz as f64 / 1e3
    }

    pub fn t_int(&self) -> Time {
        Time(self.t_int_ms as i64 * PS_PER_MS)
    }

    /// Channel ids present in the file, with their role names.
    pub fn channel_map(&self) -> Vec<(u16, &'static str)> {
        (0..self.n_channels).map(|c| (c, channel_name(c))).collect()
    }

    pub fn has_channel(&self, ch: u16) -> bool {
        ch < self.n_channels
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6..8].copy_from_slice(&(HEADER_LEN as u16).to_le_bytes());
        b[8..16].copy_from_slice(&self.clock_resolution_ps.to_le_bytes());
        b[16..24].copy_from_slice(&self.f_rep_mhz.to_le_bytes());
        b[24..28].copy_from_slice(&self.t_int_ms.to_le_bytes());
        b[28..30].copy_from_slice(&self.n_channels.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, TagError> {
        if b.len() < 4 {
            return Err(TagError::Truncated { what: "header", offset: b.len() as u64 });
        }
        let magic: [u8; 4] = b[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(TagError::BadMagic { found: magic });
        }
        if b.len() < HEADER_LEN {
            return Err(TagError::Truncated { what: "header", offset: b.len() as u64 });
        }
        let u16_at = |o: usize| u16::from_le_bytes(b[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(TagError::UnsupportedVersion { version });
        }
        let header_len = u16_at(6);
        if header_len as usize != HEADER_LEN {
            return Err(TagError::UnsupportedHeader { field: "header_len", value: header_len as u64, offset: 6 });
        }
        let clock_resolution_ps = u64_at(8);
        if clock_resolution_ps != 1 {
            return Err(TagError::UnsupportedHeader {
                field: "clock_resolution_ps",
                value: clock_resolution_ps,
                offset: 8,
            });
        }
        let reserved = u16_at(30);
        if reserved != 0 {
            return Err(TagError::UnsupportedHeader { field: "reserved", value: reserved as u64, offset: 30 });
        }
        Ok(TagHeader { clock_resolution_ps, f_rep_mhz: u64_at(16), t_int_ms: u32_at(24), n_channels: u16_at(28) })
    }
}

fn encode_record(r: &TimeTagRecord) -> [u8; RECORD_LEN] {
    let mut b = [0u8; RECORD_LEN];
    b[0..8].copy_from_slice(&r.timestamp.to_le_bytes());
    b[8..10].copy_from_slice(&r.channel.to_le_bytes());
    b
}

/// Streaming QTT1 reader. Records are yielded in file order.
pub struct TagReader<R> {
    inner: BufReader<R>,
    header: TagHeader,
    offset: u64,
    failed: bool,
}

impl<R: Read> TagReader<R> {
    pub fn new(source: R) -> Result<Self, TagError> {
        let mut inner = BufReader::with_capacity(1 << 16, source);
        let mut buf = [0u8; HEADER_LEN];
        let got = read_full(&mut inner, &mut buf)?;
        let header = TagHeader::from_bytes(&buf[..got])?;
        Ok(TagReader { inner, header, offset: HEADER_LEN as u64, failed: false })
    }

    pub fn header(&self) -> &TagHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<Option<TimeTagRecord>, TagError> {
        if self.inner.fill_buf()?.is_empty() {
            return Ok(None);
        }
        let mut b = [0u8; RECORD_LEN];
        let got = read_full(&mut self.inner, &mut b)?;
        if got < RECORD_LEN {
            return Err(TagError::Truncated { what: "record", offset: self.offset });
        }
        if b[10..].iter().any(|&x| x != 0) {
            return Err(TagError::Reserved { offset: self.offset });
        }
        let channel = u16::from_le_bytes([b[8], b[9]]);
        if channel >= self.header.n_channels {
            return Err(TagError::UnknownChannel { channel, n_channels: self.header.n_channels });
        }
        self.offset += RECORD_LEN as u64;
        Ok(Some(TimeTagRecord { timestamp: u64::from_le_bytes(b[0..8].try_into().unwrap()), channel }))
    }
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<TimeTagRecord, TagError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_record() {
            Ok(r) => r.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Opens a stream: returns the header and an iterator over its records.
pub fn read_tag_file<R: Read>(source: R) -> Result<TagReader<R>, TagError> {
    TagReader::new(source)
}

/// Reads a whole in-memory file.
pub fn read_tag_bytes(bytes: &[u8]) -> Result<(TagHeader, Vec<TimeTagRecord>), TagError> {
    let header = TagHeader::from_bytes(&bytes[..bytes.len().min(HEADER_LEN)])?;
    let body = &bytes[HEADER_LEN..];
    let mut records = Vec::with_capacity(body.len() / RECORD_LEN);
    for (i, chunk) in body.chunks(RECORD_LEN).enumerate() {
        let offset = (HEADER_LEN + i * RECORD_LEN) as u64;
        if chunk.len() < RECORD_LEN {
            return Err(TagError::Truncated { what: "record", offset });
        }
        if chunk[10..].iter().any(|&x| x != 0) {
            return Err(TagError::Reserved { offset });
        }
        let channel = u16::from_le_bytes([chunk[8], chunk[9]]);
        if channel >= header.n_channels {
            return Err(TagError::UnknownChannel { channel, n_channels: header.n_channels });
        }
        records.push(TimeTagRecord { timestamp: u64::from_le_bytes(chunk[0..8].try_into().unwrap()), channel });
    }
    Ok((header, records))
}

/// Streaming QTT1 writer. Rejects records that go back in time.
pub struct TagWriter<W: Write> {
    inner: W,
    header: TagHeader,
    last: Option<u64>,
    written: u64,
}

impl<W: Write> TagWriter<W> {
    pub fn new(mut inner: W, header: TagHeader) -> Result<Self, TagError> {
        inner.write_all(&header.to_bytes())?;
        Ok(TagWriter { inner, header, last: None, written: 0 })
    }

    pub fn push(&mut self, r: &TimeTagRecord) -> Result<(), TagError> {
        if let Some(prev) = self.last {
            if r.timestamp < prev {
                return Err(TagError::Unsorted { index: self.written, timestamp: r.timestamp, previous: prev });
            }
        }
        if r.channel >= self.header.n_channels {
            return Err(TagError::UnknownChannel { channel: r.channel, n_channels: self.header.n_channels });
        }
        self.inner.write_all(&encode_record(r))?;
        self.last = Some(r.timestamp);
        self.written += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W, TagError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Serializes `records` (which must be sorted by timestamp) after `header`.
pub fn write_tag_file(records: &[TimeTagRecord], header: &TagHeader) -> Result<Vec<u8>, TagError> {
    let mut w = TagWriter::new(Vec::with_capacity(HEADER_LEN + RECORD_LEN * records.len()), *header)?;
    for r in records {
        w.push(r)?;
    }
    w.finish()
}

/// What to fold and how to bin it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub sync_channel: u16,
    pub target_channel: u16,
    pub bin_width: Time,
    /// Folded time of the lower edge of bin 0.
    pub origin: Time,
    pub span: Time,
}

impl FoldSpec {
    /// 5 ps bins covering the whole post-pump part of the shot, starting at
    /// `−pump_settle`.
    pub fn for_config(cfg: &ExperimentConfig, target_channel: u16) -> Self {
        let t = &cfg.timing;
        FoldSpec {
            sync_channel: CH_SYNC,
            target_channel,
            bin_width: Time::ps(5),
            origin: -t.pump_settle,
            span: t.shot_period - t.pump_duration,
        }
    }

    pub fn n_bins(&self) -> usize {
        ((self.span.as_ps() + self.bin_width.as_ps() - 1) / self.bin_width.as_ps()) as usize
    }

    fn check(&self) -> Result<(), BinError> {
        if self.bin_width <= Time::ZERO {
            return Err(BinError::BinWidth);
        }
        if self.span <= Time::ZERO {
            return Err(BinError::Span);
        }
        Ok(())
    }
}

/// Arrival-time histogram in the folded per-shot frame.
///
/// Bin `i` covers `[origin + i·bin_width, origin + (i+1)·bin_width)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldedHistogram {
    pub bin_width: Time,
    pub origin: Time,
    pub n_bins: usize,
    pub counts: Vec<u64>,
    pub n_shots: u64,
    pub channel: u16,
    /// Clicks that arrived before the first shot frame.
    pub orphans: u64,
    /// Clicks that folded outside `[origin, origin + n_bins·bin_width)`.
    pub out_of_span: u64,
}

impl FoldedHistogram {
    pub fn empty(spec: &FoldSpec) -> Self {
        let n_bins = spec.n_bins();
        FoldedHistogram {
            bin_width: spec.bin_width,
            origin: spec.origin,
            n_bins,
            counts: vec![0; n_bins],
            n_shots: 0,
            channel: spec.target_channel,
            orphans: 0,
            out_of_span: 0,
        }
    }

    pub fn span_end(&self) -> Time {
        self.origin + self.bin_width * self.n_bins as i64
    }

    /// The full binned range as a window.
    pub fn span_window(&self) -> DetectionWindow {
        DetectionWindow { start: self.origin, end: self.span_end() }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_start(&self, i: usize) -> Time {
        self.origin + self.bin_width * i as i64
    }

    /// Elementwise sum. `n_shots` is taken as the larger of the two because
    /// partial histograms of one run share the same shot count.
    pub fn merge(&mut self, other: &FoldedHistogram) -> Result<(), BinError> {
        if self.bin_width != other.bin_width || self.origin != other.origin || self.n_bins != other.n_bins {
            return Err(BinError::Incompatible("binning"));
        }
        if self.channel != other.channel {
            return Err(BinError::Incompatible("channel"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.orphans += other.orphans;
        self.out_of_span += other.out_of_span;
        self.n_shots = self.n_shots.max(other.n_shots);
        Ok(())
    }

    /// `bin_start_ps,count` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_start_ps,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", self.bin_start(i).as_ps(), c)?;
        }
        Ok(())
    }
}

/// Timestamps split by role, ready for folding.
#[derive(Debug, Default, Clone)]
pub struct SplitStream {
    pub syncs: Vec<i64>,
    pub clicks: Vec<i64>,
    /// Records on the target channel, including any that end up orphaned.
    pub n_target: u64,
}

impl SplitStream {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TimeTagRecord>, sync: u16, target: u16) -> Self {
        let mut s = SplitStream::default();
        for r in records {
            if r.channel == sync {
                s.syncs.push(r.timestamp as i64);
            } else if r.channel == target {
                s.clicks.push(r.timestamp as i64);
                s.n_target += 1;
            }
        }
        s
    }
}

/// Assigns every target click to the shot whose frame `[sync + origin, …)`
/// most recently started and bins its folded time `timestamp − sync`.
///
/// With `origin = 0` this is exactly the most-recent-sync rule. A negative
/// origin lets the frame open before its sync, so clicks that precede `t_0`
/// (the monitor pulse) still fold into the correct shot.
pub fn fold_and_bin(records: &[TimeTagRecord], spec: &FoldSpec) -> Result<FoldedHistogram, BinError> {
    let split = SplitStream::from_records(records, spec.sync_channel, spec.target_channel);
    fold_split(&split, spec)
}

pub fn fold_split(split: &SplitStream, spec: &FoldSpec) -> Result<FoldedHistogram, BinError> {
    spec.check()?;
    let mut h = FoldedHistogram::empty(spec);
    bin_chunk(&split.syncs, &split.clicks, spec, &mut h);
    h.n_shots = split.syncs.len() as u64;
    Ok(h)
}

/// Same result as [`fold_and_bin`], binning contiguous chunks of clicks on the
/// rayon pool and merging the partial histograms.
pub fn fold_and_bin_parallel(
    records: &[TimeTagRecord],
    spec: &FoldSpec,
    chunk_len: usize,
) -> Result<FoldedHistogram, BinError> {
    spec.check()?;
    let split = SplitStream::from_records(records, spec.sync_channel, spec.target_channel);
    let chunk_len = chunk_len.max(1);
    let mut h = split
        .clicks
        .par_chunks(chunk_len)
        .map(|chunk| {
            let mut part = FoldedHistogram::empty(spec);
            bin_chunk(&split.syncs, chunk, spec, &mut part);
            part
        })
        .reduce(
            || FoldedHistogram::empty(spec),
            |mut a, b| {
                a.merge(&b).expect("partial histograms share one spec");
                a
            },
        );
    h.n_shots = split.syncs.len() as u64;
    Ok(h)
}

fn bin_chunk(syncs: &[i64], clicks: &[i64], spec: &FoldSpec, h: &mut FoldedHistogram) {
    let Some(&first) = clicks.first() else { return };
    let origin = spec.origin.as_ps();
    let width = spec.bin_width.as_ps();
    let n_bins = h.n_bins as i64;
    // Index one past the last sync whose frame has opened at `first`.
    let mut next = syncs.partition_point(|&s| s + origin <= first);
    for &t in clicks {
        while next < syncs.len() && syncs[next] + origin <= t {
            next += 1;
        }
        if next == 0 {
            h.orphans += 1;
            continue;
        }
        let rel = t - syncs[next - 1] - origin;
        let bin = rel / width;
        if bin < n_bins {
            h.counts[bin as usize] += 1;
        } else {
            h.out_of_span += 1;
        }
    }
}

/// Folded times of every target click (orphans excluded), in click order.
pub fn fold_times(split: &SplitStream, origin: Time) -> (Vec<Time>, u64) {
    let origin = origin.as_ps();
    let mut out = Vec::with_capacity(split.clicks.len());
    let mut orphans = 0;
    let mut next = 0;
    for &t in &split.clicks {
        while next < split.syncs.len() && split.syncs[next] + origin <= t {
            next += 1;
        }
        if next == 0 {
            orphans += 1;
        } else {
            out.push(Time(t - split.syncs[next - 1]));
        }
    }
    (out, orphans)
}

/// Total counts in bins whose lower edge lies in `[w.start, w.end)`.
pub fn window_sum(hist: &FoldedHistogram, w: &DetectionWindow) -> Result<u64, BinError> {
    if w.start < hist.origin || w.end > hist.span_end() {
        return Err(BinError::WindowOutsideSpan {
            window: w.to_string(),
            span_start: hist.origin.to_string(),
            span_end: hist.span_end().to_string(),
        });
    }
    let width = hist.bin_width.as_ps();
    let rel_start = (w.start - hist.origin).as_ps();
    let rel_end = (w.end - hist.origin).as_ps();
    let first = (rel_start + width - 1) / width;
    let last = (rel_end + width - 1) / width;
    Ok(hist.counts[first as usize..last as usize].iter().sum())
}

/// Number of folded times inside `w`.
pub fn window_sum_folded(times: &[Time], w: &DetectionWindow) -> u64 {
    times.iter().filter(|t| w.contains(**t)).count() as u64
}
