//! Spike trains: generation under density targets, density measurement,
//! serial and address-event encodings, and the text file format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Generator recorded in file metadata so outputs can be reproduced.
pub const GENERATOR_NAME: &str = "ChaCha8Rng::seed_from_u64";

const MAX_REDRAWS: usize = 4096;

#[derive(Debug, Error)]
pub enum StimulusError {
    #[error("event (t={t}, ch={ch}) outside {n_steps} steps x {n_channels} channels")]
    OutOfRange {
        t: u32,
        ch: u32,
        n_steps: u32,
        n_channels: u32,
    },
    #[error("duplicate event (t={t}, ch={ch})")]
    Duplicate { t: u32, ch: u32 },
    #[error("invalid density profile: {0}")]
    InvalidProfile(String),
    #[error("serial frame {step} has width {got}, expected {expected}")]
    FrameWidth {
        step: usize,
        got: usize,
        expected: usize,
    },
    #[error("packet {index} ({timestamp}, {address}) does not fit {what}")]
    PacketRange {
        index: usize,
        timestamp: u32,
        address: u32,
        what: &'static str,
    },
    #[error("packet {index} breaks (timestamp, address) ordering")]
    Unsorted { index: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The set of `(t, ch)` spike events over a `n_steps` x `n_channels` grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeTrain {
    n_channels: u32,
    n_steps: u32,
    events: BTreeSet<(u32, u32)>,
}

impl SpikeTrain {
    pub fn empty(n_channels: u32, n_steps: u32) -> Self {
        Self {
            n_channels,
            n_steps,
            events: BTreeSet::new(),
        }
    }

    pub fn from_events<I>(n_channels: u32, n_steps: u32, events: I) -> Result<Self, StimulusError>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut train = Self::empty(n_channels, n_steps);
        for (t, ch) in events {
            train.insert(t, ch)?;
        }
        Ok(train)
    }

    pub fn insert(&mut self, t: u32, ch: u32) -> Result<(), StimulusError> {
        if t >= self.n_steps || ch >= self.n_channels {
            return Err(StimulusError::OutOfRange {
                t,
                ch,
                n_steps: self.n_steps,
                n_channels: self.n_channels,
            });
        }
        if !self.events.insert((t, ch)) {
            return Err(StimulusError::Duplicate { t, ch });
        }
        Ok(())
    }

    pub fn n_channels(&self) -> u32 {
        self.n_channels
    }

    pub fn n_steps(&self) -> u32 {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events in ascending `(t, ch)` order.
    pub fn events(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.events.iter().copied()
    }

    pub fn contains(&self, t: u32, ch: u32) -> bool {
        self.events.contains(&(t, ch))
    }

    /// Channels active at step `t`, ascending.
    pub fn channels_at(&self, t: u32) -> impl Iterator<Item = u32> + '_ {
        self.events.range((t, 0)..(t + 1, 0)).map(|&(_, ch)| ch)
    }

    /// `(t, channels)` for each step holding at least one event, ascending in `t`.
    pub fn active_steps(&self) -> Vec<(u32, Vec<u32>)> {
        let mut out: Vec<(u32, Vec<u32>)> = Vec::new();
        for &(t, ch) in &self.events {
            match out.last_mut() {
                Some((last, chans)) if *last == t => chans.push(ch),
                _ => out.push((t, vec![ch])),
            }
        }
        out
    }

    pub fn n_active_steps(&self) -> usize {
        let mut count = 0;
        let mut last = None;
        for &(t, _) in &self.events {
            if last != Some(t) {
                count += 1;
                last = Some(t);
            }
        }
        count
    }
}

/// Temporal density (fraction of steps with any event) and input density
/// (mean active-channel fraction, conditional on the step being active).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityProfile {
    pub temporal: f64,
    pub input: f64,
}

impl DensityProfile {
    pub fn new(temporal: f64, input: f64) -> Result<Self, StimulusError> {
        let p = Self { temporal, input };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), StimulusError> {
        for (name, v) in [("temporal", self.temporal), ("input", self.input)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(StimulusError::InvalidProfile(format!(
                    "{name} density {v} outside [0, 1]"
                )));
            }
        }
        if self.temporal > 0.0 && self.input == 0.0 {
            return Err(StimulusError::InvalidProfile(
                "active steps need a non-zero input density".into(),
            ));
        }
        Ok(())
    }

    /// Dataset presets (mean temporal / input densities): `mnist`, `nmnist`, `audiomnist`.
    pub fn preset(name: &str) -> Option<Self> {
        let (temporal, input) = match name.to_ascii_lowercase().as_str() {
            "mnist" => (1.00, 0.132),
            "nmnist" | "n-mnist" => (0.937, 0.016),
            "audiomnist" => (0.166, 0.748),
            _ => return None,
        };
        Some(Self { temporal, input })
    }
}

pub const PRESETS: [&str; 3] = ["mnist", "nmnist", "audiomnist"];

/// Per-channel Bernoulli probability whose redraw-until-non-empty
/// conditional mean equals `target`: solves `p / (1 - (1-p)^n) = target`.
///
/// Returns `None` when `target <= 1/n`: no non-empty step can be sparser
/// than a single channel.
fn conditional_channel_probability(target: f64, n: u32) -> Option<f64> {
    let n_f = n as f64;
    if target >= 1.0 {
        return Some(1.0);
    }
    if target * n_f <= 1.0 + 1e-9 {
        return None;
    }
    let cond_mean = |p: f64| p / (1.0 - (1.0 - p).powi(n as i32));
    let (mut lo, mut hi) = (0.0f64, target);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 || cond_mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Draws a train whose densities match `profile` in expectation.
///
/// Each step is active with probability `profile.temporal`. An active step
/// draws every channel independently and redraws while empty; the channel
/// probability is calibrated so the conditional mean hits `profile.input`.
/// Targets at or below one channel per step fall back to a single uniformly
/// chosen channel.
pub fn generate(
    profile: DensityProfile,
    n_channels: u32,
    n_steps: u32,
    seed: u64,
) -> Result<SpikeTrain, StimulusError> {
    profile.validate()?;
    if n_channels == 0 || n_steps == 0 {
        return Err(StimulusError::InvalidProfile(
            "need at least one channel and one step".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = SpikeTrain::empty(n_channels, n_steps);
    let channel_p = conditional_channel_probability(profile.input, n_channels);
    let mut active = Vec::with_capacity(n_channels as usize);
    for t in 0..n_steps {
        if !rng.gen_bool(profile.temporal) {
            continue;
        }
        active.clear();
        match channel_p {
            None => active.push(rng.gen_range(0..n_channels)),
            Some(p) => {
                for _ in 0..MAX_REDRAWS {
                    active.extend((0..n_channels).filter(|_| rng.gen_bool(p)));
                    if !active.is_empty() {
                        break;
                    }
                }
                if active.is_empty() {
                    active.push(0);
                }
            }
        }
        for &ch in &active {
            train.events.insert((t, ch));
        }
    }
    Ok(train)
}

/// A train where each active step has exactly `per_step` channels, chosen uniformly.
pub fn generate_fixed_count(
    active_steps: &[u32],
    per_step: u32,
    n_channels: u32,
    n_steps: u32,
    seed: u64,
) -> Result<SpikeTrain, StimulusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = SpikeTrain::empty(n_channels, n_steps);
    for &t in active_steps {
        for ch in index::sample(&mut rng, n_channels as usize, per_step as usize) {
            train.insert(t, ch as u32)?;
        }
    }
    Ok(train)
}

pub fn measure_density(train: &SpikeTrain) -> DensityProfile {
    let steps = train.active_steps();
    if steps.is_empty() || train.n_steps == 0 {
        return DensityProfile {
            temporal: 0.0,
            input: 0.0,
        };
    }
    let n = train.n_channels as f64;
    let input = steps.iter().map(|(_, c)| c.len() as f64 / n).sum::<f64>() / steps.len() as f64;
    DensityProfile {
        temporal: steps.len() as f64 / train.n_steps as f64,
        input,
    }
}

/// One serial input frame: bit `i` set iff channel `i` spiked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SerialFrame(pub Vec<bool>);

impl SerialFrame {
    pub fn is_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }

    pub fn set_bits(&self) -> impl Iterator<Item = u32> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32)
    }
}

/// Most significant channel first, so channel 0 is the rightmost digit.
impl std::fmt::Display for SerialFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in self.0.iter().rev() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

pub fn encode_serial(train: &SpikeTrain) -> Vec<SerialFrame> {
    let mut frames = vec![SerialFrame(vec![false; train.n_channels as usize]); train.n_steps as usize];
    for (t, ch) in train.events() {
        frames[t as usize].0[ch as usize] = true;
    }
    frames
}

pub fn decode_serial(frames: &[SerialFrame], n_channels: u32) -> Result<SpikeTrain, StimulusError> {
    let mut train = SpikeTrain::empty(n_channels, frames.len() as u32);
    for (step, frame) in frames.iter().enumerate() {
        if frame.width() != n_channels as usize {
            return Err(StimulusError::FrameWidth {
                step,
                got: frame.width(),
                expected: n_channels as usize,
            });
        }
        for ch in frame.set_bits() {
            train.events.insert((step as u32, ch));
        }
    }
    Ok(train)
}

/// Address event: spike on input `address` at `timestamp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AerPacket {
    pub timestamp: u32,
    pub address: u32,
}

/// One packet per event, sorted by timestamp then address. Fails if a
/// timestamp or address does not fit its field width.
pub fn encode_aer(
    train: &SpikeTrain,
    counter_bits: u32,
    addr_bits: u32,
) -> Result<Vec<AerPacket>, StimulusError> {
    let max_t = field_max(counter_bits);
    let max_a = field_max(addr_bits);
    train
        .events()
        .enumerate()
        .map(|(index, (t, ch))| {
            if t as u64 > max_t || ch as u64 > max_a {
                Err(StimulusError::PacketRange {
                    index,
                    timestamp: t,
                    address: ch,
                    what: "the counter/address field widths",
                })
            } else {
                Ok(AerPacket {
                    timestamp: t,
                    address: ch,
                })
            }
        })
        .collect()
}

fn field_max(bits: u32) -> u64 {
    if bits >= 32 {
        u32::MAX as u64
    } else {
        (1u64 << bits) - 1
    }
}

pub fn decode_aer(
    packets: &[AerPacket],
    n_channels: u32,
    n_steps: u32,
) -> Result<SpikeTrain, StimulusError> {
    let mut train = SpikeTrain::empty(n_channels, n_steps);
    let mut prev: Option<AerPacket> = None;
    for (index, &p) in packets.iter().enumerate() {
        if p.timestamp >= n_steps || p.address >= n_channels {
            return Err(StimulusError::PacketRange {
                index,
                timestamp: p.timestamp,
                address: p.address,
                what: "the train dimensions",
            });
        }
        if prev.is_some_and(|q| q >= p) {
            return Err(StimulusError::Unsorted { index });
        }
        prev = Some(p);
        train.events.insert((p.timestamp, p.address));
    }
    Ok(train)
}

/// Serializes to `SPIKETRAIN v1 channels=<C> steps=<T>` followed by one
/// `<t> <ch>` line per event. `comments` are emitted as `# ` lines after the header.
pub fn to_text(train: &SpikeTrain, comments: &[String]) -> String {
    let mut out = String::with_capacity(16 + train.len() * 8);
    let _ = writeln!(
        out,
        "SPIKETRAIN v1 channels={} steps={}",
        train.n_channels, train.n_steps
    );
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for (t, ch) in train.events() {
        let _ = writeln!(out, "{t} {ch}");
    }
    out
}

pub fn from_text(text: &str) -> Result<SpikeTrain, StimulusError> {
    let mut train: Option<SpikeTrain> = None;
    let mut last: Option<(u32, u32)> = None;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| StimulusError::Parse { line: line_no, msg };
        let Some(train) = train.as_mut() else {
            train = Some(parse_header(line).map_err(err)?);
            continue;
        };
        let mut fields = line.split_whitespace();
        let (Some(t), Some(ch), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(format!("expected `<t> <ch>`, got `{line}`")));
        };
        let t: u32 = t.parse().map_err(|_| err(format!("bad timestep `{t}`")))?;
        let ch: u32 = ch.parse().map_err(|_| err(format!("bad channel `{ch}`")))?;
        if t >= train.n_steps || ch >= train.n_channels {
            return Err(err(format!(
                "event t={t} ch={ch} outside steps={} channels={}",
                train.n_steps, train.n_channels
            )));
        }
        match last {
            Some(prev) if prev == (t, ch) => {
                return Err(err(format!("duplicate event t={t} ch={ch}")))
            }
            Some(prev) if prev > (t, ch) => {
                return Err(err(format!("event t={t} ch={ch} out of ascending order")))
            }
            _ => {}
        }
        last = Some((t, ch));
        train.events.insert((t, ch));
    }
    train.ok_or(StimulusError::Parse {
        line: text.lines().count().max(1),
        msg: "missing SPIKETRAIN header".into(),
    })
}

fn parse_header(line: &str) -> Result<SpikeTrain, String> {
    let mut fields = line.split_whitespace();
    if fields.next() != Some("SPIKETRAIN") || fields.next() != Some("v1") {
        return Err(format!("expected `SPIKETRAIN v1 ...` header, got `{line}`"));
    }
    let mut channels = None;
    let mut steps = None;
    for f in fields {
        let (slot, value) = match f.split_once('=') {
            Some(("channels", v)) => (&mut channels, v),
            Some(("steps", v)) => (&mut steps, v),
            _ => return Err(format!("unexpected header field `{f}`")),
        };
        if slot.is_some() {
            return Err(format!("repeated header field `{f}`"));
        }
        *slot = Some(
            value
                .parse::<u32>()
                .map_err(|_| format!("bad header value `{f}`"))?,
        );
    }
    match (channels, steps) {
        (Some(c), Some(s)) => Ok(SpikeTrain::empty(c, s)),
        _ => Err("header needs channels= and steps=".into()),
    }
}

pub fn save(train: &SpikeTrain, path: &Path) -> Result<(), StimulusError> {
    save_with_comments(train, path, &[])
}

pub fn save_with_comments(
    train: &SpikeTrain,
    path: &Path,
    comments: &[String],
) -> Result<(), StimulusError> {
    std::fs::write(path, to_text(train, comments))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SpikeTrain, StimulusError> {
    from_text(&std::fs::read_to_string(path)?)
}
