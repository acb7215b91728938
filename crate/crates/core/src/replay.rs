//! Capacity-bounded replay buffer: storage codecs (bit-depth quantization,
//! area resizing), class-balanced and reservoir eviction, uniform sampling.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;

/// A raw stream item.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Features,
    pub label: u32,
    pub task_id: u32,
    /// Instance/object id, required by instance orderings.
    pub group_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    /// Theory mode: real vector, unit norm.
    Vector(Vec<f64>),
    /// Practical mode: pixel array, values 0..=255, row-major (y, x, channel).
    Image {
        h: usize,
        w: usize,
        c: usize,
        data: Vec<u8>,
    },
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Vector(v) => v.len(),
            Features::Image { data, .. } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Theory-mode invariant: unit L2 norm within 1e-9.
    pub fn check_unit_norm(&self) -> Result<()> {
        match self {
            Features::Vector(v) => {
                let n = norm2(v);
                if (n - 1.0).abs() > 1e-9 {
                    Err(Error::Input(format!("expected unit-norm features, ||x|| = {n}")))
                } else {
                    Ok(())
                }
            }
            Features::Image { .. } => Err(Error::Input(
                "theory mode requires vector features".into(),
            )),
        }
    }
}

/// Storage codec applied before an example enters the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Codec {
    Identity,
    Quantize { bits: u8 },
    Resize { area_ratio: f64 },
    QuantizeResize { bits: u8, area_ratio: f64 },
}

impl Codec {
    pub fn validate(&self) -> Result<()> {
        let (bits, ratio) = self.parts();
        if !(1..=8).contains(&bits) {
            return Err(Error::Config(format!("quantization bits must be 1..=8, got {bits}")));
        }
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Config(format!("area ratio must be in (0, 1], got {ratio}")));
        }
        Ok(())
    }

    fn parts(&self) -> (u8, f64) {
        match *self {
            Codec::Identity => (8, 1.0),
            Codec::Quantize { bits } => (bits, 1.0),
            Codec::Resize { area_ratio } => (8, area_ratio),
            Codec::QuantizeResize { bits, area_ratio } => (bits, area_ratio),
        }
    }
}

/// Original feature shape, kept so decode can restore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector { len: usize },
    Image { h: usize, w: usize, c: usize },
}

/// Compressed buffer form of an [`Example`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoredExample {
    pub payload: Payload,
    pub codec: Codec,
    pub shape: Shape,
    pub label: u32,
    pub task_id: u32,
    pub group_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Vector(Vec<f64>),
    /// Bit-packed quantized pixels at the (possibly reduced) stored size.
    Image {
        bytes: Vec<u8>,
        bits: u8,
        stored_h: usize,
        stored_w: usize,
    },
}

impl StoredExample {
    /// Payload size in bytes as stored (bit-packed for quantized images).
    pub fn payload_bytes(&self) -> usize {
        match &self.payload {
            Payload::Vector(v) => v.len() * 8,
            Payload::Image { bytes, .. } => bytes.len(),
        }
    }
}

// ----- quantization -----

/// `q = floor(p / 2^(8-b))`; `b = 8` is the identity.
pub fn quantize_pixel(p: u8, bits: u8) -> Result<u8> {
    check_bits(bits)?;
    Ok(p >> (8 - bits))
}

/// Floor reconstruction `q * 2^(8-b)`.
pub fn dequantize_pixel(level: u8, bits: u8) -> Result<u8> {
    check_bits(bits)?;
    Ok(level << (8 - bits))
}

fn check_bits(bits: u8) -> Result<()> {
    if (1..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::Config(format!("quantization bits must be 1..=8, got {bits}")))
    }
}

/// Sequential MSB-first bit packing of `bits`-wide levels.
pub fn pack_bits(levels: &[u8], bits: u8) -> Vec<u8> {
    debug_assert!((1..=8).contains(&bits));
    let total_bits = levels.len() * bits as usize;
    let mut out = vec![0u8; total_bits.div_ceil(8)];
    let mut pos = 0usize;
    for &level in levels {
        for k in (0..bits).rev() {
            if level >> k & 1 == 1 {
                out[pos / 8] |= 1 << (7 - pos % 8);
            }
            pos += 1;
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], bits: u8, count: usize) -> Vec<u8> {
    debug_assert!((1..=8).contains(&bits));
    let mut out = Vec::with_capacity(count);
    let mut pos = 0usize;
    for _ in 0..count {
        let mut level = 0u8;
        for _ in 0..bits {
            let bit = bytes[pos / 8] >> (7 - pos % 8) & 1;
            level = level << 1 | bit;
            pos += 1;
        }
        out.push(level);
    }
    out
}

// ----- resizing -----

/// New side length under area ratio `r`: `round(side * sqrt(r))`, min 1.
pub fn resized_side(side: usize, area_ratio: f64) -> usize {
    ((side as f64 * area_ratio.sqrt()).round() as usize).max(1)
}

/// Bilinear resampling, align-corners=false, per channel.
pub fn resize_bilinear(
    src: &[f64],
    h: usize,
    w: usize,
    c: usize,
    nh: usize,
    nw: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), h * w * c);
    let mut dst = vec![0.0; nh * nw * c];
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    for y in 0..nh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..nw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let p00 = src[(y0 * w + x0) * c + ch];
                let p01 = src[(y0 * w + x1) * c + ch];
                let p10 = src[(y1 * w + x0) * c + ch];
                let p11 = src[(y1 * w + x1) * c + ch];
                let top = p00 + (p01 - p00) * wx;
                let bot = p10 + (p11 - p10) * wx;
                dst[(y * nw + x) * c + ch] = top + (bot - top) * wy;
            }
        }
    }
    dst
}

fn u8s_to_f64(data: &[u8]) -> Vec<f64> {
    data.iter().map(|&v| v as f64).collect()
}

fn f64s_to_u8(data: &[f64]) -> Vec<u8> {
    data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
}

// ----- encode / decode -----

pub fn encode(example: &Example, codec: Codec) -> Result<StoredExample> {
    codec.validate()?;
    let (bits, ratio) = codec.parts();
    let (payload, shape) = match &example.features {
        Features::Vector(v) => {
            if codec != Codec::Identity {
                return Err(Error::Storage(
                    "image codecs cannot encode vector features".into(),
                ));
            }
            (Payload::Vector(v.clone()), Shape::Vector { len: v.len() })
        }
        Features::Image { h, w, c, data } => {
            let (stored_h, stored_w, pixels) = if ratio < 1.0 {
                let nh = resized_side(*h, ratio);
                let nw = resized_side(*w, ratio);
                let small = resize_bilinear(&u8s_to_f64(data), *h, *w, *c, nh, nw);
                (nh, nw, f64s_to_u8(&small))
            } else {
                (*h, *w, data.clone())
            };
            let levels: Vec<u8> = if bits < 8 {
                pixels.iter().map(|&p| p >> (8 - bits)).collect()
            } else {
                pixels
            };
            (
                Payload::Image {
                    bytes: pack_bits(&levels, bits),
                    bits,
                    stored_h,
                    stored_w,
                },
                Shape::Image { h: *h, w: *w, c: *c },
            )
        }
    };
    Ok(StoredExample {
        payload,
        codec,
        shape,
        label: example.label,
        task_id: example.task_id,
        group_id: example.group_id,
    })
}

pub fn decode(stored: &StoredExample) -> Result<Example> {
    let features = match (&stored.payload, stored.shape) {
        (Payload::Vector(v), Shape::Vector { .. }) => Features::Vector(v.clone()),
        (
            Payload::Image {
                bytes,
                bits,
                stored_h,
                stored_w,
            },
            Shape::Image { h, w, c },
        ) => {
            let count = stored_h * stored_w * c;
            let levels = unpack_bits(bytes, *bits, count);
            let pixels: Vec<u8> = levels.iter().map(|&q| q << (8 - bits)).collect();
            let data = if (*stored_h, *stored_w) != (h, w) {
                let up = resize_bilinear(&u8s_to_f64(&pixels), *stored_h, *stored_w, c, h, w);
                f64s_to_u8(&up)
            } else {
                pixels
            };
            Features::Image { h, w, c, data }
        }
        _ => return Err(Error::Storage("payload/shape mismatch".into())),
    };
    Ok(Example {
        features,
        label: stored.label,
        task_id: stored.task_id,
        group_id: stored.group_id,
    })
}

// ----- the buffer -----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionPolicy {
    ClassBalancedRandom,
    Reservoir,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    codec: Codec,
    policy: EvictionPolicy,
    entries: Vec<StoredExample>,
    class_counts: BTreeMap<u32, usize>,
    seen_count: u64,
}

/// Fixed per-entry bookkeeping charge used by [`ReplayBuffer::memory_footprint`]:
/// label + task + group + shape/codec descriptors, rounded up.
pub const ENTRY_OVERHEAD_BYTES: usize = 32;

impl ReplayBuffer {
    pub fn new(capacity: usize, codec: Codec, policy: EvictionPolicy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be >= 1".into()));
        }
        codec.validate()?;
        Ok(ReplayBuffer {
            capacity,
            codec,
            policy,
            entries: Vec::new(),
            class_counts: BTreeMap::new(),
            seen_count: 0,
        })
    }

    /// Map a byte budget to an entry-count capacity from the codec's fixed
    /// per-example encoded size for `shape`.
    pub fn capacity_for_budget(budget_bytes: usize, codec: Codec, shape: Shape) -> Result<usize> {
        codec.validate()?;
        let per_entry = match shape {
            Shape::Vector { len } => len * 8,
            Shape::Image { h, w, c } => {
                let (bits, ratio) = codec.parts();
                let sh = resized_side(h, ratio);
                let sw = resized_side(w, ratio);
                (sh * sw * c * bits as usize).div_ceil(8)
            }
        } + ENTRY_OVERHEAD_BYTES;
        let n = budget_bytes / per_entry;
        if n == 0 {
            return Err(Error::Config(format!(
                "byte budget {budget_bytes} too small for one entry ({per_entry} bytes)"
            )));
        }
        Ok(n)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn class_counts(&self) -> &BTreeMap<u32, usize> {
        &self.class_counts
    }

    pub fn entries(&self) -> &[StoredExample] {
        &self.entries
    }

    /// Offer one example. Store-then-evict: the new item always enters;
    /// eviction restores capacity afterwards (class-balanced policy).
    /// Reservoir replaces in place once full.
    pub fn store<R: Rng>(&mut self, example: &Example, rng: &mut R) -> Result<()> {
        let stored = encode(example, self.codec)?;
        self.seen_count += 1;
        match self.policy {
            EvictionPolicy::ClassBalancedRandom => {
                self.push(stored);
                if self.entries.len() > self.capacity {
                    self.evict_class_balanced(rng)?;
                }
            }
            EvictionPolicy::Reservoir => {
                if self.entries.len() < self.capacity {
                    self.push(stored);
                } else {
                    let i = rng.gen_range(0..self.seen_count);
                    if (i as usize) < self.capacity {
                        let old = std::mem::replace(&mut self.entries[i as usize], stored);
                        self.dec_count(old.label);
                        self.inc_count(self.entries[i as usize].label);
                    }
                }
            }
        }
        Ok(())
    }

    fn push(&mut self, stored: StoredExample) {
        self.inc_count(stored.label);
        self.entries.push(stored);
    }

    fn inc_count(&mut self, label: u32) {
        *self.class_counts.entry(label).or_insert(0) += 1;
    }

    fn dec_count(&mut self, label: u32) {
        let c = self.class_counts.get_mut(&label).expect("count present");
        *c -= 1;
        if *c == 0 {
            self.class_counts.remove(&label);
        }
    }

    /// Remove a uniformly random member of a most-populous class
    /// (ties broken uniformly over tied classes). Returns the removed index.
    pub fn evict_class_balanced<R: Rng>(&mut self, rng: &mut R) -> Result<usize> {
        if self.entries.is_empty() {
            return Err(Error::State("cannot evict from an empty buffer".into()));
        }
        let max_count = *self.class_counts.values().max().unwrap();
        let tied: Vec<u32> = self
            .class_counts
            .iter()
            .filter(|(_, &n)| n == max_count)
            .map(|(&label, _)| label)
            .collect();
        let victim_class = tied[rng.gen_range(0..tied.len())];
        let members: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == victim_class)
            .map(|(i, _)| i)
            .collect();
        let idx = members[rng.gen_range(0..members.len())];
        let removed = self.entries.remove(idx);
        self.dec_count(removed.label);
        Ok(idx)
    }

    /// `b` uniform draws with replacement, decoded. Empty buffer gives an
    /// empty list (the stream's first iteration).
    pub fn sample<R: Rng>(&self, b: usize, rng: &mut R) -> Result<Vec<Example>> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        (0..b)
            .map(|_| decode(&self.entries[rng.gen_range(0..self.entries.len())]))
            .collect()
    }

    /// Sum of stored payload bytes (no per-entry overhead).
    pub fn payload_bytes(&self) -> usize {
        self.entries.iter().map(StoredExample::payload_bytes).sum()
    }

    /// Deterministic accounting: payload bytes plus
    /// [`ENTRY_OVERHEAD_BYTES`] per entry.
    pub fn memory_footprint(&self) -> usize {
        self.payload_bytes() + self.entries.len() * ENTRY_OVERHEAD_BYTES
    }

    // ----- snapshot format -----
    //
    // magic "CSRB" | version u32 | policy u8 | capacity u64 | codec
    // (bits u8, area_ratio f64) | seen u64 | n u64 | entries.

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"CSRB")?;
        f.write_all(&1u32.to_le_bytes())?;
        f.write_all(&[match self.policy {
            EvictionPolicy::ClassBalancedRandom => 0u8,
            EvictionPolicy::Reservoir => 1u8,
        }])?;
        f.write_all(&(self.capacity as u64).to_le_bytes())?;
        write_codec(&mut f, self.codec)?;
        f.write_all(&self.seen_count.to_le_bytes())?;
        f.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            write_entry(&mut f, e)?;
        }
        f.into_inner()
            .map_err(|e| Error::Storage(format!("snapshot flush failed: {e}")))?
            .sync_all()?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != b"CSRB" {
            return Err(Error::Parse {
                offset: 0,
                message: "bad buffer snapshot magic".into(),
            });
        }
        let version = read_u32(&mut f)?;
        if version != 1 {
            return Err(Error::Parse {
                offset: 4,
                message: format!("unsupported snapshot version {version}"),
            });
        }
        let policy = match read_u8(&mut f)? {
            0 => EvictionPolicy::ClassBalancedRandom,
            1 => EvictionPolicy::Reservoir,
            b => {
                return Err(Error::Parse {
                    offset: 8,
                    message: format!("unknown policy byte {b}"),
                })
            }
        };
        let capacity = read_u64(&mut f)? as usize;
        let codec = read_codec(&mut f)?;
        let seen_count = read_u64(&mut f)?;
        let n = read_u64(&mut f)? as usize;
        let mut entries = Vec::with_capacity(n);
        let mut class_counts = BTreeMap::new();
        for _ in 0..n {
            let e = read_entry(&mut f)?;
            *class_counts.entry(e.label).or_insert(0) += 1;
            entries.push(e);
        }
        Ok(ReplayBuffer {
            capacity,
            codec,
            policy,
            entries,
            class_counts,
            seen_count,
        })
    }
}

fn write_codec(f: &mut impl Write, codec: Codec) -> Result<()> {
    let (bits, ratio) = codec.parts();
    let tag = match codec {
        Codec::Identity => 0u8,
        Codec::Quantize { .. } => 1,
        Codec::Resize { .. } => 2,
        Codec::QuantizeResize { .. } => 3,
    };
    f.write_all(&[tag, bits])?;
    f.write_all(&ratio.to_le_bytes())?;
    Ok(())
}

fn read_codec(f: &mut impl Read) -> Result<Codec> {
    let tag = read_u8(f)?;
    let bits = read_u8(f)?;
    let mut buf = [0u8; 8];
    f.read_exact(&mut buf)?;
    let area_ratio = f64::from_le_bytes(buf);
    Ok(match tag {
        0 => Codec::Identity,
        1 => Codec::Quantize { bits },
        2 => Codec::Resize { area_ratio },
        3 => Codec::QuantizeResize { bits, area_ratio },
        b => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unknown codec tag {b}"),
            })
        }
    })
}

fn write_entry(f: &mut impl Write, e: &StoredExample) -> Result<()> {
    f.write_all(&e.label.to_le_bytes())?;
    f.write_all(&e.task_id.to_le_bytes())?;
    match e.group_id {
        Some(g) => {
            f.write_all(&[1])?;
            f.write_all(&g.to_le_bytes())?;
        }
        None => f.write_all(&[0, 0, 0, 0, 0])?,
    }
    write_codec(f, e.codec)?;
    match (&e.payload, e.shape) {
        (Payload::Vector(v), Shape::Vector { len }) => {
            f.write_all(&[0])?;
            f.write_all(&(len as u64).to_le_bytes())?;
            for x in v {
                f.write_all(&x.to_le_bytes())?;
            }
        }
        (
            Payload::Image {
                bytes,
                bits,
                stored_h,
                stored_w,
            },
            Shape::Image { h, w, c },
        ) => {
            f.write_all(&[1])?;
            for v in [h, w, c, *stored_h, *stored_w] {
                f.write_all(&(v as u32).to_le_bytes())?;
            }
            f.write_all(&[*bits])?;
            f.write_all(&(bytes.len() as u64).to_le_bytes())?;
            f.write_all(bytes)?;
        }
        _ => return Err(Error::Storage("payload/shape mismatch".into())),
    }
    Ok(())
}

fn read_entry(f: &mut impl Read) -> Result<StoredExample> {
    let mut l = [0u8; 4];
    f.read_exact(&mut l)?;
    let label = u32::from_le_bytes(l);
    f.read_exact(&mut l)?;
    let task_id = u32::from_le_bytes(l);
    let has_group = read_u8(f)? == 1;
    f.read_exact(&mut l)?;
    let group_id = if has_group {
        Some(u32::from_le_bytes(l))
    } else {
        None
    };
    let codec = read_codec(f)?;
    let kind = read_u8(f)?;
    let (payload, shape) = match kind {
        0 => {
            let len = read_u64(f)? as usize;
            let mut v = vec![0.0f64; len];
            let mut buf = [0u8; 8];
            for x in v.iter_mut() {
                f.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            (Payload::Vector(v), Shape::Vector { len })
        }
        1 => {
            let mut dims = [0usize; 5];
            for d in dims.iter_mut() {
                let mut b = [0u8; 4];
                f.read_exact(&mut b)?;
                *d = u32::from_le_bytes(b) as usize;
            }
            let bits = read_u8(f)?;
            let n = read_u64(f)? as usize;
            let mut bytes = vec![0u8; n];
            f.read_exact(&mut bytes)?;
            (
                Payload::Image {
                    bytes,
                    bits,
                    stored_h: dims[3],
                    stored_w: dims[4],
                },
                Shape::Image {
                    h: dims[0],
                    w: dims[1],
                    c: dims[2],
                },
            )
        }
        b => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unknown entry kind {b}"),
            })
        }
    };
    Ok(StoredExample {
        payload,
        codec,
        shape,
        label,
        task_id,
        group_id,
    })
}

fn read_u8(f: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    f.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
