//! Synthetic fake-media tasks.
//!
//! A "real" patch is seeded Gaussian noise passed through a circular 3x3 box
//! blur and mapped around mid-grey. A "fake" patch is the same kind of base
//! plus a generator fingerprint: a sum of 2-D cosines at fixed frequencies
//! whose phases are redrawn for every patch, optionally with extra white noise.
//! Every patch draws from its own counter-derived seed, so outputs do not
//! depend on generation order.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PATCH_SIDE: usize = 32;
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE;

/// Pixel standard deviation of the real base before clipping.
const BASE_STD: f64 = 0.15;
/// Standard deviation of a 3x3 box mean of unit Gaussians.
const BLUR_STD: f64 = 1.0 / 3.0;

/// A square grey-level patch with pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch(Vec<f64>);

impl Patch {
    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != PATCH_LEN {
            return Err(Error::config(format!(
                "patch needs {PATCH_LEN} pixels, got {}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("patch pixels must lie in [0, 1]"));
        }
        Ok(Patch(pixels))
    }

    pub fn pixels(&self) -> &[f64] {
        &self.0
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0[row * PATCH_SIDE + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub patch: Patch,
    /// 0 = real, 1 = fake.
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GanLike,
    CgLike,
    UnknownLike,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::GanLike => "gan_like",
            Family::CgLike => "cg_like",
            Family::UnknownLike => "unknown_like",
        }
    }
}

/// One periodic component of a fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub u: i32,
    pub v: i32,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub name: String,
    pub family: Family,
    pub fingerprint: Vec<Tone>,
    pub noise_level: f64,
    pub seed: u64,
    /// Periodic capture artifacts (recompression grids and the like) carried
    /// by every medium from this source, real or fake. Applied by
    /// [`make_task`]; [`synth_real`] and [`synth_fake`] ignore them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub capture: Vec<Tone>,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        for t in self.fingerprint.iter().chain(&self.capture) {
            if canonical_bin(t.u, t.v).is_none() {
                return Err(Error::config(format!(
                    "generator {}: frequency ({}, {}) outside the half-spectrum",
                    self.name, t.u, t.v
                )));
            }
            if !t.amplitude.is_finite() {
                return Err(Error::config(format!(
                    "generator {}: non-finite amplitude",
                    self.name
                )));
            }
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::config(format!(
                "generator {}: noise level must be finite and >= 0",
                self.name
            )));
        }
        Ok(())
    }

    pub fn max_amplitude(&self) -> f64 {
        self.fingerprint
            .iter()
            .map(|t| t.amplitude.abs())
            .fold(0.0, f64::max)
    }
}

/// Where a task's samples came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generator(GeneratorSpec),
    External,
    /// Union of several tasks trained as one stage.
    Merged(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub name: String,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub provenance: Provenance,
}

impl TaskDataset {
    pub fn family(&self) -> Option<Family> {
        match &self.provenance {
            Provenance::Generator(g) => Some(g.family),
            _ => None,
        }
    }

    /// Concatenates the splits of `parts` into one task.
    pub fn merge(name: impl Into<String>, parts: &[&TaskDataset]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::config("cannot merge an empty task list"));
        }
        let collect = |pick: fn(&TaskDataset) -> &Vec<Sample>| {
            parts
                .iter()
                .flat_map(|t| pick(t).iter().cloned())
                .collect::<Vec<_>>()
        };
        Ok(TaskDataset {
            name: name.into(),
            train: collect(|t| &t.train),
            val: collect(|t| &t.val),
            test: collect(|t| &t.test),
            provenance: Provenance::Merged(parts.iter().map(|t| t.name.clone()).collect()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 1024,
            val: 128,
            test: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<Vec<Vec<String>>>,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(groups) = &self.grouping {
            let flat: Vec<&String> = groups.iter().flatten().collect();
            let unique: BTreeSet<&String> = flat.iter().copied().collect();
            let names: BTreeSet<&String> = self.names.iter().collect();
            if flat.len() != self.names.len() || unique != names || groups.iter().any(|g| g.is_empty()) {
                return Err(Error::config("grouping must cover every task name exactly once"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    EasyLike,
    LongLike,
}

impl std::str::FromStr for PresetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy_like" => Ok(PresetKind::EasyLike),
            "long_like" => Ok(PresetKind::LongLike),
            other => Err(Error::config(format!("unknown preset {other:?}"))),
        }
    }
}

/// splitmix64 finalizer, used to derive independent seeds from counters.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn patch_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64))
}

/// Unclipped real-style base: blurred noise scaled to `BASE_STD` around 0.5.
fn base_field(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..PATCH_LEN).map(|_| rng.sample(StandardNormal)).collect();
    let n = PATCH_SIDE;
    let mut out = vec![0.0; PATCH_LEN];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for dr in [n - 1, 0, 1] {
                for dc in [n - 1, 0, 1] {
                    acc += noise[((r + dr) % n) * n + (c + dc) % n];
                }
            }
            out[r * n + c] = 0.5 + BASE_STD * (acc / 9.0) / BLUR_STD;
        }
    }
    out
}

fn clip_unit(values: Vec<f64>) -> Patch {
    Patch(values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

fn add_tones(px: &mut [f64], tones: &[Tone], rng: &mut ChaCha8Rng) {
    let n = PATCH_SIDE as f64;
    for tone in tones {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        if tone.amplitude == 0.0 {
            continue;
        }
        for r in 0..PATCH_SIDE {
            for c in 0..PATCH_SIDE {
                let arg = std::f64::consts::TAU
                    * (tone.u as f64 * r as f64 / n + tone.v as f64 * c as f64 / n)
                    + phase;
                px[r * PATCH_SIDE + c] += tone.amplitude * arg.cos();
            }
        }
    }
}

fn real_patch(seed: u64, index: usize, capture: &[Tone]) -> Patch {
    let mut rng = patch_rng(seed, index);
    let mut px = base_field(&mut rng);
    add_tones(&mut px, capture, &mut rng);
    clip_unit(px)
}

fn fake_patch(gen: &GeneratorSpec, seed: u64, index: usize, capture: &[Tone]) -> Patch {
    let mut rng = patch_rng(seed, index);
    let mut px = base_field(&mut rng);
    add_tones(&mut px, &gen.fingerprint, &mut rng);
    if gen.noise_level > 0.0 {
        for p in &mut px {
            let e: f64 = rng.sample(StandardNormal);
            *p += gen.noise_level * e;
        }
    }
    add_tones(&mut px, capture, &mut rng);
    clip_unit(px)
}

pub fn synth_real(count: usize, seed: u64) -> Result<Vec<Patch>> {
    if count == 0 {
        return Err(Error::config("count must be at least 1"));
    }
    Ok((0..count).map(|i| real_patch(seed, i, &[])).collect())
}

pub fn synth_fake(gen: &GeneratorSpec, count: usize, seed: u64) -> Result<Vec<Patch>> {
    gen.validate()?;
    if count == 0 {
        return Err(Error::config("count must be at least 1"));
    }
    Ok((0..count).map(|i| fake_patch(gen, seed, i, &[])).collect())
}

/// Shuffled labeled media from one source: `count / 2` fakes, the rest real,
/// capture artifacts included. Reals and fakes draw from seed streams 0 and 1
/// of `seed`, the shuffle from stream 2.
pub fn synth_stream(gen: &GeneratorSpec, count: usize, seed: u64) -> Result<Vec<Sample>> {
    gen.validate()?;
    if count == 0 {
        return Err(Error::config("count must be at least 1"));
    }
    let n_fake = count / 2;
    let n_real = count - n_fake;
    let (real_seed, fake_seed) = (mix_seed(seed, 0), mix_seed(seed, 1));
    let mut samples: Vec<Sample> = (0..n_real)
        .map(|i| Sample {
            patch: real_patch(real_seed, i, &gen.capture),
            label: 0,
        })
        .chain((0..n_fake).map(|i| Sample {
            patch: fake_patch(gen, fake_seed, i, &gen.capture),
            label: 1,
        }))
        .collect();
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 2)));
    Ok(samples)
}

/// Balanced real/fake splits, each a [`synth_stream`] on its own seed
/// stream. Without capture artifacts the reals are exactly [`synth_real`]
/// output and the fakes exactly [`synth_fake`] output for those seeds.
pub fn make_task(gen: &GeneratorSpec, sizes: SplitSizes, seed: u64) -> Result<TaskDataset> {
    gen.validate()?;
    if sizes.train < 2 || sizes.val < 2 || sizes.test < 2 {
        return Err(Error::config("every split needs at least 2 samples"));
    }
    Ok(TaskDataset {
        name: gen.name.clone(),
        train: synth_stream(gen, sizes.train, mix_seed(seed, 1))?,
        val: synth_stream(gen, sizes.val, mix_seed(seed, 2))?,
        test: synth_stream(gen, sizes.test, mix_seed(seed, 3))?,
        provenance: Provenance::Generator(gen.clone()),
    })
}

/// Index of `(u, v)` in the half-spectrum `u in 0..32, v in 0..=16`, after
/// folding conjugate-symmetric frequencies together. `None` if out of range.
pub fn canonical_bin(u: i32, v: i32) -> Option<(usize, usize)> {
    let n = PATCH_SIDE as i32;
    if u.abs() >= n || v.abs() >= n {
        return None;
    }
    let (mut u, mut v) = (u.rem_euclid(n), v.rem_euclid(n));
    if v > n / 2 || (v == 0 || v == n / 2) && u > n / 2 {
        u = (n - u) % n;
        v = (n - v) % n;
    }
    if v > n / 2 {
        return None;
    }
    Some((u as usize, v as usize))
}

fn fingerprint_spectrum(gen: &GeneratorSpec) -> Vec<f64> {
    let half = PATCH_SIDE / 2 + 1;
    let mut spec = vec![0.0; PATCH_SIDE * half];
    for t in &gen.fingerprint {
        if let Some((u, v)) = canonical_bin(t.u, t.v) {
            spec[u * half + v] += t.amplitude.abs();
        }
    }
    spec
}

/// Euclidean distance between amplitude-weighted fingerprint spectra.
pub fn similarity(a: &GeneratorSpec, b: &GeneratorSpec) -> f64 {
    fingerprint_spectrum(a)
        .iter()
        .zip(fingerprint_spectrum(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    /// Consecutive chunks in sequence order.
    PaperOrder,
    /// Seed each group with the earliest remaining task and fill it with the
    /// remaining tasks closest to the group.
    Greedy,
}

impl std::str::FromStr for GroupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_order" => Ok(GroupMode::PaperOrder),
            "greedy" => Ok(GroupMode::Greedy),
            other => Err(Error::config(format!("unknown grouping mode {other:?}"))),
        }
    }
}

/// Partition of `specs` into groups of `group_size` (the last may be smaller),
/// returned as indices into `specs`.
pub fn group_tasks(specs: &[GeneratorSpec], group_size: usize, mode: GroupMode) -> Result<Vec<Vec<usize>>> {
    if specs.is_empty() {
        return Err(Error::config("cannot group an empty task list"));
    }
    if group_size == 0 {
        return Err(Error::config("group size must be at least 1"));
    }
    match mode {
        GroupMode::PaperOrder => Ok((0..specs.len())
            .collect::<Vec<_>>()
            .chunks(group_size)
            .map(|c| c.to_vec())
            .collect()),
        GroupMode::Greedy => {
            let mut remaining: Vec<usize> = (0..specs.len()).collect();
            let mut groups = Vec::new();
            while !remaining.is_empty() {
                let mut group = vec![remaining.remove(0)];
                while group.len() < group_size && !remaining.is_empty() {
                    let (pos, _) = remaining
                        .iter()
                        .enumerate()
                        .map(|(pos, &cand)| {
                            let d = group
                                .iter()
                                .map(|&g| similarity(&specs[g], &specs[cand]))
                                .sum::<f64>()
                                / group.len() as f64;
                            (pos, d)
                        })
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .expect("remaining is non-empty");
                    group.push(remaining.remove(pos));
                }
                groups.push(group);
            }
            Ok(groups)
        }
    }
}

fn tone(u: i32, v: i32, amplitude: f64) -> Tone {
    Tone { u, v, amplitude }
}

/// Family-wide tones shared by every generator of that family.
fn family_tones(family: Family) -> Vec<Tone> {
    match family {
        Family::GanLike => vec![tone(8, 8, 0.10)],
        Family::CgLike => vec![tone(3, 9, 0.10)],
        Family::UnknownLike => vec![],
    }
}

/// In-the-wild footage is recompressed on an 8 pixel grid.
fn wild_capture() -> Vec<Tone> {
    vec![tone(8, 8, 0.10)]
}

fn preset_generator(name: &str, family: Family, own: Tone, noise_level: f64, seed: u64) -> GeneratorSpec {
    let mut fingerprint = family_tones(family);
    fingerprint.push(own);
    let capture = if family == Family::UnknownLike {
        wild_capture()
    } else {
        Vec::new()
    };
    GeneratorSpec {
        name: name.to_string(),
        family,
        fingerprint,
        noise_level,
        seed,
        capture,
    }
}

fn long_catalog() -> Vec<GeneratorSpec> {
    use Family::*;
    vec![
        preset_generator("gaugan", GanLike, tone(9, 14, 0.06), 0.0, 101),
        preset_generator("biggan", GanLike, tone(13, 7, 0.06), 0.0, 102),
        preset_generator("cyclegan", GanLike, tone(16, 10, 0.06), 0.0, 103),
        preset_generator("imle", CgLike, tone(5, 2, 0.06), 0.0, 104),
        preset_generator("faceforensics", CgLike, tone(2, 12, 0.06), 0.0, 105),
        preset_generator("crn", CgLike, tone(7, 5, 0.06), 0.0, 106),
        preset_generator("wilddeepfake", UnknownLike, tone(6, 15, 0.10), 0.08, 107),
        preset_generator("glow", CgLike, tone(4, 16, 0.06), 0.0, 108),
        preset_generator("stargan", GanLike, tone(10, 4, 0.06), 0.0, 109),
        preset_generator("stylegan", GanLike, tone(14, 13, 0.06), 0.0, 110),
        preset_generator("whichfacereal", UnknownLike, tone(12, 3, 0.10), 0.08, 111),
        preset_generator("san", CgLike, tone(1, 6, 0.06), 0.0, 112),
    ]
}

/// Fixed generator catalogs mirroring the short (7 task) and long (12 task)
/// detection sequences.
pub fn preset_sequence(kind: PresetKind) -> (Vec<GeneratorSpec>, SequenceSpec) {
    let long = long_catalog();
    let gens: Vec<GeneratorSpec> = match kind {
        PresetKind::EasyLike => long.into_iter().take(7).collect(),
        PresetKind::LongLike => long,
    };
    let names = gens.iter().map(|g| g.name.clone()).collect();
    (gens, SequenceSpec { names, grouping: None })
}

/// Reproducible description of a task catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generators: Vec<GeneratorSpec>,
    pub sequence: SequenceSpec,
    pub sizes: SplitSizes,
}

impl Manifest {
    pub fn from_preset(kind: PresetKind, sizes: SplitSizes) -> Self {
        let (generators, sequence) = preset_sequence(kind);
        Manifest {
            generators,
            sequence,
            sizes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sequence.validate()?;
        for g in &self.generators {
            g.validate()?;
        }
        for name in &self.sequence.names {
            self.generator(name)?;
        }
        Ok(())
    }

    pub fn generator(&self, name: &str) -> Result<&GeneratorSpec> {
        self.generators
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::config(format!("manifest has no generator named {name:?}")))
    }

    /// Task datasets in sequence order; task seeds derive from `seed` and
    /// each generator's own seed.
    pub fn materialize(&self, seed: u64) -> Result<Vec<TaskDataset>> {
        self.validate()?;
        self.sequence
            .names
            .iter()
            .map(|name| {
                let g = self.generator(name)?;
                make_task(g, self.sizes, mix_seed(seed, g.seed))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

fn ingest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Parses a binary (P5) 8-bit PGM into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ingest_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(ingest_err(path, format!("not a binary PGM (magic {:?})", fields[0])));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| ingest_err(path, format!("bad PGM {what} {s:?}")))
    };
    let (w, h, maxval) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(ingest_err(path, format!("only 8-bit PGM supported (maxval {maxval})")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h;
    if bytes.len() < pos + need {
        return Err(ingest_err(path, "truncated PGM raster"));
    }
    let scale = 255.0 / maxval as f64;
    let px = bytes[pos..pos + need]
        .iter()
        .map(|&b| (b as f64 * scale).round().min(255.0) as u8)
        .collect();
    Ok((w, h, px))
}

/// Encodes a patch as an 8-bit P5 PGM.
pub fn encode_pgm(patch: &Patch) -> Vec<u8> {
    let mut out = format!("P5\n{PATCH_SIDE} {PATCH_SIDE}\n255\n").into_bytes();
    out.extend(patch.pixels().iter().map(|p| (p * 255.0).round() as u8));
    out
}

/// Center-crops to a square and box-downsamples to 32x32, scaled to `[0, 1]`.
pub fn image_to_patch(w: usize, h: usize, px: &[u8], path: &Path) -> Result<Patch> {
    if w < PATCH_SIDE || h < PATCH_SIDE {
        return Err(ingest_err(path, format!("image {w}x{h} smaller than {PATCH_SIDE}x{PATCH_SIDE}")));
    }
    let side = w.min(h);
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let mut out = vec![0.0; PATCH_LEN];
    for r in 0..PATCH_SIDE {
        let (ra, rb) = (r * side / PATCH_SIDE, (r + 1) * side / PATCH_SIDE);
        for c in 0..PATCH_SIDE {
            let (ca, cb) = (c * side / PATCH_SIDE, (c + 1) * side / PATCH_SIDE);
            let mut acc = 0.0;
            for y in ra..rb {
                for x in ca..cb {
                    acc += px[(y0 + y) * w + x0 + x] as f64;
                }
            }
            out[r * PATCH_SIDE + c] = acc / ((rb - ra) * (cb - ca)) as f64 / 255.0;
        }
    }
    Patch::from_pixels(out)
}

fn load_class_dir(dir: &Path, label: u8) -> Result<Vec<Sample>> {
    let entries = fs::read_dir(dir).map_err(|e| ingest_err(dir, format!("cannot read directory: {e}")))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        if f.extension().and_then(|e| e.to_str()) != Some("pgm") {
            return Err(ingest_err(&f, "unsupported file format (expected .pgm)"));
        }
        let bytes = fs::read(&f).map_err(|e| ingest_err(&f, format!("unreadable: {e}")))?;
        let (w, h, px) = parse_pgm(&bytes, &f)?;
        out.push(Sample {
            patch: image_to_patch(w, h, &px, &f)?,
            label,
        });
    }
    if out.is_empty() {
        return Err(ingest_err(dir, "empty class folder"));
    }
    Ok(out)
}

/// Loads `<path>/{train,val,test}/{real,fake}/*.pgm` as an external task named
/// after the directory.
pub fn load_directory(path: &Path) -> Result<TaskDataset> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| ingest_err(path, "task directory has no usable name"))?
        .to_string();
    let split = |split: &str| -> Result<Vec<Sample>> {
        let dir = path.join(split);
        if !dir.is_dir() {
            return Err(ingest_err(&dir, "missing split directory"));
        }
        let mut samples = Vec::new();
        for (class, label) in [("real", 0u8), ("fake", 1u8)] {
            let cdir = dir.join(class);
            if !cdir.is_dir() {
                return Err(ingest_err(&cdir, "missing class directory"));
            }
            samples.extend(load_class_dir(&cdir, label)?);
        }
        Ok(samples)
    };
    Ok(TaskDataset {
        name,
        train: split("train")?,
        val: split("val")?,
        test: split("test")?,
        provenance: Provenance::External,
    })
}

/// Writes `task` in the layout [`load_directory`] reads.
pub fn write_directory(task: &TaskDataset, root: &Path) -> Result<PathBuf> {
    let base = root.join(&task.name);
    for (split, samples) in [("train", &task.train), ("val", &task.val), ("test", &task.test)] {
        for class in ["real", "fake"] {
            let dir = base.join(split).join(class);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for (i, s) in samples.iter().enumerate() {
            let class = if s.label == 0 { "real" } else { "fake" };
            let file = base.join(split).join(class).join(format!("{i:05}.pgm"));
            fs::write(&file, encode_pgm(&s.patch)).map_err(|e| Error::io(&file, e))?;
        }
    }
    Ok(base)
}
