//! Strongly-selective families and selectors used as transmission schedules.
//!
//! A family is a sequence of name subsets; executing it means that in the
//! `i`-th round of the execution exactly the members of set `i` transmit.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phys::Name;

/// Exhaustive verification refuses when `C(name_space, x)` exceeds this.
pub const DEFAULT_VERIFY_CAP: u128 = 100_000;
/// Random `(Z, z)` probes used above the exhaustive cap.
pub const SPOT_CHECKS: usize = 10_000;
/// Fresh seeds tried before construction gives up.
pub const BUILD_ATTEMPTS: u64 = 32;
/// Accepted union-bound failure probability for unverified ssf builds (log2).
const UNION_BOUND_LOG2: f64 = -20.0;

pub const DEFAULT_C_SSF: f64 = 8.0;
pub const DEFAULT_C_SEL: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum FamilyError {
    #[error("invalid family parameters: {0}")]
    InvalidParams(String),
    #[error("verification refused: C({name_space}, {x}) = {count} exceeds cap {cap}")]
    Guard { name_space: u32, x: u32, count: u128, cap: u128 },
    #[error("no valid family after {attempts} seeds (length {length})")]
    Exhausted { attempts: u64, length: usize },
    #[error("union bound {log2_fail:.1} (log2) too weak for unverified family of length {length}")]
    UnionBound { length: usize, log2_fail: f64 },
    #[error("element {0} outside the name space")]
    OutOfRange(Name),
    #[error("slot {slot} out of range for family of length {length}")]
    SlotOutOfRange { slot: usize, length: usize },
    #[error("family file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    Ssf { x: u32 },
    Selector { x: u32, y: u32 },
}

/// `max(1, ceil(log2 n))`.
pub fn log2_ceil(n: u64) -> u32 {
    if n <= 2 {
        1
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// An immutable family with per-name slot lists for schedule lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionFamily {
    name_space: u32,
    kind: FamilyKind,
    sets: Vec<Vec<Name>>,
    slots: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyFile {
    name_space: u32,
    kind: String,
    params: FamilyParams,
    sets: Vec<Vec<Name>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyParams {
    x: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<u32>,
}

impl SelectionFamily {
    pub fn new(name_space: u32, kind: FamilyKind, mut sets: Vec<Vec<Name>>) -> Result<Self, FamilyError> {
        let mut slots = vec![Vec::new(); name_space as usize + 1];
        for (i, set) in sets.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            for &v in set.iter() {
                if v == 0 || v > name_space {
                    return Err(FamilyError::OutOfRange(v));
                }
                slots[v as usize].push(i as u32);
            }
        }
        Ok(SelectionFamily { name_space, kind, sets, slots })
    }

    pub fn name_space(&self) -> u32 {
        self.name_space
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[Vec<Name>] {
        &self.sets
    }

    /// Whether `node` transmits in `slot` of an execution.
    pub fn scheduled(&self, node: Name, slot: usize) -> Result<bool, FamilyError> {
        if slot >= self.sets.len() {
            return Err(FamilyError::SlotOutOfRange { slot, length: self.sets.len() });
        }
        if node == 0 || node > self.name_space {
            return Err(FamilyError::OutOfRange(node));
        }
        Ok(self.sets[slot].binary_search(&node).is_ok())
    }

    /// Slots in which `node` transmits, ascending.
    pub fn slots_of(&self, node: Name) -> &[u32] {
        &self.slots[node as usize]
    }

    /// First slot `>= from` in which `node` transmits.
    pub fn next_slot(&self, node: Name, from: usize) -> Option<usize> {
        let s = &self.slots[node as usize];
        let i = s.partition_point(|&t| (t as usize) < from);
        s.get(i).map(|&t| t as usize)
    }

    fn bit_rows(&self) -> (usize, Vec<u64>) {
        let words = self.sets.len().div_ceil(64).max(1);
        let mut rows = vec![0u64; (self.name_space as usize + 1) * words];
        for (name, slots) in self.slots.iter().enumerate() {
            for &t in slots {
                rows[name * words + t as usize / 64] |= 1 << (t % 64);
            }
        }
        (words, rows)
    }

    pub fn to_json(&self) -> String {
        let (kind, params) = match self.kind {
            FamilyKind::Ssf { x } => ("ssf", FamilyParams { x, y: None }),
            FamilyKind::Selector { x, y } => ("selector", FamilyParams { x, y: Some(y) }),
        };
        let file = FamilyFile { name_space: self.name_space, kind: kind.into(), params, sets: self.sets.clone() };
        serde_json::to_string(&file).expect("family serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FamilyError> {
        let f: FamilyFile = serde_json::from_str(text).map_err(|e| FamilyError::Io(e.to_string()))?;
        let kind = match (f.kind.as_str(), f.params.y) {
            ("ssf", None) => FamilyKind::Ssf { x: f.params.x },
            ("selector", Some(y)) => FamilyKind::Selector { x: f.params.x, y },
            (k, _) => return Err(FamilyError::Io(format!("bad kind/params combination `{k}`"))),
        };
        SelectionFamily::new(f.name_space, kind, f.sets)
    }
}

/// Exhaustive subset enumeration over slot bit rows.
struct Enumerator<'a> {
    n: usize,
    words: usize,
    rows: &'a [u64],
}

impl Enumerator<'_> {
    fn row(&self, name: usize) -> &[u64] {
        &self.rows[name * self.words..(name + 1) * self.words]
    }

    fn isolated(&self, z: usize, mask: &[u64]) -> bool {
        self.row(z).iter().zip(mask).any(|(a, m)| a & !m != 0)
    }

    /// Calls `f` on every subset of `[1, n]` of exactly `size` elements and
    /// stops early once `f` returns false.
    fn subsets(&self, size: usize, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        let mut chosen = Vec::with_capacity(size);
        self.rec(1, size, &mut chosen, f)
    }

    fn rec(&self, start: usize, size: usize, chosen: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if chosen.len() == size {
            return f(chosen);
        }
        let remaining = size - chosen.len();
        for v in start..=(self.n + 1 - remaining) {
            chosen.push(v);
            let go = self.rec(v + 1, size, chosen, f);
            chosen.pop();
            if !go {
                return false;
            }
        }
        true
    }

    /// Number of members of `set` isolated from the union of the others.
    fn count_isolated(&self, set: &[usize], scratch: &mut [u64]) -> usize {
        let mut selected = 0;
        for &z in set {
            scratch.iter_mut().for_each(|w| *w = 0);
            for &o in set {
                if o != z {
                    for (w, r) in scratch.iter_mut().zip(self.row(o)) {
                        *w |= r;
                    }
                }
            }
            if self.isolated(z, scratch) {
                selected += 1;
            }
        }
        selected
    }
}

fn guard(name_space: u32, x: u32, cap: u128) -> Result<(), FamilyError> {
    let count = binomial(name_space as u64, x as u64);
    if count > cap {
        return Err(FamilyError::Guard { name_space, x, count, cap });
    }
    Ok(())
}

/// Exhaustive ssf check. Checking sets of size exactly `min(x, N)` suffices,
/// since isolating `z` within a set also isolates it within every subset.
pub fn verify_ssf_capped(family: &SelectionFamily, x: u32, cap: u128) -> Result<bool, FamilyError> {
    let n = family.name_space;
    if x == 0 {
        return Err(FamilyError::InvalidParams("x must be positive".into()));
    }
    let size = x.min(n);
    guard(n, size, cap)?;
    let (words, rows) = family.bit_rows();
    let e = Enumerator { n: n as usize, words, rows: &rows };
    let mut scratch = vec![0u64; words];
    Ok(e.subsets(size as usize, &mut |set| e.count_isolated(set, &mut scratch) == set.len()))
}

pub fn verify_ssf(family: &SelectionFamily, x: u32) -> Result<bool, FamilyError> {
    verify_ssf_capped(family, x, DEFAULT_VERIFY_CAP)
}

/// Exhaustive selector check over all `x`-subsets.
pub fn verify_selector_capped(family: &SelectionFamily, x: u32, y: u32, cap: u128) -> Result<bool, FamilyError> {
    let n = family.name_space;
    if !(1 <= y && y <= x && x <= n) {
        return Err(FamilyError::InvalidParams(format!("require 1 <= y <= x <= N, got x={x} y={y} N={n}")));
    }
    guard(n, x, cap)?;
    let (words, rows) = family.bit_rows();
    let e = Enumerator { n: n as usize, words, rows: &rows };
    let mut scratch = vec![0u64; words];
    Ok(e.subsets(x as usize, &mut |set| e.count_isolated(set, &mut scratch) >= y as usize))
}

pub fn verify_selector(family: &SelectionFamily, x: u32, y: u32) -> Result<bool, FamilyError> {
    verify_selector_capped(family, x, y, DEFAULT_VERIFY_CAP)
}

/// Probe `checks` random `(Z, z)` pairs with `|Z| = min(x, N)`; returns
/// the number of probes where `z` was not isolated.
pub fn spot_check(family: &SelectionFamily, x: u32, checks: usize, seed: u64) -> usize {
    let n = family.name_space as usize;
    let size = (x as usize).min(n);
    if size == 0 {
        return 0;
    }
    let (words, rows) = family.bit_rows();
    let e = Enumerator { n, words, rows: &rows };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut mask = vec![0u64; words];
    for _ in 0..checks {
        let set = rand::seq::index::sample(&mut rng, n, size);
        let z = set.index(0) + 1;
        mask.iter_mut().for_each(|w| *w = 0);
        for o in set.iter().skip(1) {
            for (w, r) in mask.iter_mut().zip(e.row(o + 1)) {
                *w |= r;
            }
        }
        if !e.isolated(z, &mask) {
            failures += 1;
        }
    }
    failures
}

/// Target length of a randomized family before the singleton fallback.
pub fn random_length(kind: FamilyKind, name_space: u32, constant: f64) -> usize {
    let l = log2_ceil(name_space as u64) as f64;
    let len = match kind {
        FamilyKind::Ssf { x } => constant * (x as f64).powi(2) * l,
        FamilyKind::Selector { x, .. } => constant * x as f64 * l,
    };
    len.ceil().max(1.0) as usize
}

fn singletons(name_space: u32, kind: FamilyKind) -> SelectionFamily {
    SelectionFamily::new(name_space, kind, (1..=name_space).map(|v| vec![v]).collect()).expect("in range")
}

fn random_family(name_space: u32, kind: FamilyKind, length: usize, seed: u64, attempt: u64) -> SelectionFamily {
    let x = match kind {
        FamilyKind::Ssf { x } | FamilyKind::Selector { x, .. } => x,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt);
    let p = 1.0 / x as f64;
    let sets = (0..length)
        .map(|_| (1..=name_space).filter(|_| rng.gen_bool(p)).collect())
        .collect();
    SelectionFamily::new(name_space, kind, sets).expect("in range")
}

fn check_params(name_space: u32, kind: FamilyKind) -> Result<(), FamilyError> {
    let ok = match kind {
        FamilyKind::Ssf { x } => 1 <= x && x <= name_space,
        FamilyKind::Selector { x, y } => 1 <= y && y <= x && x <= name_space,
    };
    if !ok {
        return Err(FamilyError::InvalidParams(format!("{kind:?} over N={name_space}")));
    }
    Ok(())
}

/// log2 of the union bound on the probability that a random family of the
/// given length fails to be an `(N, x)`-ssf.
pub fn ssf_union_bound_log2(name_space: u32, x: u32, length: usize) -> f64 {
    let p = 1.0 / x as f64;
    let hit = p * (1.0 - p).powi(x as i32 - 1);
    let ln = (x as f64).ln() + ln_binomial(name_space as u64, x as u64) + length as f64 * (1.0 - hit).ln();
    ln / std::f64::consts::LN_2
}

/// Build a family of the requested kind.
///
/// `x = 1` yields the single full set and `x = N` the singleton schedule.
/// Otherwise sets are drawn at random and verified exhaustively (reseeding
/// on failure) when the guard allows it, and spot checked above the guard.
pub fn build(name_space: u32, kind: FamilyKind, seed: u64, constant: f64) -> Result<SelectionFamily, FamilyError> {
    check_params(name_space, kind)?;
    let (x, y) = match kind {
        FamilyKind::Ssf { x } => (x, x),
        FamilyKind::Selector { x, y } => (x, y),
    };
    if x == 1 {
        return SelectionFamily::new(name_space, kind, vec![(1..=name_space).collect()]);
    }
    if x == name_space {
        return Ok(singletons(name_space, kind));
    }
    let length = random_length(kind, name_space, constant);
    let exhaustive = binomial(name_space as u64, x as u64) <= DEFAULT_VERIFY_CAP;
    if !exhaustive {
        if let FamilyKind::Ssf { .. } = kind {
            let log2_fail = ssf_union_bound_log2(name_space, x, length);
            if log2_fail >= UNION_BOUND_LOG2 {
                return Err(FamilyError::UnionBound { length, log2_fail });
            }
        }
    }
    for attempt in 0..BUILD_ATTEMPTS {
        let fam = random_family(name_space, kind, length, seed, attempt);
        let ok = if exhaustive {
            match kind {
                FamilyKind::Ssf { .. } => verify_ssf(&fam, x)?,
                FamilyKind::Selector { .. } => verify_selector(&fam, x, y)?,
            }
        } else {
            let probes = spot_check(&fam, x, SPOT_CHECKS, seed ^ 0x5eed ^ attempt);
            match kind {
                FamilyKind::Ssf { .. } => probes == 0,
                // Selectors only need y of x members isolated; the probe
                // failure rate must stay within that allowance.
                FamilyKind::Selector { .. } => {
                    (probes as f64) / (SPOT_CHECKS as f64) <= (x - y) as f64 / x as f64
                }
            }
        };
        if ok {
            return Ok(fam);
        }
    }
    Err(FamilyError::Exhausted { attempts: BUILD_ATTEMPTS, length })
}

pub fn build_ssf(name_space: u32, x: u32, seed: u64) -> Result<SelectionFamily, FamilyError> {
    build(name_space, FamilyKind::Ssf { x }, seed, DEFAULT_C_SSF)
}

pub fn build_selector(name_space: u32, x: u32, y: u32, seed: u64) -> Result<SelectionFamily, FamilyError> {
    build(name_space, FamilyKind::Selector { x, y }, seed, DEFAULT_C_SEL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    name_space: u32,
    kind: FamilyKind,
    seed: u64,
    constant_bits: u64,
}

type Slot = Arc<OnceLock<Result<Arc<SelectionFamily>, String>>>;

fn cache() -> &'static Mutex<HashMap<CacheKey, Slot>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Slot>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn disk_path(dir: &Path, key: &CacheKey) -> PathBuf {
    let kind = match key.kind {
        FamilyKind::Ssf { x } => format!("ssf-{x}"),
        FamilyKind::Selector { x, y } => format!("sel-{x}-{y}"),
    };
    dir.join(format!("{}-{kind}-{}-{:016x}.json", key.name_space, key.seed, key.constant_bits))
}

fn build_with_disk(key: &CacheKey, constant: f64) -> Result<SelectionFamily, FamilyError> {
    let dir = std::env::var_os("BAREBONES_CACHE_DIR").map(PathBuf::from);
    if let Some(dir) = &dir {
        let path = disk_path(dir, key);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(fam) = SelectionFamily::from_json(&text) {
                if fam.kind == key.kind && fam.name_space == key.name_space {
                    return Ok(fam);
                }
            }
        }
    }
    let fam = build(key.name_space, key.kind, key.seed, constant)?;
    if let Some(dir) = &dir {
        // A failed write only costs a rebuild next time.
        if std::fs::create_dir_all(dir).is_ok() {
            let path = disk_path(dir, key);
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            if std::fs::write(&tmp, fam.to_json()).is_ok() {
                let _ = std::fs::rename(&tmp, &path);
            }
        }
    }
    Ok(fam)
}

/// Shared, build-once lookup. Concurrent callers asking for the same key
/// block on a single construction.
pub fn cached(name_space: u32, kind: FamilyKind, seed: u64, constant: f64) -> Result<Arc<SelectionFamily>, FamilyError> {
    let key = CacheKey { name_space, kind, seed, constant_bits: constant.to_bits() };
    let slot = cache().lock().expect("family cache poisoned").entry(key).or_default().clone();
    slot.get_or_init(|| build_with_disk(&key, constant).map(Arc::new).map_err(|e| e.to_string()))
        .clone()
        .map_err(FamilyError::InvalidParams)
}
