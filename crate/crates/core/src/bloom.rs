//! Blocked (split-block) Bloom filter.
//!
//! Each key maps to one 256-bit block, viewed as eight 32-bit lanes, and
//! sets one bit per lane. The upper half of the key hash selects the block,
//! the lower half is multiplied by eight odd salts to pick the lane bits.
//! The filter is sized by evaluating the blocked false-positive rate
//! (Poisson block loads) and taking the fewest blocks meeting the target.

use crate::relstore::{Relation, SelectionVector};

pub const DEFAULT_TARGET_FPR: f64 = 0.02;
pub const DEFAULT_HASH_SEED: u64 = 0x5bd1_e995_2a3c_6f01;

const LANES: usize = 8;
const LANE_BITS: u32 = 32;
const BLOCK_BITS: usize = LANES * LANE_BITS as usize;

// parquet split-block salts
const SALT: [u32; LANES] = [
    0x47b6_137b,
    0x4497_4d91,
    0x8824_ad5b,
    0xa2b7_289d,
    0x7054_95c7,
    0x2df1_424b,
    0x9efc_4947,
    0x5c6b_fb31,
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BloomError {
    #[error("bit vector has {bits} entries but the base selection has {base}")]
    LengthMismatch { bits: usize, base: usize },
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded, order-sensitive hash of a composite key.
#[inline]
pub fn hash_key(seed: u64, key: &[i64]) -> u64 {
    let mut acc = mix64(seed);
    for &v in key {
        acc = mix64(acc.rotate_left(23) ^ mix64((v as u64) ^ seed));
    }
    acc
}

/// Hashes the composite key `cols` of each physical row in `rows`.
pub fn hash_rows(seed: u64, rel: &Relation, rows: &[usize], cols: &[usize]) -> Vec<u64> {
    let mut acc = vec![mix64(seed); rows.len()];
    for &c in cols {
        let data = rel.column(c);
        for (h, &r) in acc.iter_mut().zip(rows) {
            *h = mix64(h.rotate_left(23) ^ mix64((data[r] as u64) ^ seed));
        }
    }
    acc
}

/// Expected false-positive rate of `num_blocks` blocks holding `num_keys` keys.
pub fn blocked_fpr(num_keys: usize, num_blocks: usize) -> f64 {
    if num_keys == 0 {
        return 0.0;
    }
    let lambda = num_keys as f64 / num_blocks as f64;
    let miss = 1.0 - 1.0 / LANE_BITS as f64;
    let limit = (lambda + 12.0 * lambda.sqrt() + 32.0).ceil() as usize;
    // Poisson pmf built recursively from p(0) = e^-λ; for large λ start in
    // log space to avoid underflow.
    let mut total = 0.0;
    let mut log_p = -lambda;
    for i in 0..=limit {
        if i > 0 {
            log_p += lambda.ln() - (i as f64).ln();
        }
        let inner = (1.0 - miss.powi(i as i32)).powi(LANES as i32);
        total += log_p.exp() * inner;
    }
    total
}

/// Fewest blocks whose expected FPR at `num_keys` is at most `target`.
pub fn blocks_for(num_keys: usize, target: f64) -> usize {
    assert!(target > 0.0 && target < 1.0, "target FPR must be in (0, 1)");
    if num_keys == 0 {
        return 1;
    }
    let (mut lo, mut hi) = (1usize, num_keys.div_ceil(4).max(1));
    while blocked_fpr(num_keys, hi) > target {
        hi *= 2;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if blocked_fpr(num_keys, mid) <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockedBloomFilter {
    blocks: Vec<[u32; LANES]>,
    num_keys: usize,
    target_fpr_bits: u64,
    seed: u64,
}

impl BlockedBloomFilter {
    /// Empty filter sized for `num_keys` insertions.
    pub fn with_capacity(num_keys: usize, target_fpr: f64, seed: u64) -> Self {
        BlockedBloomFilter {
            blocks: vec![[0; LANES]; blocks_for(num_keys, target_fpr)],
            num_keys,
            target_fpr_bits: target_fpr.to_bits(),
            seed,
        }
    }

    pub fn build<K: AsRef<[i64]>>(keys: &[K], target_fpr: f64, seed: u64) -> Self {
        let mut f = BlockedBloomFilter::with_capacity(keys.len(), target_fpr, seed);
        for k in keys {
            f.insert(k.as_ref());
        }
        f
    }

    /// Filter over the visible rows of `rel` keyed by columns `cols`.
    pub fn from_relation(rel: &Relation, cols: &[usize], target_fpr: f64, seed: u64) -> Self {
        let mut f = BlockedBloomFilter::with_capacity(rel.visible_count(), target_fpr, seed);
        for batch in rel.batches(crate::relstore::DEFAULT_BATCH_SIZE) {
            for h in hash_rows(seed, rel, batch.rows(), cols) {
                f.insert_hash(h);
            }
        }
        f
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_keys(&self) -> usize {
        self.num_keys
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn target_fpr(&self) -> f64 {
        f64::from_bits(self.target_fpr_bits)
    }

    pub fn bits_per_key(&self) -> f64 {
        (self.blocks.len() * BLOCK_BITS) as f64 / self.num_keys.max(1) as f64
    }

    /// Model FPR at the sized key count.
    pub fn estimated_fpr(&self) -> f64 {
        blocked_fpr(self.num_keys, self.blocks.len())
    }

    #[inline]
    fn block_index(&self, hash: u64) -> usize {
        (((hash >> 32) * self.blocks.len() as u64) >> 32) as usize
    }

    #[inline]
    fn mask(hash: u64) -> [u32; LANES] {
        let key = hash as u32;
        let mut m = [0u32; LANES];
        for (lane, salt) in m.iter_mut().zip(SALT) {
            *lane = 1 << (key.wrapping_mul(salt) >> 27);
        }
        m
    }

    #[inline]
    pub fn insert_hash(&mut self, hash: u64) {
        let b = self.block_index(hash);
        let m = Self::mask(hash);
        for (lane, bit) in self.blocks[b].iter_mut().zip(m) {
            *lane |= bit;
        }
    }

    #[inline]
    pub fn contains_hash(&self, hash: u64) -> bool {
        let block = &self.blocks[self.block_index(hash)];
        let m = Self::mask(hash);
        block.iter().zip(m).all(|(lane, bit)| lane & bit != 0)
    }

    pub fn insert(&mut self, key: &[i64]) {
        self.insert_hash(hash_key(self.seed, key));
    }

    pub fn contains(&self, key: &[i64]) -> bool {
        self.contains_hash(hash_key(self.seed, key))
    }

    pub fn probe_hashes(&self, hashes: &[u64]) -> BitVector {
        let mut bits = BitVector::zeros(hashes.len());
        for (i, &h) in hashes.iter().enumerate() {
            if self.contains_hash(h) {
                bits.set(i);
            }
        }
        bits
    }

    pub fn probe_batch<K: AsRef<[i64]>>(&self, keys: &[K]) -> BitVector {
        let hashes: Vec<u64> = keys
            .iter()
            .map(|k| hash_key(self.seed, k.as_ref()))
            .collect();
        self.probe_hashes(&hashes)
    }
}

/// Filter over `keys` with the default 2% target and default seed.
pub fn bf_build<K: AsRef<[i64]>>(keys: &[K]) -> BlockedBloomFilter {
    BlockedBloomFilter::build(keys, DEFAULT_TARGET_FPR, DEFAULT_HASH_SEED)
}

pub fn bf_probe_batch<K: AsRef<[i64]>>(f: &BlockedBloomFilter, keys: &[K]) -> BitVector {
    f.probe_batch(keys)
}

/// Packed probe result, one bit per probed row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = BitVector::zeros(bits.len());
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            v.set(i);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Keeps the positions of `base` whose bit is set; `None` means `0..len`.
pub fn bits_to_selection(
    bits: &BitVector,
    base: Option<&[usize]>,
) -> Result<SelectionVector, BloomError> {
    if let Some(base) = base {
        if base.len() != bits.len() {
            return Err(BloomError::LengthMismatch {
                bits: bits.len(),
                base: base.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(bits.count_ones());
    for (wi, &word) in bits.words.iter().enumerate() {
        let mut w = word;
        while w != 0 {
            let i = wi * 64 + w.trailing_zeros() as usize;
            out.push(base.map_or(i, |b| b[i]));
            w &= w - 1;
        }
    }
    Ok(SelectionVector::new(out).expect("base positions are increasing"))
}
