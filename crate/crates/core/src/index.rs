//! Packed binary codes and Hamming-distance ranking.
//!
//! Bit `k` of a code is `1` for `b_k = +1` and `0` for `b_k = -1`. Bits are
//! stored LSB-first in little-endian `u64` words, so the byte stream of a
//! code is the little-endian bytes of its words truncated to `ceil(q / 8)`.
//! Pad bits beyond `q` are always zero.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{read_exact, read_u32};
use crate::scalar::Scalar;

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    bits: usize,
    words: Vec<u64>,
}

impl BinaryCode {
    /// Builds a code from `+-1` signs given as booleans (`true` = +1).
    pub fn from_signs(signs: &[bool]) -> Self {
        let mut words = vec![0u64; words_for(signs.len())];
        for (k, _) in signs.iter().enumerate().filter(|(_, &s)| s) {
            words[k / 64] |= 1 << (k % 64);
        }
        Self {
            bits: signs.len(),
            words,
        }
    }

    /// Builds a code from packed words, rejecting non-zero pad bits.
    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(bits) {
            return Err(Error::DimensionMismatch {
                context: "packed code words",
                expected: words_for(bits),
                actual: words.len(),
            });
        }
        let code = Self { bits, words };
        if !code.is_canonical() {
            return Err(Error::InvalidParameter("non-zero pad bits in packed code".into()));
        }
        Ok(code)
    }

    fn is_canonical(&self) -> bool {
        match (self.bits % 64, self.words.last()) {
            (0, _) | (_, None) => true,
            (r, Some(&w)) => w >> r == 0,
        }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// `true` when bit `k` encodes `+1`.
    pub fn bit(&self, k: usize) -> bool {
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.bits).map(|k| if self.bit(k) { 1 } else { -1 }).collect()
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let (r @ 1.., Some(last)) = (self.bits % 64, words.last_mut()) {
            *last &= (1u64 << r) - 1;
        }
        Self {
            bits: self.bits,
            words,
        }
    }

    fn byte_len(&self) -> usize {
        self.bits.div_ceil(8)
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.byte_len());
        out
    }

    fn from_bytes(bits: usize, bytes: &[u8]) -> Result<Self> {
        let mut words = vec![0u64; words_for(bits)];
        for (k, chunk) in bytes.chunks(8).enumerate() {
            let mut b = [0u8; 8];
            b[..chunk.len()].copy_from_slice(chunk);
            words[k] = u64::from_le_bytes(b);
        }
        Self::from_words(bits, words)
    }
}

/// `sgn(u_k)` per entry with `sgn(0) = +1`.
pub fn binarize<T: Scalar>(u: &[T]) -> BinaryCode {
    let signs: Vec<bool> = u.iter().map(|&v| v >= T::zero()).collect();
    BinaryCode::from_signs(&signs)
}

fn check_bits(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            context: "code length",
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

#[inline]
fn popcount_xor(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    check_bits(a.bits, b.bits)?;
    Ok(popcount_xor(&a.words, &b.words))
}

/// `<a, b>` over `+-1` entries, equal to `q - 2 * hamming(a, b)`.
pub fn inner_product(a: &BinaryCode, b: &BinaryCode) -> Result<i64> {
    let d = hamming(a, b)?;
    Ok(a.bits as i64 - 2 * i64::from(d))
}

/// Database entries in ascending distance, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub entries: Vec<(usize, u32)>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(id, _)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Fixed-length codes stored contiguously for linear scans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeDatabase {
    bits: usize,
    stride: usize,
    words: Vec<u64>,
}

impl CodeDatabase {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            stride: words_for(bits),
            words: Vec::new(),
        }
    }

    pub fn from_codes(codes: &[BinaryCode]) -> Result<Self> {
        let bits = codes.first().map(BinaryCode::bits).ok_or(Error::Empty("code database"))?;
        let mut db = Self::new(bits);
        for c in codes {
            db.push(c)?;
        }
        Ok(db)
    }

    pub fn push(&mut self, code: &BinaryCode) -> Result<()> {
        check_bits(self.bits, code.bits)?;
        self.words.extend_from_slice(&code.words);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        if self.stride == 0 {
            0
        } else {
            self.words.len() / self.stride
        }
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, id: usize) -> BinaryCode {
        BinaryCode {
            bits: self.bits,
            words: self.words[id * self.stride..(id + 1) * self.stride].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = BinaryCode> + '_ {
        (0..self.len()).map(|id| self.get(id))
    }

    /// Distance from `query` to every entry, in id order.
    pub fn distances(&self, query: &BinaryCode) -> Result<Vec<u32>> {
        check_bits(self.bits, query.bits)?;
        Ok(self
            .words
            .chunks_exact(self.stride.max(1))
            .map(|c| popcount_xor(c, &query.words))
            .collect())
    }

    /// Full Hamming ranking of the database against `query`.
    pub fn rank(&self, query: &BinaryCode) -> Result<RankedList> {
        self.rank_filtered(query, |_| true)
    }

    /// Ranking restricted to ids accepted by `keep`.
    ///
    /// Distances are bounded by `q`, so a counting sort over distance buckets
    /// yields the ascending-id tie-break without a comparison sort.
    pub fn rank_filtered(&self, query: &BinaryCode, keep: impl Fn(usize) -> bool) -> Result<RankedList> {
        let dist = self.distances(query)?;
        let mut counts = vec![0usize; self.bits + 2];
        for (id, &d) in dist.iter().enumerate() {
            if keep(id) {
                counts[d as usize + 1] += 1;
            }
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let total = counts[self.bits + 1];
        let mut entries = vec![(0usize, 0u32); total];
        for (id, &d) in dist.iter().enumerate() {
            if keep(id) {
                let slot = &mut counts[d as usize];
                entries[*slot] = (id, d);
                *slot += 1;
            }
        }
        Ok(RankedList { entries })
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CODES_MAGIC)?;
        w.write_all(&CODES_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.bits as u32).to_le_bytes())?;
        for code in self.iter() {
            w.write_all(&code.to_bytes())?;
        }
        w.flush()
    }

    pub fn read<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, path)?;
        if &magic != CODES_MAGIC {
            return Err(fmt(format!("bad magic {magic:?}, expected SHCD")));
        }
        let version = read_u32(&mut r, path)?;
        if version != CODES_VERSION {
            return Err(fmt(format!("unsupported code file version {version}")));
        }
        let n = read_u32(&mut r, path)? as usize;
        let bits = read_u32(&mut r, path)? as usize;
        if bits == 0 {
            return Err(fmt("code length is zero".into()));
        }
        let mut db = Self::new(bits);
        let mut buf = vec![0u8; bits.div_ceil(8)];
        for record in 0..n {
            read_exact(&mut r, &mut buf, path)?;
            let code = BinaryCode::from_bytes(bits, &buf).map_err(|e| Error::Record {
                record,
                reason: e.to_string(),
            })?;
            db.push(&code)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
            return Err(fmt("trailing bytes after last code".into()));
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file), path)
    }
}

const CODES_MAGIC: &[u8; 4] = b"SHCD";
const CODES_VERSION: u32 = 1;

/// Ranks `database` against `query`; every code must share the query's length.
pub fn rank(query: &BinaryCode, database: &[BinaryCode]) -> Result<RankedList> {
    let mut db = CodeDatabase::new(query.bits);
    for c in database {
        db.push(c)?;
    }
    db.rank(query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code(signs: &[i8]) -> BinaryCode {
        BinaryCode::from_signs(&signs.iter().map(|&s| s > 0).collect::<Vec<_>>())
    }

    fn random_code(rng: &mut impl Rng, bits: usize) -> BinaryCode {
        BinaryCode::from_signs(&(0..bits).map(|_| rng.random::<bool>()).collect::<Vec<_>>())
    }

    fn naive_hamming(a: &BinaryCode, b: &BinaryCode) -> u32 {
        a.to_signs().iter().zip(b.to_signs()).filter(|(x, y)| **x != *y).count() as u32
    }

    #[test]
    fn binarize_sign_convention() {
        let b = binarize(&[0.3f64, -0.2, 0.0]);
        assert_eq!(b.to_signs(), vec![1, -1, 1]);
        let neg = binarize(&[-0.1f64; 70]);
        assert!(neg.words().iter().all(|&w| w == 0));
        assert_eq!(neg.to_bytes(), vec![0u8; 9]);
    }

    #[test]
    fn hamming_examples() {
        let a = code(&[1, 1, -1, 1]);
        let b = code(&[1, -1, -1, -1]);
        assert_eq!(hamming(&a, &b).unwrap(), 2);
        assert_eq!(inner_product(&a, &b).unwrap(), 0);
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(inner_product(&a, &a).unwrap(), 4);
        assert_eq!(hamming(&a, &a.complement()).unwrap(), 4);
        assert_eq!(inner_product(&a, &a.complement()).unwrap(), -4);
        assert!(hamming(&a, &code(&[1, 1, 1])).is_err());
    }

    #[test]
    fn complement_keeps_padding_canonical() {
        let a = code(&[1, -1, 1]);
        let c = a.complement();
        assert_eq!(c.words(), &[0b010]);
        assert_eq!(c.to_signs(), vec![-1, 1, -1]);
    }

    #[test]
    fn rank_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let db: Vec<BinaryCode> = (0..3).map(|_| random_code(&mut rng, 24)).collect();
        let r = rank(&db[1], &db).unwrap();
        assert_eq!(r.entries[0], (1, 0));

        let mut naive: Vec<(usize, u32)> = db.iter().enumerate().map(|(i, c)| (i, naive_hamming(&db[1], c))).collect();
        naive.sort_by_key(|&(i, d)| (d, i));
        assert_eq!(r.entries, naive);

        let same = vec![code(&[1, -1]); 5];
        let r = rank(&code(&[-1, -1]), &same).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert!(r.entries.iter().all(|&(_, d)| d == 1));

        let mixed = vec![code(&[1, -1]), code(&[1, 1, 1])];
        assert!(rank(&code(&[1, 1]), &mixed).is_err());
    }

    #[test]
    fn rank_filtered_skips_ids() {
        let db = CodeDatabase::from_codes(&[code(&[1, 1]), code(&[1, -1]), code(&[1, 1])]).unwrap();
        let r = db.rank_filtered(&code(&[1, 1]), |id| id != 0).unwrap();
        assert_eq!(r.entries, vec![(2, 0), (1, 1)]);
    }

    #[test]
    fn packed_equals_naive_across_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &bits in &[12usize, 24, 36, 48, 64, 100] {
            for _ in 0..2000 {
                let a = random_code(&mut rng, bits);
                let b = random_code(&mut rng, bits);
                let d = hamming(&a, &b).unwrap();
                assert_eq!(d, naive_hamming(&a, &b));
                assert_eq!(inner_product(&a, &b).unwrap() + 2 * i64::from(d), bits as i64);
            }
        }
    }

    #[test]
    fn code_file_round_trip_and_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let codes: Vec<BinaryCode> = (0..5).map(|_| random_code(&mut rng, 12)).collect();
        let db = CodeDatabase::from_codes(&codes).unwrap();
        let mut buf = Vec::new();
        db.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 5 * 2);
        let p = Path::new("mem");
        let back = CodeDatabase::read(&buf[..], p).unwrap();
        assert_eq!(back, db);
        assert_eq!(back.get(3), codes[3]);

        assert!(CodeDatabase::read(&buf[..buf.len() - 1], p).is_err());
        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(CodeDatabase::read(&bad[..], p).is_err());
        let mut pad = buf.clone();
        pad[16 + 1] |= 0x80;
        assert!(matches!(CodeDatabase::read(&pad[..], p), Err(Error::Record { record: 0, .. })));
    }

    #[test]
    fn byte_layout_is_lsb_first() {
        let c = code(&[1, -1, -1, -1, -1, -1, -1, -1, -1, 1]);
        assert_eq!(c.to_bytes(), vec![0b0000_0001, 0b0000_0010]);
    }

    proptest! {
        #[test]
        fn binarize_round_trip(u in proptest::collection::vec(-0.99f64..0.99, 1..130)) {
            let b = binarize(&u);
            prop_assert!(b.is_canonical());
            for (s, v) in b.to_signs().iter().zip(&u) {
                prop_assert_eq!(*s > 0, *v >= 0.0);
            }
            let bytes = b.to_bytes();
            prop_assert_eq!(BinaryCode::from_bytes(u.len(), &bytes).unwrap(), b);
        }

        #[test]
        fn metric_axioms(seed in any::<u64>(), bits in 1usize..140) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_code(&mut rng, bits), random_code(&mut rng, bits), random_code(&mut rng, bits));
            prop_assert_eq!(hamming(&a, &a).unwrap(), 0);
            prop_assert_eq!(hamming(&a, &b).unwrap(), hamming(&b, &a).unwrap());
            prop_assert!(hamming(&a, &c).unwrap() <= hamming(&a, &b).unwrap() + hamming(&b, &c).unwrap());
            prop_assert!(hamming(&a, &b).unwrap() as usize <= bits);
        }
    }
}
