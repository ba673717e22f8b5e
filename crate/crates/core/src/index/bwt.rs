use super::sais;
use super::{IndexError, Pattern};

/// Byte stored in the BWT payload at the sentinel row. It never occurs in
/// UTF-8 text, and shard texts containing it are rejected.
pub const SENTINEL_BYTE: u8 = 0xFF;

/// Document separator inside a shard.
pub const SEPARATOR_BYTE: u8 = 0x00;

pub const DEFAULT_CHECKPOINT_INTERVAL: usize = 1024;

/// Count-only FM-index over a single shard.
///
/// The BWT is taken over `text + ⊥` where `⊥` sorts before every byte. Its
/// row is recorded in `sentinel_pos` and holds [`SENTINEL_BYTE`] in the
/// payload. `c_table[b]` is the number of BWT symbols strictly smaller than
/// `b` (the sentinel included), so `c_table[256]` is the BWT length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BwtIndex {
    pub(crate) bwt: Vec<u8>,
    pub(crate) sentinel_pos: u64,
    pub(crate) c_table: [u64; 257],
    pub(crate) checkpoint_interval: usize,
    /// `checkpoints[k * 256 + b]` = occurrences of `b` in `bwt[..k * R]`,
    /// sentinel excluded.
    pub(crate) checkpoints: Vec<u32>,
}

impl BwtIndex {
    /// Builds the index for one shard text.
    pub fn build(text: &[u8], checkpoint_interval: usize) -> Result<Self, IndexError> {
        if text.is_empty() {
            return Err(IndexError::EmptyText);
        }
        if let Some(pos) = text.iter().position(|&b| b == SENTINEL_BYTE) {
            return Err(IndexError::SentinelInText { offset: pos as u64 });
        }
        if checkpoint_interval == 0 {
            return Err(IndexError::InvalidCheckpointInterval);
        }
        if text.len() >= sais::MAX_LEN {
            return Err(IndexError::TextTooLarge { len: text.len() as u64 });
        }

        let n = text.len();
        let sa = sais::suffix_array(text, 255);

        // Row 0 is the sentinel suffix; rows 1..=n follow the suffix array.
        let mut bwt = Vec::with_capacity(n + 1);
        bwt.push(text[n - 1]);
        let mut sentinel_pos = 0u64;
        for (row, &p) in sa.iter().enumerate() {
            if p == 0 {
                sentinel_pos = row as u64 + 1;
                bwt.push(SENTINEL_BYTE);
            } else {
                bwt.push(text[p as usize - 1]);
            }
        }
        drop(sa);

        Ok(Self::from_parts(bwt, sentinel_pos, checkpoint_interval))
    }

    /// Rebuilds counts and checkpoints from a BWT payload.
    pub(crate) fn from_parts(bwt: Vec<u8>, sentinel_pos: u64, checkpoint_interval: usize) -> Self {
        let checkpoints = build_checkpoints(&bwt, sentinel_pos as usize, checkpoint_interval);
        let totals = &checkpoints[checkpoints.len() - 256..];
        let mut c_table = [0u64; 257];
        c_table[0] = 1;
        for b in 0..256 {
            c_table[b + 1] = c_table[b] + totals[b] as u64;
        }
        Self {
            bwt,
            sentinel_pos,
            c_table,
            checkpoint_interval,
            checkpoints,
        }
    }

    pub fn bwt(&self) -> &[u8] {
        &self.bwt
    }

    pub fn sentinel_position(&self) -> usize {
        self.sentinel_pos as usize
    }

    pub fn c_table(&self) -> &[u64; 257] {
        &self.c_table
    }

    pub fn checkpoint_interval(&self) -> usize {
        self.checkpoint_interval
    }

    /// Length of the indexed text, sentinel excluded.
    pub fn text_len(&self) -> usize {
        self.bwt.len() - 1
    }

    /// Occurrences of `symbol` in `bwt[..i]`, never counting the sentinel row.
    pub fn rank(&self, symbol: u8, i: usize) -> u64 {
        debug_assert!(i <= self.bwt.len());
        let r = self.checkpoint_interval;
        let b = symbol as usize;
        let k = i / r;
        let lo = k * r;
        let hi = lo + r;
        let sentinel = self.sentinel_pos as usize;

        // Scan from whichever neighbouring checkpoint is closer.
        let count = if i - lo <= r / 2 || hi > self.bwt.len() {
            let base = self.checkpoints[k * 256 + b] as u64;
            let mut c = count_byte(&self.bwt[lo..i], symbol);
            if symbol == SENTINEL_BYTE && (lo..i).contains(&sentinel) {
                c -= 1;
            }
            base + c
        } else {
            let base = self.checkpoints[(k + 1) * 256 + b] as u64;
            let mut c = count_byte(&self.bwt[i..hi], symbol);
            if symbol == SENTINEL_BYTE && (i..hi).contains(&sentinel) {
                c -= 1;
            }
            base - c
        };
        count
    }

    /// Half-open suffix-array interval of rows prefixed by `pattern`.
    fn backward_search(&self, pattern: &[u8]) -> (u64, u64) {
        let mut lo = 0u64;
        let mut hi = self.bwt.len() as u64;
        for &b in pattern.iter().rev() {
            let c = self.c_table[b as usize];
            lo = c + self.rank(b, lo as usize);
            hi = c + self.rank(b, hi as usize);
            if lo >= hi {
                return (0, 0);
            }
        }
        (lo, hi)
    }

    /// Number of (possibly overlapping) occurrences of `pattern`.
    pub fn count(&self, pattern: &Pattern) -> u64 {
        let (lo, hi) = self.backward_search(pattern.as_bytes());
        hi - lo
    }

    /// Reconstructs the indexed text by walking the LF-mapping.
    pub fn invert(&self) -> Vec<u8> {
        let n = self.text_len();
        let sentinel = self.sentinel_pos as usize;
        // occ_before[i]: occurrences of bwt[i] in bwt[..i].
        let mut seen = [0u32; 256];
        let occ_before: Vec<u32> = self
            .bwt
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                if i == sentinel {
                    return 0;
                }
                let r = seen[b as usize];
                seen[b as usize] += 1;
                r
            })
            .collect();

        let mut text = vec![0u8; n];
        let mut row = 0usize;
        for slot in text.iter_mut().rev() {
            debug_assert_ne!(row, sentinel);
            let b = self.bwt[row];
            *slot = b;
            row = self.c_table[b as usize] as usize + occ_before[row] as usize;
        }
        debug_assert_eq!(row, sentinel);
        text
    }

    /// Approximate heap footprint in bytes.
    pub fn size_in_bytes(&self) -> usize {
        self.bwt.len() + self.checkpoints.len() * 4 + std::mem::size_of::<Self>()
    }
}

fn build_checkpoints(bwt: &[u8], sentinel: usize, interval: usize) -> Vec<u32> {
    // One snapshot per multiple of `interval`, plus one for the full length.
    let blocks = bwt.len() / interval;
    let mut out = Vec::with_capacity((blocks + 2) * 256);
    let mut counts = [0u32; 256];
    for (k, chunk) in bwt.chunks(interval).enumerate() {
        out.extend_from_slice(&counts);
        for (j, &b) in chunk.iter().enumerate() {
            if k * interval + j != sentinel {
                counts[b as usize] += 1;
            }
        }
    }
    // Final snapshot holds totals for the whole BWT.
    out.extend_from_slice(&counts);
    out
}

#[inline]
fn count_byte(hay: &[u8], needle: u8) -> u64 {
    hay.iter().filter(|&&b| b == needle).count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn show(bwt: &BwtIndex) -> String {
        bwt.bwt()
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                if i == bwt.sentinel_position() {
                    '⊥'
                } else {
                    b as char
                }
            })
            .collect()
    }

    /// Sorts every rotation of `text + ⊥` and returns the last column.
    fn rotation_sort_bwt(text: &[u8]) -> String {
        // Map bytes to 1..=256 so the sentinel (0) sorts first.
        let mut s: Vec<u16> = text.iter().map(|&b| b as u16 + 1).collect();
        s.push(0);
        let n = s.len();
        let mut rots: Vec<Vec<u16>> = (0..n)
            .map(|i| s[i..].iter().chain(&s[..i]).copied().collect())
            .collect();
        rots.sort();
        rots.iter()
            .map(|r| match r[n - 1] {
                0 => '⊥',
                c => (c - 1) as u8 as char,
            })
            .collect()
    }

    fn naive_count(text: &[u8], pat: &[u8]) -> u64 {
        text.windows(pat.len()).filter(|w| *w == pat).count() as u64
    }

    fn pat(s: &[u8]) -> Pattern {
        Pattern::new(s.to_vec()).unwrap()
    }

    #[test]
    fn banana_bwt() {
        assert_eq!(rotation_sort_bwt(b"banana"), "annb⊥aa");
        let idx = BwtIndex::build(b"banana", 2).unwrap();
        assert_eq!(show(&idx), "annb⊥aa");
    }

    #[test]
    fn single_char_and_runs() {
        let idx = BwtIndex::build(b"a", 1024).unwrap();
        assert_eq!(show(&idx), "a⊥");

        let idx = BwtIndex::build(b"aaaa", 3).unwrap();
        assert_eq!(rotation_sort_bwt(b"aaaa"), "aaaa⊥");
        assert_eq!(show(&idx), "aaaa⊥");
        // one sentinel row, then four 'a' rows
        assert_eq!(idx.c_table()[b'a' as usize], 1);
        assert_eq!(idx.c_table()[b'a' as usize + 1], 5);
        assert_eq!(idx.c_table()[256], 5);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(BwtIndex::build(b"", 4), Err(IndexError::EmptyText)));
        assert!(matches!(
            BwtIndex::build(&[b'a', SENTINEL_BYTE], 4),
            Err(IndexError::SentinelInText { offset: 1 })
        ));
        assert!(matches!(
            BwtIndex::build(b"abc", 0),
            Err(IndexError::InvalidCheckpointInterval)
        ));
    }

    #[test]
    fn banana_counts() {
        let idx = BwtIndex::build(b"banana", 1024).unwrap();
        assert_eq!(naive_count(b"banana", b"ana"), 2);
        assert_eq!(idx.count(&pat(b"a")), 3);
        assert_eq!(idx.count(&pat(b"ana")), 2);
        assert_eq!(idx.count(&pat(b"z")), 0);
        assert_eq!(idx.count(&pat(b"banana")), 1);
        assert_eq!(idx.count(&pat(b"bananas")), 0);
    }

    #[test]
    fn separators_split_documents() {
        let idx = BwtIndex::build(b"ab\0ab\0b", 2).unwrap();
        assert_eq!(idx.count(&pat(b"ab")), 2);
        assert_eq!(idx.count(&pat(b"b")), 3);
    }

    #[test]
    fn round_trip_examples() {
        for t in [&b"banana"[..], b"a", b"aaaa", b"mississippi", b"\0\0x\0"] {
            for r in [1, 2, 7, 1024] {
                assert_eq!(BwtIndex::build(t, r).unwrap().invert(), t);
            }
        }
    }

    proptest! {
        #[test]
        fn rank_matches_direct_count(
            text in proptest::collection::vec(0u8..0xFF, 1..2000),
            r in 1usize..70,
            probes in proptest::collection::vec((any::<u8>(), any::<prop::sample::Index>()), 1..40),
        ) {
            let idx = BwtIndex::build(&text, r).unwrap();
            let sentinel = idx.sentinel_position();
            for (b, i) in probes {
                let i = i.index(idx.bwt().len() + 1);
                let direct = idx.bwt()[..i]
                    .iter()
                    .enumerate()
                    .filter(|&(j, &c)| c == b && j != sentinel)
                    .count() as u64;
                prop_assert_eq!(idx.rank(b, i), direct);
            }
        }

        #[test]
        fn c_table_is_cumulative(text in proptest::collection::vec(0u8..0xFF, 1..500)) {
            let idx = BwtIndex::build(&text, 16).unwrap();
            let c = idx.c_table();
            prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(c[256] as usize, idx.bwt().len());
            for b in 0..=254u8 {
                let n = text.iter().filter(|&&x| x == b).count() as u64;
                prop_assert_eq!(c[b as usize + 1] - c[b as usize], n);
            }
        }

        #[test]
        fn round_trip(text in proptest::collection::vec(0u8..0xFF, 1..3000), r in 1usize..300) {
            prop_assert_eq!(BwtIndex::build(&text, r).unwrap().invert(), text);
        }

        #[test]
        fn count_matches_scan(
            text in proptest::collection::vec(b'a'..b'e', 1..3000),
            pats in proptest::collection::vec(proptest::collection::vec(b'a'..b'f', 1..6), 1..20),
        ) {
            let idx = BwtIndex::build(&text, 64).unwrap();
            for p in pats {
                prop_assert_eq!(idx.count(&pat(&p)), naive_count(&text, &p));
            }
        }
    }
}
