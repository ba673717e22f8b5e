//! Suffix array construction by induced sorting (SA-IS).
//!
//! The input string carries no explicit terminator; the algorithm treats the
//! end of the string as a virtual sentinel smaller than every symbol. Symbols
//! must lie in `0..=upper`. Positions are stored as `u32`, so inputs are
//! limited to `u32::MAX - 1` symbols.

const NAIVE_THRESHOLD: usize = 10;

/// Symbol types accepted by [`suffix_array`].
pub trait Symbol: Copy + Ord {
    fn rank(self) -> usize;
}

impl Symbol for u8 {
    #[inline]
    fn rank(self) -> usize {
        self as usize
    }
}

impl Symbol for u32 {
    #[inline]
    fn rank(self) -> usize {
        self as usize
    }
}

/// Largest input length supported by the `u32` position representation.
pub const MAX_LEN: usize = (u32::MAX - 1) as usize;

/// Computes the suffix array of `s`, whose symbols are all `<= upper`.
pub fn suffix_array<T: Symbol>(s: &[T], upper: usize) -> Vec<u32> {
    assert!(s.len() <= MAX_LEN, "input too long for u32 suffix array");
    sa_is(s, upper)
}

fn sa_naive<T: Symbol>(s: &[T]) -> Vec<u32> {
    let mut sa: Vec<u32> = (0..s.len() as u32).collect();
    sa.sort_by(|&a, &b| s[a as usize..].cmp(&s[b as usize..]));
    sa
}

fn sa_is<T: Symbol>(s: &[T], upper: usize) -> Vec<u32> {
    let n = s.len();
    match n {
        0 => return Vec::new(),
        1 => return vec![0],
        2 => return if s[0] < s[1] { vec![0, 1] } else { vec![1, 0] },
        _ => {}
    }
    if n < NAIVE_THRESHOLD {
        return sa_naive(s);
    }

    // ls[i]: suffix i is S-type. The last suffix is L-type relative to the
    // virtual sentinel.
    let mut ls = vec![false; n];
    for i in (0..n - 1).rev() {
        ls[i] = if s[i] == s[i + 1] {
            ls[i + 1]
        } else {
            s[i] < s[i + 1]
        };
    }

    // sum_l[c]: start of bucket c; sum_s[c]: start of the S-part of bucket c.
    let mut sum_l = vec![0u32; upper + 2];
    let mut sum_s = vec![0u32; upper + 2];
    for i in 0..n {
        if !ls[i] {
            sum_s[s[i].rank()] += 1;
        } else {
            sum_l[s[i].rank() + 1] += 1;
        }
    }
    for i in 0..=upper {
        sum_s[i] += sum_l[i];
        if i < upper {
            sum_l[i + 1] += sum_s[i];
        }
    }

    // Values in `sa` are 1-based during induction; 0 marks an empty slot.
    let mut sa = vec![0u32; n];
    let mut buf = vec![0u32; upper + 2];
    let induce = |sa: &mut [u32], buf: &mut [u32], lms: &[u32]| {
        sa.fill(0);
        buf.copy_from_slice(&sum_s);
        for &d in lms {
            let d = d as usize;
            if d == n {
                continue;
            }
            let c = s[d].rank();
            let slot = buf[c] as usize;
            buf[c] += 1;
            sa[slot] = d as u32 + 1;
        }
        buf.copy_from_slice(&sum_l);
        let c = s[n - 1].rank();
        let slot = buf[c] as usize;
        buf[c] += 1;
        sa[slot] = n as u32;
        for i in 0..n {
            let v = sa[i] as usize;
            if v >= 2 && !ls[v - 2] {
                let c = s[v - 2].rank();
                let slot = buf[c] as usize;
                buf[c] += 1;
                sa[slot] = (v - 1) as u32;
            }
        }
        buf.copy_from_slice(&sum_l);
        for i in (0..n).rev() {
            let v = sa[i] as usize;
            if v >= 2 && ls[v - 2] {
                let c = s[v - 2].rank() + 1;
                buf[c] -= 1;
                sa[buf[c] as usize] = (v - 1) as u32;
            }
        }
    };

    // lms_map[i]: 1-based ordinal of LMS position i, or 0.
    let mut lms_map = vec![0u32; n + 1];
    let mut lms = Vec::new();
    for i in 1..n {
        if !ls[i - 1] && ls[i] {
            lms.push(i as u32);
            lms_map[i] = lms.len() as u32;
        }
    }
    let m = lms.len();
    induce(&mut sa, &mut buf, &lms);

    if m > 0 {
        let mut sorted_lms = Vec::with_capacity(m);
        for &v in &sa {
            let p = v as usize - 1;
            if lms_map[p] != 0 {
                sorted_lms.push(p as u32);
            }
        }
        let mut rec_s = vec![0u32; m];
        let mut rec_upper = 0u32;
        rec_s[lms_map[sorted_lms[0] as usize] as usize - 1] = 0;
        for i in 1..m {
            let mut l = sorted_lms[i - 1] as usize;
            let mut r = sorted_lms[i] as usize;
            let end_l = if (lms_map[l] as usize) < m {
                lms[lms_map[l] as usize] as usize
            } else {
                n
            };
            let end_r = if (lms_map[r] as usize) < m {
                lms[lms_map[r] as usize] as usize
            } else {
                n
            };
            let same = if end_l - l != end_r - r {
                false
            } else {
                while l < end_l && s[l] == s[r] {
                    l += 1;
                    r += 1;
                }
                l != n && s[l] == s[r]
            };
            if !same {
                rec_upper += 1;
            }
            rec_s[lms_map[sorted_lms[i] as usize] as usize - 1] = rec_upper;
        }
        drop(lms_map);

        let rec_sa = sa_is(&rec_s, rec_upper as usize);
        drop(rec_s);
        for (slot, &r) in sorted_lms.iter_mut().zip(&rec_sa) {
            *slot = lms[r as usize];
        }
        induce(&mut sa, &mut buf, &sorted_lms);
    }

    for v in sa.iter_mut() {
        *v -= 1;
    }
    sa
}
