//! Bitmask helpers. Bit `i` of a [`Mask`] stands for the `i`-th contract of a
//! college domain in global contract order.

pub type Mask = u64;

/// Largest domain a mask can index.
pub const MAX_BITS: usize = 63;

#[inline]
pub fn bit(i: usize) -> Mask {
    1 << i
}

#[inline]
pub fn full(n: usize) -> Mask {
    if n == 0 {
        0
    } else {
        Mask::MAX >> (64 - n)
    }
}

#[inline]
pub fn contains(m: Mask, i: usize) -> bool {
    m & bit(i) != 0
}

/// Indices of set bits, ascending.
pub fn bits(mut m: Mask) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(i)
        }
    })
}

/// All submasks of `m`, in ascending numeric order, including `0` and `m`.
pub fn submasks(m: Mask) -> impl Iterator<Item = Mask> {
    let mut next = Some(0u64);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == m {
            None
        } else {
            Some(((cur | !m).wrapping_add(1)) & m)
        };
        Some(cur)
    })
}

#[inline]
pub fn count(m: Mask) -> usize {
    m.count_ones() as usize
}

/// Compares two masks as sorted index lists, lexicographically, with a proper
/// prefix ordered first.
pub fn lex_cmp(a: Mask, b: Mask) -> std::cmp::Ordering {
    let mut ia = bits(a);
    let mut ib = bits(b);
    loop {
        match (ia.next(), ib.next()) {
            (None, None) => return std::cmp::Ordering::Equal,
            (None, Some(_)) => return std::cmp::Ordering::Less,
            (Some(_), None) => return std::cmp::Ordering::Greater,
            (Some(x), Some(y)) if x != y => return x.cmp(&y),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn submask_enumeration_is_complete() {
        let m = 0b1011_0100;
        let subs: Vec<_> = submasks(m).collect();
        assert_eq!(subs.len(), 16);
        assert!(subs.windows(2).all(|w| w[0] < w[1]));
        assert!(subs.iter().all(|s| s & !m == 0));
        assert_eq!(submasks(0).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn lex_order_puts_prefixes_first() {
        use std::cmp::Ordering::*;
        assert_eq!(lex_cmp(0b001, 0b011), Less);
        assert_eq!(lex_cmp(0b011, 0b101), Less);
        assert_eq!(lex_cmp(0b101, 0b010), Less);
        assert_eq!(lex_cmp(0, 0b1), Less);
        assert_eq!(full(3), 0b111);
        assert_eq!(full(0), 0);
    }
}
