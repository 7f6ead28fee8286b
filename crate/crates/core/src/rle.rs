//! Uncompressed run-length encoding of binary masks.
//!
//! Pixels are flattened row-major. `counts` alternates run lengths starting
//! with a run of zeros, which is empty when the first pixel is set.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rle {
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

pub fn encode(mask: &Mask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in mask.data() {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    counts.push(run);
    Rle {
        size: [mask.height(), mask.width()],
        counts,
    }
}

pub fn decode(rle: &Rle) -> Result<Mask> {
    let [h, w] = rle.size;
    let total = h * w;
    let mut data = Vec::with_capacity(total);
    let mut value = false;
    for &c in &rle.counts {
        if data.len() + c as usize > total {
            return Err(Error::Rle(alloc::format!(
                "runs exceed {}x{} = {} pixels",
                h,
                w,
                total
            )));
        }
        data.extend(core::iter::repeat_n(value, c as usize));
        value = !value;
    }
    if data.len() != total {
        return Err(Error::Rle(alloc::format!(
            "runs cover {} of {} pixels",
            data.len(),
            total
        )));
    }
    Mask::from_vec(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn starts_with_zero_run() {
        let m = Mask::from_vec(1, 4, vec![true, true, false, true]).unwrap();
        assert_eq!(encode(&m).counts, vec![0, 2, 1, 1]);
        let m = Mask::from_vec(2, 2, vec![false, false, true, false]).unwrap();
        assert_eq!(encode(&m).counts, vec![2, 1, 1]);
    }

    #[test]
    fn empty_mask_is_one_run() {
        let r = encode(&Mask::empty(3, 5));
        assert_eq!(r.counts, vec![15]);
        assert_eq!(r.size, [3, 5]);
    }

    #[test]
    fn rejects_bad_totals() {
        let short = Rle {
            size: [2, 2],
            counts: vec![1, 1],
        };
        assert!(decode(&short).is_err());
        let long = Rle {
            size: [2, 2],
            counts: vec![3, 2],
        };
        assert!(decode(&long).is_err());
    }
}
