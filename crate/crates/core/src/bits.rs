//! MSB-first bit packing.

/// Appends fields of up to 32 bits, most significant bit first.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    pending: u32,
}

impl BitWriter {
    pub fn with_capacity_bits(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            acc: 0,
            pending: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32);
        debug_assert!(width == 32 || value >> width == 0);
        if width == 0 {
            return;
        }
        self.acc = (self.acc << width) | value as u64;
        self.pending += width;
        while self.pending >= 8 {
            self.pending -= 8;
            self.bytes.push((self.acc >> self.pending) as u8);
        }
        self.acc &= (1u64 << self.pending) - 1;
    }

    /// Zero-pads to a byte boundary and returns the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        if self.pending > 0 {
            self.bytes.push((self.acc << (8 - self.pending)) as u8);
        }
        self.bytes
    }
}

/// Reads fields written by [`BitWriter`].
#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Caller guarantees the section holds enough bits.
    #[inline]
    pub fn read(&mut self, width: u32) -> u32 {
        let mut v = 0u32;
        let mut left = width;
        while left > 0 {
            let byte = self.bytes[self.pos / 8];
            let offset = (self.pos % 8) as u32;
            let take = left.min(8 - offset);
            let bits = (byte >> (8 - offset - take)) & ((1u16 << take) - 1) as u8;
            v = (v << take) | bits as u32;
            self.pos += take as usize;
            left -= take;
        }
        v
    }

    /// True when every bit after the cursor is zero.
    pub fn rest_is_zero(&self) -> bool {
        let byte = self.pos / 8;
        let offset = self.pos % 8;
        if offset != 0 && self.bytes[byte] & (0xffu8 >> offset) != 0 {
            return false;
        }
        let next = self.pos.div_ceil(8);
        self.bytes[next..].iter().all(|&b| b == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn packs_msb_first() {
        let mut w = BitWriter::default();
        for nib in [0b0110, 0b1001, 0b0010, 0b0000] {
            w.push(nib, 4);
        }
        assert_eq!(w.finish(), vec![0x69, 0x20]);

        let mut w = BitWriter::default();
        w.push(0b100, 3);
        assert_eq!(w.finish(), vec![0x80]);
    }

    proptest! {
        #[test]
        fn round_trip(fields in prop::collection::vec((any::<u32>(), 0u32..=32), 0..64)) {
            let fields: Vec<(u32, u32)> = fields
                .into_iter()
                .map(|(v, w)| (if w == 32 { v } else { v & ((1u32 << w) - 1) }, w))
                .collect();
            let mut w = BitWriter::default();
            for &(v, n) in &fields {
                w.push(v, n);
            }
            let total: u32 = fields.iter().map(|f| f.1).sum();
            let bytes = w.finish();
            prop_assert_eq!(bytes.len(), (total as usize).div_ceil(8));
            let mut r = BitReader::new(&bytes);
            for &(v, n) in &fields {
                prop_assert_eq!(r.read(n), v);
            }
            prop_assert!(r.rest_is_zero());
        }
    }
}
