/// Deterministic choice stream; proptest supplies and shrinks the numbers.
pub struct Tape {
    vals: Vec<u32>,
    pos: usize,
}

impl Tape {
    pub fn new(vals: Vec<u32>) -> Self {
        Tape { vals, pos: 0 }
    }

    pub fn pick(&mut self, n: usize) -> usize {
        // past the end, continue with a fixed mixing sequence
        let v = self.vals.get(self.pos).copied().unwrap_or_else(|| {
            let x = (self.pos as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            ((x ^ (x >> 29)) >> 16) as u32
        });
        self.pos += 1;
        v as usize % n.max(1)
    }

    pub fn chance(&mut self, pct: usize) -> bool {
        self.pick(100) < pct
    }
}
