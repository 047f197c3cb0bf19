//! Truncated spin ⊗ Fock Hilbert-space layout.
//!
//! Basis ordering is spin ⊗ mode-y ⊗ mode-x for two-mode configs and
//! spin ⊗ mode for single-mode configs; the spin factor (when present) is
//! leftmost with index 0 = |↓⟩. A flat basis index decomposes as
//! `i = s·fock^modes + n_y·fock + n_x` (two modes) or `i = s·fock + n`.

use crate::error::{GkpError, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct HilbertConfig {
    pub fock_truncation: usize,
    pub mode_count: usize,
    pub include_spin: bool,
}

impl HilbertConfig {
    pub fn new(fock_truncation: usize, mode_count: usize, include_spin: bool) -> Result<Self> {
        if fock_truncation < 2 {
            return Err(GkpError::validation(format!(
                "fock_truncation must be ≥ 2, got {fock_truncation}"
            )));
        }
        if mode_count != 1 && mode_count != 2 {
            return Err(GkpError::validation(format!(
                "mode_count must be 1 or 2, got {mode_count}"
            )));
        }
        Ok(HilbertConfig { fock_truncation, mode_count, include_spin })
    }

    /// Single oscillator, no spin.
    pub fn mode_only(fock_truncation: usize) -> Result<Self> {
        Self::new(fock_truncation, 1, false)
    }

    /// Spin ⊗ one oscillator.
    pub fn spin_mode(fock_truncation: usize) -> Result<Self> {
        Self::new(fock_truncation, 1, true)
    }

    /// Spin ⊗ mode-y ⊗ mode-x.
    pub fn spin_two_modes(fock_truncation: usize) -> Result<Self> {
        Self::new(fock_truncation, 2, true)
    }

    pub fn spin_dim(&self) -> usize {
        if self.include_spin {
            2
        } else {
            1
        }
    }

    pub fn dim(&self) -> usize {
        self.spin_dim() * self.fock_truncation.pow(self.mode_count as u32)
    }

    /// Dimension of the oscillator factor alone.
    pub fn mode_space_dim(&self) -> usize {
        self.fock_truncation.pow(self.mode_count as u32)
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.mode_count {
            return Err(GkpError::validation(format!(
                "mode index {mode} out of range for {}-mode config",
                self.mode_count
            )));
        }
        Ok(())
    }

    pub fn require_spin(&self) -> Result<()> {
        if !self.include_spin {
            return Err(GkpError::validation(
                "operation requires a config with include_spin = true",
            ));
        }
        Ok(())
    }

    /// Flat index of the basis ket with spin `s` and per-mode Fock levels `ns`.
    pub fn index_of(&self, s: usize, ns: &[usize]) -> usize {
        debug_assert_eq!(ns.len(), self.mode_count);
        let f = self.fock_truncation;
        let mut idx = s;
        for &n in ns {
            idx = idx * f + n;
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_indexing() {
        let cfg = HilbertConfig::spin_two_modes(5).unwrap();
        assert_eq!(cfg.dim(), 2 * 25);
        assert_eq!(cfg.index_of(1, &[2, 3]), 25 + 13);
        let cfg1 = HilbertConfig::spin_mode(7).unwrap();
        assert_eq!(cfg1.dim(), 14);
        assert_eq!(cfg1.index_of(1, &[4]), 11);
        let bare = HilbertConfig::mode_only(4).unwrap();
        assert_eq!(bare.dim(), 4);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(HilbertConfig::new(1, 1, false).is_err());
        assert!(HilbertConfig::new(10, 3, false).is_err());
        assert!(HilbertConfig::new(10, 0, true).is_err());
    }
}
