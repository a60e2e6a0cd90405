use serde::{Deserialize, Serialize};

/// Progressive fine-tune interval: `ψ_{c+1} = ψ_c + ψ_c·c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleState {
    /// Completed fine-tune rounds.
    pub c: usize,
    /// Steps since the last fine-tune.
    pub f_t: usize,
    pub psi: usize,
    pub psi0: usize,
}

impl ScheduleState {
    pub fn new(psi0: usize) -> Self {
        assert!(psi0 > 0, "psi0 must be positive");
        ScheduleState {
            c: 0,
            f_t: 0,
            psi: psi0,
            psi0,
        }
    }

    pub fn should_fine_tune(&self) -> bool {
        self.f_t > 0 && self.f_t % self.psi == 0
    }

    /// Bookkeeping after a completed round: reset `f_t`, bump `c`, grow `ψ`.
    pub fn advance(&mut self) {
        self.f_t = 0;
        self.c += 1;
        self.psi += self.psi * self.c;
    }

    pub fn tick(&mut self) {
        self.f_t += 1;
    }

    /// The first `n` intervals starting from `psi0`.
    pub fn intervals(psi0: usize, n: usize) -> Vec<usize> {
        let mut s = ScheduleState::new(psi0);
        (0..n)
            .map(|_| {
                let p = s.psi;
                s.advance();
                p
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_sequences() {
        assert_eq!(ScheduleState::intervals(5000, 4), vec![5000, 10000, 30000, 120000]);
        assert_eq!(ScheduleState::intervals(1, 5), vec![1, 2, 6, 24, 120]);
    }

    #[test]
    fn trigger_guard() {
        let mut s = ScheduleState::new(5000);
        assert!(!s.should_fine_tune());
        s.f_t = 5000;
        assert!(s.should_fine_tune());
        s.f_t = 5001;
        assert!(!s.should_fine_tune());
    }

    #[test]
    fn first_advance_keeps_psi() {
        let mut s = ScheduleState::new(7);
        s.f_t = 7;
        s.advance();
        assert_eq!((s.c, s.f_t, s.psi), (1, 0, 14));
    }
}
