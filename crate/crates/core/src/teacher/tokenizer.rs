use crate::envs::ActionVec;
use crate::error::{CovrError, Result};

/// Uniform bins over `[−1, 1]`; with 21 bins the centers are −1.0, −0.9, …, 1.0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTokenizer {
    bins: usize,
    clamped: u64,
}

impl Default for ActionTokenizer {
    fn default() -> Self {
        ActionTokenizer::new(21)
    }
}

impl ActionTokenizer {
    pub fn new(bins: usize) -> Self {
        assert!(bins >= 2, "need at least two bins");
        ActionTokenizer { bins, clamped: 0 }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Out-of-range components seen so far.
    pub fn clamped(&self) -> u64 {
        self.clamped
    }

    fn scale(&self) -> f64 {
        (self.bins - 1) as f64 / 2.0
    }

    pub fn center(&self, token: usize) -> f64 {
        -1.0 + token as f64 / self.scale()
    }

    /// Nearest bin; exact midpoints go to the higher index. The flag reports a clamp.
    pub fn token_of(&self, v: f64) -> (usize, bool) {
        let out_of_range = !(-1.0..=1.0).contains(&v);
        let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        // Snap to 1e-9 so decimal midpoints like 0.05 are not lost to rounding.
        let x = ((v + 1.0) * self.scale() * 1e9).round() / 1e9;
        let t = (x + 0.5).floor() as usize;
        (t.min(self.bins - 1), out_of_range)
    }

    pub fn tokenize(&mut self, a: &ActionVec) -> Vec<usize> {
        a.0.iter()
            .map(|&v| {
                let (t, clamped) = self.token_of(v);
                self.clamped += clamped as u64;
                t
            })
            .collect()
    }

    /// Two-decimal rendering of the bin centers, e.g. `[-0.30, 1.00]`.
    pub fn render(&self, tokens: &[usize]) -> String {
        let parts: Vec<String> = tokens.iter().map(|&t| format!("{:.2}", self.center(t))).collect();
        format!("[{}]", parts.join(", "))
    }

    pub fn detokenize(&self, tokens: &[usize]) -> Result<ActionVec> {
        parse_action(&self.render(tokens))
    }
}

/// Parses `[x, y]` (brackets optional) into an action.
pub fn parse_action(text: &str) -> Result<ActionVec> {
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    let values = inner
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CovrError::format("action text", format!("{text:?}: {e}")))?;
    if values.len() != 2 {
        return Err(CovrError::format("action text", format!("{text:?}: expected 2 values")));
    }
    Ok(ActionVec::new(values[0], values[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixtures() {
        let t = ActionTokenizer::default();
        assert_eq!(t.token_of(0.0), (10, false));
        assert_eq!(t.token_of(-1.0), (0, false));
        assert_eq!(t.token_of(1.0), (20, false));
        assert_eq!(t.token_of(0.05), (11, false));
        assert_eq!(t.token_of(1.7), (20, true));
        assert_eq!(t.render(&[10, 10]), "[0.00, 0.00]");
        assert_eq!(t.detokenize(&[0, 0]).unwrap().0, [-1.0, -1.0]);
        assert_eq!(t.detokenize(&[10, 10]).unwrap().0, [0.0, 0.0]);
    }

    #[test]
    fn every_midpoint_rounds_up() {
        let t = ActionTokenizer::default();
        for k in 0..20 {
            let mid = -1.0 + 0.1 * k as f64 + 0.05;
            assert_eq!(t.token_of(mid).0, k + 1, "midpoint {mid}");
        }
    }

    #[test]
    fn clamp_counter() {
        let mut t = ActionTokenizer::default();
        let a = ActionVec([1.5, -0.2]);
        assert_eq!(t.tokenize(&a), vec![20, 8]);
        assert_eq!(t.clamped(), 1);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_action("[0.1, x]").is_err());
        assert!(parse_action("0.1").is_err());
        assert_eq!(parse_action(" 0.25,-1 ").unwrap().0, [0.25, -1.0]);
    }

    proptest! {
        #[test]
        fn roundtrip_is_idempotent(a in -1.2f64..1.2, b in -1.2f64..1.2) {
            let mut t = ActionTokenizer::default();
            let once = t.detokenize(&t.clone().tokenize(&ActionVec([a, b]))).unwrap();
            let again = t.tokenize(&once);
            let twice = t.detokenize(&again).unwrap();
            prop_assert_eq!(once, twice);
            // nearest center
            let centered = once.0[0];
            prop_assert!((centered - a.clamp(-1.0, 1.0)).abs() <= 0.05 + 1e-9);
        }
    }
}
