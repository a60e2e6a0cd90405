mod common;

use covr_core::numcore::{RngStream, Tensor2};
use covr_core::sac::{
    actor_loss_guided, bellman_target, critic_loss, squashed_log_prob, GuidanceTarget, LOG_STD_MAX,
    LOG_STD_MIN,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn squashed_action_in_range(mean in -50.0f64..50.0, log_std in -20.0f64..20.0, eps in -8.0f64..8.0) {
        let (a, lp) = squashed_log_prob(mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX), eps);
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!(!lp.is_nan());
    }

    #[test]
    fn terminal_targets_ignore_value(r in -10.0f64..10.0, v in -1e6f64..1e6, gamma in 0.0f64..1.0) {
        prop_assert_eq!(bellman_target(r, gamma, true, v), r);
        prop_assert_eq!(bellman_target(r, gamma, false, v), r + gamma * v);
    }

    #[test]
    fn critic_loss_non_negative(seed in 0u64..1000) {
        let nets = common::small_nets(seed, false);
        let batch = common::batch(6, seed);
        let noise = covr_core::sac::gaussian(&mut RngStream::new(seed), 6, 2);
        let out = critic_loss(&nets, &batch, 0.99, &noise).unwrap();
        prop_assert!(out.loss >= 0.0 && out.loss.is_finite());
    }

    #[test]
    fn zero_lambda_is_bitwise_unguided(seed in 0u64..1000, mean_target in any::<bool>()) {
        let nets = common::small_nets(seed, false);
        let guided = common::batch(6, seed);
        let mut plain = guided.clone();
        plain.teacher_actions.iter_mut().for_each(|t| *t = None);
        let target = if mean_target { GuidanceTarget::Mean } else { GuidanceTarget::Sample };
        let noise = covr_core::sac::gaussian(&mut RngStream::new(seed), 6, 2);
        let a = actor_loss_guided(&nets, &guided, 0.0, target, &noise).unwrap();
        let b = actor_loss_guided(&nets, &plain, 0.0, target, &noise).unwrap();
        prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        prop_assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn guidance_term_non_negative(seed in 0u64..1000, lambda in 0.0f64..5.0) {
        let nets = common::small_nets(seed, false);
        let batch = common::batch(6, seed);
        let noise = Tensor2::zeros(6, 2);
        let out = actor_loss_guided(&nets, &batch, lambda, GuidanceTarget::Sample, &noise).unwrap();
        prop_assert!(out.guidance_loss >= 0.0);
        prop_assert!((out.loss - out.policy_loss - out.guidance_loss).abs() < 1e-12);
    }
}
