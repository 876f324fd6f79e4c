//! Front-to-back alpha compositing shared by the rasterizer and the ray
//! tracer. A pixel/ray hands an ordered list of hits — opacity-weighted
//! kernel values `a = α·𝒢` with an N-channel value vector each — and gets
//! back the blended channels plus accumulated opacity:
//!
//!   out = Σⱼ vⱼ aⱼ Tⱼ,   Tⱼ = Πₖ₍ₖ<ⱼ₎ (1 − aₖ),   A = 1 − T_final
//!
//! Iteration stops after the hit that drives transmittance below
//! [`TRANSMITTANCE_MIN`]. The backward pass replays the same truncation.

/// Stop compositing once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Hits with α·𝒢 below this are skipped entirely (shared support rule).
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;

/// Kernel support: contributions outside u²+v² ≤ 9 (3σ) are skipped.
pub const MAX_RADIUS_SQ: f64 = 9.0;

/// Keep 1 − a bounded away from zero so the backward pass stays finite.
pub const ALPHA_MAX: f64 = 1.0 - 1e-12;

/// One gated contribution: `a = α·𝒢` plus the blended channel values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<const N: usize> {
    pub a: f64,
    pub value: [f64; N],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composited<const N: usize> {
    pub value: [f64; N],
    pub alpha: f64,
    /// Number of leading hits actually blended before termination.
    pub used: usize,
}

/// Blend hits front to back. `hits` must already be depth-ordered and gated.
pub fn composite_forward<const N: usize>(hits: &[Hit<N>]) -> Composited<N> {
    let mut value = [0.0; N];
    let mut transmittance = 1.0;
    let mut used = 0;
    for h in hits {
        let a = h.a.min(ALPHA_MAX);
        let w = a * transmittance;
        for c in 0..N {
            value[c] += h.value[c] * w;
        }
        transmittance *= 1.0 - a;
        used += 1;
        if transmittance < TRANSMITTANCE_MIN {
            break;
        }
    }
    Composited { value, alpha: 1.0 - transmittance, used }
}

/// Per-hit gradients produced by [`composite_backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitGrad<const N: usize> {
    pub a: f64,
    pub value: [f64; N],
}

impl<const N: usize> HitGrad<N> {
    pub fn zero() -> Self {
        HitGrad { a: 0.0, value: [0.0; N] }
    }
}

/// Gradients of the composited outputs w.r.t. each hit's `a` and values.
///
/// `out` is cleared and filled with one entry per hit the forward pass
/// consumed (`used` from [`composite_forward`]); later hits get none.
/// Truncation is treated as fixed — the replay stops where forward stopped.
pub fn composite_backward<const N: usize>(
    hits: &[Hit<N>],
    up_value: &[f64; N],
    up_alpha: f64,
    out: &mut Vec<HitGrad<N>>,
) {
    out.clear();
    // Replay the forward sweep to find the truncation point and the final
    // transmittance.
    let mut transmittance = 1.0;
    let mut used = 0;
    for h in hits {
        transmittance *= 1.0 - h.a.min(ALPHA_MAX);
        used += 1;
        if transmittance < TRANSMITTANCE_MIN {
            break;
        }
    }
    let t_final = transmittance;
    out.resize(used, HitGrad::zero());

    // Reverse sweep. Transmittance before hit j is recovered by dividing the
    // running value by (1 − aⱼ); suffix holds Σₖ₍ₖ>ⱼ₎ vₖ aₖ Tₖ per channel.
    let mut suffix = [0.0; N];
    let mut t_after = t_final;
    for j in (0..used).rev() {
        let h = &hits[j];
        let clamped = h.a >= ALPHA_MAX;
        let a = h.a.min(ALPHA_MAX);
        let one_minus = 1.0 - a;
        let t_j = t_after / one_minus;
        let w = a * t_j;
        let mut da = up_alpha * t_final / one_minus;
        let g = &mut out[j];
        for c in 0..N {
            g.value[c] = up_value[c] * w;
            da += up_value[c] * (h.value[c] * t_j - suffix[c] / one_minus);
            suffix[c] += h.value[c] * w;
        }
        // A hit pinned at the opacity ceiling no longer responds to a.
        g.a = if clamped { 0.0 } else { da };
        t_after = t_j;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_hit() {
        let hits = [Hit { a: 0.5, value: [1.0] }];
        let out = composite_forward(&hits);
        assert_relative_eq!(out.value[0], 0.5);
        assert_relative_eq!(out.alpha, 0.5);
        assert_eq!(out.used, 1);
    }

    #[test]
    fn two_hits_front_to_back() {
        // depths 5 then 10, each a = 0.5 → D = 0.5·5 + 0.25·10 = 5.0
        let hits = [Hit { a: 0.5, value: [5.0] }, Hit { a: 0.5, value: [10.0] }];
        let out = composite_forward(&hits);
        assert_relative_eq!(out.value[0], 5.0);
        assert_relative_eq!(out.alpha, 0.75);
    }

    #[test]
    fn weights_sum_to_alpha() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let hits: Vec<Hit<1>> = (0..rng.gen_range(1..30))
                .map(|_| Hit { a: rng.gen_range(0.01..0.95), value: [1.0] })
                .collect();
            // with v ≡ 1 the composited value is exactly Σ wⱼ
            let out = composite_forward(&hits);
            assert_relative_eq!(out.value[0], out.alpha, epsilon = 1e-9);
            assert!(out.alpha <= 1.0);
        }
    }

    #[test]
    fn termination_truncates() {
        let hits = vec![Hit { a: 0.99, value: [1.0] }; 10];
        let out = composite_forward(&hits);
        // T after 3 hits = 1e-6 < 1e-4; after 2 hits it is just above
        assert_eq!(out.used, 3);
        let manual = 0.99 + 0.99 * 0.01 + 0.99 * 0.0001;
        assert_relative_eq!(out.value[0], manual, epsilon = 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.gen_range(1..12);
            let hits: Vec<Hit<2>> = (0..n)
                .map(|_| Hit {
                    a: rng.gen_range(0.02..0.7),
                    value: [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..5.0)],
                })
                .collect();
            let up = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let up_alpha = rng.gen_range(-1.0..1.0);
            let loss = |hs: &[Hit<2>]| {
                let o = composite_forward(hs);
                up[0] * o.value[0] + up[1] * o.value[1] + up_alpha * o.alpha
            };
            let mut grads = Vec::new();
            composite_backward(&hits, &up, up_alpha, &mut grads);
            assert_eq!(grads.len(), composite_forward(&hits).used);
            let h = 1e-6;
            for j in 0..grads.len() {
                // d/da
                let mut hp = hits.clone();
                let mut hm = hits.clone();
                hp[j].a += h;
                hm[j].a -= h;
                let fd = (loss(&hp) - loss(&hm)) / (2.0 * h);
                assert!(
                    (fd - grads[j].a).abs() <= 1e-6 + 1e-5 * fd.abs().max(grads[j].a.abs()),
                    "hit {j} da: fd {fd} vs {}",
                    grads[j].a
                );
                // d/dvalue
                for c in 0..2 {
                    let mut hp = hits.clone();
                    let mut hm = hits.clone();
                    hp[j].value[c] += h;
                    hm[j].value[c] -= h;
                    let fd = (loss(&hp) - loss(&hm)) / (2.0 * h);
                    let an = grads[j].value[c];
                    assert!(
                        (fd - an).abs() <= 1e-6 + 1e-5 * fd.abs().max(an.abs()),
                        "hit {j} dv[{c}]: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let hits = [Hit { a: 0.3, value: [2.0] }, Hit { a: 0.4, value: [1.0] }];
        let mut grads = Vec::new();
        composite_backward(&hits, &[0.0], 0.0, &mut grads);
        for g in &grads {
            assert_eq!(g.a, 0.0);
            assert_eq!(g.value[0], 0.0);
        }
    }
}
