//! Beamsplitter output statistics for identical photons entering both ports.

use libm::lgamma;

fn binom(n: usize, k: usize) -> f64 {
    (lgamma(n as f64 + 1.0) - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0))
        .exp()
        .round()
}

/// Probability of `k` photons at detector 1, k = 0..=n+m, for the input
/// |n>_a |m>_b of identical photons. Port a reaches detector 1 with amplitude
/// sqrt(T), port b with sqrt(R); detector 2 gets sqrt(R) and -sqrt(T).
pub fn fock_split(n: usize, m: usize, t: f64) -> Vec<f64> {
    let r = 1.0 - t;
    let total = n + m;
    let (st, sr) = (t.sqrt(), r.sqrt());
    let ln_norm = -(lgamma(n as f64 + 1.0) + lgamma(m as f64 + 1.0));
    (0..=total)
        .map(|k| {
            // a^dag -> sqrt(T) c + sqrt(R) d ; b^dag -> sqrt(R) c - sqrt(T) d
            let mut amp = 0.0;
            for i in k.saturating_sub(m)..=k.min(n) {
                let j = k - i;
                let sign = if (m - j) % 2 == 1 { -1.0 } else { 1.0 };
                amp += sign
                    * binom(n, i)
                    * binom(m, j)
                    * st.powi(i as i32)
                    * sr.powi((n - i) as i32)
                    * sr.powi(j as i32)
                    * st.powi((m - j) as i32);
            }
            let ln_fact = lgamma(k as f64 + 1.0) + lgamma((total - k) as f64 + 1.0);
            amp * amp * (ln_fact + ln_norm).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized() {
        for (n, m) in [(1, 1), (2, 1), (3, 4), (0, 5), (7, 0), (6, 6)] {
            for t in [0.5, 0.53, 0.1] {
                let s: f64 = fock_split(n, m, t).iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "{n} {m} {t}: {s}");
            }
        }
    }

    #[test]
    fn hom_dip_and_imbalance() {
        let p = fock_split(1, 1, 0.5);
        assert!(p[1].abs() < 1e-15);
        assert!((p[0] - 0.5).abs() < 1e-15);
        let t = 0.53;
        assert!((fock_split(1, 1, t)[1] - (2.0 * t - 1.0).powi(2)).abs() < 1e-14);
    }

    #[test]
    fn single_port_is_binomial() {
        let t: f64 = 0.3;
        let p = fock_split(4, 0, t);
        for (k, pk) in p.iter().enumerate() {
            let exact = binom(4, k) * t.powi(k as i32) * (1.0 - t).powi(4 - k as i32);
            assert!((pk - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn pair_moment_matches_closed_form() {
        // E[N1 N2] = TR (n(n-1) + m(m-1)) + (T^2 + R^2 - 2TR) n m
        for (n, m) in [(2, 1), (1, 3), (3, 3), (5, 2)] {
            for t in [0.5, 0.47, 0.8] {
                let r = 1.0 - t;
                let p = fock_split(n, m, t);
                let total = n + m;
                let e: f64 = p.iter().enumerate().map(|(k, pk)| pk * (k * (total - k)) as f64).sum();
                let (nf, mf) = (n as f64, m as f64);
                let exact = t * r * (nf * (nf - 1.0) + mf * (mf - 1.0)) + (t * t + r * r - 2.0 * t * r) * nf * mf;
                assert!((e - exact).abs() < 1e-12, "{n} {m} {t}");
            }
        }
    }

    #[test]
    fn twin_fock_odd_outputs_vanish() {
        // |n,n> at a balanced splitter only produces even detector-1 counts.
        let p = fock_split(3, 3, 0.5);
        for k in (1..=6).step_by(2) {
            assert!(p[k] < 1e-14);
        }
    }
}
