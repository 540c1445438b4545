use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use super::NoiseParams;
use crate::clock::allan_variance;
use crate::error::{domain, Error, Result};

/// Noise processes the trace generator can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// White frequency noise of intensity `beta`.
    White,
    /// Power-law `1/f` frequency noise, scaled to the Allan deviation that
    /// white noise of intensity `beta` has at 1 s.
    Flicker,
    /// Random walk of frequency started at zero, diffusion rate `beta` in (rad/s)^2/s.
    RandomWalk,
    /// Stationary Ornstein-Uhlenbeck process with variance `alpha`, rate `gamma`.
    Ou,
}

impl FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(Self::White),
            "flicker" => Ok(Self::Flicker),
            "random_walk" | "random-walk" => Ok(Self::RandomWalk),
            "ou" => Ok(Self::Ou),
            other => domain(format!("unknown trace kind `{other}`")),
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::White => "white",
            Self::Flicker => "flicker",
            Self::RandomWalk => "random_walk",
            Self::Ou => "ou",
        })
    }
}

/// Samples `n` LO frequency values (rad/s) spaced `dt` apart. Each white
/// sample is the mean frequency over its `dt` interval.
pub fn gen_trace(
    kind: TraceKind,
    params: &NoiseParams,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return domain(format!("dt must be > 0, got {dt}"));
    }
    if n == 0 {
        return domain("trace length must be >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let out = match kind {
        TraceKind::White => {
            let sd = (params.beta / dt).sqrt();
            (0..n).map(|_| sd * normal()).collect()
        }
        TraceKind::Ou => {
            let decay = (-params.gamma * dt).exp();
            let innov = (params.alpha * -(-2.0 * params.gamma * dt).exp_m1()).sqrt();
            let mut x = params.alpha.sqrt() * normal();
            (0..n)
                .map(|_| {
                    let v = x;
                    x = decay * x + innov * normal();
                    v
                })
                .collect()
        }
        TraceKind::RandomWalk => {
            let sd = (params.beta * dt).sqrt();
            let mut x = 0.0;
            (0..n)
                .map(|_| {
                    let v = x;
                    x += sd * normal();
                    v
                })
                .collect()
        }
        TraceKind::Flicker => flicker(params, dt, n, &mut normal)?,
    };
    Ok(out)
}

fn flicker(
    params: &NoiseParams,
    dt: f64,
    n: usize,
    normal: &mut impl FnMut() -> f64,
) -> Result<Vec<f64>> {
    let per_second = (1.0 / dt).round() as usize;
    if per_second == 0 || n < 2 * per_second {
        return domain("flicker traces need at least 2 s of samples for normalization");
    }
    if params.beta == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut spec: Vec<Complex<f64>> = (0..n)
        .map(|j| {
            let f = j.min(n - j);
            if f == 0 {
                Complex::new(0.0, 0.0)
            } else {
                let scale = (f as f64).powf(-0.5);
                Complex::new(normal() * scale, normal() * scale)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let mut y: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let (avar, _) = allan_variance(&y, per_second, false)?;
    // white noise of intensity beta has AVAR beta / tau at tau = 1 s
    let target = params.beta;
    let scale = (target / avar).sqrt();
    y.iter_mut().for_each(|v| *v *= scale);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kinds() {
        for k in [
            TraceKind::White,
            TraceKind::Flicker,
            TraceKind::RandomWalk,
            TraceKind::Ou,
        ] {
            assert_eq!(k.to_string().parse::<TraceKind>().unwrap(), k);
        }
        assert!("pink".parse::<TraceKind>().is_err());
    }

    #[test]
    fn zero_noise_traces_are_zero() {
        let p = NoiseParams::new(0.0, 0.0, 1.0, 1.0).unwrap();
        for k in [
            TraceKind::White,
            TraceKind::Flicker,
            TraceKind::RandomWalk,
            TraceKind::Ou,
        ] {
            let t = gen_trace(k, &p, 0.1, 100, 1).unwrap();
            assert!(t.iter().all(|&x| x == 0.0), "{k}");
        }
    }

    #[test]
    fn white_trace_avar_follows_inverse_tau() {
        let p = NoiseParams::new(0.0, 0.4, 1.0, 1.0).unwrap();
        let dt = 0.1;
        let y = gen_trace(TraceKind::White, &p, dt, 100_000, 5).unwrap();
        for m in [10usize, 30, 100] {
            let tau = m as f64 * dt;
            let (avar, _) = allan_variance(&y, m, true).unwrap();
            let want = p.beta / tau;
            assert!((avar / want - 1.0).abs() < 0.1, "m={m}: {avar} vs {want}");
        }
    }

    #[test]
    fn ou_trace_autocovariance() {
        let p = NoiseParams::new(2.0, 0.0, 0.5, 1.0).unwrap();
        let dt = 0.2;
        let n = 200_000;
        let y = gen_trace(TraceKind::Ou, &p, dt, n, 9).unwrap();
        for lag in [0usize, 1, 5] {
            let m = n - lag;
            let c = (0..m).map(|i| y[i] * y[i + lag]).sum::<f64>() / m as f64;
            let want = 2.0 * (-0.5 * dt * lag as f64).exp();
            // correlation time is 2 s = 10 samples; effective sample count is ~n/20
            let se = 2.0 * (2.0 / (n as f64 / 20.0)).sqrt();
            assert!((c - want).abs() < 5.0 * se, "lag {lag}: {c} vs {want}");
        }
    }

    #[test]
    fn flicker_is_normalized_at_one_second() {
        let p = NoiseParams::new(0.0, 0.4, 1.0, 1.0).unwrap();
        let y = gen_trace(TraceKind::Flicker, &p, 0.01, 1 << 15, 2).unwrap();
        let (avar, _) = allan_variance(&y, 100, false).unwrap();
        assert!((avar - 0.4).abs() < 1e-9);
        // flicker AVAR is roughly flat across a decade
        let (a10, _) = allan_variance(&y, 10, true).unwrap();
        assert!(a10 / avar < 3.0 && avar / a10 < 3.0);
        assert!(gen_trace(TraceKind::Flicker, &p, 0.01, 150, 2).is_err());
    }

    #[test]
    fn random_walk_starts_at_zero() {
        let p = NoiseParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let y = gen_trace(TraceKind::RandomWalk, &p, 0.1, 1000, 4).unwrap();
        assert_eq!(y[0], 0.0);
        assert!(y[999] != 0.0);
    }
}
