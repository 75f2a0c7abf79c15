/// Sinusoidal step embedding: `dim / 2` sines followed by `dim / 2` cosines
/// of `t * max_period^(-2i / dim)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeEmbeddingSpec {
    pub dim: usize,
    pub max_period: f64,
}

impl Default for TimeEmbeddingSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            max_period: 10_000.0,
        }
    }
}

pub fn time_embedding(t: usize, spec: &TimeEmbeddingSpec) -> Vec<f64> {
    let mut out = vec![0.0; spec.dim];
    write_time_embedding(t, spec, &mut out);
    out
}

pub(crate) fn write_time_embedding(t: usize, spec: &TimeEmbeddingSpec, out: &mut [f64]) {
    let half = spec.dim / 2;
    let tf = t as f64;
    for i in 0..half {
        let freq = spec.max_period.powf(-2.0 * i as f64 / spec.dim as f64);
        let (s, c) = (tf * freq).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step() {
        let e = time_embedding(0, &TimeEmbeddingSpec::default());
        assert!(e[..16].iter().all(|&v| v == 0.0));
        assert!(e[16..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_frequency() {
        let spec = TimeEmbeddingSpec {
            dim: 2,
            max_period: 10_000.0,
        };
        assert_eq!(time_embedding(1, &spec), vec![1f64.sin(), 1f64.cos()]);
    }

    #[test]
    fn injective_over_standard_range() {
        let spec = TimeEmbeddingSpec::default();
        let embs: Vec<Vec<f64>> = (1..=1000).map(|t| time_embedding(t, &spec)).collect();
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                let d2: f64 = embs[i].iter().zip(&embs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(d2 > 0.0, "t={} and t={} collide", i + 1, j + 1);
            }
        }
    }
}
