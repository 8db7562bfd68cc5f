//! Per-epoch sampling of student-tap / teacher-probe pairings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// How many intermediate layers participate in distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCount {
    /// Every layer; requires equal tap/probe counts and pairs them by index.
    All,
    /// A seeded random subset of `n` layers, re-drawn each epoch.
    N(usize),
}

impl Serialize for LayerCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LayerCount::All => s.serialize_str("all"),
            LayerCount::N(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for LayerCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(LayerCount::N(n as usize)),
            Raw::Tag(t) if t == "all" => Ok(LayerCount::All),
            Raw::Tag(t) => Err(D::Error::custom(format!(
                "n_sampled_layers must be an integer or \"all\", got `{t}`"
            ))),
        }
    }
}

/// Sample the epoch's layer pairing.
///
/// Draws `n` student tap indices and, independently, `n` teacher probe
/// indices (both uniform subsets without replacement), sorts each, and
/// pairs them positionally so knowledge transfers in depth order. With
/// `n` equal to the teacher probe count every probe is used exactly once,
/// which is how a compact teacher guides a deeper student.
pub fn sample_pairing(
    n_student_taps: usize,
    n_teacher_probes: usize,
    n: LayerCount,
    rng_seed: u64,
) -> Result<Vec<(usize, usize)>> {
    match n {
        LayerCount::All => {
            if n_student_taps != n_teacher_probes {
                return Err(Error::invalid(
                    "n_sampled_layers",
                    format!(
                        "\"all\" needs equal counts, got {n_student_taps} taps vs {n_teacher_probes} probes"
                    ),
                ));
            }
            Ok((0..n_student_taps).map(|i| (i, i)).collect())
        }
        LayerCount::N(n) => {
            let cap = n_student_taps.min(n_teacher_probes);
            if n == 0 || n > cap {
                return Err(Error::invalid(
                    "n_sampled_layers",
                    format!("need 1 <= n <= {cap}, got {n}"),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let mut student: Vec<usize> =
                rand::seq::index::sample(&mut rng, n_student_taps, n).into_vec();
            let mut teacher: Vec<usize> =
                rand::seq::index::sample(&mut rng, n_teacher_probes, n).into_vec();
            student.sort_unstable();
            teacher.sort_unstable();
            Ok(student.into_iter().zip(teacher).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gives_identity() {
        let pairs = sample_pairing(17, 17, LayerCount::All, 0).unwrap();
        assert_eq!(pairs.len(), 17);
        for (i, &(s, t)) in pairs.iter().enumerate() {
            assert_eq!((s, t), (i, i));
        }
    }

    #[test]
    fn all_requires_equal_counts() {
        assert!(sample_pairing(17, 5, LayerCount::All, 0).is_err());
    }

    #[test]
    fn subsets_are_sorted_and_in_range() {
        for seed in 0..1000 {
            let pairs = sample_pairing(17, 17, LayerCount::N(5), seed).unwrap();
            assert_eq!(pairs.len(), 5);
            for w in pairs.windows(2) {
                assert!(w[1].0 > w[0].0, "student column not increasing: {pairs:?}");
                assert!(w[1].1 > w[0].1, "teacher column not increasing: {pairs:?}");
            }
            assert!(pairs.iter().all(|&(s, t)| s < 17 && t < 17));
        }
    }

    #[test]
    fn compact_teacher_uses_every_probe_once() {
        for seed in 0..200 {
            let pairs = sample_pairing(17, 5, LayerCount::N(5), seed).unwrap();
            let teacher: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
            assert_eq!(teacher, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn n_out_of_range_errors() {
        assert!(sample_pairing(17, 17, LayerCount::N(18), 0).is_err());
        assert!(sample_pairing(17, 5, LayerCount::N(6), 0).is_err());
        assert!(sample_pairing(17, 17, LayerCount::N(0), 0).is_err());
    }

    #[test]
    fn seeded_and_deterministic() {
        let a = sample_pairing(17, 17, LayerCount::N(5), 42).unwrap();
        let b = sample_pairing(17, 17, LayerCount::N(5), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn serde_roundtrip() {
        #[derive(Serialize, Deserialize)]
        struct W {
            n: LayerCount,
        }
        let all: W = toml::from_str("n = \"all\"").unwrap();
        assert_eq!(all.n, LayerCount::All);
        let five: W = toml::from_str("n = 5").unwrap();
        assert_eq!(five.n, LayerCount::N(5));
        assert!(toml::from_str::<W>("n = \"some\"").is_err());
    }
}
