//! Synthetic cross-view adaptation benchmark: ten classes, a 60° camera
//! rotation between domains, 40 instances per class and domain. Classes
//! share motion directions and differ in timing, so the view change moves
//! every class the same way.

use crate::error::Result;
use crate::skeleton::{gen_domain, Domain, SkeletonSequence, SynthConfig};
use crate::trainer::TrainConfig;

/// First instance index of the target domain, far from any source index.
pub const TARGET_INSTANCE_OFFSET: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossViewBenchmark {
    pub source: SynthConfig,
    pub target: SynthConfig,
    pub instances_per_class: usize,
    pub target_fraction: f64,
    pub train: TrainConfig,
}

impl Default for CrossViewBenchmark {
    fn default() -> Self {
        let source = SynthConfig {
            num_classes: 10,
            joints: 15,
            frames: 32,
            amplitude: 1.5,
            frequency_band: Some(0.25),
            shared_directions: true,
            ..SynthConfig::default()
        };
        let target = SynthConfig {
            view_angle: 60f64.to_radians(),
            ..source
        };
        let mut train = TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        };
        train.sgd.momentum = 0.9;
        CrossViewBenchmark {
            source,
            target,
            instances_per_class: 40,
            target_fraction: 0.3,
            train,
        }
    }
}

impl CrossViewBenchmark {
    /// `(source, target)` sequences; the target is unsplit.
    pub fn datasets(&self) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
        let source = gen_domain(&self.source, self.instances_per_class, Domain::Source, 0)?;
        let target = gen_domain(
            &self.target,
            self.instances_per_class,
            Domain::Target,
            TARGET_INSTANCE_OFFSET,
        )?;
        Ok((source, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domains_differ_only_by_view() {
        let b = CrossViewBenchmark::default();
        assert_eq!(
            SynthConfig {
                view_angle: 0.0,
                ..b.target
            },
            b.source
        );
        let (s, t) = b.datasets().unwrap();
        assert_eq!((s.len(), t.len()), (400, 400));
        b.train.validate().unwrap();
    }
}
