//! Resource accounting for network architectures: stored values,
//! checkpoint bytes, and forward-pass multiply-accumulate counts.
//!
//! Conventions, fixed so every report is comparable: memory counts all
//! stored values (trainable parameters plus running statistics) at 4
//! bytes each, matching the 32-bit checkpoint container; MACs count
//! dense and convolution products only, with normalization,
//! activations and pooling at zero, profiler-style.

use crate::engine::{LayerSpec, NetworkSpec, ValueShape};
use crate::error::Result;

/// Bytes per stored value in the checkpoint container.
pub const BYTES_PER_VALUE: usize = 4;

/// Stored values: trainable parameters plus running statistics. This
/// is exactly the number of values a checkpoint file holds per
/// snapshot.
pub fn count_params(spec: &NetworkSpec) -> usize {
    spec.stored_value_count()
}

/// Checkpoint bytes for one snapshot: stored values at 4 bytes each.
pub fn memory_bytes(spec: &NetworkSpec) -> usize {
    BYTES_PER_VALUE * count_params(spec)
}

/// Multiply-accumulates of one single-sample forward pass. Dense r
/// outputs from c inputs: r*c. Convolution over a length-L series:
/// L*out_channels*in_channels*kernel (stride 1, "same" padding keeps
/// L). Everything else: 0.
pub fn count_macs(spec: &NetworkSpec) -> Result<u64> {
    spec.validate()?;
    let mut macs = 0u64;
    let mut shape = spec.input;
    for layer in &spec.layers {
        macs += match (layer, shape) {
            (&LayerSpec::Dense { inputs, outputs }, _) => (inputs * outputs) as u64,
            (
                &LayerSpec::Conv1d { in_channels, out_channels, kernel },
                ValueShape::Series { len, .. },
            ) => (len * out_channels * in_channels * kernel) as u64,
            _ => 0,
        };
        shape = layer.output_shape(shape)?;
    }
    Ok(macs)
}

/// Size summary of one architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub param_count: usize,
    pub memory_bytes: usize,
    pub macs: u64,
}

pub fn cost_report(spec: &NetworkSpec) -> Result<CostReport> {
    Ok(CostReport {
        param_count: count_params(spec),
        memory_bytes: memory_bytes(spec),
        macs: count_macs(spec)?,
    })
}

/// Two architectures side by side, with second-over-first ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostComparison {
    pub first: CostReport,
    pub second: CostReport,
    /// second.memory_bytes / first.memory_bytes
    pub memory_ratio: f64,
    /// second.macs / first.macs
    pub mac_ratio: f64,
}

pub fn compare_costs(first: &NetworkSpec, second: &NetworkSpec) -> Result<CostComparison> {
    let a = cost_report(first)?;
    let b = cost_report(second)?;
    Ok(CostComparison {
        first: a,
        second: b,
        memory_ratio: b.memory_bytes as f64 / a.memory_bytes as f64,
        mac_ratio: b.macs as f64 / a.macs as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackFcnSpec;
    use crate::engine::Network;

    fn dense_spec(inputs: usize, outputs: usize) -> NetworkSpec {
        NetworkSpec::new(
            ValueShape::Features(inputs),
            vec![LayerSpec::Dense { inputs, outputs }],
            outputs,
        )
        .unwrap()
    }

    fn conv_spec(len: usize, co: usize, k: usize) -> NetworkSpec {
        NetworkSpec::new(
            ValueShape::Series { channels: 1, len },
            vec![
                LayerSpec::Conv1d { in_channels: 1, out_channels: co, kernel: k },
                LayerSpec::GlobalAvgPool1d,
            ],
            co,
        )
        .unwrap()
    }

    #[test]
    fn dense_layer_counts() {
        let spec = dense_spec(10, 5);
        assert_eq!(count_params(&spec), 55);
        assert_eq!(count_macs(&spec).unwrap(), 50);
        assert_eq!(memory_bytes(&spec), 220);
    }

    #[test]
    fn conv_layer_counts() {
        let spec = conv_spec(5, 8, 3);
        assert_eq!(count_params(&spec), 32);
        assert_eq!(count_macs(&spec).unwrap(), 120);
    }

    #[test]
    fn default_membership_classifier_fits_a_known_budget() {
        for input_len in [5, 30] {
            let spec = AttackFcnSpec::default().network_spec(input_len).unwrap();
            assert_eq!(count_params(&spec), 265_986);
            assert_eq!(memory_bytes(&spec), 1_063_944);
            let published_mb = 1.06e6;
            let deviation = (memory_bytes(&spec) as f64 - published_mb).abs() / published_mb;
            assert!(deviation <= 0.01, "deviation {deviation}");
        }
    }

    #[test]
    fn accounting_agrees_with_serialization() {
        let spec = AttackFcnSpec::default().network_spec(5).unwrap();
        let net = Network::initialize(spec.clone(), 3);
        let serialized: usize = net.export_stored().iter().map(Vec::len).sum();
        assert_eq!(count_params(&spec), serialized);
        assert_eq!(
            count_params(&spec),
            spec.stored_array_sizes().iter().sum::<usize>()
        );
    }

    #[test]
    fn macs_are_linear_in_input_len_for_the_conv_body() {
        let spec_at = |len: usize| AttackFcnSpec::default().network_spec(len).unwrap();
        let m5 = count_macs(&spec_at(5)).unwrap();
        let m10 = count_macs(&spec_at(10)).unwrap();
        let m30 = count_macs(&spec_at(30)).unwrap();
        // macs(L) = per_unit*L + head; solve from two lengths.
        let per_unit = (m10 - m5) / 5;
        let head = m5 - 5 * per_unit;
        assert_eq!(m30, per_unit * 30 + head);
        // Head is the dense layer; per-unit is the three convolutions.
        assert_eq!(head, 256);
        assert_eq!(per_unit, 128 * 8 + 256 * 128 * 5 + 128 * 256 * 3);
    }

    #[test]
    fn identical_specs_compare_at_ratio_one() {
        let spec = conv_spec(7, 4, 3);
        let cmp = compare_costs(&spec, &spec).unwrap();
        assert_eq!(cmp.memory_ratio, 1.0);
        assert_eq!(cmp.mac_ratio, 1.0);
    }

    #[test]
    fn dense_memory_ratio_matches_parameter_ratio() {
        let small = dense_spec(10, 5);
        let large = dense_spec(100, 50);
        let cmp = compare_costs(&small, &large).unwrap();
        assert_eq!(cmp.first.param_count, 55);
        assert_eq!(cmp.second.param_count, 5050);
        assert!((cmp.memory_ratio - 5050.0 / 55.0).abs() < 1e-12);
    }
}
