use sctnet::gradcheck::{check_network, check_ops, check_training_objective, TOLERANCE};
use sctnet::model::ModelConfig;

fn assert_report(rep: &sctnet::gradcheck::GradReport) {
    let failures: Vec<_> = rep.failures(TOLERANCE).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn ops_over_three_seeds() {
    for seed in [11, 12, 13] {
        assert_report(&check_ops(seed).unwrap());
    }
}

#[test]
fn toy_network_every_parameter_tensor() {
    let rep = check_network(&ModelConfig::toy(), 3, 8, 8, 4).unwrap();
    assert_report(&rep);
}

#[test]
fn toy_network_with_padded_windows_and_shared_shallow() {
    let cfg = ModelConfig {
        shared_shallow: true,
        ..ModelConfig::toy()
    };
    assert_report(&check_network(&cfg, 5, 6, 7, 3).unwrap());
}

#[test]
fn multi_head_cross_attention() {
    let cfg = ModelConfig {
        embed_dim: 12,
        num_heads: 3,
        cross_heads: 2,
        ..ModelConfig::toy()
    };
    assert_report(&check_network(&cfg, 8, 8, 8, 2).unwrap());
}

#[test]
fn desk_training_objective() {
    assert_report(&check_training_objective(&ModelConfig::desk(), 21, 8, 8, 1).unwrap());
}
