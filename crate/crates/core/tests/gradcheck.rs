//! Finite-difference gradient checks, one test per primitive family.

mod support;

use support::gradcheck;

#[test]
fn conv2d_all_geometries() {
    gradcheck::conv2d_all_geometries();
}

#[test]
fn dense_primitives() {
    gradcheck::dense_primitives();
}

#[test]
fn elementwise_primitives() {
    gradcheck::elementwise_primitives();
}

#[test]
fn reductions() {
    gradcheck::reductions();
}

#[test]
fn spatial_primitives() {
    gradcheck::spatial_primitives();
}

#[test]
fn softmax_cross_entropy() {
    gradcheck::softmax_cross_entropy();
}

#[test]
fn full_composite_loss() {
    gradcheck::full_composite_loss();
}
