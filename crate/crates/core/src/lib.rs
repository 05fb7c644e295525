//! A laboratory for the k-nearest-neighbour rule in general metric spaces:
//! metrics, the k-NN classifier, ball-family combinatorics, an explicit
//! measure defeating k-NN consistency, and experiment runners.

pub mod adversarial;
pub mod experiments;
pub mod knn;
pub mod metric;
pub mod nagata;
pub mod rng;
