//! Shared fixtures for the benchmarks: the small preset dataset and the two
//! spatial representations of it.

use stdglm::field::SpatialModel;
use stdglm::model::max_pairwise_distance;
use stdglm::sampler::ModelContext;
use stdglm::simulate::{simulate_dataset, SimulationSpec};
use stdglm::spde::{auto_mesh_padded, Mesh};
use stdglm::{Dataset, PriorConfig};

pub fn preset_data(seed: u64) -> Dataset {
    let spec = SimulationSpec::preset("appendix-c-small", seed).expect("preset exists");
    simulate_dataset(&spec).expect("preset simulates").dataset
}

/// A regular mesh with about `nodes` vertices, padded by half the site spread.
pub fn mesh_for(data: &Dataset, nodes: usize) -> Mesh {
    let pad = 0.5 * max_pairwise_distance(data.sites());
    auto_mesh_padded(data.sites(), nodes, pad).expect("mesh builds")
}

pub fn dense_context(data: &Dataset) -> ModelContext {
    let spatial = SpatialModel::dense(data.sites().to_vec(), 1.0).expect("dense model");
    ModelContext::new(data.clone(), spatial, PriorConfig::default()).expect("context")
}

pub fn sparse_context(data: &Dataset, nodes: usize) -> ModelContext {
    let spatial = SpatialModel::sparse(mesh_for(data, nodes), data.sites()).expect("sparse model");
    ModelContext::new(data.clone(), spatial, PriorConfig::default()).expect("context")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        let data = preset_data(1);
        assert_eq!(data.n_sites(), 100);
        assert!(mesh_for(&data, 121).n_vertices() > 50);
        assert_eq!(sparse_context(&data, 60).data().n_times(), 100);
        assert_eq!(dense_context(&data).data().n_sites(), 100);
    }
}
