//! Fixtures shared by the benchmarks in `benches/`.

use dect_core::phantom::{generate_corpus, rasterize, CorpusConfig};
use dect_core::{forward_project, sparse_angles, AngleSet, FanBeamGeometry, Sinogram, Volume};

/// One desk-preset bag phantom with `n_slices` slices.
pub fn desk_phantom(n_slices: usize) -> (FanBeamGeometry, Volume) {
    let g = FanBeamGeometry::desk();
    let specs = generate_corpus(0, 1, 11, &CorpusConfig::for_geometry(&g, n_slices));
    let v = rasterize(&specs[0], &g, n_slices).expect("corpus phantoms fit the desk ROI");
    (g, v)
}

/// Clean sinograms of that phantom on the 9 measured and on all views.
pub fn desk_sinograms(g: &FanBeamGeometry, v: &Volume) -> (Sinogram, Sinogram) {
    let sparse = forward_project(v, g, &sparse_angles(g, 9).expect("divides")).expect("fits");
    let dense = forward_project(v, g, &AngleSet::full(g.n_views_full)).expect("fits");
    (sparse, dense)
}
