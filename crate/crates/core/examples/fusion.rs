//! Embedding an image and its object crops, then fusing them.
//!
//! ```bash
//! cargo run -p zsad --example fusion
//! ```

use zsad::datasets::{generate_synthetic, load_image, SyntheticSpec};
use zsad::encoder::{EmbeddingCache, FusedFeature};
use zsad::grounding::crop;
use zsad::mock::{MockEmbedder, DEFECT_AXIS, OBJECT_AXIS};

fn main() -> zsad::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SyntheticSpec { categories: 1, normals_per_category: 1, anomalies_per_category: 1, clutter: true, ..SyntheticSpec::default() };
    let fixture = generate_synthetic(&spec, dir.path())?;
    let embedder = MockEmbedder::new(7);
    let cache = EmbeddingCache::in_memory();
    for (sample, truth) in fixture.manifest.samples.iter().zip(&fixture.truth) {
        let image = load_image(&sample.image_path)?;
        let patch = crop(&image, &truth.object_box)?;
        let f = FusedFeature::compute(&embedder, &image, &[patch], &cache)?;
        let axis = |v: &zsad::EmbeddingVector, i: usize| v.values()[i];
        println!("{} ({})", sample.sample_id, sample.label.as_str());
        println!("  image   object {:+.3} defect {:+.3}", axis(&f.e_image, OBJECT_AXIS), axis(&f.e_image, DEFECT_AXIS));
        let e_object = f.e_object.as_ref().expect("one patch");
        println!("  crop    object {:+.3} defect {:+.3}", axis(e_object, OBJECT_AXIS), axis(e_object, DEFECT_AXIS));
        println!("  fused   object {:+.3} defect {:+.3}", axis(&f.e_fused, OBJECT_AXIS), axis(&f.e_fused, DEFECT_AXIS));
    }
    println!("cache: {:?}", cache.stats());
    Ok(())
}
