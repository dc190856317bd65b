//! Detection post-processing and cropping.
//!
//! ```bash
//! cargo run -p zsad --example grounding
//! ```

use zsad::grounding::{crop, detect_objects_clipped, postprocess, Detection, DetectionConfig};
use zsad::mock::MockDetector;
use zsad::{BoundingBox, CategoryId, ImageBuffer};

fn main() -> zsad::Result<()> {
    let image = ImageBuffer::filled(100, 100, &[40, 40, 40])?;
    let mut detector = MockDetector::nothing();
    detector.script(
        &image,
        vec![
            Detection::new(BoundingBox::new(10, 10, 30, 30), 0.8, "bottle"),
            Detection::new(BoundingBox::new(80, 80, 40, 40), 0.6, "bottle"),
            Detection::new(BoundingBox::new(0, 0, 5, 5), 0.9, "bottle"),
            Detection::new(BoundingBox::new(50, 0, 20, 20), 0.1, "bottle"),
        ],
    );
    let category = CategoryId::new("bottle")?;
    let detections = detect_objects_clipped(&detector, &image, &category)?;
    for d in &detections {
        println!("detected {:?} at {:.2}", d.bbox.as_array(), d.confidence);
    }
    let boxes = postprocess(&detections, &DetectionConfig::default(), image.width(), image.height());
    for b in &boxes {
        let patch = crop(&image, b)?;
        println!("kept {:?} -> crop {}x{}", b.as_array(), patch.width(), patch.height());
    }
    Ok(())
}
