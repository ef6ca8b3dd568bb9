use e2caps_core::data::{generate_synthetic_dataset, SyntheticFaceParams};
fn main() {
    let params = SyntheticFaceParams { samples_per_class: 2, image_size: 64, ..Default::default() };
    let m = generate_synthetic_dataset(&params, 0, std::path::Path::new("/tmp/faces")).unwrap();
    println!("{} records, classes {:?}", m.len(), m.class_names);
}
